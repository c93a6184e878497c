"""Ordinary kriging with a squared-exponential correlation function.

Length-scale parameters are tuned by maximizing the profile log-likelihood
(process mean and variance eliminated analytically), using a multi-start
coordinate search in log space followed by local refinement. Prediction is
the closed-form conditional mean. Indicator-vector kriging with one shared
isotropic parameter provides per-case blending weights whose raw values sum
to one identically.
"""

import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy import optimize
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._binio import MAX_ELEMENTS, Reader, Writer
from .errors import DimensionOverflowError, FitError, IllConditionedError, NonFiniteDataError

__all__ = [
    "CorrelationParams",
    "FitOptions",
    "KrigingModel",
    "correlation",
    "fit",
    "fit_indicator_theta",
    "indicator_weights",
    "predict",
    "read_model",
    "write_model",
]

MAGIC = "KSGP1"

DEFAULT_NUGGET = 1e-8
DEFAULT_LOG_THETA_BOUNDS = (-6.0, 6.0)

# Fixed table of multistart points in the unit box; scaled to the log-theta
# bounds at fit time. Frozen so repeated fits are bit-reproducible.
_START_TABLE = np.random.default_rng(20240311).uniform(size=(32, 16))

_HUGE = 1e300


@dataclass(frozen=True)
class CorrelationParams:
    """Squared-exponential parameters: per-dimension theta plus a nugget.

    The correlation of two points is exp(-sum_k theta_k * dx_k^2); the
    nugget inflates the correlation-matrix diagonal for conditioning.
    """

    theta: np.ndarray
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 1 or theta.size < 1:
            raise ValueError("theta must be a nonempty vector")
        if np.any(~np.isfinite(theta)) or np.any(theta <= 0.0):
            raise ValueError("theta entries must be positive and finite")
        if not np.isfinite(self.nugget) or self.nugget < 0.0:
            raise ValueError("nugget must be nonnegative")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def isotropic(cls, theta: float, dims: int,
                  nugget: float = DEFAULT_NUGGET) -> "CorrelationParams":
        return cls(np.full(dims, float(theta)), nugget)


@dataclass(frozen=True)
class FitOptions:
    nugget: float = DEFAULT_NUGGET
    log_theta_bounds: tuple = DEFAULT_LOG_THETA_BOUNDS
    restarts: int = 8


@dataclass(frozen=True)
class KrigingModel:
    """Fitted ordinary-kriging model; immutable, safe for concurrent predicts."""

    inputs: np.ndarray            # (n, d)
    obs: np.ndarray               # (n,)
    params: CorrelationParams
    mu_hat: float
    sigma2_hat: float
    alpha: np.ndarray = dataclass_field(repr=False, default=None)  # R^-1 (y - mu 1)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        obs = np.atleast_1d(np.asarray(self.obs, dtype=float))
        if obs.shape != (inputs.shape[0],):
            raise ValueError("observation count must match input rows")
        if self.params.theta.size != inputs.shape[1]:
            raise ValueError("theta dimension must match input columns")
        alpha = self.alpha
        if alpha is None:
            rmat = _corr_matrix(inputs, self.params.theta, self.params.nugget)
            cho = _factorize(rmat)
            alpha = cho_solve(cho, obs - self.mu_hat)
        else:
            alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        for arr in (inputs, obs, alpha):
            arr.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.inputs.shape[1]


def correlation(x_i, x_j, params: CorrelationParams) -> float:
    """Squared-exponential correlation of two points."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape or x_i.size != params.theta.size:
        raise ValueError("point dimensions do not match")
    return float(np.exp(-np.sum(params.theta * (x_i - x_j) ** 2)))


def _sq_diffs(x_pts: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, n, d)."""
    return (x_pts[:, None, :] - x_pts[None, :, :]) ** 2


def _corr_matrix(x_pts: np.ndarray, theta: np.ndarray, nugget: float) -> np.ndarray:
    rmat = np.exp(-_sq_diffs(x_pts) @ theta)
    if nugget:
        rmat = rmat + nugget * np.eye(x_pts.shape[0])
    return rmat


def _corr_vector(x_pts: np.ndarray, x_new: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.exp(-((x_pts - x_new) ** 2) @ theta)


def _factorize(rmat: np.ndarray):
    try:
        return cho_factor(rmat, lower=True)
    except LinAlgError as exc:
        raise IllConditionedError(
            "correlation matrix is not positive definite; distinct inputs "
            "or a nugget are required"
        ) from exc


def _pivots_degenerate(cho, nugget: float) -> bool:
    """True when the smallest Cholesky pivot is dominated by the nugget.

    In that regime the correlation matrix is numerically singular and the
    profile likelihood rewards it spuriously (log det collapses while the
    nugget hides the blow-up of the generalized residual). Such length
    scales are excluded from the search, mirroring the condition-number
    safeguards of standard GP fitting packages.
    """
    if nugget <= 0.0:
        return False
    smallest = float(np.min(np.diag(cho[0])))
    return smallest * smallest <= 10.0 * nugget


class _ProfileLikelihood:
    """Negative profile log-likelihood of log-theta for one dataset.

    The mean is profiled via generalized least squares and the variance via
    its closed form, leaving -n/2 log(sigma2) - 1/2 log det R to maximize.
    """

    def __init__(self, x_pts, y, nugget):
        self.diffs = _sq_diffs(x_pts)
        self.y = y
        self.nugget = nugget
        self.n = x_pts.shape[0]
        self.eye = np.eye(self.n)

    def __call__(self, log_theta) -> float:
        try:
            theta = np.exp(np.asarray(log_theta, dtype=float))
            rmat = np.exp(-self.diffs @ theta) + self.nugget * self.eye
            cho = cho_factor(rmat, lower=True)
        except LinAlgError:
            return _HUGE
        if _pivots_degenerate(cho, self.nugget):
            return _HUGE
        ones = np.ones(self.n)
        u = cho_solve(cho, ones)
        mu = float(u @ self.y) / float(u @ ones)
        resid = self.y - mu
        alpha = cho_solve(cho, resid)
        sigma2 = max(float(resid @ alpha) / self.n, 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        value = 0.5 * self.n * np.log(sigma2) + 0.5 * logdet
        return value if np.isfinite(value) else _HUGE


def _coordinate_search(func, x0, lo, hi, step0=1.5, min_step=0.05):
    x = np.asarray(x0, dtype=float).copy()
    fx = func(x)
    step = step0
    while step >= min_step:
        improved = False
        for k in range(x.size):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[k] = min(max(x[k] + sign * step, lo), hi)
                if trial[k] == x[k]:
                    continue
                ft = func(trial)
                if ft < fx - 1e-12:
                    x, fx = trial, ft
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return x, fx


def _starts(dims: int, count: int, lo: float, hi: float) -> np.ndarray:
    """Center of the box plus fixed quasi-random starts."""
    if count < 1:
        raise ValueError("at least one start is required")
    pts = [np.full(dims, 0.5 * (lo + hi))]
    table = _START_TABLE
    for i in range(count - 1):
        row = table[i % table.shape[0], :dims] if dims <= table.shape[1] else \
            np.resize(table[i % table.shape[0]], dims)
        pts.append(lo + (hi - lo) * row)
    return np.asarray(pts)


def _optimize_theta(objective, dims, options: FitOptions):
    lo, hi = options.log_theta_bounds
    best_x, best_f = None, np.inf
    for x0 in _starts(dims, options.restarts, lo, hi):
        x, fx = _coordinate_search(objective, x0, lo, hi)
        if fx < best_f:
            best_x, best_f = x, fx
    result = optimize.minimize(
        objective, best_x, method="L-BFGS-B",
        bounds=[(lo, hi)] * dims, options={"maxiter": 60},
    )
    if np.isfinite(result.fun) and result.fun < best_f:
        best_x, best_f = result.x, result.fun
    if best_f >= _HUGE:
        raise FitError(
            "likelihood not finite anywhere in the search box",
            best_theta=np.exp(best_x),
        )
    return np.exp(best_x)


def fit(x_pts, y, options: FitOptions = None) -> KrigingModel:
    """Fit ordinary kriging to observations y at input rows x_pts.

    Rows of x_pts should be distinct; exact duplicates with a zero nugget
    raise IllConditionedError. Constant observations skip the search (every
    theta predicts the constant) and keep theta = 1.
    """
    options = options or FitOptions()
    x_pts = np.atleast_2d(np.asarray(x_pts, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n, d = x_pts.shape
    if y.shape != (n,):
        raise ValueError("observation count must match input rows")
    if not np.all(np.isfinite(x_pts)) or not np.all(np.isfinite(y)):
        raise ValueError("inputs and observations must be finite")

    spread = float(np.ptp(y))
    if n == 1 or spread <= 1e-14 * max(1.0, float(np.max(np.abs(y)))):
        theta = np.ones(d)
    else:
        objective = _ProfileLikelihood(x_pts, y, options.nugget)
        try:
            theta = _optimize_theta(objective, d, options)
        except FitError:
            # a singular correlation matrix (duplicate rows, no nugget)
            # makes the likelihood undefined everywhere; report it as such
            _factorize(_corr_matrix(x_pts, np.ones(d), options.nugget))
            raise

    params = CorrelationParams(theta, options.nugget)
    return _build_model(x_pts, y, params)


def _build_model(x_pts, y, params: CorrelationParams) -> KrigingModel:
    rmat = _corr_matrix(x_pts, params.theta, params.nugget)
    cho = _factorize(rmat)
    ones = np.ones(x_pts.shape[0])
    u = cho_solve(cho, ones)
    mu = float(u @ y) / float(u @ ones)
    resid = y - mu
    alpha = cho_solve(cho, resid)
    sigma2 = float(resid @ alpha) / x_pts.shape[0]
    return KrigingModel(x_pts, y, params, mu, max(sigma2, 0.0), alpha)


def predict(model: KrigingModel, x_new) -> float:
    """Conditional mean mu + r' R^-1 (y - mu 1) at a new point.

    Also accepts a (q, d) array of query points, returning a (q,) vector.
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        if x_new.size != model.dims:
            raise ValueError("query dimension does not match the model")
        r = _corr_vector(model.inputs, x_new, model.params.theta)
        return float(model.mu_hat + r @ model.alpha)
    if x_new.ndim == 2 and x_new.shape[1] == model.dims:
        diffs = (model.inputs[None, :, :] - x_new[:, None, :]) ** 2
        r = np.exp(-diffs @ model.params.theta)
        return model.mu_hat + r @ model.alpha
    raise ValueError("query must be a (d,) vector or (q, d) array")


def indicator_weights(x_pts, params: CorrelationParams, x_new) -> np.ndarray:
    """Kriging weights from the n unit-vector targets under one shared theta.

    Weight i is the ordinary-kriging prediction of the i-th indicator vector
    at x_new. Under a shared correlation parameter all n predictions come
    from one linear predictor, so the raw weights sum to one identically
    (and individual weights may be negative).
    """
    x_pts = np.atleast_2d(np.asarray(x_pts, dtype=float))
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float))
    if x_new.size != x_pts.shape[1]:
        raise ValueError("query dimension does not match the inputs")
    rmat = _corr_matrix(x_pts, params.theta, params.nugget)
    cho = _factorize(rmat)
    ones = np.ones(x_pts.shape[0])
    u = cho_solve(cho, ones)
    r = _corr_vector(x_pts, x_new, params.theta)
    # w_i = mu_i (1 - r'u) + (R^-1 r)_i  with  mu_i = u_i / sum(u)
    return (u / u.sum()) * (1.0 - r @ u) + cho_solve(cho, r)


def fit_indicator_theta(x_pts, nugget: float = DEFAULT_NUGGET,
                        log_theta_bounds: tuple = DEFAULT_LOG_THETA_BOUNDS) -> float:
    """Shared isotropic theta for indicator kriging, by maximum likelihood.

    Maximizes the sum of the n indicator datasets' profile log-likelihoods,
    an objective symmetric under relabeling of the cases, over a single
    isotropic parameter.
    """
    x_pts = np.atleast_2d(np.asarray(x_pts, dtype=float))
    n = x_pts.shape[0]
    if n == 1:
        return 1.0
    diffs = _sq_diffs(x_pts).sum(axis=2)
    eye = np.eye(n)
    ones = np.ones(n)

    def objective(log_theta: float) -> float:
        rmat = np.exp(-np.exp(log_theta) * diffs) + nugget * eye
        try:
            cho = cho_factor(rmat, lower=True)
        except LinAlgError:
            return _HUGE
        if _pivots_degenerate(cho, nugget):
            return _HUGE
        rinv = cho_solve(cho, eye)
        u = rinv @ ones
        s2 = np.maximum(np.diag(rinv) - u ** 2 / u.sum(), 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        value = 0.5 * n * float(np.sum(np.log(s2))) + 0.5 * n * logdet
        return value if np.isfinite(value) else _HUGE

    lo, hi = log_theta_bounds
    grid = np.linspace(lo, hi, 33)
    values = [objective(g) for g in grid]
    k = int(np.argmin(values))
    lo_b = grid[max(k - 1, 0)]
    hi_b = grid[min(k + 1, grid.size - 1)]
    result = optimize.minimize_scalar(
        objective, bounds=(lo_b, hi_b), method="bounded",
        options={"xatol": 1e-6},
    )
    best = result.x if result.fun <= values[k] else grid[k]
    if min(result.fun, values[k]) >= _HUGE:
        warnings.warn("indicator likelihood degenerate; keeping theta = 1")
        return 1.0
    return float(np.exp(best))


def write_model(model: KrigingModel, path) -> None:
    """Write a fitted model as a KSGP1 file (factorization not stored)."""
    w = Writer(MAGIC)
    w.u64(model.n, model.dims)
    w.f64(model.inputs)
    w.f64(model.obs)
    w.f64(model.params.theta)
    w.f64([model.params.nugget, model.mu_hat, model.sigma2_hat])
    w.dump(path)


def read_model(path) -> KrigingModel:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), MAGIC)
    n, d = r.u64(2)
    if min(n, d) < 1 or n * d > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{path}: implausible dimensions n={n}, d={d}")
    inputs = r.f64(n * d, shape=(n, d))
    obs = r.f64(n)
    theta = r.f64(d)
    nugget, mu, sigma2 = r.f64(3)
    r.finish()
    for arr in (inputs, obs, theta):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    params = CorrelationParams(theta, float(nugget))
    return KrigingModel(inputs, obs, params, float(mu), float(sigma2))
