"""Kernel-smoothed POD emulator of spatiotemporal fields.

Training decomposes every case into spatial modes and temporal coefficients,
sign-aligns the mode libraries to the first case, fits one kriging model per
(mode, time-step) coefficient, and configures shared-parameter indicator
kriging over the design space. Prediction at an untried design blends the
per-case modes (and mean fields) with normalized indicator weights and
evaluates the coefficient models, then recombines.

Design vectors are normalized to the unit cube before any kriging; the
squared-exponential correlation is not scale-invariant.
"""

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._binio import MAX_ELEMENTS, Reader, Writer
from .design import Cluster, DesignRanges
from .errors import (
    DegenerateWeightsError,
    DimensionOverflowError,
    IllConditionedError,
    IncompatibleCasesError,
    NonFiniteDataError,
)
from .kriging import (
    DEFAULT_LOG_THETA_BOUNDS,
    DEFAULT_NUGGET,
    CorrelationParams,
    FitOptions,
    KrigingModel,
    _build_model,
    _optimize_theta,
    _pivots_degenerate,
    _sq_diffs,
    fit,
    fit_indicator_theta,
)
from .pod import PODBasis, align_modes, decompose, rank_for_energy, truncate
from .snapshots import SnapshotSet

__all__ = [
    "EmulatorModel",
    "TrainOptions",
    "WeightVector",
    "load_model",
    "nw_weights",
    "predict_coefficients",
    "predict_field",
    "predict_modes",
    "predict_snapshots",
    "save_model",
    "train",
    "weight_vector",
]

MAGIC = "KSEM1"

# Below this magnitude the raw-weight sum is treated as degenerate; the
# normalizing division is refused rather than amplified.
WEIGHT_SUM_EPS = 1e-6


@dataclass(frozen=True)
class WeightVector:
    """Raw per-case blending weights and their sum-normalized form."""

    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class TrainOptions:
    """Knobs for emulator training.

    Exactly one truncation rule applies: ``num_modes`` when given, otherwise
    the cumulative ``energy_threshold``. ``cluster_filter`` restricts
    training to cases whose metadata cluster is listed (metadata must then
    be supplied, aligned with the cases). ``ranges`` defaults to the
    bounding box of the training designs. ``coeff_theta_mode`` is
    ``"per-model"`` (one length-scale search per mode and time-step) or
    ``"shared"`` (one search per mode, shared across time-steps).
    """

    energy_threshold: float = 0.99
    num_modes: int = None
    centering: bool = True
    cluster_filter: frozenset = None
    metadata: tuple = None
    ranges: DesignRanges = None
    nugget: float = DEFAULT_NUGGET
    log_theta_bounds: tuple = DEFAULT_LOG_THETA_BOUNDS
    restarts: int = 8
    coeff_theta_mode: str = "per-model"
    weight_theta: float = None
    n_workers: int = 1

    def __post_init__(self):
        if self.num_modes is None and not 0.0 < self.energy_threshold <= 1.0:
            raise ValueError("energy_threshold must lie in (0, 1]")
        if self.num_modes is not None and self.num_modes < 1:
            raise ValueError("num_modes must be at least 1")
        if self.coeff_theta_mode not in ("per-model", "shared"):
            raise ValueError("coeff_theta_mode must be 'per-model' or 'shared'")
        if self.cluster_filter is not None:
            members = frozenset(
                c if isinstance(c, Cluster) else Cluster(str(c))
                for c in self.cluster_filter
            )
            object.__setattr__(self, "cluster_filter", members)
        if self.n_workers < 1:
            raise ValueError("n_workers must be at least 1")


@dataclass(frozen=True)
class EmulatorModel:
    """Trained emulator: aligned mode library plus coefficient/weight models."""

    design: np.ndarray        # (n, d) physical design points
    ranges: DesignRanges
    rank: int
    mode_library: tuple       # n truncated, sign-aligned PODBasis
    coeff_models: tuple       # [k][q] KrigingModel on normalized inputs
    weight_params: CorrelationParams
    grid: np.ndarray          # (J, 2)
    times: np.ndarray         # (m,)
    centering: bool
    options_record: dict
    variable: str = "field"
    units: str = ""

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        unit = self.ranges.normalize(design)
        modes_stack = np.stack([b.modes for b in self.mode_library], axis=0)
        mean_stack = (
            np.stack([b.mean_field for b in self.mode_library], axis=0)
            if self.centering else None
        )
        rmat = np.exp(
            -_sq_diffs(unit) @ self.weight_params.theta
        ) + self.weight_params.nugget * np.eye(unit.shape[0])
        try:
            cho = cho_factor(rmat, lower=True)
        except LinAlgError as exc:
            raise IllConditionedError(
                "weight-model correlation matrix is singular (coincident "
                "normalized designs?)"
            ) from exc
        object.__setattr__(self, "_design_unit", unit)
        object.__setattr__(self, "_modes_stack", modes_stack)
        object.__setattr__(self, "_mean_stack", mean_stack)
        object.__setattr__(self, "_weight_cho", cho)
        object.__setattr__(self, "_weight_u", cho_solve(cho, np.ones(unit.shape[0])))

    @property
    def n_cases(self) -> int:
        return self.design.shape[0]

    @property
    def dims(self) -> int:
        return self.design.shape[1]

    @property
    def num_points(self) -> int:
        return self.grid.shape[0]

    @property
    def num_snapshots(self) -> int:
        return self.times.size


def _derive_ranges(design: np.ndarray) -> DesignRanges:
    lo = design.min(axis=0)
    hi = design.max(axis=0)
    flat = hi <= lo
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    return DesignRanges(lo, hi)


def _common_rank(bases, options: TrainOptions) -> int:
    available = min(b.num_modes for b in bases)
    if options.num_modes is not None:
        if options.num_modes > available:
            raise ValueError(
                f"num_modes={options.num_modes} exceeds the smallest case "
                f"rank {available}"
            )
        return options.num_modes
    ranks = [rank_for_energy(b, options.energy_threshold) for b in bases]
    k = min(ranks)
    if k < 1:
        raise ValueError("training cases carry no resolvable variance")
    return k


def _fit_shared_coeff_theta(unit_design, coeff_block, options: TrainOptions):
    """One anisotropic theta per mode, pooling all time-steps' likelihoods."""
    diffs = _sq_diffs(unit_design)
    n, m = coeff_block.shape
    eye = np.eye(n)
    ones = np.ones(n)

    def objective(log_theta):
        theta = np.exp(np.asarray(log_theta, dtype=float))
        rmat = np.exp(-diffs @ theta) + options.nugget * eye
        try:
            cho = cho_factor(rmat, lower=True)
        except LinAlgError:
            return 1e300
        if _pivots_degenerate(cho, options.nugget):
            return 1e300
        u = cho_solve(cho, ones)
        mu = (u @ coeff_block) / (u @ ones)
        resid = coeff_block - np.outer(ones, mu)
        alpha = cho_solve(cho, resid)
        sigma2 = np.maximum(np.einsum("nq,nq->q", resid, alpha) / n, 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        value = 0.5 * n * float(np.sum(np.log(sigma2))) + 0.5 * m * logdet
        return value if np.isfinite(value) else 1e300

    fit_opts = FitOptions(options.nugget, options.log_theta_bounds, options.restarts)
    return _optimize_theta(objective, unit_design.shape[1], fit_opts)


def _fit_coeff_models(unit_design, coeff_tensor, options: TrainOptions):
    """Fit the K x m kriging models for coeff_tensor of shape (n, m, K)."""
    _, m, k_rank = coeff_tensor.shape
    fit_opts = FitOptions(options.nugget, options.log_theta_bounds, options.restarts)

    if options.coeff_theta_mode == "shared":
        models = []
        for k in range(k_rank):
            theta = _fit_shared_coeff_theta(unit_design, coeff_tensor[:, :, k], options)
            params = CorrelationParams(theta, options.nugget)
            models.append(tuple(
                _build_model(unit_design, coeff_tensor[:, q, k], params)
                for q in range(m)
            ))
        return tuple(models)

    jobs = [(k, q) for k in range(k_rank) for q in range(m)]

    def run(job):
        k, q = job
        return fit(unit_design, coeff_tensor[:, q, k], fit_opts)

    if options.n_workers > 1:
        with ThreadPoolExecutor(max_workers=options.n_workers) as pool:
            fitted = list(pool.map(run, jobs))
    else:
        fitted = [run(job) for job in jobs]

    models = [[None] * m for _ in range(k_rank)]
    for (k, q), model in zip(jobs, fitted):
        models[k][q] = model
    return tuple(tuple(row) for row in models)


def train(cases, options: TrainOptions = None) -> EmulatorModel:
    """Train the emulator from per-case snapshot sets.

    All cases must share bit-identical grids and time vectors and have
    distinct design vectors. A single-case model is permitted (with a
    warning) and degenerates to that case's truncated reconstruction.
    """
    options = options or TrainOptions()
    cases = list(cases)
    if not cases:
        raise ValueError("at least one training case is required")

    if options.cluster_filter is not None:
        if options.metadata is None or len(options.metadata) != len(cases):
            raise ValueError(
                "cluster_filter requires metadata aligned with the cases"
            )
        kept = [
            (c, meta) for c, meta in zip(cases, options.metadata)
            if meta.cluster in options.cluster_filter
        ]
        if not kept:
            raise ValueError("cluster filter removed every training case")
        cases = [c for c, _ in kept]

    if len(cases) == 1:
        warnings.warn(
            "training on a single case: predictions will reproduce that "
            "case everywhere", stacklevel=2,
        )

    ref = cases[0]
    for c in cases[1:]:
        if c.grid.tobytes() != ref.grid.tobytes() or \
                c.times.tobytes() != ref.times.tobytes():
            raise IncompatibleCasesError(
                f"case {c.case_id!r} grid/times differ from {ref.case_id!r}"
            )

    design = np.vstack([c.design for c in cases])
    if np.unique(design, axis=0).shape[0] != design.shape[0]:
        raise ValueError("training designs must be distinct")

    if options.n_workers > 1:
        with ThreadPoolExecutor(max_workers=options.n_workers) as pool:
            bases = list(pool.map(
                lambda c: decompose(c, centering=options.centering), cases
            ))
    else:
        bases = [decompose(c, centering=options.centering) for c in cases]
    return _assemble(design, bases, ref, options)


def _assemble(design, bases, ref_case: SnapshotSet,
              options: TrainOptions) -> EmulatorModel:
    """Build the model from per-case bases (rank choice, alignment, fits)."""
    k_rank = _common_rank(bases, options)
    truncated = [truncate(b, num_modes=k_rank) for b in bases]
    aligned = [truncated[0]]
    aligned += [align_modes(truncated[0], b) for b in truncated[1:]]

    ranges = options.ranges or _derive_ranges(design)
    unit = ranges.normalize(design)

    coeff_tensor = np.stack([b.coeffs for b in aligned], axis=0)  # (n, m, K)
    coeff_models = _fit_coeff_models(unit, coeff_tensor, options)

    theta_w = options.weight_theta
    if theta_w is None:
        theta_w = fit_indicator_theta(
            unit, options.nugget, options.log_theta_bounds
        )
    weight_params = CorrelationParams.isotropic(
        theta_w, design.shape[1], options.nugget
    )

    record = {
        "energy_threshold": options.energy_threshold,
        "num_modes": options.num_modes,
        "centering": options.centering,
        "nugget": options.nugget,
        "log_theta_bounds": tuple(options.log_theta_bounds),
        "restarts": options.restarts,
        "coeff_theta_mode": options.coeff_theta_mode,
        "weight_theta": float(theta_w),
    }
    return EmulatorModel(
        design=design,
        ranges=ranges,
        rank=k_rank,
        mode_library=tuple(aligned),
        coeff_models=coeff_models,
        weight_params=weight_params,
        grid=ref_case.grid,
        times=ref_case.times,
        centering=options.centering,
        options_record=record,
        variable=ref_case.variable,
        units=ref_case.units,
    )


def _normalize_query(model: EmulatorModel, x_new) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x_new, dtype=float))
    if x.shape != (model.dims,):
        raise ValueError(f"query must be a {model.dims}-vector")
    return model.ranges.normalize(x)


def _normalize_raw(raw: np.ndarray, x_new) -> np.ndarray:
    total = raw.sum()
    if abs(total) < WEIGHT_SUM_EPS:
        raise DegenerateWeightsError(
            f"raw weights sum to {total:.3e} at design "
            f"{np.array2string(np.atleast_1d(np.asarray(x_new, dtype=float)))}"
        )
    return raw / total


def weight_vector(model: EmulatorModel, x_new) -> WeightVector:
    """Indicator-kriging blending weights of the training cases at x_new."""
    xu = _normalize_query(model, x_new)
    r = np.exp(-((model._design_unit - xu) ** 2) @ model.weight_params.theta)
    u = model._weight_u
    raw = (u / u.sum()) * (1.0 - r @ u) + cho_solve(model._weight_cho, r)
    return WeightVector(raw, _normalize_raw(raw, x_new))


def nw_weights(model: EmulatorModel, x_new, theta: float) -> WeightVector:
    """Gaussian-kernel smoother weights: the large-theta, dense-design limit
    of the indicator-kriging weights, on normalized design coordinates."""
    if not np.isfinite(theta) or theta <= 0.0:
        raise ValueError("theta must be positive")
    xu = _normalize_query(model, x_new)
    raw = np.exp(-theta * np.sum((model._design_unit - xu) ** 2, axis=1))
    return WeightVector(raw, _normalize_raw(raw, x_new))


def predict_modes(model: EmulatorModel, x_new) -> np.ndarray:
    """Normalized-weight average of the aligned per-case modes, (J, K)."""
    w = weight_vector(model, x_new).normalized
    return np.einsum("n,njk->jk", w, model._modes_stack)


def predict_coefficients(model: EmulatorModel, x_new,
                         time_indices=None) -> np.ndarray:
    """Coefficient predictions (K, len(indices)) from the per-(k, q) models."""
    xu = _normalize_query(model, x_new)
    idx = _resolve_indices(model, time_indices)
    out = np.empty((model.rank, idx.size))
    for k in range(model.rank):
        row = model.coeff_models[k]
        for col, q in enumerate(idx):
            mod = row[q]
            r = np.exp(-((mod.inputs - xu) ** 2) @ mod.params.theta)
            out[k, col] = mod.mu_hat + r @ mod.alpha
    return out


def _resolve_indices(model: EmulatorModel, time_indices) -> np.ndarray:
    if time_indices is None:
        return np.arange(model.num_snapshots)
    idx = np.asarray(time_indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= model.num_snapshots):
        raise IndexError("time index out of range")
    return idx


def predict_field(model: EmulatorModel, x_new, time_indices=None) -> np.ndarray:
    """Full-field prediction (J, len(indices)) at an untried design point.

    Combines predicted modes and coefficients; with centering on, the mean
    field is blended with the same normalized weights as the modes.
    """
    w = weight_vector(model, x_new).normalized
    modes = np.einsum("n,njk->jk", w, model._modes_stack)
    beta = predict_coefficients(model, x_new, time_indices)
    fld = modes @ beta
    if model.centering:
        fld = fld + (w @ model._mean_stack)[:, None]
    return fld


def predict_snapshots(model: EmulatorModel, x_new,
                      time_indices=None) -> SnapshotSet:
    """Predict and wrap as a SnapshotSet (case_id 'predicted:<design hash>')."""
    idx = _resolve_indices(model, time_indices)
    fld = predict_field(model, x_new, idx)
    x = np.atleast_1d(np.asarray(x_new, dtype=float))
    digest = hashlib.sha256(x.tobytes()).hexdigest()[:12]
    return SnapshotSet(
        case_id=f"predicted:{digest}",
        design=x,
        grid=model.grid,
        times=model.times[idx],
        field=fld,
        variable=model.variable,
        units=model.units,
    )


# ---------------------------------------------------------------------------
# KSEM1 serialization

def save_model(model: EmulatorModel, path) -> None:
    """Write the emulator as a KSEM1 file (same conventions as KSPD1)."""
    n, d = model.design.shape
    j = model.num_points
    m = model.num_snapshots
    k_rank = model.rank
    rec = model.options_record

    w = Writer(MAGIC)
    flags = 1 if model.centering else 0
    w.u64(n, d, j, m, k_rank, flags,
          int(rec.get("restarts", 8)),
          1 if rec.get("coeff_theta_mode") == "shared" else 0,
          int(rec.get("num_modes") or 0))
    lb, ub = rec.get("log_theta_bounds", DEFAULT_LOG_THETA_BOUNDS)
    thr = rec.get("energy_threshold")
    w.f64([
        np.nan if thr is None else float(thr),
        float(rec.get("nugget", DEFAULT_NUGGET)),
        float(rec["weight_theta"]),
        float(lb), float(ub),
    ])
    w.f64(model.ranges.lower)
    w.f64(model.ranges.upper)
    w.f64(model.grid)
    w.f64(model.times)
    w.f64(model.design)
    for basis in model.mode_library:
        w.f64(basis.eigenvalues)
        w.f64(basis.modes, order="F")
        w.f64(basis.coeffs, order="F")
        if model.centering:
            w.f64(basis.mean_field)
    theta = np.empty((k_rank, m, d))
    mu = np.empty((k_rank, m))
    sigma2 = np.empty((k_rank, m))
    for k in range(k_rank):
        for q in range(m):
            mod = model.coeff_models[k][q]
            theta[k, q] = mod.params.theta
            mu[k, q] = mod.mu_hat
            sigma2[k, q] = mod.sigma2_hat
    w.f64(theta)
    w.f64(mu)
    w.f64(sigma2)
    w.dump(path)


def load_model(path) -> EmulatorModel:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), MAGIC)
    n, d, j, m, k_rank, flags, restarts, shared, explicit_k = r.u64(9)
    total = n * d + 2 * j + m + n * (k_rank + j * k_rank + m * k_rank + j) \
        + k_rank * m * (d + 2)
    if min(n, d, j, m, k_rank) < 1 or total > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{path}: implausible model dimensions")
    thr, nugget, weight_theta, lb, ub = r.f64(5)
    lower = r.f64(d)
    upper = r.f64(d)
    grid = r.f64(2 * j, shape=(j, 2))
    times = r.f64(m)
    design = r.f64(n * d, shape=(n, d))
    centering = bool(flags & 1)

    ranges = DesignRanges(lower, upper)
    library = []
    for _ in range(n):
        lam = r.f64(k_rank)
        modes = r.f64(j * k_rank, shape=(j, k_rank), order="F")
        coeffs = r.f64(m * k_rank, shape=(m, k_rank), order="F")
        mean = r.f64(j) if centering else None
        library.append(PODBasis(modes, coeffs, lam, np.ones(j), mean))
    theta = r.f64(k_rank * m * d, shape=(k_rank, m, d))
    mu = r.f64(k_rank * m, shape=(k_rank, m))
    sigma2 = r.f64(k_rank * m, shape=(k_rank, m))
    r.finish()

    for arr in (grid, times, design, theta, mu, sigma2):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteDataError(f"{path}: payload contains non-finite values")

    unit = ranges.normalize(design)
    coeff_models = []
    for k in range(k_rank):
        row = []
        for q in range(m):
            obs = np.array([library[i].coeffs[q, k] for i in range(n)])
            params = CorrelationParams(theta[k, q], float(nugget))
            row.append(KrigingModel(
                unit, obs, params, float(mu[k, q]), float(sigma2[k, q])
            ))
        coeff_models.append(tuple(row))

    record = {
        "energy_threshold": None if np.isnan(thr) else float(thr),
        "num_modes": int(explicit_k) or None,
        "centering": centering,
        "nugget": float(nugget),
        "log_theta_bounds": (float(lb), float(ub)),
        "restarts": int(restarts),
        "coeff_theta_mode": "shared" if shared else "per-model",
        "weight_theta": float(weight_theta),
    }
    return EmulatorModel(
        design=design,
        ranges=ranges,
        rank=int(k_rank),
        mode_library=tuple(library),
        coeff_models=tuple(coeff_models),
        weight_params=CorrelationParams.isotropic(
            float(weight_theta), int(d), float(nugget)
        ),
        grid=grid,
        times=times,
        centering=centering,
        options_record=record,
    )
