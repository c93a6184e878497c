import numpy as np
import pytest

from kspod.errors import IllConditionedError
from kspod.kriging import (
    CorrelationParams,
    FitOptions,
    correlation,
    fit,
    fit_indicator_theta,
    indicator_weights,
    predict,
    read_model,
    write_model,
)


def dense_predict(x_pts, y, theta, nugget, x_new):
    """Brute-force conditional mean via full solves (oracle)."""
    n = x_pts.shape[0]
    diffs = (x_pts[:, None, :] - x_pts[None, :, :]) ** 2
    rmat = np.exp(-diffs @ theta) + nugget * np.eye(n)
    rinv = np.linalg.inv(rmat)
    ones = np.ones(n)
    mu = (ones @ rinv @ y) / (ones @ rinv @ ones)
    r = np.exp(-((x_pts - x_new) ** 2) @ theta)
    return mu + r @ rinv @ (y - mu * ones)


def dense_indicator_weights(x_pts, theta, nugget, x_new):
    n = x_pts.shape[0]
    diffs = (x_pts[:, None, :] - x_pts[None, :, :]) ** 2
    rmat = np.exp(-diffs @ theta) + nugget * np.eye(n)
    rinv = np.linalg.inv(rmat)
    ones = np.ones(n)
    r = np.exp(-((x_pts - x_new) ** 2) @ theta)
    out = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        mu = (ones @ rinv @ e) / (ones @ rinv @ ones)
        out[i] = mu + r @ rinv @ (e - mu * ones)
    return out


class TestCorrelation:
    def test_identical_points(self):
        params = CorrelationParams(np.array([2.0, 3.0]))
        assert correlation([0.1, 0.4], [0.1, 0.4], params) == 1.0

    def test_unit_distance(self):
        params = CorrelationParams(np.array([1.0]))
        assert correlation([0.0], [1.0], params) == pytest.approx(
            np.exp(-1.0), rel=1e-12
        )

    def test_underflow_to_zero(self):
        params = CorrelationParams(np.array([1e6]))
        assert correlation([0.0], [1.0], params) == 0.0

    def test_dimension_mismatch(self):
        params = CorrelationParams(np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            correlation([0.0], [1.0, 2.0], params)


class TestFitAndPredict:
    def test_constant_observations(self):
        x_pts = np.random.default_rng(0).uniform(size=(6, 2))
        model = fit(x_pts, np.full(6, 3.25))
        for probe in np.random.default_rng(1).uniform(size=(5, 2)):
            assert predict(model, probe) == pytest.approx(3.25, abs=1e-9)

    def test_interpolation_property(self):
        rng = np.random.default_rng(2)
        for trial in range(5):
            n, d = int(rng.integers(3, 15)), int(rng.integers(1, 4))
            x_pts = rng.uniform(size=(n, d))
            y = rng.normal(size=n)
            model = fit(x_pts, y)
            tol = 1e-6 * max(np.ptp(y), 1e-12)
            for i in range(n):
                assert abs(predict(model, x_pts[i]) - y[i]) <= tol

    def test_sin_recovery(self):
        x_pts = np.linspace(0.0, 1.0, 8)[:, None]
        y = np.sin(2.0 * np.pi * x_pts[:, 0])
        model = fit(x_pts, y)
        mids = 0.5 * (x_pts[1:, 0] + x_pts[:-1, 0])
        preds = np.array([predict(model, [m]) for m in mids])
        rmse = np.sqrt(np.mean((preds - np.sin(2.0 * np.pi * mids)) ** 2))
        assert rmse < 0.05

    def test_single_point(self):
        model = fit(np.array([[0.3, 0.7]]), np.array([2.5]))
        assert predict(model, [0.9, 0.1]) == pytest.approx(2.5, abs=1e-12)

    def test_midpoint_symmetry(self):
        x_pts = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        for theta in (0.3, 2.0, 25.0):
            params = CorrelationParams(np.array([theta]), nugget=1e-8)
            from kspod.kriging import _build_model
            model = _build_model(x_pts, y, params)
            assert predict(model, [0.5]) == pytest.approx(0.5, abs=1e-10)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(3)
        for n in (5, 20, 50):
            x_pts = rng.uniform(size=(n, 3))
            y = rng.normal(size=n)
            model = fit(x_pts, y)
            for probe in rng.uniform(-0.2, 1.2, size=(4, 3)):
                oracle = dense_predict(
                    x_pts, y, model.params.theta, model.params.nugget, probe
                )
                assert predict(model, probe) == pytest.approx(oracle, abs=1e-10)

    def test_optimizer_beats_random_probes(self):
        from kspod.kriging import _ProfileLikelihood
        rng = np.random.default_rng(4)
        x_pts = rng.uniform(size=(12, 2))
        y = np.sin(3.0 * x_pts[:, 0]) + 0.5 * x_pts[:, 1] ** 2
        model = fit(x_pts, y)
        objective = _ProfileLikelihood(x_pts, y, model.params.nugget)
        fitted = objective(np.log(model.params.theta))
        probes = rng.uniform(-6.0, 6.0, size=(32, 2))
        assert all(objective(p) >= fitted - 1e-9 for p in probes)

    def test_duplicates_without_nugget(self):
        x_pts = np.array([[0.2, 0.2], [0.2, 0.2], [0.8, 0.8]])
        with pytest.raises(IllConditionedError):
            fit(x_pts, np.array([1.0, 1.0, 2.0]),
                FitOptions(nugget=0.0, restarts=1))

    def test_mu_hat_identity(self):
        rng = np.random.default_rng(5)
        x_pts = rng.uniform(size=(10, 2))
        y = rng.normal(size=10)
        model = fit(x_pts, y)
        diffs = (x_pts[:, None, :] - x_pts[None, :, :]) ** 2
        rmat = np.exp(-diffs @ model.params.theta) \
            + model.params.nugget * np.eye(10)
        rinv = np.linalg.inv(rmat)
        ones = np.ones(10)
        mu = (ones @ rinv @ y) / (ones @ rinv @ ones)
        assert model.mu_hat == pytest.approx(mu, abs=1e-10)


class TestIndicatorWeights:
    def test_unit_vectors_at_training_points(self):
        rng = np.random.default_rng(6)
        x_pts = rng.uniform(size=(9, 3))
        params = CorrelationParams.isotropic(8.0, 3)
        for j in range(9):
            w = indicator_weights(x_pts, params, x_pts[j])
            expected = np.zeros(9)
            expected[j] = 1.0
            assert np.abs(w - expected).max() < 1e-6

    def test_raw_weights_sum_to_one(self):
        rng = np.random.default_rng(7)
        x_pts = rng.uniform(size=(15, 2))
        params = CorrelationParams.isotropic(5.0, 2)
        for probe in rng.uniform(-0.5, 1.5, size=(50, 2)):
            w = indicator_weights(x_pts, params, probe)
            assert w.sum() == pytest.approx(1.0, abs=1e-8)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        x_pts = rng.uniform(size=(7, 2))
        params = CorrelationParams.isotropic(4.0, 2)
        probe = np.array([0.42, 0.77])
        w = indicator_weights(x_pts, params, probe)
        oracle = dense_indicator_weights(x_pts, params.theta,
                                         params.nugget, probe)
        assert np.abs(w - oracle).max() < 1e-10

    def test_negative_weights_not_clamped(self):
        x_pts = np.linspace(0.0, 1.0, 6)[:, None]
        params = CorrelationParams.isotropic(10.0, 1)
        w = indicator_weights(x_pts, params, np.array([1.35]))
        assert w.min() < 0.0

    def test_gaussian_kernel_limit(self):
        # Well-separated design, query close to one point: all other kernel
        # values fall below 1e-6 and the near weight matches the kernel to 1%.
        corners = np.array([[float(b) for b in f"{i:03b}"] for i in range(8)])
        params = CorrelationParams.isotropic(50.0, 3)
        for j in range(8):
            probe = corners[j] + (0.015 if j % 2 == 0 else -0.015)
            w = indicator_weights(corners, params, probe)
            kernel = np.exp(-50.0 * np.sum((corners - probe) ** 2, axis=1))
            comparable = kernel > 1e-6
            assert comparable.sum() == 1
            rel = np.abs(w[comparable] - kernel[comparable]) / kernel[comparable]
            assert rel.max() < 0.01

    def test_shared_theta_mle_runs(self):
        rng = np.random.default_rng(9)
        x_pts = rng.uniform(size=(12, 3))
        theta = fit_indicator_theta(x_pts)
        assert np.isfinite(theta) and theta > 0.0


class TestSerialization:
    def test_round_trip_predictions(self, tmp_path):
        rng = np.random.default_rng(10)
        x_pts = rng.uniform(size=(8, 2))
        y = rng.normal(size=8)
        model = fit(x_pts, y)
        path = tmp_path / "model.ksgp"
        write_model(model, path)
        loaded = read_model(path)
        probes = rng.uniform(size=(6, 2))
        for probe in probes:
            assert predict(loaded, probe) == predict(model, probe)

    def test_rewrite_byte_identical(self, tmp_path):
        rng = np.random.default_rng(11)
        model = fit(rng.uniform(size=(5, 1)), rng.normal(size=5))
        p1, p2 = tmp_path / "a.ksgp", tmp_path / "b.ksgp"
        write_model(model, p1)
        write_model(read_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
