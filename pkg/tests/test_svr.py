import numpy as np
import pytest

import velsurf as vs
from velsurf.preprocess import AxisScaler, ScaledDataset
from velsurf.svr import predict_scaled


def _dataset(x, y, scaler=None):
    n = len(y)
    scaler = scaler or AxisScaler(0.0, 1.0, 0.0, 1.0, 0.0, 1.0)
    return ScaledDataset(
        x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float), scaler=scaler,
        experiment_ids=("only",), point_experiment=np.zeros(n, dtype=np.int64),
        point_index=np.arange(n, dtype=np.int64),
    )


def _ramp_dataset(n=30):
    x = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    y = np.linspace(0.0, 1.0, n)
    return _dataset(x, y)


class TestTrain:
    def test_constant_velocity_gives_empty_model(self):
        ds = _dataset(np.column_stack([np.arange(5.0), np.zeros(5)]), np.full(5, 0.35))
        model = vs.train(ds, vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.01))
        assert model.n_support == 0
        assert vs.predict_scaled(model, np.array([2.0, 0.0])) == pytest.approx(0.35, abs=1e-15)

    def test_ramp_free_points_within_tube(self):
        ds = _ramp_dataset()
        hp = vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.001)
        cfg = vs.SolverConfig(C=hp.C, epsilon=hp.epsilon, tolerance=1e-3)
        model = vs.train(ds, hp, cfg)
        assert model.meta.converged
        pred = vs.predict_scaled(model, ds.x)
        resid = np.abs(pred - ds.y)
        # free support vectors and non-support points both obey the bound
        at_bound = np.zeros(len(ds.y), dtype=bool)
        sv_map = {tuple(p): c for p, c in zip(map(tuple, model.support_vectors),
                                              model.coefficients)}
        for i, p in enumerate(map(tuple, ds.x)):
            if abs(sv_map.get(p, 0.0)) >= hp.C:
                at_bound[i] = True
        assert np.all(resid[~at_bound] <= hp.epsilon + cfg.tolerance)
        assert np.any(~at_bound)

    def test_epsilon_beyond_range_strips_all_support(self):
        ds = _ramp_dataset()
        model = vs.train(ds, vs.HyperParams(gamma=0.1, C=1.0, epsilon=1.5))
        assert model.n_support == 0

    def test_non_convergence_warns_and_flags(self):
        ds = _ramp_dataset()
        cfg = vs.SolverConfig(C=1.0, epsilon=0.001, max_iterations=1)
        with pytest.warns(UserWarning, match="did not converge"):
            model = vs.train(ds, vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.001), cfg)
        assert not model.meta.converged

    def test_meta_carries_fingerprint_and_config(self):
        ds = _ramp_dataset()
        hp = vs.HyperParams(gamma=0.2, C=0.5, epsilon=0.01)
        model = vs.train(ds, hp)
        assert model.meta.fingerprint == ds.fingerprint()
        assert model.meta.C == 0.5
        assert model.meta.epsilon == 0.01
        assert model.meta.n_train == ds.n_points

    def test_empty_dataset_rejected(self):
        empty = ScaledDataset(
            x=np.empty((0, 2)), y=np.empty(0),
            scaler=AxisScaler(0.0, 1.0, 0.0, 1.0, 0.0, 1.0),
            experiment_ids=(), point_experiment=np.empty(0, dtype=np.int64),
            point_index=np.empty(0, dtype=np.int64),
        )
        with pytest.raises(vs.DataError):
            vs.train(empty, vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.01))


class TestPredict:
    def test_zero_support_model_is_constant(self, small_scaled):
        ds = _dataset(np.column_stack([np.arange(4.0), np.zeros(4)]), np.full(4, 0.6))
        model = vs.train(ds, vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.05))
        for x in (np.array([0.0, 0.0]), np.array([100.0, -3.0])):
            assert vs.predict_scaled(model, x) == pytest.approx(0.6, abs=1e-15)

    def test_repeat_evaluations_bit_identical(self, small_model):
        x = np.array([10.3, 1.7])
        assert vs.predict_scaled(small_model, x) == vs.predict_scaled(small_model, x)

    def test_batch_matches_single_bitwise(self, small_model):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 100, size=(40, 2))
        batch = vs.predict_scaled(small_model, pts)
        singles = np.array([vs.predict_scaled(small_model, p) for p in pts])
        np.testing.assert_array_equal(batch, singles)

    def test_physical_is_scale_then_unscale(self, small_model):
        t, w = 120.0, 0.34
        scaler = small_model.scaler
        manual = scaler.unscale_velocity(
            vs.predict_scaled(small_model, scaler.scale_points(t, w))
        )[0]
        assert vs.predict_physical(small_model, t, w) == manual

    def test_dimension_mismatch(self, small_model):
        with pytest.raises(vs.DataError):
            vs.predict_scaled(small_model, np.array([1.0, 2.0, 3.0]))

    def test_lipschitz_sanity(self, small_model):
        # finite differences stay under the analytic slope bound for RBF
        gamma = small_model.kernel.gamma
        bound = 2.0 * gamma * np.abs(small_model.coefficients).sum()
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.uniform(0, 50, size=2)
            d = rng.normal(size=2)
            d /= np.linalg.norm(d)
            h = 1e-5
            f1 = vs.predict_scaled(small_model, x)
            f2 = vs.predict_scaled(small_model, x + h * d)
            assert abs(f2 - f1) / h <= bound * 1.001


class TestUnitInvariance:
    def test_power_of_two_rescaling_gives_identical_scaled_model(self, small_raw):
        raw, _ = small_raw
        scaled_a, _ = vs.preprocess_dataset(raw, half_width=3)
        rescaled = vs.RawDataset(experiments=tuple(
            vs.ExperimentSeries(
                id=e.id, thickness_in=e.thickness_in * 0.5, dt_ns=e.dt_ns * 2.0,
                velocities=e.velocities * 4.0, t0_ns=e.t0_ns,
            ) for e in raw
        ))
        scaled_b, _ = vs.preprocess_dataset(rescaled, half_width=3)
        np.testing.assert_array_equal(scaled_a.x, scaled_b.x)
        np.testing.assert_array_equal(scaled_a.y, scaled_b.y)
        hp = vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.01)
        m_a = vs.train(scaled_a, hp)
        m_b = vs.train(scaled_b, hp)
        np.testing.assert_array_equal(m_a.coefficients, m_b.coefficients)
        np.testing.assert_array_equal(m_a.support_vectors, m_b.support_vectors)
        assert m_a.bias == m_b.bias


class TestAlternativeKernels:
    @pytest.mark.parametrize("kernel", [
        vs.AnisotropicRbfKernel(gammas=(0.2, 0.05)),
        vs.PolynomialKernel(degree=3, scale=0.05, offset=1.0),
    ])
    def test_train_predict_persist(self, kernel, tmp_path):
        ds = _ramp_dataset()
        hp = vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.01)
        model = vs.train(ds, hp, kernel=kernel)
        assert model.kernel == kernel
        pred = vs.predict_scaled(model, ds.x)
        assert np.all(np.isfinite(pred))
        # fits the ramp to tube + tolerance at free points at least roughly
        assert np.median(np.abs(pred - ds.y)) < 0.1
        path = tmp_path / "alt.model"
        vs.save_model(model, path)
        back = vs.load_model(path)
        np.testing.assert_array_equal(vs.predict_scaled(back, ds.x), pred)

    def test_anisotropic_matches_solver_reference(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, size=(18, 2))
        y = 0.3 * x[:, 0] ** 2 + 0.1 * x[:, 1] + rng.normal(0, 0.02, 18)
        kernel = vs.AnisotropicRbfKernel(gammas=(0.4, 0.1))
        cfg = vs.SolverConfig(C=1.0, epsilon=0.01, tolerance=1e-8)
        smo = vs.solve_epsilon_svr(x, y, kernel, cfg)
        ref = vs.solve_qp_reference(x, y, kernel, cfg)
        assert abs(smo.objective - ref.objective) <= 1e-6


class TestSparsity:
    def test_support_bounded_by_out_of_tube_points(self, small_scaled):
        hp = vs.HyperParams(gamma=0.1, C=1.0, epsilon=0.02)
        cfg = vs.SolverConfig(C=hp.C, epsilon=hp.epsilon)
        model = vs.train(small_scaled, hp, cfg)
        pred = vs.predict_scaled(model, small_scaled.x)
        resid = np.abs(pred - small_scaled.y)
        eligible = int(np.sum(resid >= hp.epsilon - cfg.tolerance))
        assert model.n_support <= eligible


class TestModelFile:
    def test_round_trip_preserves_predictions(self, small_model, tmp_path):
        path = tmp_path / "m.model"
        vs.save_model(small_model, path)
        back = vs.load_model(path)
        rng = np.random.default_rng(7)
        t = rng.uniform(0, 300, 100)
        w = rng.uniform(0.2, 0.6, 100)
        p1 = vs.predict_physical(small_model, t, w)
        p2 = vs.predict_physical(back, t, w)
        np.testing.assert_allclose(p2, p1, rtol=1e-12)
        assert back.kernel == small_model.kernel
        assert back.meta == small_model.meta

    def test_unknown_version_rejected(self, small_model, tmp_path):
        path = tmp_path / "m.model"
        vs.save_model(small_model, path)
        lines = path.read_text().splitlines()
        lines[0] = "velsurf-model v99"
        # keep the checksum valid so the version check is what trips
        import hashlib
        payload = "\n".join(lines[:-1]) + "\n"
        digest = hashlib.sha256(payload.encode()).hexdigest()
        path.write_text(payload + f"checksum=sha256:{digest}\n")
        with pytest.raises(vs.ModelVersionError):
            vs.load_model(path)

    def test_corrupted_coefficient_block_fails_checksum(self, small_model, tmp_path):
        path = tmp_path / "m.model"
        vs.save_model(small_model, path)
        text = path.read_text()
        start = text.index("[coefficients]")
        idx = text.index("5", start)
        corrupted = text[:idx] + "6" + text[idx + 1:]
        path.write_text(corrupted)
        with pytest.raises(vs.ModelChecksumError):
            vs.load_model(path)

    def test_truncated_file_rejected(self, small_model, tmp_path):
        path = tmp_path / "m.model"
        vs.save_model(small_model, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:len(lines) // 2]) + "\n")
        with pytest.raises(vs.ModelFormatError):
            vs.load_model(path)
