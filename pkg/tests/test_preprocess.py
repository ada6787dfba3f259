import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import velsurf as vs
from velsurf.preprocess import save_scaled_dataset, load_scaled_dataset


def _series(thickness, velocities, exp_id=None, dt=2.0, t0=None):
    return vs.ExperimentSeries(
        id=exp_id or f"w{thickness}", thickness_in=thickness, dt_ns=dt,
        velocities=np.asarray(velocities, dtype=float), t0_ns=t0,
    )


class TestSmoothTriangular:
    def test_constant_preserved_exactly(self):
        out = vs.smooth_triangular([5.0, 5.0, 5.0, 5.0], 1)
        np.testing.assert_array_equal(out, [5.0, 5.0, 5.0, 5.0])

    def test_impulse_hand_convolution(self):
        # interior weights (1,2,1)/4; edges renormalize over in-bounds samples
        out = vs.smooth_triangular([0.0, 0.0, 1.0, 0.0, 0.0], 1)
        np.testing.assert_allclose(out, [0.0, 0.25, 0.5, 0.25, 0.0], atol=1e-15)

    def test_zero_half_width_is_identity(self):
        v = np.array([3.0, -1.0, 4.0, 1.0, -5.0])
        np.testing.assert_array_equal(vs.smooth_triangular(v, 0), v)

    def test_length_preserved(self):
        for n in (1, 2, 7, 100):
            assert vs.smooth_triangular(np.arange(n, dtype=float), 3).size == n

    def test_interior_mass_conserved(self):
        # with 2h zeros at each end every shrunken edge window sees only
        # zeros, so the normalized window redistributes mass without
        # creating any
        rng = np.random.default_rng(5)
        h = 4
        v = np.concatenate([np.zeros(2 * h), rng.normal(size=300), np.zeros(2 * h)])
        out = vs.smooth_triangular(v, h)
        assert np.sum(out) == pytest.approx(np.sum(v), rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        values=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=60),
        half_width=st.integers(0, 8),
    )
    def test_extrema_never_exceeded(self, values, half_width):
        v = np.asarray(values)
        out = vs.smooth_triangular(v, half_width)
        assert out.max() <= v.max()
        assert out.min() >= v.min()

    @settings(max_examples=30, deadline=None)
    @given(
        c=st.floats(-1e9, 1e9, allow_nan=False),
        n=st.integers(1, 40),
        half_width=st.integers(0, 6),
    )
    def test_constants_survive_any_width(self, c, n, half_width):
        out = vs.smooth_triangular(np.full(n, c), half_width)
        assert np.all(out == c)

    def test_negative_half_width_rejected(self):
        with pytest.raises(vs.DataError):
            vs.smooth_triangular([1.0], -1)


class TestDetectStartTime:
    def test_threshold_scan(self):
        s = _series(0.25, [0.0, 0.0, 10.0, 100.0, 100.0])
        assert vs.detect_start_time(s, 0.05) == 2  # 10 >= 5 = 0.05 * 100

    def test_t0_metadata_takes_precedence(self):
        s = _series(0.25, [0.0, 0.0, 10.0, 100.0, 100.0], t0=8.0)
        assert vs.detect_start_time(s, 0.05) == 4  # 8 ns / 2 ns per step

    def test_no_positive_peak(self):
        s = _series(0.25, [0.0, 0.0, 0.0])
        with pytest.raises(vs.NumericalError, match="no onset"):
            vs.detect_start_time(s, 0.05)

    def test_threshold_range_validated(self):
        s = _series(0.25, [0.0, 1.0])
        for bad in (0.0, 1.0, -0.2, 5.0):
            with pytest.raises(vs.DataError):
                vs.detect_start_time(s, bad)


class TestAlignAndTruncate:
    def test_cut_by_shortest(self):
        # post-onset lengths 8, 5, 7 -> everyone ends up with 5 samples
        mk = lambda w, pre, post: _series(
            w, [0.0] * pre + [100.0 + i for i in range(post)], exp_id=f"e{w}"
        )
        ds = vs.RawDataset(experiments=(mk(0.25, 2, 8), mk(0.3125, 4, 5), mk(0.375, 1, 7)))
        aligned = vs.align_and_truncate(ds, 0.05)
        assert aligned.common_length == 5
        assert all(e.n_samples == 5 for e in aligned.experiments)
        assert aligned.onset_indices == (2, 4, 1)

    def test_single_series_only_shifted(self):
        s = _series(0.25, [0.0, 0.0, 50.0, 60.0, 70.0])
        aligned = vs.align_and_truncate(vs.RawDataset(experiments=(s,)), 0.05)
        np.testing.assert_array_equal(aligned.experiments[0].velocities, [50.0, 60.0, 70.0])

    def test_mixed_dt_rejected(self):
        a = _series(0.25, [0.0, 1.0, 2.0], dt=2.0)
        b = _series(0.5, [0.0, 1.0, 2.0], dt=4.0, exp_id="other")
        with pytest.raises(vs.DataError, match="mixed"):
            vs.align_and_truncate(vs.RawDataset(experiments=(a, b)))

    def test_idempotent(self, small_raw):
        raw, _ = small_raw
        once = vs.align_and_truncate(raw, 0.05)
        twice = vs.align_and_truncate(vs.RawDataset(experiments=once.experiments), 0.05)
        assert twice.common_length == once.common_length
        for e1, e2 in zip(once.experiments, twice.experiments):
            np.testing.assert_array_equal(e1.velocities, e2.velocities)


class TestScaleToUnitGrid:
    def _aligned(self, thicknesses=(0.25, 0.3125, 0.375, 0.4375, 0.5), n=8, vmax=1800.0):
        exps = tuple(
            _series(w, np.linspace(0.0, vmax, n), exp_id=f"e{w}", t0=0.0)
            for w in thicknesses
        )
        return vs.align_and_truncate(vs.RawDataset(experiments=exps))

    def test_paper_thickness_grid_exact(self):
        scaled, scaler = vs.scale_to_unit_grid(self._aligned())
        np.testing.assert_array_equal(np.unique(scaled.x[:, 1]), [0.0, 1.0, 2.0, 3.0, 4.0])
        assert scaler.thickness_step_in == 0.0625

    def test_time_axis_unit_spaced_exactly(self):
        scaled, _ = vs.scale_to_unit_grid(self._aligned())
        per = scaled.x[scaled.point_experiment == 0, 0]
        assert np.all(np.diff(per) == 1.0)

    def test_velocity_range_maps_to_unit_interval(self):
        scaled, scaler = vs.scale_to_unit_grid(self._aligned(vmax=1800.0))
        assert scaled.y.min() == 0.0
        assert scaled.y.max() == 1.0
        assert scaler.unscale_velocity(1.0) == 1800.0
        assert scaler.unscale_velocity(0.0) == 0.0

    def test_median_gap_tolerates_missing_coupon(self):
        scaled, scaler = vs.scale_to_unit_grid(
            self._aligned(thicknesses=(0.25, 0.3125, 0.4375, 0.5))
        )
        assert scaler.thickness_step_in == 0.0625
        np.testing.assert_array_equal(np.unique(scaled.x[:, 1]), [0.0, 1.0, 3.0, 4.0])

    def test_needs_two_thicknesses(self):
        with pytest.raises(vs.DataError, match="2 distinct thicknesses"):
            vs.scale_to_unit_grid(self._aligned(thicknesses=(0.25,)))

    def test_point_count_and_provenance(self):
        scaled, _ = vs.scale_to_unit_grid(self._aligned(n=8))
        assert scaled.n_points == 5 * 8
        assert scaled.provenance(9) == ("e0.3125", 1)


class TestScalerRoundTrip:
    def test_thousand_random_points(self):
        scaler = vs.AxisScaler(
            time_offset_ns=0.0, time_step_ns=2.0,
            thickness_offset_in=0.25, thickness_step_in=0.0625,
            velocity_offset_mps=-3.0, velocity_step_mps=1807.2,
        )
        rng = np.random.default_rng(42)
        t = rng.uniform(0, 4000, 1000)
        w = rng.uniform(0.2, 0.6, 1000)
        v = rng.uniform(-10, 2000, 1000)
        for fwd, inv, raw in (
            (scaler.scale_time, scaler.unscale_time, t),
            (scaler.scale_thickness, scaler.unscale_thickness, w),
            (scaler.scale_velocity, scaler.unscale_velocity, v),
        ):
            back = inv(fwd(raw))
            np.testing.assert_allclose(back, raw, rtol=1e-12)

    def test_affine_examples(self):
        scaler = vs.AxisScaler(0.0, 2.0, 0.25, 0.0625, 0.0, 1800.0)
        assert scaler.unscale_thickness(2.0) == 0.375
        assert scaler.unscale_velocity(0.5) == 900.0

    def test_nonpositive_step_rejected(self):
        with pytest.raises(vs.DataError):
            vs.AxisScaler(0.0, 0.0, 0.25, 0.0625, 0.0, 1.0)


class TestDatasetFile:
    def test_save_load_round_trip(self, small_scaled, tmp_path):
        path = tmp_path / "d.ds"
        save_scaled_dataset(small_scaled, path)
        back = load_scaled_dataset(path)
        np.testing.assert_array_equal(back.x, small_scaled.x)
        np.testing.assert_array_equal(back.y, small_scaled.y)
        assert back.experiment_ids == small_scaled.experiment_ids
        assert back.fingerprint() == small_scaled.fingerprint()

    def test_checksum_detects_corruption(self, small_scaled, tmp_path):
        path = tmp_path / "d.ds"
        save_scaled_dataset(small_scaled, path)
        text = path.read_text()
        path.write_text(text.replace("[points]", "[points]\n0 0 0 0 0", 1))
        with pytest.raises(vs.ModelChecksumError):
            load_scaled_dataset(path)


class TestPipeline:
    def test_preprocess_dataset_shapes(self, small_raw):
        raw, _ = small_raw
        scaled, scaler = vs.preprocess_dataset(raw, half_width=3)
        n_exp = len(raw)
        assert scaled.n_points % n_exp == 0
        assert len(scaled.experiment_ids) == n_exp
        assert np.all(np.isfinite(scaled.x))

    def test_skip_smoothing(self, small_raw):
        raw, _ = small_raw
        a, _ = vs.preprocess_dataset(raw, half_width=3, smoothing=False)
        b, _ = vs.preprocess_dataset(raw, half_width=0)
        np.testing.assert_array_equal(a.y, b.y)
