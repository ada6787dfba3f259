"""Smoothing, time alignment, truncation, and unit-grid scaling.

This stage turns a raw dataset into SVR-ready training points.  The three
raw axes differ by many orders of magnitude (nanoseconds, inches, metres
per second) and the time axis is sampled far more densely than thickness,
so both feature axes are rescaled to put neighboring samples one grid unit
apart; velocity, being the regression target, is range-normalized to
[0, 1] instead.  All scale factors live in an invertible
:class:`AxisScaler` that trained models carry with them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from hashlib import sha256

import numpy as np

from .data_model import ExperimentSeries, RawDataset
from .errors import DataError, NumericalError
from .sectionfile import format_float, parse, parse_kv, render

log = logging.getLogger(__name__)

DEFAULT_HALF_WIDTH = 5
DEFAULT_ONSET_THRESHOLD = 0.05

_DATASET_MAGIC = "velsurf-dataset"
_DATASET_VERSION = 1


@dataclass(frozen=True)
class AxisScaler:
    """Invertible per-axis affine maps ``scaled = (raw - offset) / step``."""

    time_offset_ns: float
    time_step_ns: float
    thickness_offset_in: float
    thickness_step_in: float
    velocity_offset_mps: float
    velocity_step_mps: float

    def __post_init__(self) -> None:
        for name in ("time_step_ns", "thickness_step_in", "velocity_step_mps"):
            step = getattr(self, name)
            if not (math.isfinite(step) and step > 0):
                raise DataError(f"scaler {name} must be positive, got {step}")

    def scale_time(self, t_ns):
        return (np.asarray(t_ns, dtype=float) - self.time_offset_ns) / self.time_step_ns

    def unscale_time(self, t):
        return np.asarray(t, dtype=float) * self.time_step_ns + self.time_offset_ns

    def scale_thickness(self, w_in):
        return (np.asarray(w_in, dtype=float) - self.thickness_offset_in) / self.thickness_step_in

    def unscale_thickness(self, w):
        return np.asarray(w, dtype=float) * self.thickness_step_in + self.thickness_offset_in

    def scale_velocity(self, v_mps):
        return (np.asarray(v_mps, dtype=float) - self.velocity_offset_mps) / self.velocity_step_mps

    def unscale_velocity(self, v):
        return np.asarray(v, dtype=float) * self.velocity_step_mps + self.velocity_offset_mps

    def scale_points(self, t_ns, w_in) -> np.ndarray:
        """Stack scaled (time, thickness) coordinates into an (n, 2) array."""
        st = np.atleast_1d(self.scale_time(t_ns))
        sw = np.atleast_1d(self.scale_thickness(w_in))
        st, sw = np.broadcast_arrays(st, sw)
        return np.column_stack([st, sw]).astype(float)

    def to_fields(self) -> dict[str, str]:
        return {
            "time_offset_ns": format_float(self.time_offset_ns),
            "time_step_ns": format_float(self.time_step_ns),
            "thickness_offset_in": format_float(self.thickness_offset_in),
            "thickness_step_in": format_float(self.thickness_step_in),
            "velocity_offset_mps": format_float(self.velocity_offset_mps),
            "velocity_step_mps": format_float(self.velocity_step_mps),
        }

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "AxisScaler":
        return cls(**{key: float(fields[key]) for key in (
            "time_offset_ns", "time_step_ns", "thickness_offset_in",
            "thickness_step_in", "velocity_offset_mps", "velocity_step_mps",
        )})


@dataclass(frozen=True)
class AlignedDataset:
    """Experiments shifted to a common detonation origin and a common length."""

    experiments: tuple[ExperimentSeries, ...]
    common_length: int
    dt_ns: float
    onset_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.common_length <= 0:
            raise DataError("aligned dataset has no samples")
        for e in self.experiments:
            if e.n_samples != self.common_length:
                raise DataError(
                    f"experiment {e.id!r} has {e.n_samples} samples, expected {self.common_length}"
                )


@dataclass(frozen=True)
class ScaledDataset:
    """Training points in unit-grid coordinates plus their provenance.

    ``x`` is (n, 2) scaled (time, thickness); ``y`` is scaled velocity.
    ``point_experiment[i]`` indexes ``experiment_ids``; ``point_index[i]``
    is the sample's position within its series.
    """

    x: np.ndarray
    y: np.ndarray
    scaler: AxisScaler
    experiment_ids: tuple[str, ...]
    point_experiment: np.ndarray
    point_index: np.ndarray

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.x.shape[1] != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DataError(
                f"inconsistent scaled dataset shapes x{self.x.shape} y{self.y.shape}"
            )
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DataError("scaled dataset contains non-finite coordinates")
        for name in ("x", "y", "point_experiment", "point_index"):
            arr = np.array(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return int(self.y.shape[0])

    def provenance(self, i: int) -> tuple[str, int]:
        return self.experiment_ids[int(self.point_experiment[i])], int(self.point_index[i])

    def fingerprint(self) -> str:
        digest = sha256()
        digest.update(np.ascontiguousarray(self.x).tobytes())
        digest.update(np.ascontiguousarray(self.y).tobytes())
        return digest.hexdigest()

    def subset(self, mask: np.ndarray) -> "ScaledDataset":
        """Row-subset view used by cross-validation folds."""
        idx = np.flatnonzero(mask) if mask.dtype == bool else np.asarray(mask)
        return ScaledDataset(
            x=self.x[idx], y=self.y[idx], scaler=self.scaler,
            experiment_ids=self.experiment_ids,
            point_experiment=self.point_experiment[idx],
            point_index=self.point_index[idx],
        )


def smooth_triangular(values, half_width: int) -> np.ndarray:
    """Sliding triangular-window average with edge renormalization.

    Interior weights are proportional to ``h+1-|j|`` for offsets ``|j| <= h``;
    at the edges the window shrinks to the in-bounds samples and the weights
    are renormalized over them, so constants pass through unchanged.  The
    result is clamped to the running window extrema, which removes the last
    few ulps of convolution roundoff; output never escapes the input range.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DataError(f"expected a non-empty 1-D sequence, got shape {v.shape}")
    if half_width < 0:
        raise DataError(f"half_width must be >= 0, got {half_width}")
    if half_width == 0:
        return v.copy()
    h = int(half_width)
    weights = (h + 1.0) - np.abs(np.arange(-h, h + 1, dtype=float))
    # centered slice of the full convolution ("same" misbehaves when the
    # window is longer than the signal)
    num = np.convolve(v, weights, mode="full")[h:h + v.size]
    den = np.convolve(np.ones_like(v), weights, mode="full")[h:h + v.size]
    out = num / den
    # running in-bounds window extrema (the window shrinks at the edges)
    padded_lo = np.pad(v, h, constant_values=np.inf)
    padded_hi = np.pad(v, h, constant_values=-np.inf)
    lo = np.lib.stride_tricks.sliding_window_view(padded_lo, 2 * h + 1).min(axis=1)
    hi = np.lib.stride_tricks.sliding_window_view(padded_hi, 2 * h + 1).max(axis=1)
    return np.clip(out, lo, hi)


def detect_start_time(series: ExperimentSeries, threshold_frac: float = DEFAULT_ONSET_THRESHOLD) -> int:
    """Index of the detonation onset.

    Explicit ``t0_ns`` metadata wins; otherwise the onset is the first
    sample at or above ``threshold_frac`` of the series peak.
    """
    if series.t0_ns is not None:
        idx = int(round(series.t0_ns / series.dt_ns))
        if not 0 <= idx < series.n_samples:
            raise DataError(
                f"experiment {series.id!r}: t0_ns={series.t0_ns} falls outside the series"
            )
        return idx
    if not 0.0 < threshold_frac < 1.0:
        raise DataError(f"threshold_frac must be in (0, 1), got {threshold_frac}")
    peak = float(np.max(series.velocities))
    if not (math.isfinite(peak) and peak > 0.0):
        raise NumericalError(
            f"experiment {series.id!r}: no onset (series has no positive peak)"
        )
    hits = np.flatnonzero(series.velocities >= threshold_frac * peak)
    return int(hits[0])


def align_and_truncate(dataset: RawDataset, threshold_frac: float = DEFAULT_ONSET_THRESHOLD) -> AlignedDataset:
    """Shift every series so its onset lands at index 0, then cut all to the
    shortest post-onset length."""
    dts = {e.dt_ns for e in dataset}
    if len(dts) > 1:
        raise DataError(f"mixed time steps {sorted(dts)}; all series must share dt")
    onsets = [detect_start_time(e, threshold_frac) for e in dataset]
    common = min(e.n_samples - onset for e, onset in zip(dataset, onsets))
    if common <= 0:
        raise NumericalError("alignment left no overlapping samples")
    aligned = tuple(
        e.with_velocities(e.velocities[onset:onset + common], t0_ns=0.0)
        for e, onset in zip(dataset, onsets)
    )
    for e, onset in zip(dataset, onsets):
        log.info("aligned %s: onset index %d (%.6g ns)", e.id, onset, onset * e.dt_ns)
    return AlignedDataset(
        experiments=aligned, common_length=common,
        dt_ns=next(iter(dts)), onset_indices=tuple(onsets),
    )


def scale_to_unit_grid(dataset: AlignedDataset) -> tuple[ScaledDataset, AxisScaler]:
    """Map aligned samples onto the unit training grid.

    One time step maps to 1; the median gap between consecutive sorted
    thicknesses maps to 1 (median, so one missing coupon in an otherwise
    uniform grid does not skew the step); the observed velocity range maps
    onto [0, 1].  Needs at least two distinct thicknesses.
    """
    thicknesses = sorted(e.thickness_in for e in dataset.experiments)
    if len(thicknesses) < 2:
        raise DataError("unit-grid scaling needs at least 2 distinct thicknesses")
    gaps = np.diff(thicknesses)
    w_step = float(np.median(gaps))
    if not w_step > 0:
        raise DataError("thicknesses are not distinct")
    v_all = np.concatenate([e.velocities for e in dataset.experiments])
    v_min = float(v_all.min())
    v_max = float(v_all.max())
    v_step = v_max - v_min if v_max > v_min else 1.0
    scaler = AxisScaler(
        time_offset_ns=0.0,
        time_step_ns=dataset.dt_ns,
        thickness_offset_in=thicknesses[0],
        thickness_step_in=w_step,
        velocity_offset_mps=v_min,
        velocity_step_mps=v_step,
    )
    n_exp = len(dataset.experiments)
    m = dataset.common_length
    x = np.empty((n_exp * m, 2))
    y = np.empty(n_exp * m)
    point_experiment = np.empty(n_exp * m, dtype=np.int64)
    point_index = np.empty(n_exp * m, dtype=np.int64)
    times = np.arange(m, dtype=float) * dataset.dt_ns
    for k, e in enumerate(dataset.experiments):
        rows = slice(k * m, (k + 1) * m)
        x[rows, 0] = scaler.scale_time(times)
        x[rows, 1] = scaler.scale_thickness(e.thickness_in)
        y[rows] = scaler.scale_velocity(e.velocities)
        point_experiment[rows] = k
        point_index[rows] = np.arange(m)
    scaled = ScaledDataset(
        x=x, y=y, scaler=scaler,
        experiment_ids=tuple(e.id for e in dataset.experiments),
        point_experiment=point_experiment, point_index=point_index,
    )
    return scaled, scaler


def preprocess_dataset(
    dataset: RawDataset,
    half_width: int = DEFAULT_HALF_WIDTH,
    threshold_frac: float = DEFAULT_ONSET_THRESHOLD,
    smoothing: bool = True,
) -> tuple[ScaledDataset, AxisScaler]:
    """Full pipeline: smooth, align, truncate, scale."""
    if smoothing and half_width > 0:
        dataset = RawDataset(experiments=tuple(
            e.with_velocities(smooth_triangular(e.velocities, half_width)) for e in dataset
        ))
    aligned = align_and_truncate(dataset, threshold_frac)
    return scale_to_unit_grid(aligned)


def save_scaled_dataset(scaled: ScaledDataset, path) -> None:
    """Write the on-disk scaled-dataset format (see README for the grammar)."""
    rows = [
        f"{format_float(scaled.x[i, 0])} {format_float(scaled.x[i, 1])} "
        f"{format_float(scaled.y[i])} {scaled.point_experiment[i]} {scaled.point_index[i]}"
        for i in range(scaled.n_points)
    ]
    sections = [
        ("scaler", [f"{k}={v}" for k, v in scaled.scaler.to_fields().items()]),
        ("experiments", [f"{i}={name}" for i, name in enumerate(scaled.experiment_ids)]),
        ("points", rows),
    ]
    text = render(_DATASET_MAGIC, _DATASET_VERSION, sections)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_scaled_dataset(path) -> ScaledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    sections = parse(text, _DATASET_MAGIC, _DATASET_VERSION)
    for required in ("scaler", "experiments", "points"):
        if required not in sections:
            raise DataError(f"dataset file missing [{required}] section")
    scaler = AxisScaler.from_fields(parse_kv(sections["scaler"], "scaler"))
    ids_map = parse_kv(sections["experiments"], "experiments")
    experiment_ids = tuple(ids_map[str(i)] for i in range(len(ids_map)))
    rows = [line.split() for line in sections["points"] if line.strip()]
    if not rows:
        raise DataError("dataset file has no points")
    data = np.array([[float(c) for c in row] for row in rows])
    return ScaledDataset(
        x=data[:, 0:2], y=data[:, 2], scaler=scaler, experiment_ids=experiment_ids,
        point_experiment=data[:, 3].astype(np.int64),
        point_index=data[:, 4].astype(np.int64),
    )
