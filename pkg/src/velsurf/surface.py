"""Dense surface reconstruction, export, and outlier-experiment scoring.

Once a model is trained, a velocity value exists for any (time, thickness)
pair; this module evaluates it on dense grids, writes plot-ready CSV, and
scores whole experiments by how far their measurements sit from the
reconstructed surface.  An experiment whose relative RMS deviation exceeds
the threshold (default 0.10, about twice the quoted instrument accuracy)
is flagged as an outlier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data_model import ExperimentSeries, RawDataset
from .errors import DataError
from .preprocess import preprocess_dataset, smooth_triangular, detect_start_time
from .sectionfile import format_float
from .solver import SolverConfig
from .svr import HyperParams, SvrModel, predict_physical, train

DEFAULT_OUTLIER_THRESHOLD = 0.10
DEFAULT_CELL_BUDGET = 10_000_000
RELATIVE_FLOOR_MPS = 1.0


@dataclass(frozen=True)
class SurfaceGrid:
    """Velocities evaluated over a rectangular (time x thickness) grid."""

    times_ns: np.ndarray
    thicknesses_in: np.ndarray
    velocities_mps: np.ndarray
    model_fingerprint: str

    def __post_init__(self) -> None:
        expected = (self.times_ns.shape[0], self.thicknesses_in.shape[0])
        if self.velocities_mps.shape != expected:
            raise DataError(
                f"surface shape {self.velocities_mps.shape} does not match axes {expected}"
            )
        if not np.all(np.isfinite(self.velocities_mps)):
            raise DataError("surface contains non-finite velocities")

    def to_matrix_csv(self) -> str:
        """First row = time axis, first column = thickness axis."""
        lines = ["thickness_in\\time_ns," + ",".join(format_float(t) for t in self.times_ns)]
        for j, w in enumerate(self.thicknesses_in):
            lines.append(
                format_float(w) + "," +
                ",".join(format_float(v) for v in self.velocities_mps[:, j])
            )
        return "\n".join(lines) + "\n"

    def to_xyz_csv(self) -> str:
        """Long form: one ``time_ns,thickness_in,velocity_mps`` row per node."""
        lines = ["time_ns,thickness_in,velocity_mps"]
        for i, t in enumerate(self.times_ns):
            for j, w in enumerate(self.thicknesses_in):
                lines.append(
                    f"{format_float(t)},{format_float(w)},"
                    f"{format_float(self.velocities_mps[i, j])}"
                )
        return "\n".join(lines) + "\n"


def _axis(start: float, stop: float, step: float, what: str) -> np.ndarray:
    if not step > 0:
        raise DataError(f"{what} step must be positive, got {step}")
    if stop < start:
        raise DataError(f"{what} range is degenerate: [{start}, {stop}]")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def reconstruct_surface(
    model: SvrModel,
    time_range_ns: tuple[float, float, float],
    thickness_range_in: tuple[float, float, float],
    cell_budget: int = DEFAULT_CELL_BUDGET,
) -> SurfaceGrid:
    """Evaluate the model over a dense physical-unit grid.

    ``*_range`` tuples are (start, stop, step), stop inclusive up to
    rounding.  Grids larger than ``cell_budget`` nodes are rejected.
    """
    times = _axis(*time_range_ns, what="time")
    thicknesses = _axis(*thickness_range_in, what="thickness")
    n_cells = times.shape[0] * thicknesses.shape[0]
    if n_cells > cell_budget:
        raise DataError(
            f"surface grid of {n_cells} nodes exceeds the cell budget {cell_budget}"
        )
    tt, ww = np.meshgrid(times, thicknesses, indexing="ij")
    values = predict_physical(model, tt.ravel(), ww.ravel())
    return SurfaceGrid(
        times_ns=times,
        thicknesses_in=thicknesses,
        velocities_mps=np.asarray(values).reshape(tt.shape),
        model_fingerprint=model.meta.fingerprint,
    )


def outlier_score(model: SvrModel, series: ExperimentSeries,
                  floor_mps: float = RELATIVE_FLOOR_MPS) -> float:
    """RMS relative deviation of a preprocessed series from the surface.

    The series must have been smoothed and aligned with the same settings
    as the model's training data (its time base starts at the detonation).
    Each sample contributes |prediction - measurement| / max(|measurement|,
    floor); the floor keeps near-zero velocities from dominating.
    """
    if series.n_samples == 0:
        raise DataError("cannot score an empty series")
    if series.dt_ns != model.scaler.time_step_ns:
        raise DataError(
            f"series dt {series.dt_ns} ns does not match the model's "
            f"{model.scaler.time_step_ns} ns (alignment mismatch)"
        )
    pred = predict_physical(model, series.times_ns(), np.full(series.n_samples, series.thickness_in))
    measured = series.velocities
    rel = (np.asarray(pred) - measured) / np.maximum(np.abs(measured), floor_mps)
    return float(np.sqrt(np.mean(rel * rel)))


@dataclass(frozen=True)
class OutlierEntry:
    id: str
    score: float
    flagged: bool


@dataclass(frozen=True)
class OutlierReport:
    """Per-experiment deviation scores, sorted by descending score."""

    entries: tuple[OutlierEntry, ...]
    threshold: float

    def to_csv(self) -> str:
        lines = ["id,score,flagged"]
        for e in self.entries:
            lines.append(f"{e.id},{format_float(e.score)},{str(e.flagged).lower()}")
        return "\n".join(lines) + "\n"


def flag_outliers(scores: dict[str, float], threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> OutlierReport:
    """Flag experiments whose score strictly exceeds the threshold."""
    if not threshold > 0:
        raise DataError(f"threshold must be positive, got {threshold}")
    entries = tuple(
        OutlierEntry(id=name, score=float(score), flagged=bool(score > threshold))
        for name, score in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    )
    return OutlierReport(entries=entries, threshold=threshold)


def _aligned_series(series: ExperimentSeries, half_width: int, threshold_frac: float,
                    smoothing: bool) -> ExperimentSeries:
    if smoothing and half_width > 0:
        series = series.with_velocities(smooth_triangular(series.velocities, half_width))
    onset = detect_start_time(series, threshold_frac)
    return series.with_velocities(series.velocities[onset:], t0_ns=0.0)


def _clip_to_model_extent(series: ExperimentSeries, model: SvrModel) -> ExperimentSeries:
    # scoring past the trained time window would measure extrapolation, not fit
    if model.n_support == 0:
        return series
    limit = int(round(float(model.support_vectors[:, 0].max()))) + 1
    if series.n_samples <= limit:
        return series
    return series.with_velocities(series.velocities[:limit])


def score_experiments(
    model: SvrModel,
    dataset: RawDataset,
    half_width: int,
    threshold_frac: float,
    smoothing: bool = True,
    floor_mps: float = RELATIVE_FLOOR_MPS,
) -> dict[str, float]:
    """Score every experiment against one fixed model."""
    scores: dict[str, float] = {}
    for e in dataset:
        aligned = _aligned_series(e, half_width, threshold_frac, smoothing)
        scores[e.id] = outlier_score(model, _clip_to_model_extent(aligned, model), floor_mps)
    return scores


def score_experiments_loo(
    dataset: RawDataset,
    hp: HyperParams,
    config: SolverConfig | None = None,
    half_width: int = 5,
    threshold_frac: float = 0.05,
    smoothing: bool = True,
    floor_mps: float = RELATIVE_FLOOR_MPS,
) -> dict[str, float]:
    """Leave-one-out scoring: each experiment is scored against a model
    retrained without it, so a bad experiment cannot mask itself.

    Slower than :func:`score_experiments` (one training per experiment) but
    the rigorous mode for outlier hunting.
    """
    if len(dataset) < 3:
        raise DataError("leave-one-out scoring needs at least 3 experiments")
    scores: dict[str, float] = {}
    for target in dataset:
        rest = RawDataset(experiments=tuple(e for e in dataset if e.id != target.id))
        scaled, _ = preprocess_dataset(
            rest, half_width=half_width, threshold_frac=threshold_frac, smoothing=smoothing
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = train(scaled, hp, config)
        aligned = _aligned_series(target, half_width, threshold_frac, smoothing)
        scores[target.id] = outlier_score(model, _clip_to_model_extent(aligned, model), floor_mps)
    return scores
