"""Domain types and file ingestion for per-experiment velocimetry records.

An experiment is one shocked coupon of a given thickness whose free-surface
velocity was recorded on a fixed time step.  Experiments arrive as UTF-8 CSV
files: ``#``-prefixed ``key=value`` metadata lines (``thickness_in`` and
``dt_ns`` required, ``id`` and ``t0_ns`` optional) followed by
``time_ns,velocity_mps`` data rows.  Units are fixed at this boundary
(nanoseconds, inches, metres per second); everything downstream works on
scaled, unit-free coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

SEVERITY_ERROR = "error"
SEVERITY_WARNING = "warning"

_REQUIRED_KEYS = ("thickness_in", "dt_ns")


@dataclass(frozen=True)
class DataPoint:
    """One velocimetry observation: time (s), coupon thickness (in), velocity (m/s)."""

    time_s: float
    thickness_in: float
    velocity_mps: float

    def __post_init__(self) -> None:
        if not self.time_s >= 0.0:
            raise DataError(f"time must be >= 0, got {self.time_s}")
        if not self.thickness_in > 0.0:
            raise DataError(f"thickness must be positive, got {self.thickness_in}")
        if not math.isfinite(self.velocity_mps):
            raise DataError(f"velocity must be finite, got {self.velocity_mps}")

    @classmethod
    def from_raw(cls, time_ns: float, thickness_in: float, velocity_mps: float) -> "DataPoint":
        """Build from boundary units (time in nanoseconds)."""
        return cls(time_s=time_ns * 1e-9, thickness_in=thickness_in, velocity_mps=velocity_mps)


@dataclass(frozen=True)
class ExperimentSeries:
    """One experiment's velocity time series plus its coupon metadata.

    ``t0_ns`` is the detonation time relative to the first sample; it stays
    ``None`` until either the file provides it or alignment fixes it.
    Velocities may contain non-finite entries at this stage -- construction
    enforces only structural invariants, content checks live in
    :func:`validate_dataset` so that broken recordings can be loaded,
    reported on, and rejected with a useful message.
    """

    id: str
    thickness_in: float
    dt_ns: float
    velocities: np.ndarray
    t0_ns: float | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("experiment id must be non-empty")
        if not (math.isfinite(self.dt_ns) and self.dt_ns > 0):
            raise DataError(f"experiment {self.id!r}: dt must be positive, got {self.dt_ns}")
        if not (math.isfinite(self.thickness_in) and self.thickness_in > 0):
            raise DataError(
                f"experiment {self.id!r}: thickness must be positive, got {self.thickness_in}"
            )
        v = np.asarray(self.velocities, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DataError(f"experiment {self.id!r}: velocities must be a non-empty 1-D sequence")
        v = np.array(v, copy=True)
        v.flags.writeable = False
        object.__setattr__(self, "velocities", v)

    @property
    def n_samples(self) -> int:
        return int(self.velocities.size)

    def times_ns(self) -> np.ndarray:
        """Implied sample times, first sample at 0."""
        return np.arange(self.n_samples, dtype=float) * self.dt_ns

    def data_points(self) -> Iterator[DataPoint]:
        """Iterate the series as (time, thickness, velocity) triples."""
        for i, v in enumerate(self.velocities):
            yield DataPoint.from_raw(i * self.dt_ns, self.thickness_in, float(v))

    def with_velocities(self, velocities: np.ndarray, t0_ns: float | None = None) -> "ExperimentSeries":
        """Copy of this series with replaced samples (used by preprocessing)."""
        return ExperimentSeries(
            id=self.id,
            thickness_in=self.thickness_in,
            dt_ns=self.dt_ns,
            velocities=velocities,
            t0_ns=self.t0_ns if t0_ns is None else t0_ns,
        )


@dataclass(frozen=True)
class RawDataset:
    """An ordered collection of experiments with pairwise-distinct thicknesses."""

    experiments: tuple[ExperimentSeries, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "experiments", tuple(self.experiments))
        if not self.experiments:
            raise DataError("no experiments")
        ids: set[str] = set()
        thicknesses: set[float] = set()
        for e in self.experiments:
            if e.id in ids:
                raise DataError(f"duplicate experiment id {e.id!r}")
            if e.thickness_in in thicknesses:
                raise DataError(
                    f"duplicate thickness {e.thickness_in} (experiment {e.id!r})"
                )
            ids.add(e.id)
            thicknesses.add(e.thickness_in)

    def __len__(self) -> int:
        return len(self.experiments)

    def __iter__(self) -> Iterator[ExperimentSeries]:
        return iter(self.experiments)

    @property
    def thicknesses(self) -> tuple[float, ...]:
        return tuple(e.thickness_in for e in self.experiments)

    def by_id(self, experiment_id: str) -> ExperimentSeries:
        for e in self.experiments:
            if e.id == experiment_id:
                return e
        raise KeyError(experiment_id)


@dataclass(frozen=True)
class ValidationIssue:
    severity: str
    experiment_id: str | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of structural dataset validation; empty means the dataset passed."""

    issues: tuple[ValidationIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def errors(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == SEVERITY_ERROR)

    @property
    def warnings(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == SEVERITY_WARNING)

    @property
    def has_errors(self) -> bool:
        return bool(self.errors)

    def format(self) -> str:
        if self.ok:
            return "dataset OK: no issues\n"
        lines = []
        for i in self.issues:
            where = f" [{i.experiment_id}]" if i.experiment_id else ""
            lines.append(f"{i.severity}{where}: {i.message}")
        return "\n".join(lines) + "\n"


def _parse_number(token: str, line_no: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataError(f"line {line_no}: non-numeric {what}: {token!r}") from None


def parse_experiment_file(
    text: str | Iterable[str], *, source: str = "<string>", default_id: str | None = None
) -> ExperimentSeries:
    """Parse one experiment CSV into an :class:`ExperimentSeries`.

    ``source`` is used in error messages only.  The ``id`` metadata key wins
    over ``default_id``; with neither, the id falls back to ``source``.
    Sample times must advance by ``dt_ns`` from the first row (relative
    tolerance 1e-9); the absolute time origin of the file is not retained.
    """
    lines = text.splitlines() if isinstance(text, str) else [ln.rstrip("\n") for ln in text]
    meta: dict[str, str] = {}
    velocities: list[float] = []
    times: list[float] = []
    row_lines: list[int] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if not body:
                continue
            if "=" not in body:
                raise DataError(f"{source}: line {line_no}: malformed header line {raw!r}")
            key, _, value = body.partition("=")
            meta[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if len(cells) != 2:
            raise DataError(
                f"{source}: line {line_no}: expected 'time_ns,velocity_mps', got {raw!r}"
            )
        try:
            times.append(_parse_number(cells[0].strip(), line_no, "time"))
            velocities.append(_parse_number(cells[1].strip(), line_no, "velocity"))
        except DataError as exc:
            raise DataError(f"{source}: {exc}") from None
        row_lines.append(line_no)

    for key in _REQUIRED_KEYS:
        if key not in meta:
            raise DataError(f"{source}: missing required metadata key {key!r}")
    if not velocities:
        raise DataError(f"{source}: empty body (no data rows)")

    def meta_float(key: str) -> float:
        try:
            return float(meta[key])
        except ValueError:
            raise DataError(f"{source}: metadata {key!r} is not numeric: {meta[key]!r}") from None

    dt_ns = meta_float("dt_ns")
    if not dt_ns > 0:
        raise DataError(f"{source}: dt must be positive, got {meta['dt_ns']}")
    thickness_in = meta_float("thickness_in")
    if not thickness_in > 0:
        raise DataError(f"{source}: thickness must be positive, got {meta['thickness_in']}")
    t0_ns = meta_float("t0_ns") if "t0_ns" in meta else None

    t_first = times[0]
    for k, (t, line_no) in enumerate(zip(times, row_lines)):
        expected = t_first + k * dt_ns
        if abs(t - expected) > 1e-9 * max(abs(expected), dt_ns):
            raise DataError(
                f"{source}: line {line_no}: time {t} inconsistent with dt_ns={dt_ns} "
                f"(expected {expected})"
            )

    exp_id = meta.get("id") or default_id or source
    return ExperimentSeries(
        id=exp_id,
        thickness_in=thickness_in,
        dt_ns=dt_ns,
        velocities=np.asarray(velocities, dtype=float),
        t0_ns=t0_ns,
    )


def serialize_experiment(series: ExperimentSeries) -> str:
    """Render a series back to the experiment CSV format.

    ``parse_experiment_file(serialize_experiment(s))`` reproduces ``s``
    exactly (floats are written with 17 significant digits).
    """
    lines = [f"# id={series.id}", f"# thickness_in={series.thickness_in!r}",
             f"# dt_ns={series.dt_ns!r}"]
    if series.t0_ns is not None:
        lines.append(f"# t0_ns={series.t0_ns!r}")
    for i, v in enumerate(series.velocities):
        lines.append(f"{(i * series.dt_ns)!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def load_dataset(paths: Sequence[str | Path]) -> RawDataset:
    """Load one experiment per file; order follows the input order.

    Ids default to file stems (metadata ``id`` wins); duplicate ids or
    thicknesses are hard errors so reports stay unambiguous.
    """
    if not paths:
        raise DataError("no experiments (empty path list)")
    experiments = []
    for p in paths:
        path = Path(p)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        experiments.append(parse_experiment_file(text, source=str(path), default_id=path.stem))
    return RawDataset(experiments=tuple(experiments))


def validate_dataset(
    dataset: RawDataset,
    *,
    min_length: int = 100,
    thickness_range: tuple[float, float] = (0.01, 10.0),
) -> ValidationReport:
    """Run content checks on a loaded dataset; never raises, never mutates.

    Non-finite samples and broken time axes are errors; suspiciously short
    series or out-of-range thicknesses are warnings.
    """
    issues: list[ValidationIssue] = []
    lo, hi = thickness_range
    for e in dataset:
        bad = np.flatnonzero(~np.isfinite(e.velocities))
        for idx in bad:
            issues.append(ValidationIssue(
                SEVERITY_ERROR, e.id, f"non-finite velocity at index {int(idx)}"
            ))
        if not math.isfinite(e.dt_ns) or e.dt_ns <= 0:
            issues.append(ValidationIssue(
                SEVERITY_ERROR, e.id, f"implied time axis is not monotone (dt_ns={e.dt_ns})"
            ))
        if e.n_samples < min_length:
            issues.append(ValidationIssue(
                SEVERITY_WARNING, e.id,
                f"series has {e.n_samples} samples, fewer than the minimum {min_length}",
            ))
        if not (lo <= e.thickness_in <= hi):
            issues.append(ValidationIssue(
                SEVERITY_WARNING, e.id,
                f"thickness {e.thickness_in} in outside physical range [{lo}, {hi}]",
            ))
    return ValidationReport(issues=tuple(issues))
