"""Train/predict layer binding preprocessing, kernels, and the solver.

A trained :class:`SvrModel` keeps only the support vectors (points with
nonzero dual coefficient), the bias, the kernel, and the axis scaler of its
training data, so a saved model file is self-sufficient for physical-unit
prediction.  Predictions use an elementwise multiply-and-reduce rather than
a matrix product so that a value computed inside a batch is bit-identical
to the same query evaluated alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .kernels import Kernel, AnisotropicRbfKernel, RbfKernel, kernel_from_fields, kernel_to_fields
from .preprocess import AxisScaler, ScaledDataset
from .sectionfile import format_float, parse, parse_kv, render
from .solver import DualSolution, SolverConfig, solve_epsilon_svr

_MODEL_MAGIC = "velsurf-model"
_MODEL_VERSION = 1

_PREDICT_CHUNK = 1024


@dataclass(frozen=True)
class HyperParams:
    """The free parameters explored during model selection.

    ``gamma`` is either one RBF radius or a per-axis (time, thickness)
    pair, which selects the anisotropic kernel.
    """

    gamma: float | tuple[float, float]
    C: float
    epsilon: float

    def make_kernel(self) -> Kernel:
        if isinstance(self.gamma, tuple):
            return AnisotropicRbfKernel(gammas=self.gamma)
        return RbfKernel(gamma=self.gamma)

    def label(self) -> str:
        if isinstance(self.gamma, tuple):
            gamma = "(" + ", ".join(f"{g:g}" for g in self.gamma) + ")"
        else:
            gamma = f"{self.gamma:g}"
        return f"gamma={gamma} C={self.C:g} epsilon={self.epsilon:g}"


@dataclass(frozen=True)
class TrainingMeta:
    n_train: int
    converged: bool
    objective: float
    iterations: int
    C: float
    epsilon: float
    tolerance: float
    max_iterations: int
    fingerprint: str


@dataclass(frozen=True)
class SvrModel:
    """Sparse trained regressor over scaled (time, thickness) features."""

    support_vectors: np.ndarray
    coefficients: np.ndarray
    bias: float
    kernel: Kernel
    scaler: AxisScaler
    meta: TrainingMeta

    def __post_init__(self) -> None:
        sv = np.asarray(self.support_vectors, dtype=float)
        coef = np.asarray(self.coefficients, dtype=float)
        if sv.ndim != 2 or sv.shape[0] != coef.shape[0]:
            raise DataError(
                f"support vectors {sv.shape} do not match coefficients {coef.shape}"
            )
        if np.any(coef == 0.0):
            raise DataError("zero dual coefficients must be stripped from a model")
        sv = np.array(sv)
        coef = np.array(coef)
        sv.flags.writeable = False
        coef.flags.writeable = False
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "coefficients", coef)

    @property
    def n_support(self) -> int:
        return int(self.coefficients.shape[0])


def train(
    dataset: ScaledDataset,
    hp: HyperParams,
    config: SolverConfig | None = None,
    kernel: Kernel | None = None,
) -> SvrModel:
    """Fit a model on scaled training points.

    ``hp`` supplies C/epsilon (overriding any values in ``config``, which
    contributes the solver knobs) and the kernel unless one is passed
    explicitly.  Non-convergence is a warning plus a flag in the metadata,
    never a silent bad model.
    """
    if dataset.n_points == 0:
        raise DataError("cannot train on an empty dataset")
    base = config if config is not None else SolverConfig(C=hp.C, epsilon=hp.epsilon)
    cfg = replace(base, C=hp.C, epsilon=hp.epsilon)
    k = kernel if kernel is not None else hp.make_kernel()
    solution = solve_epsilon_svr(dataset.x, dataset.y, k, cfg)
    if not solution.converged:
        warnings.warn(
            f"solver did not converge within {cfg.max_iterations} iterations "
            f"({hp.label()}); model may be inaccurate",
            stacklevel=2,
        )
    return model_from_solution(dataset, solution, k, cfg)


def model_from_solution(
    dataset: ScaledDataset, solution: DualSolution, kernel: Kernel, cfg: SolverConfig
) -> SvrModel:
    """Package a dual solution into a sparse model (zero coefficients dropped)."""
    idx = solution.support_indices
    return SvrModel(
        support_vectors=dataset.x[idx],
        coefficients=solution.beta[idx],
        bias=solution.bias,
        kernel=kernel,
        scaler=dataset.scaler,
        meta=TrainingMeta(
            n_train=dataset.n_points,
            converged=solution.converged,
            objective=solution.objective,
            iterations=solution.iterations,
            C=cfg.C,
            epsilon=cfg.epsilon,
            tolerance=cfg.tolerance,
            max_iterations=cfg.max_iterations,
            fingerprint=dataset.fingerprint(),
        ),
    )


def predict_scaled(model: SvrModel, x) -> float | np.ndarray:
    """Regression value(s) at scaled feature vector(s).

    Accepts one (2,) vector or an (n, 2) batch; scalar in, scalar out.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != 2:
        raise DataError(f"expected 2-D feature vectors, got shape {arr.shape}")
    if model.n_support == 0:
        out = np.full(pts.shape[0], model.bias)
        return float(out[0]) if single else out
    out = np.empty(pts.shape[0])
    coef = model.coefficients
    for start in range(0, pts.shape[0], _PREDICT_CHUNK):
        chunk = pts[start:start + _PREDICT_CHUNK]
        rows = model.kernel.matrix(chunk, model.support_vectors)
        out[start:start + _PREDICT_CHUNK] = (rows * coef).sum(axis=1) + model.bias
    return float(out[0]) if single else out


def predict_physical(model: SvrModel, time_ns, thickness_in) -> float | np.ndarray:
    """Velocity in m/s at physical (nanosecond, inch) query coordinates."""
    scalar = np.isscalar(time_ns) and np.isscalar(thickness_in)
    pts = model.scaler.scale_points(time_ns, thickness_in)
    scaled = predict_scaled(model, pts)
    out = model.scaler.unscale_velocity(scaled)
    return float(out[0]) if scalar else out


def save_model(model: SvrModel, path) -> None:
    """Write the versioned model file (sections + trailing checksum)."""
    meta = model.meta
    meta_lines = [
        f"n_train={meta.n_train}",
        f"converged={str(meta.converged).lower()}",
        f"objective={format_float(meta.objective)}",
        f"iterations={meta.iterations}",
        f"C={format_float(meta.C)}",
        f"epsilon={format_float(meta.epsilon)}",
        f"tolerance={format_float(meta.tolerance)}",
        f"max_iterations={meta.max_iterations}",
        f"fingerprint={meta.fingerprint}",
    ]
    kernel_lines = [f"{k}={v}" for k, v in kernel_to_fields(model.kernel).items()]
    scaler_lines = [f"{k}={v}" for k, v in model.scaler.to_fields().items()]
    coef_lines = [f"bias={format_float(model.bias)}"]
    coef_lines += [format_float(c) for c in model.coefficients]
    sv_lines = [
        " ".join(format_float(v) for v in row) for row in model.support_vectors
    ]
    text = render(_MODEL_MAGIC, _MODEL_VERSION, [
        ("meta", meta_lines),
        ("kernel", kernel_lines),
        ("scaler", scaler_lines),
        ("coefficients", coef_lines),
        ("support_vectors", sv_lines),
    ])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_model(path) -> SvrModel:
    """Read a model file; checksum, version, and shape problems all raise."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    sections = parse(text, _MODEL_MAGIC, _MODEL_VERSION)
    for required in ("meta", "kernel", "scaler", "coefficients", "support_vectors"):
        if required not in sections:
            raise DataError(f"model file missing [{required}] section")
    meta_kv = parse_kv(sections["meta"], "meta")
    kernel = kernel_from_fields(parse_kv(sections["kernel"], "kernel"))
    scaler = AxisScaler.from_fields(parse_kv(sections["scaler"], "scaler"))
    coef_lines = [ln for ln in sections["coefficients"] if ln.strip()]
    if not coef_lines or not coef_lines[0].startswith("bias="):
        raise DataError("model [coefficients] must start with a bias line")
    bias = float(coef_lines[0][len("bias="):])
    coefficients = np.array([float(ln) for ln in coef_lines[1:]])
    sv_rows = [ln.split() for ln in sections["support_vectors"] if ln.strip()]
    support_vectors = (
        np.array([[float(c) for c in row] for row in sv_rows])
        if sv_rows else np.empty((0, 2))
    )
    meta = TrainingMeta(
        n_train=int(meta_kv["n_train"]),
        converged=meta_kv["converged"] == "true",
        objective=float(meta_kv["objective"]),
        iterations=int(meta_kv["iterations"]),
        C=float(meta_kv["C"]),
        epsilon=float(meta_kv["epsilon"]),
        tolerance=float(meta_kv["tolerance"]),
        max_iterations=int(meta_kv["max_iterations"]),
        fingerprint=meta_kv["fingerprint"],
    )
    return SvrModel(
        support_vectors=support_vectors, coefficients=coefficients,
        bias=bias, kernel=kernel, scaler=scaler, meta=meta,
    )
