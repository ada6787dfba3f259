"""Kernel functions and Gram-matrix construction for the SVR solver.

Three kernel families are supported over 2-D (scaled time, scaled thickness)
feature vectors:

* isotropic Gaussian RBF       exp(-gamma * ||x - y||^2)
* anisotropic Gaussian RBF     exp(-sum_a gamma_a * (x_a - y_a)^2)
* polynomial                   (scale * <x, y> + offset) ** degree

The anisotropic variant stretches the RBF per axis, which matters when one
feature axis is sampled far more densely than the other.  The polynomial
kernel exists so the (worse) simpler-kernel comparison stays reproducible.

All evaluation funnels through one elementwise ``matrix`` implementation per
kernel, so a value computed inside a large batch is bit-identical to the
same pair evaluated alone.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import DataError


class Kernel(ABC):
    """A positive (semi-)definite similarity function on feature vectors."""

    name: str

    @abstractmethod
    def matrix(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Rectangular kernel matrix K[i, j] = k(xs[i], ys[j])."""

    @abstractmethod
    def params(self) -> dict[str, float]:
        """Flat parameter mapping used by model files and CLI echo."""

    def row(self, points: np.ndarray, x) -> np.ndarray:
        """Vector of k(p, x) for every row p of ``points``."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise DataError(f"expected a 1-D feature vector, got shape {x.shape}")
        return self.matrix(x[None, :], np.asarray(points, dtype=float))[0]

    def eval(self, x, y) -> float:
        """k(x, y) for two single feature vectors."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or y.ndim != 1:
            raise DataError("kernel arguments must be 1-D feature vectors")
        if x.shape != y.shape:
            raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
        return float(self.matrix(x[None, :], y[None, :])[0, 0])

    def __call__(self, x, y) -> float:
        return self.eval(x, y)

    @staticmethod
    def _check_pair(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 2 or ys.ndim != 2 or xs.shape[1] != ys.shape[1]:
            raise DataError(f"dimension mismatch: {xs.shape} vs {ys.shape}")
        return xs, ys


@dataclass(frozen=True)
class RbfKernel(Kernel):
    gamma: float
    name = "rbf"

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise DataError(f"rbf gamma must be positive, got {self.gamma}")

    def matrix(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        xs, ys = self._check_pair(xs, ys)
        d2 = np.zeros((xs.shape[0], ys.shape[0]))
        for a in range(xs.shape[1]):
            diff = xs[:, a][:, None] - ys[:, a][None, :]
            d2 += diff * diff
        return np.exp(-self.gamma * d2)

    def params(self) -> dict[str, float]:
        return {"gamma": self.gamma}


@dataclass(frozen=True)
class AnisotropicRbfKernel(Kernel):
    """Per-axis RBF, the concrete form of an elliptical Gaussian kernel."""

    gammas: tuple[float, ...]
    name = "arbf"

    def __post_init__(self) -> None:
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.gammas or any(not g > 0 for g in self.gammas):
            raise DataError(f"anisotropic gammas must all be positive, got {self.gammas}")

    def matrix(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        xs, ys = self._check_pair(xs, ys)
        if xs.shape[1] != len(self.gammas):
            raise DataError(
                f"points have dim {xs.shape[1]} but kernel has {len(self.gammas)} gammas"
            )
        d2 = np.zeros((xs.shape[0], ys.shape[0]))
        for a, gamma_a in enumerate(self.gammas):
            diff = xs[:, a][:, None] - ys[:, a][None, :]
            d2 += gamma_a * (diff * diff)
        return np.exp(-d2)

    def params(self) -> dict[str, float]:
        return {f"gamma_{i}": g for i, g in enumerate(self.gammas)}


@dataclass(frozen=True)
class PolynomialKernel(Kernel):
    degree: int
    scale: float = 1.0
    offset: float = 1.0
    name = "poly"

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise DataError(f"polynomial degree must be >= 1, got {self.degree}")

    def matrix(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        xs, ys = self._check_pair(xs, ys)
        dot = np.zeros((xs.shape[0], ys.shape[0]))
        for a in range(xs.shape[1]):
            dot += xs[:, a][:, None] * ys[:, a][None, :]
        return (self.scale * dot + self.offset) ** self.degree

    def params(self) -> dict[str, float]:
        return {"degree": float(self.degree), "scale": self.scale, "offset": self.offset}


def kernel_eval(kernel: Kernel, x, y) -> float:
    """Evaluate ``kernel`` on a single pair of equally sized feature vectors."""
    return kernel.eval(x, y)


def gram_matrix(kernel: Kernel, points: np.ndarray) -> np.ndarray:
    """Dense symmetric Gram matrix over training points.

    Each pair is evaluated once (i <= j) and mirrored, so the result is
    exactly symmetric; identical points give exactly 1.0 under RBF kernels.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DataError(f"expected a non-empty (n, d) point array, got shape {pts.shape}")
    n = pts.shape[0]
    G = np.empty((n, n))
    for i in range(n):
        G[i, i:] = kernel.row(pts[i:], pts[i])
    upper = np.triu_indices(n, k=1)
    G[(upper[1], upper[0])] = G[upper]
    return G


_KERNEL_NAMES = ("rbf", "arbf", "poly")


def kernel_to_fields(kernel: Kernel) -> dict[str, str]:
    """Serialize a kernel to flat text fields (model files, manifests)."""
    fields = {"type": kernel.name}
    for key, value in kernel.params().items():
        fields[key] = repr(value)
    return fields


def kernel_from_fields(fields: dict[str, str]) -> Kernel:
    """Inverse of :func:`kernel_to_fields`."""
    kind = fields.get("type")
    if kind == "rbf":
        return RbfKernel(gamma=float(fields["gamma"]))
    if kind == "arbf":
        gammas = []
        i = 0
        while f"gamma_{i}" in fields:
            gammas.append(float(fields[f"gamma_{i}"]))
            i += 1
        return AnisotropicRbfKernel(gammas=tuple(gammas))
    if kind == "poly":
        return PolynomialKernel(
            degree=int(float(fields["degree"])),
            scale=float(fields.get("scale", "1.0")),
            offset=float(fields.get("offset", "1.0")),
        )
    raise DataError(f"unknown kernel type {kind!r} (expected one of {_KERNEL_NAMES})")
