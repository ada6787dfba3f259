"""Solvers for the epsilon-SVR dual quadratic program.

The training problem is solved in its dual form over one net coefficient
beta_i = alpha_i - alpha_i* per training point:

    maximize   -1/2 sum_ij beta_i beta_j K_ij - eps * sum_i |beta_i|
               + sum_i y_i beta_i
    subject to sum_i beta_i = 0,   -C <= beta_i <= C

:func:`solve_epsilon_svr` is the production path: sequential minimal
optimization that repeatedly picks the maximal-KKT-violating pair (ties to
the lowest index), solves the two-variable subproblem exactly (piecewise
line search across the |beta| sign breakpoints), and stops once the maximal
violation falls within tolerance.  The hot loop is JIT-compiled and keeps a
least-recently-used cache of kernel rows sized by ``cache_budget``.

:func:`solve_qp_reference` reaches the same optimum through a completely
different route -- spectral projected-gradient ascent on the smooth
(alpha, alpha*) box formulation with an exact equality-constraint
projection.  It is dense and deliberately simple; use it for verification
only (``n <= 200`` enforced).

Conventions: with G_i = y_i - (K beta)_i, an optimal solution admits a bias
b such that G_i - b = eps for free beta_i > 0, G_i - b = -eps for free
beta_i < 0, and |G_i - b| <= eps wherever beta_i = 0.  The regularization
weight of the equivalent penalized-risk formulation corresponds to 1/C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataError, NumericalError
from .kernels import AnisotropicRbfKernel, Kernel, PolynomialKernel, RbfKernel, gram_matrix

_KIND_RBF = 0
_KIND_ARBF = 1
_KIND_POLY = 2


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the dual solver.

    ``tolerance`` is the KKT-violation stopping threshold in scaled target
    units.  ``cache_budget`` caps kernel-row cache memory in bytes.
    """

    C: float
    epsilon: float
    tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    cache_budget: int = 512 * 2**20

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise DataError(f"C must be positive, got {self.C}")
        if not self.epsilon >= 0:
            raise DataError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.tolerance > 0:
            raise DataError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise DataError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class DualSolution:
    """Result of a dual solve.

    ``beta`` has one net coefficient per training point (support vectors are
    the nonzero entries), ``bias`` is the constant offset of the regression
    function, ``objective`` the dual objective value at ``beta``.
    ``objective_trace`` records the objective after every pair update.
    """

    beta: np.ndarray
    bias: float
    objective: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray

    @property
    def n_support(self) -> int:
        return int(np.count_nonzero(self.beta))

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


def _kernel_code(kernel: Kernel, dim: int) -> tuple[int, np.ndarray]:
    if isinstance(kernel, RbfKernel):
        return _KIND_RBF, np.array([kernel.gamma], dtype=float)
    if isinstance(kernel, AnisotropicRbfKernel):
        if len(kernel.gammas) != dim:
            raise DataError(
                f"kernel has {len(kernel.gammas)} per-axis gammas but points have dim {dim}"
            )
        return _KIND_ARBF, np.asarray(kernel.gammas, dtype=float)
    if isinstance(kernel, PolynomialKernel):
        return _KIND_POLY, np.array([float(kernel.degree), kernel.scale, kernel.offset])
    raise DataError(f"unsupported kernel type {type(kernel).__name__}")


@njit(cache=True)
def _row_into(X, i, kind, params, out):
    n, d = X.shape
    if kind == 0:
        gamma = params[0]
        for k in range(n):
            d2 = 0.0
            for a in range(d):
                diff = X[k, a] - X[i, a]
                d2 += diff * diff
            out[k] = np.exp(-gamma * d2)
        out[i] = 1.0
    elif kind == 1:
        for k in range(n):
            d2 = 0.0
            for a in range(d):
                diff = X[k, a] - X[i, a]
                d2 += params[a] * diff * diff
            out[k] = np.exp(-d2)
        out[i] = 1.0
    else:
        degree = params[0]
        scale = params[1]
        offset = params[2]
        for k in range(n):
            dot = 0.0
            for a in range(d):
                dot += X[k, a] * X[i, a]
            out[k] = (scale * dot + offset) ** degree
    return out


@njit(cache=True)
def _fetch_row(X, i, kind, params, cache, slot_of, point_of, stamp, state):
    # state = [n_used, tick]; returns the slot holding row i
    slot = slot_of[i]
    if slot < 0:
        if state[0] < cache.shape[0]:
            slot = state[0]
            state[0] += 1
        else:
            slot = 0
            oldest = stamp[0]
            for s in range(1, cache.shape[0]):
                if stamp[s] < oldest:
                    oldest = stamp[s]
                    slot = s
            evicted = point_of[slot]
            if evicted >= 0:
                slot_of[evicted] = -1
        _row_into(X, i, kind, params, cache[slot])
        slot_of[i] = slot
        point_of[slot] = i
    state[1] += 1
    stamp[slot] = state[1]
    return slot


@njit(cache=True)
def _pair_step(bi, bj, Gi, Gj, eta, eps, C):
    """Exact maximizer t of the pair subproblem along (beta_i + t, beta_j - t).

    The 1-D objective is piecewise concave with kinks where either
    coefficient crosses zero; walk the segments in order and stop at the
    first interior stationary point or at the box edge.
    """
    tmax = C - bi
    other = bj + C
    if other < tmax:
        tmax = other
    # sign-crossing breakpoints inside (0, tmax), in ascending order
    b1 = -bi if (bi < 0.0 and -bi < tmax) else tmax
    b2 = bj if (bj > 0.0 and bj < tmax) else tmax
    if b1 > b2:
        b1, b2 = b2, b1
    t = 0.0
    a = 0.0
    for seg in range(3):
        if seg == 0:
            end = b1
        elif seg == 1:
            end = b2
        else:
            end = tmax
        if end <= a:
            continue
        si = 1.0 if bi + a >= 0.0 else -1.0
        sj = -1.0 if bj - a <= 0.0 else 1.0
        num = (Gi - Gj) - eps * (si - sj)
        if num - eta * a <= 0.0:
            break
        if eta > 0.0:
            root = num / eta
            if root < end:
                t = root
                break
        t = end
        a = end
        if end >= tmax:
            break
    return t


@njit(cache=True)
def _smo_core(X, y, kind, params, C, eps, tol, max_iter, max_rows):
    """Pair-update loop.  Returns (beta, iterations, converged, trace, G).

    ``trace[k]`` is the dual objective after k pair updates (incrementally
    accumulated; the caller may recompute the final value from G).  The
    stopping test uses a threshold a hair inside ``tol`` so that an
    externally recomputed KKT violation still certifies convergence.
    """
    n = y.shape[0]
    beta = np.zeros(n)
    G = y.copy()
    cache = np.empty((max_rows, n))
    slot_of = np.full(n, -1, np.int64)
    point_of = np.full(max_rows, -1, np.int64)
    stamp = np.zeros(max_rows, np.int64)
    state = np.zeros(2, np.int64)
    trace = np.empty(1024)
    trace[0] = 0.0
    n_trace = 1
    obj = 0.0
    stop_tol = tol * (1.0 - 1e-9)
    it = 0
    converged = False
    # initial selection pass
    best_up = -1.0e308
    best_dn = 1.0e308
    i = -1
    j = -1
    for k in range(n):
        g = y[k]
        f_up = g - eps
        f_dn = g + eps
        if f_up > best_up:
            best_up = f_up
            i = k
        if f_dn < best_dn:
            best_dn = f_dn
            j = k
    while it < max_iter:
        if i < 0 or j < 0 or i == j or best_up - best_dn <= stop_tol:
            converged = True
            break
        si = _fetch_row(X, i, kind, params, cache, slot_of, point_of, stamp, state)
        sj = _fetch_row(X, j, kind, params, cache, slot_of, point_of, stamp, state)
        Ki = cache[si]
        Kj = cache[sj]
        eta = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if eta < 0.0:
            eta = 0.0
        bi = beta[i]
        bj = beta[j]
        t = _pair_step(bi, bj, G[i], G[j], eta, eps, C)
        if t <= 0.0:
            # selection said "violating" but no ascent step exists: numerical
            # stalemate, report non-convergence rather than looping forever
            break
        nbi = bi + t
        if nbi > C:
            nbi = C
        nbj = bj - t
        if nbj < -C:
            nbj = -C
        delta = (G[i] - G[j]) * t - 0.5 * eta * t * t \
            - eps * (abs(nbi) - abs(bi) + abs(nbj) - abs(bj))
        obj += delta
        beta[i] = nbi
        beta[j] = nbj
        # fused: apply the gradient update and select the next working pair
        best_up = -1.0e308
        best_dn = 1.0e308
        i_next = -1
        j_next = -1
        for k in range(n):
            g = G[k] - t * (Ki[k] - Kj[k])
            G[k] = g
            b = beta[k]
            if b < C:
                f = g - eps if b >= 0.0 else g + eps
                if f > best_up:
                    best_up = f
                    i_next = k
            if b > -C:
                f = g - eps if b > 0.0 else g + eps
                if f < best_dn:
                    best_dn = f
                    j_next = k
        i = i_next
        j = j_next
        it += 1
        if n_trace == trace.shape[0]:
            grown = np.empty(trace.shape[0] * 2)
            grown[:n_trace] = trace
            trace = grown
        trace[n_trace] = obj
        n_trace += 1
    return beta, it, converged, trace[:n_trace], G


def _bias_from_gradient(beta: np.ndarray, G: np.ndarray, C: float, eps: float) -> float:
    """Offset implied by the optimality conditions.

    Free points pin the bias exactly; averaging them is numerically safer
    than trusting any single one.  Without free points the bias can sit
    anywhere in the feasible interval, so take its midpoint.
    """
    free = (np.abs(beta) > 0.0) & (np.abs(beta) < C)
    if np.any(free):
        return float(np.mean(G[free] - eps * np.sign(beta[free])))
    f_up = np.where(beta >= 0.0, G - eps, G + eps)
    f_dn = np.where(beta > 0.0, G - eps, G + eps)
    hi = f_up[beta < C].max() if np.any(beta < C) else -math.inf
    lo = f_dn[beta > -C].min() if np.any(beta > -C) else math.inf
    if math.isinf(hi) and math.isinf(lo):
        return 0.0
    if math.isinf(hi):
        return float(lo)
    if math.isinf(lo):
        return float(hi)
    return float(0.5 * (hi + lo))


def _check_instance(points, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(points, dtype=float)
    t = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"expected a non-empty (n, d) point array, got shape {X.shape}")
    if t.shape != (X.shape[0],):
        raise DataError(f"targets shape {t.shape} does not match {X.shape[0]} points")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature value in training points")
    if not np.all(np.isfinite(t)):
        raise DataError("non-finite training target")
    return X, t


def dual_objective(beta: np.ndarray, kbeta: np.ndarray, y: np.ndarray, eps: float) -> float:
    """Dual objective given the already-applied operator value K @ beta."""
    return float(-0.5 * np.dot(beta, kbeta) + np.dot(y, beta) - eps * np.abs(beta).sum())


def solve_epsilon_svr(points, y, kernel: Kernel, config: SolverConfig) -> DualSolution:
    """Train epsilon-SVR by SMO; deterministic for identical inputs."""
    X, t = _check_instance(points, y)
    n = X.shape[0]
    kind, params = _kernel_code(kernel, X.shape[1])
    max_rows = max(2, min(n, int(config.cache_budget) // max(1, n * 8)))
    beta, iterations, converged, trace, G = _smo_core(
        X, t, kind, params, float(config.C), float(config.epsilon),
        float(config.tolerance), int(config.max_iterations), max_rows,
    )
    # G = y - K beta was maintained incrementally, so K beta falls out free
    objective = dual_objective(beta, t - G, t, config.epsilon)
    bias = _bias_from_gradient(beta, G, config.C, config.epsilon)
    return DualSolution(
        beta=beta, bias=bias, objective=objective, iterations=int(iterations),
        converged=bool(converged), objective_trace=trace,
    )


def kkt_violation(solution: DualSolution, points, y, kernel: Kernel, config: SolverConfig) -> float:
    """Maximal first-order optimality violation of ``solution``, recomputed
    from scratch (fresh kernel evaluations, no solver state)."""
    X, t = _check_instance(points, y)
    beta = solution.beta
    G = t - gram_matrix(kernel, X) @ beta
    eps = config.epsilon
    C = config.C
    f_up = np.where(beta >= 0.0, G - eps, G + eps)
    f_dn = np.where(beta > 0.0, G - eps, G + eps)
    up_ok = beta < C
    dn_ok = beta > -C
    if not np.any(up_ok) or not np.any(dn_ok):
        return 0.0
    return max(0.0, float(f_up[up_ok].max() - f_dn[dn_ok].min()))


# ---------------------------------------------------------------------------
# Reference solver: spectral projected-gradient ascent on the (alpha, alpha*)
# box formulation.  Verification only.
# ---------------------------------------------------------------------------

_REFERENCE_MAX_N = 200


def _project_box_hyperplane(z: np.ndarray, C: float, n: int) -> np.ndarray:
    """Euclidean projection onto {0 <= u <= C, sum(u[:n]) - sum(u[n:]) = 0}.

    The multiplier equation h(lam) = a . clip(z - lam * a, 0, C) is monotone
    non-increasing and piecewise linear in lam with breakpoints where any
    coordinate enters or leaves its box, so the root is found exactly:
    evaluate h at every breakpoint, locate the sign change, interpolate on
    that (linear) segment.
    """
    z_p = z[:n]
    z_m = z[n:]
    bps = np.concatenate([z_p, z_p - C, -z_m, C - z_m])
    bps.sort()
    h_at = (np.clip(z_p[None, :] - bps[:, None], 0.0, C).sum(axis=1)
            - np.clip(z_m[None, :] + bps[:, None], 0.0, C).sum(axis=1))
    # -h_at is sorted ascending; first index where h <= 0 brackets the root
    k = int(np.searchsorted(-h_at, 0.0, side="left"))
    if k == 0:
        lam = bps[0]
    elif k == len(bps):
        lam = bps[-1]
    else:
        h_lo, h_hi = h_at[k - 1], h_at[k]
        if h_lo == h_hi:
            lam = bps[k - 1]
        else:
            lam = bps[k - 1] + (bps[k] - bps[k - 1]) * h_lo / (h_lo - h_hi)
    out = np.empty_like(z)
    out[:n] = np.clip(z_p - lam, 0.0, C)
    out[n:] = np.clip(z_m + lam, 0.0, C)
    return out


def solve_qp_reference(points, y, kernel: Kernel, config: SolverConfig,
                       grad_tol: float = 1e-10, max_iterations: int = 100_000) -> DualSolution:
    """Independent dense solver for cross-checking :func:`solve_epsilon_svr`.

    Works on the smooth (alpha, alpha*) box formulation and runs
    projected-gradient ascent with alternating Barzilai-Borwein spectral
    steps and a nonmonotone line search, the equality constraint being
    enforced by exact projection at every step.  Targets a unit-step
    projected-gradient sup-norm of ``grad_tol``; on badly conditioned Gram
    matrices the residual bottoms out at the float64 noise floor (around
    1e-9) with the objective already exact, so the solver also stops once
    the residual stagnates, reporting ``converged=False`` if the target was
    not met.  Dense in the number of points; refuses instances above 200.
    """
    X, t = _check_instance(points, y)
    n = X.shape[0]
    if n > _REFERENCE_MAX_N:
        raise NumericalError(
            f"reference solver is dense and capped at {_REFERENCE_MAX_N} points, got {n}"
        )
    K = gram_matrix(kernel, X)
    C = float(config.C)
    eps = float(config.epsilon)

    def grad(u_vec: np.ndarray) -> np.ndarray:
        kb = K @ (u_vec[:n] - u_vec[n:])
        g = np.empty(2 * n)
        g[:n] = t - kb - eps
        g[n:] = kb - t - eps
        return g

    def objective_of(u_vec: np.ndarray) -> float:
        b = u_vec[:n] - u_vec[n:]
        return float(-0.5 * b @ (K @ b) + t @ b - eps * u_vec.sum())

    u = np.zeros(2 * n)
    g = grad(u)
    recent = [objective_of(u)]
    step = 1.0
    use_second_step = False
    best_residual = math.inf
    stalled = 0
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        residual = _project_box_hyperplane(u + g, C, n) - u
        res_norm = float(np.abs(residual).max())
        if res_norm <= grad_tol:
            converged = True
            iterations -= 1
            break
        if res_norm < best_residual * (1.0 - 1e-6):
            best_residual = res_norm
            stalled = 0
        else:
            stalled += 1
            # a long spell without improvement only counts as "done" once
            # the residual sits near the float64 noise floor; the deeper
            # the floor, the sooner stagnation is believed
            if (stalled > 400 and best_residual <= 1e-8) \
                    or (stalled > 1500 and best_residual <= 1e-6) \
                    or stalled > 5000:
                iterations -= 1
                break
        d = _project_box_hyperplane(u + step * g, C, n) - u
        gd = float(g @ d)
        if gd <= 0.0 or float(np.abs(d).max()) < 1e-13 * max(1.0, float(np.abs(u).max())):
            d = residual
            gd = float(g @ d)
            if gd <= 0.0:
                iterations -= 1
                break
        delta = d[:n] - d[n:]
        curv = float(delta @ (K @ delta))
        tau_star = min(1.0, gd / curv) if curv > 0.0 else 1.0
        f_ref = max(recent)
        tau = 1.0
        accepted = False
        for _ in range(60):
            u_new = u + tau * d
            f_new = objective_of(u_new)
            if f_new >= f_ref + 1e-6 * tau * gd:
                accepted = True
                break
            tau = tau_star if (tau == 1.0 and tau_star < 1.0) else 0.5 * tau
            if tau < 1e-16:
                break
        if not accepted:
            u_new = u + tau_star * d
            f_new = objective_of(u_new)
        g_new = grad(u_new)
        du = u_new - u
        dg = g_new - g
        uu = float(du @ du)
        ug = -float(du @ dg)
        gg = float(dg @ dg)
        if ug > 0.0:
            first = uu / ug
            second = ug / gg if gg > 0.0 else first
            step = min(1e8, max(1e-10, second if use_second_step else first))
            use_second_step = not use_second_step
        else:
            step = 1e8
        u, g = u_new, g_new
        recent.append(f_new)
        recent = recent[-10:]

    beta = u[:n] - u[n:]
    kb = K @ beta
    objective = dual_objective(beta, kb, t, eps)
    G = t - kb
    bias = _bias_from_gradient(beta, G, C, eps)
    return DualSolution(
        beta=beta, bias=bias, objective=objective, iterations=iterations,
        converged=converged, objective_trace=np.array([objective]),
    )
