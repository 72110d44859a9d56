"""Minimize ``d(b, T x)`` over the probability simplex by exponentiated gradient.

The update is multiplicative, ``x <- x * exp(-eta * grad) / Z``, so iterates
stay strictly positive and normalized. Convergence is declared when the
complementary-slackness residual ``lambda^T x`` drops below ``tol``, with
``lambda = grad - min(grad)``; for a convex objective this bounds the
suboptimality ``d(b, T x) - min d``.

Two divergences are supported: KL, ``sum_j b_j log(b_j / (T x)_j)``, and
squared Euclidean, ``||b - T x||^2``. The squared Euclidean case is always
solved in kernel form (``T^T T``, ``T^T b``, ``b^T b``), so an iteration
costs ``O(K^2)`` regardless of ``V``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

KL_FLOOR = 1e-12
EXPONENT_CLIP = 30.0
ARMIJO_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_HALVINGS = 30
MAX_DOUBLINGS = 30
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITERS = 1000

_L2 = 0
_KL = 1
_EMPTY_G = np.zeros((0, 0))
_EMPTY_T = np.zeros((0, 0))
_EMPTY_B = np.zeros(0)


class Divergence(str, enum.Enum):
    KL = "kl"
    L2 = "l2"


@dataclass
class SimplexProblem:
    """``minimize d(b, t @ x)`` subject to ``x >= 0, sum(x) = 1``."""

    t: np.ndarray
    b: np.ndarray
    divergence: Divergence = Divergence.L2
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS

    def __post_init__(self):
        self.t = np.atleast_2d(np.asarray(self.t, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.divergence = Divergence(self.divergence)
        if self.t.shape[0] != self.b.size:
            raise ValueError(f"t has {self.t.shape[0]} rows but b has length {self.b.size}")
        if (self.b < 0).any():
            raise ValueError("b must be entrywise nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.divergence is Divergence.KL:
            if abs(self.b.sum() - 1.0) > 1e-9:
                raise ValueError("KL target b must sum to 1")
            if np.abs(self.t.sum(axis=0) - 1.0).max() > 1e-9:
                raise ValueError("KL design columns must each sum to 1")

    @property
    def k(self) -> int:
        return self.t.shape[1]


@dataclass
class SimplexSolution:
    x: np.ndarray
    iterations: int
    kkt_gap: float
    objective: float
    converged: bool
    trace: list = field(default_factory=list, repr=False)


class L2Objective:
    """``c - 2 x.h + x.G x`` with its gradient ``2 (G x - h)``."""

    def __init__(self, gram, cross, const):
        self.gram = np.ascontiguousarray(gram, dtype=float)
        self.cross = np.ascontiguousarray(cross, dtype=float)
        self.const = float(const)

    def __call__(self, x):
        gx = self.gram @ x
        value = self.const - 2.0 * (x @ self.cross) + x @ gx
        return value, 2.0 * (gx - self.cross)


class KLObjective:
    """``sum_j b_j log(b_j / (T x)_j)``, restricted to the support of ``b``.

    Only coordinates with ``b_j > 0`` contribute to the value or gradient;
    ``T x`` is floored at ``KL_FLOOR`` where it would vanish.
    """

    def __init__(self, t, b):
        t = np.asarray(t, dtype=float)
        b = np.asarray(b, dtype=float)
        support = b > 0
        self.t = np.ascontiguousarray(t[support])
        self.b = b[support]
        self.const = float(self.b @ np.log(self.b))

    def __call__(self, x):
        tx = np.maximum(self.t @ x, KL_FLOOR)
        value = self.const - self.b @ np.log(tx)
        return value, -(self.b / tx) @ self.t


def l2_kernelize(anchor_rows, target_row):
    """Kernel form of ``||target - anchor_rows^T x||^2``.

    Returns ``(gram, cross, const)`` = ``(S S^T, S target, ||target||^2)`` where
    ``S`` is the ``K x V`` matrix of anchor rows.
    """
    anchor_rows = np.atleast_2d(np.asarray(anchor_rows, dtype=float))
    target_row = np.asarray(target_row, dtype=float)
    return anchor_rows @ anchor_rows.T, anchor_rows @ target_row, float(target_row @ target_row)


def make_objective(problem: SimplexProblem):
    if problem.divergence is Divergence.KL:
        return KLObjective(problem.t, problem.b)
    return L2Objective(*l2_kernelize(problem.t.T, problem.b))


def divergence_value(problem: SimplexProblem, x) -> float:
    """Objective evaluated directly from ``t`` and ``b`` (no kernel)."""
    x = np.asarray(x, dtype=float)
    tx = problem.t @ x
    if problem.divergence is Divergence.L2:
        r = problem.b - tx
        return float(r @ r)
    s = problem.b > 0
    return float(problem.b[s] @ np.log(problem.b[s] / np.maximum(tx[s], KL_FLOOR)))


def divergence_gradient(problem: SimplexProblem, x) -> np.ndarray:
    """Gradient evaluated directly from ``t`` and ``b`` (no kernel)."""
    x = np.asarray(x, dtype=float)
    tx = problem.t @ x
    if problem.divergence is Divergence.L2:
        return 2.0 * problem.t.T @ (tx - problem.b)
    s = problem.b > 0
    return -problem.t[s].T @ (problem.b[s] / np.maximum(tx[s], KL_FLOOR))


def _gap(grad, x):
    return float((grad - grad.min()) @ x)


def kkt_gap(problem: SimplexProblem, x) -> float:
    """Complementary-slackness residual ``lambda^T x`` at ``x``.

    ``mu = -min(grad)`` and ``lambda = grad + mu`` satisfy stationarity and
    dual feasibility by construction; the result is invariant to adding a
    constant to the gradient.
    """
    x = np.asarray(x, dtype=float)
    _, grad = make_objective(problem)(x)
    return _gap(grad, x)


@njit(cache=True, nogil=True)
def _evaluate(kind, x, gram, cross, const, t, b, grad):
    k = x.size
    if kind == _L2:
        value = const
        for i in range(k):
            gx = 0.0
            for j in range(k):
                gx += gram[i, j] * x[j]
            value += x[i] * (gx - 2.0 * cross[i])
            grad[i] = 2.0 * (gx - cross[i])
        return value
    value = const
    for i in range(k):
        grad[i] = 0.0
    for r in range(b.size):
        tx = 0.0
        for j in range(k):
            tx += t[r, j] * x[j]
        if tx < KL_FLOOR:
            tx = KL_FLOOR
        value -= b[r] * np.log(tx)
        ratio = b[r] / tx
        for j in range(k):
            grad[j] -= ratio * t[r, j]
    return value


@njit(cache=True, nogil=True)
def _gap_kernel(grad, x):
    lo = grad.min()
    gap = 0.0
    for i in range(x.size):
        gap += (grad[i] - lo) * x[i]
    return gap


@njit(cache=True, nogil=True)
def _eg_point(x, p, eta, out):
    # shifting by min(p) only changes the normalizer
    lo = p.min()
    total = 0.0
    for i in range(x.size):
        z = -eta * (p[i] - lo)
        if z < -EXPONENT_CLIP:
            z = -EXPONENT_CLIP
        elif z > EXPONENT_CLIP:
            z = EXPONENT_CLIP
        out[i] = x[i] * np.exp(z)
        total += out[i]
    for i in range(x.size):
        out[i] /= total


@njit(cache=True, nogil=True)
def _curve_slope(y, gy, g):
    """d/d(eta) of f(x(eta)): ``-Cov_y(gy, g)``."""
    yg = 0.0
    ygy = 0.0
    cross = 0.0
    for i in range(y.size):
        yg += y[i] * g[i]
        ygy += y[i] * gy[i]
        cross += y[i] * gy[i] * g[i]
    return -(cross - ygy * yg)


@njit(cache=True, nogil=True)
def _eg_kernel(kind, gram, cross, const, t, b, x0, tol, max_iters, trace):
    k = x0.size
    x = x0.copy()
    g = np.empty(k)
    f = _evaluate(kind, x, gram, cross, const, t, b, g)
    y = np.empty(k)
    gy = np.empty(k)
    y2 = np.empty(k)
    gy2 = np.empty(k)
    best_x = x.copy()
    best_g = g.copy()
    best_f = f
    n_trace = 0
    if trace.size > 0:
        trace[0] = f
        n_trace = 1
    eta = 1.0
    converged = False
    iterations = 0
    while iterations < max_iters:
        iterations += 1
        # line search along the curve x(eta); phi'(0) = -Var_x(g)
        mean = 0.0
        for i in range(k):
            mean += x[i] * g[i]
        slope0 = 0.0
        for i in range(k):
            slope0 -= x[i] * (g[i] - mean) ** 2
        if slope0 < 0.0:
            _eg_point(x, g, eta, y)
            fy = _evaluate(kind, y, gram, cross, const, t, b, gy)
            if fy <= f + ARMIJO_C1 * eta * slope0:
                # Armijo holds at the trial step: expand while the curvature condition fails
                for _ in range(MAX_DOUBLINGS):
                    if _curve_slope(y, gy, g) >= WOLFE_C2 * slope0:
                        break
                    _eg_point(x, g, 2.0 * eta, y2)
                    fy2 = _evaluate(kind, y2, gram, cross, const, t, b, gy2)
                    if not fy2 <= f + ARMIJO_C1 * 2.0 * eta * slope0:
                        break
                    y[:] = y2
                    gy[:] = gy2
                    fy = fy2
                    eta *= 2.0
            else:
                for _ in range(MAX_HALVINGS):
                    eta *= 0.5
                    _eg_point(x, g, eta, y)
                    fy = _evaluate(kind, y, gram, cross, const, t, b, gy)
                    if fy <= f + ARMIJO_C1 * eta * slope0:
                        break
            x[:] = y
            g[:] = gy
            f = fy
        if not np.isfinite(f):
            break
        if n_trace < trace.size:
            trace[n_trace] = f
            n_trace += 1
        if f <= best_f:
            best_f = f
            best_x[:] = x
            best_g[:] = g
        if _gap_kernel(g, x) < tol:
            converged = True
            break
    if not converged:
        x = best_x
        g = best_g
        f = best_f
    return x, iterations, _gap_kernel(g, x), f, converged, n_trace


def solve(objective, k: int, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
          x0=None, record: bool = False) -> SimplexSolution:
    """Run exponentiated gradient on an :class:`L2Objective` or :class:`KLObjective`.

    ``x0`` defaults to the uniform vector. The first trial step is 1; each
    later iteration starts its line search from the previously accepted step.
    With ``record=True`` the objective after every iteration is kept in
    ``trace`` (``trace[0]`` is the starting value).
    """
    if x0 is None:
        x0 = np.full(k, 1.0 / k)
    else:
        x0 = np.array(x0, dtype=float)
        if x0.shape != (k,) or (x0 <= 0).any() or abs(x0.sum() - 1.0) > 1e-12:
            raise ValueError("x0 must be a strictly positive vector on the simplex")
    trace = np.empty(max_iters + 1 if record else 0)
    if isinstance(objective, L2Objective):
        args = (_L2, objective.gram, objective.cross, objective.const, _EMPTY_T, _EMPTY_B)
    elif isinstance(objective, KLObjective):
        args = (_KL, _EMPTY_G, _EMPTY_B, objective.const, objective.t, objective.b)
    else:
        raise TypeError(f"unsupported objective {type(objective).__name__}")
    x, iterations, gap, f, converged, n_trace = _eg_kernel(
        *args, x0, float(tol), int(max_iters), trace)
    if not converged:
        logger.debug("exponentiated gradient stopped after %d iterations, gap %.3g", iterations, gap)
    return SimplexSolution(x=x, iterations=int(iterations), kkt_gap=float(gap), objective=float(f),
                           converged=bool(converged), trace=trace[:n_trace].tolist())


def exponentiated_gradient(problem: SimplexProblem, x0=None, record: bool = False) -> SimplexSolution:
    """Solve ``problem`` from ``x0`` (uniform by default)."""
    return solve(make_objective(problem), problem.k, tol=problem.tol,
                 max_iters=problem.max_iters, x0=x0, record=record)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)
