"""Optimal transport over a precomputed cost matrix.

Three solvers share the uniform-marginal convention used throughout the
package: an ``m x n`` plan has row sums ``1/m`` and column sums ``1/n``.

* :func:`ipot` -- inexact proximal point iterations, the solver the critic uses.
* :func:`sinkhorn` -- entropic OT, kept for comparison.
* :func:`exact_emd_oracle` -- brute force over permutation matrices, for tests.

None of these run on a differentiation tape.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import CapacityError, DimensionError, NumericError, ParameterError
from .ndgrad import EXP_FLOOR

NORM_FLOOR = 1e-8
ORACLE_MAX_N = 8


@dataclass(frozen=True)
class SolverConfig:
    """IPOT settings.

    ``beta`` is the proximity penalty, ``inner_k`` the number of inner
    scaling sweeps per outer step. With ``early_stop`` the solver returns once
    the marginal residual is below ``marginal_tol`` and no plan entry moved by
    more than ``marginal_tol`` in the last outer step; without it the full
    ``outer_iters`` budget always runs.
    """

    beta: float = 0.5
    inner_k: int = 1
    outer_iters: int = 2000
    marginal_tol: float = 1e-6
    early_stop: bool = True

    def __post_init__(self):
        if not (self.beta > 0 and self.inner_k >= 1 and self.outer_iters >= 1
                and self.marginal_tol > 0):
            raise ParameterError(f"invalid solver config {self}")

    @classmethod
    def training(cls, beta: float = 0.5, inner_k: int = 1, outer_iters: int = 100):
        """Fixed-budget variant used inside training loops."""
        return cls(beta=beta, inner_k=inner_k, outer_iters=outer_iters, early_stop=False)


def cosine_cost_matrix(F: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """Pairwise cosine distance between the columns of ``F`` (d x n) and ``F2`` (d x m)."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    F2 = np.atleast_2d(np.asarray(F2, dtype=np.float64))
    if F.shape[0] != F2.shape[0]:
        raise DimensionError(f"feature dimensions differ: {F.shape} vs {F2.shape}")
    a = F / np.maximum(np.linalg.norm(F, axis=0), NORM_FLOOR)
    b = F2 / np.maximum(np.linalg.norm(F2, axis=0), NORM_FLOOR)
    return np.clip(1.0 - a.T @ b, 0.0, 2.0)


def transport_value(T: np.ndarray, C: np.ndarray) -> float:
    T, C = np.asarray(T), np.asarray(C)
    if T.shape != C.shape:
        raise DimensionError(f"plan shape {T.shape} does not match cost shape {C.shape}")
    return float(np.sum(T * C))


def marginal_residual(T: np.ndarray) -> float:
    T = np.asarray(T)
    m, n = T.shape
    return float(max(np.abs(T.sum(axis=1) - 1.0 / m).max(),
                     np.abs(T.sum(axis=0) - 1.0 / n).max()))


def _kernel(C: np.ndarray, scale: float, name: str, knob: str) -> np.ndarray:
    ratio = C / scale
    if not np.isfinite(ratio).all():
        bad = ratio[~np.isfinite(ratio)].flat[0]
        raise NumericError(f"{name}: non-finite kernel argument C_ij/{knob} = {bad}")
    # flooring would flatten every entry past the floor to the same value
    if ratio.max() > -EXP_FLOOR:
        raise NumericError(f"{name}: kernel underflow (max C_ij/{knob} = {ratio.max():.4g}); "
                           f"try a larger {knob}")
    return np.exp(-ratio)


def ipot(C: np.ndarray, cfg: SolverConfig = SolverConfig(),
         callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Solve uniform-marginal OT by inexact proximal point iterations.

    Each outer step multiplies the previous plan into the kernel
    ``exp(-C/beta)`` and rescales it toward the marginals with ``inner_k``
    alternating sweeps. ``callback(t, T)`` sees the plan after outer step t.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got shape {C.shape}")
    m, n = C.shape
    A = _kernel(C, cfg.beta, "ipot", "beta")
    sigma = np.full(n, 1.0 / n)
    T = np.ones((m, n))
    for t in range(1, cfg.outer_iters + 1):
        Q = A * T
        for _ in range(cfg.inner_k):
            delta = 1.0 / (m * (Q @ sigma))
            sigma = 1.0 / (n * (Q.T @ delta))
        T_prev, T = T, delta[:, None] * Q * sigma[None, :]
        if not np.isfinite(T).all():
            raise NumericError(f"ipot: plan became non-finite at outer step {t}")
        if callback is not None:
            callback(t, T)
        # marginals alone settle long before the plan reaches the LP vertex
        if (cfg.early_stop and marginal_residual(T) < cfg.marginal_tol
                and np.abs(T - T_prev).max() < cfg.marginal_tol):
            break
    return T


def sinkhorn(C: np.ndarray, eps: float, iters: int = 1000, tol: Optional[float] = None,
             callback: Optional[Callable[[int, np.ndarray], None]] = None
             ) -> Tuple[np.ndarray, float]:
    """Entropic OT by alternating scaling on ``exp(-C/eps)``.

    Returns the plan and its transport cost ``<T, C>`` (entropy term excluded).
    Stops early once the marginal residual is below ``tol``, if given.
    """
    if not eps > 0:
        raise ParameterError(f"sinkhorn eps must be positive, got {eps}")
    if iters < 1:
        raise ParameterError(f"sinkhorn iters must be >= 1, got {iters}")
    C = np.asarray(C, dtype=np.float64)
    m, n = C.shape
    K = _kernel(C, eps, "sinkhorn", "eps")
    sigma = np.full(n, 1.0 / n)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for t in range(1, iters + 1):
            delta = 1.0 / (m * (K @ sigma))
            sigma = 1.0 / (n * (K.T @ delta))
            if not (np.isfinite(delta).all() and np.isfinite(sigma).all()):
                raise NumericError(f"sinkhorn: kernel underflow at eps={eps}; try a larger eps")
            if callback is not None or (tol is not None and t % 10 == 0):
                T = delta[:, None] * K * sigma[None, :]
                if callback is not None:
                    callback(t, T)
                if tol is not None and marginal_residual(T) < tol:
                    break
    T = delta[:, None] * K * sigma[None, :]
    return T, transport_value(T, C)


def exact_emd_oracle(C: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimum of ``<T, C>`` over uniform-marginal plans, by enumerating permutations.

    Scaled permutation matrices are the vertices of the uniform-marginal
    polytope, so the best one is optimal. Ties go to the first permutation in
    lexicographic order.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise DimensionError(f"oracle needs a square cost matrix, got {C.shape}")
    if n > ORACLE_MAX_N:
        raise CapacityError(f"oracle enumerates n! plans; n={n} exceeds {ORACLE_MAX_N}")
    perms = np.array(list(itertools.permutations(range(n))))
    costs = C[np.arange(n), perms].sum(axis=1) / n
    best = int(np.argmin(costs))
    T = np.zeros((n, n))
    T[np.arange(n), perms[best]] = 1.0 / n
    return T, float(costs[best])
