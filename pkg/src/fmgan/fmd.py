"""Feature-mover's distance between two equal-size batches of feature vectors.

Batches are ``d x n`` arrays, one column per sentence. The value is the
optimal transport cost under cosine distance with uniform marginals. The
plan comes from :func:`fmgan.ot.ipot` and is treated as a constant when
differentiating: at the optimum the derivative of the plan contributes
nothing, so only the cost entries are differentiated.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np

from . import ndgrad as nd
from .errors import DimensionError
from .ot import NORM_FLOOR, SolverConfig, cosine_cost_matrix, ipot, transport_value


def _check_pair(F, F2):
    if F.ndim != 2 or F2.ndim != 2:
        raise DimensionError(f"feature batches must be d x n, got {F.shape} and {F2.shape}")
    if F.shape != F2.shape:
        raise DimensionError(f"feature batches must match in size: {F.shape} vs {F2.shape}")
    if F.shape[1] < 1:
        raise DimensionError("feature batches must be non-empty")


def fmd(F: np.ndarray, F2: np.ndarray, cfg: SolverConfig = SolverConfig()
        ) -> Tuple[float, np.ndarray]:
    """Return ``(value, plan)``; ``value`` lies in [0, 2]."""
    F = np.asarray(F, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    _check_pair(F, F2)
    C = cosine_cost_matrix(F, F2)
    T = ipot(C, cfg)
    return transport_value(T, C), T


def _unit_grad(F: np.ndarray, G_unit: np.ndarray) -> np.ndarray:
    # chain rule through f / max(|f|, floor); the floor branch is a constant
    norms = np.linalg.norm(F, axis=0)
    live = norms >= NORM_FLOOR
    safe = np.maximum(norms, NORM_FLOOR)
    U = F / safe
    radial = np.where(live, (U * G_unit).sum(axis=0), 0.0)
    return (G_unit - U * radial) / safe


def fmd_grad(F: np.ndarray, F2: np.ndarray, cfg: SolverConfig = SolverConfig()
             ) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the FMD value with the solved plan held fixed."""
    F = np.asarray(F, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    _value, T = fmd(F, F2, cfg)
    U = F / np.maximum(np.linalg.norm(F, axis=0), NORM_FLOOR)
    V = F2 / np.maximum(np.linalg.norm(F2, axis=0), NORM_FLOOR)
    # value = sum_ij T_ij (1 - u_i . v_j)
    dU = -V @ T.T
    dV = -U @ T
    return _unit_grad(F, dU), _unit_grad(F2, dV)


def cosine_cost(Fa: nd.Tensor, Fb: nd.Tensor) -> nd.Tensor:
    """Differentiable cosine cost matrix between the columns of two d x n tensors."""
    Fa, Fb = nd.as_tensor(Fa), nd.as_tensor(Fb)
    if Fa.ndim != 2 or Fb.ndim != 2 or Fa.shape[0] != Fb.shape[0]:
        raise DimensionError(f"feature dimensions differ: {Fa.shape} vs {Fb.shape}")
    na = nd.clamp_min(nd.sqrt((Fa * Fa).sum(axis=0)), NORM_FLOOR)
    nb = nd.clamp_min(nd.sqrt((Fb * Fb).sum(axis=0)), NORM_FLOOR)
    return 1.0 - (Fa / na).T @ (Fb / nb)


def fmd_loss(Fa: nd.Tensor, Fb: nd.Tensor, cfg: SolverConfig = SolverConfig()
             ) -> Tuple[nd.Tensor, np.ndarray]:
    """FMD as a tape scalar ``<T*, C(Fa, Fb)>``; the plan ``T*`` is solved off-tape.

    Returns the scalar tensor and the plan.
    """
    Fa, Fb = nd.as_tensor(Fa), nd.as_tensor(Fb)
    _check_pair(Fa.data, Fb.data)
    C = cosine_cost(Fa, Fb)
    T = ipot(np.clip(C.data, 0.0, 2.0), cfg)
    return (C * T).sum(), T
