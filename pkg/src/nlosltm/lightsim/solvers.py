"""Classical inverse solvers used as oracles for the learned model."""

from __future__ import annotations

import math
from typing import Optional, Union

import numpy as np
from scipy import linalg

from ..errors import DimensionError, IllConditionedError, NumericError
from .transport import TransportMatrix, _as_hwc

# Condition numbers of the normal matrix beyond this are treated as singular.
_SINGULAR_COND = 1.0 / np.finfo(np.float64).eps
_SV_FLOOR = 1e-300


def classical_reconstruct(A: TransportMatrix, y: np.ndarray, reg: float, *,
                          subtract_ambient: bool = False) -> np.ndarray:
    """Tikhonov inversion x̂ = argmin ||A x - y||² + reg ||x||², clipped to [0, 1].

    Solved with a Cholesky factorization, one right-hand side per channel:
    through the normal equations (AᵀA + reg I) x = Aᵀ y, or, when A has
    fewer rows than columns and reg > 0, through the smaller dual system
    x = Aᵀ (AAᵀ + reg I)⁻¹ y.

    Parameters
    ----------
    A : TransportMatrix
    y : ndarray
        Projection (H_y, W_y) or (H_y, W_y, C).
    reg : float
        Ridge weight, >= 0.
    subtract_ambient : bool
        Remove the condition's ambient floor from *y* first.

    Raises
    ------
    IllConditionedError
        ``reg == 0`` and AᵀA is singular to working precision.
    """
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")
    y = _as_hwc(y)
    if tuple(y.shape[:2]) != tuple(A.geom.wall_res):
        raise DimensionError(f"projection is {y.shape[:2]}, transport expects {A.geom.wall_res}")
    rhs_y = y.reshape(-1, y.shape[2])
    if subtract_ambient:
        rhs_y = rhs_y - A.cond.illumination.ambient

    M = A.entries
    dual = reg > 0 and M.shape[0] < M.shape[1]
    normal = M @ M.T if dual else M.T @ M
    if reg == 0:
        if np.linalg.cond(normal) > _SINGULAR_COND:
            raise IllConditionedError(
                "normal matrix AᵀA is singular to working precision; pass reg > 0")
    else:
        normal = normal + reg * np.eye(normal.shape[0])
    try:
        factor = linalg.cho_factor(normal, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError(f"Cholesky factorization failed (reg={reg}): {exc}") from exc
    if dual:
        x = M.T @ linalg.cho_solve(factor, rhs_y)
    else:
        x = linalg.cho_solve(factor, M.T @ rhs_y)
    hx, wx = A.geom.hidden_res
    return np.clip(x, 0.0, 1.0).reshape(hx, wx, y.shape[2])


def condition_number(A: Union[TransportMatrix, np.ndarray], reg: float = 0.0,
                     rank: Optional[int] = None) -> float:
    """Ratio of the largest to the smallest singular value.

    Parameters
    ----------
    A : TransportMatrix or ndarray
    reg : float
        With ``reg > 0`` the ratio is taken for the Tikhonov operator
        [A; sqrt(reg) I], whose singular values are sqrt(σ² + reg) over all
        columns of A.  Finite even when A is singular.
    rank : int, optional
        Only the *rank* largest singular values take part, i.e. σ_0 / σ_{rank-1}.

    Returns ``math.inf`` when the smallest singular value is below 1e-300.
    """
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")
    M = A.entries if isinstance(A, TransportMatrix) else np.asarray(A, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    s = linalg.svd(M, compute_uv=False)
    if reg > 0:
        s = np.sqrt(np.concatenate([s, np.zeros(M.shape[1] - s.size)]) ** 2 + reg)
    if rank is not None:
        if not 1 <= rank <= s.size:
            raise DimensionError(f"rank must be in [1, {s.size}], got {rank}")
        s = s[:rank]
    if s[-1] < _SV_FLOOR:
        return math.inf
    return float(s[0] / s[-1])
