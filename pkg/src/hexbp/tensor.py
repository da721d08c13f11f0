"""Sum-factorized tensor contractions on lexicographically ordered element data.

Element tensors are stored as numpy arrays indexed ``[..., t, s, r]`` so the
flat C-order index is ``r + n*(s + n*t)`` (x fastest).  Reference direction
``0`` (r) is therefore the last numpy axis and direction ``2`` (t) the third from
last.  Any leading axes are treated as a batch, typically the element index.
"""
from __future__ import annotations

import numpy as np

from .basis import TensorBasis

R, S, T = 0, 1, 2


def contract_dim(A: np.ndarray, X: np.ndarray, axis: int) -> np.ndarray:
    """Apply the matrix ``A`` (m x n) along reference direction ``axis`` of ``X``.

    ``Y[..i..] = sum_m A[i, m] X[..m..]`` with the contracted axis resized from
    ``n`` to ``m``.
    """
    if axis not in (R, S, T):
        raise ValueError(f"axis must be 0 (r), 1 (s) or 2 (t), got {axis}")
    A = np.asarray(A, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if A.ndim != 2 or X.ndim < 3:
        raise ValueError("expected a matrix and an (at least) 3-axis tensor")
    npaxis = X.ndim - 1 - axis
    if X.shape[npaxis] != A.shape[1]:
        raise ValueError(
            f"contraction length mismatch: A is {A.shape}, X axis has {X.shape[npaxis]}")
    Y = np.tensordot(A, X, axes=([1], [npaxis]))
    return np.moveaxis(Y, 0, npaxis)


def interp(basis: TensorBasis, u: np.ndarray) -> np.ndarray:
    """Nodal values ``[..., n, n, n]`` to quadrature values ``[..., q, q, q]``."""
    if basis.collocated:
        return np.array(u, dtype=np.float64)
    B = basis.B
    return contract_dim(B, contract_dim(B, contract_dim(B, u, R), S), T)


def interp_transpose(basis: TensorBasis, v: np.ndarray) -> np.ndarray:
    if basis.collocated:
        return np.array(v, dtype=np.float64)
    Bt = basis.B.T
    return contract_dim(Bt, contract_dim(Bt, contract_dim(Bt, v, T), S), R)


def elem_grad(basis: TensorBasis, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference gradient ``(u_r, u_s, u_t)`` at the quadrature points.

    Each component is one derivative contraction and two interpolations; with
    collocated quadrature the interpolations are the identity and skipped.
    """
    B, D = basis.B, basis.D
    out = []
    for direction in (R, S, T):
        v = u
        for axis in (R, S, T):
            if axis == direction:
                v = contract_dim(D, v, axis)
            elif not basis.collocated:
                v = contract_dim(B, v, axis)
        out.append(v)
    return out[0], out[1], out[2]


def elem_grad_transpose(basis: TensorBasis, vr: np.ndarray, vs: np.ndarray,
                        vt: np.ndarray) -> np.ndarray:
    Bt, Dt = basis.B.T, basis.D.T
    w = None
    for direction, v in zip((R, S, T), (vr, vs, vt)):
        for axis in (T, S, R):
            if axis == direction:
                v = contract_dim(Dt, v, axis)
            elif not basis.collocated:
                v = contract_dim(Bt, v, axis)
        w = v if w is None else w + v
    return w
