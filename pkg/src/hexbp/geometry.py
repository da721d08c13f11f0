"""Jacobians of the isoparametric element map and quadrature-point factors.

Factors are computed once per (mesh, basis) and stored per element as arrays
indexed ``[e, t, s, r]`` (mass) or ``[e, k, t, s, r]`` (diffusion, with ``k``
running over ``rr, rs, rt, ss, st, tt``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .basis import TensorBasis
from .mesh import HexMesh
from .tensor import elem_grad

SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class DegenerateElementError(ValueError):
    def __init__(self, element: int, qpt: tuple[int, int, int], detj: float):
        self.element = element
        self.qpt = qpt
        self.detj = detj
        super().__init__(
            f"non-positive Jacobian determinant {detj:.3e} in element {element} "
            f"at quadrature point (r, s, t) = {qpt}")


class FactorKind(str, enum.Enum):
    MASS = "mass"
    DIFFUSION = "diffusion"


@dataclass(frozen=True)
class GeomFactors:
    kind: FactorKind
    data: np.ndarray

    @property
    def nelem(self) -> int:
        return self.data.shape[0]

    def matrix(self) -> np.ndarray:
        """Full symmetric ``(..., 3, 3)`` tensors for diffusion factors."""
        if self.kind is not FactorKind.DIFFUSION:
            raise TypeError("only diffusion factors carry a tensor")
        G = np.empty(self.data.shape[:1] + self.data.shape[2:] + (3, 3))
        for k, (i, j) in enumerate(SYM_PAIRS):
            G[..., i, j] = G[..., j, i] = self.data[:, k]
        return G


def compute_jacobians(mesh: HexMesh, basis: TensorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Return ``J[e, t, s, r, i, j] = dx_i/dr_j`` and ``detJ[e, t, s, r]``.

    Raises :class:`DegenerateElementError` at the first non-positive determinant.
    """
    if basis.p != mesh.p:
        raise ValueError(f"isoparametric geometry needs basis degree {mesh.p}, got {basis.p}")
    n = basis.n
    xe = mesh.coords[mesh.elem_nodes].reshape(mesh.nelem, n, n, n, 3)
    q = basis.q
    J = np.empty((mesh.nelem, q, q, q, 3, 3))
    for i in range(3):
        for j, d in enumerate(elem_grad(basis, xe[..., i])):
            J[..., i, j] = d
    detj = (J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
            - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
            + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0]))
    bad = np.argwhere(~(detj > 0.0))
    if bad.size:
        e, c, b, a = (int(v) for v in bad[0])
        raise DegenerateElementError(e, (a, b, c), float(detj[e, c, b, a]))
    return J, detj


def adjugate(J: np.ndarray) -> np.ndarray:
    A = np.empty_like(J)
    for i in range(3):
        for j in range(3):
            i1, i2 = (j + 1) % 3, (j + 2) % 3
            j1, j2 = (i + 1) % 3, (i + 2) % 3
            A[..., i, j] = J[..., i1, j1] * J[..., i2, j2] - J[..., i1, j2] * J[..., i2, j1]
    return A


def mass_factors(mesh: HexMesh, basis: TensorBasis) -> GeomFactors:
    _, detj = compute_jacobians(mesh, basis)
    data = np.ascontiguousarray(basis.weights3d() * detj)
    data.setflags(write=False)
    return GeomFactors(FactorKind.MASS, data)


def diffusion_factors(mesh: HexMesh, basis: TensorBasis) -> GeomFactors:
    """Symmetric ``wdetJ * J^-1 J^-T`` with ``J^-1 = adj(J) / detJ``."""
    J, detj = compute_jacobians(mesh, basis)
    adj = adjugate(J)
    # wdetJ / detJ^2 folds both inverse factors
    scale = basis.weights3d() / detj
    data = np.empty((mesh.nelem, 6) + detj.shape[1:])
    for k, (i, j) in enumerate(SYM_PAIRS):
        data[:, k] = scale * np.sum(adj[..., i, :] * adj[..., j, :], axis=-1)
    data.setflags(write=False)
    return GeomFactors(FactorKind.DIFFUSION, data)
