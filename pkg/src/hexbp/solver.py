"""Conjugate gradients over matrix-free operators, with essential boundary conditions."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .basis import QuadKind, build_basis
from .geometry import SYM_PAIRS, mass_factors
from .mesh import build_box_mesh
from .operators import Backend, BPKind, OperatorHandle, build_operator
from .tensor import R, S, T, contract_dim, interp, interp_transpose

ApplyFn = Callable[..., np.ndarray]


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BCSet:
    essential_dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dofs = np.asarray(self.essential_dofs, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(self.values, dtype=np.float64), dofs.shape).copy()
        if dofs.ndim != 1 or (dofs.size > 1 and np.any(np.diff(dofs) <= 0)):
            raise ValueError("essential dofs must be strictly increasing")
        if dofs.size and dofs[0] < 0:
            raise ValueError("essential dofs must be non-negative")
        object.__setattr__(self, "essential_dofs", dofs)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(cls) -> "BCSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def homogeneous(cls, dofs) -> "BCSet":
        dofs = np.asarray(dofs, dtype=np.int64)
        return cls(dofs, np.zeros(dofs.shape))

    def __len__(self) -> int:
        return self.essential_dofs.size


class ConstrainedOperator:
    """``w = P A P u + (I - P) u`` where ``P`` zeroes the essential dofs."""

    def __init__(self, op: OperatorHandle, bcs: BCSet):
        if len(bcs) and bcs.essential_dofs[-1] >= op.lsize:
            raise ValueError("essential dof index out of range")
        self.op = op
        self.bcs = bcs
        self._tmp = np.empty(op.lsize)

    @property
    def lsize(self) -> int:
        return self.op.lsize

    def apply(self, u: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        ess = self.bcs.essential_dofs
        if not len(ess):
            return self.op.apply(u, out)
        tmp = self._tmp
        tmp[:] = u
        tmp[ess] = 0.0
        out = self.op.apply(tmp, out)
        out[ess] = u[ess]
        return out

    __call__ = apply

    def rhs(self, b: np.ndarray) -> np.ndarray:
        """Right-hand side whose solution carries the prescribed boundary values."""
        ess = self.bcs.essential_dofs
        g = np.zeros(self.lsize)
        g[ess] = self.bcs.values
        out = b - self.op.apply(g)
        out[ess] = self.bcs.values
        return out


def constrain(handle: OperatorHandle, bcs: BCSet) -> ConstrainedOperator:
    return ConstrainedOperator(handle, bcs)


@dataclass
class CGReport:
    iterations: int
    converged: bool
    rel_residual: float
    history: list[float] = field(default_factory=list)
    seconds: float = 0.0


class _Dot:
    def __init__(self, n: int):
        self.partials = np.empty(K.dot_blocks(n))

    def __call__(self, x, y) -> float:
        return K.det_dot(x, y, self.partials)


def cg(apply: ApplyFn, b: np.ndarray, x0: np.ndarray | None = None, rel_tol: float = 1e-8,
       max_iter: int = 2000, precond=None) -> tuple[np.ndarray, CGReport]:
    """Preconditioned conjugate gradients.

    ``apply(u, out)`` must be symmetric positive definite on the relevant
    subspace.  ``precond`` is either a callable ``z = M(r)`` or an array of
    diagonal entries (Jacobi).  Stops when ``|r_k| <= rel_tol |r_0|`` or after
    ``max_iter`` iterations; the latter is reported, not raised.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    dot = _Dot(n)
    if isinstance(precond, np.ndarray):
        inv_diag = 1.0 / precond

        def precond(r, _inv=inv_diag):
            return r * _inv

    t0 = time.perf_counter()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    Ap = np.empty(n)
    r = b - apply(x, Ap) if x0 is not None else b.copy()
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = dot(r, z)
    rnorm0 = np.sqrt(dot(r, r))
    history = [float(rnorm0)]
    if not np.isfinite(rnorm0):
        raise DivergenceError("non-finite initial residual")
    k, converged = 0, rnorm0 == 0.0
    target = rel_tol * rnorm0
    while not converged and k < max_iter:
        apply(p, Ap)
        pAp = dot(p, Ap)
        if pAp == 0.0:
            # exact breakdown: the residual is already zero to working precision
            break
        alpha = rz / pAp
        K.axpy(alpha, p, x)
        K.axpy(-alpha, Ap, r)
        k += 1
        rnorm = np.sqrt(dot(r, r))
        history.append(float(rnorm))
        if not np.isfinite(rnorm):
            raise DivergenceError(f"non-finite residual at iteration {k}")
        if rnorm <= target:
            converged = True
            break
        if precond is None:
            rz_new = rnorm * rnorm
            z = r
        else:
            z = precond(r)
            rz_new = dot(r, z)
        K.xpay(z, rz_new / rz, p)
        rz = rz_new
    rel = history[-1] / rnorm0 if rnorm0 > 0 else 0.0
    return x, CGReport(k, converged, float(rel), history, time.perf_counter() - t0)


def jacobi_diagonal(handle) -> np.ndarray:
    """Assembled operator diagonal from element-local sum factorization.

    For every element, ``diag_e[i] = sum_q Q(q) (phi_i)(q)^2`` expands into
    products of squared 1D factors, so each term is three contractions with
    ``B*B``, ``B*D`` or ``D*D``.  Accepts a handle or a constrained operator
    (whose essential rows become 1).
    """
    if isinstance(handle, ConstrainedOperator):
        d = jacobi_diagonal(handle.op)
        d[handle.bcs.essential_dofs] = 1.0
        return d
    basis, fac, rst = handle.basis, handle.factors.data, handle.restriction
    B, D = basis.B, basis.D
    if handle.kind is BPKind.BP1:
        F = (B * B).T
        de = contract_dim(F, contract_dim(F, contract_dim(F, fac, T), S), R)
    else:
        mats = (B, D)
        de = 0.0
        for k, (i, j) in enumerate(SYM_PAIRS):
            v = fac[:, k]
            for axis in (T, S, R):
                Mi = mats[axis == i]
                Mj = mats[axis == j]
                v = contract_dim((Mi * Mj).T, v, axis)
            de = de + (v if i == j else 2.0 * v)
    return rst.scatter_add(de)


def exact_sine(xyz: np.ndarray) -> np.ndarray:
    return np.prod(np.sin(np.pi * xyz), axis=-1)


@dataclass
class PoissonResult:
    p: int
    nelem_1d: int
    l2_error: float
    nodal_error: float
    report: CGReport


def manufactured_poisson(p: int, nelem_1d: int, backend: Backend | str = Backend.FUSED,
                         rel_tol: float = 1e-8, max_iter: int = 2000,
                         jacobi: bool = True) -> PoissonResult:
    """Solve ``-lap u = 3 pi^2 sin(pi x) sin(pi y) sin(pi z)`` on the unit cube.

    Homogeneous Dirichlet data on the whole boundary.  ``l2_error`` is
    ``|u_h - u|`` integrated with a ``p + 3`` point Gauss rule per direction;
    ``nodal_error`` is the mass-weighted norm of ``u_h - u`` at the nodes,
    which superconverges and so is reported but not used for rates.
    """
    mesh = build_box_mesh((nelem_1d,) * 3, p)
    A = build_operator(BPKind.BP3, mesh, backend)
    M = build_operator(BPKind.BP1, mesh, backend, basis=A.basis)
    basis, rst = A.basis, A.restriction
    n = basis.n
    xe = mesh.coords[mesh.elem_nodes].reshape(mesh.nelem, n, n, n, 3)
    xq = np.stack([interp(basis, xe[..., i]) for i in range(3)], axis=-1)
    fq = 3.0 * np.pi ** 2 * exact_sine(xq)
    b = rst.scatter_add(interp_transpose(basis, M.factors.data * fq))

    bcs = BCSet.homogeneous(mesh.boundary_nodes())
    op = constrain(A, bcs)
    precond = jacobi_diagonal(op) if jacobi else None
    x, report = cg(op, op.rhs(b), rel_tol=rel_tol, max_iter=max_iter, precond=precond)
    err = x - exact_sine(mesh.coords)
    nodal = float(np.sqrt(err @ M.apply(err)))

    fine = build_basis(p, p + 3, QuadKind.GL)
    uh = interp(fine, x[mesh.elem_nodes].reshape(mesh.nelem, n, n, n))
    xf = np.stack([interp(fine, xe[..., i]) for i in range(3)], axis=-1)
    w = mass_factors(mesh, fine).data
    l2 = float(np.sqrt(np.sum(w * (uh - exact_sine(xf)) ** 2)))
    return PoissonResult(p, nelem_1d, l2, nodal, report)


__all__ = [
    "BCSet", "CGReport", "ConstrainedOperator", "DivergenceError", "cg", "constrain",
    "jacobi_diagonal", "manufactured_poisson",
]
