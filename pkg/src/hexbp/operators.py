"""Matrix-free bake-off operators: BP1 (mass), BP3 (stiffness), BP5 (collocated stiffness).

Three backends share one contract, ``w = R^T B^T Q B R u``:

* ``fused``: a single sweep over elements; every stage of an element's
  pipeline runs in element-local scratch preallocated with the handle.
* ``multipass``: one sweep per stage (gather, basis, pointwise, transposed
  basis, scatter), with all intermediates materialized as global arrays that
  are allocated on every call.
* ``oracle``: an explicitly assembled sparse matrix, for small problems only.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .basis import QuadKind, TensorBasis, build_basis
from .geometry import FactorKind, GeomFactors, diffusion_factors, mass_factors
from .mesh import ElementRestriction, HexMesh, build_restriction

ORACLE_MAX_LSIZE = 20_000


class BPKind(str, enum.Enum):
    BP1 = "bp1"
    BP3 = "bp3"
    BP5 = "bp5"

    @property
    def factor_kind(self) -> FactorKind:
        return FactorKind.MASS if self is BPKind.BP1 else FactorKind.DIFFUSION


class Backend(str, enum.Enum):
    MULTIPASS = "multipass"
    FUSED = "fused"
    ORACLE = "oracle"


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class TempAlloc:
    """A global temporary materialized during one ``apply``."""

    name: str
    shape: tuple[int, ...]
    nbytes: int
    qpoint_field: bool


AllocHook = Callable[[TempAlloc], None]


def default_basis(kind: BPKind | str, p: int) -> TensorBasis:
    """GL with ``q = p + 2`` for BP1/BP3, collocated GLL for BP5."""
    kind = BPKind(kind)
    if kind is BPKind.BP5:
        return build_basis(p, p + 1, QuadKind.GLL)
    return build_basis(p, p + 2, QuadKind.GL)


def geometric_factors(kind: BPKind | str, mesh: HexMesh, basis: TensorBasis) -> GeomFactors:
    kind = BPKind(kind)
    if kind is BPKind.BP1:
        return mass_factors(mesh, basis)
    return diffusion_factors(mesh, basis)


class OperatorHandle:
    """A bake-off operator bound to a backend.

    The handle is immutable after construction.  Concurrent ``apply`` calls on
    one fused handle need distinct ``scratch`` buffers (see :meth:`new_scratch`).
    """

    def __init__(self, kind, backend, basis: TensorBasis, restriction: ElementRestriction,
                 factors: GeomFactors, threads: int | None = None, matrix=None):
        self.kind = BPKind(kind)
        self.backend = Backend(backend)
        if self.kind is BPKind.BP5 and not basis.collocated:
            raise ValueError("BP5 requires collocated GLL quadrature (q = p + 1)")
        if factors.kind is not self.kind.factor_kind:
            raise ValueError(f"{self.kind.value} needs {self.kind.factor_kind.value} factors")
        if factors.nelem != restriction.nelem or restriction.nloc != basis.n ** 3:
            raise ValueError("basis, restriction and factors describe different meshes")
        self.basis = basis
        self.restriction = restriction
        self.factors = factors
        self.nchunks = max(1, min(threads or numba.get_num_threads(), restriction.nelem))
        n, q = basis.n, basis.q
        self._B = np.ascontiguousarray(basis.B)
        self._D = np.ascontiguousarray(basis.D)
        self._Bt = np.ascontiguousarray(basis.B.T)
        self._Dt = np.ascontiguousarray(basis.D.T)
        self._idx = restriction.indices
        self._W = np.ascontiguousarray(factors.data)
        # element-local scratch, one slot per chunk of elements
        nc = self.nchunks
        self._s_ue = np.zeros((nc, n, n, n))
        self._s_t1 = np.zeros((nc, 2, n, n, q))
        self._s_t2 = np.zeros((nc, 3, n, q, q))
        self._s_q = np.zeros((nc, 3, q, q, q))
        self._ev = self.new_scratch() if self.backend is Backend.FUSED else None
        self.matrix = matrix
        if self.backend is Backend.ORACLE and matrix is None:
            self.matrix = assemble_oracle(self.kind, basis, restriction, factors,
                                          restriction.lsize)

    @property
    def lsize(self) -> int:
        return self.restriction.lsize

    @property
    def p(self) -> int:
        return self.basis.p

    @property
    def collocated(self) -> bool:
        return self.basis.collocated

    def new_scratch(self) -> np.ndarray:
        n = self.basis.n
        return np.zeros((self.restriction.nelem, n, n, n))

    def apply(self, u: np.ndarray, out: np.ndarray | None = None, *,
              scratch: np.ndarray | None = None, on_alloc: AllocHook | None = None) -> np.ndarray:
        """Return ``w = A u`` for an L-vector ``u`` (no boundary conditions)."""
        return self._run(u, out, scratch, on_alloc, K.empty_counts())

    __call__ = apply

    def _run(self, u, out, scratch, on_alloc, counts):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.lsize,):
            raise ValueError(f"L-vector must have length {self.lsize}, got {u.shape}")
        if out is None:
            out = np.empty(self.lsize)
        elif out.shape != (self.lsize,) or out is u:
            raise ValueError("output must be a distinct L-vector")
        if not u.flags.c_contiguous:
            u = np.ascontiguousarray(u)
        if self.backend is Backend.ORACLE:
            out[:] = self.matrix @ u
            return out
        if self.backend is Backend.FUSED:
            ev = self._ev if scratch is None else scratch
            self._fused(u, ev, counts)
        else:
            ev = self._multipass(u, on_alloc, counts)
        K.scatter_ordered(ev.reshape(-1), self.restriction.offsets, self.restriction.order, out)
        return out

    def _fused(self, u, ev, counts):
        if self.kind is BPKind.BP1:
            if self.collocated:
                K.fused_mass_collocated(u, self._idx, self._W, ev, counts)
            else:
                K.fused_mass(u, self._idx, self._W, self._B, self._Bt, self._s_ue,
                             self._s_t1, self._s_t2, self._s_q, ev, counts)
        else:
            K.fused_diff(u, self._idx, self._W, self._B, self._D, self._Bt, self._Dt,
                         self.collocated, self._s_ue, self._s_t1, self._s_t2, self._s_q,
                         ev, counts)

    def _multipass(self, u, on_alloc, counts):
        n, q, E = self.basis.n, self.basis.q, self.restriction.nelem

        def temp(name, shape, qfield=False):
            a = np.empty(shape)
            if on_alloc is not None:
                on_alloc(TempAlloc(name, shape, a.nbytes, qfield))
            return a

        ue = temp("e_in", (E, n, n, n))
        K.pass_gather(u, self._idx, ue)
        if self.kind is BPKind.BP1:
            if self.collocated:
                v = temp("qpt_out", (E, q, q, q), True)
                K.pass_qf_mass(self._W, ue, v, counts)
                return v
            g = temp("qpt_in", (E, q, q, q), True)
            K.pass_interp(ue, self._B, self._s_t1, self._s_t2, g, counts)
            v = temp("qpt_out", (E, q, q, q), True)
            K.pass_qf_mass(self._W, g, v, counts)
            ev = temp("e_out", (E, n, n, n))
            K.pass_interp_t(v, self._Bt, self._s_t1, self._s_t2, ev, counts)
            return ev
        gq = temp("qpt_grad", (3, E, q, q, q), True)
        K.pass_grad(ue, self._B, self._D, self.collocated, self._s_t1, self._s_t2, gq, counts)
        vq = temp("qpt_flux", (3, E, q, q, q), True)
        K.pass_qf_diff(self._W, gq, vq, counts)
        ev = temp("e_out", (E, n, n, n))
        K.pass_grad_t(vq, self._Bt, self._Dt, self.collocated, self._s_t1, self._s_t2,
                      ev, counts)
        return ev

    def element_flops(self, u: np.ndarray | None = None) -> np.ndarray:
        """Per-element multiply/add counts from one instrumented apply."""
        if self.backend is Backend.ORACLE:
            raise ValueError("the oracle backend has no element kernel to instrument")
        if u is None:
            u = np.random.default_rng(0).standard_normal(self.lsize)
        counts = np.zeros(self.restriction.nelem, dtype=np.int64)
        self._run(u, None, None, None, counts)
        return counts


def build_operator(kind: BPKind | str, mesh: HexMesh, backend: Backend | str = Backend.FUSED,
                   basis: TensorBasis | None = None, threads: int | None = None) -> OperatorHandle:
    """Set up basis, restriction and geometric factors and bind them to ``backend``."""
    kind = BPKind(kind)
    if basis is None:
        basis = default_basis(kind, mesh.p)
    restriction = build_restriction(mesh)
    factors = geometric_factors(kind, mesh, basis)
    return OperatorHandle(kind, backend, basis, restriction, factors, threads=threads)


def with_backend(handle: OperatorHandle, backend: Backend | str) -> OperatorHandle:
    """Rebind the setup of ``handle`` to another backend without recomputing it."""
    return OperatorHandle(handle.kind, backend, handle.basis, handle.restriction,
                          handle.factors, threads=handle.nchunks)


def assemble_oracle(kind, basis: TensorBasis, restriction: ElementRestriction,
                    factors: GeomFactors, lsize: int) -> sp.csr_matrix:
    """Explicit matrix built column by column from the multipass operator."""
    if lsize > ORACLE_MAX_LSIZE:
        raise OracleSizeError(
            f"oracle assembly limited to {ORACLE_MAX_LSIZE} dofs, got {lsize}")
    if lsize != restriction.lsize:
        raise ValueError(f"L-size {lsize} does not match restriction ({restriction.lsize})")
    op = OperatorHandle(kind, Backend.MULTIPASS, basis, restriction, factors, threads=1)
    rows, cols, vals = [], [], []
    e = np.zeros(lsize)
    col = np.empty(lsize)
    for j in range(lsize):
        e[j] = 1.0
        op.apply(e, col)
        e[j] = 0.0
        nz = np.flatnonzero(col)
        rows.append(nz)
        cols.append(np.full(nz.size, j))
        vals.append(col[nz])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(lsize, lsize))
    A.sort_indices()
    return A


@dataclass(frozen=True)
class CostModel:
    """Per-element operation and data-movement model for the stiffness kernel.

    Flops are ``12 (p+1)^4 + 15 (p+1)^3`` with collocated quadrature, the
    first term doubled otherwise.  Reads are ``7 (p+1)^3`` values (the
    solution plus six geometric factors) regardless of quadrature; with
    ``q != p+1`` the stored factors actually number ``6 q^3`` per element, so
    the read figure is the collocated count and understates traffic there.
    """

    p: int
    collocated: bool
    flops_per_elem: int
    reads_per_elem: int

    @property
    def arithmetic_intensity(self) -> float:
        """Flops per 8-byte value read."""
        return self.flops_per_elem / self.reads_per_elem

    @property
    def flops_per_byte(self) -> float:
        return self.arithmetic_intensity / 8.0


def cost_model(p: int, collocated: bool = True) -> CostModel:
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    n = p + 1
    first = 12 * n ** 4 * (1 if collocated else 2)
    return CostModel(p, bool(collocated), first + 15 * n ** 3, 7 * n ** 3)


def count_flops(handle: OperatorHandle, u: np.ndarray | None = None) -> float:
    """Mean executed multiplies and adds per element for one apply."""
    return float(handle.element_flops(u).mean())
