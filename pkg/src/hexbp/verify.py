"""Oracle-equivalence and operator-algebra checks on small meshes."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .mesh import build_box_mesh
from .operators import Backend, BPKind, OperatorHandle, build_operator, with_backend

MESHES = ((1, 1, 1), (2, 2, 2), (3, 2, 1))
DEGREES = (1, 2, 3, 4)
AMPLITUDES = (0.0, 0.1)
TOL = 1e-12


@dataclass
class CheckResult:
    kind: str
    p: int
    dims: tuple[int, int, int]
    deform: float
    fused_err: float
    multipass_err: float
    symmetry_err: float
    # BP3/BP5: |A 1|_inf / |A|_inf; BP1: smallest u^T A u / |u|^2 seen
    algebra: float

    @property
    def equivalent(self) -> bool:
        return self.fused_err <= TOL and self.multipass_err <= TOL

    @property
    def algebra_ok(self) -> bool:
        if self.symmetry_err > TOL:
            return False
        if self.kind == BPKind.BP1.value:
            return self.algebra > 0.0
        return self.algebra <= TOL

    @property
    def passed(self) -> bool:
        return self.equivalent and self.algebra_ok

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        ex, ey, ez = self.dims
        extra = "min_energy" if self.kind == BPKind.BP1.value else "nullspace"
        return (f"{tag} {self.kind} p={self.p} mesh={ex}x{ey}x{ez} a={self.deform:g} "
                f"fused={self.fused_err:.2e} multipass={self.multipass_err:.2e} "
                f"symmetry={self.symmetry_err:.2e} {extra}={self.algebra:.2e}")


def relative_error(a: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(a - ref) / np.linalg.norm(ref))


def check(kind, p: int, dims, deform: float, nvec: int = 10, seed: int = 0) -> CheckResult:
    kind = BPKind(kind)
    mesh = build_box_mesh(dims, p, deform=deform)
    fused = build_operator(kind, mesh, Backend.FUSED)
    multi = with_backend(fused, Backend.MULTIPASS)
    oracle = with_backend(fused, Backend.ORACLE)
    rng = np.random.default_rng([seed, p, *dims, int(deform * 1000)])
    ef = em = sym = 0.0
    energy = np.inf
    for _ in range(nvec):
        u = rng.standard_normal(fused.lsize)
        v = rng.standard_normal(fused.lsize)
        ref = oracle.apply(u)
        ef = max(ef, relative_error(fused.apply(u), ref))
        em = max(em, relative_error(multi.apply(u), ref))
        Au, Av = fused.apply(u), fused.apply(v)
        sym = max(sym, abs(u @ Av - v @ Au) / (np.linalg.norm(Au) * np.linalg.norm(v)))
        energy = min(energy, float(u @ Au) / float(u @ u))
    if kind is BPKind.BP1:
        algebra = energy
    else:
        norm = spla.norm(oracle.matrix, np.inf)
        algebra = float(np.abs(fused.apply(np.ones(fused.lsize))).max() / norm)
    return CheckResult(kind.value, p, tuple(dims), deform, ef, em, float(sym), algebra)


def run_suite(kinds=tuple(BPKind), degrees=DEGREES, meshes=MESHES, amplitudes=AMPLITUDES,
              nvec: int = 10, seed: int = 0):
    for kind, p, dims, a in itertools.product(kinds, degrees, meshes, amplitudes):
        yield check(kind, p, dims, a, nvec=nvec, seed=seed)


def semidefinite_spectrum(op: OperatorHandle) -> np.ndarray:
    """Eigenvalues of the assembled operator (tiny meshes only)."""
    A = with_backend(op, Backend.ORACLE).matrix.toarray()
    return np.linalg.eigvalsh(0.5 * (A + A.T))
