"""Structured hexahedral box meshes and the L-vector / E-vector restriction.

Global nodes are numbered lexicographically over the ``(ex*p+1, ey*p+1, ez*p+1)``
node lattice with x fastest; elements and element-local nodes use the same
convention.  The restriction ``R`` gathers global (L) vectors into
element-replicated (E) vectors of shape ``(E, (p+1)**3)``; its transpose sums
them back in a fixed order so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import gll_rule

MAX_DEFORM = 0.15


@dataclass(frozen=True)
class HexMesh:
    dims: tuple[int, int, int]
    p: int
    extent: tuple[float, float, float]
    deform: float
    coords: np.ndarray       # (nnodes, 3)
    elem_nodes: np.ndarray   # (nelem, (p+1)**3), int64

    @property
    def nelem(self) -> int:
        return self.elem_nodes.shape[0]

    @property
    def nnodes(self) -> int:
        return self.coords.shape[0]

    @property
    def lattice(self) -> tuple[int, int, int]:
        ex, ey, ez = self.dims
        return ex * self.p + 1, ey * self.p + 1, ez * self.p + 1

    def boundary_nodes(self) -> np.ndarray:
        """Sorted indices of all nodes on the box surface."""
        nx, ny, nz = self.lattice
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        on = ((i == 0) | (i == nx - 1) | (j == 0) | (j == ny - 1)
              | (k == 0) | (k == nz - 1))
        return np.flatnonzero(on.ravel())


def _axis_coords(ne: int, p: int, length: float, ref: np.ndarray) -> np.ndarray:
    x = np.empty(ne * p + 1)
    h = length / ne
    for e in range(ne):
        x[e * p:(e + 1) * p + 1] = (e + 0.5 * (ref + 1.0)) * h
    x[-1] = length
    return x


def element_connectivity(dims, p: int) -> np.ndarray:
    ex, ey, ez = dims
    n = p + 1
    nx, ny = ex * p + 1, ey * p + 1
    c, b, a = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ke, je, ie = np.meshgrid(np.arange(ez), np.arange(ey), np.arange(ex), indexing="ij")
    gi = ie.reshape(-1, 1) * p + a.reshape(1, -1)
    gj = je.reshape(-1, 1) * p + b.reshape(1, -1)
    gk = ke.reshape(-1, 1) * p + c.reshape(1, -1)
    return np.ascontiguousarray(gi + nx * (gj + ny * gk), dtype=np.int64)


def deformation(xyz: np.ndarray, extent, amplitude: float) -> np.ndarray:
    """Displaced coordinates ``x_i + a L_i sin(pi x/Lx) sin(pi y/Ly) sin(pi z/Lz)``.

    The map is ``I + a L (grad S)^T`` with determinant ``1 + a L . grad S >=
    1 - 1.16 pi a``, so it stays invertible for every allowed amplitude, and the
    displacement vanishes on the box surface.
    """
    L = np.asarray(extent, dtype=np.float64)
    if amplitude == 0.0:
        return xyz.copy()
    s = np.prod(np.sin(np.pi * xyz / L), axis=1)
    return xyz + amplitude * L * s[:, None]


def build_box_mesh(dims, p: int, extent=(1.0, 1.0, 1.0), deform: float = 0.0) -> HexMesh:
    dims = tuple(int(d) for d in dims)
    extent = tuple(float(x) for x in extent)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"element counts must be three integers >= 1, got {dims}")
    if p < 1:
        raise ValueError(f"geometric degree must be >= 1, got {p}")
    if len(extent) != 3 or min(extent) <= 0.0:
        raise ValueError(f"domain extents must be positive, got {extent}")
    if not 0.0 <= deform <= MAX_DEFORM:
        raise ValueError(f"deformation amplitude must lie in [0, {MAX_DEFORM}], got {deform}")
    ref = gll_rule(p + 1).points
    axes = [_axis_coords(ne, p, L, ref) for ne, L in zip(dims, extent)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    xyz = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    xyz = deformation(xyz, extent, deform)
    return HexMesh(dims, p, extent, float(deform), xyz, element_connectivity(dims, p))


def write_mesh(mesh: HexMesh, path) -> None:
    ex, ey, ez = mesh.dims
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"hexmesh {ex} {ey} {ez} {mesh.p} {mesh.deform!r}\n")
        for x, y, z in mesh.coords:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def read_mesh(path) -> HexMesh:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 6 or head[0] != "hexmesh":
        raise ValueError(f"{path}: not a hexmesh file")
    dims = tuple(int(v) for v in head[1:4])
    p, deform = int(head[4]), float(head[5])
    coords = np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()])
    expected = np.prod([d * p + 1 for d in dims])
    if coords.shape != (expected, 3):
        raise ValueError(f"{path}: expected {expected} nodes, found {coords.shape[0]}")
    # the far corner is fixed by the displacement field
    extent = tuple(float(v) for v in coords[-1])
    return HexMesh(dims, p, extent, deform, coords, element_connectivity(dims, p))


@dataclass(frozen=True)
class ElementRestriction:
    """Gather/scatter between L-vectors and E-vectors.

    ``offsets``/``order`` describe the transpose map in CSR form: the E-vector
    entries feeding L-dof ``g`` are ``order[offsets[g]:offsets[g+1]]``, in
    ascending (element, local node) order.
    """

    indices: np.ndarray      # (nelem, nloc)
    lsize: int
    multiplicity: np.ndarray
    offsets: np.ndarray
    order: np.ndarray

    @property
    def nelem(self) -> int:
        return self.indices.shape[0]

    @property
    def nloc(self) -> int:
        return self.indices.shape[1]

    @property
    def esize(self) -> int:
        return self.indices.size

    def gather(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.lsize,):
            raise ValueError(f"L-vector must have length {self.lsize}, got {u.shape}")
        return u[self.indices]

    def scatter_add(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.esize:
            raise ValueError(f"E-vector must have {self.esize} entries, got {v.size}")
        # bincount accumulates sequentially in input order
        return np.bincount(self.indices.ravel(), weights=v.ravel(), minlength=self.lsize)


def build_restriction(mesh: HexMesh) -> ElementRestriction:
    idx = np.ascontiguousarray(mesh.elem_nodes, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= mesh.nnodes:
        raise ValueError("element connectivity references nodes outside the mesh")
    flat = idx.ravel()
    mult = np.bincount(flat, minlength=mesh.nnodes)
    order = np.argsort(flat, kind="stable").astype(np.int64)
    offsets = np.zeros(mesh.nnodes + 1, dtype=np.int64)
    np.cumsum(mult, out=offsets[1:])
    for a in (idx, mult, order, offsets):
        a.setflags(write=False)
    return ElementRestriction(idx, mesh.nnodes, mult, offsets, order)


def gather(restriction: ElementRestriction, u: np.ndarray) -> np.ndarray:
    return restriction.gather(u)


def scatter_add(restriction: ElementRestriction, v: np.ndarray) -> np.ndarray:
    return restriction.scatter_add(v)
