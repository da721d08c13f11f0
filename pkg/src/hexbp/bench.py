"""Bake-off benchmark harness.

Each measurement runs a fixed number of unpreconditioned CG iterations on a
random right-hand side and reports throughput in DOF-iterations per second,
alongside the per-element cost model.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numba
import numpy as np

from .mesh import build_box_mesh
from .operators import Backend, BPKind, build_operator, cost_model, with_backend
from .solver import BCSet, cg, constrain

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "bp", "backend", "p", "q", "elements", "dofs", "cg_iters", "seconds", "throughput",
    "model_flops_per_elem", "model_reads_per_elem", "model_ai", "threads",
)
# columns that do not depend on wall-clock timing
STABLE_FIELDS = tuple(f for f in CSV_FIELDS if f not in ("seconds", "throughput"))


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    bp: str
    degrees: list[int]
    dims: list[tuple[int, int, int]] | None = None
    target_dofs: list[int] | None = None
    deform: float = 0.0
    backends: list[str] = field(default_factory=lambda: ["fused"])
    fixed_cg_iters: int = 20
    warmup_repeats: int = 2
    timed_repeats: int = 5
    threads: int | None = None
    output: str | None = None
    seed: int = 0

    def __post_init__(self):
        try:
            self.bp = BPKind(str(self.bp).lower()).value
            self.backends = [Backend(str(b).lower()).value for b in self.backends]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.degrees or any(int(p) < 1 for p in self.degrees):
            raise ConfigError("degrees must be a non-empty list of integers >= 1")
        self.degrees = [int(p) for p in self.degrees]
        if (self.dims is None) == (self.target_dofs is None):
            raise ConfigError("give exactly one of 'dims' or 'target_dofs'")
        if self.dims is not None:
            dims = self.dims
            if dims and isinstance(dims[0], (int, float)):
                dims = [dims]
            try:
                self.dims = [tuple(int(v) for v in d) for d in dims]
            except TypeError:
                raise ConfigError("dims must be [ex, ey, ez] or a list of them") from None
            if not self.dims or any(len(d) != 3 or min(d) < 1 for d in self.dims):
                raise ConfigError("each dims entry must be three integers >= 1")
        else:
            t = self.target_dofs
            t = [t] if isinstance(t, (int, float)) else list(t)
            if not t or any(int(v) < 8 for v in t):
                raise ConfigError("target_dofs entries must be >= 8")
            self.target_dofs = [int(v) for v in t]
        if self.fixed_cg_iters < 1:
            raise ConfigError("fixed_cg_iters must be >= 1")
        if self.warmup_repeats < 0 or self.timed_repeats < 1:
            raise ConfigError("warmup_repeats must be >= 0 and timed_repeats >= 1")
        if self.threads is not None and not 1 <= self.threads <= numba.config.NUMBA_NUM_THREADS:
            raise ConfigError(
                f"threads must be in [1, {numba.config.NUMBA_NUM_THREADS}] "
                "(raise NUMBA_NUM_THREADS for more)")
        if not 0.0 <= float(self.deform) <= 0.15:
            raise ConfigError("deform must lie in [0, 0.15]")
        if int(self.seed) < 0:
            raise ConfigError("seed must be an unsigned integer")
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> "BenchConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)


@dataclass
class BenchRecord:
    bp: str
    backend: str
    p: int
    q: int
    elements: int
    dofs: int
    cg_iters: int
    seconds: float
    throughput: float
    model_flops_per_elem: int
    model_reads_per_elem: int
    model_ai: float
    threads: int
    residual_history: list[float] = field(default_factory=list, compare=False)
    seed: int | None = field(default=None, compare=False)
    error: str | None = field(default=None, compare=False)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_FIELDS}


def auto_dims(p: int, target: int) -> tuple[int, int, int]:
    """Largest cube ``(e, e, e)`` with ``(e p + 1)^3 <= target`` (at least one element)."""
    e = 1
    while ((e + 1) * p + 1) ** 3 <= target:
        e += 1
    return (e, e, e)


def _sizes(config: BenchConfig, p: int) -> list[tuple[int, int, int]]:
    if config.dims is not None:
        return list(config.dims)
    return [auto_dims(p, t) for t in config.target_dofs]


def run_bench(config: BenchConfig) -> list[BenchRecord]:
    """Measure every (size, degree, backend) combination in ``config``.

    Setup (mesh, factors, oracle assembly) is excluded from timing.  A failing
    combination yields a record with ``error`` set and the sweep continues.
    """
    if config.threads is not None:
        numba.set_num_threads(config.threads)
    threads = numba.get_num_threads()
    kind = BPKind(config.bp)
    records = []
    for p in config.degrees:
        for si, dims in enumerate(_sizes(config, p)):
            try:
                mesh = build_box_mesh(dims, p, deform=config.deform)
                base = build_operator(kind, mesh, Backend.MULTIPASS, threads=threads)
            except Exception as exc:  # noqa: BLE001  -- reported per run
                for b in config.backends:
                    records.append(_failed(config, b, p, dims, threads, exc))
                continue
            rng = np.random.default_rng([config.seed, p, si])
            rhs = rng.standard_normal(base.lsize)
            bcs = BCSet.empty()
            if kind is not BPKind.BP1:
                bnd = mesh.boundary_nodes()
                rhs[bnd] = 0.0
                bcs = BCSet.homogeneous(bnd)
            for b in config.backends:
                try:
                    op = with_backend(base, b)
                    records.append(_measure(config, op, bcs, rhs, threads))
                except Exception as exc:  # noqa: BLE001
                    records.append(_failed(config, b, p, dims, threads, exc))
    return records


def _measure(config: BenchConfig, op, bcs: BCSet, rhs: np.ndarray, threads: int) -> BenchRecord:
    A = constrain(op, bcs)
    iters = config.fixed_cg_iters

    def sweep():
        t0 = time.perf_counter()
        _, rep = cg(A, rhs, rel_tol=0.0, max_iter=iters)
        return time.perf_counter() - t0, rep

    for _ in range(config.warmup_repeats):
        sweep()
    best, report = math.inf, None
    for _ in range(config.timed_repeats):
        dt, rep = sweep()
        if report is None:
            report = rep
        best = min(best, dt)
    model = cost_model(op.p, op.collocated)
    dofs = op.lsize
    return BenchRecord(
        bp=config.bp, backend=op.backend.value, p=op.p, q=op.basis.q,
        elements=op.restriction.nelem, dofs=dofs, cg_iters=report.iterations,
        seconds=best, throughput=dofs * report.iterations / best,
        model_flops_per_elem=model.flops_per_elem,
        model_reads_per_elem=model.reads_per_elem, model_ai=model.arithmetic_intensity,
        threads=threads, residual_history=report.history, seed=config.seed)


def _failed(config, backend, p, dims, threads, exc) -> BenchRecord:
    log.error("bp=%s backend=%s p=%d dims=%s failed: %s", config.bp, backend, p, dims, exc)
    model = cost_model(p, config.bp == BPKind.BP5.value)
    return BenchRecord(
        bp=config.bp, backend=str(backend), p=p, q=0, elements=int(np.prod(dims)), dofs=0,
        cg_iters=0, seconds=math.nan, throughput=math.nan,
        model_flops_per_elem=model.flops_per_elem, model_reads_per_elem=model.reads_per_elem,
        model_ai=model.arithmetic_intensity, threads=threads, seed=config.seed,
        error=f"{type(exc).__name__}: {exc}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def emit_csv(records, path) -> None:
    """Write successful records; failed runs are left to the log and plot comments."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for rec in records:
            if rec.error is not None:
                continue
            row = rec.row()
            w.writerow([_fmt(row[k]) for k in CSV_FIELDS])


_CSV_TYPES = {f.name: f.type for f in fields(BenchRecord)}


def read_csv(path) -> list[BenchRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            vals = {}
            for k in CSV_FIELDS:
                t = _CSV_TYPES[k]
                vals[k] = int(row[k]) if t == "int" else float(row[k]) if t == "float" else row[k]
            out.append(BenchRecord(**vals))
    return out


def emit_plotdata(records, path) -> None:
    """Blocks of ``dofs throughput`` per (backend, p), sorted, blank-line separated."""
    blocks: dict[tuple[str, int], dict[int, float]] = {}
    errors, seeds = [], set()
    for rec in records:
        if rec.seed is not None:
            seeds.add(rec.seed)
        if rec.error is not None:
            errors.append(rec)
            continue
        pts = blocks.setdefault((rec.backend, rec.p), {})
        pts[rec.dofs] = max(pts.get(rec.dofs, 0.0), rec.throughput)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sorted(seeds):
            fh.write(f"# seed={s}\n")
        for rec in errors:
            fh.write(f"# error backend={rec.backend} p={rec.p}: {rec.error}\n")
        for i, key in enumerate(sorted(blocks)):
            if i:
                fh.write("\n")
            fh.write(f"# backend={key[0]} p={key[1]}\n")
            for dofs in sorted(blocks[key]):
                fh.write(f"{dofs} {_fmt(float(blocks[key][dofs]))}\n")


def fusion_report(records, min_p: int = 4, min_dofs: int = 100_000) -> list[tuple[int, int, float]]:
    """``(p, dofs, fused / multipass throughput)`` for the large high-order runs."""
    by_key = {(r.backend, r.p, r.dofs): r.throughput for r in records if r.error is None}
    out = []
    for (b, p, dofs), tp in sorted(by_key.items()):
        if b == Backend.FUSED.value and p >= min_p and dofs >= min_dofs:
            ref = by_key.get((Backend.MULTIPASS.value, p, dofs))
            if ref:
                out.append((p, dofs, tp / ref))
    return out
