"""``bench`` command line: run sweeps, verify backends, print the cost model.

Exit codes: 0 success, 1 verification failure, 2 bad config/arguments,
3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numba

from .bench import BenchConfig, ConfigError, emit_csv, emit_plotdata, fusion_report, run_bench
from .operators import BPKind, cost_model
from .verify import AMPLITUDES, DEGREES, MESHES, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _mesh_arg(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected EXxEYxEZ, got {text!r}")
    return dims


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark sweep from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--output", help="CSV path (overrides config 'output')")
    run.add_argument("--plot", help="write plot data blocks to this path")
    run.add_argument("--threads", type=int)

    ver = sub.add_parser("verify", help="check fused/multipass against the assembled oracle")
    ver.add_argument("--p", type=int, choices=range(1, 9), metavar="P")
    ver.add_argument("--mesh", type=_mesh_arg)
    ver.add_argument("--bp", choices=[k.value for k in BPKind])

    mod = sub.add_parser("model", help="print the per-element cost model as CSV")
    mod.add_argument("--p-min", type=int, required=True)
    mod.add_argument("--p-max", type=int, required=True)
    mod.add_argument("--collocated", action="store_true")
    return ap


def _seed_override() -> int | None:
    raw = os.environ.get("BENCH_SEED")
    if raw is None:
        return None
    if not raw.isdigit():
        raise ConfigError(f"BENCH_SEED must be a decimal unsigned integer, got {raw!r}")
    return int(raw)


def cmd_run(args) -> int:
    try:
        config = BenchConfig.from_json(args.config)
        seed = _seed_override()
        if seed is not None:
            config.seed = seed
        if args.threads is not None:
            config.threads = args.threads
            config.__post_init__()
    except ConfigError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    output = args.output or config.output
    try:
        records = run_bench(config)
        if output:
            emit_csv(records, output)
        if args.plot:
            emit_plotdata(records, args.plot)
    except OSError as exc:
        print(f"bench: cannot write results: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"bench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"seed={config.seed} threads={numba.get_num_threads()} runs={len(records)}")
    for r in records:
        if r.error:
            print(f"  {r.backend:9s} p={r.p}: ERROR {r.error}")
        else:
            print(f"  {r.backend:9s} p={r.p} dofs={r.dofs:>9d} iters={r.cg_iters:>3d} "
                  f"time={r.seconds:.4e}s throughput={r.throughput:.4e}")
    for p, dofs, ratio in fusion_report(records):
        note = "ok" if ratio >= 0.9 else "below 0.9"
        print(f"  fused/multipass p={p} dofs={dofs}: {ratio:.2f} ({note})")
    return EXIT_OK


def cmd_verify(args) -> int:
    kinds = [BPKind(args.bp)] if args.bp else list(BPKind)
    degrees = [args.p] if args.p else list(DEGREES)
    meshes = [args.mesh] if args.mesh else list(MESHES)
    ok = True
    try:
        for res in run_suite(kinds, degrees, meshes, AMPLITUDES):
            print(res.line())
            ok &= res.passed
    except Exception as exc:  # noqa: BLE001
        print(f"bench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_model(args) -> int:
    if args.p_min < 1 or args.p_max < args.p_min:
        print("bench: need 1 <= p-min <= p-max", file=sys.stderr)
        return EXIT_USAGE
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["p", "collocated", "flops_per_elem", "reads_per_elem", "flops_per_value",
                "flops_per_byte"])
    for p in range(args.p_min, args.p_max + 1):
        m = cost_model(p, args.collocated)
        w.writerow([p, int(m.collocated), m.flops_per_elem, m.reads_per_elem,
                    format(m.arithmetic_intensity, ".17g"), format(m.flops_per_byte, ".17g")])
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    return {"run": cmd_run, "verify": cmd_verify, "model": cmd_model}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
