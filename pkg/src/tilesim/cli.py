"""Command-line front end: runs, sweeps, speedup tables, protocol checks.

Subcommands
    run       simulate one built-in kernel or trace file, emit a JSON report
    asm-run   assemble a program file and simulate it
    sweep     repeat one workload across an axis of values, emit CSV
    speedup   compare saved reports against a baseline, emit plot-ready CSV
    check     exhaustively model-check the coherence protocol at small bounds

Reports are deterministic JSON (sorted keys, no timestamps): the same
config, workload, and seed always produce byte-identical output.

Sweep CSV columns (stable; never parse the human-readable log instead):
    axis, value, workload, outcome, total_cycles, instructions, ipc,
    l1d_miss_rate, l15_miss_rate, mean_memory_latency, noc_flits_delivered
Speedup CSV columns (stable):
    cores, workload, total_cycles, speedup

Exit codes: 0 success; 1 correctness violation (oracle mismatch, deadlock,
coherence invariant breach, model-check counterexample); 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from typing import Dict, List, Optional, Sequence

from . import checker
from . import workload as wl
from .config import ConfigError, Latencies, SimConfig
from .engine import CorruptCheckpoint, DeadlockDetected, VersionMismatch
from .system import (DirectoryMismatch, OracleMismatch, SwmrViolation,
                     run_experiment, workload_fields)


class UnknownAxis(ValueError):
    """Sweep axis is neither a config field nor a workload parameter."""


class WorkloadMismatch(ValueError):
    """Speedup inputs do not describe the same work."""


_USAGE_ERRORS = (ConfigError, wl.ParamOutOfRange, wl.UnknownKernel,
                 wl.AsmError, wl.TraceError, UnknownAxis, WorkloadMismatch,
                 VersionMismatch, CorruptCheckpoint,
                 checker.StateSpaceBoundExceeded, FileNotFoundError,
                 IsADirectoryError)
_CORRECTNESS_ERRORS = (OracleMismatch, DeadlockDetected, SwmrViolation,
                       DirectoryMismatch)

SWEEP_COLUMNS = ("axis", "value", "workload", "outcome", "total_cycles",
                 "instructions", "ipc", "l1d_miss_rate", "l15_miss_rate",
                 "mean_memory_latency", "noc_flits_delivered")
SPEEDUP_COLUMNS = ("cores", "workload", "total_cycles", "speedup")


# -- speedup tables --------------------------------------------------------------------

def _parallelism(report: dict) -> Optional[int]:
    desc = report.get("workload_desc", {})
    for key in ("ncores", "cores"):
        if key in desc:
            v = desc[key]
            return len(v) if isinstance(v, (list, tuple)) else int(v)
    return None


def _work_identity(report: dict) -> tuple:
    """What is being computed, independent of how many cores share it."""
    desc = report.get("workload_desc", {})
    items = tuple(sorted((k, repr(v)) for k, v in desc.items()
                         if k not in ("ncores", "cores")))
    return items


def compute_speedup(baseline: dict, others: Sequence[dict]) -> List[dict]:
    """Cycle-count speedups of each report relative to the baseline.

    All reports must describe the same computation (same kernel, problem
    size, and seed); only the degree of parallelism may differ. The
    baseline appears as the first row with speedup exactly 1.0. Ratios of
    cycle counts are scale-free: timing every run in different units
    changes nothing.
    """
    ident = _work_identity(baseline)
    rows = []
    base_cycles = baseline["total_cycles"]
    for rep in [baseline, *others]:
        if _work_identity(rep) != ident:
            raise WorkloadMismatch(
                f"report for {rep.get('workload')!r} does not match "
                f"baseline {baseline.get('workload')!r}")
        rows.append({
            "cores": _parallelism(rep),
            "workload": rep.get("workload"),
            "total_cycles": rep["total_cycles"],
            "speedup": (1.0 if rep is baseline
                        else base_cycles / rep["total_cycles"]),
        })
    return rows


# -- sweeps ----------------------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)
                  if f.name != "latencies"}
_LATENCY_FIELDS = {f.name for f in dataclasses.fields(Latencies)}


def _apply_axis(config: SimConfig, desc: dict, axis: str, value):
    """Return (config, desc) with one parameter replaced by value."""
    if axis != "kind" and axis in workload_fields(desc["kind"]):
        d = dict(desc)
        d[axis] = value
        return config, d
    if axis in _LATENCY_FIELDS:
        lat = dataclasses.replace(config.latencies, **{axis: int(value)})
        return dataclasses.replace(config, latencies=lat), desc
    if axis in _CONFIG_FIELDS:
        want = _CONFIG_FIELDS[axis].type
        if want in (int, "int"):
            value = int(value)
        return dataclasses.replace(config, **{axis: value}), desc
    raise UnknownAxis(axis)


def _summary_row(axis: str, value, report: dict) -> dict:
    instructions = sum(c.get("instructions_retired",
                             c.get("trace", {}).get("loads", 0)
                             + c.get("trace", {}).get("stores", 0))
                       for c in report["cores"].values())
    cycles = report["total_cycles"]
    der = report["derived"]

    def mean(d: Dict[str, float]) -> float:
        return sum(d.values()) / len(d) if d else 0.0

    return {
        "axis": axis,
        "value": value,
        "workload": report["workload"],
        "outcome": report["outcome"],
        "total_cycles": cycles,
        "instructions": instructions,
        "ipc": instructions / max(cycles, 1),
        "l1d_miss_rate": mean(der["l1d_miss_rate"]),
        "l15_miss_rate": mean(der["l15_miss_rate"]),
        "mean_memory_latency": der["mean_memory_latency"],
        "noc_flits_delivered": sum(n["flits_delivered"]
                                   for n in report["noc"].values()),
    }


def sweep(config: SimConfig, desc: dict, axis: str,
          values: Sequence, max_cycles=None) -> List[dict]:
    """One run per value; rows come back sorted by the axis value."""
    rows = []
    for value in values:
        cfg_v, desc_v = _apply_axis(config, desc, axis, value)
        report = run_experiment(cfg_v, desc_v, max_cycles=max_cycles)
        rows.append(_summary_row(axis, value, report))
    rows.sort(key=lambda r: (isinstance(r["value"], str), r["value"]))
    return rows


# -- argument plumbing -----------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration",
                             "defaults come from --config or the built-ins")
    g.add_argument("--config", metavar="FILE",
                   help="JSON file with base configuration values")
    for name, field in _CONFIG_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if name == "chipset_attach":
            g.add_argument(flag, metavar="ROW,COL", default=None)
        elif field.type in (int, "int"):
            g.add_argument(flag, type=int, default=None)
        else:
            g.add_argument(flag, default=None)
    for name in sorted(_LATENCY_FIELDS):
        g.add_argument("--lat-" + name.replace("_", "-"), type=int,
                       default=None, metavar="CYCLES")


def _build_config(args) -> SimConfig:
    if args.config:
        with open(args.config) as f:
            cfg = SimConfig.from_json_dict(json.load(f))
    else:
        cfg = SimConfig()
    overrides = {}
    for name in _CONFIG_FIELDS:
        v = getattr(args, name)
        if v is None:
            continue
        if name == "chipset_attach":
            r, c = (int(x, 0) for x in str(v).split(","))
            v = (r, c)
        overrides[name] = v
    lat_overrides = {name: getattr(args, "lat_" + name)
                     for name in _LATENCY_FIELDS
                     if getattr(args, "lat_" + name) is not None}
    if lat_overrides:
        overrides["latencies"] = dataclasses.replace(cfg.latencies,
                                                     **lat_overrides)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _workload_desc(args) -> dict:
    name = args.workload
    if name.startswith("trace:"):
        desc = {"kind": "trace", "path": name[len("trace:"):]}
        if args.ncores is not None:
            desc["cores"] = args.ncores
        return desc
    if name not in wl.KERNEL_NAMES:
        raise wl.UnknownKernel(
            f"{name!r}: choose one of {', '.join(wl.KERNEL_NAMES)} "
            f"or trace:PATH")
    desc = {"kind": "kernel", "name": name, "n": args.n}
    if args.ncores is not None:
        desc["ncores"] = args.ncores
    if args.seed is not None:
        desc["seed"] = args.seed
    return desc


def _emit_json(doc: dict, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(rows: List[dict], columns: Sequence[str],
              out: Optional[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if out:
        with open(out, "w") as f:
            f.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _run_and_report(args, desc: dict) -> None:
    cfg = _build_config(args)
    trace_fh = open(args.trace, "w") if args.trace else None
    try:
        tracer = ((lambda line: print(line, file=trace_fh))
                  if trace_fh else None)
        report = run_experiment(
            cfg, desc,
            max_cycles=args.max_cycles,
            save_at=args.save_at,
            checkpoint_path=args.checkpoint,
            restore_from=args.restore,
            tracer=tracer,
            verify=not args.no_verify)
    finally:
        if trace_fh:
            trace_fh.close()
    _emit_json(report, args.out)


# -- subcommands -----------------------------------------------------------------------

def _cmd_run(args) -> int:
    if args.restore:
        desc = None  # comes from the checkpoint
    else:
        desc = _workload_desc(args)
    _run_and_report(args, desc)
    return 0


def _cmd_asm_run(args) -> int:
    desc = {"kind": "asm", "path": args.program}
    if args.ncores is not None:
        desc["ncores"] = args.ncores
    _run_and_report(args, desc)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    desc = _workload_desc(args)
    values = []
    for tok in args.values.split(","):
        tok = tok.strip()
        try:
            values.append(int(tok, 0))
        except ValueError:
            values.append(tok)
    rows = sweep(cfg, desc, args.axis, values, max_cycles=args.max_cycles)
    _emit_csv(rows, SWEEP_COLUMNS, args.out)
    return 0


def _cmd_speedup(args) -> int:
    reports = []
    for path in args.reports:
        with open(path) as f:
            reports.append(json.load(f))
    rows = compute_speedup(reports[0], reports[1:])
    _emit_csv(rows, SPEEDUP_COLUMNS, args.out)
    return 0


def _cmd_check(args) -> int:
    mutations = tuple(m for m in (args.mutations or "").split(",") if m)

    def progress(states, frontier):
        print(f"  explored {states} states, frontier {frontier}",
              file=sys.stderr)

    try:
        result = checker.model_check(
            tiles=args.tiles, blocks=args.blocks, max_ops=args.max_ops,
            block_size_bytes=args.block_size_bytes, mutations=mutations,
            include_evicts=not args.no_evicts, home_evicts=args.home_evicts,
            max_states=args.max_states, symmetry=not args.no_symmetry,
            progress=progress if args.progress else None)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    doc = {
        "ok": result.ok,
        "states": result.states,
        "transitions": result.transitions,
        "config": result.config,
        "violation": None if result.violation is None else {
            "kind": result.violation.kind,
            "message": result.violation.message,
            "trace": list(result.violation.trace),
        },
    }
    if args.out:
        _emit_json(doc, args.out)
    if result.ok:
        print(f"PASS: {result.states} states, "
              f"{result.transitions} transitions, no violations")
        return 0
    v = result.violation
    print(f"FAIL: {v.kind} after {result.states} states")
    print(f"  {v.message}")
    for line in v.trace:
        print(f"    {line}")
    return 1


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilesim",
        description="Deterministic simulator of a tiled RV64/RVV multicore "
                    "with MESI-coherent caches and mesh interconnects.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, workload_required):
        p.add_argument("--out", metavar="FILE",
                       help="write the JSON report here instead of stdout")
        p.add_argument("--trace", metavar="FILE",
                       help="write a protocol message trace here")
        p.add_argument("--max-cycles", type=int, default=None)
        p.add_argument("--no-verify", action="store_true",
                       help="skip oracle and invariant verification")
        p.add_argument("--save-at", type=int, metavar="CYCLE", default=None,
                       help="checkpoint the run at this cycle, then continue")
        p.add_argument("--checkpoint", metavar="FILE",
                       default="checkpoint.json",
                       help="where --save-at writes (default: %(default)s)")
        if workload_required:
            p.add_argument("--restore", metavar="FILE", default=None,
                           help="resume from a checkpoint instead of "
                                "starting a workload")
            p.add_argument("--workload", default=None,
                           help="kernel name (%s) or trace:PATH"
                                % ", ".join(wl.KERNEL_NAMES))
            p.add_argument("--n", type=int, default=1024,
                           help="problem size for kernels")
            p.add_argument("--ncores", type=int, default=None,
                           help="cores running the workload "
                                "(default: all tiles)")
            p.add_argument("--seed", type=int, default=None,
                           help="workload data/value seed")
        _add_config_flags(p)

    p_run = sub.add_parser("run", help="simulate one workload")
    add_run_flags(p_run, workload_required=True)
    p_run.set_defaults(func=_cmd_run)

    p_asm = sub.add_parser("asm-run", help="assemble and simulate a program")
    p_asm.add_argument("program", help="assembly source file")
    p_asm.add_argument("--ncores", type=int, default=None)
    p_asm.add_argument("--restore", default=None, help=argparse.SUPPRESS)
    add_run_flags(p_asm, workload_required=False)
    p_asm.set_defaults(func=_cmd_asm_run)

    p_sweep = sub.add_parser("sweep",
                             help="rerun one workload across an axis")
    p_sweep.add_argument("--axis", required=True,
                         help="config field, latency field, or workload "
                              "parameter to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values")
    p_sweep.add_argument("--out", metavar="FILE",
                         help="write CSV here instead of stdout")
    p_sweep.add_argument("--max-cycles", type=int, default=None)
    p_sweep.add_argument("--workload", default=None)
    p_sweep.add_argument("--n", type=int, default=1024)
    p_sweep.add_argument("--ncores", type=int, default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_spd = sub.add_parser("speedup",
                           help="speedups of report files vs the first one")
    p_spd.add_argument("reports", nargs="+", metavar="REPORT.json",
                       help="baseline first, then the comparison runs")
    p_spd.add_argument("--out", metavar="FILE")
    p_spd.set_defaults(func=_cmd_speedup)

    p_chk = sub.add_parser("check",
                           help="exhaustive protocol model check")
    p_chk.add_argument("--tiles", type=int, default=2)
    p_chk.add_argument("--blocks", type=int, default=1)
    p_chk.add_argument("--max-ops", type=int, default=2,
                       help="memory operations budget per tile")
    p_chk.add_argument("--block-size-bytes", type=int, default=64)
    p_chk.add_argument("--mutations", default="",
                       help="comma-separated protocol-table mutations "
                            "(testing hook; a correct table has none)")
    p_chk.add_argument("--home-evicts", type=int, default=1,
                       help="directory-entry eviction budget per block")
    p_chk.add_argument("--no-evicts", action="store_true",
                       help="disable spontaneous cache evictions")
    p_chk.add_argument("--no-symmetry", action="store_true",
                       help="disable symmetry reduction")
    p_chk.add_argument("--max-states", type=int, default=5_000_000)
    p_chk.add_argument("--progress", action="store_true")
    p_chk.add_argument("--out", metavar="FILE",
                       help="also write the result as JSON")
    p_chk.set_defaults(func=_cmd_check)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workload", "x") is None and not getattr(
            args, "restore", None):
        parser.error("one of --workload or --restore is required")
    try:
        return args.func(args)
    except _CORRECTNESS_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except _USAGE_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
