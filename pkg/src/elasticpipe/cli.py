"""``elasticpipe`` command line: gen, plan, simulate, compare, render.

Exit codes: 0 success, 2 unparsable input (arguments, configs, workloads,
documents), 3 no admissible plan, 4 file-system errors.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import documents, workload
from .checkpoint import CheckpointInfeasible
from .config import Configs, load_config
from .planner import MODES, NODE_LIMIT, PlanningError, plan, simulate_plan
from .render import RenderError, render_svg

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

COMPARE_KIND = "elasticpipe.comparison"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _node_limit(text: str) -> Optional[int]:
    if text.lower() in ("none", "exact"):
        return None
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("node limit must be >= 0")
    return value


def _add_workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workload", help="length file (one integer per line) or histogram JSON")
    p.add_argument("--preset", choices=workload.PRESETS,
                   help="synthesize the workload instead of reading --workload")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)


def _add_plan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="cluster/model/coefficient JSON or YAML")
    slices = p.add_mutually_exclusive_group()
    slices.add_argument("--slices", type=int, help="fixed number of slices N")
    slices.add_argument("--auto-slices", action="store_true", help="sweep N (default)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for unit solves")
    p.add_argument("--strict", action="store_true",
                   help="use the largest model-state share on every stage")
    p.add_argument("--node-limit", type=_node_limit, default=NODE_LIMIT,
                   help=f"branch-and-bound nodes per unit, or 'exact' (default {NODE_LIMIT})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="elasticpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic workload")
    g.add_argument("--preset", required=True, choices=workload.PRESETS)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--context-cap", type=int, default=workload.DEFAULT_CONTEXT_CAP)
    g.add_argument("--low", type=int, default=4096, help="uniform preset lower bound")
    g.add_argument("--high", type=int, default=4096, help="uniform preset upper bound")
    g.add_argument("--out", required=True)

    p = sub.add_parser("plan", help="plan grouping, chunking and checkpointing")
    _add_workload_args(p)
    _add_plan_args(p)
    p.add_argument("--mode", choices=MODES, default="main")
    p.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="simulate a plan document")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="simulate the main plan against ablations")
    _add_workload_args(c)
    _add_plan_args(c)
    c.add_argument("--modes", default=",".join(MODES),
                   help="comma-separated modes; main is always included")
    c.add_argument("--out", help="comparison JSON")

    r = sub.add_parser("render", help="draw a trace document as an SVG Gantt chart")
    r.add_argument("--trace", required=True)
    r.add_argument("--out", required=True)
    return parser


def _lengths(args) -> List[int]:
    if args.workload and args.preset:
        raise ValueError("give either --workload or --preset, not both")
    if args.workload:
        return workload.load(args.workload).lengths
    if args.preset:
        return workload.generate(args.preset, args.count, args.seed).lengths
    raise ValueError("a workload is required: --workload FILE or --preset NAME")


def cmd_gen(args) -> int:
    w = workload.generate(args.preset, args.count, args.seed, context_cap=args.context_cap,
                          low=args.low, high=args.high)
    workload.save(w, args.out)
    print(f"wrote {len(w.lengths)} lengths to {args.out}")
    print(workload.format_stats(workload.stats(w)))
    return EXIT_OK


def _plan(args, lengths: Sequence[int], configs: Configs, mode: str):
    return plan(lengths, configs, n_slices=args.slices, mode=mode, strict=args.strict,
                jobs=args.jobs, seed=args.seed, node_limit=args.node_limit)


def cmd_plan(args) -> int:
    configs = load_config(args.config)
    lengths = _lengths(args)
    started = time.perf_counter()
    p = _plan(args, lengths, configs, args.mode)
    elapsed = time.perf_counter() - started
    documents.write(documents.plan_to_dict(p, configs), args.out)
    print(f"plan ({p.mode}) N={p.n_slices}: {len(p.units)} units x delta {p.delta:.6g} s "
          f"+ T_ckpt {p.total_t_ckpt:.6g} s = est_cost {p.est_cost:.6g} s")
    print(f"chunks {len(p.chunking.chunks)}: time RSD {p.chunking.time_rsd:.4f}, "
          f"length RSD {p.chunking.length_rsd:.4f}")
    layers = sum(u.ckpt.total for u in p.units)
    unproven = p.metadata.get("unproven_units", 0)
    print(f"checkpointed layer-slots {layers}; units stopped at the node limit {unproven}")
    print(f"solve time {elapsed:.3f} s")
    return EXIT_OK


def cmd_simulate(args) -> int:
    p, configs = documents.plan_from_dict(documents.read(args.plan))
    sim = simulate_plan(p, configs)
    documents.write(documents.trace_to_dict(sim, p.mode), args.out)
    s = documents.summarize(sim)
    print(f"makespan {sim.total_time:.6g} s, bubble ratio {sim.bubble_ratio:.4f}")
    print("stage peaks (GB): " + " ".join(f"{m / 1e9:.3f}" for m in s["stage_peak_memory"]))
    print(f"capacity violations: {len(sim.violations)}")
    return EXIT_OK


def compare_rows(lengths: Sequence[int], configs: Configs, modes: Sequence[str], args) -> List[Dict]:
    """Plan and simulate each mode; infeasible modes are reported, not raised."""
    rows = []
    for mode in modes:
        try:
            p = _plan(args, lengths, configs, mode)
        except PlanningError as exc:
            rows.append({"mode": mode, "feasible": False, "reason": str(exc)})
            continue
        sim = simulate_plan(p, configs)
        rows.append({"mode": mode, "feasible": True, "n_slices": p.n_slices,
                     "units": len(p.units), "est_cost": p.est_cost,
                     "sim_time": sim.total_time, "bubble_ratio": sim.bubble_ratio,
                     "violations": len(sim.violations)})
    base = next((r["sim_time"] for r in rows if r["mode"] == "main" and r["feasible"]), None)
    for r in rows:
        if r["feasible"]:
            r["normalized_time"] = r["sim_time"] / base if base else None
    return rows


def format_rows(rows: Sequence[Dict]) -> str:
    head = f"{'mode':<10}{'N':>4}{'units':>7}{'sim time (s)':>15}{'normalized':>12}{'bubble':>9}"
    lines = [head]
    for r in rows:
        if not r["feasible"]:
            lines.append(f"{r['mode']:<10}{'infeasible':>47}")
            continue
        norm = r.get("normalized_time")
        norm_s = "-" if norm is None else f"{norm:.4f}"
        lines.append(f"{r['mode']:<10}{r['n_slices']:>4}{r['units']:>7}{r['sim_time']:>15.6g}"
                     f"{norm_s:>12}{r['bubble_ratio']:>9.4f}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    configs = load_config(args.config)
    lengths = _lengths(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValueError(f"unknown modes {unknown}; choose from {', '.join(MODES)}")
    modes = ["main"] + [m for m in modes if m != "main"]
    rows = compare_rows(lengths, configs, modes, args)
    print(format_rows(rows))
    if args.out:
        documents.write({"kind": COMPARE_KIND, "version": documents.VERSION, "rows": rows},
                        args.out)
    return EXIT_OK


def cmd_render(args) -> int:
    sim = documents.trace_from_dict(documents.read(args.trace))
    Path(args.out).write_text(render_svg(sim.traces, title=f"{Path(args.trace).name}"))
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "plan": cmd_plan, "simulate": cmd_simulate,
            "compare": cmd_compare, "render": cmd_render}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "slices", None) is not None and args.slices < 1:
        print("elasticpipe: error: --slices must be >= 1", file=sys.stderr)
        return EXIT_PARSE
    try:
        return COMMANDS[args.command](args)
    except (PlanningError, CheckpointInfeasible) as exc:
        deficit = getattr(exc, "deficit", math.nan)
        print(f"elasticpipe: infeasible: {exc}", file=sys.stderr)
        if math.isfinite(deficit):
            print(f"elasticpipe: memory deficit {deficit / 1e9:.3f} GB", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"elasticpipe: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RenderError) as exc:
        print(f"elasticpipe: error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
