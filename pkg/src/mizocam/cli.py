"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import harness
from .controller import DEFAULT_TAU
from .datasets import KINDS, generate_set, load_dataset, write_dataset
from .scene import OracleConfig, SceneError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "MIZOCAM_OUT"
DEFAULT_OUT = "mizocam-out"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as configuration errors."""

    def error(self, message):
        raise harness.ConfigError(message)


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(harness.report_bytes(payload))
    return path


def _run_flags(p: argparse.ArgumentParser, dataset_required: bool = True) -> None:
    p.add_argument("--dataset", required=dataset_required, help="directory of scene JSON files")
    p.add_argument("--metric", default="go-led-ol-ar", help="one of: " + ", ".join(harness.valid_metrics()))
    p.add_argument("--controller", default="ours", choices=harness.CONTROLLERS)
    p.add_argument("--budget", type=int, default=8, help="actions per round")
    p.add_argument("--demo-fraction", type=float, default=0.05)
    p.add_argument("--feedback", type=float, default=1.0, help="fraction of revealed labels")
    p.add_argument("--seed", type=int, nargs="+", default=[0], help="one or more seeds")
    p.add_argument("--oracle-a", type=float, default=0.0)
    p.add_argument("--oracle-b", type=float, default=6.0)
    p.add_argument("--latency", type=float, default=0.0, help="simulated oracle latency in seconds")
    p.add_argument("--start-z", default="nearest", choices=("nearest", "outermost"))
    p.add_argument("--mizo-rounds", type=int, default=20)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")


def _diag_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="diagnostic scene directory (default: generate from the seed)")
    p.add_argument("--metric", action="append", help="metric to diagnose (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-a", type=float, default=0.0)
    p.add_argument("--oracle-b", type=float, default=6.0)
    p.add_argument("--rounds", type=int, default=50, help="MI-ZO rounds per fold")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mizocam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenes", help="write a seeded synthetic scene set")
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int)
    g.add_argument("--out")

    _run_flags(sub.add_parser("demo", help="run the demonstration scenes only"))
    _run_flags(sub.add_parser("bench", help="two-round benchmark over a dataset"))

    d = sub.add_parser("diag-separation", help="score separation of learned vs fixed weights")
    _diag_flags(d)
    d = sub.add_parser("diag-pcd", help="posterior concentration dispersion")
    _diag_flags(d)
    d.add_argument("--increment", type=int, default=6)

    r = sub.add_parser("report", help="print the aggregate of a written report")
    r.add_argument("path", help="report.json or the directory holding it")
    return p


def config_from_args(args) -> harness.RunConfig:
    try:
        return harness.RunConfig(
            dataset=str(args.dataset), metric=args.metric, controller=args.controller, budget=args.budget,
            demo_fraction=args.demo_fraction, feedback=args.feedback, seeds=tuple(args.seed),
            oracle_a=args.oracle_a, oracle_b=args.oracle_b, latency=args.latency, start_z=args.start_z,
            mizo_rounds=args.mizo_rounds, tau=args.tau, out=str(_out_dir(args))).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, harness.ConfigError):
            raise
        raise harness.ConfigError(str(exc)) from exc


def _load(path) -> list:
    try:
        return load_dataset(path)
    except SceneError as exc:
        raise harness.ConfigError(str(exc)) from exc


def _cmd_gen(args) -> str:
    if args.count is not None and args.count < 1:
        raise harness.ConfigError("count must be >= 1")
    specs = generate_set(args.kind, args.seed, args.count)
    d = _out_dir(args)
    write_dataset(specs, d)
    return f"wrote {len(specs)} scenes to {d}"


def _cmd_demo(args) -> str:
    cfg = config_from_args(args)
    specs = _load(cfg.dataset)
    stores = {str(s): harness.run_demonstrations(specs, cfg, s).to_dict() for s in cfg.seeds}
    path = _write_json(_out_dir(args) / "demo.json", {"config": cfg.report_dict(), "demonstrations": stores})
    return f"wrote {path}"


def _cmd_bench(args) -> str:
    cfg = config_from_args(args)
    specs = _load(cfg.dataset)
    timings: list = []
    report = harness.run_benchmark(specs, cfg, timings)
    path = harness.write_report(report, _out_dir(args), timings)
    a = report["aggregate"]
    return f"wrote {path}: acc_sq {a['mean']:.2f} (sigma {a['sigma']:.2f}), delta on R1 {a['delta_on_r1']:+.2f}"


def _diag_inputs(args):
    metrics = args.metric or ["go-led-ol-ar", "gh-led-ar"]
    for m in metrics:
        harness.parse_metric(m)
    if args.rounds < 1:
        raise harness.ConfigError("rounds must be >= 1")
    specs = _load(args.dataset) if args.dataset else None
    return metrics, OracleConfig(args.oracle_a, args.oracle_b), specs


def _cmd_sep(args) -> str:
    metrics, oracle, specs = _diag_inputs(args)
    res = harness.separation_diagnostic(args.seed, metrics, oracle, args.rounds, specs)
    path = _write_json(_out_dir(args) / "separation.json", {"seed": args.seed, "results": res})
    gains = ", ".join(f"{k} {v['auc_gain']:+.3f}" for k, v in res.items())
    return f"wrote {path}: AUC gain {gains}"


def _cmd_pcd(args) -> str:
    metrics, oracle, specs = _diag_inputs(args)
    if args.increment < 1:
        raise harness.ConfigError("increment must be >= 1")
    res = harness.pcd_diagnostic(args.seed, metrics, oracle, args.rounds, args.increment, specs)
    path = _write_json(_out_dir(args) / "pcd.json", {"seed": args.seed, "results": res})
    return f"wrote {path}: " + ", ".join(f"{k} ar {v['ar']:.3f} no-ar {v['no_ar']:.3f}" for k, v in res.items())


def _cmd_report(args) -> str:
    p = Path(args.path)
    p = p / "report.json" if p.is_dir() else p
    if not p.is_file():
        raise harness.ConfigError(f"no report at {p}")
    a = json.loads(p.read_text())["aggregate"]
    lines = [f"metric {a['metric']}: mean {a['mean']:.2f} sigma {a['sigma']:.2f} "
             f"delta_on_r1 {a['delta_on_r1']:+.2f}", "seed  acc_r1  acc_r2  delta"]
    lines += [f"{s['seed']:>4}  {s['acc_r1']:6.2f}  {s['acc_r2']:6.2f}  {s['delta_on_r1']:+6.2f}"
              for s in a["per_seed"]]
    return "\n".join(lines)


COMMANDS = {"gen-scenes": _cmd_gen, "demo": _cmd_demo, "bench": _cmd_bench,
            "diag-separation": _cmd_sep, "diag-pcd": _cmd_pcd, "report": _cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help
            return EXIT_OK if not exc.code else EXIT_CONFIG
        print(COMMANDS[args.command](args))
        return EXIT_OK
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
