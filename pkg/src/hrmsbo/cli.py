"""Command-line entry point: ``hrmsbo {run,truth,report,verify}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config (YAML)")
    p.add_argument("--seed", type=int, help="override master_seed (unsigned 64-bit)")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--workers", type=int, help="concurrent runs (default from config)")
    p.add_argument("--budget", type=int, help="override stop.max_function_evals")


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.from_yaml(args.config)
    return harness.with_overrides(cfg, seed=args.seed, out=args.out, workers=args.workers, budget=args.budget)


def _print_table(rows, out=sys.stdout) -> None:
    out.write(harness.to_csv(rows))


def cmd_run(args) -> int:
    cfg = _load(args)
    print(f"running {cfg.n_runs} runs into {cfg.output_dir} with {cfg.workers} worker(s)", file=sys.stderr)
    result = harness.run_suite(cfg)
    _print_table(result.conditions)
    return 0


def cmd_truth(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir)
    harness.check_writable(out)
    truth = harness.build_truth(cfg)
    if truth.kind == "dense_gp":
        harness._write_text(out / harness.TRUTH_FILE, harness._canonical_json(
            {"config_hash": cfg.config_hash(), "truth": truth.to_dict()}))
    print(json.dumps({"kind": truth.kind, "optimum_value": truth.optimum_value}))
    return 0


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    if args.config:
        return Path(harness.ExperimentConfig.from_yaml(args.config).output_dir)
    raise SystemExit("need --out or --config to locate the results")


def cmd_report(args) -> int:
    tables = harness.report(_out_dir(args))
    print("# fidelity")
    _print_table(tables["fidelity"])
    print("# accounting")
    _print_table(tables["accounting"])
    return 0


def cmd_verify(args) -> int:
    problems = harness.verify(_out_dir(args))
    for p in problems:
        print(f"FAIL {p}")
    if not problems:
        print("verify: OK")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrmsbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_, need_cfg in (
        ("run", cmd_run, "execute a suite from a config file", True),
        ("truth", cmd_truth, "build the ground-truth reference for a config", True),
        ("report", cmd_report, "fidelity and accounting tables from stored records", False),
        ("verify", cmd_verify, "audit a finished suite", False),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p, config_required=need_cfg)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, PermissionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
