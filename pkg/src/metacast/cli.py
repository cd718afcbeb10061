"""Command-line entry points: synth, ingest, train, eval, baseline, sweep, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metacast",
                                 description="few-shot load forecasting experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, descr in [
        ("synth", "write a synthetic meta-dataset manifest"),
        ("ingest", "validate CSV series and write a manifest"),
        ("train", "meta-train and save checkpoint.json"),
        ("eval", "evaluate models on the meta-test tasks"),
        ("baseline", "pretrain the task-independent baseline"),
        ("sweep", "run one full experiment per sweep value"),
    ]:
        _add_common(sub.add_parser(name, help=descr))
    rp = sub.add_parser("report", help="render tables and boxplot data from runs")
    rp.add_argument("run_dirs", nargs="+", help="completed run directories")
    rp.add_argument("--out", required=True)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            path = harness.report(args.run_dirs, args.out)
            print(f"report written to {Path(args.out)}", f"({path.name})")
            return 0
        cfg = harness.load_config(args.config, args.seed)
        out = Path(args.out)
        if args.command == "synth":
            path = harness.stage_synth(cfg, out)
            print(f"manifest written to {path}")
        elif args.command == "ingest":
            path = harness.stage_ingest(cfg, out)
            print(f"manifest written to {path}")
        elif args.command == "train":
            ckpt = harness.stage_train(cfg, out)
            print(f"checkpoint written to {out / 'checkpoint.json'} "
                  f"(final meta-loss {ckpt.history[-1]['meta_loss']:.6g})" if ckpt.history
                  else f"checkpoint written to {out / 'checkpoint.json'}")
        elif args.command == "baseline":
            harness.stage_baseline(cfg, out)
            print(f"TI checkpoint written to {out / 'ti_checkpoint.json'}")
        elif args.command == "eval":
            agg = harness.stage_eval(cfg, out)
            print(json.dumps({m: v["mean"] for m, v in agg.items()}, indent=1))
        elif args.command == "sweep":
            table = harness.sweep(cfg, out)
            print(f"sweep table written to {out / 'sweep_table.csv'} ({len(table)} cells)")
    except (harness.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
