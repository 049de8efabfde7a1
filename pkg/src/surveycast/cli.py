"""Command-line orchestration of the prediction pipeline.

    surveycast synth --out runs/demo
    surveycast all --out runs/demo --seed 7 --workers 2
    surveycast train gbt --out runs/demo
    surveycast ensemble weighted --out runs/demo
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .pipeline import (
    ENSEMBLE_SCHEMES,
    INDIVIDUAL_MODELS,
    StageInputError,
    merge_config,
    run_all,
    stage_ensemble,
    stage_evaluate,
    stage_ingest,
    stage_predict,
    stage_preprocess,
    stage_report,
    stage_select,
    stage_synth,
    stage_train,
)

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surveycast",
                                     description="Survey-data prediction pipeline")
    parser.add_argument("--config", type=Path, help="JSON config file (defaults merged in)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--workers", type=int, help="parallel workers for training stages")
    parser.add_argument("--out", type=Path, default=Path("runs/default"),
                        help="run directory for artifacts")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "ingest", "preprocess", "select", "predict", "evaluate", "report", "all"):
        sub.add_parser(name)
    train = sub.add_parser("train")
    train.add_argument("model", choices=INDIVIDUAL_MODELS)
    ens = sub.add_parser("ensemble")
    ens.add_argument("scheme", choices=ENSEMBLE_SCHEMES)
    return parser


def load_config(args) -> dict:
    user = {}
    if args.config:
        if not args.config.exists():
            raise StageInputError(f"missing expected artifact {args.config} (config file)")
        user = json.loads(args.config.read_text())
    config = merge_config(user)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.workers is not None:
        config["workers"] = args.workers
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            stage_synth(config, out)
        elif args.command == "ingest":
            stage_ingest(config, out)
        elif args.command == "preprocess":
            stage_preprocess(config, out)
        elif args.command == "select":
            stage_select(config, out)
        elif args.command == "train":
            stage_train(config, out, args.model)
        elif args.command == "predict":
            stage_predict(config, out)
        elif args.command == "ensemble":
            stage_ensemble(config, out, args.scheme)
        elif args.command == "evaluate":
            stage_evaluate(config, out)
        elif args.command == "report":
            stage_report(config, out)
        elif args.command == "all":
            run_all(config, out)
    except (StageInputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
