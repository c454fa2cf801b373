"""Command-line entry point.

Subcommands map onto the pipeline tasks:

    uqkit train-head    --config c.json --out dir     train + save heads
    uqkit eval          --config c.json --out dir     generalization family
    uqkit osr           --config c.json --out dir     open-set recognition
    uqkit fewshot       --config c.json --out dir     few-shot linear eval
    uqkit zeroshot-osr  --config c.json --out dir     Mahalanobis OSR
    uqkit active-learn  --config c.json --out dir     acquisition loop
    uqkit score         report.json [...] --out dir   aggregate reports

Exit codes: 0 success, 2 validation failure, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .errors import ValidationError
from .heads import save_head
from .pipelines import RunConfig, build_predictors, compute_reliability, run_pipeline
from .manifest import load_manifest
from .report import load_report_records

# Task families selected by each run subcommand; the config's task list is
# filtered to the family, falling back to the family default when none match.
FAMILIES = {
    "eval": (("eval", "calibration", "selective", "label_uncertainty",
              "subpop", "score"), ("eval",)),
    "osr": (("osr", "score"), ("osr",)),
    "fewshot": (("fewshot", "score"), ("fewshot",)),
    "zeroshot-osr": (("zeroshot_osr", "score"), ("zeroshot_osr",)),
    "active-learn": (("active_learning", "score"), ("active_learning",)),
}


def _effective_config(args, family: str) -> RunConfig:
    config = RunConfig.from_file(args.config)
    allowed, default = FAMILIES[family]
    tasks = tuple(t for t in config.tasks if t in allowed) or default
    seed = config.seed if args.seed is None else args.seed
    out = args.out or config.out
    if out is None:
        raise ValidationError("no output directory: pass --out or set 'out' in config")
    doc = dict(config.raw_doc)
    doc["tasks"] = list(tasks)
    doc["seed"] = seed
    return replace(config, tasks=tasks, seed=seed, out=str(out), raw_doc=doc)


def _write_outputs(report, out_dir: Path) -> None:
    paths = report.write(out_dir)
    curve = report.provenance.get("active_learning_curve")
    if curve:
        with open(out_dir / "al_curve.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["num_labels", "accuracy"])
            for point in curve:
                writer.writerow([point["num_labels"], format(point["accuracy"], ".9g")])
        paths.append(out_dir / "al_curve.csv")
    for path in paths:
        print(f"wrote {path}")


def _cmd_run(args, family: str) -> int:
    config = _effective_config(args, family)
    al_flags = {
        "strategy": getattr(args, "strategy", None),
        "init_per_class_factor": getattr(args, "init_factor", None),
        "batch_per_class_factor": getattr(args, "batch_factor", None),
        "max_per_class_factor": getattr(args, "max_factor", None),
    }
    overrides = {k: v for k, v in al_flags.items() if v is not None}
    if overrides:
        config = replace(config, al={**config.al, **overrides})
    report = run_pipeline(config)
    _write_outputs(report, Path(config.out))
    print(f"{len(report.records)} records from tasks: {', '.join(config.tasks)}")
    reliability = report.provenance.get("reliability")
    if reliability:
        print(f"reliability score: {reliability['overall']:.3f}")
    return 0


def _cmd_train_head(args) -> int:
    config = RunConfig.from_file(args.config)
    seed = config.seed if args.seed is None else args.seed
    out = args.out or config.out
    if out is None:
        raise ValidationError("no output directory: pass --out or set 'out' in config")
    if not config.heads:
        raise ValidationError("config has no head specs to train")
    config = replace(config, seed=seed)
    manifest = load_manifest(config.manifest_path)
    out_dir = Path(out)
    for predictor in build_predictors(config, manifest):
        if predictor.head is None:
            continue
        target = save_head(predictor.head, out_dir / predictor.name)
        loss = predictor.head.train_loss
        loss_txt = "n/a" if loss is None else f"{loss:.6g}"
        print(f"wrote {target} (train loss {loss_txt})")
    return 0


def _cmd_score(args) -> int:
    if not args.reports:
        raise ValidationError("score needs at least one report.json path")
    records = []
    hashes = set()
    for path in args.reports:
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, dict):
            hashes.add(doc.get("provenance", {}).get("config_hash"))
        records.extend(load_report_records(path))
    hashes.discard(None)
    if len(hashes) > 1:
        raise ValidationError(
            f"refusing to aggregate reports with different config hashes: {sorted(hashes)}"
        )
    result = compute_reliability(records)
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    score_path = out_dir / "score.json"
    score_path.write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    print(f"wrote {score_path}")
    print(f"reliability score: {result['overall']:.3f}")
    for area, value in sorted(result["areas"].items()):
        print(f"  {area}: {value:.3f}")
    for area in result["missing_areas"]:
        print(f"  {area}: no records")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uqkit",
        description="Reliability evaluation for classifiers on frozen embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    for name in ("train-head", "eval", "osr", "fewshot", "zeroshot-osr", "active-learn"):
        p = sub.add_parser(name)
        add_common(p)
        if name == "active-learn":
            p.add_argument("--strategy", choices=("margin", "uniform"), default=None)
            p.add_argument("--init-factor", type=float, default=None,
                           help="initial labeled set size as a multiple of K")
            p.add_argument("--batch-factor", type=float, default=None,
                           help="acquisition batch size as a multiple of K")
            p.add_argument("--max-factor", type=float, default=None,
                           help="label cap as a multiple of K")

    p_score = sub.add_parser("score")
    p_score.add_argument("reports", nargs="*", help="report.json files to aggregate")
    p_score.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train-head":
            return _cmd_train_head(args)
        if args.command == "score":
            return _cmd_score(args)
        return _cmd_run(args, args.command)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
