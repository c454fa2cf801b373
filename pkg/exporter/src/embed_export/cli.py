"""Command-line entry point: embed-export export --model ... --dataset ... --out ..."""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="encode a dataset and write UBT + manifest")
    p.add_argument("--model", required=True,
                   help="encoder id, e.g. torchvision:resnet18")
    p.add_argument("--dataset", required=True,
                   help="dataset id, e.g. folder:/path/to/images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--splits", default=None,
                   help="comma-separated split subdirectories (default: all)")
    p.add_argument("--role", action="append", default=[], metavar="SPLIT=ROLE",
                   help="role override for a split; repeatable")
    p.add_argument("--weights", default=None, help="state-dict file for the encoder")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0,
                   help="init seed when running without --weights")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    roles = {}
    for item in args.role:
        split, sep, role = item.partition("=")
        if not sep:
            print(f"error: bad --role {item!r}, expected SPLIT=ROLE", file=sys.stderr)
            return 2
        roles[split] = role
    try:
        spec = ExportSpec(
            model=args.model,
            dataset=args.dataset,
            out_dir=args.out,
            splits=tuple(args.splits.split(",")) if args.splits else None,
            roles=roles,
            batch_size=args.batch_size,
            image_size=args.image_size,
            weights=args.weights,
            seed=args.seed,
        )
        manifest_path = export(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
