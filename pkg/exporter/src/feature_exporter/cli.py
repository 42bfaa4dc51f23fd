"""Command line: feature-export export --images DIR --out FILE."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .export import ExportError, ExportJob, export


def build_parser():
    parser = argparse.ArgumentParser(prog="feature-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export an image directory to a feature file")
    p.add_argument("--images", required=True, help="directory with per-class subfolders")
    p.add_argument("--out", required=True, help="output feature file path")
    p.add_argument("--encoder", choices=["hashed", "clip"], default="hashed")
    p.add_argument("--model", default=None, help="encoder model id or local path")
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0, help="hashed-encoder seed")
    p.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    job = ExportJob(
        image_dir=args.images,
        out_path=args.out,
        encoder=args.encoder,
        model_id=args.model,
        device=args.device,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    try:
        entry = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(entry, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
