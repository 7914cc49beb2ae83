"""Command line for batch feature extraction."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .extract import ClassSpec, ExtractJob, list_images, run_extraction


def load_classes(path: str) -> list[ClassSpec]:
    """Class list JSON: [{"name": ..., "synonyms": [...]}, ...] or plain names."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("classes", [])
    classes = []
    for entry in doc:
        if isinstance(entry, str):
            classes.append(ClassSpec(entry))
        else:
            classes.append(ClassSpec(entry["name"], list(entry.get("synonyms", []))))
    return classes


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="coninfer-extract",
        description="Export patch features, prototypes, and priors for the engine",
    )
    p.add_argument("--images", nargs="+", required=True,
                   help="image files and/or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--context-backbone", required=True,
                   help="model id or local path for the visual branch")
    p.add_argument("--semantic-backbone", required=True,
                   help="model id or local path for the language-aligned branch")
    p.add_argument("--classes", required=True, help="class list JSON file")
    p.add_argument("--template-set", choices=("imagenet", "simple"), default="imagenet")
    p.add_argument("--resize", type=int, default=448)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--emit", choices=("priors", "raw"), default="priors",
                   help="precomputed prior rows, or raw tokens plus prototypes")
    p.add_argument("--device", default="cpu")
    p.add_argument("--scene-id", default="scene")
    p.add_argument("--gt-dir", default=None,
                   help="directory of <stem>.png or <stem>.npy class-index masks")
    return p


def main(argv=None) -> int:
    level = os.environ.get("CONINFER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        job = ExtractJob(
            images=list_images(args.images),
            out_dir=Path(args.out),
            context_backbone=args.context_backbone,
            semantic_backbone=args.semantic_backbone,
            classes=load_classes(args.classes),
            template_set=args.template_set,
            resize=args.resize,
            tau=args.tau,
            emit=args.emit,
            device=args.device,
            scene_id=args.scene_id,
            gt_dir=Path(args.gt_dir) if args.gt_dir else None,
        )
        manifest = run_extraction(job)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # checkpoint or model failures
        print(f"error: backbone failure: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
