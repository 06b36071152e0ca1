"""Command line front end: export activations, or mint seeded toy weights.

Exit codes mirror the stereo engine's tools: 0 success, 2 usage, 1 runtime.
"""

import argparse
import sys

import torch

from .backbone import seeded_state_dict
from .container import ExportError
from .export import ExportSpec, export_images


def build_parser():
    p = argparse.ArgumentParser(prog="featexport")
    sub = p.add_subparsers(dest="cmd", required=True)

    e = sub.add_parser("export", help="dump tap activations for images")
    e.add_argument("--images", nargs="+", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--tap", default="conv3")

    w = sub.add_parser("init-weights",
                       help="write a seeded state dict for offline use")
    w.add_argument("--out", required=True)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--tap", default="conv3")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        if args.cmd == "export":
            spec = ExportSpec(weights=args.weights, out_dir=args.out,
                              tap=args.tap)
            entries = export_images(args.images, spec)
            n = sum(1 for k in entries if k.startswith("output."))
            print(f"exported {n} tensor(s) to {args.out}")
        else:
            torch.save(seeded_state_dict(args.tap, args.seed), args.out)
            print(f"wrote seeded weights to {args.out}")
        return 0
    except (ExportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
