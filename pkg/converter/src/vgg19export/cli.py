"""Command line front end: one invocation produces all export artifacts."""

from __future__ import annotations

import argparse
import sys

from .container import ContainerError
from .convert import ConversionError, convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vgg19-export",
        description="Export VGG-19 feature weights and a reference-activation "
                    "fixture as digest-verified tensor containers.",
    )
    parser.add_argument("--out-dir", default="artifacts",
                        help="directory for the containers and manifest (default: artifacts)")
    parser.add_argument("--weights", default=None, metavar="PATH",
                        help="local VGG-19 state dict (.pth); when omitted the "
                             "torchvision IMAGENET1K_V1 weights are downloaded")
    parser.add_argument("--size", type=int, default=64,
                        help="fixture image side length, multiple of 16 (default: 64)")
    parser.add_argument("--seed", type=int, default=20,
                        help="fixture image noise seed (default: 20)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = convert(args.out_dir, weights_path=args.weights,
                         image_size=args.size, image_seed=args.seed)
    except (ConversionError, ContainerError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    print(f"source: {result.source}")
    print(f"wrote {result.weights_path} ({len(result.tensor_names)} tensors, "
          f"sha256 {result.weights_digest[:12]}...)")
    taps = ", ".join(f"{tap} {'x'.join(str(d) for d in shape)}"
                     for tap, shape in result.tap_shapes.items())
    print(f"wrote {result.fixture_path} (taps: {taps}, "
          f"sha256 {result.fixture_digest[:12]}...)")
    print(f"wrote {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
