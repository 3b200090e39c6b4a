"""Entry point: `wlforge-sidecar --mode echo_oracle --gt-root DIR` etc."""

from __future__ import annotations

import argparse
import sys

from .server import EchoOracleBackend, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wlforge-sidecar",
        description="Promptable-segmenter sidecar (newline-delimited JSON over stdio)",
    )
    parser.add_argument("--mode", choices=("echo_oracle", "real"), required=True)
    parser.add_argument("--gt-root", help="hidden ground-truth directory (echo mode)")
    parser.add_argument("--checkpoint", help="model checkpoint path (real mode)")
    parser.add_argument("--device", default="cpu", help="torch device (real mode)")
    parser.add_argument("--model-type", default="vit_b", help="registry key (real mode)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.mode == "echo_oracle":
        if not args.gt_root:
            print("--gt-root is required in echo_oracle mode", file=sys.stderr)
            return 1
        backend = EchoOracleBackend(args.gt_root)
        name = "echo-oracle"
    else:
        if not args.checkpoint:
            print("--checkpoint is required in real mode", file=sys.stderr)
            return 1
        from .real_model import RealCheckpointBackend

        backend = RealCheckpointBackend(args.checkpoint, args.device, args.model_type)
        name = "real-checkpoint"
    serve(sys.stdin, sys.stdout, backend, name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
