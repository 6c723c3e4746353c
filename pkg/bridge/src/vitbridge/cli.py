"""Bridge CLI: serve the oracle protocol or export bundle directories."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import export_bundles
from .model import HookedViT
from .server import serve_stdio, serve_tcp


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--weights", default="pretrained", choices=("pretrained", "random"),
                        help="pretrained falls back to random init when weights are unavailable")
    parser.add_argument("--seed", type=int, default=0, help="seed for random initialization")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vitbridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sv = sub.add_parser("serve", help="answer oracle requests")
    group = sv.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true")
    group.add_argument("--tcp", type=int, metavar="PORT", help="0 picks a free port (printed)")
    _add_model_args(sv)

    ex = sub.add_parser("export", help="write attention bundles for a directory of images")
    ex.add_argument("--images", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--classes", default="predicted",
                    help='"predicted" or a comma list of class ids')
    _add_model_args(ex)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    model = HookedViT(weights=args.weights, seed=args.seed)

    if args.command == "serve":
        if args.stdio:
            serve_stdio(model)
        else:
            def announce(port: int) -> None:
                sys.stdout.write(f"{port}\n")
                sys.stdout.flush()

            serve_tcp(model, args.tcp, announce=announce)
        return 0

    classes = args.classes if args.classes == "predicted" else [int(c) for c in args.classes.split(",")]
    exported = export_bundles(model, args.images, args.out, classes)
    return 0 if exported else 1


if __name__ == "__main__":
    sys.exit(main())
