"""Standalone figure scripts: plotkit --in <csv> --out <image> --kind <kind>."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, plot


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render fusionloc benchmark CSVs / power maps into figures.",
    )
    parser.add_argument(
        "--in", dest="inputs", action="append", required=True,
        help="input CSV (repeatable for curve kinds)",
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--title", default=None)
    parser.add_argument("--xlabel", default=None)
    parser.add_argument("--ylabel", default=None)
    parser.add_argument("--xlim", nargs=2, type=float, default=None)
    parser.add_argument("--ylim", nargs=2, type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            inputs=tuple(args.inputs),
            kind=args.kind,
            output=args.out,
            title=args.title,
            xlabel=args.xlabel,
            ylabel=args.ylabel,
            xlim=tuple(args.xlim) if args.xlim else None,
            ylim=tuple(args.ylim) if args.ylim else None,
        )
        info = plot(spec)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {info['output']} ({info['kind']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
