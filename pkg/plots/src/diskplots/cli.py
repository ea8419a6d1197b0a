"""Tiny CLI: diskplots <kind> <input.csv> <output image>."""

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, plot


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="diskplots",
        description="Render figures from disklayer CSV artifacts")
    parser.add_argument("kind", choices=sorted(KINDS))
    parser.add_argument("csv_path")
    parser.add_argument("out_path")
    args = parser.parse_args(argv)
    try:
        out = plot(FigureSpec(args.csv_path, args.kind, args.out_path))
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
