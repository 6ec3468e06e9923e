#!/usr/bin/env python3
"""Convert a `label,bag_id,f1..fd` CSV (layout used by the `mil` PyPI
package and by several public MIL benchmark mirrors) into MIL-CSV.

    python3 tools/convert_mil_package.py musk1.csv data/musk1.milcsv --prefix musk1
"""
import argparse
import csv
import sys


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--prefix", default="", help="prepended to every bag id")
    args = ap.parse_args()

    with open(args.src, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        print("empty input", file=sys.stderr)
        return 1
    dim = len(rows[0]) - 2
    with open(args.dst, "w", newline="\n") as out:
        out.write(f"# converted from {args.src.rsplit('/', 1)[-1]}\n")
        out.write(f"bag_id,label,d={dim}\n")
        for lineno, r in enumerate(rows, 1):
            if len(r) - 2 != dim:
                print(f"line {lineno}: expected {dim} features", file=sys.stderr)
                return 1
            label, bag = r[0].strip(), r[1].strip()
            bag_id = f"{args.prefix}_{bag}" if args.prefix else bag
            out.write(",".join([bag_id, label] + [v.strip() for v in r[2:]]) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
