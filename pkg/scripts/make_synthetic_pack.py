#!/usr/bin/env python3
"""Generate a synthetic SM pack with density-planted difficulty labels."""

import argparse

from stepmeter.synthetic import generate_pack


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="pack directory to create")
    parser.add_argument("--songs", type=int, default=15)
    parser.add_argument("--measures", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths = generate_pack(args.out, songs=args.songs, measures=args.measures, seed=args.seed)
    print(f"wrote {len(paths)} songs to {args.out}")


if __name__ == "__main__":
    main()
