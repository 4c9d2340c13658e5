"""Throughput of the per-pixel stages on the standard cameras for 1..N threads."""

import argparse
import json

from rgbdtrack.harness import benchmark, format_benchmark, standard_config
from rgbdtrack.parallel import physical_cores


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--threads", type=int, nargs="+", default=None, help="default: 1 and every physical core")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--json", dest="json_out")
    args = p.parse_args()

    threads = args.threads or sorted({1, physical_cores()})
    table = benchmark(standard_config(), threads, runs=args.runs, frames_per_run=args.frames)
    print(format_benchmark(table))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
