"""Time the full-size pipeline and check the MAC count.

A random 9x9x512x375 field is resized to 512x512 views, packed into a
4608x4608 micro-lens image, encoded and passed through the detector. Needs
about 3 GB of memory in double precision.

    python demos/benchmark.py [--float32] [--runs N]
"""
import argparse

from lfsal.bench import bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=1)
    ap.add_argument("--profile", default="full")
    ap.add_argument("--float32", action="store_true")
    args = ap.parse_args()
    dtype = "float32" if args.float32 else None
    rep = bench(n_runs=args.runs, warmup=0, profile=args.profile, dtype=dtype)
    for k, v in rep.as_dict().items():
        print(f"{k:18s} {v}")


if __name__ == "__main__":
    main()
