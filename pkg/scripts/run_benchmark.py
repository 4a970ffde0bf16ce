"""Five-seed benchmark on the three-domain preset; prints a per-seed log and the criteria.

    python scripts/run_benchmark.py --out bench.json [--seeds 0 1 2 3 4]

The JSON can be fed back to the acceptance suite with VATTN_BENCH_CACHE=bench.json.
"""

import argparse
import json
import time

from vattn import benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=list(benchmark.BENCH_SEEDS))
    ap.add_argument("--out", default="bench.json")
    args = ap.parse_args()

    t = time.perf_counter()
    results = benchmark.run(args.seeds, log=lambda s: print(s, flush=True))
    with open(args.out, "w") as fh:
        json.dump({"results": results, "seconds": time.perf_counter() - t}, fh, indent=1)

    rows = benchmark.biased_learning(results)
    print(f"\nJT > IT on B: {sum(h for h, _ in rows)}/{len(rows)};"
          f" JT <= 1.05 IT on A or Q: {sum(g for _, g in rows)}/{len(rows)}")
    for method in ("IT", "JT", "SE", "VA", "InVA"):
        means = benchmark.mean_mae(results, method)
        print(f"{method:<5}" + "".join(f"  {d}={v:.3f}" for d, v in means.items()))
    print(f"silhouette gap VA - SE: {benchmark.silhouette_gap(results):.3f}")
    occ = benchmark.occupancy(results)
    print(f"all sub-centers occupied: {sum(a for a, _ in occ)}/{len(occ)} seeds")


if __name__ == "__main__":
    main()
