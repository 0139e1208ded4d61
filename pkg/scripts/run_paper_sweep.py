#!/usr/bin/env python3
"""Run the nomod/d800..d3200 x 0..15000 pps grid and print the headline numbers.

    python scripts/run_paper_sweep.py --out results/paper

Writes per-cell CSVs plus sweep.csv under --out (same layout as
``rtnic sweep --grid paper``), then summarises the 5000 and 15000 pps columns.
"""

import argparse
import shutil
import sys
import time
from pathlib import Path

from rtnic.experiments import GRACES, SweepGrid, load_scenario, run_sweep

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", type=Path, default=HERE / "scenarios" / "paper.json")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()

    if args.out.exists() and any(args.out.iterdir()):
        if not args.force:
            sys.exit(f"{args.out} is not empty (use --force)")
        shutil.rmtree(args.out)

    base = load_scenario(args.scenario)
    t0 = time.perf_counter()
    rows = run_sweep(base, SweepGrid(), args.out, jobs=args.jobs,
                     on_row=lambda r: print(f"  {r['label']:>6} {r['rate_pps']:>6} pps  "
                                            f"ratio {r['interrupt_ratio']:.4f}", flush=True))
    print(f"sweep finished in {time.perf_counter() - t0:.0f} s -> {args.out / 'sweep.csv'}")

    by = {(r["label"], r["rate_pps"]): r for r in rows}
    nomod5 = by[("nomod", 5000)]
    print("\nlabel   flood ratio@5k  flood ratio@15k  added preempt@5k  reduction")
    for label in ("nomod", "d800", "d1600", "d2400", "d3200"):
        r5, r15 = by[(label, 5000)], by[(label, 15000)]
        red = 1 - r5["critical_added_preemption_us"] / nomod5["critical_added_preemption_us"]
        print(f"{label:6}  {r5['flood_queue_interrupt_ratio']:14.4f}  "
              f"{r15['flood_queue_interrupt_ratio']:15.4f}  "
              f"{r5['critical_added_preemption_us']:16d}  {red:9.1%}")
    print("\ndeadline share at 5000 pps")
    print("label   " + " ".join(f"g{round(g * 100):<6}" for g in GRACES))
    for label in ("nomod", "d800", "d1600", "d2400", "d3200"):
        r = by[(label, 5000)]
        print(f"{label:6}  " + " ".join(f"{r[f'deadline_share_g{round(g * 100)}']:.4f} "
                                        for g in GRACES))


if __name__ == "__main__":
    main()
