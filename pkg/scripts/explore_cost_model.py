#!/usr/bin/env python3
"""How the ISR/driver cost model shapes deadline shares and runtime savings.

For each cost model, runs nomod, d2400 and d3200 at one flood rate and
prints the critical task's deadline-met share per grace period, whether
both moderated labels beat nomod at every grace, and the added-preemption
reduction of d3200 against nomod.

    python scripts/explore_cost_model.py --horizon-us 10000000
"""

import argparse
from dataclasses import replace

from rtnic.experiments import GRACES, compute_baseline, paper_scenario, run_scenario
from rtnic.metrics import additional_runtime, deadline_share
from rtnic.rtos import CostModel

DEFAULT_COSTS = ["6,1", "12,1", "20,1", "6,4", "30,5"]


def explore(isr, per_packet, rate, horizon):
    base = replace(paper_scenario(rate, "nomod", horizon_us=horizon),
                   cost_model=CostModel(isr, per_packet))
    crit = base.critical.task_id
    deadline_base = compute_baseline(base)
    shares, added = {}, {}
    for label in ("nomod", "d2400", "d3200"):
        s = base.with_moderation(label)
        stats = run_scenario(s)
        shares[label] = [deadline_share(stats, crit, deadline_base, g) for g in GRACES]
        added[label] = additional_runtime(stats, crit, compute_baseline(s))
    ordered = all(a >= b for label in ("d2400", "d3200")
                  for a, b in zip(shares[label], shares["nomod"]))
    reduction = 1 - added["d3200"] / added["nomod"] if added["nomod"] else float("nan")
    return shares, ordered, reduction


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--costs", nargs="*", default=DEFAULT_COSTS,
                    help="isr,per_packet pairs in microseconds")
    ap.add_argument("--rate", type=int, default=5000)
    ap.add_argument("--horizon-us", type=int, default=10_000_000)
    args = ap.parse_args()

    graces = " ".join(f"g{round(g * 100):<5}" for g in GRACES)
    for pair in args.costs:
        isr, per_packet = (int(x) for x in pair.split(","))
        shares, ordered, reduction = explore(isr, per_packet, args.rate, args.horizon_us)
        print(f"cost ({isr},{per_packet}): ordering {'holds' if ordered else 'broken'}, "
              f"d3200 preemption reduction {reduction:.1%}")
        print(f"  {'':6} {graces}")
        for label, row in shares.items():
            print(f"  {label:6} " + " ".join(f"{x:.3f} " for x in row))


if __name__ == "__main__":
    main()
