"""Belief statistics of the full RockSample model under the nominal schedule.

Prints the mass on the slip states and on each rock being good over time.
"""
import argparse

import numpy as np

from upomdp.models import RockSampleConfig, nominal_policies, rocksample
from upomdp.oracle import simulate
from upomdp.polynomial import poly_sum, Polynomial
from upomdp.pomdp import bvar


def mass(states):
    return poly_sum(Polynomial.var(bvar(q)) for q in states)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", choices=("I", "II"), default="I")
    ap.add_argument("--horizon", type=int, default=20)
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--theta-strategy", default="per-step-sample")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RockSampleConfig.case_one() if args.case == "I" else RockSampleConfig.case_two()
    rs = rocksample(cfg)
    sched = nominal_policies(args.case, cfg, length=args.horizon + 1)
    res = simulate(rs.model, sched, args.theta_strategy, args.horizon, args.trajectories, seed=args.seed)
    groups = {"slip": mass(rs.groups["slip"])}
    for name, states in sorted(rs.groups.items()):
        if name.endswith("_good"):
            groups[name] = mass(states)
    print("t  " + "  ".join(f"{k:>14}" for k in groups))
    for t in range(args.horizon + 1):
        cells = []
        for g in groups.values():
            v = res.functional_values(g, t)
            cells.append(f"{v.mean():6.3f}±{np.std(v):5.3f}")
        print(f"{t:<2} " + "  ".join(f"{c:>14}" for c in cells))
    print(f"cumulative reward mean {res.cumulative_reward().mean():.3f}")


if __name__ == "__main__":
    main()
