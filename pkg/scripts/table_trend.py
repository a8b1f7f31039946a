"""Certified lower bound on b(good) by barrier degree, on the one-rock Case I model.

    python scripts/table_trend.py --horizons 4 6 --out results/trend.csv
"""
import argparse
import csv
import time
from pathlib import Path

from upomdp.certify import BoundProblem, Direction, NoFeasiblePoint, line_search_bound
from upomdp.dynamics import build_dynamics
from upomdp.models import RockSampleConfig, marginal_schedule, nominal_policies, rock_marginal_model
from upomdp.oracle import CapacityExceeded, empirical_extreme, exact_reach
from upomdp.polynomial import Polynomial
from upomdp.pomdp import bvar


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", choices=("I", "II"), default="I")
    ap.add_argument("--horizons", type=int, nargs="+", default=[4, 6])
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/trend.csv")
    args = ap.parse_args()

    cfg = RockSampleConfig.case_one() if args.case == "I" else RockSampleConfig.case_two()
    model = rock_marginal_model(cfg)
    sched = marginal_schedule(cfg, nominal_policies(args.case, cfg))
    dyn = build_dynamics(model)
    good = Polynomial.var(bvar("good"))

    rows = []
    for H in args.horizons:
        try:
            exact = exact_reach(model, sched, H).extremes(good, H)[0]
        except CapacityExceeded:
            exact = float("nan")  # too many branches to enumerate
        emp = empirical_extreme(model, sched, good, H, lower=True, seed=args.seed)["worst"]
        prob = BoundProblem(dyn, model.initial_belief, good, Direction.LOWER, H, sched)
        for d in args.degrees:
            t0 = time.perf_counter()
            try:
                lam = line_search_bound(prob, d, args.eps, n_samples=args.samples, seed=args.seed).bound
            except NoFeasiblePoint:
                lam = None
            dt = time.perf_counter() - t0
            rows.append([H, d, "" if lam is None else f"{lam:.4f}", f"{exact:.4f}", f"{emp:.4f}", f"{dt:.1f}"])
            print(f"H={H} d={d} bound={lam} exact_min={exact:.4f} empirical={emp:.4f} ({dt:.1f}s)", flush=True)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["horizon", "degree", "bound", "exact_min", "empirical_worst", "seconds"])
        w.writerows(rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
