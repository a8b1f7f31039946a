"""Command-line front end: generate, verify, falsify, report.

Exit codes: 0 certified (or success for non-verifying commands), 1 usage or
data error, 2 no certificate found, 3 falsified.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .certify import (
    BoundProblem,
    Certificate,
    CertifyOptions,
    Direction,
    NoFeasiblePoint,
    OptimalitySpec,
    PreconditionViolated,
    SafetySpec,
    SolverFailure,
    build_optimality_program,
    build_safety_program,
    line_search_bound,
    verify,
)
from .dynamics import build_dynamics
from .modelio import (
    ParseError,
    parse_model,
    parse_policy,
    parse_polynomial,
    parse_spec,
    serialize_model,
    serialize_policy,
    serialize_spec,
    spec_to_dict,
)
from .models import (
    RockSampleConfig,
    marginal_schedule,
    nominal_policies,
    rock_marginal_model,
    rocksample,
)
from .oracle import THETA_STRATEGIES, Claim, Counterexample, empirical_extreme, falsify, simulate
from .polynomial import Polynomial
from .pomdp import mass_functional, validate_model

SCHEMA = 1
EXIT_OK, EXIT_DATA, EXIT_UNKNOWN, EXIT_FALSIFIED = 0, 1, 2, 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_DATA, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    raw = os.environ.get("UPOMDP_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"UPOMDP_SEED must be an integer, got {raw!r}") from None


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None


def load_model(path: str):
    model = parse_model(_read(path))
    rep = validate_model(model)
    if not rep.ok:
        raise DataError("invalid model: " + "; ".join(rep.violations))
    return model


def load_functional(arg: str, model) -> Polynomial:
    """A JSON polynomial file, or comma-separated state names (their belief mass)."""
    if Path(arg).is_file():
        return parse_polynomial(json.loads(_read(arg)), "functional", model.states)
    names = [s.strip() for s in arg.split(",") if s.strip()]
    unknown = [q for q in names if q not in model.states]
    if unknown or not names:
        raise DataError(f"functional: unknown states {unknown}")
    return mass_functional(names)


def _options(args) -> CertifyOptions:
    return CertifyOptions(
        s1=args.margin,
        s2=args.margin,
        multiplier_degree=args.multiplier_degree,
        time_mode=args.time_mode,
    )


def _split_timings(summary: dict, timings: dict, label: str) -> dict:
    solver = dict(summary.get("solver", {}))
    t = solver.pop("timing", None)
    if t:
        timings[label] = t
    return {**summary, "solver": solver}


def _report(mode: str, spec_doc, seed: int) -> dict:
    return {
        "schema": SCHEMA,
        "tool_version": __version__,
        "mode": mode,
        "spec": spec_doc,
        "seeds": {"master": seed},
        "pipeline": [],
        "timings": {},
    }


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump_dynamics(args, dyn) -> None:
    if getattr(args, "dump_dynamics", None):
        Path(args.dump_dynamics).write_text(dyn.dump(), encoding="utf-8")


def _certify_and_report(report, prog_builder, args, claim, model, policy) -> int:
    t0 = time.perf_counter()
    report["pipeline"].append("falsify")
    found = falsify(claim, model, policy, budget=args.falsify_budget, seed=args.seed)
    report["timings"]["falsify_s"] = time.perf_counter() - t0
    if isinstance(found, Counterexample):
        report["result"] = {"status": "falsified", "witness": found.to_dict()}
        _emit(report, args.out)
        return EXIT_FALSIFIED
    report["oracle"] = {"falsify": {"trajectories": found.trajectories, "most_adverse": found.worst}}
    report["pipeline"].append("certify")
    try:
        prog = prog_builder()
    except PreconditionViolated as e:
        report["result"] = {"status": "precondition-violated", "message": str(e)}
        _emit(report, args.out)
        return EXIT_UNKNOWN
    try:
        out = verify(prog, n_samples=args.samples, seed=args.seed)
    except SolverFailure as e:
        report["result"] = {"status": "solver-failure", "message": str(e)}
        _emit(report, args.out)
        return EXIT_UNKNOWN
    if isinstance(out, Certificate):
        assert out.residual.passed
        report["result"] = {"status": "certified", "bound": claim.bound}
        report["certificate"] = _split_timings(out.summary(), report["timings"], "certify")
        _emit(report, args.out)
        return EXIT_OK
    report["result"] = {"status": "infeasible", "detail": _split_timings(out.summary(), report["timings"], "certify")}
    _emit(report, args.out)
    return EXIT_UNKNOWN


def cmd_check_safety(args) -> int:
    model = load_model(args.model)
    policy = parse_policy(_read(args.policy), model)
    spec = parse_spec(_read(args.spec), model)
    if not isinstance(spec, SafetySpec):
        raise DataError("check-safety needs a safety spec")
    dyn = build_dynamics(model)
    _dump_dynamics(args, dyn)
    report = _report("safety", spec_to_dict(spec), args.seed)
    report["degree"] = args.degree
    claim = Claim("functional", spec.bound, spec.horizon, spec.functional, spec.direction.value)

    def build():
        return build_safety_program(dyn, model.initial_belief, spec, policy, args.degree, _options(args))

    return _certify_and_report(report, build, args, claim, model, policy)


def cmd_check_optimality(args) -> int:
    model = load_model(args.model)
    policy = parse_policy(_read(args.policy), model)
    spec = parse_spec(_read(args.spec), model)
    if not isinstance(spec, OptimalitySpec):
        raise DataError("check-optimality needs an optimality spec")
    dyn = build_dynamics(model)
    _dump_dynamics(args, dyn)
    report = _report("optimality", spec_to_dict(spec), args.seed)
    report["degree"] = args.degree
    claim = Claim("cumulative_reward", spec.gamma, spec.horizon)

    def build():
        return build_optimality_program(
            dyn, model.initial_belief, spec, policy, args.degree, model.rewards, _options(args)
        )

    return _certify_and_report(report, build, args, claim, model, policy)


def _degrees(raw: list[str]) -> list[int]:
    out = []
    for chunk in raw:
        for part in chunk.split(","):
            if part.strip():
                out.append(int(part))
    if not out or min(out) < 1:
        raise DataError("degrees must be positive integers")
    return out


def cmd_bound(args) -> int:
    model = load_model(args.model)
    policy = parse_policy(_read(args.policy), model)
    g = load_functional(args.functional, model)
    dyn = build_dynamics(model)
    _dump_dynamics(args, dyn)
    direction = Direction(args.direction)
    problem = BoundProblem(dyn, model.initial_belief, g, direction, args.horizon, policy, _options(args))
    degrees = _degrees(args.degree)
    spec_doc = {
        "functional": g.to_spec(),
        "direction": direction.value,
        "horizon": args.horizon,
        "eps": args.eps,
        "degrees": degrees,
        "range": [args.lo, args.hi],
    }
    report = _report("bound-search", spec_doc, args.seed)
    report["pipeline"] = ["simulate", "line-search"]
    t0 = time.perf_counter()
    emp = empirical_extreme(
        model, policy, g, args.horizon, direction is Direction.LOWER, n_trajectories=args.trajectories, seed=args.seed
    )
    report["timings"]["simulate_s"] = time.perf_counter() - t0
    report["oracle"] = emp
    rows = []
    for d in degrees:
        t0 = time.perf_counter()
        try:
            res = line_search_bound(problem, d, args.eps, args.lo, args.hi, n_samples=args.samples, seed=args.seed)
        except NoFeasiblePoint as e:
            rows.append({"degree": d, "bound": None, "status": "no-feasible-point", "message": str(e)})
            report["timings"][f"degree_{d}_s"] = time.perf_counter() - t0
            continue
        report["timings"][f"degree_{d}_s"] = time.perf_counter() - t0
        rows.append({
            "degree": d,
            "bound": res.bound,
            "status": "certified",
            "probes": [[lam, out] for lam, out in res.probes],
            "certificate": _split_timings(res.certificate.summary(), {}, ""),
        })
    report["result"] = {"status": "done", "table": rows}
    lines = [f"{'degree':>6}  {'bound':>8}  {'empirical':>9}"]
    for r in rows:
        b = "-" if r["bound"] is None else f"{r['bound']:.4f}"
        lines.append(f"{r['degree']:>6}  {b:>8}  {emp['worst']:>9.4f}")
    sys.stderr.write("\n".join(lines) + "\n")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["degree", "bound", "empirical_worst"])
        for r in rows:
            w.writerow([r["degree"], "" if r["bound"] is None else f"{r['bound']:.6g}", f"{emp['worst']:.12g}"])
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    _emit(report, args.out)
    return EXIT_OK if any(r["bound"] is not None for r in rows) else EXIT_UNKNOWN


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    policy = parse_policy(_read(args.policy), model)
    res = simulate(model, policy, args.theta_strategy, args.horizon, args.trajectories, seed=args.seed)
    functionals = {}
    for arg in args.functional or ():
        functionals[arg] = load_functional(arg, model)
    report = _report("simulate", {"horizon": args.horizon, "theta_strategy": args.theta_strategy,
                                  "trajectories": args.trajectories}, args.seed)
    report["result"] = {"status": "done", "statistics": res.stats(functionals)}
    if args.csv and functionals:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(functionals)
        w.writerow(["t"] + [f"{n}_{s}" for n in names for s in ("min", "mean", "max")])
        for t in range(args.horizon + 1):
            row = [t]
            for n in names:
                v = res.functional_values(functionals[n], t)
                row += [f"{v.min():.12g}", f"{v.mean():.12g}", f"{v.max():.12g}"]
            w.writerow(row)
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    if args.dump_trajectories:
        k = min(args.trajectories, args.dump_limit)
        dump = [res.trajectory(i).to_dict() for i in range(k)]
        Path(args.dump_trajectories).write_text(json.dumps(dump, sort_keys=True) + "\n", encoding="utf-8")
    _emit(report, args.out)
    return EXIT_OK


def _rock_config(args) -> RockSampleConfig:
    base = RockSampleConfig.case_one if args.case == "I" else RockSampleConfig.case_two
    rocks = default_rocks(args.n, args.k)
    truth = tuple("good" if i % 2 == 0 else "bad" for i in range(args.k))
    start = (0, args.n // 2)
    return base(n=args.n, rocks=rocks, truth=truth, start=start, slip=args.slip, sensor=args.sensor)


def default_rocks(n: int, k: int) -> tuple:
    """Rocks alternate between the top and bottom rows, left to right from column 1."""
    if n < 2:
        raise DataError("grid size must be >= 2 for rocks")
    cells = []
    for i in range(n * n):
        x = 1 + (i // 2) % (n - 1)
        y = n - 1 if i % 2 == 0 else 0
        if (x, y) not in cells:
            cells.append((x, y))
    for y in range(n):
        for x in range(n):
            if (x, y) not in cells:
                cells.append((x, y))
    if k > len(cells):
        raise DataError(f"cannot place {k} rocks on a {n}x{n} grid")
    return tuple(cells[:k])


def cmd_gen_rocksample(args) -> int:
    cfg = _rock_config(args)
    sched = nominal_policies(args.case, cfg, length=max(args.horizon + 1, 46))
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.marginal:
        model = rock_marginal_model(cfg, rock=0)
        policy = marginal_schedule(cfg, sched, rock=0)
        spec = SafetySpec(args.bound, args.horizon, g=mass_functional(["good"]), direction="lower")
    else:
        rs = rocksample(cfg)
        model, policy = rs.model, sched
        spec = SafetySpec(args.bound, args.horizon, unsafe_states=rs.groups["slip"], direction="upper")
    files = {"model.json": serialize_model(model), "policy.json": serialize_policy(policy), "spec.json": serialize_spec(spec)}
    for name, text in files.items():
        (outdir / name).write_text(text + "\n", encoding="utf-8")
    sys.stdout.write("\n".join(str(outdir / n) for n in files) + "\n")
    return EXIT_OK


def _common_verify(p, samples=100_000):
    p.add_argument("--seed", type=int, default=None, help="default: $UPOMDP_SEED or 0")
    p.add_argument("--samples", type=int, default=samples, help="residual-check samples per constraint class")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--margin", type=float, default=1e-4, help="margins s1 = s2")
    p.add_argument("--multiplier-degree", type=int, default=None)
    p.add_argument("--time-mode", choices=("poly", "per_step"), default="poly")
    p.add_argument("--dump-dynamics", metavar="FILE")
    p.add_argument("--out", metavar="FILE")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="upomdp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn in (("check-safety", cmd_check_safety), ("check-optimality", cmd_check_optimality)):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--policy", required=True)
        p.add_argument("--spec", required=True)
        p.add_argument("--degree", type=int, required=True)
        p.add_argument("--falsify-budget", type=int, default=10_000)
        _common_verify(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("bound")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--functional", required=True, help="polynomial JSON file or comma-separated states")
    p.add_argument("--direction", choices=("upper", "lower"), required=True)
    p.add_argument("--degree", nargs="+", required=True, help="e.g. 1 2 3 or 1,2,3")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--trajectories", type=int, default=10_000)
    p.add_argument("--csv", metavar="FILE")
    _common_verify(p, samples=100_000)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--trajectories", type=int, default=10_000)
    p.add_argument("--theta-strategy", choices=THETA_STRATEGIES, default="fixed")
    p.add_argument("--functional", action="append", help="repeatable; file or comma-separated states")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", metavar="FILE")
    p.add_argument("--dump-trajectories", metavar="FILE")
    p.add_argument("--dump-limit", type=int, default=100)
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-rocksample")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--case", choices=("I", "II"), default="I")
    p.add_argument("--sensor", choices=("detector", "symmetric"), default="detector")
    p.add_argument("--slip", type=float, default=0.05)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--bound", type=float, default=None)
    p.add_argument("--marginal", action="store_true", help="emit the one-rock marginal model instead")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gen_rocksample)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = default_seed()
        if getattr(args, "bound", "x") is None:
            args.bound = 0.12 if args.marginal else 0.1
        return args.func(args)
    except (DataError, ParseError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_DATA
    except ValueError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
