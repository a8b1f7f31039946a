import math

import numpy as np
import pytest

from upomdp.certify import (
    Certificate,
    CertifyOptions,
    DegreeTooSmall,
    Direction,
    Infeasible,
    NoFeasiblePoint,
    OptimalitySpec,
    PreconditionViolated,
    SafetySpec,
    BoundProblem,
    bounds_by_degree,
    build_optimality_program,
    build_safety_program,
    line_search_bound,
    linear_products,
    putinar_terms,
    verify,
)
from upomdp.dsos import LinearProgram, solve
from upomdp.dynamics import build_dynamics
from upomdp.models import RockSampleConfig, marginal_schedule, nominal_policies, rock_marginal_model, toy_two_state
from upomdp.oracle import Claim, Counterexample, exact_reach, falsify, simulate
from upomdp.polynomial import Polynomial
from upomdp.pomdp import Arbitrary, Point, PointBelief, SemiAlgebraic, TimeSchedule, UncertainPomdp, bvar

G1 = Polynomial.var(bvar("q1"))
G2 = Polynomial.var(bvar("q2"))


def toy_dyn(uncertain=False):
    m, pol = toy_two_state(uncertain=uncertain)
    return m, pol, build_dynamics(m)


def test_specs_validate():
    with pytest.raises(ValueError):
        SafetySpec(0.5, 0, g=G1)
    with pytest.raises(ValueError):
        SafetySpec(0.5, 2)
    s = SafetySpec(0.3, 2, g=G1, direction="lower")
    assert s.direction is Direction.LOWER
    # lower bounds negate g and the bound
    assert s.unsafe_polynomial() == 0.3 - G1
    assert SafetySpec(0.3, 2, unsafe_states=("q2",)).functional == G2


def test_optimality_budget_sum():
    spec = OptimalitySpec.uniform(3.0, 5)
    assert sum(spec.budget(t) for t in range(6)) == pytest.approx(3.0, abs=1e-12)
    assert spec.budget_sum() == pytest.approx(spec.gamma, abs=1e-9)
    with pytest.raises(ValueError):
        OptimalitySpec(1.0, 2, Polynomial.constant(1.0))


def test_constraint_count_arbitrary():
    m, _, dyn = toy_dyn()
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.05, 1, g=G1, direction="lower"), Arbitrary(), 1)
    # unsafe + init + one decrease per (action, observation)
    assert prog.n_constraints == 1 + 1 + 4
    assert prog.count("decrease") == 4


def test_constraint_count_grows_with_horizon():
    m, _, dyn = toy_dyn()
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.05, 3, g=G1, direction="lower"), Arbitrary(), 1)
    assert prog.count("decrease") == 4 * 3


@pytest.mark.parametrize("d", [1, 2, 3])
def test_barrier_coefficient_count(d):
    m, pol, dyn = toy_dyn()
    spec = SafetySpec(0.05, 2, g=G1, direction="lower")
    prog = build_safety_program(dyn, m.initial_belief, spec, pol, d)
    assert prog.barrier.n_coefficients == math.comb(3 + d, d)  # (t, b1, b2)
    per = build_safety_program(dyn, m.initial_belief, spec, pol, d, CertifyOptions(time_mode="per_step"))
    assert per.barrier.n_coefficients == 3 * math.comb(2 + d, d)
    assert prog.lp.n_vars > prog.barrier.n_coefficients


def test_constraint_vars_are_beliefs_and_thetas():
    m, pol, dyn = toy_dyn(uncertain=True)
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.05, 2, g=G1, direction="lower"), pol, 2)
    allowed = set(dyn.belief_vars) | {tv.name for tv in dyn.theta_vars}
    for rec in prog.constraints:
        if rec.template is not None:
            assert set(rec.template.vars) <= allowed


def test_degree_too_small():
    m, pol, dyn = toy_dyn()
    with pytest.raises(DegreeTooSmall):
        build_safety_program(dyn, m.initial_belief, SafetySpec(0.5, 1, g=G1), pol, 0)


def test_precondition_violated():
    m, pol, dyn = toy_dyn()
    with pytest.raises(PreconditionViolated):
        build_safety_program(dyn, m.initial_belief, SafetySpec(0.5, 1, g=G1), pol, 1)
    init = SemiAlgebraic((0.4 - G1,))  # b1 >= 0.4
    with pytest.raises(PreconditionViolated):
        build_safety_program(dyn, init, SafetySpec(0.5, 1, g=G1), pol, 1)


def test_putinar_terms_shapes():
    lp = LinearProgram()
    tp, mults = putinar_terms(lp, ("x", "y"), [], 2)
    assert not tp.monomials() and mults == []
    x, y = Polynomial.var("x"), Polynomial.var("y")
    simplex = x + y - 1
    tp, mults = putinar_terms(lp, ("x", "y"), [(simplex, "equality")], 1)
    assert mults[0].kind == "equality" and len(mults[0].free_ids) == 3  # r affine in (x, y)
    assert tp.degree() == 2
    h = (Polynomial.var("th") - 0.1) * (0.2 - Polynomial.var("th"))
    tp, mults = putinar_terms(lp, ("th", "x"), [(h, "nonneg")], 2)
    assert mults[0].kind == "nonneg" and mults[0].gram is not None
    assert tp.degree() == 4


def test_linear_products():
    a, b = Polynomial.var("a"), Polynomial.var("b")
    prods = linear_products([a, b], 2)
    assert set(prods) == {a * a, a * b, b * b}
    assert len(linear_products([a, b], 3)) == 3 + 4
    assert linear_products([a, b], 1) == []
    assert set(linear_products([a, b], 2, {"a": 1, "b": 2})) == {a * b, b * b}


def test_toy_certificate():
    m, pol, dyn = toy_dyn()
    lo, _ = exact_reach(m, pol, 1).extremes(G1, 1)
    for d in (1, 2):
        prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.3, 1, g=G1, direction="lower"), pol, d)
        cert = verify(prog, n_samples=20_000)
        assert isinstance(cert, Certificate) and cert.valid
        assert cert.residual.min_margin >= -1e-6
        assert 0.3 <= lo


def test_uncertain_toy_certificate():
    m, pol, dyn = toy_dyn(uncertain=True)
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.25, 1, g=G1, direction="lower"), pol, 1)
    cert = verify(prog, n_samples=20_000)
    assert isinstance(cert, Certificate)
    assert cert.residual.classes["decrease"].samples >= 20_000


def test_counterexample_blocks_certificate():
    m, pol, dyn = toy_dyn()
    res = simulate(m, pol, horizon=1, n_trajectories=200, seed=0)
    hit = res.functional_values(G1).min()  # reached value
    spec = SafetySpec(float(hit) + 0.05, 1, g=G1, direction="lower")
    assert isinstance(falsify(Claim("functional", spec.bound, 1, G1, "lower"), m, pol), Counterexample)
    for d in (1, 2, 3):
        out = verify(build_safety_program(dyn, m.initial_belief, spec, pol, d), n_samples=5000)
        assert isinstance(out, Infeasible)


def test_contradictory_margins_infeasible():
    m, pol, dyn = toy_dyn()
    opts = CertifyOptions(s1=1e6)
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.3, 1, g=G1, direction="lower"), pol, 1, opts)
    out = verify(prog, n_samples=1000)
    assert isinstance(out, Infeasible) and out.status == "infeasible"
    # the plain feasibility form reaches the same verdict through the solver
    opts = CertifyOptions(s1=1e6, margin_objective=False)
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.3, 1, g=G1, direction="lower"), pol, 1, opts)
    assert solve(prog.lp).status == "infeasible"


@pytest.mark.parametrize("simplex", ["eliminate", "multiplier"])
def test_simplex_handling_variants(simplex):
    m, pol, dyn = toy_dyn()
    opts = CertifyOptions(simplex=simplex)
    prog = build_safety_program(dyn, m.initial_belief, SafetySpec(0.3, 1, g=G1, direction="lower"), pol, 1, opts)
    assert isinstance(verify(prog, n_samples=5000), Certificate)


def test_semialgebraic_init():
    m, pol, dyn = toy_dyn()
    init = SemiAlgebraic((0.95 - G1,))  # b1 >= 0.95
    prog = build_safety_program(dyn, init, SafetySpec(0.25, 1, g=G1, direction="lower"), pol, 2)
    cert = verify(prog, n_samples=20_000)
    assert isinstance(cert, Certificate)
    assert cert.residual.classes["init"].samples > 1


def absorbing_safe():
    states = ("safe", "other")
    T = {("safe", "a", "safe"): Point(1.0), ("other", "a", "other"): Point(0.5), ("other", "a", "safe"): Point(0.5)}
    O = {("safe", "a", "z"): Point(1.0), ("other", "a", "z"): Point(1.0)}
    R = {("safe", "a"): 0.0, ("other", "a"): 1.0}
    return UncertainPomdp(states, ("a",), ("z",), T, O, PointBelief((1.0, 0.0)), R)


def test_invariant_point_mass_bound():
    m = absorbing_safe()
    dyn = build_dynamics(m)
    g = Polynomial.var(bvar("safe"))
    prob = BoundProblem(dyn, m.initial_belief, g, Direction.LOWER, 3, Arbitrary())
    res = line_search_bound(prob, 1, eps=0.01, n_samples=5000)
    assert res.bound >= 1 - 0.01
    assert res.certificate.valid


def test_zero_reward_optimality_certificate():
    m = absorbing_safe()
    dyn = build_dynamics(m)
    for H in (1, 3):
        prog = build_optimality_program(dyn, m.initial_belief, OptimalitySpec.uniform(0.1, H), Arbitrary(), 1, m.rewards)
        assert isinstance(verify(prog, n_samples=5000), Certificate)


def test_forced_reward_above_gamma():
    m, pol, dyn = toy_dyn()
    spec = OptimalitySpec.uniform(0.5, 1)
    claim = Claim("cumulative_reward", 0.5, 1)
    assert isinstance(falsify(claim, m, pol), Counterexample)
    with pytest.raises(PreconditionViolated):
        build_optimality_program(dyn, m.initial_belief, spec, TimeSchedule(("a1", "a1")), 1, m.rewards)


def test_line_search_on_toy():
    m, pol, dyn = toy_dyn()
    lo, _ = exact_reach(m, pol, 1).extremes(G1, 1)
    prob = BoundProblem(dyn, m.initial_belief, G1, Direction.LOWER, 1, pol)
    res = line_search_bound(prob, 1, eps=0.01, n_samples=5000)
    assert res.bound <= lo
    assert res.bound == pytest.approx(0.33)
    assert round(res.bound / 0.01) * 0.01 == pytest.approx(res.bound)
    again = line_search_bound(prob, 1, eps=0.01, n_samples=5000)
    assert again.bound == res.bound and again.probes == res.probes


def test_upper_line_search():
    m, pol, dyn = toy_dyn()
    _, hi = exact_reach(m, pol, 1).extremes(G2, 1)
    prob = BoundProblem(dyn, m.initial_belief, G2, Direction.UPPER, 1, pol)
    res = line_search_bound(prob, 1, eps=0.01, n_samples=5000)
    assert res.bound >= hi
    assert res.bound <= hi + 0.05


def test_no_feasible_point():
    m, pol, dyn = toy_dyn()
    prob = BoundProblem(dyn, m.initial_belief, G1, Direction.LOWER, 3, pol)
    with pytest.raises(NoFeasiblePoint):
        line_search_bound(prob, 1, eps=0.05, n_samples=2000)


def test_rocksample_case_one_feasible():
    c = RockSampleConfig.case_one()
    m = rock_marginal_model(c)
    sched = marginal_schedule(c, nominal_policies("I", c))
    dyn = build_dynamics(m)
    spec = SafetySpec(0.12, 4, g=Polynomial.var(bvar("good")), direction="lower")
    out = verify(build_safety_program(dyn, m.initial_belief, spec, sched, 1), n_samples=20_000)
    assert isinstance(out, Certificate)


def test_bounds_monotone_in_degree_rock():
    c = RockSampleConfig.case_one()
    m = rock_marginal_model(c)
    sched = marginal_schedule(c, nominal_policies("I", c))
    prob = BoundProblem(build_dynamics(m), m.initial_belief, Polynomial.var(bvar("good")), Direction.LOWER, 4, sched)
    rs = bounds_by_degree(prob, [1, 2], eps=0.02, n_samples=5000)
    assert rs[0].bound <= rs[1].bound
    worst = exact_reach(m, sched, 4).extremes(Polynomial.var(bvar("good")), 4)[0]
    assert rs[-1].bound <= worst
