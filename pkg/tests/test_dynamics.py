import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from upomdp.dynamics import build_dynamics, modes_for, theta_constraint, theta_constraints
from upomdp.models import random_model, toy_two_state
from upomdp.polynomial import Polynomial
from upomdp.pomdp import Arbitrary, BeliefRegions, TimeSchedule, belief_update, bvar, theta_name

B1, B2 = bvar("q1"), bvar("q2")


def test_certain_two_state_field(rng):
    m, _ = toy_two_state()
    dyn = build_dynamics(m)
    vf = dyn.modes[("a1", "z1")]
    b1, b2 = Polynomial.var(B1), Polynomial.var(B2)
    assert vf.rows["q1"].almost_equal(0.9 * (0.8 * b1 + 0.3 * b2))
    assert vf.denominator == vf.rows["q1"] + vf.rows["q2"]
    for _ in range(100):
        b = rng.dirichlet([1, 1])
        for (a, z), f in dyn.modes.items():
            got = f.evaluate({B1: b[0], B2: b[1]}, m.states)
            np.testing.assert_allclose(got, belief_update(m, b, a, z), atol=1e-12)


def test_theta_monomial_coefficient():
    m, _ = toy_two_state(uncertain=True)
    dyn = build_dynamics(m)
    th = theta_name(("T", "q1", "a1", "q1"))
    vf = dyn.modes[("a1", "z1")]
    assert vf.rows["q1"].coefficient({th: 1, B1: 1}) == pytest.approx(0.9)
    assert [tv.name for tv in dyn.theta_vars] == [th, theta_name(("T", "q1", "a1", "q2"))]
    # the other action has no uncertain entry
    assert dyn.modes[("a2", "z1")].theta_names() == ()


@given(st.integers(0, 500), st.floats(0.0, 0.15))
def test_denominator_is_row_sum(seed, unc):
    m = random_model((3, 2, 2), seed=seed, uncertainty=unc)
    dyn = build_dynamics(m)
    for vf in dyn.modes.values():
        total = Polynomial()
        for q in m.states:
            total = total + vf.rows[q]
        assert total == vf.denominator


def test_uncertain_field_matches_update(rng):
    m = random_model((3, 2, 2), seed=3, uncertainty=0.1, min_prob=0.05)
    dyn = build_dynamics(m)
    for _ in range(50):
        theta = {}
        point = {}
        for tv in dyn.theta_vars:
            v = rng.uniform(tv.lo, tv.hi)
            theta[tv.key] = v
            point[tv.name] = v
        b = rng.dirichlet(np.ones(3))
        point.update({bvar(q): x for q, x in zip(m.states, b)})
        for (a, z), vf in dyn.modes.items():
            keys = {k: v for k, v in theta.items() if k[2] == a}
            full = {}
            for key in m.uncertain_triplets():
                if key[2] == a:
                    full[key] = keys.get(key, 0.5 * (m.entry(key).lo + m.entry(key).hi))
            np.testing.assert_allclose(vf.evaluate(point, m.states), belief_update(m, b, a, z, full), atol=1e-10)


def test_mode_listing():
    assert len(modes_for(Arbitrary(), 0, ("a", "b", "c", "d"))) == 4
    assert all(g == () for _, g in modes_for(Arbitrary(), 0, ("a", "b", "c", "d")))
    assert modes_for(TimeSchedule(("a1", "a2")), 1, ("a1", "a2")) == [("a2", ())]
    _, pol = toy_two_state()
    modes = modes_for(pol, 0, ("a1", "a2"))
    assert [a for a, _ in modes] == ["a1", "a2"]
    # guards b1 - 1/2 >= 0 and 1/2 - b1 >= 0 cover the segment, meeting at one point
    g1, g2 = modes[0][1][0], modes[1][1][0]
    for x in np.linspace(0, 1, 11):
        vals = (g1.evaluate({B1: x}), g2.evaluate({B1: x}))
        assert max(vals) >= 0


def test_interval_indicator():
    m, _ = toy_two_state(uncertain=True)
    dyn = build_dynamics(m)
    tv = dyn.theta_vars[0]
    h = theta_constraint(tv)
    assert h.evaluate({tv.name: 0.8}) > 0
    assert h.evaluate({tv.name: tv.lo}) == pytest.approx(0)
    assert h.evaluate({tv.name: tv.hi}) == pytest.approx(0)
    assert h.evaluate({tv.name: 0.5}) < 0
    assert len(theta_constraints(dyn)) == 2


def test_interval_indicator_hand_values():
    from upomdp.dynamics import ThetaVar

    tv = ThetaVar("th", ("O", "q", "a", "z"), 0.1, 0.2)
    h = theta_constraint(tv)
    assert h.evaluate({"th": 0.15}) == pytest.approx(0.0025)
    assert h.evaluate({"th": 0.5}) < 0


def test_observation_midpoints():
    from upomdp.models import RockSampleConfig, rock_marginal_model

    m = rock_marginal_model(RockSampleConfig.case_one())
    assert build_dynamics(m).theta_vars
    assert not build_dynamics(m, observation_uncertainty=False).theta_vars


def test_row_stochastic_equalities():
    m, _ = toy_two_state(uncertain=True)
    dyn = build_dynamics(m, theta_row_stochastic=True)
    assert len(dyn.theta_row_sums) == 1
    p = dyn.theta_row_sums[0]
    assert p.evaluate({tv.name: 0.5 for tv in dyn.theta_vars}) == pytest.approx(0.0)


def test_dump_is_readable():
    m, _ = toy_two_state(uncertain=True)
    text = build_dynamics(m).dump()
    assert "mode (a1, z1)" in text and "in [0.75, 0.85]" in text
