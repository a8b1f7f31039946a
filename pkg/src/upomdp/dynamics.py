"""Switched-system view of the belief filter.

Each (action, observation) pair is a mode with rational vector field
``b'(q') = S^{q'}(b, theta) / R(b, theta)`` where
``S^{q'} = O(q', a, z) * sum_q T(q, a, q') b(q)`` and ``R = sum_{q'} S^{q'}``.
Interval entries become indeterminates theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .polynomial import Polynomial, RationalFunction, poly_sum
from .pomdp import (
    Arbitrary,
    BeliefRegions,
    Interval,
    Policy,
    TimeSchedule,
    UncertainPomdp,
    bvar,
    theta_name,
)


@dataclass(frozen=True)
class ThetaVar:
    name: str
    key: tuple
    lo: float
    hi: float


@dataclass(frozen=True)
class VectorField:
    rows: dict  # state -> numerator polynomial S^{q'}
    denominator: Polynomial

    def rationals(self, states) -> dict[str, RationalFunction]:
        """Belief-variable -> S/R, ready for substitute_rational."""
        return {bvar(q): RationalFunction(self.rows[q], self.denominator) for q in states}

    def theta_names(self) -> tuple[str, ...]:
        return tuple(v for v in self.denominator.used_vars() if v.startswith("theta_"))

    def evaluate(self, point: Mapping[str, float], states) -> np.ndarray:
        R = self.denominator.evaluate(point)
        return np.array([self.rows[q].evaluate(point) for q in states]) / R

    def evaluate_batch(self, point: Mapping[str, np.ndarray], states) -> tuple[np.ndarray, np.ndarray]:
        """Numerators stacked on the last axis, and the denominator."""
        R = self.denominator.evaluate_batch(point)
        S = np.stack([np.broadcast_to(self.rows[q].evaluate_batch(point), np.shape(R)) for q in states], axis=-1)
        return S, R


@dataclass(frozen=True)
class BeliefDynamics:
    states: tuple
    belief_vars: tuple
    modes: dict  # (action, observation) -> VectorField
    theta_vars: tuple  # of ThetaVar
    actions: tuple = ()
    simplex_equality: bool = True
    theta_row_sums: tuple = field(default=())  # optional equality constraints on theta

    def modes_of(self, action: str) -> list[tuple[str, VectorField]]:
        return [(z, vf) for (a, z), vf in self.modes.items() if a == action]

    def theta(self, name: str) -> ThetaVar:
        for tv in self.theta_vars:
            if tv.name == name:
                return tv
        raise KeyError(name)

    def dump(self) -> str:
        lines = []
        for (a, z), vf in self.modes.items():
            lines.append(f"mode ({a}, {z})")
            for q in self.states:
                lines.append(f"  S[{q}] = {vf.rows[q].to_text()}")
            lines.append(f"  R = {vf.denominator.to_text()}")
        for tv in self.theta_vars:
            lines.append(f"{tv.name} in [{tv.lo:.12g}, {tv.hi:.12g}]")
        return "\n".join(lines) + "\n"


def _entry_poly(e, key) -> Polynomial:
    if isinstance(e, Interval):
        return Polynomial.var(theta_name(key))
    return Polynomial.constant(e.value)


def build_dynamics(
    model: UncertainPomdp,
    observation_uncertainty: bool = True,
    theta_row_stochastic: bool = False,
) -> BeliefDynamics:
    """Rational vector fields for every (a, z) with a structurally nonzero R.

    Observation intervals become theta variables unless
    `observation_uncertainty` is off, in which case their midpoints are used.
    With `theta_row_stochastic`, rows containing theta contribute equality
    constraints ``sum_{q'} T(q, a, q') - 1 = 0`` (and the observation
    analogue) for use as extra multipliers.
    """
    states = model.states
    bv = [bvar(q) for q in states]
    thetas: dict[str, ThetaVar] = {}

    def tentry(q, a, q2):
        e = model.transition.get((q, a, q2))
        if e is None:
            return None
        key = ("T", q, a, q2)
        if isinstance(e, Interval):
            thetas.setdefault(theta_name(key), ThetaVar(theta_name(key), key, e.lo, e.hi))
        return _entry_poly(e, key)

    def oentry(q2, a, z):
        e = model.observation_fn.get((q2, a, z))
        if e is None:
            return None
        key = ("O", q2, a, z)
        if isinstance(e, Interval):
            if not observation_uncertainty:
                return Polynomial.constant(0.5 * (e.lo + e.hi))
            thetas.setdefault(theta_name(key), ThetaVar(theta_name(key), key, e.lo, e.hi))
        return _entry_poly(e, key)

    modes = {}
    for a in model.actions:
        pred = {}
        for q2 in states:
            parts = []
            for q, name in zip(states, bv):
                c = tentry(q, a, q2)
                if c is not None:
                    parts.append(c * Polynomial.var(name))
            pred[q2] = poly_sum(parts) if parts else Polynomial()
        for z in model.observations:
            rows = {}
            for q2 in states:
                o = oentry(q2, a, z)
                rows[q2] = (o * pred[q2]) if o is not None else Polynomial()
            R = poly_sum(rows.values())
            if R.is_zero():
                continue
            modes[(a, z)] = VectorField(rows, R)

    # keep only thetas that actually appear in some mode
    used = set()
    for vf in modes.values():
        used.update(vf.theta_names())
    theta_vars = tuple(tv for tv in thetas.values() if tv.name in used)

    row_sums = []
    if theta_row_stochastic:
        for a in model.actions:
            for q in states:
                row = [(q2, model.transition.get((q, a, q2))) for q2 in states]
                if any(isinstance(e, Interval) for _, e in row if e is not None):
                    p = poly_sum(_entry_poly(e, ("T", q, a, q2)) for q2, e in row if e is not None) - 1.0
                    if set(p.used_vars()) <= used:
                        row_sums.append(p)
            if observation_uncertainty:
                for q2 in states:
                    row = [(z, model.observation_fn.get((q2, a, z))) for z in model.observations]
                    if any(isinstance(e, Interval) for _, e in row if e is not None):
                        p = poly_sum(_entry_poly(e, ("O", q2, a, z)) for z, e in row if e is not None) - 1.0
                        if set(p.used_vars()) <= used:
                            row_sums.append(p)
    return BeliefDynamics(
        states=tuple(states),
        belief_vars=tuple(bv),
        modes=modes,
        theta_vars=theta_vars,
        actions=tuple(model.actions),
        theta_row_sums=tuple(row_sums),
    )


def modes_for(policy: Policy, t: int, actions) -> list[tuple[str, tuple]]:
    """Actions active at step `t` with the guard polynomials (``>= 0``) restricting them."""
    if isinstance(policy, Arbitrary):
        return [(a, ()) for a in actions]
    if isinstance(policy, TimeSchedule):
        return [(policy.action_at(t), ())]
    if isinstance(policy, BeliefRegions):
        return [(a, tuple(guards)) for guards, a in policy.regions]
    raise TypeError(f"unknown policy {policy!r}")


def theta_constraints(dyn: BeliefDynamics) -> list[Polynomial]:
    """``h(theta) = (theta - lo)(hi - theta)``, nonnegative exactly on the interval."""
    out = []
    for tv in dyn.theta_vars:
        th = Polynomial.var(tv.name)
        out.append((th - tv.lo) * (tv.hi - th))
    return out


def theta_constraint(tv: ThetaVar) -> Polynomial:
    th = Polynomial.var(tv.name)
    return (th - tv.lo) * (tv.hi - th)
