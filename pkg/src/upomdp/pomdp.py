"""Uncertain POMDP data model, validation, numeric belief filter and rewards."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from .polynomial import Polynomial

ROW_TOL = 1e-9


class ImpossibleObservation(ValueError):
    """The observation has zero predicted probability under the given belief."""


class MissingTheta(KeyError):
    pass


class ScheduleExhausted(IndexError):
    pass


@dataclass(frozen=True)
class Point:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"probability {self.value} outside [0, 1]")

    @property
    def lo(self) -> float:
        return self.value

    @property
    def hi(self) -> float:
        return self.value


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    def contains(self, x: float, tol: float = 1e-12) -> bool:
        return self.lo - tol <= x <= self.hi + tol


ProbEntry = Union[Point, Interval]


def bvar(state: str) -> str:
    """Name of the belief indeterminate for `state`."""
    return f"b[{state}]"


def theta_name(key: tuple) -> str:
    kind, a, b, c = key
    return f"theta_{kind}[{a},{b},{c}]"


@dataclass(frozen=True)
class PointBelief:
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))

    def as_array(self) -> np.ndarray:
        return np.array(self.probs)


@dataclass(frozen=True)
class SemiAlgebraic:
    """Belief set ``{b in simplex : l_i(b) <= 0 for all i}``."""

    constraints: tuple

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.constraints:
            raise ValueError("semi-algebraic belief set needs at least one constraint")

    def contains(self, b: Mapping[str, float], tol: float = 0.0) -> bool:
        return all(c.evaluate(b) <= tol for c in self.constraints)


BeliefSet = Union[PointBelief, SemiAlgebraic]


@dataclass(frozen=True)
class Arbitrary:
    pass


@dataclass(frozen=True)
class TimeSchedule:
    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))

    def action_at(self, t: int) -> str:
        if t >= len(self.actions):
            raise ScheduleExhausted(f"schedule has {len(self.actions)} steps, asked for step {t}")
        return self.actions[t]


@dataclass(frozen=True)
class BeliefRegions:
    """State-dependent switching: first region whose guards ``g_j(b) >= 0`` all hold."""

    regions: tuple  # of (tuple[Polynomial, ...], action)

    def __post_init__(self):
        object.__setattr__(
            self, "regions", tuple((tuple(g), a) for g, a in self.regions)
        )

    def action_for(self, point: Mapping[str, float], tol: float = 1e-12) -> str:
        for guards, action in self.regions:
            if all(g.evaluate(point) >= -tol for g in guards):
                return action
        raise ValueError("belief not covered by any policy region")

    def actions_batch(self, point: Mapping[str, np.ndarray], n: int, tol: float = 1e-12) -> np.ndarray:
        """Region index per sample (-1 when uncovered), declaration-order tie-break."""
        out = np.full(n, -1, dtype=int)
        for k, (guards, _) in enumerate(self.regions):
            ok = np.ones(n, dtype=bool)
            for g in guards:
                ok &= np.broadcast_to(g.evaluate_batch(point), (n,)) >= -tol
            out[(out < 0) & ok] = k
        return out


Policy = Union[Arbitrary, TimeSchedule, BeliefRegions]


def _normalize_entries(entries: Mapping) -> dict:
    return {tuple(k): v for k, v in entries.items() if not (isinstance(v, Point) and v.value == 0.0)}


@dataclass(frozen=True, eq=True)
class UncertainPomdp:
    """POMDP with point or interval transition/observation probabilities.

    `transition` maps ``(q, a, q')`` and `observation_fn` maps ``(q', a, z)``
    to a ProbEntry; missing entries are zero. Explicit zero points are dropped
    at construction so equality is structural.
    """

    states: tuple
    actions: tuple
    observations: tuple
    transition: dict
    observation_fn: dict
    initial_belief: BeliefSet
    rewards: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "transition", _normalize_entries(self.transition))
        object.__setattr__(self, "observation_fn", _normalize_entries(self.observation_fn))
        object.__setattr__(
            self, "rewards", {tuple(k): float(v) for k, v in self.rewards.items() if float(v) != 0.0}
        )

    __hash__ = None  # mutable-looking containers inside; identity not needed

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def belief_vars(self) -> list[str]:
        return [bvar(q) for q in self.states]

    def uncertain_triplets(self, include_observations: bool = True) -> list[tuple]:
        """Keys ``("T", q, a, q')`` / ``("O", q', a, z)`` of interval entries, model order."""
        out = []
        for a in self.actions:
            for q in self.states:
                for q2 in self.states:
                    if isinstance(self.transition.get((q, a, q2)), Interval):
                        out.append(("T", q, a, q2))
        if include_observations:
            for a in self.actions:
                for q2 in self.states:
                    for z in self.observations:
                        if isinstance(self.observation_fn.get((q2, a, z)), Interval):
                            out.append(("O", q2, a, z))
        return out

    def entry(self, key: tuple) -> ProbEntry:
        kind, x, a, y = key
        table = self.transition if kind == "T" else self.observation_fn
        return table.get((x, a, y), Point(0.0))

    def reward_vector(self, a: str) -> np.ndarray:
        return np.array([self.rewards.get((q, a), 0.0) for q in self.states])

    def initial_array(self) -> np.ndarray:
        if not isinstance(self.initial_belief, PointBelief):
            raise TypeError("initial belief is a set, not a point")
        return self.initial_belief.as_array()

    @cached_property
    def _index(self) -> "_DenseIndex":
        return _DenseIndex(self)


class _DenseIndex:
    """Dense arrays of the point-valued parts plus locations of interval entries."""

    def __init__(self, m: UncertainPomdp):
        si = {q: i for i, q in enumerate(m.states)}
        zi = {z: i for i, z in enumerate(m.observations)}
        self.state_index = si
        self.obs_index = zi
        self.action_index = {a: i for i, a in enumerate(m.actions)}
        n, nz = len(m.states), len(m.observations)
        self.T = {a: np.zeros((n, n)) for a in m.actions}
        self.O = {a: np.zeros((n, nz)) for a in m.actions}
        self.T_unc = {a: [] for a in m.actions}  # (row, col, key)
        self.O_unc = {a: [] for a in m.actions}
        for (q, a, q2), e in m.transition.items():
            if isinstance(e, Interval):
                self.T_unc[a].append((si[q], si[q2], ("T", q, a, q2)))
            else:
                self.T[a][si[q], si[q2]] = e.value
        for (q2, a, z), e in m.observation_fn.items():
            if isinstance(e, Interval):
                self.O_unc[a].append((si[q2], zi[z], ("O", q2, a, z)))
            else:
                self.O[a][si[q2], zi[z]] = e.value
        self.R = {a: m.reward_vector(a) for a in m.actions}

    def matrices(self, a: str, theta: Mapping | None) -> tuple[np.ndarray, np.ndarray]:
        T, O = self.T[a], self.O[a]
        if self.T_unc[a] or self.O_unc[a]:
            T, O = T.copy(), O.copy()
            for i, j, key in self.T_unc[a]:
                T[i, j] = _theta_value(theta, key)
            for i, j, key in self.O_unc[a]:
                O[i, j] = _theta_value(theta, key)
        return T, O


def _theta_value(theta: Mapping | None, key: tuple) -> float:
    if theta is None or key not in theta:
        raise MissingTheta(f"no value assigned to uncertain entry {key}")
    return float(theta[key])


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def _check_row(label: str, entries: list[ProbEntry], out: list[str]) -> None:
    if all(isinstance(e, Point) for e in entries):
        s = sum(e.value for e in entries)
        if abs(s - 1.0) > ROW_TOL:
            out.append(f"{label}: row sum {s:.12g} ≠ 1")
        return
    lo = sum(e.lo for e in entries)
    hi = sum(e.hi for e in entries)
    if hi < 1.0 - ROW_TOL:
        out.append(f"{label}: no stochastic completion: upper-bound sum {hi:.12g} < 1")
    if lo > 1.0 + ROW_TOL:
        out.append(f"{label}: no stochastic completion: lower-bound sum {lo:.12g} > 1")


def validate_model(model: UncertainPomdp) -> ValidationReport:
    """Collect well-formedness violations; never raises, never mutates."""
    v: list[str] = []
    Q, A, Z = set(model.states), set(model.actions), set(model.observations)
    for name, coll in (("states", model.states), ("actions", model.actions), ("observations", model.observations)):
        if not coll:
            v.append(f"{name}: empty")
        if len(set(coll)) != len(coll):
            v.append(f"{name}: duplicate names")
    for (q, a, q2), e in model.transition.items():
        if q not in Q or q2 not in Q or a not in A:
            v.append(f"transition ({q}, {a}, {q2}): unknown state or action")
        _check_entry(f"transition ({q}, {a}, {q2})", e, v)
    for (q2, a, z), e in model.observation_fn.items():
        if q2 not in Q or z not in Z or a not in A:
            v.append(f"observation ({q2}, {a}, {z}): unknown state, action or observation")
        _check_entry(f"observation ({q2}, {a}, {z})", e, v)
    for (q, a) in model.rewards:
        if q not in Q or a not in A:
            v.append(f"reward ({q}, {a}): unknown state or action")
    zero = Point(0.0)
    for a in model.actions:
        for q in model.states:
            row = [model.transition.get((q, a, q2), zero) for q2 in model.states]
            _check_row(f"transition row ({q}, {a})", row, v)
        for q2 in model.states:
            row = [model.observation_fn.get((q2, a, z), zero) for z in model.observations]
            _check_row(f"observation row ({q2}, {a})", row, v)
    init = model.initial_belief
    if isinstance(init, PointBelief):
        p = init.probs
        if len(p) != len(model.states):
            v.append(f"initial belief: length {len(p)} ≠ {len(model.states)} states")
        elif any(x < 0 or x > 1 for x in p) or abs(sum(p) - 1.0) > ROW_TOL:
            v.append(f"initial belief: not a distribution (sum {sum(p):.12g})")
    elif isinstance(init, SemiAlgebraic):
        allowed = set(model.belief_vars)
        for i, c in enumerate(init.constraints):
            extra = set(c.used_vars()) - allowed
            if extra:
                v.append(f"initial constraint {i}: unknown variables {sorted(extra)}")
    else:
        v.append("initial belief: unsupported type")
    return ValidationReport(v)


def _check_entry(label: str, e: ProbEntry, out: list[str]) -> None:
    if isinstance(e, Point):
        if not 0.0 <= e.value <= 1.0:
            out.append(f"{label}: probability {e.value} outside [0, 1]")
    elif isinstance(e, Interval):
        if not 0.0 <= e.lo <= e.hi <= 1.0:
            out.append(f"{label}: invalid interval [{e.lo}, {e.hi}]")
    else:
        out.append(f"{label}: not a probability entry")


def belief_update(
    model: UncertainPomdp,
    b: Sequence[float],
    a: str,
    z: str,
    theta: Mapping | None = None,
) -> np.ndarray:
    """One Bayes-filter step: predict with T, weight by O(., a, z), renormalize."""
    idx = model._index
    T, O = idx.matrices(a, theta)
    b = np.asarray(b, dtype=float)
    pred = b @ T
    num = O[:, idx.obs_index[z]] * pred
    den = num.sum()
    if not den > 0.0:
        raise ImpossibleObservation(f"observation {z!r} after action {a!r} has zero probability")
    return num / den


def expected_reward(b: Sequence[float], a: str, rewards: Mapping, states: Sequence[str]) -> float:
    """Belief-weighted reward ``sum_q b(q) R(q, a)``."""
    return float(sum(float(p) * rewards.get((q, a), 0.0) for p, q in zip(b, states)))


def check_policy_coverage(policy: BeliefRegions, states: Sequence[str], n_samples: int = 10_000, seed: int = 0) -> bool:
    """Sample the simplex and confirm every sample falls in some region."""
    rng = np.random.Generator(np.random.Philox(seed))
    pts = rng.dirichlet(np.ones(len(states)), size=n_samples)
    point = {bvar(q): pts[:, i] for i, q in enumerate(states)}
    return bool((policy.actions_batch(point, n_samples) >= 0).all())


def mass_functional(states: Sequence[str]) -> Polynomial:
    """``sum_q b(q)`` over the given states."""
    return Polynomial.from_terms((1.0, {bvar(q): 1}) for q in states)
