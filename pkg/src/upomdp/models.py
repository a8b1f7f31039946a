"""Built-in models: RockSample with interval sensing, a 2-state toy, random models."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .polynomial import Polynomial
from .pomdp import (
    BeliefRegions,
    Interval,
    Point,
    PointBelief,
    TimeSchedule,
    UncertainPomdp,
    bvar,
    mass_functional,
    validate_model,
)

MOVES = {"Up": (0, 1), "Down": (0, -1), "Left": (-1, 0), "Right": (1, 0)}


def _entry(lo: float, hi: float):
    return Point(lo) if lo == hi else Interval(lo, hi)


@dataclass(frozen=True)
class RockSampleConfig:
    """Grid ``n x n`` with rocks at `rocks` ``((x, y), ...)``; ``y = 0`` is the bottom row.

    `accuracy` maps Chebyshev distance to the interval of the probability that
    a Check reports "good" on a good rock (`sensor="detector"`: bad rocks
    always report "none") or reports the correct type (`sensor="symmetric"`).
    Distances beyond the largest key use the largest key's entry.
    """

    n: int = 3
    rocks: tuple = ((1, 2), (1, 0))
    truth: tuple = ("good", "bad")
    accuracy: dict = field(default_factory=lambda: {0: (0.1, 0.2)})
    sensor: str = "detector"
    slip: float = 0.05
    start: tuple = (0, 1)
    prior_good: float = 0.5
    reward_exit: float = 10.0
    reward_good: float = 10.0
    reward_bad: float = -10.0
    nominal: dict | None = None  # distance -> nominal accuracy inside the interval; default: upper end

    def __post_init__(self):
        object.__setattr__(self, "rocks", tuple(tuple(r) for r in self.rocks))
        object.__setattr__(self, "truth", tuple(self.truth))
        if self.n < 1:
            raise ValueError("grid size must be >= 1")
        for x, y in self.rocks + (tuple(self.start),):
            if not (0 <= x < self.n and 0 <= y < self.n):
                raise ValueError(f"position {(x, y)} outside the {self.n}x{self.n} grid")
        if len(self.truth) != len(self.rocks) or any(t not in ("good", "bad") for t in self.truth):
            raise ValueError("one truth value ('good'/'bad') per rock")
        if not self.accuracy or min(self.accuracy) != 0:
            raise ValueError("accuracy buckets must start at distance 0")
        for lo, hi in self.accuracy.values():
            Interval(lo, hi)
        for d, v in (self.nominal or {}).items():
            lo, hi = self.accuracy_at(d)
            if not lo <= v <= hi:
                raise ValueError(f"nominal accuracy {v} outside [{lo}, {hi}] at distance {d}")
        if self.sensor not in ("detector", "symmetric"):
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if not 0.0 <= self.slip <= 1.0 or not 0.0 < self.prior_good < 1.0:
            raise ValueError("slip in [0, 1] and prior in (0, 1) required")

    @property
    def k(self) -> int:
        return len(self.rocks)

    def accuracy_at(self, d: int) -> tuple[float, float]:
        keys = sorted(k for k in self.accuracy if k <= d)
        return tuple(self.accuracy[keys[-1]])

    def nominal_at(self, d: int) -> float:
        if self.nominal:
            keys = sorted(k for k in self.nominal if k <= d)
            if keys:
                return float(self.nominal[keys[-1]])
        return float(self.accuracy_at(d)[1])

    def distance(self, pos, rock: int) -> int:
        rx, ry = self.rocks[rock]
        return max(abs(pos[0] - rx), abs(pos[1] - ry))

    @classmethod
    def case_one(cls, **kw) -> "RockSampleConfig":
        return cls(accuracy={0: (0.1, 0.2)}, **kw)

    @classmethod
    def case_two(cls, **kw) -> "RockSampleConfig":
        return cls(accuracy={0: (0.32, 0.42), 2: (0.22, 0.32)}, nominal={0: 0.42, 2: 0.32}, **kw)

    @classmethod
    def benchmark_size(cls, **kw) -> "RockSampleConfig":
        """RockSample[4, 2]."""
        base = dict(n=4, rocks=((1, 3), (2, 0)), start=(0, 2))
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class RockSample:
    model: UncertainPomdp
    groups: dict  # name -> tuple of states
    config: RockSampleConfig

    def functional(self, group: str) -> Polynomial:
        return mass_functional(self.groups[group])


def _cell(x, y):
    return f"x{x}y{y}"


def _types(k):
    return ["".join(c) for c in itertools.product("GB", repeat=k)]


def rocksample(config: RockSampleConfig | None = None) -> RockSample:
    """Full RockSample model: state = (cell | slip | exit, rock types).

    Moves on the bottom row slip into an absorbing slip state with
    probability `slip`; Right from the last column exits (absorbing, reward).
    Sampling a good rock pays and turns it bad. Observations: good/bad/none.
    """
    c = config or RockSampleConfig()
    k, n = c.k, c.n
    types = _types(k)
    cells = [(x, y) for y in range(n) for x in range(n)]
    states = [f"{_cell(x, y)}_{ty}" for (x, y) in cells for ty in types]
    states += [f"slip_{ty}" for ty in types] + [f"exit_{ty}" for ty in types]
    actions = list(MOVES) + ["Sample"] + [f"Check_{i + 1}" for i in range(k)]
    observations = ["good", "bad", "none"]
    T, O, R = {}, {}, {}

    def add(q, a, q2, p):
        if p > 0:
            T[(q, a, q2)] = Point(T.get((q, a, q2), Point(0.0)).value + p)

    for ty in types:
        for term in ("slip", "exit"):
            s = f"{term}_{ty}"
            for a in actions:
                add(s, a, s, 1.0)
                O[(s, a, "none")] = Point(1.0)
        for (x, y) in cells:
            s = f"{_cell(x, y)}_{ty}"
            for a, (dx, dy) in MOVES.items():
                nx, ny = x + dx, y + dy
                if nx >= n:
                    dest = f"exit_{ty}"
                    R[(s, a)] = c.reward_exit
                elif 0 <= nx < n and 0 <= ny < n:
                    dest = f"{_cell(nx, ny)}_{ty}"
                else:
                    dest = s
                p_slip = c.slip if y == 0 else 0.0
                add(s, a, f"slip_{ty}", p_slip)
                add(s, a, dest, 1.0 - p_slip)
            rock_here = [i for i, pos in enumerate(c.rocks) if pos == (x, y)]
            if rock_here:
                i = rock_here[0]
                good = ty[i] == "G"
                R[(s, "Sample")] = c.reward_good if good else c.reward_bad
                add(s, "Sample", f"{_cell(x, y)}_{ty[:i]}B{ty[i + 1:]}", 1.0)
            else:
                add(s, "Sample", s, 1.0)
            for i in range(k):
                lo, hi = c.accuracy_at(c.distance((x, y), i))
                _check_obs(O, s, f"Check_{i + 1}", ty[i] == "G", lo, hi, c.sensor)
            for i in range(k):
                add(s, f"Check_{i + 1}", s, 1.0)
    # observations after moves and sampling are uninformative
    for q2 in states:
        for a in list(MOVES) + ["Sample"]:
            O.setdefault((q2, a, "none"), Point(1.0))
    probs = {}
    for ty in types:
        p = 1.0
        for ch in ty:
            p *= c.prior_good if ch == "G" else 1.0 - c.prior_good
        probs[f"{_cell(*c.start)}_{ty}"] = p
    init = PointBelief(tuple(probs.get(q, 0.0) for q in states))
    model = UncertainPomdp(states, actions, observations, T, O, init, R)
    groups = {
        "goal": tuple(s for s in states if s.startswith("exit_")),
        "slip": tuple(s for s in states if s.startswith("slip_")),
    }
    for i in range(k):
        groups[f"rock{i + 1}_good"] = tuple(s for s in states if s.rsplit("_", 1)[1][i] == "G")
        groups[f"rock{i + 1}_bad"] = tuple(s for s in states if s.rsplit("_", 1)[1][i] == "B")
    return RockSample(model, groups, c)


def _check_obs(O, s, a, good: bool, lo: float, hi: float, sensor: str) -> None:
    if sensor == "detector":
        if good:
            O[(s, a, "good")] = _entry(lo, hi)
            O[(s, a, "none")] = _entry(1.0 - hi, 1.0 - lo)
        else:
            O[(s, a, "none")] = Point(1.0)
        return
    right, wrong = ("good", "bad") if good else ("bad", "good")
    O[(s, a, right)] = _entry(lo, hi)
    O[(s, a, wrong)] = _entry(1.0 - hi, 1.0 - lo)


def rock_marginal_model(config: RockSampleConfig, rock: int = 0, distances=None) -> UncertainPomdp:
    """Two-state model (good/bad) of one rock's type.

    Actions: "idle" (no information) and "check_d{k}" for each distance k.
    Valid as long as the rock is not sampled and checks happen from known cells.
    """
    c = config
    if distances is None:
        distances = range(0, c.n)
    states = ("good", "bad")
    actions = ["idle"] + [f"check_d{d}" for d in distances]
    T, O = {}, {}
    for a in actions:
        for q in states:
            T[(q, a, q)] = Point(1.0)
    for q in states:
        O[(q, "idle", "none")] = Point(1.0)
    for d in distances:
        lo, hi = c.accuracy_at(d)
        for q in states:
            _check_obs(O, q, f"check_d{d}", q == "good", lo, hi, c.sensor)
    p = c.prior_good
    return UncertainPomdp(states, actions, ("good", "bad", "none"), T, O, PointBelief((p, 1.0 - p)))


def _positions(config: RockSampleConfig, schedule) -> list:
    """Nominal (no-slip) rover position before each scheduled action."""
    pos = tuple(config.start)
    out = []
    exited = False
    for a in schedule:
        out.append(None if exited else pos)
        if a in MOVES and not exited:
            dx, dy = MOVES[a]
            nx, ny = pos[0] + dx, pos[1] + dy
            if nx >= config.n:
                exited = True
            elif 0 <= nx < config.n and 0 <= ny < config.n:
                pos = (nx, ny)
    return out


def marginal_schedule(config: RockSampleConfig, schedule: TimeSchedule, rock: int = 0) -> TimeSchedule:
    """Project a full-model schedule onto `rock_marginal_model` actions."""
    acts = []
    for a, pos in zip(schedule.actions, _positions(config, schedule.actions)):
        if a == f"Check_{rock + 1}" and pos is not None:
            acts.append(f"check_d{config.distance(pos, rock)}")
        elif a == "Sample" and pos == config.rocks[rock]:
            raise ValueError("marginal model does not cover sampling the rock")
        else:
            acts.append("idle")
    return TimeSchedule(tuple(acts))


def nominal_policies(case: str, config: RockSampleConfig | None = None, length: int = 46, checks: int = 10) -> TimeSchedule:
    """Scripted schedules covering horizons up to ``length - 1``.

    Case I: `checks` alternating Check actions from the start cell, then Right
    until exit. Case II: walk along the bottom row to the rocks' column,
    check, then walk to the exit.
    """
    c = config or RockSampleConfig()
    k = c.k
    case = str(case).upper()
    if case in ("I", "1"):
        acts = [f"Check_{(i % k) + 1}" for i in range(checks)]
    elif case in ("II", "2"):
        sx, sy = c.start
        col = min(x for x, _ in c.rocks)
        acts = ["Down"] * sy + ["Right"] * max(col - sx, 0)
        acts += [f"Check_{(i % k) + 1}" for i in range(checks)]
        acts += ["Up"]
    else:
        raise ValueError(f"unknown case {case!r}")
    acts += ["Right"] * max(length - len(acts), c.n)
    return TimeSchedule(tuple(acts[: max(length, len(acts))]))


def toy_two_state(uncertain: bool = False, init=(1.0, 0.0), split: float = 0.5) -> tuple[UncertainPomdp, BeliefRegions]:
    """Two states, two actions, two observations, and a belief-region policy.

    a1 (used while ``b(q1) >= split``) mixes slowly with an informative sensor;
    a2 pushes mass back toward q1. With `uncertain`, T(q1, a1, q1) is an
    interval.
    """
    states, actions, obs = ("q1", "q2"), ("a1", "a2"), ("z1", "z2")
    stay = Interval(0.75, 0.85) if uncertain else Point(0.8)
    leave = Interval(0.15, 0.25) if uncertain else Point(0.2)
    T = {
        ("q1", "a1", "q1"): stay, ("q1", "a1", "q2"): leave,
        ("q2", "a1", "q1"): Point(0.3), ("q2", "a1", "q2"): Point(0.7),
        ("q1", "a2", "q1"): Point(0.9), ("q1", "a2", "q2"): Point(0.1),
        ("q2", "a2", "q1"): Point(0.6), ("q2", "a2", "q2"): Point(0.4),
    }
    O = {}
    for a in actions:
        O[("q1", a, "z1")], O[("q1", a, "z2")] = Point(0.9), Point(0.1)
        O[("q2", a, "z1")], O[("q2", a, "z2")] = Point(0.2), Point(0.8)
    R = {("q1", "a1"): 1.0, ("q2", "a1"): -1.0, ("q1", "a2"): 0.0, ("q2", "a2"): -2.0}
    model = UncertainPomdp(states, actions, obs, T, O, PointBelief(init), R)
    b1 = Polynomial.var(bvar("q1"))
    policy = BeliefRegions((((b1 - split,), "a1"), ((split - b1,), "a2")))
    return model, policy


def random_model(
    sizes: tuple = (3, 2, 2),
    seed: int = 0,
    uncertainty: float = 0.0,
    min_prob: float = 0.0,
    uncertain_fraction: float = 0.5,
    init: str = "point",
) -> UncertainPomdp:
    """Random valid model of ``(|Q|, |A|, |Z|)``.

    Rows are Dirichlet draws lifted by `min_prob`; a random subset of entries
    is widened to ``[p - w, p + w]`` clipped to [0, 1] (the nominal row stays a
    completion, so validity is preserved).
    """
    n, na, nz = sizes
    if min(sizes) < 1:
        raise ValueError("sizes must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    states = tuple(f"s{i}" for i in range(n))
    actions = tuple(f"a{i}" for i in range(na))
    obs = tuple(f"z{i}" for i in range(nz))

    def row(m):
        floor = min(min_prob, 1.0 / m)
        return floor + (1.0 - m * floor) * rng.dirichlet(np.ones(m))

    def entry(p):
        p = float(p)
        if uncertainty > 0 and rng.random() < uncertain_fraction:
            return _entry(max(0.0, p - uncertainty), min(1.0, p + uncertainty))
        return Point(min(max(p, 0.0), 1.0))

    T, O, R = {}, {}, {}
    for a in actions:
        for q in states:
            for q2, p in zip(states, _fix_sum(row(n))):
                T[(q, a, q2)] = entry(p)
        for q2 in states:
            for z, p in zip(obs, _fix_sum(row(nz))):
                O[(q2, a, z)] = entry(p)
        for q in states:
            R[(q, a)] = float(np.round(rng.uniform(-10, 10), 3))
    if init == "point":
        b0 = PointBelief(tuple(_fix_sum(rng.dirichlet(np.ones(n)))))
    else:
        raise ValueError(f"unknown init kind {init!r}")
    model = UncertainPomdp(states, actions, obs, T, O, b0, R)
    rep = validate_model(model)
    assert rep.ok, rep.violations
    return model


def _fix_sum(p: np.ndarray) -> list[float]:
    """Push rounding error into the largest entry so the row sums to 1."""
    p = [float(x) for x in p]
    i = int(np.argmax(p))
    p[i] = 1.0 - (sum(p) - p[i])
    return p
