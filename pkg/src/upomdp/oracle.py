"""Ground truth for the certificate machinery.

Monte-Carlo simulation of belief trajectories, exhaustive branch enumeration
for tiny instances, falsification of claimed bounds, and the sampled residual
check that every certificate must pass before it is returned.

All randomness comes from ``numpy.random.Generator(Philox(seed))``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .polynomial import Polynomial
from .pomdp import (
    Arbitrary,
    BeliefRegions,
    ImpossibleObservation,
    PointBelief,
    Policy,
    SemiAlgebraic,
    TimeSchedule,
    UncertainPomdp,
    belief_update,
    bvar,
)

THETA_STRATEGIES = ("fixed", "per-step-sample", "interval-vertices")
MAX_BRANCHES = 1_000_000
MAX_REJECTIONS = 1_000_000


class CapacityExceeded(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _point(states, b: np.ndarray) -> dict:
    return {bvar(q): b[..., i] for i, q in enumerate(states)}


# -- simulation ---------------------------------------------------------------


@dataclass
class Trajectory:
    beliefs: np.ndarray  # (t*+1, n)
    actions: list
    observations: list  # length t*
    thetas: list  # per step: {key: value}
    rewards: np.ndarray  # r(b_t, a_t), NaN where no action is defined

    @property
    def horizon(self) -> int:
        return len(self.observations)

    def to_dict(self) -> dict:
        return {
            "beliefs": self.beliefs.tolist(),
            "actions": list(self.actions),
            "observations": list(self.observations),
            "thetas": [{"/".join(k): v for k, v in sorted(th.items())} for th in self.thetas],
            "rewards": [None if math.isnan(r) else r for r in self.rewards.tolist()],
        }


def replay(model: UncertainPomdp, traj: Trajectory) -> np.ndarray:
    """Recompute the beliefs of `traj` with the scalar filter."""
    b = traj.beliefs[0]
    out = [b]
    for a, z, th in zip(traj.actions, traj.observations, traj.thetas):
        b = belief_update(model, b, a, z, th)
        out.append(b)
    return np.array(out)


@dataclass
class SimulationResult:
    states: tuple
    actions: tuple
    observations: tuple
    beliefs: np.ndarray  # (N, H+1, n)
    action_idx: np.ndarray  # (N, H+1), -1 where undefined
    obs_idx: np.ndarray  # (N, H)
    theta_keys: list
    thetas: np.ndarray  # (N, H, k)
    rewards: np.ndarray  # (N, H+1)
    seed: int

    @property
    def horizon(self) -> int:
        return self.obs_idx.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.beliefs[:, -1, :]

    def functional_values(self, g: Polynomial, t: int | None = None) -> np.ndarray:
        b = self.beliefs[:, self.horizon if t is None else t, :]
        return np.broadcast_to(g.evaluate_batch(_point(self.states, b)), (b.shape[0],)).copy()

    def cumulative_reward(self) -> np.ndarray:
        return np.nansum(self.rewards, axis=1)

    def trajectory(self, i: int) -> Trajectory:
        H = self.horizon
        acts = [self.actions[k] for k in self.action_idx[i, :H]]
        obs = [self.observations[k] for k in self.obs_idx[i]]
        ths = [{key: float(self.thetas[i, t, j]) for j, key in enumerate(self.theta_keys)} for t in range(H)]
        return Trajectory(self.beliefs[i].copy(), acts, obs, ths, self.rewards[i].copy())

    def stats(self, functionals: Mapping[str, Polynomial] | None = None, quantiles=(0.05, 0.5, 0.95)) -> dict:
        out = {}
        for name, g in (functionals or {}).items():
            out[name] = summarize(self.functional_values(g), quantiles)
        out["cumulative_reward"] = summarize(self.cumulative_reward(), quantiles)
        return out


def summarize(v: np.ndarray, quantiles=(0.05, 0.5, 0.95)) -> dict:
    v = np.asarray(v, dtype=float)
    return {
        "min": float(v.min()),
        "max": float(v.max()),
        "mean": float(v.mean()),
        "quantiles": {f"{q:g}": float(np.quantile(v, q)) for q in quantiles},
    }


def _theta_boxes(model: UncertainPomdp) -> tuple[list, np.ndarray, np.ndarray]:
    keys = model.uncertain_triplets()
    lo = np.array([model.entry(k).lo for k in keys])
    hi = np.array([model.entry(k).hi for k in keys])
    return keys, lo, hi


def _draw_theta(strategy: str, lo, hi, n: int, rng: np.random.Generator) -> np.ndarray:
    k = len(lo)
    if strategy == "interval-vertices":
        pick = rng.integers(0, 2, size=(n, k))
        return np.where(pick == 1, hi, lo)
    return lo + (hi - lo) * rng.random((n, k))


def _policy_actions(policy: Policy, model: UncertainPomdp, t: int, B: np.ndarray, rng) -> np.ndarray:
    N = B.shape[0]
    if isinstance(policy, TimeSchedule):
        return np.full(N, model.actions.index(policy.action_at(t)))
    if isinstance(policy, Arbitrary):
        return rng.integers(0, len(model.actions), size=N)
    if isinstance(policy, BeliefRegions):
        reg = policy.actions_batch(_point(model.states, B), N)
        if (reg < 0).any():
            raise ValueError("belief not covered by any policy region")
        lut = np.array([model.actions.index(a) for _, a in policy.regions])
        return lut[reg]
    raise TypeError(f"unknown policy {policy!r}")


def _batch_matrices(model: UncertainPomdp, a: str, keys: list, theta: np.ndarray):
    """Per-sample T (m, n, n) and O (m, n, nz) with interval entries from `theta` (m, k)."""
    idx = model._index
    m = theta.shape[0]
    T = np.broadcast_to(idx.T[a], (m,) + idx.T[a].shape).copy()
    O = np.broadcast_to(idx.O[a], (m,) + idx.O[a].shape).copy()
    col = {k: j for j, k in enumerate(keys)}
    for i, j, key in idx.T_unc[a]:
        T[:, i, j] = theta[:, col[key]]
    for i, j, key in idx.O_unc[a]:
        O[:, i, j] = theta[:, col[key]]
    return T, O


def simulate(
    model: UncertainPomdp,
    policy: Policy,
    theta_strategy: str = "fixed",
    horizon: int = 10,
    n_trajectories: int = 10_000,
    seed: int = 0,
    initial: np.ndarray | None = None,
) -> SimulationResult:
    """Vectorized belief trajectories.

    Observations are drawn from the predicted distribution
    ``P(z) ∝ sum_q' O(q', a, z) (b T)(q')`` under the sampled theta, so zero-probability
    observations are never drawn. With `fixed`, one theta per trajectory is drawn
    uniformly from the box; `per-step-sample` redraws it every step;
    `interval-vertices` draws a random box corner every step.
    """
    if theta_strategy not in THETA_STRATEGIES:
        raise ValueError(f"theta strategy must be one of {THETA_STRATEGIES}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = make_rng(seed)
    N, n = n_trajectories, model.n
    b0 = model.initial_array() if initial is None else np.asarray(initial, dtype=float)
    keys, lo, hi = _theta_boxes(model)
    k = len(keys)
    beliefs = np.empty((N, horizon + 1, n))
    beliefs[:, 0] = b0
    act = np.full((N, horizon + 1), -1, dtype=int)
    obs = np.zeros((N, horizon), dtype=int)
    thetas = np.zeros((N, horizon, k))
    rewards = np.full((N, horizon + 1), np.nan)
    Rm = np.stack([model.reward_vector(a) for a in model.actions])  # (|A|, n)
    fixed = _draw_theta(theta_strategy, lo, hi, N, rng) if theta_strategy == "fixed" else None
    B = beliefs[:, 0].copy()
    for t in range(horizon + 1):
        try:
            a_idx = _policy_actions(policy, model, t, B, rng)
        except IndexError:
            if t == horizon:
                break  # no action scheduled after the last step
            raise
        act[:, t] = a_idx
        rewards[:, t] = np.einsum("ij,ij->i", B, Rm[a_idx])
        if t == horizon:
            break
        th = fixed if fixed is not None else _draw_theta(theta_strategy, lo, hi, N, rng)
        thetas[:, t] = th
        u = rng.random(N)
        newB = np.empty_like(B)
        for ai, a in enumerate(model.actions):
            sel = np.nonzero(a_idx == ai)[0]
            if sel.size == 0:
                continue
            T, O = _batch_matrices(model, a, keys, th[sel])
            pred = np.einsum("mi,mij->mj", B[sel], T)
            joint = pred[:, :, None] * O  # (m, n, nz)
            pz = joint.sum(axis=1)
            tot = pz.sum(axis=1, keepdims=True)
            cdf = np.cumsum(pz / tot, axis=1)
            z = (cdf < u[sel, None]).sum(axis=1)
            z = np.minimum(z, pz.shape[1] - 1)
            bad = pz[np.arange(sel.size), z] <= 0.0
            if bad.any():  # u landed on a flat stretch of the cdf
                z[bad] = np.argmax(pz[bad] > 0, axis=1)
            num = joint[np.arange(sel.size), :, z]
            newB[sel] = num / num.sum(axis=1, keepdims=True)
            obs[sel, t] = z
        B = newB
        beliefs[:, t + 1] = B
    return SimulationResult(
        model.states, model.actions, model.observations, beliefs, act, obs, keys, thetas, rewards, seed
    )


# -- exact enumeration ----------------------------------------------------------


@dataclass
class ReachNode:
    belief: np.ndarray
    parent: int  # index into the previous level, -1 at the root
    action: str | None
    observation: str | None
    theta: dict


@dataclass
class ReachResult:
    states: tuple
    levels: list  # list[list[ReachNode]]

    def beliefs(self, t: int) -> np.ndarray:
        return np.array([nd.belief for nd in self.levels[t]])

    def extremes(self, g: Polynomial, t: int | None = None) -> tuple[float, float]:
        t = len(self.levels) - 1 if t is None else t
        v = np.broadcast_to(g.evaluate_batch(_point(self.states, self.beliefs(t))), (len(self.levels[t]),))
        return float(v.min()), float(v.max())

    def path(self, t: int, i: int) -> Trajectory:
        nodes = []
        while t >= 0:
            nd = self.levels[t][i]
            nodes.append(nd)
            i, t = nd.parent, t - 1
        nodes.reverse()
        beliefs = np.array([nd.belief for nd in nodes])
        return Trajectory(
            beliefs,
            [nd.action for nd in nodes[1:]],
            [nd.observation for nd in nodes[1:]],
            [nd.theta for nd in nodes[1:]],
            np.full(len(nodes), np.nan),
        )


def _theta_grid(model: UncertainPomdp, a: str, resolution: int) -> list[dict]:
    """Product grid (endpoints included) over interval entries used by action `a`."""
    keys = [k for k in model.uncertain_triplets() if k[2] == a]
    axes = []
    for key in keys:
        e = model.entry(key)
        pts = np.linspace(e.lo, e.hi, resolution) if e.hi > e.lo else np.array([e.lo])
        axes.append(pts)
    return [dict(zip(keys, map(float, combo))) for combo in itertools.product(*axes)]


def exact_reach(model: UncertainPomdp, policy: Policy, horizon: int, resolution: int = 3) -> ReachResult:
    """Every (action, theta-grid, observation) branch up to `horizon`.

    Theta is re-chosen at every step. Raises CapacityExceeded when the
    worst-case branch count exceeds one million.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    # size the grids before building them; they can be astronomically large
    sizes = {}
    for a in model.actions:
        keys = [k for k in model.uncertain_triplets() if k[2] == a]
        sizes[a] = math.prod(resolution if model.entry(k).hi > model.entry(k).lo else 1 for k in keys)
    per_step = max(sizes.values()) * len(model.observations)
    n_act = len(model.actions) if not isinstance(policy, TimeSchedule) else 1
    bound = (n_act * per_step) ** horizon
    if bound > MAX_BRANCHES:
        raise CapacityExceeded(f"up to {bound} branches exceed the limit of {MAX_BRANCHES}")
    grids = {a: _theta_grid(model, a, resolution) for a in model.actions}
    root = model.initial_array()
    levels = [[ReachNode(root, -1, None, None, {})]]
    for t in range(horizon):
        nxt = []
        for pi, nd in enumerate(levels[-1]):
            if isinstance(policy, TimeSchedule):
                acts = [policy.action_at(t)]
            elif isinstance(policy, BeliefRegions):
                acts = [policy.action_for(_point(model.states, nd.belief))]
            else:
                acts = list(model.actions)
            for a in acts:
                for th in grids[a]:
                    for z in model.observations:
                        try:
                            b = belief_update(model, nd.belief, a, z, th)
                        except ImpossibleObservation:
                            continue
                        nxt.append(ReachNode(b, pi, a, z, th))
        levels.append(nxt)
    return ReachResult(model.states, levels)


# -- falsification --------------------------------------------------------------


@dataclass(frozen=True)
class Claim:
    """``g(b_{t*}) <= bound`` (upper) / ``>= bound`` (lower), or ``sum_s r(b_s, a_s) <= bound``."""

    kind: str  # "functional" | "cumulative_reward"
    bound: float
    horizon: int
    functional: Polynomial | None = None
    direction: str = "upper"

    def violated_by(self, value: float, tol: float = 1e-12) -> bool:
        if self.kind == "functional" and self.direction == "lower":
            return value < self.bound - tol
        return value > self.bound + tol


@dataclass
class Counterexample:
    trajectory: Trajectory
    value: float
    source: str

    def to_dict(self) -> dict:
        return {"value": self.value, "source": self.source, "trajectory": self.trajectory.to_dict()}


@dataclass
class NoneFound:
    trajectories: int
    worst: float  # most adverse value seen


def falsify(
    claim: Claim,
    model: UncertainPomdp,
    policy: Policy,
    budget: int = 10_000,
    seed: int = 0,
    resolution: int = 3,
) -> Counterexample | NoneFound:
    """Search for a trajectory violating `claim`; NoneFound is not a proof.

    Tries exhaustive enumeration when it fits, then `budget` simulated
    trajectories split across the theta strategies.
    """
    worst = -math.inf if claim.direction != "lower" or claim.kind != "functional" else math.inf
    lower = claim.kind == "functional" and claim.direction == "lower"

    def better(a, b):
        return a < b if lower else a > b

    if claim.kind == "functional" and isinstance(model.initial_belief, PointBelief):
        try:
            reach = exact_reach(model, policy, claim.horizon, resolution)
        except (CapacityExceeded, ValueError, IndexError):
            reach = None
        if reach is not None:
            t = claim.horizon
            v = np.broadcast_to(
                claim.functional.evaluate_batch(_point(model.states, reach.beliefs(t))), (len(reach.levels[t]),)
            )
            i = int(np.argmin(v) if lower else np.argmax(v))
            worst = float(v[i])
            if claim.violated_by(worst):
                traj = reach.path(t, i)
                traj = _with_rewards(model, traj)
                return Counterexample(traj, worst, "exact-enumeration")
    total = 0
    per = max(1, budget // len(THETA_STRATEGIES))
    for s, strategy in enumerate(THETA_STRATEGIES):
        res = simulate(model, policy, strategy, claim.horizon, per, seed=seed + s)
        total += per
        if claim.kind == "functional":
            v = res.functional_values(claim.functional)
        else:
            v = res.cumulative_reward()
        i = int(np.argmin(v) if lower else np.argmax(v))
        if better(float(v[i]), worst) or math.isinf(worst):
            worst = float(v[i])
        if claim.violated_by(float(v[i])):
            return Counterexample(res.trajectory(i), float(v[i]), f"simulation:{strategy}")
    return NoneFound(total, worst)


def _with_rewards(model: UncertainPomdp, traj: Trajectory) -> Trajectory:
    r = np.full(len(traj.beliefs), np.nan)
    for t, a in enumerate(traj.actions):
        r[t] = float(traj.beliefs[t] @ model.reward_vector(a))
    traj.rewards = r
    return traj


# -- residual check ---------------------------------------------------------------


@dataclass
class ClassStats:
    min_margin: float = math.inf
    samples: int = 0
    violations: int = 0
    empty_regions: int = 0

    def update(self, margins: np.ndarray, tol: float) -> None:
        if margins.size:
            self.min_margin = min(self.min_margin, float(margins.min()))
            self.violations += int((margins < -tol).sum())
            self.samples += int(margins.size)

    def to_dict(self) -> dict:
        return {
            "min_margin": None if math.isinf(self.min_margin) else self.min_margin,
            "samples": self.samples,
            "violations": self.violations,
            "empty_regions": self.empty_regions,
        }


@dataclass
class ResidualReport:
    classes: dict  # "unsafe" | "init" | "decrease" -> ClassStats
    seed: int
    tol: float
    worst: dict = field(default_factory=dict)  # class -> worst sample, for debugging

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.classes.values())

    @property
    def samples(self) -> int:
        return sum(c.samples for c in self.classes.values())

    @property
    def min_margin(self) -> float:
        return min((c.min_margin for c in self.classes.values()), default=math.inf)

    @property
    def empty_sample_set(self) -> bool:
        return any(c.empty_regions for c in self.classes.values())

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "seed": self.seed,
            "tol": self.tol,
            "samples": self.samples,
            "violations": self.violations,
            "empty_sample_set": self.empty_sample_set,
            "classes": {k: v.to_dict() for k, v in sorted(self.classes.items())},
        }


def _simplex_corners(n: int) -> np.ndarray:
    pts = [np.eye(n)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            v = np.zeros(n)
            v[i] = v[j] = 0.5
            pts.append(v)
    pts.append(np.full(n, 1.0 / n))
    return np.array(pts)


def sample_region(
    n: int,
    states: Sequence[str],
    rng: np.random.Generator,
    count: int,
    positive: Sequence[Polynomial] = (),
    nonneg: Sequence[Polynomial] = (),
    nonpos: Sequence[Polynomial] = (),
    batch: int = 20_000,
) -> tuple[np.ndarray, bool]:
    """Rejection-sample Dirichlet(1) beliefs with ``p > 0``, ``q >= 0``, ``l <= 0``.

    Returns (samples, exhausted) where `exhausted` is set when MAX_REJECTIONS
    candidates were rejected before `count` samples were found. Simplex
    corners and edge midpoints that satisfy the region are always included.
    """

    def keep(pts):
        if not len(pts):
            return pts
        point = _point(states, pts)
        ok = np.ones(len(pts), dtype=bool)
        for p in positive:
            ok &= np.broadcast_to(p.evaluate_batch(point), ok.shape) > 0
        for p in nonneg:
            ok &= np.broadcast_to(p.evaluate_batch(point), ok.shape) >= 0
        for p in nonpos:
            ok &= np.broadcast_to(p.evaluate_batch(point), ok.shape) <= 0
        return pts[ok]

    found = [keep(_simplex_corners(n))]
    have = len(found[0])
    rejected = 0
    filtering = bool(positive or nonneg or nonpos)
    while have < count:
        cand = rng.dirichlet(np.ones(n), size=batch if filtering else count - have)
        got = keep(cand)
        rejected += len(cand) - len(got)
        found.append(got)
        have += len(got)
        if rejected >= MAX_REJECTIONS and have < count:
            return np.concatenate(found)[:count], True
    return np.concatenate(found)[:count], False


def check_certificate(cert, program, n_samples: int = 100_000, seed: int = 0, tol: float = 1e-6) -> ResidualReport:
    """Sampled barrier conditions, with `n_samples` per constraint class.

    * unsafe: ``B(t, b) >= s1`` on the unsafe region of each unsafe record,
    * init: ``B(0, b) <= -s2`` on the initial set,
    * decrease: ``B(t, f(b, theta, z)) <= B(t-1, b)`` over simplex x box x mode,
      wherever ``R > 0``.

    `cert` is a Certificate or a bare Barrier.
    """
    barrier = getattr(cert, "barrier", cert)
    rng = make_rng(seed)
    dyn = program.dynamics
    states = dyn.states
    n = len(states)
    s1, s2 = program.options.s1, program.options.s2
    classes = {"unsafe": ClassStats(), "init": ClassStats(), "decrease": ClassStats()}
    worst = {}

    def note(cls, margins, info):
        if margins.size:
            i = int(np.argmin(margins))
            if cls not in worst or margins[i] < worst[cls]["margin"]:
                worst[cls] = {"margin": float(margins[i]), **info(i)}

    unsafe = [r for r in program.constraints if r.cls == "unsafe"]
    for rec in unsafe:
        k = max(1, math.ceil(n_samples / len(unsafe)))
        pts, exhausted = sample_region(n, states, rng, k, positive=rec.unsafe, nonneg=rec.guards)
        if exhausted or not len(pts):
            classes["unsafe"].empty_regions += 1
        if not len(pts):
            continue
        m = barrier.evaluate_batch(rec.t, pts) - s1
        m = np.broadcast_to(m, (len(pts),))
        classes["unsafe"].update(m, tol)
        note("unsafe", m, lambda i: {"t": rec.t, "belief": pts[i].tolist()})

    init = program.init
    if isinstance(init, PointBelief):
        pts = init.as_array()[None, :]
    elif isinstance(init, SemiAlgebraic):
        pts, exhausted = sample_region(n, states, rng, n_samples, nonpos=init.constraints)
        if exhausted or not len(pts):
            classes["init"].empty_regions += 1
    else:
        raise TypeError(f"unsupported initial set {init!r}")
    if len(pts):
        m = np.broadcast_to(-barrier.evaluate_batch(0, pts) - s2, (len(pts),))
        classes["init"].update(m, tol)
        note("init", m, lambda i: {"belief": pts[i].tolist()})

    dec = [r for r in program.constraints if r.cls == "decrease"]
    thetas = dyn.theta_vars
    for rec in dec:
        k = max(1, math.ceil(n_samples / len(dec)))
        vf = dyn.modes[(rec.action, rec.observation)]
        pts, exhausted = sample_region(n, states, rng, k, nonneg=rec.guards)
        if not len(pts):
            classes["decrease"].empty_regions += 1
            continue
        m_pts = len(pts)
        point = _point(states, pts)
        used = set(vf.theta_names())
        for tv in thetas:
            if tv.name not in used:
                continue
            vals = tv.lo + (tv.hi - tv.lo) * rng.random(m_pts)
            corner = rng.random(m_pts) < 0.25
            vals[corner] = np.where(rng.random(int(corner.sum())) < 0.5, tv.lo, tv.hi)
            point[tv.name] = vals
        S, R = vf.evaluate_batch(point, states)
        R = np.broadcast_to(R, (m_pts,))
        ok = R > 1e-12
        if not ok.any():
            continue
        nxt = S[ok] / R[ok, None]
        m = barrier.evaluate_batch(rec.t - 1, pts[ok]) - barrier.evaluate_batch(rec.t, nxt)
        m = np.broadcast_to(m, (int(ok.sum()),))
        classes["decrease"].update(m, tol)
        note("decrease", m, lambda i: {"t": rec.t, "action": rec.action, "observation": rec.observation,
                                       "belief": pts[ok][i].tolist()})
    return ResidualReport(classes, seed, tol, worst)


def empirical_extreme(
    model: UncertainPomdp,
    policy: Policy,
    g: Polynomial,
    horizon: int,
    lower: bool,
    n_trajectories: int = 10_000,
    seed: int = 0,
) -> dict:
    """Most adverse simulated g(b_{t*}) across theta strategies."""
    vals = {}
    for s, strategy in enumerate(THETA_STRATEGIES):
        res = simulate(model, policy, strategy, horizon, n_trajectories, seed=seed + s)
        v = res.functional_values(g)
        vals[strategy] = float(v.min() if lower else v.max())
    pick = min if lower else max
    return {"worst": pick(vals.values()), "by_strategy": vals}


__all__ = [
    "CapacityExceeded",
    "Claim",
    "Counterexample",
    "NoneFound",
    "ReachResult",
    "ResidualReport",
    "SimulationResult",
    "Trajectory",
    "check_certificate",
    "empirical_extreme",
    "exact_reach",
    "falsify",
    "replay",
    "simulate",
]
