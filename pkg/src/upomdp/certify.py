"""Barrier-certificate programs for safety and optimality, solved as DSOS LPs.

For a horizon t*, a barrier B(t, b) must satisfy, with margins s1, s2 > 0,

* ``B(t*, b) >= s1`` on the unsafe belief set,
* ``B(0, b) <= -s2`` on the initial set,
* ``B(t, f(b, theta, z)) <= B(t-1, b)`` for every active mode, theta in the
  interval box and belief b in the simplex.

Each condition is relaxed to DSOS membership via Putinar-style multipliers:
DSOS multipliers for inequalities (unsafe/initial/guard/interval/``b >= 0``)
and free multipliers for equalities (``sum b = 1``). The decrease condition
is cleared by ``R^d`` so that it is polynomial.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dsos
from .dsos import (
    GramTemplate,
    LinearProgram,
    LPResult,
    TemplatePolynomial,
    dsos_constraints,
    dsos_template,
)
from .dynamics import BeliefDynamics, modes_for, theta_constraint
from .polynomial import Polynomial, RationalFunction, monomial_basis, substitute_rational
from .pomdp import (
    BeliefRegions,
    BeliefSet,
    PointBelief,
    Policy,
    SemiAlgebraic,
    mass_functional,
)

log = logging.getLogger(__name__)

T_VAR = "t"


class DegreeTooSmall(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


class NoFeasiblePoint(RuntimeError):
    pass


class Direction(str, enum.Enum):
    UPPER = "upper"  # certify g <= bound
    LOWER = "lower"  # certify g >= bound


@dataclass(frozen=True)
class SafetySpec:
    """Claim ``g(b_{t*}) <= bound`` (UPPER) or ``>= bound`` (LOWER).

    Without an explicit `g`, the functional is the belief mass on
    `unsafe_states`.
    """

    bound: float
    horizon: int
    g: Polynomial | None = None
    unsafe_states: tuple = ()
    direction: Direction = Direction.UPPER

    def __post_init__(self):
        object.__setattr__(self, "unsafe_states", tuple(self.unsafe_states))
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.g is None and not self.unsafe_states:
            raise ValueError("need a functional g or a nonempty set of unsafe states")

    @property
    def functional(self) -> Polynomial:
        return self.g if self.g is not None else mass_functional(self.unsafe_states)

    def unsafe_polynomial(self) -> Polynomial:
        """u(b) with unsafe set ``{u > 0}``."""
        g = self.functional
        return g - self.bound if self.direction is Direction.UPPER else self.bound - g

    def with_bound(self, bound: float) -> "SafetySpec":
        return SafetySpec(bound, self.horizon, self.g, self.unsafe_states, self.direction)


@dataclass(frozen=True)
class OptimalitySpec:
    """Claim ``sum_{s=0}^{t*} r(b_s, a_s) <= gamma`` via per-step budgets gamma_tilde(t)."""

    gamma: float
    horizon: int
    gamma_tilde: Polynomial

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        extra = set(self.gamma_tilde.used_vars()) - {T_VAR}
        if extra:
            raise ValueError(f"gamma_tilde may only depend on {T_VAR!r}, found {sorted(extra)}")
        total = self.budget_sum()
        if total > self.gamma + 1e-9:
            raise ValueError(f"per-step budgets sum to {total:.12g} > gamma = {self.gamma:.12g}")

    @classmethod
    def uniform(cls, gamma: float, horizon: int) -> "OptimalitySpec":
        return cls(gamma, horizon, Polynomial.constant(gamma / (horizon + 1)))

    def budget(self, t: int) -> float:
        return self.gamma_tilde.evaluate({T_VAR: t})

    def budget_sum(self) -> float:
        return sum(self.budget(s) for s in range(self.horizon + 1))


@dataclass(frozen=True)
class CertifyOptions:
    s1: float = 1e-4
    s2: float = 1e-4
    multiplier_degree: int | None = None  # None: degree rounded up to even
    time_mode: str = "poly"  # "poly": one B(t, b); "per_step": B_t(b) for each t
    coef_bound: float = 100.0
    simplex: str = "eliminate"  # "eliminate" | "multiplier" | "none"
    product_degree: int | None = None  # None: up to the constraint degree; 1 disables products
    precondition_samples: int = 2000
    seed: int = 0
    # maximize the unsafe margin (capped at s1) instead of fixing it: the LP
    # is then always feasible (B = -s2 is a point), and HiGHS decides
    # optimality far more reliably than infeasibility
    margin_objective: bool = True


class BarrierTemplate:
    """Decision-variable layout of B and its reconstruction."""

    def __init__(self, lp: LinearProgram, belief_vars: Sequence[str], degree: int, horizon: int, mode: str, bound: float):
        self.belief_vars = tuple(belief_vars)
        self.degree = degree
        self.horizon = horizon
        self.mode = mode
        n = len(belief_vars)
        if mode == "poly":
            self.basis = monomial_basis(n + 1, degree)  # (t, b...)
            self.ids = [lp.add_var(-bound, bound, f"B_{i}") for i in range(len(self.basis))]
        elif mode == "per_step":
            self.basis = monomial_basis(n, degree)
            self.ids = {
                t: [lp.add_var(-bound, bound, f"B{t}_{i}") for i in range(len(self.basis))]
                for t in range(horizon + 1)
            }
        else:
            raise ValueError(f"unknown time mode {mode!r}")
        self._mono: dict[tuple, Polynomial] = {}

    @property
    def n_coefficients(self) -> int:
        return len(self.ids) if self.mode == "poly" else sum(len(v) for v in self.ids.values())

    def b_monomial(self, e_b: tuple) -> Polynomial:
        if e_b not in self._mono:
            self._mono[e_b] = Polynomial({e_b: 1.0}, self.belief_vars)
        return self._mono[e_b]

    def terms_at(self, t: int) -> list[tuple[int, float, tuple]]:
        """``B(t, .) = sum scale * x_id * b^e``: list of (id, scale, e_b)."""
        if self.mode == "poly":
            return [(k, float(t) ** e[0], e[1:]) for k, e in zip(self.ids, self.basis)]
        return [(k, 1.0, e) for k, e in zip(self.ids[t], self.basis)]

    def barrier(self, x: np.ndarray) -> "Barrier":
        if self.mode == "poly":
            coeffs = {e: x[k] for k, e in zip(self.ids, self.basis)}
            poly = Polynomial(coeffs, (T_VAR,) + self.belief_vars)
            return Barrier(self.belief_vars, self.horizon, poly=poly)
        per = {t: Polynomial({e: x[k] for k, e in zip(ids, self.basis)}, self.belief_vars) for t, ids in self.ids.items()}
        return Barrier(self.belief_vars, self.horizon, per_step=per)


@dataclass
class Barrier:
    belief_vars: tuple
    horizon: int
    poly: Polynomial | None = None
    per_step: dict | None = None

    def at(self, t: int) -> Polynomial:
        if self.poly is not None:
            return self.poly.substitute({T_VAR: t}).aligned(self.belief_vars) if self.poly.vars else self.poly
        return self.per_step[t]

    def evaluate_batch(self, t: int, b: np.ndarray) -> np.ndarray:
        p = self.at(t)
        return p.evaluate_batch({v: b[..., i] for i, v in enumerate(self.belief_vars)})

    def to_spec(self) -> dict:
        if self.poly is not None:
            return {"form": "poly", "text": self.poly.to_text(), "terms": self.poly.to_spec()}
        return {
            "form": "per_step",
            "steps": {str(t): {"text": p.to_text(), "terms": p.to_spec()} for t, p in sorted(self.per_step.items())},
        }


@dataclass
class Multiplier:
    name: str
    generator: Polynomial
    kind: str  # "nonneg" | "equality"
    gram: GramTemplate | None = None
    free_ids: list = field(default_factory=list)
    free_basis: list = field(default_factory=list)
    vars: tuple = ()

    def polynomial(self, x: np.ndarray) -> Polynomial:
        if self.gram is not None:
            return self.gram.polynomial(x)
        return Polynomial({e: x[k] for k, e in zip(self.free_ids, self.free_basis)}, self.vars)


@dataclass
class ConstraintRecord:
    cls: str  # "unsafe" | "init" | "decrease"
    t: int
    action: str | None
    observation: str | None
    template: TemplatePolynomial | None
    gram: GramTemplate | None
    multipliers: list = field(default_factory=list)
    guards: tuple = ()
    unsafe: tuple = ()  # polynomials u_j with region {u_j > 0}


@dataclass
class CertificateProgram:
    kind: str  # "safety" | "optimality"
    lp: LinearProgram
    barrier: BarrierTemplate
    constraints: list
    dynamics: BeliefDynamics
    init: BeliefSet
    policy: Policy
    horizon: int
    degree: int
    options: CertifyOptions
    spec: object
    build_seconds: float = 0.0
    margin_var: int | None = None

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def count(self, cls: str) -> int:
        return sum(1 for c in self.constraints if c.cls == cls)


def _even_up(k: int) -> int:
    return k + (k % 2)


def _even_down(k: int) -> int:
    return max(0, k - (k % 2))


def putinar_terms(
    lp: LinearProgram,
    vars: Sequence[str],
    constraints: Sequence[tuple[Polynomial, str]],
    degree: int,
    prefix: str = "m",
    free_degree: int | None = None,
) -> tuple[TemplatePolynomial, list[Multiplier]]:
    """``sum_i r_i a_i + sum_j s_j g_j`` over the given constraints.

    ``kind == "equality"`` gets a free multiplier r_i of `free_degree`
    (default `degree`); ``"nonneg"`` gets a DSOS multiplier s_j of the even
    part of `degree`. The returned template is the sum; callers subtract it.
    """
    vars = tuple(vars)
    total = TemplatePolynomial(vars)
    mults = []
    for k, (gen, kind) in enumerate(constraints):
        name = f"{prefix}{k}"
        if kind == "equality":
            fd = degree if free_degree is None else free_degree
            basis = monomial_basis(len(vars), max(fd, 0))
            ids = [lp.add_var(name=f"{name}_r{i}") for i in range(len(basis))]
            m = Multiplier(name, gen, kind, free_ids=ids, free_basis=basis, vars=vars)
            genv = gen.aligned(vars)
            for kid, e in zip(ids, basis):
                total.add_poly(Polynomial({e: 1.0}, vars) * genv, kid)
        elif kind == "nonneg":
            tp, g = dsos_template(lp, vars, _even_down(degree), prefix=name)
            m = Multiplier(name, gen, kind, gram=g, vars=vars)
            genv = gen.aligned(vars)
            prod = _template_times(tp, genv)
            total.add_template(prod)
        else:
            raise ValueError(f"unknown constraint kind {kind!r}")
        mults.append(m)
    return total, mults


def linear_products(
    gens: Sequence[Polynomial], max_degree: int, var_caps: dict[str, int] | None = None
) -> list[Polynomial]:
    """All products of 2..max_degree factors drawn (with repetition) from `gens`.

    Nonnegative combinations of these certify positivity on the polytope the
    linear generators cut out, which the quadratic module alone misses at low
    multiplier degree (e.g. ``theta * b1 * b2`` terms of cleared denominators).
    With `var_caps`, products whose degree in a variable exceeds its cap are
    dropped (they could only cancel against each other).
    """

    def fits(p):
        if var_caps is None:
            return True
        return all(p.degree_in(v) <= var_caps.get(v, 0) for v in p.used_vars())

    out = []
    level = {(i,): g for i, g in enumerate(gens)}
    for _ in range(2, max_degree + 1):
        nxt = {}
        for key, p in level.items():
            for i in range(key[-1], len(gens)):
                q = p * gens[i]
                if fits(q):
                    nxt[key + (i,)] = q
        out.extend(nxt.values())
        level = nxt
    return out


def _template_times(tp: TemplatePolynomial, p: Polynomial) -> TemplatePolynomial:
    out = TemplatePolynomial(tp.vars)
    p = p.aligned(tp.vars)
    for e1, row in tp.terms.items():
        for e2, c in p.terms.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            tgt = out.terms[e]
            for k, v in row.items():
                tgt[k] = tgt.get(k, 0.0) + v * c
    return out


class _Builder:
    """Shared assembly for safety and optimality programs."""

    def __init__(self, dyn: BeliefDynamics, init: BeliefSet, policy: Policy, degree: int, horizon: int, options: CertifyOptions):
        if degree < 1:
            raise DegreeTooSmall("barrier degree must be >= 1")
        self.dyn = dyn
        self.init = init
        self.policy = policy
        self.d = degree
        self.horizon = horizon
        self.opt = options
        self.lp = LinearProgram()
        self.bvars = tuple(dyn.belief_vars)
        if options.simplex not in ("eliminate", "multiplier", "none"):
            raise ValueError(f"unknown simplex handling {options.simplex!r}")
        if options.simplex == "eliminate":
            # b_n = 1 - sum of the others, exact on the simplex
            self.rvars = self.bvars[:-1]
            last = Polynomial.constant(1.0) - Polynomial.from_terms((1.0, {v: 1}) for v in self.rvars)
            self.elim = {self.bvars[-1]: last}
        else:
            self.rvars = self.bvars
            self.elim = {}
        self._red_mono: dict = {}
        self.B = BarrierTemplate(self.lp, self.bvars, degree, horizon, options.time_mode, options.coef_bound)
        self.records: list[ConstraintRecord] = []
        self._numer_cache: dict = {}
        self._rpow_cache: dict = {}
        self._counter = 0
        self.margin = None
        if options.margin_objective:
            self.margin = self.lp.add_var(-np.inf, options.s1, "margin")
            self.lp.objective[self.margin] = -1.0

    def mult_degree(self, target: int, gen_degree: int) -> int:
        if self.opt.multiplier_degree is not None:
            md = self.opt.multiplier_degree
        else:
            md = _even_up(self.d)
        # never exceed what the constraint degree can absorb
        return min(md, _even_down(max(target - gen_degree, 0)))

    def _name(self, tag: str) -> str:
        self._counter += 1
        return f"{tag}{self._counter}_"

    def red(self, p: Polynomial) -> Polynomial:
        return p.compose(self.elim) if self.elim else p

    def mono(self, e_b: tuple) -> Polynomial:
        """Belief monomial b^e on the constraint variables."""
        if e_b not in self._red_mono:
            self._red_mono[e_b] = self.red(self.B.b_monomial(e_b))
        return self._red_mono[e_b]

    def _simplex_terms(self, vars: tuple, target: int, extra_nonneg=(), extra_eq=()) -> tuple[list, list]:
        nonneg = [g for g in (self.red(p) for p in extra_nonneg) if g.degree() > 0 or g.constant_term() < 0]
        eqs = list(extra_eq)
        mode = self.opt.simplex
        if mode == "eliminate":
            nonneg += [Polynomial.var(v) for v in self.rvars]
            if self.rvars:
                nonneg.append(self.elim[self.bvars[-1]])
        elif mode == "multiplier":
            nonneg += [Polynomial.var(v) for v in self.bvars]
            eqs.append(Polynomial.from_terms((1.0, {v: 1}) for v in self.bvars) - 1.0)
        return nonneg, eqs

    def _finish(self, tp: TemplatePolynomial, target: int, vars: tuple, nonneg, eqs, tag: str):
        """Subtract multiplier terms from `tp` and impose DSOS; returns (gram, multipliers)."""
        # products beyond the constraint polynomial's own degrees cannot match a term
        caps = {v: 0 for v in vars}
        for e in tp.terms:
            for v, k in zip(vars, e):
                caps[v] = max(caps[v], k)
        own_degree = tp.degree()
        mults = []
        prefix = self._name(tag)
        cons = []
        for g in nonneg:
            md = self.mult_degree(target, g.degree())
            cons.append((g, "nonneg", md))
        for a in eqs:
            cons.append((a, "equality", max(target - a.degree(), 0)))
        for k, (g, kind, md) in enumerate(cons):
            part, ms = putinar_terms(self.lp, vars, [(g, kind)], md, prefix=f"{prefix}{kind[0]}{k}")
            tp.add_template(part, -1.0)
            mults.extend(ms)
        linear = [g for g in nonneg if g.degree() == 1]
        for g in nonneg:
            for v in g.used_vars():
                caps[v] = max(caps.get(v, 0), 1)
        top = min(target, max(own_degree, 1))
        if self.opt.product_degree is not None:
            top = min(top, self.opt.product_degree)
        zero = (0,) * len(vars)
        for j, prod in enumerate(linear_products(linear, top, caps)):
            k = self.lp.add_var(0.0, np.inf, f"{prefix}h{j}")
            tp.add_poly(prod, k, -1.0)
            mults.append(Multiplier(f"{prefix}h{j}", prod, "product", free_ids=[k], free_basis=[zero], vars=vars))
        gram = dsos_constraints(self.lp, tp, prefix=f"{prefix}G")
        return gram, mults

    # -- pieces -------------------------------------------------------------

    def barrier_template(self, t: int, vars: tuple, scale: float = 1.0) -> TemplatePolynomial:
        tp = TemplatePolynomial(vars)
        for k, s, e in self.B.terms_at(t):
            tp.add_poly(self.mono(e), k, scale * s)
        return tp

    def add_positive_on(self, t: int, unsafe: Sequence[Polynomial], guards: Sequence[Polynomial], action=None) -> None:
        """``B(t, .) >= s1`` on ``{u_j >= 0} ∩ guards ∩ simplex``."""
        vars = self.rvars
        tp = self.barrier_template(t, vars)
        if self.margin is None:
            tp.add_poly(Polynomial.constant(-self.opt.s1, vars))
        else:
            tp.add_poly(Polynomial.constant(-1.0, vars), self.margin)
        target = _even_up(max([self.d] + [u.degree() for u in unsafe] + [g.degree() for g in guards]))
        nonneg, eqs = self._simplex_terms(vars, target, extra_nonneg=list(unsafe) + list(guards))
        gram, mults = self._finish(tp, target, vars, nonneg, eqs, "U")
        self.records.append(ConstraintRecord("unsafe", t, action, None, tp, gram, mults, tuple(guards), tuple(unsafe)))

    def add_init(self) -> None:
        vars = self.rvars
        s2 = self.opt.s2
        if isinstance(self.init, PointBelief):
            b0 = dict(zip(self.bvars, self.init.probs))
            row = {}
            for k, s, e in self.B.terms_at(0):
                val = s * self.B.b_monomial(e).evaluate(b0)
                row[k] = row.get(k, 0.0) + val
            # -B(0, b0) - s2 >= 0
            self.lp.add_le(row, -s2)
            self.records.append(ConstraintRecord("init", 0, None, None, None, None))
            return
        if not isinstance(self.init, SemiAlgebraic):
            raise TypeError(f"unsupported initial set {self.init!r}")
        tp = self.barrier_template(0, vars, scale=-1.0)
        tp.add_poly(Polynomial.constant(-s2, vars))
        target = _even_up(max([self.d] + [c.degree() for c in self.init.constraints]))
        # l_i <= 0 on the set, so -l_i is the nonnegative generator
        nonneg, eqs = self._simplex_terms(vars, target, extra_nonneg=[-c for c in self.init.constraints])
        gram, mults = self._finish(tp, target, vars, nonneg, eqs, "I")
        self.records.append(ConstraintRecord("init", 0, None, None, tp, gram, mults))

    def _cleared_numerator(self, key, vf, e_b: tuple) -> Polynomial:
        ck = (key, e_b)
        if ck not in self._numer_cache:
            subs = self._reduced_field(key, vf)
            mono = self.B.b_monomial(e_b)
            rf = substitute_rational(mono, subs, power=self.d)
            self._numer_cache[ck] = rf.numerator
        return self._numer_cache[ck]

    def _reduced_field(self, key, vf) -> dict:
        ck = (key, "field")
        if ck not in self._numer_cache:
            R = self.red(vf.denominator)
            self._numer_cache[ck] = {
                bvar: RationalFunction(self.red(vf.rows[q]), R) for q, bvar in zip(self.dyn.states, self.bvars)
            }
        return self._numer_cache[ck]

    def _rpow_times(self, key, vf, e_b: tuple) -> Polynomial:
        ck = (key, e_b)
        if ck not in self._rpow_cache:
            if (key, None) not in self._rpow_cache:
                R = next(iter(self._reduced_field(key, vf).values())).denominator
                self._rpow_cache[(key, None)] = R ** self.d
            self._rpow_cache[ck] = self._rpow_cache[(key, None)] * self.mono(e_b)
        return self._rpow_cache[ck]

    def add_decrease(self) -> None:
        for t in range(1, self.horizon + 1):
            for action, guards in modes_for(self.policy, t - 1, self.dyn.actions):
                for z, vf in self.dyn.modes_of(action):
                    key = (action, z)
                    mode_thetas = set(vf.theta_names())
                    vars = self.rvars + tuple(tv.name for tv in self.dyn.theta_vars if tv.name in mode_thetas)
                    tp = TemplatePolynomial(vars)
                    for k, s, e in self.B.terms_at(t):
                        tp.add_poly(self._cleared_numerator(key, vf, e), k, -s)
                    for k, s, e in self.B.terms_at(t - 1):
                        tp.add_poly(self._rpow_times(key, vf, e), k, s)
                    box = [tv for tv in self.dyn.theta_vars if tv.name in mode_thetas]
                    h = [theta_constraint(tv) for tv in box]
                    for tv in box:
                        th = Polynomial.var(tv.name)
                        h += [th - tv.lo, tv.hi - th]
                    row_eqs = [p for p in self.dyn.theta_row_sums if set(p.used_vars()) <= mode_thetas]
                    D0 = vf.denominator.degree() * self.d + self.d
                    target = _even_up(max([D0] + [g.degree() for g in guards]))
                    nonneg, eqs = self._simplex_terms(vars, target, extra_nonneg=h + list(guards), extra_eq=row_eqs)
                    gram, mults = self._finish(tp, target, vars, nonneg, eqs, "D")
                    self.records.append(ConstraintRecord("decrease", t, action, z, tp, gram, mults, tuple(guards)))

    def precondition(self, unsafe_polys_at_0: Sequence[Polynomial]) -> None:
        """Sampled check that the initial set avoids the unsafe set."""
        if not unsafe_polys_at_0:
            return
        if isinstance(self.init, PointBelief):
            pts = np.array([self.init.probs])
        else:
            rng = np.random.Generator(np.random.Philox(self.opt.seed))
            cand = rng.dirichlet(np.ones(len(self.bvars)), size=self.opt.precondition_samples)
            point = {v: cand[:, i] for i, v in enumerate(self.bvars)}
            ok = np.ones(len(cand), dtype=bool)
            for c in self.init.constraints:
                ok &= np.broadcast_to(c.evaluate_batch(point), ok.shape) <= 0
            pts = cand[ok]
        if len(pts) == 0:
            return
        point = {v: pts[:, i] for i, v in enumerate(self.bvars)}
        bad = np.ones(len(pts), dtype=bool)
        for u in unsafe_polys_at_0:
            bad &= np.broadcast_to(u.evaluate_batch(point), bad.shape) > 0
        if bad.any():
            raise PreconditionViolated(f"initial belief {pts[np.argmax(bad)].tolist()} lies in the unsafe set")

    def program(self, kind: str, spec, t0: float) -> CertificateProgram:
        return CertificateProgram(
            kind, self.lp, self.B, self.records, self.dyn, self.init, self.policy,
            self.horizon, self.d, self.opt, spec, time.perf_counter() - t0, self.margin,
        )


def build_safety_program(
    dyn: BeliefDynamics,
    init: BeliefSet,
    spec: SafetySpec,
    policy: Policy,
    degree: int,
    options: CertifyOptions | None = None,
) -> CertificateProgram:
    """One unsafe constraint at t*, one initial constraint, one decrease constraint per (t, mode)."""
    t0 = time.perf_counter()
    options = options or CertifyOptions()
    b = _Builder(dyn, init, policy, degree, spec.horizon, options)
    u = spec.unsafe_polynomial()
    b.precondition([u])
    b.add_positive_on(spec.horizon, [u], ())
    b.add_init()
    b.add_decrease()
    return b.program("safety", spec, t0)


def reward_polynomial(dyn: BeliefDynamics, rewards: dict, action: str) -> Polynomial:
    """``r(b, a) = sum_q b(q) R(q, a)``."""
    return Polynomial.from_terms(
        (rewards.get((q, action), 0.0), {v: 1}) for q, v in zip(dyn.states, dyn.belief_vars)
    )


def build_optimality_program(
    dyn: BeliefDynamics,
    init: BeliefSet,
    spec: OptimalitySpec,
    policy: Policy,
    degree: int,
    rewards: dict,
    options: CertifyOptions | None = None,
    max_reward_degree: int = 4,
) -> CertificateProgram:
    """Barrier positive on ``{(t, b): r(b, a_t) >= gamma_tilde(t)}`` for every t <= t*."""
    t0 = time.perf_counter()
    options = options or CertifyOptions()
    if spec.budget_sum() > spec.gamma + 1e-9:
        raise ValueError("per-step budgets exceed gamma")
    b = _Builder(dyn, init, policy, degree, spec.horizon, options)
    pre = []
    for a, guards in modes_for(policy, 0, dyn.actions):
        if not guards:
            pre.append(reward_polynomial(dyn, rewards, a) - spec.budget(0))
    if len(pre) == 1 or (pre and not isinstance(policy, BeliefRegions)):
        # unsafe at t=0 iff some active action overspends; the check is per action
        for p in pre:
            b.precondition([p])
    for t in range(spec.horizon + 1):
        for a, guards in modes_for(policy, t, dyn.actions):
            r = reward_polynomial(dyn, rewards, a)
            if r.degree() > max_reward_degree:
                raise ValueError("reward polynomial degree above cap")
            b.add_positive_on(t, [r - spec.budget(t)], guards, action=a)
    b.add_init()
    b.add_decrease()
    return b.program("optimality", spec, t0)


@dataclass
class Certificate:
    barrier: Barrier
    multipliers: dict
    margins: dict
    solver: dict
    residual: object  # oracle.ResidualReport
    degree: int
    kind: str

    @property
    def valid(self) -> bool:
        return bool(self.residual.passed)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "degree": self.degree,
            "barrier": self.barrier.to_spec(),
            "margins": self.margins,
            "solver": self.solver,
            "residual": self.residual.to_dict(),
        }


@dataclass
class Infeasible:
    status: str
    message: str = ""
    solver: dict = field(default_factory=dict)
    residual: object = None

    def summary(self) -> dict:
        out = {"status": self.status, "message": self.message, "solver": self.solver}
        if self.residual is not None:
            out["residual"] = self.residual.to_dict()
        return out


def verify(
    program: CertificateProgram,
    solver: Callable[[LinearProgram], LPResult] | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
) -> Certificate | Infeasible:
    """Solve the LP; on success rebuild B and return it only if the residual check passes.

    Infeasible means no certificate exists at this degree in the DSOS cone;
    it says nothing about the claim being false.
    """
    from .oracle import check_certificate

    solver = solver or dsos.solve
    t0 = time.perf_counter()
    res = solver(program.lp)
    stats = {
        "status": res.status,
        "message": str(res.message),
        "iterations": res.iterations,
        "variables": program.lp.n_vars,
        "equalities": program.lp.n_eq,
        "inequalities": program.lp.n_le,
        "max_violation": res.violation,
        "constraints": program.n_constraints,
    }
    timing = {"build_s": program.build_seconds, "solve_s": time.perf_counter() - t0}
    if res.status == "infeasible":
        return Infeasible("infeasible", res.message, {**stats, "timing": timing})
    if res.status != "feasible":
        raise SolverFailure(res.message)
    if program.margin_var is not None:
        margin = float(res.x[program.margin_var])
        stats["margin"] = margin
        if margin < program.options.s1 * (1 - 1e-6):
            return Infeasible("infeasible", f"best unsafe margin {margin:.6g} below s1", {**stats, "timing": timing})
    barrier = program.barrier.barrier(res.x)
    multipliers = {}
    for rec in program.constraints:
        for m in rec.multipliers:
            multipliers[f"{rec.cls}@{rec.t}:{rec.action}:{rec.observation}:{m.name}"] = m.polynomial(res.x)
    cert = Certificate(
        barrier,
        multipliers,
        {"s1": program.options.s1, "s2": program.options.s2},
        {**stats, "timing": timing},
        None,
        program.degree,
        program.kind,
    )
    report = check_certificate(cert, program, n_samples=n_samples, seed=seed)
    cert.residual = report
    if not report.passed:
        log.warning("LP solution rejected by residual check: %s", report.to_dict())
        return Infeasible("rejected-by-residual-check", "sampled barrier conditions violated", stats, report)
    return cert


@dataclass
class BoundProblem:
    dynamics: BeliefDynamics
    init: BeliefSet
    functional: Polynomial
    direction: Direction
    horizon: int
    policy: Policy
    options: CertifyOptions = field(default_factory=CertifyOptions)

    def spec(self, bound: float) -> SafetySpec:
        return SafetySpec(bound, self.horizon, g=self.functional, direction=self.direction)


@dataclass
class BoundResult:
    bound: float
    degree: int
    eps: float
    certificate: Certificate
    probes: list  # (lambda, outcome)


def _certify_at(problem: BoundProblem, lam: float, degree: int, n_samples: int, seed: int):
    spec = problem.spec(lam)
    try:
        prog = build_safety_program(problem.dynamics, problem.init, spec, problem.policy, degree, problem.options)
    except PreconditionViolated as e:
        return Infeasible("precondition-violated", str(e))
    try:
        return verify(prog, n_samples=n_samples, seed=seed)
    except SolverFailure as e:
        return Infeasible("solver-failure", str(e))


def line_search_bound(
    problem: BoundProblem,
    degree: int,
    eps: float = 0.01,
    lo: float = 0.0,
    hi: float = 1.0,
    n_samples: int = 100_000,
    seed: int = 0,
) -> BoundResult:
    """Bisection over the grid ``lo + k*eps``.

    LOWER specs return the largest certified grid value, UPPER specs the
    smallest. The trivial endpoint (``lo`` for LOWER, ``hi`` for UPPER) must
    certify, otherwise NoFeasiblePoint.
    """
    if eps <= 0 or hi <= lo:
        raise ValueError("need eps > 0 and hi > lo")
    K = int(round((hi - lo) / eps))
    grid = [round(lo + k * eps, 12) for k in range(K + 1)]
    lower = problem.direction is Direction.LOWER
    probes = []
    cache = {}

    def ok(k):
        if k not in cache:
            out = _certify_at(problem, grid[k], degree, n_samples, seed)
            cache[k] = out
            probes.append((grid[k], "certified" if isinstance(out, Certificate) else out.status))
        return isinstance(cache[k], Certificate)

    if lower:
        good, bad = 0, K + 1
        if not ok(good):
            raise NoFeasiblePoint(f"no certificate even at trivial bound {grid[good]}")
        while bad - good > 1:
            mid = (good + bad) // 2
            if ok(mid):
                good = mid
            else:
                bad = mid
    else:
        good, bad = K, -1
        if not ok(good):
            raise NoFeasiblePoint(f"no certificate even at trivial bound {grid[good]}")
        while good - bad > 1:
            mid = (good + bad) // 2
            if ok(mid):
                good = mid
            else:
                bad = mid
    return BoundResult(grid[good], degree, eps, cache[good], probes)


def bounds_by_degree(problem: BoundProblem, degrees: Sequence[int], eps: float = 0.01, **kw) -> list[BoundResult]:
    return [line_search_bound(problem, d, eps, **kw) for d in degrees]


__all__ = [
    "Barrier",
    "BoundProblem",
    "BoundResult",
    "Certificate",
    "CertificateProgram",
    "CertifyOptions",
    "DegreeTooSmall",
    "Direction",
    "Infeasible",
    "NoFeasiblePoint",
    "OptimalitySpec",
    "PreconditionViolated",
    "SafetySpec",
    "SolverFailure",
    "build_optimality_program",
    "build_safety_program",
    "line_search_bound",
    "putinar_terms",
    "verify",
]
