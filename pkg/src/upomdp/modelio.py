"""JSON model, policy and verification-spec documents.

Model document keys: ``states``, ``actions``, ``observations``, ``transitions``
(records ``{from, action, to, prob}``), ``obs_fn`` (``{state, action, obs,
prob}``), ``rewards`` (``{state, action, value}``) and ``init``
(``{"point": {state: p}}`` or ``{"constraints": [poly, ...]}``). ``prob`` is a
number or ``[lo, hi]``. Polynomials are lists of ``{coeff, monomial}``; a
monomial key naming a state stands for that state's belief variable.
"""

from __future__ import annotations

import json
from typing import Any, Mapping, Sequence

from .polynomial import Polynomial
from .pomdp import (
    Arbitrary,
    BeliefRegions,
    Interval,
    Point,
    PointBelief,
    Policy,
    SemiAlgebraic,
    TimeSchedule,
    UncertainPomdp,
    bvar,
)


class ParseError(ValueError):
    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


def _load(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno} column {e.colno}", e.msg) from None


def _require(doc: Mapping, key: str, where: str):
    if not isinstance(doc, Mapping):
        raise ParseError(where, "expected an object")
    if key not in doc:
        raise ParseError(f"{where}.{key}" if where else key, "missing")
    return doc[key]


def _names(doc, key) -> tuple:
    val = _require(doc, key, "")
    if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
        raise ParseError(key, "expected a list of names")
    return tuple(val)


def _prob(val, where: str):
    if isinstance(val, bool):
        raise ParseError(where, f"malformed probability {val!r}")
    if isinstance(val, (int, float)):
        if not 0.0 <= val <= 1.0:
            raise ParseError(where, f"malformed probability {val!r} (outside [0, 1])")
        return Point(float(val))
    if isinstance(val, list) and len(val) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        lo, hi = float(val[0]), float(val[1])
        if not 0.0 <= lo <= hi <= 1.0:
            raise ParseError(where, f"malformed interval {val!r}")
        return Interval(lo, hi)
    raise ParseError(where, f"malformed probability {val!r}")


def _num(val, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(where, f"expected a number, got {val!r}")
    return float(val)


def parse_polynomial(spec, where: str, states: Sequence[str] = ()) -> Polynomial:
    if not isinstance(spec, list):
        raise ParseError(where, "polynomial must be a list of terms")
    st = set(states)
    terms = []
    for i, t in enumerate(spec):
        w = f"{where}[{i}]"
        if not isinstance(t, Mapping):
            raise ParseError(w, "expected an object")
        c = _num(_require(t, "coeff", w), f"{w}.coeff")
        mono = t.get("monomial", {})
        if not isinstance(mono, Mapping):
            raise ParseError(f"{w}.monomial", "expected an object")
        m = {}
        for name, p in mono.items():
            if isinstance(p, bool) or not isinstance(p, int) or p < 0:
                raise ParseError(f"{w}.monomial.{name}", f"bad power {p!r}")
            m[bvar(name) if name in st else name] = p
        terms.append((c, m))
    return Polynomial.from_terms(terms)


def _records(doc, key, fields, required=True):
    recs = doc.get(key, [] if not required else None)
    if recs is None:
        raise ParseError(key, "missing")
    if not isinstance(recs, list):
        raise ParseError(key, "expected a list of records")
    for i, r in enumerate(recs):
        for f in fields:
            _require(r, f, f"{key}[{i}]")
    return recs


def _known(name, pool, where):
    if name not in pool:
        raise ParseError(where, f"unknown name {name!r}")
    return name


def parse_model(text: str) -> UncertainPomdp:
    doc = _load(text)
    if not isinstance(doc, Mapping):
        raise ParseError("document", "expected a JSON object")
    Q, A, Z = _names(doc, "states"), _names(doc, "actions"), _names(doc, "observations")
    trans = {}
    for i, r in enumerate(_records(doc, "transitions", ("from", "action", "to", "prob"))):
        w = f"transitions[{i}]"
        key = (_known(r["from"], Q, f"{w}.from"), _known(r["action"], A, f"{w}.action"), _known(r["to"], Q, f"{w}.to"))
        trans[key] = _prob(r["prob"], f"{w}.prob")
    obs = {}
    for i, r in enumerate(_records(doc, "obs_fn", ("state", "action", "obs", "prob"))):
        w = f"obs_fn[{i}]"
        key = (_known(r["state"], Q, f"{w}.state"), _known(r["action"], A, f"{w}.action"), _known(r["obs"], Z, f"{w}.obs"))
        obs[key] = _prob(r["prob"], f"{w}.prob")
    rewards = {}
    for i, r in enumerate(_records(doc, "rewards", ("state", "action", "value"), required=False)):
        w = f"rewards[{i}]"
        rewards[(_known(r["state"], Q, f"{w}.state"), _known(r["action"], A, f"{w}.action"))] = _num(r["value"], f"{w}.value")
    init_doc = _require(doc, "init", "")
    if isinstance(init_doc, Mapping) and "point" in init_doc:
        pt = init_doc["point"]
        if not isinstance(pt, Mapping):
            raise ParseError("init.point", "expected an object")
        for q in pt:
            _known(q, Q, f"init.point.{q}")
        init = PointBelief(tuple(_num(pt.get(q, 0.0), f"init.point.{q}") for q in Q))
    elif isinstance(init_doc, Mapping) and "constraints" in init_doc:
        cs = init_doc["constraints"]
        if not isinstance(cs, list) or not cs:
            raise ParseError("init.constraints", "expected a nonempty list")
        init = SemiAlgebraic(tuple(parse_polynomial(c, f"init.constraints[{i}]", Q) for i, c in enumerate(cs)))
    else:
        raise ParseError("init", "expected {'point': ...} or {'constraints': [...]}")
    return UncertainPomdp(Q, A, Z, trans, obs, init, rewards)


def _prob_out(e):
    return e.value if isinstance(e, Point) else [e.lo, e.hi]


def model_to_dict(m: UncertainPomdp) -> dict:
    doc = {
        "states": list(m.states),
        "actions": list(m.actions),
        "observations": list(m.observations),
        "transitions": [
            {"from": q, "action": a, "to": q2, "prob": _prob_out(e)} for (q, a, q2), e in m.transition.items()
        ],
        "obs_fn": [
            {"state": q, "action": a, "obs": z, "prob": _prob_out(e)} for (q, a, z), e in m.observation_fn.items()
        ],
        "rewards": [{"state": q, "action": a, "value": v} for (q, a), v in m.rewards.items()],
    }
    if isinstance(m.initial_belief, PointBelief):
        doc["init"] = {"point": {q: p for q, p in zip(m.states, m.initial_belief.probs) if p}}
    else:
        doc["init"] = {"constraints": [c.to_spec() for c in m.initial_belief.constraints]}
    return doc


def serialize_model(m: UncertainPomdp) -> str:
    return json.dumps(model_to_dict(m), indent=1)


def policy_to_dict(p: Policy) -> dict:
    if isinstance(p, Arbitrary):
        return {"type": "arbitrary"}
    if isinstance(p, TimeSchedule):
        return {"type": "schedule", "actions": list(p.actions)}
    if isinstance(p, BeliefRegions):
        return {
            "type": "regions",
            "regions": [{"guards": [g.to_spec() for g in gs], "action": a} for gs, a in p.regions],
        }
    raise TypeError(f"unknown policy {p!r}")


def serialize_policy(p: Policy) -> str:
    return json.dumps(policy_to_dict(p), indent=1)


def parse_policy(text: str, model: UncertainPomdp | None = None) -> Policy:
    doc = _load(text)
    kind = _require(doc, "type", "policy")
    actions = set(model.actions) if model else None
    states = model.states if model else ()

    def act(a, where):
        if actions is not None and a not in actions:
            raise ParseError(where, f"unknown action {a!r}")
        return a

    if kind == "arbitrary":
        return Arbitrary()
    if kind == "schedule":
        acts = _require(doc, "actions", "policy")
        if not isinstance(acts, list):
            raise ParseError("policy.actions", "expected a list")
        return TimeSchedule(tuple(act(a, f"policy.actions[{i}]") for i, a in enumerate(acts)))
    if kind == "regions":
        regs = []
        for i, r in enumerate(_require(doc, "regions", "policy")):
            w = f"policy.regions[{i}]"
            guards = tuple(parse_polynomial(g, f"{w}.guards[{j}]", states) for j, g in enumerate(_require(r, "guards", w)))
            regs.append((guards, act(_require(r, "action", w), f"{w}.action")))
        return BeliefRegions(tuple(regs))
    raise ParseError("policy.type", f"unknown policy type {kind!r}")


def spec_to_dict(spec) -> dict:
    from .certify import OptimalitySpec, SafetySpec

    if isinstance(spec, SafetySpec):
        doc = {"kind": "safety", "horizon": spec.horizon, "bound": spec.bound, "direction": spec.direction.value}
        if spec.g is not None:
            doc["functional"] = spec.g.to_spec()
        else:
            doc["unsafe_states"] = list(spec.unsafe_states)
        return doc
    if isinstance(spec, OptimalitySpec):
        return {
            "kind": "optimality",
            "horizon": spec.horizon,
            "gamma": spec.gamma,
            "gamma_tilde": spec.gamma_tilde.to_spec(),
        }
    raise TypeError(f"unknown spec {spec!r}")


def serialize_spec(spec) -> str:
    return json.dumps(spec_to_dict(spec), indent=1)


def parse_spec(text: str, model: UncertainPomdp | None = None):
    """Safety (``kind: safety``) or optimality (``kind: optimality``) spec document."""
    from .certify import OptimalitySpec, SafetySpec

    doc = _load(text)
    kind = _require(doc, "kind", "spec")
    states = model.states if model else ()
    horizon = _require(doc, "horizon", "spec")
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ParseError("spec.horizon", "expected an integer")
    try:
        if kind == "safety":
            bound = _num(_require(doc, "bound", "spec"), "spec.bound")
            direction = doc.get("direction", "upper")
            if direction not in ("upper", "lower"):
                raise ParseError("spec.direction", f"expected 'upper' or 'lower', got {direction!r}")
            if "functional" in doc:
                g = parse_polynomial(doc["functional"], "spec.functional", states)
                return SafetySpec(bound, horizon, g=g, direction=direction)
            unsafe = _require(doc, "unsafe_states", "spec")
            if not isinstance(unsafe, list) or not unsafe:
                raise ParseError("spec.unsafe_states", "expected a nonempty list of states")
            for i, q in enumerate(unsafe):
                if model is not None:
                    _known(q, states, f"spec.unsafe_states[{i}]")
            return SafetySpec(bound, horizon, unsafe_states=tuple(unsafe), direction=direction)
        if kind == "optimality":
            gamma = _num(_require(doc, "gamma", "spec"), "spec.gamma")
            if "gamma_tilde" in doc:
                gt = parse_polynomial(doc["gamma_tilde"], "spec.gamma_tilde")
                return OptimalitySpec(gamma, horizon, gt)
            return OptimalitySpec.uniform(gamma, horizon)
    except ValueError as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError("spec", str(e)) from None
    raise ParseError("spec.kind", f"unknown spec kind {kind!r}")
