"""Sparse multivariate polynomials and rational functions over named indeterminates.

Coefficients are doubles. Monomials are exponent tuples aligned with the
polynomial's variable table; binary operations align both operands to the
union of their tables (left operand's order first).
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-15

Monomial = tuple


class MissingAssignment(KeyError):
    pass


class MixedDenominators(ValueError):
    pass


def glex_key(exps: Sequence[int]):
    """Ascending graded-lex key: lower degree first, then x1 before x2."""
    return (sum(exps), tuple(-e for e in exps))


def glex_desc_key(exps: Sequence[int]):
    """Printing order: higher degree first, then x1 before x2."""
    return (-sum(exps), tuple(-e for e in exps))


def monomial_basis(n: int, d: int) -> list[tuple[int, ...]]:
    """All exponent vectors in `n` variables of total degree <= `d`, graded-lex.

    >>> monomial_basis(2, 1)
    [(0, 0), (1, 0), (0, 1)]
    """
    if n < 0 or d < 0:
        raise ValueError("n and d must be nonnegative")
    out = []
    for deg in range(d + 1):
        for combo in combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


class Polynomial:
    """Immutable sparse polynomial ``sum c_e * x^e``."""

    __slots__ = ("vars", "terms", "_hash")

    def __init__(self, terms: Mapping[tuple, float] | None = None, vars: Sequence[str] = ()):
        self.vars = tuple(vars)
        if len(set(self.vars)) != len(self.vars):
            raise ValueError(f"duplicate variable names in {self.vars}")
        clean = {}
        n = len(self.vars)
        for e, c in (terms or {}).items():
            e = tuple(int(x) for x in e)
            if len(e) != n:
                raise ValueError(f"exponent {e} does not match variables {self.vars}")
            if any(x < 0 for x in e):
                raise ValueError(f"negative exponent in {e}")
            c = float(c)
            if abs(c) >= ZERO_TOL:
                clean[e] = clean.get(e, 0.0) + c
        self.terms = {e: c for e, c in clean.items() if abs(c) >= ZERO_TOL}
        self._hash = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, c: float, vars: Sequence[str] = ()) -> "Polynomial":
        return cls({(0,) * len(vars): c}, vars)

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls({(1,): 1.0}, (name,))

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[float, Mapping[str, int]]]) -> "Polynomial":
        """Build from ``(coeff, {var: power})`` pairs."""
        terms = list(terms)
        names: list[str] = []
        for _, mono in terms:
            for v in mono:
                if v not in names:
                    names.append(v)
        out: dict[tuple, float] = {}
        for c, mono in terms:
            e = tuple(int(mono.get(v, 0)) for v in names)
            out[e] = out.get(e, 0.0) + float(c)
        return cls(out, names)

    # -- structure ----------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self, vars: Iterable[str] | None = None) -> int:
        """Total degree; restricted to `vars` when given. Zero polynomial -> 0."""
        if not self.terms:
            return 0
        if vars is None:
            return max(sum(e) for e in self.terms)
        idx = [i for i, v in enumerate(self.vars) if v in set(vars)]
        return max(sum(e[i] for i in idx) for e in self.terms)

    def degree_in(self, name: str) -> int:
        if name not in self.vars or not self.terms:
            return 0
        i = self.vars.index(name)
        return max(e[i] for e in self.terms)

    def used_vars(self) -> tuple[str, ...]:
        return tuple(v for i, v in enumerate(self.vars) if any(e[i] for e in self.terms))

    def constant_term(self) -> float:
        return self.terms.get((0,) * len(self.vars), 0.0)

    def coefficient(self, mono: Mapping[str, int]) -> float:
        if any(v not in self.vars and p for v, p in mono.items()):
            return 0.0
        e = tuple(int(mono.get(v, 0)) for v in self.vars)
        return self.terms.get(e, 0.0)

    def items_named(self) -> list[tuple[float, dict[str, int]]]:
        """Terms as ``(coeff, {var: power})`` in descending graded-lex order."""
        out = []
        for e in sorted(self.terms, key=glex_desc_key):
            out.append((self.terms[e], {v: p for v, p in zip(self.vars, e) if p}))
        return out

    def aligned(self, vars: Sequence[str]) -> "Polynomial":
        """Re-express over `vars` (a superset of the used variables)."""
        vars = tuple(vars)
        if vars == self.vars:
            return self
        pos = {v: i for i, v in enumerate(vars)}
        out = {}
        n = len(vars)
        for e, c in self.terms.items():
            ne = [0] * n
            for v, p in zip(self.vars, e):
                if p:
                    if v not in pos:
                        raise ValueError(f"variable {v!r} missing from target table")
                    ne[pos[v]] = p
            out[tuple(ne)] = c
        return Polynomial(out, vars)

    def trimmed(self) -> "Polynomial":
        """Drop unused variables from the table."""
        return self.aligned(self.used_vars())

    def _union(self, other: "Polynomial") -> tuple[str, ...]:
        if other.vars == self.vars:
            return self.vars
        return self.vars + tuple(v for v in other.vars if v not in self.vars)

    # -- arithmetic ---------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Polynomial":
        if isinstance(x, Polynomial):
            return x
        if isinstance(x, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(x))
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        vars = self._union(other)
        a, b = self.aligned(vars), other.aligned(vars)
        out = dict(a.terms)
        for e, c in b.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(out, vars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({e: -c for e, c in self.terms.items()}, self.vars)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, k: float) -> "Polynomial":
        return Polynomial({e: k * c for e, c in self.terms.items()}, self.vars)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        vars = self._union(other)
        a, b = self.aligned(vars), other.aligned(vars)
        out: dict[tuple, float] = {}
        for e1, c1 in a.terms.items():
            for e2, c2 in b.terms.items():
                e = tuple(x + y for x, y in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(out, vars)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("power must be a nonnegative integer")
        result = Polynomial.constant(1.0, self.vars)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        a, b = self.trimmed(), other.trimmed()
        vars = a._union(b)
        return a.aligned(vars).terms == b.aligned(vars).terms

    def __hash__(self):
        if self._hash is None:
            t = self.trimmed()
            self._hash = hash(frozenset((tuple(sorted(m.items())), c) for c, m in t.items_named()))
        return self._hash

    def almost_equal(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= tol for c in diff.terms.values())

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, point: Mapping[str, float]) -> float:
        """Direct evaluation, summing in ascending graded-lex order."""
        used = self.used_vars()
        missing = [v for v in used if v not in point]
        if missing:
            raise MissingAssignment(f"no value for {missing}")
        vals = [float(point[v]) if v in point else 0.0 for v in self.vars]
        total = 0.0
        for e in sorted(self.terms, key=glex_key):
            term = self.terms[e]
            for x, p in zip(vals, e):
                if p:
                    term *= x**p
            total += term
        return total

    __call__ = evaluate

    def evaluate_batch(self, point: Mapping[str, np.ndarray]) -> np.ndarray:
        """Vectorized evaluation; values in `point` broadcast against each other."""
        used = self.used_vars()
        missing = [v for v in used if v not in point]
        if missing:
            raise MissingAssignment(f"no value for {missing}")
        shape = np.broadcast_shapes(*(np.shape(point[v]) for v in used)) if used else ()
        total = np.zeros(shape)
        cache: dict[tuple[str, int], np.ndarray] = {}
        for e in sorted(self.terms, key=glex_key):
            term = np.full(shape, self.terms[e])
            for v, p in zip(self.vars, e):
                if p:
                    key = (v, p)
                    if key not in cache:
                        cache[key] = np.asarray(point[v], dtype=float) ** p
                    term = term * cache[key]
            total = total + term
        return total

    def substitute(self, values: Mapping[str, float]) -> "Polynomial":
        """Partial numeric substitution; substituted variables leave the table."""
        keep = [i for i, v in enumerate(self.vars) if v not in values]
        out: dict[tuple, float] = {}
        for e, c in self.terms.items():
            for i, v in enumerate(self.vars):
                if v in values and e[i]:
                    c *= float(values[v]) ** e[i]
            ne = tuple(e[i] for i in keep)
            out[ne] = out.get(ne, 0.0) + c
        return Polynomial(out, [self.vars[i] for i in keep])

    def compose(self, subs: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Replace variables by polynomials."""
        if not any(v in subs and self.degree_in(v) for v in self.vars):
            return self.trimmed()
        keep = [v for v in self.vars if v not in subs]
        pos = {v: i for i, v in enumerate(self.vars)}
        powers: dict[tuple[str, int], Polynomial] = {}

        def power(v, k):
            if (v, k) not in powers:
                powers[(v, k)] = subs[v] ** k
            return powers[(v, k)]

        parts = []
        for e, c in self.terms.items():
            mono = {v: e[pos[v]] for v in keep if e[pos[v]]}
            term = Polynomial.from_terms([(c, mono)])
            for v, k in ((v, e[pos[v]]) for v in self.vars if v in subs and e[pos[v]]):
                term = term * power(v, k)
            parts.append(term)
        return poly_sum(parts) if parts else Polynomial()

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return Polynomial(self.terms, [mapping.get(v, v) for v in self.vars])

    # -- text ---------------------------------------------------------------

    def to_text(self) -> str:
        """Canonical form: ``coeff * b1^2*theta_1`` terms joined by `` + ``."""
        if not self.terms:
            return "0"
        parts = []
        for c, mono in self.items_named():
            factors = "*".join(v if p == 1 else f"{v}^{p}" for v, p in mono.items())
            parts.append(f"{c:.12g} * {factors}" if factors else f"{c:.12g}")
        return " + ".join(parts)

    def __repr__(self):
        return f"Polynomial({self.to_text()})"

    def to_spec(self) -> list[dict]:
        """Serializable list of ``{coeff, monomial}`` records."""
        return [{"coeff": c, "monomial": dict(m)} for c, m in self.items_named()]

    @classmethod
    def from_spec(cls, spec: Iterable[Mapping]) -> "Polynomial":
        return cls.from_terms((float(t["coeff"]), dict(t.get("monomial", {}))) for t in spec)


def const(c: float) -> Polynomial:
    return Polynomial.constant(c)


def var(name: str) -> Polynomial:
    return Polynomial.var(name)


def poly_sum(polys: Iterable[Polynomial]) -> Polynomial:
    """Sum many polynomials without repeated re-alignment."""
    polys = list(polys)
    names: list[str] = []
    seen = set()
    for p in polys:
        for v in p.vars:
            if v not in seen:
                seen.add(v)
                names.append(v)
    out: dict[tuple, float] = {}
    for p in polys:
        for e, c in p.aligned(names).terms.items():
            out[e] = out.get(e, 0.0) + c
    return Polynomial(out, names)


class RationalFunction:
    """Quotient of polynomials, kept exactly as constructed (no cancellation)."""

    __slots__ = ("numerator", "denominator")

    def __init__(self, numerator: Polynomial, denominator: Polynomial | None = None):
        if denominator is None:
            denominator = Polynomial.constant(1.0)
        if denominator.is_zero():
            raise ZeroDivisionError("denominator is identically zero")
        self.numerator = numerator
        self.denominator = denominator

    def evaluate(self, point: Mapping[str, float]) -> float:
        return self.numerator.evaluate(point) / self.denominator.evaluate(point)

    def __repr__(self):
        return f"({self.numerator.to_text()}) / ({self.denominator.to_text()})"


def substitute_rational(
    B: Polynomial,
    subs: Mapping[str, RationalFunction],
    t_value: float | None = None,
    t_var: str = "t",
    power: int | None = None,
) -> RationalFunction:
    """Compose `B` with rationals sharing one denominator R, clearing by R^d.

    d defaults to the degree of B in the substituted variables; a larger
    `power` may be passed to clear by a higher power of R.
    """
    if not subs:
        raise ValueError("no substitutions given")
    rats = list(subs.values())
    R = rats[0].denominator
    for r in rats[1:]:
        if r.denominator != R:
            raise MixedDenominators("substituted rationals do not share a denominator")
    names = [v for v in B.vars if v in subs]
    d = B.degree(names)
    if power is not None:
        if power < d:
            raise ValueError(f"clearing power {power} below degree {d}")
        d = power
    # powers cached; B terms are usually few but S, R products are reused
    s_pows: dict[tuple[str, int], Polynomial] = {}
    r_pows: dict[int, Polynomial] = {}

    def s_pow(v, k):
        if (v, k) not in s_pows:
            s_pows[(v, k)] = subs[v].numerator ** k
        return s_pows[(v, k)]

    def r_pow(k):
        if k not in r_pows:
            r_pows[k] = R**k
        return r_pows[k]

    rest = [v for v in B.vars if v not in subs and not (t_value is not None and v == t_var)]
    pieces = []
    for e, c in B.terms.items():
        coeff = c
        rest_mono = {}
        factor = None
        sub_deg = 0
        for v, p in zip(B.vars, e):
            if not p:
                continue
            if v in subs:
                sub_deg += p
                f = s_pow(v, p)
                factor = f if factor is None else factor * f
            elif t_value is not None and v == t_var:
                coeff *= float(t_value) ** p
            else:
                rest_mono[v] = p
        term = Polynomial({tuple(rest_mono.get(v, 0) for v in rest): coeff}, rest)
        if factor is not None:
            term = term * factor
        term = term * r_pow(d - sub_deg)
        pieces.append(term)
    num = poly_sum(pieces) if pieces else Polynomial()
    return RationalFunction(num, r_pow(d))
