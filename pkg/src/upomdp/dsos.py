"""DSOS cone membership as linear constraints, and the LP solve.

A polynomial ``p`` whose coefficients are affine in LP decision variables is
constrained to ``p = m^T Q m`` with ``Q`` symmetric and diagonally dominant
with nonnegative diagonal. Such a ``Q`` is PSD, so ``p`` is a sum of squares.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .polynomial import Polynomial, glex_key, monomial_basis

FEAS_TOL = 1e-8
INF = math.inf


class OddDegree(ValueError):
    pass


class LinearProgram:
    """Sparse LP: ``min c.x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, bounds."""

    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.names: list[str] = []
        self.objective: dict[int, float] = {}
        self._eq = ([], [], [], [])  # rows, cols, vals, rhs
        self._le = ([], [], [], [])

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_eq(self) -> int:
        return len(self._eq[3])

    @property
    def n_le(self) -> int:
        return len(self._le[3])

    def add_var(self, lb: float = -INF, ub: float = INF, name: str = "") -> int:
        self.lb.append(lb)
        self.ub.append(ub)
        self.names.append(name or f"x{len(self.lb) - 1}")
        return len(self.lb) - 1

    def add_vars(self, k: int, lb: float = -INF, ub: float = INF, prefix: str = "x") -> list[int]:
        start = self.n_vars
        self.lb.extend([lb] * k)
        self.ub.extend([ub] * k)
        self.names.extend(f"{prefix}{i}" for i in range(k))
        return list(range(start, start + k))

    def _add(self, store, coefs: Mapping[int, float], rhs: float) -> int:
        rows, cols, vals, rhss = store
        r = len(rhss)
        for j, v in coefs.items():
            if v != 0.0:
                rows.append(r)
                cols.append(j)
                vals.append(float(v))
        rhss.append(float(rhs))
        return r

    def add_eq(self, coefs: Mapping[int, float], rhs: float = 0.0) -> int:
        return self._add(self._eq, coefs, rhs)

    def add_le(self, coefs: Mapping[int, float], rhs: float = 0.0) -> int:
        return self._add(self._le, coefs, rhs)

    def add_ge(self, coefs: Mapping[int, float], rhs: float = 0.0) -> int:
        return self._add(self._le, {j: -v for j, v in coefs.items()}, -rhs)

    def matrices(self):
        n = self.n_vars

        def build(store):
            rows, cols, vals, rhs = store
            if not rhs:
                return None, None
            A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n))
            return A, np.array(rhs)

        A_eq, b_eq = build(self._eq)
        A_ub, b_ub = build(self._le)
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        return c, A_ub, b_ub, A_eq, b_eq

    def violation(self, x: np.ndarray) -> float:
        c, A_ub, b_ub, A_eq, b_eq = self.matrices()
        worst = 0.0
        if A_eq is not None:
            worst = max(worst, float(np.max(np.abs(A_eq @ x - b_eq))))
        if A_ub is not None:
            worst = max(worst, float(np.max(A_ub @ x - b_ub, initial=0.0)))
        lb, ub = np.array(self.lb), np.array(self.ub)
        worst = max(worst, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        return worst

    def to_lp_format(self) -> str:
        """CPLEX-LP text: objective row, constraint rows, bounds section."""
        out = io.StringIO()
        names = self.names

        def expr(pairs):
            if not pairs:
                return "0 " + names[0] if names else "0"
            return " ".join(f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}" for j, v in pairs)

        out.write("\\ dsos feasibility program\nMinimize\n obj: ")
        out.write(expr(sorted(self.objective.items())) + "\nSubject To\n")
        for tag, store, sense in (("e", self._eq, "="), ("l", self._le, "<=")):
            rows, cols, vals, rhs = store
            per_row = defaultdict(list)
            for r, j, v in zip(rows, cols, vals):
                per_row[r].append((j, v))
            for r in range(len(rhs)):
                out.write(f" {tag}{r}: {expr(per_row[r])} {sense} {rhs[r]:.17g}\n")
        out.write("Bounds\n")
        for name, lo, hi in zip(names, self.lb, self.ub):
            if lo == -INF and hi == INF:
                out.write(f" {name} free\n")
            else:
                lo_s = "-inf" if lo == -INF else f"{lo:.17g}"
                hi_s = "+inf" if hi == INF else f"{hi:.17g}"
                out.write(f" {lo_s} <= {name} <= {hi_s}\n")
        out.write("End\n")
        return out.getvalue()


@dataclass
class LPResult:
    status: str  # "feasible" | "infeasible" | "numerical-failure"
    x: np.ndarray | None = None
    message: str = ""
    iterations: int = 0
    violation: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


# tried in order until one reaches a conclusive status (optimal or infeasible)
SOLVER_CHAIN = (
    ("highs-ds", {"presolve": True}),
    ("highs-ipm", {}),
    ("highs-ds", {"presolve": False}),
)


def solve(lp: LinearProgram, time_limit: float | None = None) -> LPResult:
    """Solve with HiGHS, falling back along SOLVER_CHAIN; feasibility checked at 1e-8."""
    c, A_ub, b_ub, A_eq, b_eq = lp.matrices()
    bounds = np.column_stack([np.array(lp.lb, dtype=float), np.array(lp.ub, dtype=float)])
    bounds[np.isinf(bounds[:, 0]), 0] = -np.inf
    failures = []
    nit = 0
    for method, extra in SOLVER_CHAIN:
        options = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9, **extra}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method=method, options=options)
        nit += int(getattr(res, "nit", 0) or 0)
        if res.status == 2:
            return LPResult("infeasible", None, res.message, nit)
        if res.status != 0:
            failures.append(f"{method}: status {res.status}: {res.message}")
            continue
        x = np.asarray(res.x, dtype=float)
        viol = lp.violation(x)
        if viol > FEAS_TOL:
            failures.append(f"{method}: solution violates constraints by {viol:.3g}")
            continue
        return LPResult("feasible", x, res.message, nit, viol)
    return LPResult("numerical-failure", None, "; ".join(failures), nit)


class TemplatePolynomial:
    """Polynomial whose coefficients are affine in LP variables.

    ``terms[mono]`` maps an LP variable id to its coefficient; key ``None`` is
    the constant part.
    """

    def __init__(self, vars: Sequence[str]):
        self.vars = tuple(vars)
        self.terms: dict[tuple, dict] = defaultdict(dict)

    def add_poly(self, poly: Polynomial, var: int | None = None, scale: float = 1.0) -> None:
        """Add ``scale * x_var * poly`` (or ``scale * poly`` when var is None)."""
        p = poly.aligned(self.vars) if poly.vars != self.vars else poly
        for e, c in p.terms.items():
            row = self.terms[e]
            row[var] = row.get(var, 0.0) + scale * c

    def add_linear_combination(self, polys: Iterable[tuple[int, Polynomial]], scale: float = 1.0) -> None:
        for var, poly in polys:
            self.add_poly(poly, var, scale)

    def add_template(self, other: "TemplatePolynomial", scale: float = 1.0) -> None:
        for e, row in other.terms.items():
            mine = self.terms[e]
            for k, v in row.items():
                mine[k] = mine.get(k, 0.0) + scale * v

    def monomials(self) -> list[tuple]:
        return [e for e, row in self.terms.items() if any(abs(v) > 0 for v in row.values())]

    def degree(self) -> int:
        ms = self.monomials()
        return max((sum(e) for e in ms), default=0)

    def instantiate(self, x: np.ndarray) -> Polynomial:
        out = {}
        for e, row in self.terms.items():
            out[e] = sum(v * (1.0 if k is None else x[k]) for k, v in row.items())
        return Polynomial(out, self.vars)


@dataclass
class GramTemplate:
    vars: tuple
    basis: list  # exponent tuples over `vars`
    q_index: dict = field(default_factory=dict)  # (i, j) with i <= j -> LP var id
    slack_index: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.basis)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        N = self.size
        Q = np.zeros((N, N))
        for (i, j), k in self.q_index.items():
            Q[i, j] = Q[j, i] = x[k]
        return Q

    def polynomial(self, x: np.ndarray) -> Polynomial:
        Q = self.matrix(x)
        out: dict[tuple, float] = {}
        for i, mi in enumerate(self.basis):
            for j in range(i, len(self.basis)):
                if Q[i, j] == 0.0:
                    continue
                e = tuple(a + b for a, b in zip(mi, self.basis[j]))
                out[e] = out.get(e, 0.0) + (1.0 if i == j else 2.0) * Q[i, j]
        return Polynomial(out, self.vars)


def gram_basis(vars: Sequence[str], half_degree: int, var_caps: Mapping[str, int] | None = None) -> list[tuple]:
    """Monomials of degree <= half_degree over `vars`, per-variable capped, graded-lex."""
    n = len(vars)
    basis = monomial_basis(n, half_degree)
    if var_caps:
        caps = [var_caps.get(v, half_degree) for v in vars]
        basis = [e for e in basis if all(x <= c for x, c in zip(e, caps))]
    return basis


def add_dd_gram(lp: LinearProgram, vars: Sequence[str], basis: list[tuple], prefix: str = "Q") -> GramTemplate:
    """Fresh diagonally dominant Gram matrix over `basis` (|Q_ij| linearized by slacks)."""
    g = GramTemplate(tuple(vars), list(basis))
    N = len(basis)
    for i in range(N):
        g.q_index[(i, i)] = lp.add_var(0.0, INF, f"{prefix}_{i}_{i}")
    for i in range(N):
        for j in range(i + 1, N):
            q = lp.add_var(-INF, INF, f"{prefix}_{i}_{j}")
            s = lp.add_var(0.0, INF, f"{prefix}_abs_{i}_{j}")
            g.q_index[(i, j)] = q
            g.slack_index[(i, j)] = s
            lp.add_le({q: 1.0, s: -1.0}, 0.0)
            lp.add_le({q: -1.0, s: -1.0}, 0.0)
    for i in range(N):
        row = {g.q_index[(i, i)]: -1.0}
        for j in range(N):
            if j != i:
                row[g.slack_index[(min(i, j), max(i, j))]] = 1.0
        if len(row) > 1:
            lp.add_le(row, 0.0)
    return g


def gram_products(g: GramTemplate) -> dict[tuple, list[tuple[int, float]]]:
    """Monomial -> [(LP var, factor)] contributions of ``m^T Q m``."""
    out: dict[tuple, list] = defaultdict(list)
    B = g.basis
    for (i, j), k in g.q_index.items():
        e = tuple(a + b for a, b in zip(B[i], B[j]))
        out[e].append((k, 1.0 if i == j else 2.0))
    return out


def dsos_template(
    lp: LinearProgram, vars: Sequence[str], degree: int, prefix: str = "s"
) -> tuple[TemplatePolynomial, GramTemplate]:
    """A DSOS polynomial of the given (even-rounded-down) degree as a template."""
    half = degree // 2
    basis = gram_basis(vars, half)
    g = add_dd_gram(lp, vars, basis, prefix)
    tp = TemplatePolynomial(vars)
    for e, contribs in gram_products(g).items():
        row = tp.terms[e]
        for k, f in contribs:
            row[k] = row.get(k, 0.0) + f
    return tp, g


def _degree_profile(tp: TemplatePolynomial) -> tuple[int, list[int], bool]:
    """Total degree, per-variable degree, and whether the top-degree part is fixed-only."""
    ms = tp.monomials()
    if not ms:
        return 0, [0] * len(tp.vars), False
    D = max(sum(e) for e in ms)
    per = [max(e[i] for e in ms) for i in range(len(tp.vars))]
    top_fixed = any(
        sum(e) == D and all(k is None for k, v in tp.terms[e].items() if v != 0.0) for e in ms
    )
    return D, per, top_fixed


def dsos_constraints(lp: LinearProgram, tp: TemplatePolynomial, prefix: str = "G") -> GramTemplate:
    """Constrain the template to the DSOS cone; returns the Gram template added.

    The Gram basis uses only variables that occur, total degree <= D/2 and
    per-variable degree <= D_x/2 (exact for any SOS decomposition).
    """
    D, per, top_fixed = _degree_profile(tp)
    if D % 2 == 1 and top_fixed:
        raise OddDegree(f"fixed part has odd top degree {D}")
    used = [v for v, d in zip(tp.vars, per) if d > 0]
    caps = {v: d // 2 for v, d in zip(tp.vars, per) if d > 0}
    sub_basis = gram_basis(used, D // 2, caps)
    pos = [tp.vars.index(v) for v in used]
    basis = []
    for e in sub_basis:
        full = [0] * len(tp.vars)
        for p, x in zip(pos, e):
            full[p] = x
        basis.append(tuple(full))
    g = add_dd_gram(lp, tp.vars, basis, prefix)
    prods = gram_products(g)
    monos = set(tp.monomials()) | set(prods)
    for e in sorted(monos, key=glex_key):
        row: dict[int, float] = {}
        const = 0.0
        for k, v in tp.terms.get(e, {}).items():
            if k is None:
                const += v
            else:
                row[k] = row.get(k, 0.0) + v
        for k, f in prods.get(e, ()):
            row[k] = row.get(k, 0.0) - f
        lp.add_eq(row, -const)
    return g


def is_dsos(p: Polynomial) -> tuple[bool, GramTemplate | None, LPResult]:
    """Standalone membership test for a fixed polynomial."""
    lp = LinearProgram()
    tp = TemplatePolynomial(p.vars)
    tp.add_poly(p)
    try:
        g = dsos_constraints(lp, tp)
    except OddDegree:
        return False, None, LPResult("infeasible", message="odd degree")
    res = solve(lp)
    return res.feasible, (g if res.feasible else None), res
