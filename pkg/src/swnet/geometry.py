"""Exact static-planning geometry: admissibility LPs, dual-polytope vertex
enumeration, virtual resources, critically loaded sets, complete loading.

All geometry runs in exact rational arithmetic (fractions.Fraction). Floats
entering through lambda are converted to their exact binary value; when that
happens, classifications near the critical boundary can be snapped by a
configurable tolerance and are flagged approximate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .model import NetworkModel

DEFAULT_VERTEX_BUDGET = 20_000


class BudgetExceeded(ValueError):
    """Vertex enumeration would exceed the configured subset budget."""


class InfeasiblePlan(ValueError):
    """PRIMAL(lambda) is infeasible: some queue with positive rate is never
    served by any schedule."""


def to_fraction(x) -> Fraction:
    """Exact coercion: int/Fraction pass through, strings parse as 'p/q',
    floats convert to their exact binary value."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        return Fraction(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Fraction")


def fraction_vector(xs) -> tuple[Fraction, ...]:
    return tuple(to_fraction(x) for x in xs)


def format_fraction(x: Fraction) -> str:
    return str(x)


# ---------------------------------------------------------------------------
# exact linear algebra
# ---------------------------------------------------------------------------


def solve_square(a: list[list[Fraction]], b: list[Fraction]) -> Optional[list[Fraction]]:
    """Solve a square rational system by Gaussian elimination.

    Returns None when the matrix is singular.
    """
    n = len(b)
    m = [row[:] + [rhs] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return None
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
        inv = m[col][col]
        m[col] = [v / inv for v in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [v - f * w for v, w in zip(m[r], m[col])]
    return [m[r][n] for r in range(n)]


# ---------------------------------------------------------------------------
# exact two-phase simplex (Bland's rule)
# ---------------------------------------------------------------------------


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: Optional[Fraction]
    x: Optional[list[Fraction]]


def _pivot(rows, cost, basis, r, col) -> None:
    piv = rows[r][col]
    rows[r] = [v / piv for v in rows[r]]
    prow = rows[r]
    for i in range(len(rows)):
        if i != r and rows[i][col] != 0:
            f = rows[i][col]
            rows[i] = [a - f * b for a, b in zip(rows[i], prow)]
    if cost[col] != 0:
        f = cost[col]
        cost[:] = [a - f * b for a, b in zip(cost, prow)]
    basis[r] = col


def _run_phase(rows, cost, basis, allowed) -> str:
    while True:
        enter = next((j for j in allowed if cost[j] < 0), None)  # Bland: lowest index
        if enter is None:
            return "optimal"
        best = None
        for i, row in enumerate(rows):
            if row[enter] > 0:
                ratio = row[-1] / row[enter]
                key = (ratio, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:
            return "unbounded"
        _pivot(rows, cost, basis, best[1], enter)


def solve_lp(
    c: Sequence[Fraction],
    a_ub: Sequence[Sequence[Fraction]] = (),
    b_ub: Sequence[Fraction] = (),
    a_eq: Sequence[Sequence[Fraction]] = (),
    b_eq: Sequence[Fraction] = (),
) -> LpResult:
    """Exact rational simplex: minimize c.x s.t. a_ub x <= b_ub,
    a_eq x = b_eq, x >= 0. Bland's rule prevents cycling; problem sizes here
    are tiny, so no effort is spent on sparsity or revised form.
    """
    zero, one = Fraction(0), Fraction(1)
    nx = len(c)
    rows: list[list[Fraction]] = []
    kinds: list[str] = []  # "ub" gets a slack, "eq" does not
    for row, rhs in zip(a_ub, b_ub):
        rows.append([to_fraction(v) for v in row] + [to_fraction(rhs)])
        kinds.append("ub")
    for row, rhs in zip(a_eq, b_eq):
        rows.append([to_fraction(v) for v in row] + [to_fraction(rhs)])
        kinds.append("eq")
    m = len(rows)
    n_slack = sum(1 for k in kinds if k == "ub")
    ncols = nx + n_slack + m  # x, slacks, artificials
    tab: list[list[Fraction]] = []
    slack_at = 0
    for i, (row, kind) in enumerate(zip(rows, kinds)):
        body = row[:-1] + [zero] * (n_slack + m)
        rhs = row[-1]
        if kind == "ub":
            body[nx + slack_at] = one
            slack_at += 1
        if rhs < 0:
            body = [-v for v in body]
            rhs = -rhs
        body[nx + n_slack + i] = one
        tab.append(body + [rhs])

    # phase 1: minimize the artificial total
    basis = [nx + n_slack + i for i in range(m)]
    cost = [zero] * (ncols + 1)
    for row in tab:
        for j in range(ncols + 1):
            cost[j] -= row[j]
    for i in range(m):
        cost[nx + n_slack + i] += one
    allowed = list(range(nx + n_slack))
    status = _run_phase(tab, cost, basis, allowed)
    if -cost[-1] > 0:
        return LpResult(status="infeasible", value=None, x=None)
    # drive leftover artificials out of the basis
    drop: list[int] = []
    for i in range(m):
        if basis[i] >= nx + n_slack:
            col = next((j for j in range(nx + n_slack) if tab[i][j] != 0), None)
            if col is None:
                drop.append(i)  # redundant row
            else:
                _pivot(tab, cost, basis, i, col)
    for i in reversed(drop):
        del tab[i]
        del basis[i]

    # phase 2: original objective over x and slacks
    cost = [to_fraction(v) for v in c] + [zero] * (n_slack + m) + [zero]
    for i, b in enumerate(basis):
        if cost[b] != 0:
            f = cost[b]
            cost = [a - f * v for a, v in zip(cost, tab[i])]
    status = _run_phase(tab, cost, basis, allowed)
    if status == "unbounded":
        return LpResult(status="unbounded", value=None, x=None)
    x = [zero] * nx
    for i, b in enumerate(basis):
        if b < nx:
            x[b] = tab[i][-1]
    return LpResult(status="optimal", value=-cost[-1], x=x)


# ---------------------------------------------------------------------------
# static planning problems
# ---------------------------------------------------------------------------


def _schedule_rows(model: NetworkModel) -> list[tuple[Fraction, ...]]:
    return [fraction_vector(pi) for pi in model.schedules.as_array]


def solve_primal(model: NetworkModel, lam) -> tuple[Fraction, list[Fraction]]:
    """Minimize sum(alpha) subject to lam <= sum alpha_pi * pi, alpha >= 0.

    Returns the exact optimal value and one optimal weight vector alpha.
    """
    pis = _schedule_rows(model)
    lam = fraction_vector(lam)
    n, ns = model.n_queues, len(pis)
    # lam - sum alpha pi <= 0  componentwise
    a_ub = [[-pis[s][q] for s in range(ns)] for q in range(n)]
    b_ub = [-lam[q] for q in range(n)]
    res = solve_lp([Fraction(1)] * ns, a_ub=a_ub, b_ub=b_ub)
    if res.status != "optimal":
        served = {q for pi in pis for q in range(n) if pi[q] > 0}
        missing = [q for q in range(n) if lam[q] > 0 and q not in served]
        raise InfeasiblePlan(
            f"no schedule serves positively loaded queue(s) {missing}"
            if missing
            else "static planning primal is infeasible"
        )
    return res.value, res.x


def solve_dual(model: NetworkModel, lam) -> tuple[Fraction, list[Fraction]]:
    """Maximize xi.lam over xi >= 0 with xi.pi <= 1 for every schedule.

    Returns the exact optimal value and a maximizing vertex of the feasible
    polytope (the simplex optimum is a basic feasible solution).
    """
    pis = _schedule_rows(model)
    lam = fraction_vector(lam)
    n = model.n_queues
    res = solve_lp([-v for v in lam], a_ub=pis, b_ub=[Fraction(1)] * len(pis))
    if res.status == "unbounded":
        raise InfeasiblePlan("dual unbounded: some positively loaded queue is never served")
    return -res.value, res.x


@dataclass
class LoadClass:
    """Admissibility classification from the exact primal value."""

    primal_value: Fraction
    load_class: str  # strictly_admissible | critical | inadmissible
    exact: bool
    tolerance: float = 0.0

    def is_admissible(self) -> bool:
        return self.load_class != "inadmissible"


def classify_load(model: NetworkModel, lam, tol: float = 1e-9) -> LoadClass:
    """strictly_admissible (<1), critical (=1) or inadmissible (>1).

    Exact whenever lam is given in exact form (ints, Fractions, 'p/q'
    strings). Float inputs are converted to their exact binary values; if
    the exact verdict then sits within ``tol`` of critical without being
    exactly critical, the class is snapped to critical and flagged.
    """
    was_float = any(isinstance(v, (float, np.floating)) for v in lam)
    value, _ = solve_primal(model, lam)
    if value == 1:
        return LoadClass(value, "critical", exact=True)
    exact_class = "strictly_admissible" if value < 1 else "inadmissible"
    if was_float and abs(float(value) - 1.0) <= tol:
        return LoadClass(value, "critical", exact=False, tolerance=tol)
    return LoadClass(value, exact_class, exact=not was_float)


# ---------------------------------------------------------------------------
# dual polytope vertices and virtual resources
# ---------------------------------------------------------------------------


@dataclass
class VirtualResourceSet:
    """Vertices E of the dual feasible polytope and the maximal subset S*.

    Vertices are exact rational tuples in a canonical sorted order.
    """

    vertices: list[tuple[Fraction, ...]]
    maximal: list[tuple[Fraction, ...]]

    def __post_init__(self) -> None:
        self.vertices = sorted(self.vertices)
        self.maximal = sorted(self.maximal)

    @property
    def n_queues(self) -> int:
        return len(self.vertices[0]) if self.vertices else 0


def enumerate_dual_vertices(
    model: NetworkModel, budget: int = DEFAULT_VERTEX_BUDGET
) -> VirtualResourceSet:
    """Enumerate all vertices of {xi >= 0 : xi.pi <= 1 for all pi}.

    Brute force over N-subsets of the N + |S| constraints, solving each
    candidate square system exactly and keeping feasible solutions. Refuses
    instances where the subset count exceeds ``budget``.
    """
    pis = _schedule_rows(model)
    n, ns = model.n_queues, len(pis)
    n_candidates = math.comb(n + ns, n)
    if n_candidates > budget:
        raise BudgetExceeded(
            f"{n_candidates} candidate bases exceed budget {budget}; "
            "raise the budget explicitly to force enumeration"
        )
    zero, one = Fraction(0), Fraction(1)
    seen: dict[tuple, None] = {}
    for combo in itertools.combinations(range(n + ns), n):
        zero_idx = [i for i in combo if i < n]
        sched_idx = [i - n for i in combo if i >= n]
        free = [q for q in range(n) if q not in zero_idx]
        k = len(free)
        if len(sched_idx) != k:
            continue  # cannot happen: |combo| = n forces it
        if k == 0:
            cand = tuple([zero] * n)
        else:
            a = [[pis[s][q] for q in free] for s in sched_idx]
            sol = solve_square(a, [one] * k)
            if sol is None:
                continue
            cand_list = [zero] * n
            for q, v in zip(free, sol):
                cand_list[q] = v
            cand = tuple(cand_list)
        if cand in seen:
            continue
        if any(v < 0 for v in cand):
            continue
        if any(sum(p * v for p, v in zip(pi, cand)) > 1 for pi in pis):
            continue
        seen[cand] = None
    vertices = sorted(seen.keys())
    maximal = [
        xi
        for xi in vertices
        if not any(
            all(a <= b for a, b in zip(xi, zeta)) and xi != zeta for zeta in vertices
        )
    ]
    return VirtualResourceSet(vertices=vertices, maximal=maximal)


def verify_vertex(model: NetworkModel, xi: Sequence[Fraction]) -> bool:
    """Post-hoc check: xi is feasible and has N independent tight constraints."""
    pis = _schedule_rows(model)
    n = model.n_queues
    xi = fraction_vector(xi)
    if any(v < 0 for v in xi):
        return False
    tight: list[list[Fraction]] = []
    for q in range(n):
        if xi[q] == 0:
            row = [Fraction(0)] * n
            row[q] = Fraction(1)
            tight.append(row)
    for pi in pis:
        val = sum(p * v for p, v in zip(pi, xi))
        if val > 1:
            return False
        if val == 1:
            tight.append(list(pi))
    return _rank(tight, n) == n


def _rank(rows: list[list[Fraction]], n: int) -> int:
    m = [row[:] for row in rows]
    rank = 0
    for col in range(n):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = m[rank][col]
        m[rank] = [v / inv for v in m[rank]]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col]
                m[r] = [v - f * w for v, w in zip(m[r], m[rank])]
        rank += 1
        if rank == min(len(m), n):
            break
    return rank


def critically_loaded(
    model: NetworkModel, lam, vrs: VirtualResourceSet, tol: float = 0.0
) -> tuple[list[tuple[Fraction, ...]], list[tuple[Fraction, ...]]]:
    """(Xi(lam), Xi+(lam)): maximal resp. all dual vertices with xi.lam = 1.

    Exact equality filtering; pass ``tol`` > 0 only for irrational float
    rates, in which case membership is approximate by construction.
    """
    lam = fraction_vector(lam)

    def loaded(xi) -> bool:
        v = sum(a * b for a, b in zip(xi, lam))
        if tol == 0.0:
            return v == 1
        return abs(float(v) - 1.0) <= tol

    clvr = [xi for xi in vrs.maximal if loaded(xi)]
    clvr_plus = [xi for xi in vrs.vertices if loaded(xi)]
    return clvr, clvr_plus


def complete_loading_check(
    model: NetworkModel, lam, vrs: VirtualResourceSet
) -> tuple[bool, Optional[list[Fraction]]]:
    """Is 1/(max_pi 1.pi) in the convex hull of Xi(lam)?

    Returns (True, convex weights over Xi(lam) in canonical vertex order)
    or (False, None). Exact LP feasibility over rationals.
    """
    clvr, _ = critically_loaded(model, lam, vrs)
    if not clvr:
        return False, None
    n = model.n_queues
    denom = max(sum(fraction_vector(pi)) for pi in model.schedules.as_array)
    target = [Fraction(1) / denom] * n
    k = len(clvr)
    a_eq = [[clvr[j][q] for j in range(k)] for q in range(n)]
    a_eq.append([Fraction(1)] * k)
    b_eq = target + [Fraction(1)]
    res = solve_lp([Fraction(0)] * k, a_eq=a_eq, b_eq=b_eq)
    if res.status != "optimal":
        return False, None
    return True, res.x


def hull_membership(model: NetworkModel, sigma, dominated: bool = False) -> bool:
    """Exact membership of sigma in the convex hull of the schedule set.

    With ``dominated=True``, tests sigma <= some hull point componentwise
    instead (the admissible-region predicate).
    """
    pis = _schedule_rows(model)
    sigma = fraction_vector(sigma)
    n, ns = model.n_queues, len(pis)
    if dominated:
        # sum a_pi pi >= sigma, sum a = 1, a >= 0
        a_ub = [[-pis[s][q] for s in range(ns)] for q in range(n)]
        b_ub = [-sigma[q] for q in range(n)]
        res = solve_lp(
            [Fraction(0)] * ns,
            a_ub=a_ub,
            b_ub=b_ub,
            a_eq=[[Fraction(1)] * ns],
            b_eq=[Fraction(1)],
        )
    else:
        a_eq = [[pis[s][q] for s in range(ns)] for q in range(n)]
        a_eq.append([Fraction(1)] * ns)
        b_eq = list(sigma) + [Fraction(1)]
        res = solve_lp([Fraction(0)] * ns, a_eq=a_eq, b_eq=b_eq)
    return res.status == "optimal"
