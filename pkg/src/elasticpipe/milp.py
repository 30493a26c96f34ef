"""Exact solver for small bounded-integer linear minimization problems.

Problems have the form ``min c @ x`` s.t. ``A x <= b``, ``0 <= x <= ub``,
``x`` integer.  :func:`solve` is best-bound branch-and-bound over a dense
bounded-variable simplex relaxation; :func:`brute_force` enumerates every
point and serves as the test oracle.  Both accept a point when every
constraint holds within ``1e-7`` times the constraint's Euclidean norm.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels

FEAS_TOL = 1e-7
INT_TOL = 1e-9
BRUTE_FORCE_LIMIT = 10 ** 7


class Infeasible(Exception):
    """No point (integer, or continuous for relaxations) satisfies the constraints."""


Constraint = Tuple[Dict[int, float], float]


@dataclass(frozen=True)
class MilpInstance:
    num_vars: int
    var_upper_bounds: Tuple[int, ...]
    constraints: Tuple[Constraint, ...]
    # Minimize sum(objective[j] * x[j]); unit weights when None.
    objective: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "var_upper_bounds", tuple(int(u) for u in self.var_upper_bounds))
        object.__setattr__(self, "constraints",
                           tuple((dict(coef), float(rhs)) for coef, rhs in self.constraints))
        if len(self.var_upper_bounds) != self.num_vars:
            raise ValueError("one upper bound per variable required")
        if any(u < 0 for u in self.var_upper_bounds):
            raise ValueError("upper bounds must be >= 0")
        for coef, _ in self.constraints:
            for j in coef:
                if not 0 <= j < self.num_vars:
                    raise ValueError(f"constraint references undeclared variable {j}")
        if self.objective is not None:
            object.__setattr__(self, "objective", tuple(float(w) for w in self.objective))
            if len(self.objective) != self.num_vars:
                raise ValueError("one objective weight per variable required")

    def weights(self) -> np.ndarray:
        if self.objective is None:
            return np.ones(self.num_vars)
        return np.asarray(self.objective, dtype=float)


@dataclass(frozen=True)
class Assignment:
    values: Tuple[int, ...]
    objective: float
    # False when a node limit stopped the search; ``bound`` then holds the
    # best remaining lower bound.
    optimal: bool = True
    bound: Optional[float] = None


@dataclass
class _Dense:
    A: np.ndarray    # rows scaled to unit max-abs coefficient
    b: np.ndarray
    tol: np.ndarray
    ub: np.ndarray
    c: np.ndarray


def _dense(inst: MilpInstance) -> _Dense:
    n = inst.num_vars
    rows, rhs = [], []
    for coef, r in inst.constraints:
        row = np.zeros(n)
        for j, v in coef.items():
            row[j] += v
        scale = np.abs(row).max() if n else 0.0
        if scale == 0.0:
            if r < -FEAS_TOL:
                raise Infeasible("constraint 0 <= rhs violated")
            continue
        rows.append(row / scale)
        rhs.append(r / scale)
    A = np.array(rows).reshape(len(rows), n)
    b = np.array(rhs, dtype=float)
    tol = FEAS_TOL * np.linalg.norm(A, axis=1) if len(rows) else np.zeros(0)
    return _Dense(A, b, tol, np.asarray(inst.var_upper_bounds, dtype=np.int64), inst.weights())


def is_feasible(inst: MilpInstance, values: Sequence[int]) -> bool:
    """Tolerance-guarded constraint check used by both solvers."""
    x = np.asarray(values, dtype=float)
    if len(x) != inst.num_vars:
        return False
    if np.any(x < 0) or np.any(x > np.asarray(inst.var_upper_bounds)):
        return False
    try:
        d = _dense(inst)
    except Infeasible:
        return False
    return bool(np.all(d.A @ x <= d.b + d.tol))


def brute_force(inst: MilpInstance) -> Assignment:
    """Enumerate every integer point in the box; ground truth for small instances."""
    size = math.prod(u + 1 for u in inst.var_upper_bounds)
    if size > BRUTE_FORCE_LIMIT:
        raise ValueError(f"search space {size} exceeds {BRUTE_FORCE_LIMIT}")
    d = _dense(inst)
    found, x, obj = kernels.brute_force_search(d.A, d.b, d.ub, d.c, d.tol)
    if not found:
        raise Infeasible("no integer point satisfies the constraints")
    return Assignment(tuple(int(v) for v in x), float(obj))


def _presolve(d: _Dense, lo: np.ndarray, hi: np.ndarray, rounds: int = 20):
    """Integer bound tightening; returns (lo, hi, kept row mask) or raises Infeasible."""
    A, b = d.A, d.b + d.tol
    keep = np.ones(len(b), dtype=bool)
    pos, neg = np.maximum(A, 0.0), np.minimum(A, 0.0)
    for _ in range(rounds):
        changed = False
        min_act = pos @ lo + neg @ hi
        max_act = pos @ hi + neg @ lo
        if np.any(min_act > b + 1e-12):
            raise Infeasible("a constraint is violated at every point of the box")
        keep &= ~(max_act <= b)
        for i in np.flatnonzero(keep):
            slack = b[i] - min_act[i]
            for j in np.flatnonzero(A[i]):
                a = A[i, j]
                if a > 0:
                    new = lo[j] + math.floor(slack / a + INT_TOL)
                    if new < hi[j]:
                        hi[j] = new
                        changed = True
                else:
                    new = hi[j] - math.floor(slack / -a + INT_TOL)
                    if new > lo[j]:
                        lo[j] = new
                        changed = True
            if np.any(lo > hi):
                raise Infeasible("bound tightening emptied a variable domain")
            if changed:
                break
        if not changed:
            break
    return lo, hi, keep


@dataclass
class _Basis:
    """Final simplex basis of a node, enough to rebuild its tableau."""
    basis: np.ndarray
    at_upper: np.ndarray
    tableau: Optional[np.ndarray] = None
    reduced: Optional[np.ndarray] = None


class _Relaxation:
    """LP relaxations of ``min c @ x, A x <= b`` over varying integer boxes."""

    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray):
        m, n = A.shape
        self.m, self.n, self.c = m, n, c.astype(float)
        self.M = np.hstack([A, np.eye(m), b.reshape(m, 1)])
        self.cost = np.concatenate([self.c, np.zeros(m)])
        self.max_iter = 50 * (m + n) + 1000

    def start(self) -> _Basis:
        at_upper = np.zeros(self.n + self.m, dtype=bool)
        at_upper[:self.n] = self.c < 0
        return _Basis(np.arange(self.n, self.n + self.m), at_upper)

    def _tableau(self, start: _Basis):
        if start.tableau is not None:
            return start.tableau.copy(), start.reduced.copy()
        if self.m == 0:
            return self.M.copy(), self.cost.copy()
        T = np.linalg.solve(self.M[:, start.basis], self.M)
        d = self.cost - self.cost[start.basis] @ T[:, :-1]
        d[start.basis] = 0.0
        # clear round-off that would break dual feasibility
        d = np.where(start.at_upper, np.minimum(d, 0.0), np.maximum(d, 0.0))
        return T, d

    def solve(self, start: _Basis, lo: np.ndarray, hi: np.ndarray):
        """``(objective, x, reduced_costs, basis)`` or None when infeasible."""
        T, d = self._tableau(start)
        basis, at_upper = start.basis.copy(), start.at_upper.copy()
        status = kernels.dual_simplex(T, basis, at_upper, d, lo.astype(float), hi.astype(float),
                                      self.max_iter)
        if status == kernels.LP_INFEASIBLE:
            return None
        if status != kernels.LP_OPTIMAL:
            raise RuntimeError(f"simplex failed with status {status}")
        ncol = self.n + self.m
        val = np.zeros(ncol)
        val[:self.n] = np.where(at_upper[:self.n], hi, lo)
        val[basis] = 0.0
        val[basis] = T[:, -1] - T[:, :-1] @ val
        x = np.clip(val[:self.n], lo, hi)
        return float(self.c @ x), x, d[:self.n].copy(), _Basis(basis, at_upper, T, d)


def lp_relax(inst: MilpInstance) -> float:
    """Optimal value of the continuous relaxation (a lower bound on :func:`solve`)."""
    d = _dense(inst)
    rel = _Relaxation(d.A, d.b, d.c)
    res = rel.solve(rel.start(), np.zeros(inst.num_vars), d.ub.astype(float))
    if res is None:
        raise Infeasible("the continuous relaxation is empty")
    return res[0]


def _descend(xi: np.ndarray, slack: np.ndarray, A: np.ndarray, c: np.ndarray,
             lo: np.ndarray) -> None:
    """Lower positive-cost variables one step at a time while every row stays satisfied."""
    improved = True
    order = np.argsort(-c, kind="stable")
    while improved:
        improved = False
        for j in order:
            if c[j] <= 0:
                break
            while xi[j] > lo[j] and np.all(slack + A[:, j] >= 0):
                xi[j] -= 1
                slack += A[:, j]
                improved = True


def _repair(x: np.ndarray, A: np.ndarray, b: np.ndarray, c: np.ndarray, lo: np.ndarray,
            hi: np.ndarray) -> Optional[np.ndarray]:
    """Integer point near the LP solution: round down, fix violated rows greedily, then descend."""
    xi = np.clip(np.floor(x + INT_TOL), lo, hi).astype(np.int64)
    slack = b - A @ xi
    for _ in range(int((hi - lo).sum()) + 1):
        bad = np.flatnonzero(slack < 0)
        if bad.size == 0:
            break
        row = A[bad[np.argmin(slack[bad])]]
        # the move that helps this row most per unit of cost
        gain_up = np.where(xi < hi, -row, 0.0)
        gain_dn = np.where(xi > lo, row, 0.0)
        w = np.maximum(np.abs(c), 1e-9)
        up, dn = gain_up / w, gain_dn / w
        if max(up.max(), dn.max()) <= 0:
            return None
        if up.max() >= dn.max():
            j = int(np.argmax(up))
            xi[j] += 1
            slack -= A[:, j]
        else:
            j = int(np.argmax(dn))
            xi[j] -= 1
            slack += A[:, j]
    if np.any(slack < 0):
        return None
    _descend(xi, slack, A, c, lo)
    return xi


# Open nodes beyond this count drop their cached tableau and refactor when popped.
TABLEAU_CACHE_NODES = 2000


def solve(inst: MilpInstance, node_limit: Optional[int] = None) -> Assignment:
    """Provably optimal integer assignment by best-bound branch-and-bound.

    Branches on the most fractional variable (ties to the lowest index).  A
    rounding heuristic supplies incumbents and reduced costs tighten variable
    bounds against the incumbent; neither affects which optimum value is found.
    With ``node_limit`` the search stops after that many nodes and returns the
    incumbent with ``optimal=False`` (deterministically, since nothing depends
    on wall-clock time).
    """
    n = inst.num_vars
    d = _dense(inst)
    if n == 0:
        return Assignment((), 0.0)
    integral_obj = bool(np.all(d.c == np.round(d.c)))
    lo0, hi0, keep = _presolve(d, np.zeros(n, dtype=np.int64), d.ub.copy())
    A, b, c = d.A[keep], (d.b + d.tol)[keep], d.c
    # variables left in no constraint sit at their cheapest bound
    free = ~np.any(A != 0.0, axis=0) if A.shape[0] else np.ones(n, dtype=bool)
    hi0[free & (c >= 0)] = lo0[free & (c >= 0)]
    lo0[free & (c < 0)] = hi0[free & (c < 0)]

    best_x: Optional[np.ndarray] = None
    best_obj = math.inf
    # a node must beat the incumbent by this much to be worth exploring
    step = 1.0 - 1e-9 if integral_obj else 1e-9

    def offer(xi: Optional[np.ndarray]) -> None:
        nonlocal best_x, best_obj
        if xi is None:
            return
        obj = float(c @ xi)
        if obj < best_obj - 1e-12 and np.all(A @ xi <= b):
            best_obj, best_x = obj, xi.copy()

    def fix_by_reduced_cost(z, x, red, lo, hi):
        if math.isinf(best_obj):
            return lo, hi
        room = best_obj - step - z
        lo, hi = lo.copy(), hi.copy()
        at_lo = (np.abs(x - lo) <= INT_TOL) & (red > 1e-9)
        at_hi = (np.abs(x - hi) <= INT_TOL) & (red < -1e-9)
        if np.any(at_lo):
            cap = lo[at_lo] + np.floor(room / red[at_lo] + 1e-9).astype(np.int64)
            hi[at_lo] = np.minimum(hi[at_lo], np.maximum(cap, lo[at_lo]))
        if np.any(at_hi):
            cap = hi[at_hi] - np.floor(room / -red[at_hi] + 1e-9).astype(np.int64)
            lo[at_hi] = np.maximum(lo[at_hi], np.minimum(cap, hi[at_hi]))
        return lo, hi

    def key(z: float) -> float:
        return math.ceil(z - 1e-9) if integral_obj else z

    rel = _Relaxation(A, b, c)
    root = rel.solve(rel.start(), lo0, hi0)
    if root is None:
        raise Infeasible("the continuous relaxation is empty")
    offer(np.where(c >= 0, hi0, lo0))
    offer(_repair(root[1], A, b, c, lo0, hi0))
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, Tuple]] = []
    counter = 0
    heapq.heappush(heap, (key(root[0]), counter, lo0, hi0, root))
    nodes = 0
    while heap:
        bound, _, lo, hi, (z, x, red, start) = heapq.heappop(heap)
        if bound > best_obj - step:
            break
        nodes += 1
        if node_limit is not None and nodes > node_limit and best_x is not None:
            return Assignment(tuple(int(v) for v in best_x), best_obj, optimal=False,
                              bound=float(bound))
        frac = np.abs(x - np.round(x))
        if frac.max() <= INT_TOL:
            offer(np.round(x).astype(np.int64))
            continue
        lo, hi = fix_by_reduced_cost(z, x, red, lo, hi)
        j = int(np.argmin(np.abs(frac - 0.5) + (frac <= INT_TOL) * 10.0))
        down_hi, up_lo = hi.copy(), lo.copy()
        down_hi[j] = math.floor(x[j])
        up_lo[j] = math.ceil(x[j])
        for child_lo, child_hi in ((lo, down_hi), (up_lo, hi)):
            if np.any(child_lo > child_hi):
                continue
            res = rel.solve(start, child_lo, child_hi)
            if res is None or key(res[0]) > best_obj - step:
                continue
            offer(_repair(res[1], A, b, c, child_lo, child_hi))
            if key(res[0]) > best_obj - step:
                continue
            if len(heap) >= TABLEAU_CACHE_NODES:
                res = res[:3] + (_Basis(res[3].basis, res[3].at_upper),)
            counter += 1
            heapq.heappush(heap, (key(res[0]), counter, child_lo, child_hi, res))
    if best_x is None:
        raise Infeasible("no integer point satisfies the constraints")
    return Assignment(tuple(int(v) for v in best_x), best_obj)


def dump(inst: MilpInstance) -> str:
    """Plain-text rendering: bounds, objective, then one ``<=`` row per constraint."""
    w = inst.weights()
    lines = [f"vars {inst.num_vars}"]
    lines += [f"bound x{j} 0 {u}" for j, u in enumerate(inst.var_upper_bounds)]
    lines.append("minimize " + " ".join(f"{float(w[j])!r}*x{j}" for j in range(inst.num_vars)))
    for i, (coef, rhs) in enumerate(inst.constraints):
        terms = " ".join(f"{float(v)!r}*x{j}" for j, v in sorted(coef.items()))
        lines.append(f"c{i}: {terms} <= {float(rhs)!r}")
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> MilpInstance:
    num_vars, bounds, weights, cons = 0, {}, None, []

    def terms(tokens):
        out = {}
        for t in tokens:
            v, name = t.split("*x")
            out[int(name)] = float(v)
        return out

    for line in text.splitlines():
        if not line.strip():
            continue
        head, _, rest = line.partition(" ")
        if head == "vars":
            num_vars = int(rest)
        elif head == "bound":
            name, _, ub = rest.split()
            bounds[int(name[1:])] = int(ub)
        elif head == "minimize":
            w = terms(rest.split())
            weights = tuple(w.get(j, 0.0) for j in range(num_vars))
        else:
            lhs, rhs = rest.rsplit(" <= ", 1)
            cons.append((terms(lhs.split()), float(rhs)))
    return MilpInstance(num_vars, tuple(bounds[j] for j in range(num_vars)), tuple(cons), weights)
