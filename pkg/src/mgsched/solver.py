"""Embedded desk-scale optimizer.

Branch-and-bound on binaries with lazy outer-approximation cuts for
rotated-cone rows, plus an exhaustive-enumeration oracle used in tests.
Node relaxations are solved with scipy's HiGHS LP backend; the integer
search, cone separation and the enumeration oracle live here.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .milp_core import LinExpr, Model

FEAS_TOL = 1e-7
GAP_TOL = 1e-6
INT_TOL = 1e-6


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | gap_limit | iteration_limit
    objective: float | None
    x: np.ndarray | None
    gap: float = math.inf
    node_count: int = 0
    cut_count: int = 0
    feas_tol: float = FEAS_TOL
    gap_tol: float = GAP_TOL

    def value(self, var: int) -> float:
        return float(self.x[var])


@dataclass
class _Cut:
    """Linear inequality sum(coeffs) <= rhs, globally valid for one cone."""

    coeffs: dict[int, float]
    rhs: float
    cone: int = -1
    norm: float = 1.0


class _LpData:
    """Constraint matrices built once per model; bounds vary per node."""

    def __init__(self, model: Model):
        n = len(model.variables)
        self.n = n
        self.sense = model.objective.sense
        self.c = np.zeros(n)
        for v, coef in model.objective.coeffs.items():
            self.c[v] = coef if self.sense == "min" else -coef
        self.obj_const = model.objective.const

        rows_ub, rhs_ub, rows_eq, rhs_eq = [], [], [], []
        for con in model.linear:
            items = list(con.coeffs.items())
            if con.sense == "==":
                rows_eq.append(items)
                rhs_eq.append(con.rhs)
            elif con.sense == "<=":
                rows_ub.append(items)
                rhs_ub.append(con.rhs)
            else:
                rows_ub.append([(v, -c) for v, c in items])
                rhs_ub.append(-con.rhs)
        self.base_ub = self._matrix(rows_ub)
        self.b_ub = np.array(rhs_ub)
        self.a_eq = self._matrix(rows_eq)
        self.b_eq = np.array(rhs_eq)
        self.bounds = [(v.lb, v.ub) for v in model.variables]
        # incremental cache of the cut-row matrix (cuts lists are append-only)
        self._cut_key = None
        self._cut_len = 0
        self._cut_mat = None
        self._cut_rhs = None

    def _matrix(self, rows):
        if not rows:
            return None
        data, ri, ci = [], [], []
        for i, items in enumerate(rows):
            for v, c in items:
                ri.append(i)
                ci.append(v)
                data.append(c)
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n))

    def _cut_matrix(self, cuts: list[_Cut]):
        if self._cut_key != id(cuts) or self._cut_len > len(cuts):
            self._cut_key = id(cuts)
            self._cut_len = 0
            self._cut_mat = None
            self._cut_rhs = None
        if self._cut_len < len(cuts):
            fresh = cuts[self._cut_len:]
            mat = self._matrix([list(c.coeffs.items()) for c in fresh])
            rhs = np.array([c.rhs for c in fresh])
            if self._cut_mat is None:
                self._cut_mat, self._cut_rhs = mat, rhs
            else:
                self._cut_mat = sparse.vstack([self._cut_mat, mat], format="csr")
                self._cut_rhs = np.concatenate([self._cut_rhs, rhs])
            self._cut_len = len(cuts)
        return self._cut_mat, self._cut_rhs

    def solve(self, cuts: list[_Cut], overrides: dict[int, tuple[float, float]]):
        a_ub, b_ub = self.base_ub, self.b_ub
        if cuts:
            cut_mat, cut_rhs = self._cut_matrix(cuts)
            if a_ub is None:
                a_ub, b_ub = cut_mat, cut_rhs
            else:
                a_ub = sparse.vstack([a_ub, cut_mat], format="csr")
                b_ub = np.concatenate([b_ub, cut_rhs])
        bounds = list(self.bounds)
        for v, bb in overrides.items():
            bounds[v] = bb
        res = linprog(self.c, A_ub=a_ub, b_ub=b_ub, A_eq=self.a_eq,
                      b_eq=self.b_eq, bounds=bounds, method="highs",
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-9})
        return res


class _CutPool(list):
    """Append-only cut store with per-cone parallel-cut deduplication.

    A candidate parallel to an existing cut of the same cone and no
    deeper cannot cut off any point the existing cut admits, so it is
    dropped; this keeps node LPs from accumulating redundant rows.
    """

    def __init__(self):
        super().__init__()
        self.by_cone: dict[int, list[_Cut]] = {}

    def admit(self, cut: _Cut, cone_id: int) -> bool:
        cut.cone = cone_id
        cut.norm = math.sqrt(sum(c * c for c in cut.coeffs.values())) or 1.0
        peers = self.by_cone.setdefault(cone_id, [])
        for old in peers:
            dot = sum(c * old.coeffs.get(v, 0.0)
                      for v, c in cut.coeffs.items())
            if (dot >= (1.0 - 1e-9) * cut.norm * old.norm
                    and cut.rhs / cut.norm >= old.rhs / old.norm - 1e-12):
                return False
        peers.append(cut)
        self.append(cut)
        return True


def _cone_cut(cone, x) -> _Cut | None:
    """Supporting hyperplane of ||(2w, u-v)|| <= u+v at (the projection of) x."""
    uval, vval = cone.u.value(x), cone.v.value(x)
    wvals = [w.value(x) for w in cone.ws]
    s = math.sqrt(4.0 * sum(w * w for w in wvals) + (uval - vval) ** 2)
    if s < 1e-12:
        return None
    gu = (uval - vval) / s - 1.0
    gv = -(uval - vval) / s - 1.0
    gws = [4.0 * w / s for w in wvals]
    grad = LinExpr()
    for g, e in zip([gu, gv, *gws], [cone.u, cone.v, *cone.ws]):
        for vid, c in e.coeffs.items():
            grad.add(vid, g * c)
    # g(x_hat) + grad . (x - x_hat) <= 0  =>  grad . x <= grad . x_hat - g(x_hat)
    gval = s - (uval + vval)
    rhs = sum(c * x[vid] for vid, c in grad.coeffs.items()) - gval
    return _Cut(dict(grad.coeffs), rhs)


def _separate(model: Model, x, cuts: list[_Cut], tol: float) -> tuple[int, float]:
    """Append cuts for all violated cones; returns (#added, worst violation)."""
    added, worst = 0, 0.0
    for ci, cone in enumerate(model.cones):
        viol = cone.violation(x)
        worst = max(worst, viol)
        if viol > tol:
            cut = _cone_cut(cone, x)
            if cut is None:
                continue
            if isinstance(cuts, _CutPool):
                added += cuts.admit(cut, ci)
            else:
                cuts.append(cut)
                added += 1
    return added, worst


def solve_lp(model: Model, cuts: list[_Cut] | None = None,
             overrides: dict[int, tuple[float, float]] | None = None) -> SolveResult:
    """Solve the continuous relaxation (binaries relaxed to [0, 1]).

    Cone rows are ignored unless cuts for them are passed in.
    """
    data = _LpData(model)
    res = data.solve(cuts or [], overrides or {})
    if res.status == 2:
        return SolveResult("infeasible", None, None)
    if res.status == 3:
        return SolveResult("unbounded", None, None)
    if res.status != 0:
        return SolveResult("iteration_limit", None, None)
    obj = res.fun + data.obj_const if data.sense == "min" else -res.fun + data.obj_const
    return SolveResult("optimal", obj, res.x, gap=0.0)


def _saturate(data: _LpData, model: Model, cuts: list[_Cut],
              overrides, tol: float, max_rounds: int = 60):
    """Re-solve an LP, adding cone cuts until violation <= tol.

    Stops early when the worst violation stalls (the LP engine cannot
    honor cuts any tighter than its own feasibility tolerance).
    """
    prev_worst = math.inf
    stalled = 0
    for _ in range(max_rounds):
        res = data.solve(cuts, overrides)
        if res.status != 0:
            return res, math.inf
        added, worst = _separate(model, res.x, cuts, tol)
        if added == 0:
            return res, worst
        # a single flat round is common (the LP hops to another facet of
        # the same cone); only a sustained stall means the engine cannot
        # honor the cuts any tighter
        if worst > prev_worst * 0.9:
            stalled += 1
            if stalled >= 3:
                return res, worst
        else:
            stalled = 0
        prev_worst = min(prev_worst, worst)
    return res, worst


def _dive(data: _LpData, model: Model, cuts: list[_Cut], overrides,
          binaries, feas_tol: float, start=None):
    """Primal rounding dive from an LP point; returns (obj, x) or None.

    Bulk-fixes every near-integral binary to its rounded value, then fixes
    the single most fractional one, re-solving (with cone saturation)
    after each round; one flip is attempted when a fix turns infeasible.
    Cuts generated along the way stay globally valid.
    """
    ov = dict(overrides)
    if start is not None:
        res_x, worst = start
    else:
        res, worst = _saturate(data, model, cuts, ov, feas_tol)
        if res.status != 0:
            return None
        res_x = res.x
    for _ in range(len(binaries) + 1):
        frac = [(abs(res_x[b] - round(res_x[b])), b) for b in binaries]
        frac = [(f, b) for f, b in frac if f > INT_TOL]
        if not frac:
            if worst <= max(feas_tol, 1e-5):
                # objective of the current LP point
                obj = float(data.c @ res_x)
                return obj, res_x.copy()
            res, worst = _saturate(data, model, cuts, ov, feas_tol,
                                   max_rounds=200)
            if res.status == 0 and worst <= max(feas_tol, 1e-5):
                return float(data.c @ res.x), res.x.copy()
            return None
        near = [(f, b) for f, b in frac if f < 0.01]
        targets = near if near else [min(frac)]
        for _, b in targets:
            v = float(round(res_x[b]))
            ov[b] = (v, v)
        res, worst = _saturate(data, model, cuts, ov, feas_tol)
        if res.status != 0 and len(targets) == 1:
            b = targets[0][1]
            v = 1.0 - ov[b][0]
            ov[b] = (v, v)
            res, worst = _saturate(data, model, cuts, ov, feas_tol)
        if res.status != 0:
            return None
        res_x = res.x
    return None


def _propagate_binaries(model: Model, binaries) -> dict[int, tuple[float, float]] | None:
    """Fix binaries forced by single-row bound propagation.

    Iterates the linear rows to a fixpoint; returns bound overrides, or
    None when a row is proven unsatisfiable. Sound for the whole tree
    since only original constraints are used.
    """
    lb = {v.id: v.lb for v in model.variables}
    ub = {v.id: v.ub for v in model.variables}
    bins = set(binaries)
    fixed: dict[int, tuple[float, float]] = {}
    for _ in range(20):
        changed = False
        for con in model.linear:
            items = con.coeffs.items()
            lo = sum(c * (lb[v] if c > 0 else ub[v]) for v, c in items)
            hi = sum(c * (ub[v] if c > 0 else lb[v]) for v, c in items)
            if con.sense in ("<=", "==") and lo > con.rhs + 1e-9:
                return None
            if con.sense in (">=", "==") and hi < con.rhs - 1e-9:
                return None
            for v, c in items:
                if v not in bins or lb[v] == ub[v]:
                    continue
                # activity with v at each bound, others at their slackest
                if con.sense in ("<=", "=="):
                    base = lo - (c * (lb[v] if c > 0 else ub[v]))
                    if base + c > con.rhs + 1e-9:  # v = 1 impossible
                        ub[v] = 0.0
                        fixed[v] = (0.0, 0.0)
                        changed = True
                    elif base > con.rhs + 1e-9:  # v = 0 impossible
                        lb[v] = 1.0
                        fixed[v] = (1.0, 1.0)
                        changed = True
                if con.sense in (">=", "==") and lb[v] != ub[v]:
                    base = hi - (c * (ub[v] if c > 0 else lb[v]))
                    if base + c < con.rhs - 1e-9:  # v = 1 impossible
                        ub[v] = 0.0
                        fixed[v] = (0.0, 0.0)
                        changed = True
                    elif base < con.rhs - 1e-9:  # v = 0 impossible
                        lb[v] = 1.0
                        fixed[v] = (1.0, 1.0)
                        changed = True
        if not changed:
            break
    return fixed


def check_feasible(model: Model, x, feas_tol: float = 1e-6) -> bool:
    """True when x satisfies bounds, integrality, rows and cones."""
    for v in model.variables:
        xv = x[v.id]
        if xv < v.lb - feas_tol or xv > v.ub + feas_tol:
            return False
        if v.kind == "binary" and abs(xv - round(xv)) > 1e-6:
            return False
    for con in model.linear:
        act = sum(c * x[v] for v, c in con.coeffs.items())
        if con.sense == "<=" and act > con.rhs + feas_tol:
            return False
        if con.sense == ">=" and act < con.rhs - feas_tol:
            return False
        if con.sense == "==" and abs(act - con.rhs) > feas_tol:
            return False
    for cone in model.cones:
        if cone.violation(x) > max(feas_tol, 1e-5):
            return False
    return True


def solve_mip(model: Model, gap_tol: float = GAP_TOL, feas_tol: float = FEAS_TOL,
              time_limit: float | None = None, node_limit: int | None = None,
              warm=None, log=None) -> SolveResult:
    """Best-first branch-and-bound with most-fractional branching.

    Violated cone constraints are separated by supporting-hyperplane cuts
    (globally valid, shared across nodes); integer-feasible points are
    accepted only once their worst cone violation is <= feas_tol. A
    rounding dive at the root (and periodically while the gap is open)
    supplies early incumbents so the plateau of equal-bound nodes prunes.
    """
    data = _LpData(model)
    binaries = model.binary_ids
    # binaries with objective weight move the node bound when branched;
    # the rest (service roles, change flags) are plateau variables best
    # resolved by dive completion instead of branching
    obj_binaries = [b for b in binaries if data.c[b] != 0.0]
    root_fixed = _propagate_binaries(model, binaries)
    if root_fixed is None:
        return SolveResult("infeasible", None, None, gap_tol=gap_tol,
                           feas_tol=feas_tol)
    if log and root_fixed:
        log.write(f"presolve fixed {len(root_fixed)} of "
                  f"{len(binaries)} binaries\n")
    cuts: list[_Cut] = _CutPool()
    incumbent = None
    incumbent_obj = math.inf  # in minimization space
    if warm is not None:
        cands = warm if isinstance(warm, (list, tuple)) else [warm]
        for cand in cands:
            if cand is None:
                continue
            wx = np.asarray(cand, dtype=float)
            if len(wx) != data.n or not check_feasible(model, wx, max(feas_tol, 1e-5)):
                continue
            obj_w = float(data.c @ wx)
            if obj_w < incumbent_obj:
                incumbent = wx.copy()
                incumbent_obj = obj_w
                if log:
                    log.write(f"warm incumbent {incumbent_obj + data.obj_const:.8g}\n")
    t0 = time.monotonic()
    nodes = 0
    counter = itertools.count()
    # pseudocosts: per-variable average LP-bound gain per unit of moved
    # fraction, learned from realized child bounds; guides branching once
    # observations exist, with most-fractional as the cold-start fallback
    pc: dict[tuple[int, int], tuple[float, int]] = {}

    def pc_update(bvar, direction, dist, gain):
        s, cnt = pc.get((bvar, direction), (0.0, 0))
        pc[(bvar, direction)] = (s + gain / max(dist, 1e-6), cnt + 1)

    def pc_avg(bvar, direction, fallback):
        s, cnt = pc.get((bvar, direction), (0.0, 0))
        return s / cnt if cnt else fallback

    heap: list = [(-math.inf, next(counter), dict(root_fixed), 0, None)]

    def out_of_budget():
        return (time_limit is not None and time.monotonic() - t0 > time_limit) or \
               (node_limit is not None and nodes >= node_limit)

    status = "optimal"
    while heap:
        bound, _, overrides, retries, origin = heapq.heappop(heap)
        if bound >= incumbent_obj - gap_tol * max(1.0, abs(incumbent_obj)):
            continue
        if out_of_budget():
            status = "iteration_limit"
            break
        nodes += 1
        res, worst = _saturate(data, model, cuts, overrides, feas_tol)
        if res.status == 3 and nodes == 1 and incumbent is None:
            return SolveResult("unbounded", None, None, node_count=nodes,
                               cut_count=len(cuts), gap_tol=gap_tol, feas_tol=feas_tol)
        if res.status != 0:
            continue
        node_obj = res.fun
        if origin is not None and math.isfinite(bound):
            bvar0, dir0, frac0 = origin
            dist0 = frac0 if dir0 == 0 else 1.0 - frac0
            pc_update(bvar0, dir0, dist0, max(0.0, node_obj - bound))
        prune_at = incumbent_obj - gap_tol * max(1.0, abs(incumbent_obj))
        if node_obj >= prune_at:
            continue
        frac = [(abs(res.x[b] - round(res.x[b])), b) for b in binaries]
        frac = [(f, b) for f, b in frac if f > INT_TOL]
        if not frac:
            if worst <= feas_tol or retries >= 8:
                if worst <= max(feas_tol, 1e-5):
                    incumbent_obj = node_obj
                    incumbent = res.x.copy()
                    if log:
                        log.write(f"node {nodes}: incumbent "
                                  f"{node_obj + data.obj_const:.8g} cuts {len(cuts)}\n")
            else:
                # cut loop not yet saturated; retry with the richer cut pool
                heapq.heappush(heap, (node_obj, next(counter), overrides,
                                      retries + 1, None))
            continue
        frac_obj = [(f, b) for f, b in frac if data.c[b] != 0.0]
        if nodes == 1 or not frac_obj or nodes % 64 == 0:
            dived = _dive(data, model, cuts, overrides, binaries, feas_tol,
                          start=(res.x, worst))
            if dived is not None:
                if dived[0] < incumbent_obj:
                    incumbent_obj, incumbent = dived[0], dived[1]
                    if log:
                        log.write(f"node {nodes}: dive incumbent "
                                  f"{incumbent_obj + data.obj_const:.8g}\n")
                if dived[0] <= node_obj + gap_tol * max(1.0, abs(node_obj)):
                    continue  # completion met the node bound: node solved
        cands = frac_obj if frac_obj else frac
        g_sum = sum(s for s, _ in pc.values())
        g_cnt = sum(c for _, c in pc.values())
        g_all = g_sum / g_cnt if g_cnt else 1.0
        best_score, bvar = -1.0, cands[0][1]
        for f, b in cands:
            fv = float(res.x[b])
            up = pc_avg(b, 1, g_all) * (1.0 - fv)
            dn = pc_avg(b, 0, g_all) * fv
            score = max(up, 1e-9) * max(dn, 1e-9)
            if score > best_score:
                best_score, bvar = score, b
        fv = float(res.x[bvar])
        for dirn, (lo, hi) in enumerate(((0.0, 0.0), (1.0, 1.0))):
            child = dict(overrides)
            child[bvar] = (lo, hi)
            heapq.heappush(heap, (node_obj, next(counter), child, 0,
                                  (bvar, dirn, fv)))
        if log and nodes % 100 == 0:
            best = min((h[0] for h in heap), default=node_obj)
            log.write(f"node {nodes}: bound {best + data.obj_const:.8g} "
                      f"incumbent {incumbent_obj + data.obj_const:.8g} "
                      f"open {len(heap)}\n")

    if incumbent is None:
        if status == "iteration_limit":
            return SolveResult("iteration_limit", None, None, node_count=nodes,
                               cut_count=len(cuts), gap_tol=gap_tol, feas_tol=feas_tol)
        return SolveResult("infeasible", None, None, node_count=nodes,
                           cut_count=len(cuts), gap_tol=gap_tol, feas_tol=feas_tol)

    # polish: re-solve the incumbent's leaf with every binary pinned and
    # the cut loop saturated hard, so the returned point honors the cones
    # to feas_tol instead of the looser acceptance tolerance used while
    # searching (downstream feasibility checks divide by small physical
    # coefficients and would amplify the slack otherwise)
    pinned = {b: (round(float(incumbent[b])),) * 2 for b in binaries}
    res, worst = _saturate(data, model, cuts, pinned, feas_tol,
                           max_rounds=200)
    if res.status == 0 and worst <= feas_tol:
        incumbent = res.x.copy()
        incumbent_obj = res.fun

    lower = min((h[0] for h in heap), default=incumbent_obj)
    gap = max(0.0, (incumbent_obj - lower) / max(1.0, abs(incumbent_obj)))
    obj = incumbent_obj + data.obj_const if data.sense == "min" else -incumbent_obj + data.obj_const
    final = status if status != "optimal" else ("optimal" if gap <= gap_tol else "gap_limit")
    return SolveResult(final, obj, incumbent, gap=gap, node_count=nodes,
                       cut_count=len(cuts), gap_tol=gap_tol, feas_tol=feas_tol)


def brute_force(model: Model, max_binaries: int = 20,
                feas_tol: float = FEAS_TOL) -> SolveResult:
    """Enumerate every binary assignment, solving a cut-saturated LP per leaf.

    Exact oracle for small models; guards against combinatorial blowup.
    """
    binaries = model.binary_ids
    if len(binaries) > max_binaries:
        raise ValueError(f"{len(binaries)} binaries exceeds the {max_binaries} guard")
    data = _LpData(model)
    cuts: list[_Cut] = _CutPool()
    best_obj = math.inf
    best_x = None
    leaves = 0
    for bits in itertools.product((0.0, 1.0), repeat=len(binaries)):
        leaves += 1
        overrides = {b: (v, v) for b, v in zip(binaries, bits)}
        res, worst = _saturate(data, model, cuts, overrides, feas_tol * 0.1,
                               max_rounds=200)
        if res.status != 0 or worst > feas_tol:
            continue
        if res.fun < best_obj:
            best_obj = res.fun
            best_x = res.x.copy()
    if best_x is None:
        return SolveResult("infeasible", None, None, node_count=leaves,
                           cut_count=len(cuts))
    obj = best_obj + data.obj_const if data.sense == "min" else -best_obj + data.obj_const
    return SolveResult("optimal", obj, best_x, gap=0.0, node_count=leaves,
                       cut_count=len(cuts))
