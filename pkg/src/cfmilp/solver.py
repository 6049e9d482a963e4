"""Exact MILP solving: two-phase dense simplex plus branch and bound.

The LP core is a primal simplex on the bounded-variable standard form
(min c'x, Ax {<=,=,>=} b, l <= x <= u): variable bounds are handled
implicitly through nonbasic at-lower/at-upper flags instead of explicit
rows, which keeps the dense tableau at (#constraints) x (#columns).  Free or
upper-bounded-only variables are transformed away up front (shift, mirror,
or split), every inequality gets a slack column, and rows without a natural
slack basis get a phase-1 artificial.  Entering variables follow Dantzig's
rule with a permanent switch to Bland's rule after a long run of degenerate
pivots, so the method cannot cycle; all tie-breaks are by lowest index,
making the whole solve a pure function of its input.

Branch and bound relaxes binaries to [0,1], selects nodes best-bound-first
(ties by creation order), branches on the most fractional binary within the
highest caller-assigned priority level (ties by lowest variable id), and
stops at a proven relative gap of 1e-6.  There is
no presolve beyond dropping rows that turn out linearly redundant in phase 1
and no cutting planes, so measured solve times track the constraint counts
of the formulation being solved.  Intended scale is desk-sized models, up to
roughly two-thousand variables and a few thousand rows.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

try:
    from scipy.linalg.blas import dger as _dger
except ImportError:                      # pragma: no cover
    _dger = None

from .milpcore import EvalResult, MilpModel, MilpSolution, evaluate


def _rank1_sub(t: np.ndarray, col: np.ndarray, row: np.ndarray) -> None:
    """t -= outer(col, row) without a temporary when BLAS dger is available.

    Requires t Fortran-ordered for the in-place path; row must be a copy,
    never a view into t.
    """
    if _dger is not None and t.flags.f_contiguous:
        _dger(-1.0, col, row, a=t, overwrite_a=1)
    else:                                # pragma: no cover
        t -= np.outer(col, row)


class SimplexError(RuntimeError):
    """Numerical failure inside the simplex (pivot cap, lost feasibility)."""


@dataclass
class SolverParams:
    time_limit_s: float = 1200.0
    rel_gap: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int | None = None
    seed: int = 0          # accepted for interface stability; the algorithm is deterministic


@dataclass
class LpResult:
    status: str                      # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None
    iterations: int


@dataclass
class _Std:
    """Model arrays extracted once; bound vectors vary per node."""

    c: np.ndarray
    const: float
    row_ids: list
    row_vals: list
    cmps: list
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binaries: np.ndarray


def _extract(model: MilpModel) -> _Std:
    n = model.n_vars
    c = np.zeros(n)
    for vid, coef in model.objective.items():
        c[vid] = coef
    row_ids, row_vals, cmps = [], [], []
    rhs = np.zeros(model.n_constraints)
    for i, con in enumerate(model.constraints):
        ids = np.fromiter((v for v, _ in con.coeffs), dtype=int, count=len(con.coeffs))
        vals = np.fromiter((cf for _, cf in con.coeffs), dtype=float, count=len(con.coeffs))
        row_ids.append(ids)
        row_vals.append(vals)
        cmps.append(con.cmp)
        rhs[i] = con.rhs
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])
    binaries = np.zeros(n, dtype=bool)
    for vid in model.binary_ids:
        binaries[vid] = True
    return _Std(c=c, const=model.objective_constant, row_ids=row_ids, row_vals=row_vals,
                cmps=cmps, rhs=rhs, lb=lb, ub=ub, binaries=binaries)


_EPS_RC = 1e-9          # reduced-cost threshold for entering candidates
_EPS_PIV = 1e-9         # smallest usable pivot magnitude
_EPS_FIX = 1e-12        # columns with upper bound below this never enter
_REFRESH = 512          # pivots between exact reduced-cost recomputations


class _Tableau:
    """Mutable simplex state over the transformed nonnegative variables."""

    def __init__(self, t, xb, basis, ubt, n_struct, n_art):
        self.t = t                    # (m, n_cols) dense tableau, B^-1 A
        self.xb = xb                  # (m,) current basic values
        self.basis = basis            # (m,) int, column basic in each row
        self.ubt = ubt                # (n_cols,) upper bounds, inf allowed
        self.at_upper = np.zeros(t.shape[1], dtype=bool)
        self.n_struct = n_struct      # structural columns precede slacks/artificials
        self.n_art = n_art
        self.iterations = 0

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, np.where(np.isfinite(self.ubt), self.ubt, 0.0), 0.0)
        x[self.basis] = self.xb
        return x

    def _reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.t

    def run(self, cost: np.ndarray, forbid_from: int | None = None) -> str:
        """Pivot until optimal or unbounded under ``cost``; returns the outcome.

        ``forbid_from`` excludes a trailing column block (the artificials in
        phase 2) from ever entering the basis.
        """
        m, n_cols = self.t.shape
        z = self._reduced_costs(cost)
        obj = float(cost @ self.values())
        bland = False
        stall = 0
        stall_limit = 3 * (m + n_cols) + 200
        cap = 100 * (m + n_cols) + 10000
        enterable = self.ubt > _EPS_FIX
        if forbid_from is not None:
            enterable[forbid_from:] = False

        since_refresh = 0
        while True:
            if self.iterations > cap:
                raise SimplexError("pivot cap exceeded")
            if since_refresh >= _REFRESH:
                z = self._reduced_costs(cost)
                obj = float(cost @ self.values())
                since_refresh = 0

            lower_ok = enterable & ~self.at_upper & (z < -_EPS_RC)
            upper_ok = enterable & self.at_upper & (z > _EPS_RC)
            lower_ok[self.basis] = False
            upper_ok[self.basis] = False
            any_cand = lower_ok | upper_ok
            if not any_cand.any():
                return "optimal"
            if bland:
                q = int(np.nonzero(any_cand)[0][0])
            else:
                score = np.where(lower_ok, -z, np.where(upper_ok, z, -np.inf))
                q = int(np.argmax(score))
            d = -1.0 if self.at_upper[q] else 1.0

            y = self.t[:, q]
            yd = d * y
            t_best = self.ubt[q] if math.isfinite(self.ubt[q]) else np.inf
            p = -1
            to_upper = False
            ub_b = self.ubt[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = yd > _EPS_PIV
                t_dec = np.where(dec, np.maximum(self.xb, 0.0) / np.where(dec, yd, 1.0), np.inf)
                inc = (yd < -_EPS_PIV) & np.isfinite(ub_b)
                t_inc = np.where(inc, (ub_b - self.xb) / np.where(inc, -yd, 1.0), np.inf)
            t_rows = np.minimum(t_dec, t_inc)
            if t_rows.size:
                rmin = float(t_rows.min())
            else:
                rmin = np.inf
            if rmin < t_best:
                # leaving row: among the minimal ratios pick the lowest basic id
                cand = np.nonzero(t_rows == rmin)[0]
                p = int(cand[np.argmin(self.basis[cand])])
                to_upper = t_inc[p] <= t_dec[p]
                step = rmin
            else:
                step = t_best
            if not math.isfinite(step):
                return "unbounded"

            self.iterations += 1
            since_refresh += 1
            delta_obj = float(z[q]) * d * step
            if delta_obj > -1e-12:
                stall += 1
                if stall > stall_limit:
                    bland = True
            else:
                stall = 0
            obj += delta_obj

            if p < 0:
                # bound flip: q jumps to its other bound, basis unchanged
                self.xb -= d * step * y
                self.at_upper[q] = ~self.at_upper[q]
                continue

            v_new = (self.ubt[q] if self.at_upper[q] else 0.0) + d * step
            leaving = int(self.basis[p])
            self.xb -= d * step * y
            self.xb[p] = v_new
            self.at_upper[leaving] = bool(to_upper)
            self.at_upper[q] = False
            piv = self.t[p, q]
            self.t[p, :] /= piv
            col = self.t[:, q].copy()
            col[p] = 0.0
            prow = self.t[p, :].copy()
            _rank1_sub(self.t, col, prow)
            zq = z[q]
            z = z - zq * prow
            z[q] = 0.0
            self.basis[p] = q


def _solve_arrays(std: _Std, lb: np.ndarray, ub: np.ndarray) -> LpResult:
    """Prep transforms + two-phase bounded simplex for one bound configuration."""
    n = std.c.size
    m = len(std.row_ids)

    # per-variable transform to a nonnegative column: (base, sign, col) or split
    col_of = np.full(n, -1, dtype=int)
    col_neg = np.full(n, -1, dtype=int)    # second column of a split variable
    base = np.zeros(n)
    sign = np.ones(n)
    n_t = 0
    for j in range(n):
        if math.isfinite(lb[j]):
            base[j] = lb[j]
            col_of[j] = n_t
            n_t += 1
        elif math.isfinite(ub[j]):
            base[j] = ub[j]
            sign[j] = -1.0
            col_of[j] = n_t
            n_t += 1
        else:
            col_of[j] = n_t
            col_neg[j] = n_t + 1
            n_t += 2

    ubt_struct = np.full(n_t, np.inf)
    for j in range(n):
        if math.isfinite(lb[j]):
            ubt_struct[col_of[j]] = ub[j] - lb[j]

    # adjusted rhs and row signs; decide slack/artificial layout
    rhs_adj = np.empty(m)
    neg = np.zeros(m, dtype=bool)
    slack_col = np.full(m, -1, dtype=int)
    slack_sign = np.zeros(m)
    art_col = np.full(m, -1, dtype=int)
    n_slack = 0
    for i in range(m):
        r = std.rhs[i] - float(base[std.row_ids[i]] @ std.row_vals[i])
        rhs_adj[i] = r
        if std.cmps[i] != "=":
            slack_col[i] = n_t + n_slack
            n_slack += 1
    n_art = 0
    art_start = n_t + n_slack
    for i in range(m):
        flip = rhs_adj[i] < 0.0
        neg[i] = flip
        if flip:
            rhs_adj[i] = -rhs_adj[i]
        if std.cmps[i] == "=":
            s = 0.0
        else:
            s = 1.0 if std.cmps[i] == "<=" else -1.0
            if flip:
                s = -s
            slack_sign[i] = s
        if s != 1.0:
            art_col[i] = art_start + n_art
            n_art += 1

    n_cols = art_start + n_art
    t = np.zeros((m, n_cols), order="F")
    basis = np.empty(m, dtype=int)
    for i in range(m):
        ids = std.row_ids[i]
        vals = std.row_vals[i] if not neg[i] else -std.row_vals[i]
        cols = col_of[ids]
        np.add.at(t, (np.full(ids.size, i), cols), sign[ids] * vals)
        splits = np.nonzero(col_neg[ids] >= 0)[0]
        for k in splits:
            t[i, col_neg[ids[k]]] = -vals[k]
        if slack_col[i] >= 0:
            t[i, slack_col[i]] = slack_sign[i]
        if art_col[i] >= 0:
            t[i, art_col[i]] = 1.0
            basis[i] = art_col[i]
        else:
            basis[i] = slack_col[i]

    ubt = np.concatenate([ubt_struct, np.full(n_slack + n_art, np.inf)])
    tab = _Tableau(t=t, xb=rhs_adj.copy(), basis=basis, ubt=ubt,
                   n_struct=n_t, n_art=n_art)

    feas_tol = 1e-8 * max(1.0, float(np.abs(rhs_adj).max()) if m else 1.0)
    if n_art > 0:
        cost1 = np.zeros(n_cols)
        cost1[art_start:] = 1.0
        out = tab.run(cost1)
        if out != "optimal":
            raise SimplexError("phase 1 reported unbounded")
        art_sum = float(cost1 @ tab.values())
        if art_sum > feas_tol:
            return LpResult(status="infeasible", x=None, objective=None,
                            iterations=tab.iterations)
        # drive artificials out of the basis; drop rows that are redundant
        drop = []
        for p in range(m):
            if tab.basis[p] < art_start:
                continue
            row = np.abs(tab.t[p, :art_start])
            q = int(np.argmax(row))
            if row[q] > 1e-7:
                piv = tab.t[p, q]
                tab.t[p, :] /= piv
                col = tab.t[:, q].copy()
                col[p] = 0.0
                _rank1_sub(tab.t, col, tab.t[p, :].copy())
                tab.basis[p] = q
                tab.xb[p] = tab.ubt[q] if tab.at_upper[q] else 0.0
                tab.at_upper[q] = False
            else:
                drop.append(p)
        if drop:
            keep = np.setdiff1d(np.arange(tab.t.shape[0]), drop)
            tab.t = np.asfortranarray(tab.t[keep])
            tab.xb = tab.xb[keep]
            tab.basis = tab.basis[keep]

    cost2 = np.zeros(n_cols)
    for j in range(n):
        cost2[col_of[j]] = sign[j] * std.c[j]
        if col_neg[j] >= 0:
            cost2[col_neg[j]] = -std.c[j]
    out = tab.run(cost2, forbid_from=art_start)
    if out == "unbounded":
        return LpResult(status="unbounded", x=None, objective=None,
                        iterations=tab.iterations)

    xt = tab.values()
    x = base + sign * xt[col_of]
    has_neg = col_neg >= 0
    if has_neg.any():
        x[has_neg] = xt[col_of[has_neg]] - xt[col_neg[has_neg]]
    obj = float(std.c @ x) + std.const
    return LpResult(status="optimal", x=x, objective=obj, iterations=tab.iterations)


def solve_lp(model: MilpModel, overrides: dict | None = None) -> LpResult:
    """Solve the LP relaxation (binaries become [0,1] continuous).

    ``overrides`` maps variable id to an (lb, ub) pair replacing the
    declared bounds, which is how branch-and-bound fixes binaries.
    """
    std = _extract(model)
    lb, ub = std.lb.copy(), std.ub.copy()
    for vid, (lo, hi) in (overrides or {}).items():
        lb[vid], ub[vid] = lo, hi
    return _solve_arrays(std, lb, ub)


def solve_milp(model: MilpModel, params: SolverParams | None = None,
               incumbent_hint=None, branch_priority: dict | None = None) -> MilpSolution:
    """Best-bound branch and bound over the LP relaxation.

    ``incumbent_hint`` may carry a full assignment (array or id->value map);
    it is accepted as the starting incumbent only if it passes evaluate().
    ``branch_priority`` maps variable id to an integer level; branching picks
    the most fractional binary within the highest fractional level, so callers
    can steer the search toward structurally decisive variables.
    Deterministic: identical inputs give identical node counts and solution.
    """
    params = params or SolverParams()
    t_start = time.perf_counter()
    std = _extract(model)
    bin_ids = np.nonzero(std.binaries)[0]
    prio = np.zeros(bin_ids.size)
    if branch_priority:
        for k, vid in enumerate(bin_ids):
            prio[k] = branch_priority.get(int(vid), 0)

    incumbent = None
    inc_obj = np.inf
    if incumbent_hint is not None:
        if isinstance(incumbent_hint, dict):
            hint = np.zeros(model.n_vars)
            for vid, v in incumbent_hint.items():
                hint[vid] = v
        else:
            hint = np.asarray(incumbent_hint, dtype=float)
        ev = evaluate(model, hint)
        if ev.feasible:
            incumbent = hint.copy()
            inc_obj = ev.objective

    def prune_eps():
        return 1e-9 * max(1.0, abs(inc_obj)) if np.isfinite(inc_obj) else 0.0

    nodes = 0
    lp_iters = 0
    next_id = 0
    heap = [(-np.inf, next_id, {})]          # (parent bound, id, {vid: (lb, ub)})
    timed_out = False
    hit_node_limit = False
    root_unbounded = False
    best_bound = -np.inf

    while heap:
        bound_est, _, fixes = heap[0]
        if np.isfinite(inc_obj):
            gap = (inc_obj - bound_est) / max(1.0, abs(inc_obj))
            if bound_est > -np.inf and gap <= params.rel_gap:
                best_bound = bound_est
                break
            if bound_est >= inc_obj - prune_eps():
                best_bound = bound_est
                break
        if time.perf_counter() - t_start > params.time_limit_s:
            timed_out = True
            best_bound = bound_est
            break
        if params.node_limit is not None and nodes >= params.node_limit:
            hit_node_limit = True
            best_bound = bound_est
            break
        heapq.heappop(heap)

        lb = std.lb.copy()
        ub = std.ub.copy()
        for vid, (lo, hi) in fixes.items():
            lb[vid], ub[vid] = lo, hi
        res = _solve_arrays(std, lb, ub)
        nodes += 1
        lp_iters += res.iterations
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            if nodes == 1:
                root_unbounded = True
                break
            raise SimplexError("child LP unbounded under restricted bounds")
        bound = res.objective
        if np.isfinite(inc_obj) and bound >= inc_obj - prune_eps():
            continue

        vals = res.x[bin_ids] if bin_ids.size else np.empty(0)
        frac = np.abs(vals - np.round(vals))
        if not bin_ids.size or frac.max() <= params.int_tol:
            cand = res.x.copy()
            cand[bin_ids] = np.round(cand[bin_ids])
            ev = evaluate(model, cand)
            if not ev.feasible:
                raise SimplexError(
                    f"integral LP solution failed verification "
                    f"(violation {ev.worst_violation:.3e})"
                )
            if ev.objective < inc_obj - 1e-12:
                incumbent = cand
                inc_obj = ev.objective
            continue

        # most fractional binary within the highest fractional priority
        # level, ties by lowest variable id
        dist = np.minimum(vals % 1.0, 1.0 - vals % 1.0)
        frac_mask = dist > params.int_tol
        level = prio[frac_mask].max()
        score = np.where(frac_mask & (prio == level), dist, -1.0)
        j = int(bin_ids[int(np.argmax(score))])
        next_id += 1
        heapq.heappush(heap, (bound, next_id, {**fixes, j: (0.0, 0.0)}))
        next_id += 1
        heapq.heappush(heap, (bound, next_id, {**fixes, j: (1.0, 1.0)}))

    wall = time.perf_counter() - t_start
    if root_unbounded:
        return MilpSolution(status="unbounded", values=None, objective=None,
                            nodes=nodes, lp_iterations=lp_iters, wall_time=wall)
    if incumbent is None:
        status = "infeasible-unproven" if (timed_out or hit_node_limit) and heap else "infeasible"
        return MilpSolution(status=status, values=None, objective=None,
                            nodes=nodes, lp_iterations=lp_iters, wall_time=wall)
    if heap and (timed_out or hit_node_limit):
        gap = (inc_obj - best_bound) / max(1.0, abs(inc_obj)) if np.isfinite(best_bound) else None
        return MilpSolution(status="feasible-time-limit", values=incumbent, objective=inc_obj,
                            nodes=nodes, lp_iterations=lp_iters, wall_time=wall, gap=gap)
    gap = 0.0 if not heap else max(0.0, (inc_obj - best_bound) / max(1.0, abs(inc_obj)))
    return MilpSolution(status="optimal", values=incumbent, objective=inc_obj,
                        nodes=nodes, lp_iterations=lp_iters, wall_time=wall, gap=gap)
