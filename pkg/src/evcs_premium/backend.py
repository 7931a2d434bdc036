"""Deterministic LP/QP backend with dual extraction.

All optimization in the package funnels through the two entry points here,
:func:`solve_lp` and :func:`solve_qp`, so that dual conventions are fixed in
one place:

* ``duals[i]`` is the sensitivity of the optimal objective to the right-hand
  side of row ``i`` (d obj / d rhs). For a minimization this makes the dual of
  a binding ``>=`` row nonnegative and of a binding ``<=`` row nonpositive.
* ``reduced_lower[j]`` / ``reduced_upper[j]`` are the sensitivities to the
  variable bounds.

LPs are handed to scipy's HiGHS interface, whose marginals already follow this
convention. QPs (diagonal positive semidefinite Hessian only, which is all the
package needs) are solved by a dense Mehrotra predictor-corrector interior
point method followed by an active-set least-squares polish; row feasibility
is certified up front with an LP phase so infeasibility never has to be
inferred from IPM divergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

SENSE_LE = "<="
SENSE_GE = ">="
SENSE_EQ = "="
_SENSES = (SENSE_LE, SENSE_GE, SENSE_EQ)

_DEFAULT_FEAS_TOL = 1e-9
_DEFAULT_GAP_TOL = 1e-8


class BackendError(ValueError):
    """Raised for malformed problems or solver-option violations."""


@dataclass
class SolverOptions:
    """Tolerances for the backend. Configurable only downward (tighter)."""

    feas_tol: float = _DEFAULT_FEAS_TOL
    gap_tol: float = _DEFAULT_GAP_TOL
    max_iter: int = 100

    def __post_init__(self):
        if self.feas_tol > _DEFAULT_FEAS_TOL:
            raise BackendError(
                f"feas_tol may only be tightened below {_DEFAULT_FEAS_TOL:g}, "
                f"got {self.feas_tol:g}"
            )
        if self.gap_tol > _DEFAULT_GAP_TOL:
            raise BackendError(
                f"gap_tol may only be tightened below {_DEFAULT_GAP_TOL:g}, "
                f"got {self.gap_tol:g}"
            )
        if self.max_iter < 1:
            raise BackendError("max_iter must be positive")


@dataclass
class LinearProgram:
    """min cost.x subject to rows (sparse triplet), senses, rhs and bounds."""

    cost: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    senses: list
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_dense(cls, cost, rows, senses, rhs, lower=None, upper=None):
        cost = np.asarray(cost, dtype=float)
        n = cost.size
        rows = np.asarray(rows, dtype=float).reshape(-1, n)
        rhs = np.asarray(rhs, dtype=float)
        if rows.shape[0] != rhs.size or rows.shape[0] != len(senses):
            raise BackendError("rows, senses and rhs must agree in length")
        for s in senses:
            if s not in _SENSES:
                raise BackendError(f"unknown sense {s!r}")
        ri, ci = np.nonzero(rows)
        lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
        return cls(cost, ri, ci, rows[ri, ci], list(senses), rhs, lower, upper)

    @property
    def num_vars(self):
        return self.cost.size

    @property
    def num_rows(self):
        return self.rhs.size

    def dense_rows(self):
        a = np.zeros((self.num_rows, self.num_vars))
        a[self.row_idx, self.col_idx] = self.values
        return a


@dataclass
class ConvexQP:
    """min 0.5 x.diag(q).x + cost.x with the same row/bound structure.

    q_diag must be elementwise nonnegative (diagonal PSD Hessian).
    """

    q_diag: np.ndarray
    cost: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    senses: list
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_dense(cls, q_diag, cost, rows, senses, rhs, lower=None, upper=None):
        lp = LinearProgram.from_dense(cost, rows, senses, rhs, lower, upper)
        q = np.asarray(q_diag, dtype=float)
        if q.size != lp.num_vars:
            raise BackendError("q_diag length must match cost length")
        if np.any(q < 0):
            raise BackendError("q_diag must be nonnegative (diagonal PSD)")
        return cls(q, lp.cost, lp.row_idx, lp.col_idx, lp.values, lp.senses,
                   lp.rhs, lp.lower, lp.upper)

    dense_rows = LinearProgram.dense_rows
    num_vars = LinearProgram.num_vars
    num_rows = LinearProgram.num_rows


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float | None
    duals: np.ndarray | None
    reduced_lower: np.ndarray | None
    reduced_upper: np.ndarray | None
    primal_infeasibility: float = np.nan
    dual_infeasibility: float = np.nan
    duality_gap: float = np.nan
    comp_slack: float = np.nan
    iterations: int = 0
    message: str = ""


def _row_slacks(a, senses, rhs, x):
    ax = a @ x
    slack = np.empty(len(senses))
    for i, s in enumerate(senses):
        if s == SENSE_LE:
            slack[i] = rhs[i] - ax[i]
        elif s == SENSE_GE:
            slack[i] = ax[i] - rhs[i]
        else:
            slack[i] = 0.0
    return ax, slack


def _residuals(q_diag, cost, prob, x, duals, red_lo, red_up):
    """Common KKT residual bookkeeping in the reported dual convention."""
    a = prob.dense_rows()
    ax, slack = _row_slacks(a, prob.senses, prob.rhs, x)
    viol = 0.0
    for i, s in enumerate(prob.senses):
        if s == SENSE_EQ:
            viol = max(viol, abs(ax[i] - prob.rhs[i]))
        else:
            viol = max(viol, max(0.0, -slack[i]))
    viol = max(viol, float(np.max(np.maximum(prob.lower - x, 0.0), initial=0.0)))
    viol = max(viol, float(np.max(np.maximum(x - prob.upper, 0.0), initial=0.0)))

    grad = q_diag * x + cost if q_diag is not None else cost.copy()
    stat = grad - a.T @ duals - red_lo - red_up
    dual_inf = float(np.max(np.abs(stat), initial=0.0))

    comp = float(np.sum(np.abs(duals * slack)))

    obj = float(0.5 * np.sum(q_diag * x * x) + cost @ x) if q_diag is not None \
        else float(cost @ x)
    # Lagrangian dual value at the reported multipliers:
    # duals.rhs - 0.5 x Q x + reduced costs paired with their finite bounds.
    dual_obj = float(duals @ prob.rhs)
    if q_diag is not None:
        dual_obj -= float(0.5 * np.sum(q_diag * x * x))
    finite_lo = np.isfinite(prob.lower)
    finite_up = np.isfinite(prob.upper)
    dual_obj += float(red_lo[finite_lo] @ prob.lower[finite_lo])
    dual_obj += float(red_up[finite_up] @ prob.upper[finite_up])
    gap = abs(obj - dual_obj)
    return obj, viol, dual_inf, gap, comp


def solve_lp(lp: LinearProgram, options: SolverOptions | None = None) -> SolveResult:
    """Solve an LP with HiGHS, returning sensitivity-convention duals."""
    opts = options or SolverOptions()
    n, m = lp.num_vars, lp.num_rows
    a = sp.csr_matrix((lp.values, (lp.row_idx, lp.col_idx)), shape=(m, n))

    eq_pos, ub_pos, ub_sign = [], [], []
    for i, s in enumerate(lp.senses):
        if s == SENSE_EQ:
            eq_pos.append(i)
        else:
            ub_pos.append(i)
            ub_sign.append(1.0 if s == SENSE_LE else -1.0)
    eq_pos = np.array(eq_pos, dtype=int)
    ub_pos = np.array(ub_pos, dtype=int)
    ub_sign = np.array(ub_sign)

    a_eq = a[eq_pos] if eq_pos.size else None
    b_eq = lp.rhs[eq_pos] if eq_pos.size else None
    a_ub = sp.diags(ub_sign) @ a[ub_pos] if ub_pos.size else None
    b_ub = ub_sign * lp.rhs[ub_pos] if ub_pos.size else None

    bounds = [(lo if np.isfinite(lo) else None, up if np.isfinite(up) else None)
              for lo, up in zip(lp.lower, lp.upper)]

    res = linprog(lp.cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return SolveResult("infeasible", None, None, None, None, None,
                           message=res.message)
    if res.status == 3:
        return SolveResult("unbounded", None, None, None, None, None,
                           message=res.message)
    if res.status != 0:
        return SolveResult("numerical", None, None, None, None, None,
                           message=res.message)

    duals = np.zeros(m)
    if eq_pos.size:
        duals[eq_pos] = res.eqlin.marginals
    if ub_pos.size:
        duals[ub_pos] = ub_sign * res.ineqlin.marginals
    red_lo = np.asarray(res.lower.marginals, dtype=float)
    red_up = np.asarray(res.upper.marginals, dtype=float)

    obj, viol, dinf, gap, comp = _residuals(None, lp.cost, lp, res.x,
                                            duals, red_lo, red_up)
    status = "optimal"
    cost_scale = 1.0 + float(np.max(np.abs(lp.cost), initial=0.0))
    if (viol > opts.feas_tol or dinf > opts.feas_tol * cost_scale
            or gap > opts.gap_tol * (1.0 + abs(obj))):
        status = "numerical"
    return SolveResult(status, res.x, obj, duals, red_lo, red_up,
                       primal_infeasibility=viol, dual_infeasibility=dinf,
                       duality_gap=gap, comp_slack=comp,
                       iterations=int(getattr(res, "nit", 0)))


# ---------------------------------------------------------------------------
# QP interior point


def _canonical_ineq(qp):
    """Split a QP into equality rows and <= rows (bounds folded into rows).

    Returns (E, f, G, h, tags) where tags maps each G row back to its origin:
    ("row", i, sign), ("lower", j) or ("upper", j).
    """
    a = qp.dense_rows()
    e_rows, f_vals, g_rows, h_vals, tags = [], [], [], [], []
    for i, s in enumerate(qp.senses):
        if s == SENSE_EQ:
            e_rows.append(a[i])
            f_vals.append(qp.rhs[i])
        elif s == SENSE_LE:
            g_rows.append(a[i])
            h_vals.append(qp.rhs[i])
            tags.append(("row", i, -1.0))
        else:
            g_rows.append(-a[i])
            h_vals.append(-qp.rhs[i])
            tags.append(("row", i, 1.0))
    n = qp.num_vars
    for j in range(n):
        if np.isfinite(qp.lower[j]):
            row = np.zeros(n)
            row[j] = -1.0
            g_rows.append(row)
            h_vals.append(-qp.lower[j])
            tags.append(("lower", j, 1.0))
        if np.isfinite(qp.upper[j]):
            row = np.zeros(n)
            row[j] = 1.0
            g_rows.append(row)
            h_vals.append(qp.upper[j])
            tags.append(("upper", j, -1.0))
    e = np.array(e_rows).reshape(-1, n)
    g = np.array(g_rows).reshape(-1, n)
    return e, np.array(f_vals), g, np.array(h_vals), tags


def _kkt_solve(q, e, g, w, r1, r2, r3):
    """Solve the reduced Newton system for (dx, dnu, dy)."""
    n, me, mi = q.size, e.shape[0], g.shape[0]
    k = np.zeros((n + me + mi, n + me + mi))
    k[:n, :n] = np.diag(q)
    k[:n, n:n + me] = e.T
    k[:n, n + me:] = g.T
    k[n:n + me, :n] = e
    k[n + me:, :n] = g
    k[n + me:, n + me:] = -np.diag(w)
    rhs = np.concatenate([r1, r2, r3])
    try:
        sol = np.linalg.solve(k, rhs)
    except np.linalg.LinAlgError:
        k[np.diag_indices_from(k)] += 1e-12
        sol = np.linalg.solve(k, rhs)
    return sol[:n], sol[n:n + me], sol[n + me:]


def _ipm(q, c, e, f, g, h, max_iter):
    """Mehrotra predictor-corrector for min .5 x q x + c x, Ex=f, Gx<=h."""
    n, me, mi = c.size, f.size, h.size
    if mi == 0:
        # Pure equality QP: single KKT solve.
        k = np.block([[np.diag(q), e.T], [e, np.zeros((me, me))]])
        rhs = np.concatenate([-c, f])
        sol, *_ = np.linalg.lstsq(k, rhs, rcond=None)
        return sol[:n], sol[n:], np.zeros(0), np.zeros(0), 1

    x = np.zeros(n)
    if me:
        x, *_ = np.linalg.lstsq(e, f, rcond=None)
    nu = np.zeros(me)
    s = np.maximum(1.0, np.abs(h - g @ x))
    y = np.ones(mi)

    for it in range(1, max_iter + 1):
        r_d = q * x + c + (e.T @ nu if me else 0.0) + g.T @ y
        r_e = (e @ x - f) if me else np.zeros(0)
        r_i = g @ x + s - h
        mu = (y @ s) / mi
        scale = 1.0 + max(np.max(np.abs(c)), np.max(np.abs(h)),
                          np.max(np.abs(f)) if me else 0.0)
        if (np.max(np.abs(r_d)) <= 1e-11 * scale
                and (me == 0 or np.max(np.abs(r_e)) <= 1e-11 * scale)
                and np.max(np.abs(r_i)) <= 1e-11 * scale
                and mu <= 1e-12 * scale):
            return x, nu, y, s, it

        w = s / y
        # affine step
        dxa, dnua, dya = _kkt_solve(q, e, g, w, -r_d, -r_e, -r_i + s)
        dsa = -r_i - g @ dxa
        ap = _max_step(s, dsa)
        ad = _max_step(y, dya)
        mu_aff = ((y + ad * dya) @ (s + ap * dsa)) / mi
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0

        # corrector
        rc = (y * s + dya * dsa - sigma * mu) / y
        dx, dnu, dy = _kkt_solve(q, e, g, w, -r_d, -r_e, -r_i + rc)
        ds = -r_i - g @ dx
        tau = min(0.99995, max(0.995, 1.0 - mu))
        ap = tau * _max_step(s, ds)
        ad = tau * _max_step(y, dy)
        step = min(ap, ad)
        x = x + step * dx
        if me:
            nu = nu + step * dnu
        y = np.maximum(y + step * dy, 1e-300)
        s = np.maximum(s + step * ds, 1e-300)
        if np.max(np.abs(x)) > 1e12 * scale:
            raise _Unbounded
    return x, nu, y, s, max_iter


class _Unbounded(Exception):
    pass


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _polish(q, c, e, f, g, h, x, nu, y):
    """Resolve on the active set by least squares for crisp residuals."""
    mi = h.size
    s = h - g @ x
    active = np.flatnonzero(y >= s)
    ga = g[active]
    me = f.size
    na = active.size
    n = c.size
    k = np.zeros((n + me + na, n + me + na))
    k[:n, :n] = np.diag(q)
    if me:
        k[:n, n:n + me] = e.T
        k[n:n + me, :n] = e
    if na:
        k[:n, n + me:] = ga.T
        k[n + me:, :n] = ga
    rhs = np.concatenate([-c, f, h[active]])
    sol, *_ = np.linalg.lstsq(k, rhs, rcond=None)
    xp = sol[:n]
    nup = sol[n:n + me]
    yp = np.zeros(mi)
    yp[active] = sol[n + me:]

    scale = 1.0 + max(np.max(np.abs(c)), np.max(np.abs(h), initial=0.0),
                      np.max(np.abs(f)) if me else 0.0)
    ok = (np.all(yp >= -1e-9 * scale)
          and np.max(g @ xp - h, initial=0.0) <= 1e-9 * scale
          and (me == 0 or np.max(np.abs(e @ xp - f)) <= 1e-9 * scale))
    if ok:
        stat = q * xp + c + (e.T @ nup if me else 0.0) + g.T @ yp
        ok = np.max(np.abs(stat)) <= 1e-8 * scale
    if not ok:
        return x, nu, y
    return xp, nup, np.maximum(yp, 0.0)


def solve_qp(qp: ConvexQP, options: SolverOptions | None = None) -> SolveResult:
    """Solve a diagonal-PSD QP; duals follow the sensitivity convention."""
    opts = options or SolverOptions()
    n, m = qp.num_vars, qp.num_rows

    # Certify row feasibility with an LP phase before running the IPM.
    feas = solve_lp(LinearProgram(np.zeros(n), qp.row_idx, qp.col_idx,
                                  qp.values, qp.senses, qp.rhs,
                                  qp.lower, qp.upper))
    if feas.status == "infeasible":
        return SolveResult("infeasible", None, None, None, None, None,
                           message="constraint rows are infeasible")

    e, f, g, h, tags = _canonical_ineq(qp)
    try:
        x, nu, y, s, iters = _ipm(qp.q_diag, qp.cost, e, f, g, h, opts.max_iter)
    except _Unbounded:
        return SolveResult("unbounded", None, None, None, None, None,
                           message="iterates diverged")
    if h.size:
        x, nu, y = _polish(qp.q_diag, qp.cost, e, f, g, h, x, nu, y)

    # Map internal multipliers back to reported sensitivity duals.
    duals = np.zeros(m)
    red_lo = np.zeros(n)
    red_up = np.zeros(n)
    eq_seen = 0
    for i, sense in enumerate(qp.senses):
        if sense == SENSE_EQ:
            duals[i] = -nu[eq_seen]
            eq_seen += 1
    for k_row, (kind, idx, sign) in enumerate(tags):
        val = sign * y[k_row]
        if kind == "row":
            duals[idx] = val
        elif kind == "lower":
            red_lo[idx] = val
        else:
            red_up[idx] = val

    obj, viol, dinf, gap, comp = _residuals(qp.q_diag, qp.cost, qp, x,
                                            duals, red_lo, red_up)
    status = "optimal"
    scale = 1.0 + abs(obj) + float(np.max(np.abs(qp.cost), initial=0.0))
    if viol > opts.feas_tol * scale or dinf > 1e-8 * scale:
        status = "numerical"
    return SolveResult(status, x, obj, duals, red_lo, red_up,
                       primal_infeasibility=viol, dual_infeasibility=dinf,
                       duality_gap=gap, comp_slack=comp, iterations=iters)
