"""Risk-averse charging prices and robust premium bounds.

The charging station picks its price vector by minimizing ||lambda||^2
subject to a CVaR restriction keeping the alpha-tail of its per-day net
cost nonpositive. For alpha in (0, 1] that is a convex QP in
(lambda, v, zeta); alpha = 0 degenerates to the pure worst-case epigraph
(v bounded above by zero, one cost row per day). The insurer side is a
one-dimensional fixed point x -> CL(lambda(x)) contracting at the
composite rate C/M < 1.

Dual conventions follow the break-even program

    min ||lambda||^2
    s.t. v + sum_s phi^s zeta^s <= 0            (eta >= 0)
         alpha zeta^s + v + m d^s.lambda >= a^s (varphi^s >= 0)
         zeta >= 0 (mu), lambda >= 0 (beta)

with m = Gamma_p(gamma - 1) + 1 and a^s the lambda-free part of the
worst-case day cost. Stationarity then reads, exactly as verified by
kkt_report:

    2 lambda_t - m sum_s varphi^s d_t^s - beta_t = 0
    eta - sum_s varphi^s = 0
    eta phi^s - alpha varphi^s - mu^s = 0

Units: demand in kW, prices in cents/kWh, premiums in cents.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .analytic import (
    PolicyFactors,
    TypicalDaySet,
    composite_C,
    premium_multiplier_M,
)
from .backend import (
    SENSE_GE,
    SENSE_LE,
    ConvexQP,
    SolverOptions,
    solve_qp,
)

BOUND_MODES = ("lower", "expected", "upper")


class RiskError(ValueError):
    """Invalid risk configuration or failed certification."""


class RiskInfeasibleError(RiskError):
    """The station cannot break even at any nonnegative price."""


class FixedPointError(RiskError):
    """Premium iteration failed to converge; carries the residual trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = tuple(trace)


def _interval(name, pair, lo_ok, hi_ok):
    lo, hi = (float(pair[0]), float(pair[1]))
    if not lo_ok <= lo <= hi:
        raise RiskError(f"{name} interval must satisfy {lo_ok} <= lo <= hi, "
                        f"got ({lo}, {hi})")
    if hi > hi_ok:
        raise RiskError(f"{name} upper bound {hi} outside domain (max {hi_ok})")
    return lo, hi


@dataclass(frozen=True)
class PolicyBox:
    """Intervals for the three uncertain policy factors.

    p_attack: bounds on the attack probability
    loading: bounds on the profit loading factor r
    history_coeff: bounds on the attack-history coefficient kappa
    """

    p_attack: tuple
    loading: tuple
    history_coeff: tuple

    def __post_init__(self):
        object.__setattr__(self, "p_attack",
                           _interval("p_attack", self.p_attack, 0.0, 1.0))
        object.__setattr__(self, "loading",
                           _interval("loading", self.loading, 0.0,
                                     np.nextafter(1.0, 0.0)))
        object.__setattr__(self, "history_coeff",
                           _interval("history_coeff", self.history_coeff,
                                     0.0, np.inf))

    @classmethod
    def point(cls, policy: PolicyFactors):
        """Degenerate box collapsed onto one policy's estimates."""
        return cls((policy.p_attack, policy.p_attack),
                   (policy.loading, policy.loading),
                   (policy.history_coeff, policy.history_coeff))

    def select(self, mode):
        """(p_attack, loading, history_coeff) at the requested box ends."""
        if mode == "lower":
            return (self.p_attack[0], self.loading[0], self.history_coeff[0])
        if mode == "upper":
            return (self.p_attack[1], self.loading[1], self.history_coeff[1])
        if mode == "expected":
            return (0.5 * (self.p_attack[0] + self.p_attack[1]),
                    0.5 * (self.loading[0] + self.loading[1]),
                    0.5 * (self.history_coeff[0] + self.history_coeff[1]))
        raise RiskError(f"bound mode must be one of {BOUND_MODES}, got {mode!r}")


@dataclass(frozen=True)
class RiskConfig:
    """Tail level, uncertainty box, and the point policy carrying the
    factors that are not box-constrained (risk share, attack count,
    outage penalty)."""

    alpha: float
    policy_box: PolicyBox
    policy: PolicyFactors
    bound_mode: str = "expected"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise RiskError(f"alpha must be in [0,1], got {self.alpha}")
        if self.bound_mode not in BOUND_MODES:
            raise RiskError(
                f"bound mode must be one of {BOUND_MODES}, got {self.bound_mode!r}")

    def resolved_policy(self):
        """Base policy with the box-constrained factors replaced by the
        bound_mode selection (lower ends, midpoints, or upper ends)."""
        p, r, k = self.policy_box.select(self.bound_mode)
        return dataclasses.replace(self.policy, p_attack=p, loading=r,
                                   history_coeff=k)


@dataclass(frozen=True)
class CvarSolution:
    """Primal/dual pair of the risk-averse price program."""

    charging_price: np.ndarray   # (T,) cents/kWh
    v: float
    zeta: np.ndarray             # (S,)
    eta: float
    varphi: np.ndarray           # (S,) scenario multipliers
    mu: np.ndarray               # (S,)
    beta: np.ndarray             # (T,)
    cvar_value: float
    tilted_weights: np.ndarray   # varphi / eta (original weights if eta = 0)
    alpha: float

    def __post_init__(self):
        for name in ("charging_price", "zeta", "varphi", "mu", "beta",
                     "tilted_weights"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        for name in ("zeta", "varphi", "mu", "beta"):
            arr = getattr(self, name)
            if arr.size and arr.min() < -1e-9:
                raise RiskError(f"{name} must be nonnegative, min {arr.min()}")
        if self.eta < -1e-9:
            raise RiskError(f"eta must be nonnegative, got {self.eta}")
        if abs(self.varphi.sum() - self.eta) > 1e-7:
            raise RiskError(
                f"sum of scenario multipliers {self.varphi.sum()} must equal "
                f"eta {self.eta} within 1e-7")
        lhs = (1.0 - self.alpha) * self.varphi.sum()
        if abs(lhs - self.mu.sum()) > 1e-6:
            raise RiskError(
                f"(1-alpha) sum(varphi) = {lhs} and sum(mu) = {self.mu.sum()} "
                "must agree within 1e-6")


@dataclass(frozen=True)
class PremiumQuote:
    """Premium fixed point with its price schedule and certificate."""

    premium: float               # cents
    per_kwh: float               # cents/kWh
    charging_price: np.ndarray   # (T,) cents/kWh
    bound_mode: str
    alpha: float
    trace: tuple                 # fixed-point residuals per iteration
    iterations: int
    solution: CvarSolution
    kkt_max_residual: float
    total_demand: float          # sum_t D_t, kWh

    def __post_init__(self):
        object.__setattr__(self, "charging_price",
                           np.asarray(self.charging_price, dtype=float))
        if self.premium < -1e-9:
            raise RiskError(f"premium must be nonnegative, got {self.premium}")
        if abs(self.per_kwh * self.total_demand - self.premium) \
                > 1e-9 * (1.0 + abs(self.premium)):
            raise RiskError("per-kWh premium does not resolve to the total")

    @property
    def premium_dollars(self):
        return self.premium / 100.0


def cvar_sup(costs, weights, alpha):
    """CVaR_alpha as the sup of reweighted expectations.

    Exact over Q_alpha = {w : sum w = 1, 0 <= w^s <= phi^s/alpha} by the
    sort-and-fill greedy; alpha = 0 is the plain maximum and alpha = 1
    the plain expectation.
    """
    costs = np.asarray(costs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not 0.0 <= alpha <= 1.0:
        raise RiskError(f"alpha must be in [0,1], got {alpha}")
    if costs.shape != weights.shape or costs.ndim != 1 or costs.size == 0:
        raise RiskError("costs and weights must be matching 1-d arrays")
    if not np.all(np.isfinite(costs)):
        raise RiskError("costs must be finite")
    if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-9:
        raise RiskError("weights must be a probability vector")
    if alpha == 0.0:
        return float(costs.max())
    order = np.argsort(-costs, kind="stable")
    remaining = 1.0
    total = 0.0
    for s in order:
        take = min(weights[s] / alpha, remaining)
        total += take * costs[s]
        remaining -= take
        if remaining <= 0.0:
            break
    return float(total)


def worst_case_scenario_cost(demand_kw, charging_price, tariff, x_hat,
                             gamma_p, risk_share, penalty_cents_per_kw):
    """One day's net cost under attack probability gamma_p.

    (1-G) sum_t d_t (lu_t - lc_t) + G sum_t d_t (rho_c - gamma lc_t)
    + x_hat sum_t d_t, everything in cents.
    """
    d = np.asarray(demand_kw, dtype=float)
    lc = np.asarray(charging_price, dtype=float)
    lu = np.asarray(tariff, dtype=float)
    return float((1.0 - gamma_p) * np.sum(d * (lu - lc))
                 + gamma_p * np.sum(d * (penalty_cents_per_kw
                                         - risk_share * lc))
                 + x_hat * d.sum())


def _day_tariff(days: TypicalDaySet, tariff):
    tar = np.asarray(tariff, dtype=float)
    if tar.ndim == 1:
        tar = np.broadcast_to(tar, days.demand_kw.shape)
    if tar.shape != days.demand_kw.shape:
        raise RiskError(
            f"tariff shape {tar.shape} incompatible with demand "
            f"{days.demand_kw.shape}")
    return tar


def _cost_pieces(days, x_hat, policy, tariff):
    """m and the lambda-free day costs a^s (cents)."""
    gamma_p = policy.p_attack
    rho_c = policy.penalty_cents_per_kw()
    m = premium_multiplier_M(policy)
    tar = _day_tariff(days, tariff)
    d = days.demand_kw
    a = ((1.0 - gamma_p) * np.sum(d * tar, axis=1)
         + (gamma_p * rho_c + x_hat) * d.sum(axis=1))
    return m, a


def solve_risk_averse_evcs(days: TypicalDaySet, x_hat, config: RiskConfig,
                           tariff, *, price_floor=None,
                           options: SolverOptions | None = None):
    """Minimum-norm charging prices keeping the alpha-tail cost nonpositive.

    tariff may be one (T,) schedule or a per-day (S, T) table in cents/kWh;
    x_hat is the premium surcharge in cents/kWh. price_floor, when given,
    is a per-hour lower bound on the price (used by the cutting scheme in
    the tri-level solver); the default is zero. With a nonzero floor the
    beta multipliers belong to lambda >= floor, so the zero-price
    complementarity family of kkt_report no longer applies to the result.
    """
    if x_hat < 0:
        raise RiskError(f"x_hat must be nonnegative, got {x_hat}")
    policy = config.resolved_policy()
    m, a = _cost_pieces(days, x_hat, policy, tariff)
    d = days.demand_kw
    phi = days.likelihood
    n_day, n_hour = d.shape
    alpha = config.alpha
    if price_floor is None:
        floor = np.zeros(n_hour)
    else:
        floor = np.asarray(price_floor, dtype=float)
        if floor.shape != (n_hour,) or not np.all(floor >= 0.0):
            raise RiskError("price_floor must be a nonnegative per-hour "
                            "vector")

    # Solve v and zeta in units of a reference daily energy so the matrix
    # stays O(1) at any demand scale; substituting v = d_ref v', zeta =
    # d_ref zeta' and dividing the day rows by d_ref is exact, and the
    # duals map back as phi = phi'/d_ref, eta = eta'/d_ref, mu = mu'/d_ref.
    d_ref = max(float(d.sum(axis=1).mean()), 1e-9)

    if alpha == 1.0:
        # At the expectation level CVaR_1 = E, so the tail program
        # collapses to the single row E[c(lambda)] <= 0. Solving that
        # directly removes the cost-free (v, zeta) recession ray that can
        # stall the interior-point iteration; the full certificate is
        # rebuilt below and satisfies every optimality family exactly.
        row = (m * (phi @ d) / d_ref)[None, :]
        rhs_val = float(phi @ a) / d_ref
        q = np.full(n_hour, 2.0)
        qp = ConvexQP.from_dense(q, np.zeros(n_hour), row, [SENSE_GE],
                                 np.array([rhs_val]), floor, None)
        res = solve_qp(qp, options)
        if res.status == "infeasible":
            raise RiskInfeasibleError(
                f"no nonnegative price satisfies the alpha={alpha} tail "
                f"constraint (m={m:g}); the station cannot break even")
        if res.status != "optimal":
            raise RiskError(f"price program ended with status {res.status}")
        lam = res.x.copy()
        sigma = max(float(res.duals[0]), 0.0) / d_ref
        varphi = sigma * phi
        eta = sigma
        mu = np.zeros(n_day)
        beta = res.reduced_lower.copy()
        costs = a - m * (d @ lam)
        v = float(costs.min()) - 1.0
        zeta = costs - v
    elif alpha > 0.0:
        # variables [lambda (T) | v' | zeta' (S)]
        n = n_hour + 1 + n_day
        rows = np.zeros((1 + n_day, n))
        rows[0, n_hour] = 1.0
        rows[0, n_hour + 1:] = phi
        senses = [SENSE_LE]
        rhs = [0.0]
        for s in range(n_day):
            rows[1 + s, :n_hour] = m * d[s] / d_ref
            rows[1 + s, n_hour] = 1.0
            rows[1 + s, n_hour + 1 + s] = alpha
            senses.append(SENSE_GE)
            rhs.append(a[s] / d_ref)
        lower = np.zeros(n)
        lower[:n_hour] = floor
        lower[n_hour] = -np.inf
        q = np.zeros(n)
        q[:n_hour] = 2.0
        qp = ConvexQP.from_dense(q, np.zeros(n), rows, senses,
                                 np.asarray(rhs, dtype=float), lower, None)
        res = solve_qp(qp, options)
        if res.status == "infeasible":
            raise RiskInfeasibleError(
                f"no nonnegative price satisfies the alpha={alpha} tail "
                f"constraint (m={m:g}); the station cannot break even")
        if res.status != "optimal":
            raise RiskError(f"price program ended with status {res.status}")
        lam = res.x[:n_hour].copy()
        v = float(res.x[n_hour]) * d_ref
        zeta = res.x[n_hour + 1:] * d_ref
        eta = float(-res.duals[0]) / d_ref
        varphi = res.duals[1:] / d_ref
        mu = res.reduced_lower[n_hour + 1:] / d_ref
        beta = res.reduced_lower[:n_hour].copy()
    else:
        # pure worst case: variables [lambda (T) | v'], v' <= 0, rows keep
        # every scaled day cost below v'
        n = n_hour + 1
        rows = np.zeros((n_day, n))
        rows[:, :n_hour] = m * d / d_ref
        rows[:, n_hour] = 1.0
        senses = [SENSE_GE] * n_day
        lower = np.zeros(n)
        lower[:n_hour] = floor
        lower[n_hour] = -np.inf
        upper = np.full(n, np.inf)
        upper[n_hour] = 0.0
        q = np.zeros(n)
        q[:n_hour] = 2.0
        qp = ConvexQP.from_dense(q, np.zeros(n), rows, senses, a / d_ref,
                                 lower, upper)
        res = solve_qp(qp, options)
        if res.status == "infeasible":
            raise RiskInfeasibleError(
                f"no nonnegative price covers the worst day (m={m:g}); "
                "the station cannot break even")
        if res.status != "optimal":
            raise RiskError(f"price program ended with status {res.status}")
        lam = res.x[:n_hour].copy()
        v = float(res.x[n_hour]) * d_ref
        zeta = np.zeros(n_day)
        varphi = res.duals / d_ref
        eta = float(varphi.sum())
        mu = eta * phi
        beta = res.reduced_lower[:n_hour].copy()

    lam = np.maximum(lam, 0.0)
    zeta = np.maximum(zeta, 0.0)
    varphi = np.maximum(varphi, 0.0)
    mu = np.maximum(mu, 0.0)
    beta = np.maximum(beta, 0.0)
    eta = max(eta, 0.0)
    costs = a - m * (d @ lam)
    cvar_value = cvar_sup(costs, phi, alpha)
    tilted = varphi / eta if eta > 1e-12 else phi.copy()
    return CvarSolution(charging_price=lam, v=v, zeta=zeta, eta=eta,
                        varphi=varphi, mu=mu, beta=beta,
                        cvar_value=cvar_value, tilted_weights=tilted,
                        alpha=alpha)


@dataclass(frozen=True)
class KktReport:
    """Scale-free residuals of the price program's optimality system.

    Each family's residual is divided by one plus the magnitude of its
    participating terms, so the 1e-6 certification threshold means the
    same thing at desk scale and at 1000x demand.
    """

    families: dict

    @property
    def max_residual(self):
        return max(self.families.values())


def _rel(raw, scale):
    return float(raw / (1.0 + scale))


def kkt_report(solution: CvarSolution, days: TypicalDaySet, x_hat,
               config: RiskConfig, tariff):
    """Evaluate every optimality condition family at a returned solution."""
    if solution.alpha != config.alpha:
        raise RiskError("solution and config disagree on alpha")
    policy = config.resolved_policy()
    m, a = _cost_pieces(days, x_hat, policy, tariff)
    d = days.demand_kw
    phi = days.likelihood
    alpha = config.alpha
    lam = solution.charging_price
    v = solution.v
    zeta = solution.zeta
    eta = solution.eta
    varphi = solution.varphi
    mu = solution.mu
    beta = solution.beta

    ctilde = a - m * (d @ lam)
    cvar_slack = v + phi @ zeta                  # <= 0
    day_slack = ctilde - v - alpha * zeta        # <= 0

    fam = {}
    fam["primal_cvar"] = _rel(max(0.0, cvar_slack),
                              abs(v) + float(np.abs(phi * zeta).sum()))
    fam["primal_scenario"] = max(
        _rel(max(0.0, day_slack[s]),
             abs(ctilde[s]) + abs(v) + alpha * zeta[s])
        for s in range(len(a)))
    fam["primal_nonneg"] = max(
        _rel(max(0.0, float(-zeta.min(initial=0.0))), 0.0),
        _rel(max(0.0, float(-lam.min(initial=0.0))), 0.0))
    fam["dual_nonneg"] = _rel(
        max(0.0, -eta, float(-varphi.min(initial=0.0)),
            float(-mu.min(initial=0.0)), float(-beta.min(initial=0.0))), 0.0)
    fam["comp_cvar"] = _rel(abs(eta * cvar_slack), eta + abs(cvar_slack))
    fam["comp_scenario"] = max(
        _rel(abs(varphi[s] * day_slack[s]), varphi[s] + abs(day_slack[s]))
        for s in range(len(a)))
    fam["comp_zeta"] = max(
        _rel(abs(mu[s] * zeta[s]), mu[s] + zeta[s]) for s in range(len(a)))
    fam["comp_lambda"] = max(
        _rel(abs(beta[t] * lam[t]), beta[t] + lam[t])
        for t in range(lam.size))
    fam["stat_zeta"] = max(
        _rel(abs(eta * phi[s] - alpha * varphi[s] - mu[s]),
             eta * phi[s] + alpha * varphi[s] + mu[s])
        for s in range(len(a)))
    fam["stat_eta"] = _rel(abs(eta - varphi.sum()), eta + varphi.sum())
    weighted = m * (varphi @ d)
    fam["stat_lambda"] = max(
        _rel(abs(2.0 * lam[t] - weighted[t] - beta[t]),
             2.0 * abs(lam[t]) + abs(weighted[t]) + beta[t])
        for t in range(lam.size))
    fam["identity_19"] = _rel(
        abs((1.0 - alpha) * varphi.sum() - mu.sum()),
        varphi.sum() + mu.sum())
    return KktReport(fam)


def robust_premium_bilevel(days: TypicalDaySet, config: RiskConfig, tariff, *,
                           x_start=0.0, max_iters=500, tol=1e-8,
                           options: SolverOptions | None = None):
    """Fixed point of x -> CL(lambda(x)) at the configured box ends.

    The claim limit CL uses the original day likelihoods (the insurer does
    not observe the station's tilted weights). Damping 0.5 engages after
    50 iterations; the returned quote carries the full residual trace and
    the optimality certificate of the final price program.
    """
    policy = config.resolved_policy()
    c_comp = composite_C(policy)
    total = float(days.weighted_demand.sum())
    if total <= 0:
        raise RiskError("typical days carry no demand")
    if c_comp >= premium_multiplier_M(policy):
        raise RiskError(
            f"composite factor C={c_comp:g} at or above the demand "
            f"multiplier M={premium_multiplier_M(policy):g}; "
            "the premium recursion has no finite fixed point")

    x = float(x_start)
    if x < 0:
        raise RiskError(f"x_start must be nonnegative, got {x_start}")
    trace = []
    converged = False
    for k in range(max_iters):
        sol = solve_risk_averse_evcs(days, x / total, config, tariff,
                                     options=options)
        revenue = float(days.likelihood @ (days.demand_kw
                                           @ sol.charging_price))
        x_new = c_comp * revenue
        resid = abs(x_new - x)
        trace.append(resid)
        if resid <= tol * (1.0 + abs(x)):
            x = x_new
            converged = True
            break
        x = 0.5 * (x + x_new) if k >= 50 else x_new
    if not converged:
        raise FixedPointError(
            f"premium fixed point did not converge in {max_iters} "
            f"iterations (last residual {trace[-1]:g})", trace)

    x = max(x, 0.0)
    sol = solve_risk_averse_evcs(days, x / total, config, tariff,
                                 options=options)
    report = kkt_report(sol, days, x / total, config, tariff)
    if report.max_residual > 1e-6:
        raise RiskError(
            f"optimality certificate failed: max scaled residual "
            f"{report.max_residual:g}")
    return PremiumQuote(premium=x, per_kwh=x / total,
                        charging_price=sol.charging_price,
                        bound_mode=config.bound_mode, alpha=config.alpha,
                        trace=tuple(trace), iterations=len(trace),
                        solution=sol, kkt_max_residual=report.max_residual,
                        total_demand=total)
