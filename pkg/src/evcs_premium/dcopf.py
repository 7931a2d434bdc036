"""DC optimal power flow with distribution locational marginal prices.

Each hour of a typical day is an independent LP over (dispatch g, angles
theta, flows f):

    min   sum_i C_i g_i
    s.t.  sum_{i at b} g_i + inflow_b - outflow_b = d_b      (balance, per bus)
          z_l f_l - theta_o(l) + theta_r(l) = 0              (flow, per line)
          0 <= g <= Gcap,   -Fcap <= f <= Fcap,   theta_ref = 0

The DLMP at a bus is the sensitivity dual of its balance row. The remaining
duals are reported in the sign convention of the stationarity identities
checked by :func:`dual_feasibility_check`:

    alpha_up - alpha_lo - lambda_{b(i)} = -C_i        (per generator)
    xi_l + delta_up - delta_lo + lambda_o - lambda_r = 0   (per line)
    sum_{l out of b} xi_l/z_l - sum_{l into b} xi_l/z_l = 0  (per bus)

with xi_l = -z_l times the flow-row dual, and all of alpha/delta nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import (
    SENSE_EQ,
    LinearProgram,
    SolverOptions,
    solve_lp,
)

HOURS = 24


class DcopfError(ValueError):
    """Malformed network or infeasible dispatch."""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    cost: object  # $/MWh, scalar or a 24-vector hourly series
    capacity: float

    def cost_at(self, t):
        c = np.asarray(self.cost, dtype=float)
        return float(c) if c.ndim == 0 else float(c[t])

    def cost_profile(self):
        c = np.asarray(self.cost, dtype=float)
        if c.ndim == 0:
            return np.full(HOURS, float(c))
        if c.shape != (HOURS,):
            raise DcopfError(
                f"generator cost series must have {HOURS} entries, got {c.shape}")
        return c


@dataclass(frozen=True)
class Network:
    """Radial or meshed network with one reference bus (the lowest-numbered)."""

    buses: tuple
    lines: tuple
    generators: tuple
    base_demand: dict  # day -> {bus: 24-vector of MW}
    evcs_bus: int

    def __post_init__(self):
        buses = tuple(sorted(self.buses))
        object.__setattr__(self, "buses", buses)
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        if len(set(buses)) != len(buses) or not buses:
            raise DcopfError("bus ids must be unique and nonempty")
        bus_set = set(buses)
        for ln in self.lines:
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise DcopfError(f"line {ln} references unknown bus")
            if ln.reactance <= 0:
                raise DcopfError(f"line {ln} must have positive reactance")
            if ln.limit <= 0:
                raise DcopfError(f"line {ln} must have positive flow limit")
        for g in self.generators:
            if g.bus not in bus_set:
                raise DcopfError(f"generator {g} references unknown bus")
            if g.capacity < 0:
                raise DcopfError(f"generator {g} must have capacity >= 0")
            g.cost_profile()
        if self.evcs_bus not in bus_set:
            raise DcopfError(f"EVCS bus {self.evcs_bus} not in network")
        for day, by_bus in self.base_demand.items():
            for b, series in by_bus.items():
                if b not in bus_set:
                    raise DcopfError(f"demand day {day} references unknown bus {b}")
                if np.asarray(series, dtype=float).shape != (HOURS,):
                    raise DcopfError(
                        f"demand series for day {day} bus {b} must have "
                        f"{HOURS} entries")
        if not self._connected():
            raise DcopfError("network graph is not connected")

    def _connected(self):
        adj = {b: set() for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen = {self.buses[0]}
        stack = [self.buses[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.buses)

    @property
    def reference_bus(self):
        return self.buses[0]

    def bus_index(self):
        return {b: i for i, b in enumerate(self.buses)}

    def demand_matrix(self, day):
        """(n_buses, 24) MW demand for one typical day."""
        if day not in self.base_demand:
            raise DcopfError(f"unknown day {day!r}")
        idx = self.bus_index()
        d = np.zeros((len(self.buses), HOURS))
        for b, series in self.base_demand[day].items():
            d[idx[b]] += np.asarray(series, dtype=float)
        return d

    @property
    def days(self):
        return tuple(sorted(self.base_demand))


@dataclass(frozen=True)
class HourIndex:
    """Variable layout of one hour's LP: [g | theta | f]."""

    n_gen: int
    n_bus: int
    n_line: int

    @property
    def g(self):
        return slice(0, self.n_gen)

    @property
    def theta(self):
        return slice(self.n_gen, self.n_gen + self.n_bus)

    @property
    def f(self):
        return slice(self.n_gen + self.n_bus,
                     self.n_gen + self.n_bus + self.n_line)

    @property
    def n_vars(self):
        return self.n_gen + self.n_bus + self.n_line

    # row layout: [balance (per bus) | flow (per line)]
    @property
    def balance_rows(self):
        return slice(0, self.n_bus)

    @property
    def flow_rows(self):
        return slice(self.n_bus, self.n_bus + self.n_line)


def build_hour_lp(network: Network, demand_mw, t):
    """Assemble one hour's LP; demand_mw is the per-bus MW vector."""
    idx = network.bus_index()
    n_g = len(network.generators)
    n_b = len(network.buses)
    n_l = len(network.lines)
    layout = HourIndex(n_g, n_b, n_l)

    cost = np.zeros(layout.n_vars)
    for i, gen in enumerate(network.generators):
        cost[i] = gen.cost_at(t)

    ri, ci, vals = [], [], []

    def add(r, c, v):
        ri.append(r)
        ci.append(c)
        vals.append(v)

    for i, gen in enumerate(network.generators):
        add(idx[gen.bus], i, 1.0)
    for li, ln in enumerate(network.lines):
        fcol = layout.n_gen + layout.n_bus + li
        add(idx[ln.to_bus], fcol, 1.0)     # inflow at receiving bus
        add(idx[ln.from_bus], fcol, -1.0)  # outflow at sending bus
        row = n_b + li
        add(row, fcol, ln.reactance)
        add(row, layout.n_gen + idx[ln.from_bus], -1.0)
        add(row, layout.n_gen + idx[ln.to_bus], 1.0)

    rhs = np.concatenate([np.asarray(demand_mw, dtype=float), np.zeros(n_l)])
    senses = [SENSE_EQ] * (n_b + n_l)

    lower = np.full(layout.n_vars, -np.inf)
    upper = np.full(layout.n_vars, np.inf)
    for i, gen in enumerate(network.generators):
        lower[i] = 0.0
        upper[i] = gen.capacity
    ref_col = layout.n_gen + idx[network.reference_bus]
    lower[ref_col] = 0.0
    upper[ref_col] = 0.0
    for li, ln in enumerate(network.lines):
        fcol = layout.n_gen + layout.n_bus + li
        lower[fcol] = -ln.limit
        upper[fcol] = ln.limit

    lp = LinearProgram(cost, np.array(ri), np.array(ci), np.array(vals),
                       senses, rhs, lower, upper)
    return lp, layout


@dataclass(frozen=True)
class DlmpResult:
    """Per-day OPF solution with all duals, in $/MWh and MW."""

    day: object
    dispatch: np.ndarray      # (n_gen, 24) MW
    angles: np.ndarray        # (n_bus, 24) rad
    flows: np.ndarray         # (n_line, 24) MW
    dlmp: np.ndarray          # (n_bus, 24) $/MWh
    alpha_up: np.ndarray      # (n_gen, 24) >= 0
    alpha_lo: np.ndarray      # (n_gen, 24) >= 0
    xi: np.ndarray            # (n_line, 24)
    delta_up: np.ndarray      # (n_line, 24) >= 0
    delta_lo: np.ndarray      # (n_line, 24) >= 0
    c_ll: float               # generation cost over the day, $
    c_dll: float              # dual objective over the day, $
    balance_residual: float   # max |balance violation| MW over bus-hours
    hourly_cost: np.ndarray = field(default=None, repr=False)


def _extract_hour(network, res, layout):
    g = res.x[layout.g]
    theta = res.x[layout.theta]
    f = res.x[layout.f]
    lam = res.duals[layout.balance_rows]
    y_flow = res.duals[layout.flow_rows]
    z = np.array([ln.reactance for ln in network.lines])
    xi = -z * y_flow
    alpha_up = -res.reduced_upper[layout.g]
    alpha_lo = res.reduced_lower[layout.g]
    delta_up = -res.reduced_upper[layout.f]
    delta_lo = res.reduced_lower[layout.f]
    return g, theta, f, lam, xi, alpha_up, alpha_lo, delta_up, delta_lo


def solve_dcopf(network: Network, day, evcs_demand_mw=None, *,
                joint=False, options: SolverOptions | None = None):
    """Solve one typical day's OPF and extract DLMPs.

    evcs_demand_mw: optional 24-vector added to the EVCS bus demand.
    joint=True solves the 24 hours as one stacked LP instead of hour by hour;
    the two paths agree to solver tolerance (hour separability).
    """
    demand = network.demand_matrix(day)
    if evcs_demand_mw is not None:
        ev = np.asarray(evcs_demand_mw, dtype=float)
        if ev.shape != (HOURS,):
            raise DcopfError(f"EVCS demand must have {HOURS} hourly entries")
        if np.any(ev < 0):
            raise DcopfError("EVCS demand must be nonnegative")
        demand = demand.copy()
        demand[network.bus_index()[network.evcs_bus]] += ev

    n_g, n_b, n_l = (len(network.generators), len(network.buses),
                     len(network.lines))
    dispatch = np.zeros((n_g, HOURS))
    angles = np.zeros((n_b, HOURS))
    flows = np.zeros((n_l, HOURS))
    dlmp = np.zeros((n_b, HOURS))
    alpha_up = np.zeros((n_g, HOURS))
    alpha_lo = np.zeros((n_g, HOURS))
    xi = np.zeros((n_l, HOURS))
    delta_up = np.zeros((n_l, HOURS))
    delta_lo = np.zeros((n_l, HOURS))
    hourly_cost = np.zeros(HOURS)

    if joint:
        results = _solve_day_joint(network, demand, options)
    else:
        results = []
        for t in range(HOURS):
            lp, layout = build_hour_lp(network, demand[:, t], t)
            res = solve_lp(lp, options)
            if res.status == "infeasible":
                raise DcopfError(
                    f"day {day!r}: demand not servable, first binding hour "
                    f"{t + 1} (demand {demand[:, t].sum():.3f} MW)")
            if res.status != "optimal":
                raise DcopfError(
                    f"day {day!r} hour {t + 1}: solver status {res.status}")
            results.append((res, layout))

    gcap = np.array([g.capacity for g in network.generators])
    fcap = np.array([ln.limit for ln in network.lines])
    c_dll = 0.0
    for t, (res, layout) in enumerate(results):
        (dispatch[:, t], angles[:, t], flows[:, t], dlmp[:, t], xi[:, t],
         alpha_up[:, t], alpha_lo[:, t], delta_up[:, t],
         delta_lo[:, t]) = _extract_hour(network, res, layout)
        hourly_cost[t] = res.objective
        c_dll += (dlmp[:, t] @ demand[:, t] - alpha_up[:, t] @ gcap
                  - (delta_up[:, t] + delta_lo[:, t]) @ fcap)

    c_ll = float(hourly_cost.sum())

    inflow = np.zeros((n_b, HOURS))
    bus_of = network.bus_index()
    for li, ln in enumerate(network.lines):
        inflow[bus_of[ln.to_bus]] += flows[li]
        inflow[bus_of[ln.from_bus]] -= flows[li]
    gen_at = np.zeros((n_b, HOURS))
    for i, gen in enumerate(network.generators):
        gen_at[bus_of[gen.bus]] += dispatch[i]
    residual = float(np.max(np.abs(gen_at + inflow - demand)))
    if residual > 1e-7:
        raise DcopfError(f"power balance residual {residual:g} exceeds 1e-7")
    if abs(c_ll - c_dll) > 1e-8 * (1.0 + abs(c_ll)):
        raise DcopfError(
            f"strong duality violated: C_LL={c_ll!r}, C_DLL={c_dll!r}")

    return DlmpResult(day=day, dispatch=dispatch, angles=angles, flows=flows,
                      dlmp=dlmp, alpha_up=alpha_up, alpha_lo=alpha_lo, xi=xi,
                      delta_up=delta_up, delta_lo=delta_lo, c_ll=c_ll,
                      c_dll=float(c_dll), balance_residual=residual,
                      hourly_cost=hourly_cost)


def _solve_day_joint(network, demand, options):
    """One stacked LP over all 24 hours; returns per-hour (result, layout)."""
    per_hour = [build_hour_lp(network, demand[:, t], t) for t in range(HOURS)]
    layout = per_hour[0][1]
    nv, nr = layout.n_vars, layout.n_bus + layout.n_line

    cost = np.concatenate([lp.cost for lp, _ in per_hour])
    rhs = np.concatenate([lp.rhs for lp, _ in per_hour])
    lower = np.concatenate([lp.lower for lp, _ in per_hour])
    upper = np.concatenate([lp.upper for lp, _ in per_hour])
    senses = sum((lp.senses for lp, _ in per_hour), [])
    ri = np.concatenate([lp.row_idx + t * nr for t, (lp, _) in enumerate(per_hour)])
    ci = np.concatenate([lp.col_idx + t * nv for t, (lp, _) in enumerate(per_hour)])
    vals = np.concatenate([lp.values for lp, _ in per_hour])

    big = LinearProgram(cost, ri, ci, vals, senses, rhs, lower, upper)
    res = solve_lp(big, options)
    if res.status == "infeasible":
        raise DcopfError("joint day LP infeasible")
    if res.status != "optimal":
        raise DcopfError(f"joint day LP status {res.status}")

    out = []
    from .backend import SolveResult
    for t in range(HOURS):
        vs = slice(t * nv, (t + 1) * nv)
        rs = slice(t * nr, (t + 1) * nr)
        sub = SolveResult(
            "optimal", res.x[vs],
            float(cost[vs] @ res.x[vs]), res.duals[rs],
            res.reduced_lower[vs], res.reduced_upper[vs])
        out.append((sub, layout))
    return out


@dataclass(frozen=True)
class DualCheckReport:
    """Max stationarity residuals by constraint family."""

    gen_cost_balance: float   # alpha_up - alpha_lo - lambda_bus + C = 0
    line_dual_balance: float  # xi + delta_up - delta_lo + lambda_o - lambda_r
    bus_dual_balance: float   # per-bus sum of xi/z in minus out

    @property
    def max_residual(self):
        return max(self.gen_cost_balance, self.line_dual_balance,
                   self.bus_dual_balance)


def dual_feasibility_check(result: DlmpResult, network: Network):
    """Evaluate the three dual stationarity families on a solved day."""
    idx = network.bus_index()
    r_gen = 0.0
    for i, gen in enumerate(network.generators):
        lam = result.dlmp[idx[gen.bus]]
        costs = gen.cost_profile()
        resid = result.alpha_up[i] - result.alpha_lo[i] - lam + costs
        r_gen = max(r_gen, float(np.max(np.abs(resid))))

    r_line = 0.0
    for li, ln in enumerate(network.lines):
        resid = (result.xi[li] + result.delta_up[li] - result.delta_lo[li]
                 + result.dlmp[idx[ln.from_bus]] - result.dlmp[idx[ln.to_bus]])
        r_line = max(r_line, float(np.max(np.abs(resid))))

    per_bus = np.zeros((len(network.buses), HOURS))
    for li, ln in enumerate(network.lines):
        per_bus[idx[ln.from_bus]] += result.xi[li] / ln.reactance
        per_bus[idx[ln.to_bus]] -= result.xi[li] / ln.reactance
    r_bus = float(np.max(np.abs(per_bus)))

    return DualCheckReport(gen_cost_balance=r_gen, line_dual_balance=r_line,
                           bus_dual_balance=r_bus)


def predetermined_tariff(network: Network, days, *,
                         options: SolverOptions | None = None):
    """Likelihood-weighted (bus, hour) DLMP table in $/MWh.

    Solves each typical day's OPF with the day's baseline EVCS demand and
    collapses the per-day DLMPs with the day likelihoods. The result is fixed
    before any charging-price decision, so it does not react to them.
    """
    results = per_day_dlmps(network, days, options=options)
    table = np.zeros((len(network.buses), HOURS))
    for s, day in enumerate(days.day_ids):
        table += days.likelihood[s] * results[s].dlmp
    return table


def per_day_dlmps(network: Network, days, *,
                  options: SolverOptions | None = None):
    """Solve every typical day with its EVCS demand; list of DlmpResult."""
    from .units import kw_to_mw

    out = []
    for s, day in enumerate(days.day_ids):
        ev_mw = kw_to_mw(days.demand_kw[s])
        out.append(solve_dcopf(network, day, ev_mw, options=options))
    return out


def evcs_tariff_cents(network: Network, days, *,
                      options: SolverOptions | None = None):
    """(S, 24) per-day tariff at the EVCS bus in cents/kWh."""
    from .units import dollars_per_mwh_to_cents_per_kwh

    results = per_day_dlmps(network, days, options=options)
    row = network.bus_index()[network.evcs_bus]
    return np.array([dollars_per_mwh_to_cents_per_kwh(r.dlmp[row])
                     for r in results])
