"""Distribution OPF and locational-price extraction."""

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from evcs_premium.analytic import TypicalDaySet
from evcs_premium.dcopf import (
    DcopfError,
    Generator,
    Line,
    Network,
    dual_feasibility_check,
    evcs_tariff_cents,
    per_day_dlmps,
    predetermined_tariff,
    solve_dcopf,
)
from evcs_premium.fixtures import manhattan7, typical_days


def _flat(value):
    return np.full(24, float(value))


def _two_bus(limit, second_gen=False, load=30.0):
    gens = [Generator(1, 10.0, 100.0)]
    if second_gen:
        gens.append(Generator(2, 15.0, 100.0))
    return Network(buses=(1, 2), lines=(Line(1, 2, 0.1, limit),),
                   generators=tuple(gens),
                   base_demand={"d1": {2: _flat(load)}}, evcs_bus=2)


def _random_network(rng, n_bus, line_limit=None, extra_lines=2):
    """Connected network on a random spanning tree plus a few chords.

    Default line limits sit above the total system load. Transfer
    factors never exceed one in magnitude, so that keeps every draw
    feasible without hand-tuning.
    """
    buses = tuple(range(1, n_bus + 1))
    demand = {int(b): rng.uniform(1.0, 9.0, size=24) for b in buses}
    total_peak = float(sum(demand[b].max() for b in buses))

    def limit():
        if line_limit is not None:
            return line_limit
        return total_peak * float(rng.uniform(1.05, 1.6))

    lines = []
    for b in buses[1:]:
        anchor = int(rng.integers(1, b))
        lines.append(Line(anchor, b, float(rng.uniform(0.05, 0.15)),
                          limit()))
    for _ in range(int(rng.integers(0, extra_lines + 1))):
        a, b = rng.choice(buses, size=2, replace=False)
        lines.append(Line(int(min(a, b)), int(max(a, b)),
                          float(rng.uniform(0.05, 0.15)), limit()))
    n_gen = int(rng.integers(1, 4))
    costs = rng.uniform(5.0, 50.0, size=n_gen)
    costs += np.arange(n_gen) * 1e-3  # keep marginal costs distinct
    gens = tuple(Generator(int(rng.choice(buses)), float(costs[i]),
                           2.0 * total_peak) for i in range(n_gen))
    return Network(buses=buses, lines=tuple(lines), generators=gens,
                   base_demand={"d1": demand}, evcs_bus=buses[-1])


def test_two_bus_marginal_price_uncongested():
    net = _two_bus(limit=200.0)
    res = solve_dcopf(net, "d1")
    assert_allclose(res.dlmp, 10.0, atol=1e-8)
    assert_allclose(res.dispatch[0], 30.0, atol=1e-8)
    assert_allclose(res.flows[0], 30.0, atol=1e-8)
    assert_allclose(res.c_ll, 24 * 30.0 * 10.0, rtol=1e-10)


def test_two_bus_congestion_splits_prices():
    # The cheap unit can push only 20 MW across the line; the local unit
    # at 15 $/MWh covers the rest and sets the receiving-end price.
    net = _two_bus(limit=20.0, second_gen=True)
    res = solve_dcopf(net, "d1")
    assert_allclose(res.dlmp[0], 10.0, atol=1e-7)
    assert_allclose(res.dlmp[1], 15.0, atol=1e-7)
    assert_allclose(res.dispatch[0], 20.0, atol=1e-7)
    assert_allclose(res.dispatch[1], 10.0, atol=1e-7)
    assert_allclose(res.flows[0], 20.0, atol=1e-8)
    # congestion rent shows up on the flow bound, not the angle equality
    assert_allclose(res.xi[0], 0.0, atol=1e-6)
    assert_allclose(res.delta_up[0], 5.0, atol=1e-6)
    assert_allclose(res.delta_lo[0], 0.0, atol=1e-8)


def test_fixture_days_strong_duality():
    net = manhattan7()
    for res in per_day_dlmps(net, typical_days()):
        gap = abs(res.c_ll - res.c_dll)
        assert gap <= 1e-8 * (1.0 + abs(res.c_ll))
        assert res.balance_residual <= 1e-7


def test_dual_feasibility_fixture_and_perturbation():
    net = manhattan7()
    res = per_day_dlmps(net, typical_days())[0]
    report = dual_feasibility_check(res, net)
    assert report.max_residual <= 1e-7
    broken = dataclasses.replace(res, dlmp=res.dlmp + 1e-3)
    report = dual_feasibility_check(broken, net)
    assert report.gen_cost_balance >= 0.9e-3


def test_random_networks_duality_and_dual_feasibility():
    rng = np.random.default_rng(1207)
    for _ in range(8):
        net = _random_network(rng, int(rng.integers(2, 11)))
        res = solve_dcopf(net, "d1")
        assert abs(res.c_ll - res.c_dll) <= 1e-8 * (1.0 + abs(res.c_ll))
        assert dual_feasibility_check(res, net).max_residual <= 1e-7
        caps = np.array([g.capacity for g in net.generators])
        assert np.all(res.dispatch >= -1e-9)
        assert np.all(res.dispatch <= caps[:, None] + 1e-9)
        limits = np.array([ln.limit for ln in net.lines])
        assert np.all(np.abs(res.flows) <= limits[:, None] + 1e-7)


def test_uncongested_network_has_uniform_prices():
    rng = np.random.default_rng(904)
    for _ in range(5):
        net = _random_network(rng, int(rng.integers(3, 11)),
                              line_limit=1e4)
        res = solve_dcopf(net, "d1")
        spread = res.dlmp.max(axis=0) - res.dlmp.min(axis=0)
        assert spread.max() <= 1e-9


def test_generator_cost_scaling_scales_prices():
    # once on the congested two-bus case, once on a random draw
    nets = [_two_bus(limit=20.0, second_gen=True),
            _random_network(np.random.default_rng(77), 5)]
    for net in nets:
        base = solve_dcopf(net, "d1")
        scaled_gens = tuple(
            Generator(g.bus, 3.0 * np.asarray(g.cost_profile()),
                      g.capacity)
            for g in net.generators)
        net3 = Network(buses=net.buses, lines=net.lines,
                       generators=scaled_gens,
                       base_demand=net.base_demand,
                       evcs_bus=net.evcs_bus)
        scaled = solve_dcopf(net3, "d1")
        assert_allclose(scaled.dlmp, 3.0 * base.dlmp, rtol=1e-8,
                        atol=1e-7)
        assert_allclose(scaled.dispatch, base.dispatch, atol=1e-6)
        assert_allclose(scaled.c_ll, 3.0 * base.c_ll, rtol=1e-10)


def test_slack_line_limit_increase_is_a_noop():
    rng = np.random.default_rng(41)
    net = _random_network(rng, 6, extra_lines=0)
    base = solve_dcopf(net, "d1")
    margins = [ln.limit - np.abs(base.flows[li]).max()
               for li, ln in enumerate(net.lines)]
    li = int(np.argmax(margins))
    assert margins[li] > 1.0, "fixture needs at least one slack line"
    lines = list(net.lines)
    ln = lines[li]
    lines[li] = Line(ln.from_bus, ln.to_bus, ln.reactance, 1.5 * ln.limit)
    relaxed = solve_dcopf(Network(buses=net.buses, lines=tuple(lines),
                                  generators=net.generators,
                                  base_demand=net.base_demand,
                                  evcs_bus=net.evcs_bus), "d1")
    assert_allclose(relaxed.dlmp, base.dlmp, atol=1e-7)
    assert_allclose(relaxed.c_ll, base.c_ll, rtol=1e-9)


def test_joint_day_solve_matches_hourly():
    net = manhattan7()
    days = typical_days()
    from evcs_premium.units import kw_to_mw
    ev = kw_to_mw(days.demand_kw[0])
    hourly = solve_dcopf(net, days.day_ids[0], ev)
    joint = solve_dcopf(net, days.day_ids[0], ev, joint=True)
    assert abs(hourly.c_ll - joint.c_ll) <= 1e-9 * (1.0 + abs(hourly.c_ll))
    scale = 1.0 + np.abs(hourly.dlmp).max()
    assert np.abs(hourly.dlmp - joint.dlmp).max() <= 1e-9 * scale


def test_single_bus_tariff_is_the_marginal_cost():
    demand = {1: _flat(4.0)}
    net = Network(buses=(1,), lines=(), generators=(Generator(1, 7.0, 50.0),),
                  base_demand={d: demand for d in ("a", "b")}, evcs_bus=1)
    days = TypicalDaySet(likelihood=np.array([0.5, 0.5]),
                         demand_kw=np.full((2, 24), 200.0),
                         day_ids=("a", "b"))
    table = predetermined_tariff(net, days)
    assert_allclose(table, 7.0, atol=1e-9)
    # 7 $/MWh is 0.7 cents per kWh
    assert_allclose(evcs_tariff_cents(net, days), 0.7, atol=1e-10)


def test_fixture_congestion_appears_at_scale():
    net = manhattan7()
    days = typical_days().scaled(1000.0)
    results = per_day_dlmps(net, days)
    limits = np.array([ln.limit for ln in net.lines])
    congested = any(
        np.any(np.abs(res.flows) >= limits[:, None] - 1e-6)
        for res in results)
    assert congested
    spread = max(float((r.dlmp.max(axis=0) - r.dlmp.min(axis=0)).max())
                 for r in results)
    assert spread > 0.5


def test_fixture_binding_sets_vary_by_day():
    tariff = evcs_tariff_cents(manhattan7(), typical_days())
    assert tariff.shape == (4, 24)
    row_gaps = np.abs(tariff - tariff[0]).max(axis=1)
    assert np.any(row_gaps[1:] > 1e-6)


def test_overscaled_demand_reports_first_binding_hour():
    with pytest.raises(DcopfError, match="not servable, first binding hour"):
        per_day_dlmps(manhattan7(), typical_days().scaled(2000.0))


def test_network_validation():
    with pytest.raises(DcopfError, match="unknown bus"):
        Network(buses=(1, 2), lines=(Line(1, 3, 0.1, 10.0),),
                generators=(Generator(1, 10.0, 10.0),),
                base_demand={}, evcs_bus=1)
    with pytest.raises(DcopfError, match="positive reactance"):
        Network(buses=(1, 2), lines=(Line(1, 2, 0.0, 10.0),),
                generators=(Generator(1, 10.0, 10.0),),
                base_demand={}, evcs_bus=1)
    with pytest.raises(DcopfError, match="not connected"):
        Network(buses=(1, 2, 3), lines=(Line(1, 2, 0.1, 10.0),),
                generators=(Generator(1, 10.0, 10.0),),
                base_demand={}, evcs_bus=1)
    with pytest.raises(DcopfError, match="EVCS bus"):
        Network(buses=(1, 2), lines=(Line(1, 2, 0.1, 10.0),),
                generators=(Generator(1, 10.0, 10.0),),
                base_demand={}, evcs_bus=9)
    net = _two_bus(limit=200.0)
    with pytest.raises(DcopfError, match="unknown day"):
        net.demand_matrix("nope")
    with pytest.raises(DcopfError, match="hourly entries"):
        solve_dcopf(net, "d1", np.ones(23))
    with pytest.raises(DcopfError, match="nonnegative"):
        solve_dcopf(net, "d1", -np.ones(24))


def test_charging_demand_raises_system_cost():
    net = manhattan7()
    base = solve_dcopf(net, "weekday-a")
    loaded = solve_dcopf(net, "weekday-a", _flat(5.0))
    assert loaded.c_ll > base.c_ll + 1.0
