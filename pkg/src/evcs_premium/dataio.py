"""File formats: typical-day CSV, network/transition/policy JSON, tariffs.

Every emitted CSV opens with one '#' comment line naming the content and
its units, followed by the column header; loaders skip comment lines.
Parse errors name the offending 1-based file row. Floats are written with
repr so re-ingesting an emitted file reproduces the in-memory values
exactly, and JSON is dumped with sorted keys so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .analytic import PolicyFactors, TypicalDaySet
from .cvar import PolicyBox, RiskConfig
from .dcopf import Generator, HOURS, Line, Network
from .smp import SmpModel, TRANSITIONS, WeibullDist


class DataError(ValueError):
    pass


def _fmt(value):
    return repr(float(value))


def _read_csv_rows(path):
    """(header, rows) with rows as (file_row_number, list-of-cells)."""
    out = []
    header = None
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].startswith("#")):
                continue
            if header is None:
                header = [c.strip() for c in row]
            else:
                out.append((i, row))
    if header is None:
        raise DataError(f"{path}: no header row found")
    return header, out


DAYS_HEADER = ["day", "likelihood", "hour", "demand_kw"]
DAYS_COMMENT = ("# typical charging days; units: demand_kw in kW, "
                "likelihood dimensionless, hour in 1..24")


def load_typical_days(path) -> TypicalDaySet:
    """Strict reader for the day,likelihood,hour,demand_kw schema.

    Hours 1..24 must be complete per day, demand nonnegative, and each
    day's likelihood consistent across its rows. Likelihood sums within
    1e-9 of one are renormalized; anything farther is rejected. Days are
    canonicalized in sorted-id order, so row order never matters.
    """
    header, rows = _read_csv_rows(path)
    if header != DAYS_HEADER:
        raise DataError(
            f"{path}: header must be {','.join(DAYS_HEADER)}, "
            f"got {','.join(header)}")
    demand = {}
    likelihood = {}
    for rownum, cells in rows:
        if len(cells) != 4:
            raise DataError(f"{path} row {rownum}: expected 4 cells")
        day = cells[0].strip()
        try:
            phi = float(cells[1])
            hour = int(cells[2])
            d = float(cells[3])
        except ValueError as exc:
            raise DataError(f"{path} row {rownum}: {exc}") from None
        if not 1 <= hour <= HOURS:
            raise DataError(
                f"{path} row {rownum}: hour {hour} outside 1..{HOURS}")
        if d < 0:
            raise DataError(
                f"{path} row {rownum}: negative demand {d}")
        if phi < 0:
            raise DataError(
                f"{path} row {rownum}: negative likelihood {phi}")
        if day in likelihood and likelihood[day] != phi:
            raise DataError(
                f"{path} row {rownum}: day {day!r} likelihood {phi} "
                f"conflicts with earlier {likelihood[day]}")
        likelihood[day] = phi
        slot = demand.setdefault(day, {})
        if hour in slot:
            raise DataError(
                f"{path} row {rownum}: duplicate hour {hour} for day "
                f"{day!r}")
        slot[hour] = d
    if not demand:
        raise DataError(f"{path}: no data rows")
    for day, slot in demand.items():
        missing = sorted(set(range(1, HOURS + 1)) - set(slot))
        if missing:
            raise DataError(
                f"{path}: day {day!r} missing hours {missing}")
    ids = tuple(sorted(demand))
    phi = np.array([likelihood[day] for day in ids])
    total = phi.sum()
    if abs(total - 1.0) > 1e-9:
        raise DataError(
            f"{path}: likelihoods sum to {total!r}, not 1")
    phi = phi / total
    d = np.array([[demand[day][h] for h in range(1, HOURS + 1)]
                  for day in ids])
    return TypicalDaySet(likelihood=phi, demand_kw=d, day_ids=ids)


def write_typical_days(path, days: TypicalDaySet):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(DAYS_COMMENT + "\n")
        w.writerow(DAYS_HEADER)
        for s, day in enumerate(days.day_ids):
            for t in range(HOURS):
                w.writerow([day, _fmt(days.likelihood[s]), t + 1,
                            _fmt(days.demand_kw[s, t])])


def load_network(path) -> Network:
    """Network JSON with buses, lines, generators, base_demand, evcs_bus."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        buses = tuple(int(b) for b in doc["buses"])
        lines = tuple(Line(from_bus=int(ln["from"]), to_bus=int(ln["to"]),
                           reactance=float(ln["reactance"]),
                           limit=float(ln["limit"]))
                      for ln in doc["lines"])
        gens = []
        for g in doc["generators"]:
            cost = g["cost"]
            cost = (np.asarray(cost, dtype=float) if isinstance(cost, list)
                    else float(cost))
            gens.append(Generator(bus=int(g["bus"]), cost=cost,
                                  capacity=float(g["capacity"])))
        base = {}
        for day, per_bus in doc["base_demand"].items():
            base[day] = {int(b): np.asarray(v, dtype=float)
                         for b, v in per_bus.items()}
        evcs_bus = int(doc["evcs_bus"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed network document ({exc})") \
            from None
    return Network(buses=buses, lines=lines, generators=tuple(gens),
                   base_demand=base, evcs_bus=evcs_bus)


def write_network(path, network: Network):
    doc = {
        "buses": list(network.buses),
        "lines": [{"from": ln.from_bus, "to": ln.to_bus,
                   "reactance": ln.reactance, "limit": ln.limit}
                  for ln in network.lines],
        "generators": [
            {"bus": g.bus,
             "cost": (g.cost.tolist() if isinstance(g.cost, np.ndarray)
                      else g.cost),
             "capacity": g.capacity}
            for g in network.generators],
        "base_demand": {
            str(day): {str(bus): vec.tolist()
                       for bus, vec in per_bus.items()}
            for day, per_bus in network.base_demand.items()},
        "evcs_bus": network.evcs_bus,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_transitions(path) -> SmpModel:
    """Transition JSON: {"transitions": {"GI": {"shape":..,"scale":..}}}."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        trans = {key: WeibullDist(shape=float(spec["shape"]),
                                  scale=float(spec["scale"]))
                 for key, spec in doc["transitions"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(
            f"{path}: malformed transition document ({exc})") from None
    return SmpModel(transitions=trans)


def write_transitions(path, model: SmpModel):
    doc = {"transitions": {k: {"shape": model[k].shape,
                               "scale": model[k].scale}
                           for k in TRANSITIONS}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


_POLICY_FIELDS = ("p_attack", "loading", "risk_share", "history_coeff",
                  "attack_count", "penalty")


def _policy_from_doc(doc, origin):
    try:
        return PolicyFactors(**{f: doc[f] for f in _POLICY_FIELDS})
    except KeyError as exc:
        raise DataError(f"{origin}: policy document missing {exc}") \
            from None


def load_policy(path) -> PolicyFactors:
    """Policy JSON carrying exactly the PolicyFactors fields."""
    with open(path) as fh:
        doc = json.load(fh)
    return _policy_from_doc(doc, path)


def write_policy(path, policy: PolicyFactors):
    doc = {f: getattr(policy, f) for f in _POLICY_FIELDS}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_risk_config(path, *, alpha=None, bound_mode=None) -> RiskConfig:
    """Policy-box JSON: point factors plus factor intervals.

    Schema: {"policy": {...}, "box": {"p_attack": [lo, hi], "loading":
    [lo, hi], "history_coeff": [lo, hi]}, "alpha": A, "bound_mode": B}.
    alpha and bound_mode keys are optional and overridden by the keyword
    arguments when those are given.
    """
    with open(path) as fh:
        doc = json.load(fh)
    try:
        policy = _policy_from_doc(doc["policy"], path)
        box = doc["box"]
        policy_box = PolicyBox(p_attack=tuple(box["p_attack"]),
                               loading=tuple(box["loading"]),
                               history_coeff=tuple(box["history_coeff"]))
    except (KeyError, TypeError) as exc:
        raise DataError(
            f"{path}: malformed policy-box document ({exc})") from None
    if alpha is None:
        alpha = float(doc.get("alpha", 1.0))
    if bound_mode is None:
        bound_mode = doc.get("bound_mode", "expected")
    return RiskConfig(alpha=alpha, policy_box=policy_box, policy=policy,
                      bound_mode=bound_mode)


def write_risk_config(path, config: RiskConfig):
    doc = {
        "policy": {f: getattr(config.policy, f) for f in _POLICY_FIELDS},
        "box": {"p_attack": list(config.policy_box.p_attack),
                "loading": list(config.policy_box.loading),
                "history_coeff": list(config.policy_box.history_coeff)},
        "alpha": config.alpha,
        "bound_mode": config.bound_mode,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


TARIFF_COMMENT = "# station tariff; units: tariff in cents/kWh, hour in 1..24"


def write_tariff(path, tariff, day_ids=None):
    """Tariff CSV: flat (hour,tariff) or per-day (day,hour,tariff)."""
    tar = np.asarray(tariff, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(TARIFF_COMMENT + "\n")
        if tar.ndim == 1:
            w.writerow(["hour", "tariff"])
            for t in range(tar.size):
                w.writerow([t + 1, _fmt(tar[t])])
            return
        if day_ids is None:
            day_ids = tuple(range(tar.shape[0]))
        w.writerow(["day", "hour", "tariff"])
        for s, day in enumerate(day_ids):
            for t in range(tar.shape[1]):
                w.writerow([day, t + 1, _fmt(tar[s, t])])


def load_tariff(path):
    """Returns (tariff, day_ids): (T,) with day_ids None, or (S, T)."""
    header, rows = _read_csv_rows(path)
    if header == ["hour", "tariff"]:
        vec = np.full(HOURS, np.nan)
        for rownum, cells in rows:
            try:
                hour = int(cells[0])
                val = float(cells[1])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path} row {rownum}: {exc}") from None
            if not 1 <= hour <= HOURS:
                raise DataError(
                    f"{path} row {rownum}: hour {hour} outside 1..{HOURS}")
            vec[hour - 1] = val
        if np.any(np.isnan(vec)):
            raise DataError(f"{path}: incomplete hourly tariff")
        return vec, None
    if header == ["day", "hour", "tariff"]:
        table = {}
        for rownum, cells in rows:
            try:
                day = cells[0].strip()
                hour = int(cells[1])
                val = float(cells[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path} row {rownum}: {exc}") from None
            if not 1 <= hour <= HOURS:
                raise DataError(
                    f"{path} row {rownum}: hour {hour} outside 1..{HOURS}")
            table.setdefault(day, {})[hour] = val
        ids = tuple(sorted(table))
        out = np.full((len(ids), HOURS), np.nan)
        for s, day in enumerate(ids):
            for h, val in table[day].items():
                out[s, h - 1] = val
        if np.any(np.isnan(out)):
            raise DataError(f"{path}: incomplete per-day tariff")
        return out, ids
    raise DataError(
        f"{path}: tariff header must be hour,tariff or day,hour,tariff")


SWEEP_HEADER = ["scale", "alpha", "bound", "lambda_c_avg", "x_hat"]
SWEEP_COMMENT = ("# demand-scaling premium grid; units: lambda_c_avg and "
                 "x_hat in cents/kWh, scale and alpha dimensionless")


def write_sweep(path, rows):
    """Sweep CSV with the five pinned columns; infeasible cells emit nan."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(SWEEP_COMMENT + "\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([_fmt(r.scale), _fmt(r.alpha), r.bound,
                        _fmt(r.lambda_c_avg), _fmt(r.x_hat)])


def read_table(path):
    """Generic reader: list of dicts keyed by the header columns."""
    header, rows = _read_csv_rows(path)
    out = []
    for rownum, cells in rows:
        if len(cells) != len(header):
            raise DataError(
                f"{path} row {rownum}: expected {len(header)} cells")
        out.append(dict(zip(header, cells)))
    return out
