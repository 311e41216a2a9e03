"""Descriptive tables and distributions over the reconstructed community.

Covers the per-tier behavior table, attrition, contract popularity, tier
composition per cluster, day-resolution holding timelines, and Gaussian
KDEs of activity period/quantity samples (plot-ready arrays, no images).
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .flows import OperationKind, TransactionFlow
from .ingest import Address, ClaimRecord, EventStore, Tier, format_token_amount

log = logging.getLogger(__name__)


class EmptySampleError(ValueError):
    pass


# Behavior-table columns: action name -> operation that counts as doing it.
ACTION_OPS = {
    "selling": OperationKind.SELL,
    "buying": OperationKind.BUY,
    "staking": OperationKind.STAKE,
    "sending": OperationKind.SEND,
    "receiving": OperationKind.RECEIVE,
    "lp": OperationKind.LP_ADD,
}


def behavior_table(
    flows: dict[Address, TransactionFlow], claims: dict[Address, ClaimRecord]
) -> dict[Tier, dict[str, float]]:
    """Per tier, the fraction of claimants performing each action at least
    once. Receiving ignores the claim payout itself."""
    performed: dict[Tier, Counter] = {t: Counter() for t in Tier}
    claimed: Counter = Counter()
    for addr, rec in claims.items():
        claimed[rec.tier] += 1
        flow = flows.get(addr)
        if flow is None:
            continue
        ops = {e.op for e in flow.events if not (e.op == OperationKind.RECEIVE and e.is_claim)}
        for action, op in ACTION_OPS.items():
            if op in ops:
                performed[rec.tier][action] += 1
    table: dict[Tier, dict[str, float]] = {}
    for tier in Tier:
        n = claimed[tier]
        table[tier] = {
            action: (performed[tier][action] / n if n else 0.0) for action in ACTION_OPS
        }
    return table


@dataclass
class HoldingTimeline:
    """End-of-day balance/staked/LP positions across the study window."""

    address: Address
    start_ts: int
    balance: list[int]
    staked: list[int]
    lp: list[int]

    @staticmethod
    def period_days(series: list[int]) -> int:
        """Days with a nonzero end-of-day position: how long the activity
        was actually carried."""
        return sum(1 for v in series if v > 0)

    @staticmethod
    def quantity(series: list[int]) -> float:
        """Time-weighted mean position over the active days, display units."""
        active = [v for v in series if v > 0]
        if not active:
            return 0.0
        return sum(active) / len(active) / 10**18

    def final_holdings(self) -> int:
        return self.balance[-1] + self.staked[-1] + self.lp[-1]

    def holdings_at(self, day: int) -> int:
        day = max(0, min(day, len(self.balance) - 1))
        return self.balance[day] + self.staked[day] + self.lp[day]


def build_timeline(flow: TransactionFlow, start_ts: int, end_ts: int) -> HoldingTimeline:
    days = (end_ts - start_ts) // 86400 + 1
    balance = [0] * days
    staked = [0] * days
    lp = [0] * days
    bal = stk = lpv = 0
    events = iter(flow.events)
    ev = next(events, None)
    for day in range(days):
        day_end = start_ts + (day + 1) * 86400 - 1
        while ev is not None and ev.timestamp <= day_end:
            op = ev.op
            if op in (OperationKind.RECEIVE, OperationKind.BUY):
                bal += ev.amount
            elif op in (OperationKind.SELL, OperationKind.SEND):
                bal -= ev.amount
            elif op == OperationKind.STAKE:
                bal -= ev.amount
                stk += ev.amount
            elif op == OperationKind.UNSTAKE:
                stk -= ev.amount
                bal += ev.amount
            elif op == OperationKind.LP_ADD:
                bal -= ev.amount
                lpv += ev.amount
            elif op == OperationKind.LP_REMOVE:
                lpv -= ev.amount
                bal += ev.amount
            ev = next(events, None)
        balance[day] = bal
        staked[day] = stk
        lp[day] = lpv
    return HoldingTimeline(flow.address, start_ts, balance, staked, lp)


def build_timelines(
    flows: dict[Address, TransactionFlow], start_ts: int, end_ts: int
) -> dict[Address, HoldingTimeline]:
    return {a: build_timeline(f, start_ts, end_ts) for a, f in sorted(flows.items())}


@dataclass
class AttritionReport:
    left_count: int
    left_pct: float
    per_tier_pct: dict[Tier, float]
    outflow_tokens: int
    outflow_pct: float
    claimed_total: int

    def to_json(self) -> dict:
        return {
            "left_count": self.left_count,
            "left_pct": self.left_pct,
            "per_tier_pct": {str(t.value): v for t, v in sorted(self.per_tier_pct.items())},
            "outflow_tokens": self.outflow_tokens,
            "outflow_display": format_token_amount(self.outflow_tokens),
            "outflow_pct": self.outflow_pct,
            "claimed_total": self.claimed_total,
            "claimed_display": format_token_amount(self.claimed_total),
        }


def claimed_total_for_counts(counts: dict[Tier, int]) -> int:
    """Total claimed in smallest units for given per-tier claim counts."""
    return sum(tier.amount * n for tier, n in counts.items())


def attrition(
    timelines: dict[Address, HoldingTimeline],
    claims: dict[Address, ClaimRecord],
    cutoff_ts: int,
) -> AttritionReport:
    """Who gave away everything. An initial member has left when balance,
    staked, and LP positions are all zero at the cutoff; staked/LP tokens
    count as still in the community (the value stays locked). Outflow is
    exactly claimed minus what initial members still hold, in integer
    units."""
    left = 0
    left_by_tier: Counter = Counter()
    claimed_by_tier: Counter = Counter()
    held = 0
    claimed_total = 0
    for addr, rec in claims.items():
        claimed_by_tier[rec.tier] += 1
        claimed_total += rec.amount
        tl = timelines.get(addr)
        if tl is None:
            left += 1
            left_by_tier[rec.tier] += 1
            continue
        day = (cutoff_ts - tl.start_ts) // 86400
        holdings = tl.holdings_at(day)
        held += holdings
        if holdings == 0:
            left += 1
            left_by_tier[rec.tier] += 1
    n = len(claims)
    per_tier = {
        tier: (left_by_tier[tier] / claimed_by_tier[tier] if claimed_by_tier[tier] else 0.0)
        for tier in Tier
    }
    outflow = claimed_total - held
    return AttritionReport(
        left_count=left,
        left_pct=left / n if n else 0.0,
        per_tier_pct=per_tier,
        outflow_tokens=outflow,
        outflow_pct=outflow / claimed_total if claimed_total else 0.0,
        claimed_total=claimed_total,
    )


@dataclass(frozen=True)
class ContractUsage:
    name: str
    category: str
    address: Address
    interactions: int


def top_contracts(store: EventStore, k: int = 10) -> list[ContractUsage]:
    """Contracts ranked by how many distinct initial members interacted
    with them, over the full event history."""
    users: dict[Address, set[Address]] = defaultdict(set)
    for ev in store.events:
        if ev.sender in store.contracts and ev.receiver in store.claims:
            users[ev.sender].add(ev.receiver)
        if ev.receiver in store.contracts and ev.sender in store.claims:
            users[ev.receiver].add(ev.sender)
    rows = [
        ContractUsage(
            store.contracts[addr].name,
            store.contracts[addr].category.value,
            addr,
            len(members),
        )
        for addr, members in users.items()
    ]
    rows.sort(key=lambda r: (-r.interactions, r.address))
    return rows[:k]


def tier_composition(
    assignment: ClusterAssignment, claims: dict[Address, ClaimRecord]
) -> dict[int, dict[Tier, float]]:
    """Stacked tier fractions per cluster, each summing to 1."""
    counts: dict[int, Counter] = defaultdict(Counter)
    for addr, cluster in assignment.labels.items():
        rec = claims.get(addr)
        if rec is not None:
            counts[cluster][rec.tier] += 1
    out: dict[int, dict[Tier, float]] = {}
    for cluster in sorted(counts):
        total = sum(counts[cluster].values())
        out[cluster] = {tier: counts[cluster][tier] / total for tier in Tier}
    return out


def aggregate_shares(shares: list[float]) -> float:
    """Plain left-to-right sum so re-aggregations reproduce their inputs
    exactly (no reordering, no compensation)."""
    total = 0.0
    for s in shares:
        total += s
    return total


@dataclass
class DensityEstimate:
    grid: list[float]
    density: list[float]
    bandwidth: float

    def integral(self) -> float:
        trapezoid = getattr(np, "trapezoid", np.trapz)
        return float(trapezoid(self.density, self.grid))

    def to_json(self) -> dict:
        return {
            "grid": self.grid,
            "density": self.density,
            "bandwidth": self.bandwidth,
            "integral": self.integral(),
        }


def silverman_bandwidth(samples) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5), with a unit fallback when the
    sample is degenerate (all identical)."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    std = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std if std > 0 else 1.0
    return 0.9 * spread * n ** (-0.2)


def kde(samples, bandwidth: float | None = None, grid_size: int = 512) -> DensityEstimate:
    """Gaussian kernel density on a fixed grid spanning the samples plus
    three bandwidths either side, so the curve integrates to ~1."""
    if len(samples) == 0:
        raise EmptySampleError("cannot estimate a density from an empty sample")
    x = np.asarray(samples, dtype=float)
    h = bandwidth if bandwidth is not None else silverman_bandwidth(x)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * h * np.sqrt(2 * np.pi))
    return DensityEstimate(grid.tolist(), dens.tolist(), float(h))


def period_quantity_samples(
    timelines: dict[Address, HoldingTimeline], addresses
) -> dict[str, list[float]]:
    """Period (days) and quantity (mean tokens held) samples per activity
    for a member group; addresses with no activity in a series contribute
    nothing to it."""
    out: dict[str, list[float]] = {
        f"{series}_{measure}": []
        for series in ("balance", "staking", "lp")
        for measure in ("period", "quantity")
    }
    for addr in sorted(addresses):
        tl = timelines.get(addr)
        if tl is None:
            continue
        for series_name, series in (
            ("balance", tl.balance),
            ("staking", tl.staked),
            ("lp", tl.lp),
        ):
            period = HoldingTimeline.period_days(series)
            if period > 0:
                out[f"{series_name}_period"].append(float(period))
                out[f"{series_name}_quantity"].append(HoldingTimeline.quantity(series))
    return out


def write_behavior_table_csv(table: dict[Tier, dict[str, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tier"] + list(ACTION_OPS))
        for tier in Tier:
            w.writerow([tier.value] + [repr(table[tier][a]) for a in ACTION_OPS])


def write_behavior_table_json(table: dict[Tier, dict[str, float]], path) -> None:
    payload = {str(t.value): table[t] for t in Tier}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_top_contracts_csv(rows: list[ContractUsage], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "category", "address", "interactions"])
        for r in rows:
            w.writerow([r.name, r.category, r.address, r.interactions])


def write_tier_composition_csv(comp: dict[int, dict[Tier, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster"] + [str(t.value) for t in Tier])
        for cluster in sorted(comp):
            w.writerow([cluster] + [repr(comp[cluster][t]) for t in Tier])


def write_attrition_json(report: AttritionReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_kde_json(estimates: dict[str, DensityEstimate], path) -> None:
    payload = {name: est.to_json() for name, est in sorted(estimates.items())}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
