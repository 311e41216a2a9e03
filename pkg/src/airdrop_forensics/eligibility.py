"""Airdrop eligibility simulation over an external-transaction history.

Replays the threshold-differential filter: an activity floor (transaction
count or native balance), a recency requirement on protocol interactions,
and a clique exclusion on interlinked applicant wallets. Alternative rule
presets (fair / differential) let the same history be re-screened under
earlier-generation policies, or re-run as a second allocation pass.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .ingest import Address, Tier

log = logging.getLogger(__name__)


class InsufficientHistoryError(Exception):
    pass


# Native-balance floors per chain, in native units.
DEFAULT_MIN_BALANCES = {
    "ethereum": 0.028,
    "bsc": 0.25,
    "polygon": 20.0,
    "avalanche": 0.9,
}

# Non-canonical stand-in: reward tier by protocol interaction count.
# (min interactions, tier), highest first; the lowest breakpoint matches
# the recency threshold so the table has no gaps for eligible addresses.
DEFAULT_TIER_TABLE: tuple[tuple[int, Tier], ...] = (
    (26, Tier.T10400),
    (11, Tier.T7800),
    (6, Tier.T5200),
)


@dataclass
class EligibilityRules:
    min_tx_count: int = 50
    min_native_balance: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MIN_BALANCES)
    )
    min_interactions: int = 6
    interaction_window_days: int = 183  # "last six months"
    max_clique: int | None = 5  # None disables the clique rule
    tier_table: tuple[tuple[int, Tier], ...] = DEFAULT_TIER_TABLE

    def __post_init__(self):
        if self.tier_table:
            lowest = min(score for score, _ in self.tier_table)
            if self.min_interactions < lowest:
                raise ValueError(
                    "tier table leaves a gap: breakpoints must cover every "
                    f"eligible score (lowest {lowest} > min_interactions "
                    f"{self.min_interactions})"
                )

    def tier_for(self, score: int) -> Tier:
        for threshold, tier in sorted(self.tier_table, reverse=True):
            if score >= threshold:
                return tier
        return min(self.tier_table)[1]

    @classmethod
    def threshold_differential(cls) -> "EligibilityRules":
        return cls()

    @classmethod
    def differential(cls) -> "EligibilityRules":
        """Tiered rewards without the strict filters."""
        return cls(min_tx_count=1, min_interactions=1, max_clique=None,
                   min_native_balance={},
                   tier_table=((26, Tier.T10400), (11, Tier.T7800), (1, Tier.T5200)))

    @classmethod
    def fair(cls) -> "EligibilityRules":
        """Single tier, no thresholds: every interacting address gets in."""
        return cls(min_tx_count=0, min_interactions=1, max_clique=None,
                   min_native_balance={}, tier_table=((1, Tier.T5200),))


@dataclass
class EligibilityHistory:
    """External transactions plus supplied balances; balances arrive as
    input because multi-chain reconstruction is out of scope."""

    events: list  # TransferEvent, kind external
    balances: dict[Address, dict[str, float]] = field(default_factory=dict)
    protocol_addresses: frozenset[Address] = frozenset()
    coverage_start: int = 0
    coverage_end: int = 0

    def __post_init__(self):
        if self.events and not self.coverage_start:
            self.coverage_start = min(e.timestamp for e in self.events)
        if self.events and not self.coverage_end:
            self.coverage_end = max(e.timestamp for e in self.events)


class _HistoryIndex:
    """Per-address counters assembled in one pass; shared read-only."""

    def __init__(self, history: EligibilityHistory):
        self.sent_ts: dict[Address, list[int]] = defaultdict(list)
        self.interaction_ts: dict[Address, list[int]] = defaultdict(list)
        for e in history.events:
            self.sent_ts[e.sender].append(e.timestamp)
            if e.receiver in history.protocol_addresses:
                self.interaction_ts[e.sender].append(e.timestamp)

    def tx_count(self, addr: Address, until: int) -> int:
        return sum(1 for t in self.sent_ts.get(addr, ()) if t <= until)

    def interactions(self, addr: Address, start: int, until: int) -> int:
        return sum(1 for t in self.interaction_ts.get(addr, ()) if start <= t <= until)


def clique_sizes(history: EligibilityHistory) -> dict[Address, int]:
    """Largest maximal clique containing each address, over the undirected
    projection of wallet-to-wallet external transfers (protocol endpoints
    excluded: hunters link their own accounts, not the router)."""
    from .forensics import _maximal_cliques

    adj: dict[Address, set[Address]] = defaultdict(set)
    for e in history.events:
        if e.sender == e.receiver:
            continue
        if e.sender in history.protocol_addresses or e.receiver in history.protocol_addresses:
            continue
        adj[e.sender].add(e.receiver)
        adj[e.receiver].add(e.sender)
    sizes: dict[Address, int] = defaultdict(lambda: 1)
    for clique in _maximal_cliques(dict(adj)):
        for a in clique:
            sizes[a] = max(sizes[a], len(clique))
    return dict(sizes)


@dataclass(frozen=True)
class RuleCheck:
    rule: str
    passed: bool
    detail: str


@dataclass
class EligibilityVerdict:
    address: Address
    eligible: bool
    tier: Tier | None
    reasons: list[RuleCheck]

    def to_row(self) -> list:
        return [
            self.address,
            int(self.eligible),
            self.tier.value if self.tier else "",
            ";".join(f"{r.rule}={'pass' if r.passed else 'fail'}" for r in self.reasons),
        ]


def evaluate(
    address: Address,
    history: EligibilityHistory,
    rules: EligibilityRules,
    snapshot_ts: int,
    clique_size: int | None = None,
    index: _HistoryIndex | None = None,
) -> EligibilityVerdict:
    """Screen one address at the snapshot instant.

    Eligible iff (tx count or native balance clears the floor) AND enough
    protocol interactions land inside the recency window AND the address
    is not part of an oversized clique. The ordered rule trace is complete:
    the verdict is exactly `all(check.passed)`.
    """
    window_start = snapshot_ts - rules.interaction_window_days * 86400
    if history.coverage_start > window_start:
        raise InsufficientHistoryError(
            f"history starts at {history.coverage_start}, after window start {window_start}"
        )
    idx = index or _HistoryIndex(history)

    checks: list[RuleCheck] = []
    tx_count = idx.tx_count(address, snapshot_ts)
    balances = history.balances.get(address, {})
    balance_ok = any(
        balances.get(chain, 0.0) >= floor
        for chain, floor in sorted(rules.min_native_balance.items())
    )
    floor_ok = tx_count >= rules.min_tx_count or balance_ok
    checks.append(
        RuleCheck(
            "activity_floor",
            floor_ok,
            f"tx_count={tx_count} (min {rules.min_tx_count}); "
            f"balance_floor={'met' if balance_ok else 'not met'}",
        )
    )

    interactions = idx.interactions(address, window_start, snapshot_ts)
    checks.append(
        RuleCheck(
            "interaction_recency",
            interactions >= rules.min_interactions,
            f"{interactions} protocol interactions in the last "
            f"{rules.interaction_window_days} days (min {rules.min_interactions})",
        )
    )

    if rules.max_clique is None:
        checks.append(RuleCheck("clique_exclusion", True, "clique rule disabled"))
    else:
        size = clique_size if clique_size is not None else clique_sizes(history).get(address, 1)
        checks.append(
            RuleCheck(
                "clique_exclusion",
                size <= rules.max_clique,
                f"largest clique containing address has size {size} "
                f"(max {rules.max_clique})",
            )
        )

    eligible = all(c.passed for c in checks)
    tier = rules.tier_for(interactions) if eligible else None
    return EligibilityVerdict(address, eligible, tier, checks)


@dataclass
class CampaignResult:
    verdicts: list[EligibilityVerdict]
    summary: dict

    def eligible_addresses(self) -> list[Address]:
        return sorted(v.address for v in self.verdicts if v.eligible)


def run_campaign(
    population: list[Address],
    history: EligibilityHistory,
    rules: EligibilityRules,
    snapshot_ts: int,
) -> CampaignResult:
    """Evaluate the whole applicant population with shared precomputation."""
    index = _HistoryIndex(history)
    sizes = clique_sizes(history) if rules.max_clique is not None else {}
    verdicts = [
        evaluate(a, history, rules, snapshot_ts, sizes.get(a, 1), index)
        for a in sorted(set(population))
    ]
    tier_counts = Counter(v.tier.value for v in verdicts if v.tier)
    exclusion = Counter(
        check.rule for v in verdicts if not v.eligible for check in v.reasons if not check.passed
    )
    summary = {
        "population": len(verdicts),
        "eligible": sum(1 for v in verdicts if v.eligible),
        "tier_counts": {str(t): tier_counts.get(t, 0) for t in sorted(tier_counts)},
        "exclusion_reasons": dict(sorted(exclusion.items())),
    }
    return CampaignResult(verdicts, summary)


def write_verdicts_csv(result: CampaignResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "eligible", "tier", "rule_trace"])
        for v in result.verdicts:
            w.writerow(v.to_row())


def write_summary_json(result: CampaignResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
