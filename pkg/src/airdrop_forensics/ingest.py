"""Parsing, validation, and normalization of raw transaction exports.

Four inputs feed the pipeline: token transfer rows, external transaction
rows, a contract dictionary (address -> name/category), and the airdrop
claim list. Everything lands in an EventStore: a sorted, deduplicated,
immutable-by-convention record that all downstream stages consume.

Token amounts are integers in the smallest unit (18 decimals); display
scaling happens only at report boundaries, never inside computations.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

TOKEN_DECIMALS = 18
TOKEN_SCALE = 10 ** TOKEN_DECIMALS

# Default study window: the ParaSwap PSP distribution period. Configurable.
DEFAULT_WINDOW_START = "2021-11-15"
DEFAULT_WINDOW_END = "2022-04-13"

Address = str  # "0x" + 40 lowercase hex digits

_HEX = set("0123456789abcdef")


class IngestError(Exception):
    """File-level ingestion failure: unreadable file or missing header."""


class DuplicateClaimError(IngestError):
    def __init__(self, address: Address):
        super().__init__(f"address {address} appears more than once in the claim list")
        self.address = address


def normalize_address(raw: str) -> Address:
    """Lowercase, 0x-prefix, and validate a 20-byte hex address."""
    s = raw.strip().lower()
    if s.startswith("0x"):
        s = s[2:]
    if len(s) != 40 or not set(s) <= _HEX:
        raise ValueError(f"not a 20-byte hex address: {raw!r}")
    return "0x" + s


def normalize_tx_hash(raw: str) -> str:
    s = raw.strip().lower()
    if s.startswith("0x"):
        s = s[2:]
    if len(s) != 64 or not set(s) <= _HEX:
        raise ValueError(f"not a 32-byte tx hash: {raw!r}")
    return "0x" + s


def format_token_amount(value: int) -> str:
    """Exact decimal rendering of a smallest-unit amount in display units."""
    sign = "-" if value < 0 else ""
    whole, frac = divmod(abs(value), TOKEN_SCALE)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{str(frac).zfill(TOKEN_DECIMALS).rstrip('0')}"


class EventKind(str, Enum):
    TOKEN_TRANSFER = "token_transfer"
    EXTERNAL_TX = "external_tx"
    INTERNAL_TX = "internal_tx"


class ContractCategory(str, Enum):
    AIRDROP = "Airdrop"
    TRADING_SWAP = "TradingSwap"
    STAKING = "Staking"
    LIQUIDITY_POOL = "LiquidityPool"
    TRADING_OR_LP = "TradingOrLP"
    CEX = "CEX"
    OTHER = "Other"


_CATEGORY_LOOKUP = {c.value.lower(): c for c in ContractCategory}


class Tier(int, Enum):
    T5200 = 5200
    T7800 = 7800
    T10400 = 10400

    @property
    def amount(self) -> int:
        """Face value in smallest token units."""
        return self.value * TOKEN_SCALE


@dataclass(frozen=True, slots=True)
class TransferEvent:
    tx_hash: str
    sender: Address
    receiver: Address
    value: int  # smallest unit, arbitrary precision
    timestamp: int  # UTC seconds
    block: int
    kind: EventKind
    log_index: int = 0

    @property
    def sort_key(self):
        return (self.timestamp, self.block, self.tx_hash, self.log_index)

    @property
    def dedup_key(self):
        # kind qualifies the key so a token transfer is never collapsed
        # with the external transaction that carried it.
        return (self.tx_hash, self.log_index, self.kind)


@dataclass(frozen=True, slots=True)
class ContractInfo:
    address: Address
    name: str
    category: ContractCategory


@dataclass(frozen=True, slots=True)
class ClaimRecord:
    address: Address
    tier: Tier
    amount: int
    claim_timestamp: int


@dataclass(frozen=True, slots=True)
class MalformedRow:
    line: int
    reason: str


@dataclass
class IngestConfig:
    window_start: str | None = DEFAULT_WINDOW_START  # ISO date, inclusive
    window_end: str | None = DEFAULT_WINDOW_END  # ISO date, inclusive
    allow_self_transfers: bool = False

    def window_bounds(self) -> tuple[int, int] | None:
        """(start_ts, end_ts) in UTC seconds, end extended to 23:59:59."""
        if self.window_start is None or self.window_end is None:
            return None
        start = _date_ts(self.window_start)
        end = _date_ts(self.window_end) + 86399
        if start >= end:
            raise ValueError(
                f"window start {self.window_start} is not before end {self.window_end}"
            )
        return start, end


def _date_ts(iso_day: str) -> int:
    d = date.fromisoformat(iso_day)
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


TRANSFER_COLUMNS = ("tx_hash", "from", "to", "value", "timestamp", "block")


def _iter_rows(path) -> tuple[list[tuple[int, dict]], bool]:
    """Read CSV-with-header or JSONL rows as (line_no, dict) pairs."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".jsonl":
        rows = []
        for i, line in enumerate(text.splitlines(), start=1):
            if line.strip():
                rows.append((i, line))
        return rows, True
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None:
        raise IngestError(f"{path}: empty file, missing header")
    return [(i, row) for i, row in enumerate(reader, start=2)], False


def _parse_transfer_row(row: dict, kind: EventKind, allow_self: bool) -> TransferEvent:
    tx_hash = normalize_tx_hash(row["tx_hash"])
    sender = normalize_address(row["from"])
    receiver = normalize_address(row["to"])
    value = int(str(row["value"]).strip())
    if value < 0:
        raise ValueError(f"negative value {value}")
    timestamp = int(str(row["timestamp"]).strip())
    block = int(str(row["block"]).strip())
    if block < 0:
        raise ValueError(f"negative block {block}")
    if sender == receiver and not allow_self:
        raise ValueError("self-transfer not allowed by config")
    log_index = int(str(row.get("log_index") or 0).strip())
    row_kind = row.get("kind")
    if row_kind:
        kind = EventKind(str(row_kind).strip())
    return TransferEvent(tx_hash, sender, receiver, value, timestamp, block, kind, log_index)


def parse_transfers(
    path,
    kind: EventKind = EventKind.TOKEN_TRANSFER,
    allow_self_transfers: bool = False,
) -> tuple[list[TransferEvent], list[MalformedRow]]:
    """Parse a transfer export (CSV with header, or JSONL).

    Returns (events, malformed). Valid rows come back normalized and sorted
    by (timestamp, block, tx_hash, log_index); bad rows are reported with
    their line number, never silently dropped. Only an unreadable file or a
    missing header raises.
    """
    rows, is_jsonl = _iter_rows(path)
    if not is_jsonl and rows:
        first = rows[0][1]
        missing = [c for c in TRANSFER_COLUMNS if c not in first]
        if missing:
            raise IngestError(f"{path}: header missing columns {missing}")
    events: list[TransferEvent] = []
    errors: list[MalformedRow] = []
    for line_no, row in rows:
        try:
            if is_jsonl:
                row = json.loads(row)
                if not isinstance(row, dict):
                    raise ValueError("JSONL row is not an object")
            missing = [c for c in TRANSFER_COLUMNS if c not in row or row[c] in (None, "")]
            if missing:
                raise ValueError(f"missing fields {missing}")
            events.append(_parse_transfer_row(row, kind, allow_self_transfers))
        except (ValueError, KeyError) as exc:
            errors.append(MalformedRow(line_no, str(exc)))
    events.sort(key=lambda e: e.sort_key)
    return events, errors


def parse_contracts(path) -> tuple[list[ContractInfo], list[MalformedRow]]:
    """Parse the contract dictionary CSV (address,name,category)."""
    rows, is_jsonl = _iter_rows(path)
    contracts: list[ContractInfo] = []
    errors: list[MalformedRow] = []
    seen: set[Address] = set()
    for line_no, row in rows:
        try:
            if is_jsonl:
                row = json.loads(row)
            address = normalize_address(row["address"])
            name = str(row["name"]).strip()
            category = _CATEGORY_LOOKUP.get(str(row["category"]).strip().lower())
            if category is None:
                raise ValueError(f"unknown category {row['category']!r}")
            if address in seen:
                raise ValueError(f"duplicate contract entry for {address}")
            seen.add(address)
            contracts.append(ContractInfo(address, name, category))
        except (ValueError, KeyError) as exc:
            errors.append(MalformedRow(line_no, str(exc)))
    contracts.sort(key=lambda c: c.address)
    return contracts, errors


def parse_claims(path) -> tuple[list[ClaimRecord], list[MalformedRow]]:
    """Parse the claim list CSV (address,tier,amount,timestamp).

    The amount must equal the tier face value in smallest units; mismatches
    are malformed rows. Duplicate addresses surface later, when
    build_event_store assembles the claim map.
    """
    rows, is_jsonl = _iter_rows(path)
    claims: list[ClaimRecord] = []
    errors: list[MalformedRow] = []
    for line_no, row in rows:
        try:
            if is_jsonl:
                row = json.loads(row)
            address = normalize_address(row["address"])
            tier = Tier(int(str(row["tier"]).strip()))
            amount = int(str(row["amount"]).strip())
            if amount != tier.amount:
                raise ValueError(
                    f"amount {amount} does not match tier face value {tier.amount}"
                )
            timestamp = int(str(row["timestamp"]).strip())
            claims.append(ClaimRecord(address, tier, amount, timestamp))
        except (ValueError, KeyError) as exc:
            errors.append(MalformedRow(line_no, str(exc)))
    claims.sort(key=lambda c: c.address)
    return claims, errors


@dataclass
class IngestReport:
    input_rows: int = 0
    stored: int = 0
    deduplicated: int = 0
    malformed: list[MalformedRow] = field(default_factory=list)
    window_excluded: int = 0
    token_events: int = 0
    external_events: int = 0
    internal_events: int = 0
    n_contracts: int = 0
    n_claims: int = 0
    claims_without_events: list[Address] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "input_rows": self.input_rows,
            "stored": self.stored,
            "deduplicated": self.deduplicated,
            "malformed": [{"line": m.line, "reason": m.reason} for m in self.malformed],
            "window_excluded": self.window_excluded,
            "token_events": self.token_events,
            "external_events": self.external_events,
            "internal_events": self.internal_events,
            "n_contracts": self.n_contracts,
            "n_claims": self.n_claims,
            "claims_without_events": sorted(self.claims_without_events),
        }
        return out


@dataclass
class EventStore:
    """Canonical, time-ordered event record. Treat as read-only once built."""

    events: list[TransferEvent]
    contracts: dict[Address, ContractInfo]
    claims: dict[Address, ClaimRecord]
    config: IngestConfig
    report: IngestReport

    def events_of_kind(self, kind: EventKind) -> list[TransferEvent]:
        return [e for e in self.events if e.kind == kind]

    def participants(self) -> set[Address]:
        out = set()
        for e in self.events:
            out.add(e.sender)
            out.add(e.receiver)
        return out


def build_event_store(
    token_events: list[TransferEvent],
    external_events: list[TransferEvent],
    contracts: list[ContractInfo],
    claims: list[ClaimRecord],
    config: IngestConfig | None = None,
    parse_errors: list[MalformedRow] | None = None,
) -> EventStore:
    """Merge parsed inputs into a sorted, deduplicated EventStore.

    Window violations are reported and excluded, duplicates (same tx hash,
    log index, and kind) collapse to the first occurrence, and claim
    addresses that never appear in any event are reported but kept. Raises
    DuplicateClaimError if an address claims twice.
    """
    config = config or IngestConfig()
    report = IngestReport(malformed=list(parse_errors or []))
    merged = sorted(token_events + external_events, key=lambda e: e.sort_key)
    report.input_rows = len(merged) + len(report.malformed)

    bounds = config.window_bounds()
    kept: list[TransferEvent] = []
    seen: set = set()
    for ev in merged:
        if bounds and not (bounds[0] <= ev.timestamp <= bounds[1]):
            report.window_excluded += 1
            report.malformed.append(
                MalformedRow(0, f"timestamp {ev.timestamp} outside study window ({ev.tx_hash})")
            )
            continue
        key = ev.dedup_key
        if key in seen:
            report.deduplicated += 1
            continue
        seen.add(key)
        kept.append(ev)

    claim_map: dict[Address, ClaimRecord] = {}
    for rec in claims:
        if rec.address in claim_map:
            raise DuplicateClaimError(rec.address)
        claim_map[rec.address] = rec
    contract_map = {c.address: c for c in contracts}

    store = EventStore(kept, contract_map, claim_map, config, report)
    participants = store.participants()
    report.claims_without_events = sorted(a for a in claim_map if a not in participants)
    report.stored = len(kept)
    report.token_events = sum(1 for e in kept if e.kind == EventKind.TOKEN_TRANSFER)
    report.external_events = sum(1 for e in kept if e.kind == EventKind.EXTERNAL_TX)
    report.internal_events = sum(1 for e in kept if e.kind == EventKind.INTERNAL_TX)
    report.n_contracts = len(contract_map)
    report.n_claims = len(claim_map)
    if report.claims_without_events:
        log.warning(
            "%d claim addresses never appear in any event",
            len(report.claims_without_events),
        )
    return store


def load_event_store(
    transfers_path,
    externals_path,
    contracts_path,
    claims_path,
    config: IngestConfig | None = None,
) -> EventStore:
    """Parse all four inputs from disk and build the store."""
    config = config or IngestConfig()
    token_events, err_t = parse_transfers(
        transfers_path, EventKind.TOKEN_TRANSFER, config.allow_self_transfers
    )
    external_events, err_e = parse_transfers(
        externals_path, EventKind.EXTERNAL_TX, config.allow_self_transfers
    )
    contracts, err_c = parse_contracts(contracts_path)
    claims, err_cl = parse_claims(claims_path)
    return build_event_store(
        token_events, external_events, contracts, claims, config,
        parse_errors=err_t + err_e + err_c + err_cl,
    )


# Canonical writers. Output is byte-stable: sorted rows, fixed column
# order, "\n" line endings. parse(write(parse(x))) round-trips exactly.

def write_transfers_csv(events: list[TransferEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(TRANSFER_COLUMNS) + ["log_index", "kind"])
        for e in sorted(events, key=lambda e: e.sort_key):
            w.writerow(
                [e.tx_hash, e.sender, e.receiver, e.value, e.timestamp, e.block,
                 e.log_index, e.kind.value]
            )


def write_contracts_csv(contracts: list[ContractInfo], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "name", "category"])
        for c in sorted(contracts, key=lambda c: c.address):
            w.writerow([c.address, c.name, c.category.value])


def write_claims_csv(claims: list[ClaimRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "tier", "amount", "timestamp"])
        for c in sorted(claims, key=lambda c: c.address):
            w.writerow([c.address, c.tier.value, c.amount, c.claim_timestamp])


def write_report_json(report: IngestReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
