"""Directed weighted community graphs, weekly slices, and health metrics.

Two graphs matter: the token graph (who moved the governance token to
whom) and the external graph (plain value transfers, mostly pre-airdrop).
Parallel transfers between the same pair aggregate into a single weighted
edge, so every metric here is defined on the simple digraph.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from math import sqrt
from xml.sax.saxutils import escape

from .ingest import (
    Address,
    EventKind,
    EventStore,
    format_token_amount,
)

log = logging.getLogger(__name__)


class MetricUndefinedError(Exception):
    """Base for metric evaluations with no defined value."""


class UndefinedOnEmptyError(MetricUndefinedError):
    pass


class UndefinedOnDegenerateError(MetricUndefinedError):
    pass


class WindowEmptyError(Exception):
    pass


class NodeClass(str, Enum):
    INITIAL_MEMBER = "initial_member"
    LATER_MEMBER = "later_member"
    CONTRACT = "contract"
    PLAIN = "plain"


@dataclass
class EdgeStats:
    total_value: int
    tx_count: int
    first_ts: int
    last_ts: int


class CommunityGraph:
    """Aggregated directed graph with classed nodes.

    nodes: address -> NodeClass. edges: (from, to) -> EdgeStats, with
    parallel events folded into one edge.
    """

    def __init__(self):
        self.nodes: dict[Address, NodeClass] = {}
        self.edges: dict[tuple[Address, Address], EdgeStats] = {}
        self._out: dict[Address, set[Address]] = {}
        self._in: dict[Address, set[Address]] = {}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def add_node(self, addr: Address, node_class: NodeClass) -> None:
        if addr not in self.nodes:
            self.nodes[addr] = node_class
            self._out[addr] = set()
            self._in[addr] = set()

    def add_edge_event(self, sender: Address, receiver: Address, value: int, ts: int) -> None:
        key = (sender, receiver)
        stats = self.edges.get(key)
        if stats is None:
            self.edges[key] = EdgeStats(value, 1, ts, ts)
            self._out[sender].add(receiver)
            self._in[receiver].add(sender)
        else:
            stats.total_value += value
            stats.tx_count += 1
            stats.first_ts = min(stats.first_ts, ts)
            stats.last_ts = max(stats.last_ts, ts)

    def out_neighbors(self, addr: Address) -> set[Address]:
        return self._out.get(addr, set())

    def in_neighbors(self, addr: Address) -> set[Address]:
        return self._in.get(addr, set())

    def out_degree(self, addr: Address) -> int:
        return len(self._out.get(addr, ()))

    def in_degree(self, addr: Address) -> int:
        return len(self._in.get(addr, ()))

    def subgraph(self, keep: set[Address]) -> "CommunityGraph":
        """Induced subgraph on `keep`, preserving node classes."""
        sub = CommunityGraph()
        for addr in sorted(keep):
            if addr in self.nodes:
                sub.add_node(addr, self.nodes[addr])
        for (u, v), stats in self.edges.items():
            if u in sub.nodes and v in sub.nodes:
                sub.edges[(u, v)] = EdgeStats(
                    stats.total_value, stats.tx_count, stats.first_ts, stats.last_ts
                )
                sub._out[u].add(v)
                sub._in[v].add(u)
        return sub


def _node_class_for(addr: Address, store: EventStore, default: NodeClass) -> NodeClass:
    if addr in store.claims:
        return NodeClass.INITIAL_MEMBER
    if addr in store.contracts:
        return NodeClass.CONTRACT
    return default


def _build_graph(events, store: EventStore, default_class: NodeClass) -> CommunityGraph:
    g = CommunityGraph()
    for ev in events:
        for addr in (ev.sender, ev.receiver):
            g.add_node(addr, _node_class_for(addr, store, default_class))
        g.add_edge_event(ev.sender, ev.receiver, ev.value, ev.timestamp)
    return g


def build_token_graph(store: EventStore) -> CommunityGraph:
    """Token transfer graph: claimants are initial members, dictionary
    addresses are contracts, everyone else holds the token later."""
    return _build_graph(
        store.events_of_kind(EventKind.TOKEN_TRANSFER), store, NodeClass.LATER_MEMBER
    )


def build_external_graph(store: EventStore) -> CommunityGraph:
    """External transaction graph; non-claimant, non-contract nodes are
    plain addresses (they hold no token position by construction)."""
    return _build_graph(
        store.events_of_kind(EventKind.EXTERNAL_TX), store, NodeClass.PLAIN
    )


@dataclass
class GraphSlice:
    cutoff: int
    graph: CommunityGraph


def weekly_slices(
    store: EventStore,
    kind: EventKind = EventKind.TOKEN_TRANSFER,
    start: int | None = None,
    end: int | None = None,
    interval_days: int = 7,
) -> list[GraphSlice]:
    """Cumulative snapshots at every interval boundary from the origin.

    Cutoffs are start + k * interval for k >= 1, plus a final cutoff at
    `end` when the window does not divide evenly. Each slice contains all
    events with timestamp <= cutoff, so node and edge sets are monotone
    across slices. Raises WindowEmptyError when no event falls in
    [start, end].
    """
    events = store.events_of_kind(kind)
    bounds = store.config.window_bounds()
    if start is None:
        start = bounds[0] if bounds else (events[0].timestamp if events else 0)
    if end is None:
        end = bounds[1] if bounds else (events[-1].timestamp if events else 0)
    if start >= end:
        raise ValueError("window start must precede end")
    in_window = [e for e in events if start <= e.timestamp <= end]
    if not in_window:
        raise WindowEmptyError(f"no {kind.value} events in [{start}, {end}]")

    interval = interval_days * 86400
    cutoffs = list(range(start + interval, end + 1, interval))
    if not cutoffs or cutoffs[-1] != end:
        cutoffs.append(end)

    slices = []
    default = NodeClass.LATER_MEMBER if kind == EventKind.TOKEN_TRANSFER else NodeClass.PLAIN
    for cutoff in cutoffs:
        chunk = [e for e in in_window if e.timestamp <= cutoff]
        slices.append(GraphSlice(cutoff, _build_graph(chunk, store, default)))
    return slices


def reciprocity(graph: CommunityGraph) -> float:
    """Fraction of directed edges whose reverse edge also exists.

    Self-loops are excluded from both counts.
    """
    edges = [(u, v) for (u, v) in graph.edges if u != v]
    if not edges:
        raise UndefinedOnEmptyError("reciprocity needs at least one non-loop edge")
    mutual = sum(1 for (u, v) in edges if (v, u) in graph.edges)
    return mutual / len(edges)


def degree_assortativity(graph: CommunityGraph, mode: str = "out_in") -> float:
    """Pearson correlation of endpoint degrees over directed edges.

    Default pairs out-degree(source) with in-degree(target); mode
    "total_total" uses total degree on both ends for sensitivity checks.
    Degrees come from the aggregated simple digraph. Raises
    UndefinedOnDegenerateError when either marginal has zero variance.
    """
    if graph.n_edges < 2:
        raise UndefinedOnDegenerateError("assortativity needs at least two edges")
    if mode == "out_in":
        xs = [graph.out_degree(u) for (u, v) in graph.edges]
        ys = [graph.in_degree(v) for (u, v) in graph.edges]
    elif mode == "total_total":
        xs = [graph.out_degree(u) + graph.in_degree(u) for (u, v) in graph.edges]
        ys = [graph.out_degree(v) + graph.in_degree(v) for (u, v) in graph.edges]
    else:
        raise ValueError(f"unknown assortativity mode {mode!r}")
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        raise UndefinedOnDegenerateError("zero variance in a degree marginal")
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / sqrt(vx * vy)


def strongly_connected_components(graph: CommunityGraph) -> list[list[Address]]:
    """Iterative Tarjan over sorted nodes; deterministic output order."""
    index: dict[Address, int] = {}
    low: dict[Address, int] = {}
    on_stack: set[Address] = set()
    stack: list[Address] = []
    sccs: list[list[Address]] = []
    counter = 0

    for root in sorted(graph.nodes):
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(sorted(graph.out_neighbors(root))))]
        while work:
            node, succs = work[-1]
            advanced = False
            for succ in succs:
                if succ not in index:
                    index[succ] = low[succ] = counter
                    counter += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(sorted(graph.out_neighbors(succ)))))
                    advanced = True
                    break
                if succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if advanced:
                continue
            work.pop()
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                sccs.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    return sccs


def attracting_components(graph: CommunityGraph) -> int:
    """Count terminal strongly connected components: once a random walker
    enters one, no out-edge leaves it. An isolated sink node counts."""
    count = 0
    for comp in strongly_connected_components(graph):
        members = set(comp)
        if all(graph.out_neighbors(u) <= members for u in comp):
            count += 1
    return count


@dataclass
class MetricSeries:
    cutoffs: list[int] = field(default_factory=list)
    reciprocity: list[float | None] = field(default_factory=list)
    assortativity: list[float | None] = field(default_factory=list)
    attracting: list[int] = field(default_factory=list)
    nodes: list[int] = field(default_factory=list)
    edges: list[int] = field(default_factory=list)

    def to_json_rows(self) -> list[dict]:
        rows = []
        for i, cutoff in enumerate(self.cutoffs):
            rows.append(
                {
                    "cutoff": _iso(cutoff),
                    "cutoff_ts": cutoff,
                    "reciprocity": self.reciprocity[i],
                    "assortativity": self.assortativity[i],
                    "attracting_components": self.attracting[i],
                    "nodes": self.nodes[i],
                    "edges": self.edges[i],
                }
            )
        return rows


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def metric_series(slices: list[GraphSlice], assortativity_mode: str = "out_in") -> MetricSeries:
    """Evaluate all four panels per slice; undefined metrics become None."""
    series = MetricSeries()
    for sl in slices:
        series.cutoffs.append(sl.cutoff)
        try:
            series.reciprocity.append(reciprocity(sl.graph))
        except MetricUndefinedError:
            series.reciprocity.append(None)
        try:
            series.assortativity.append(degree_assortativity(sl.graph, assortativity_mode))
        except MetricUndefinedError:
            series.assortativity.append(None)
        series.attracting.append(attracting_components(sl.graph))
        series.nodes.append(sl.graph.n_nodes)
        series.edges.append(sl.graph.n_edges)
    return series


def write_metric_series_json(series: MetricSeries, path) -> None:
    with open(path, "w") as fh:
        json.dump(series.to_json_rows(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# Exports. Edge weight is the aggregate value in display token units;
# node_class rides along as an attribute for coloring.

_DOT_COLORS = {
    NodeClass.INITIAL_MEMBER: "orange",
    NodeClass.LATER_MEMBER: "skyblue",
    NodeClass.CONTRACT: "gray",
    NodeClass.PLAIN: "white",
}


def to_graphml(graph: CommunityGraph) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="d0" for="node" attr.name="node_class" attr.type="string"/>',
        '  <key id="d1" for="edge" attr.name="weight" attr.type="double"/>',
        '  <key id="d2" for="edge" attr.name="tx_count" attr.type="int"/>',
        '  <graph edgedefault="directed">',
    ]
    for addr in sorted(graph.nodes):
        lines.append(f'    <node id="{escape(addr)}">')
        lines.append(f'      <data key="d0">{graph.nodes[addr].value}</data>')
        lines.append("    </node>")
    for (u, v) in sorted(graph.edges):
        stats = graph.edges[(u, v)]
        lines.append(f'    <edge source="{escape(u)}" target="{escape(v)}">')
        lines.append(f'      <data key="d1">{format_token_amount(stats.total_value)}</data>')
        lines.append(f'      <data key="d2">{stats.tx_count}</data>')
        lines.append("    </edge>")
    lines.append("  </graph>")
    lines.append("</graphml>")
    return "\n".join(lines) + "\n"


def to_dot(graph: CommunityGraph, name: str = "community") -> str:
    lines = [f"digraph {name} {{", "  node [style=filled];"]
    for addr in sorted(graph.nodes):
        cls = graph.nodes[addr]
        lines.append(
            f'  "{addr}" [node_class="{cls.value}", fillcolor="{_DOT_COLORS[cls]}"];'
        )
    for (u, v) in sorted(graph.edges):
        stats = graph.edges[(u, v)]
        lines.append(
            f'  "{u}" -> "{v}" [weight="{format_token_amount(stats.total_value)}", '
            f'tx_count="{stats.tx_count}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_graph(graph: CommunityGraph, path, fmt: str = "graphml", name: str = "community") -> None:
    if fmt == "graphml":
        text = to_graphml(graph)
    elif fmt == "dot":
        text = to_dot(graph, name)
    else:
        raise ValueError(f"unsupported graph format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


# Canonical JSON round-trip used for stage artifacts between CLI commands.

def graph_to_json(graph: CommunityGraph) -> dict:
    return {
        "nodes": [[a, graph.nodes[a].value] for a in sorted(graph.nodes)],
        "edges": [
            [u, v, s.total_value, s.tx_count, s.first_ts, s.last_ts]
            for (u, v), s in sorted(graph.edges.items())
        ],
    }


def graph_from_json(payload: dict) -> CommunityGraph:
    g = CommunityGraph()
    for addr, cls in payload["nodes"]:
        g.add_node(addr, NodeClass(cls))
    for u, v, total, count, first_ts, last_ts in payload["edges"]:
        g.edges[(u, v)] = EdgeStats(total, count, first_ts, last_ts)
        g._out[u].add(v)
        g._in[v].add(u)
    return g


def write_graph_json(graph: CommunityGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_json(graph), fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_graph_json(path) -> CommunityGraph:
    with open(path) as fh:
        return graph_from_json(json.load(fh))
