"""Batch pipeline frontend: one config file, staged file artifacts.

Every command reads the artifacts of its upstream stages from the output
directory and writes its own; nothing is held in memory between commands,
so each intermediate is reproducible and diffable. Outputs are
byte-deterministic for a fixed config and seed.

Exit codes: 0 success, 1 validation failure (machine-readable JSON on
stderr), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import clustering, eligibility, flows, forensics, graphs, ingest, stats, synth

log = logging.getLogger("airdrop_forensics.cli")


class ConfigInvalidError(Exception):
    code = "config_invalid"


class MissingArtifactError(Exception):
    code = "missing_artifact"


DEFAULT_CONFIG = {
    "inputs": {
        "token_transfers": None,
        "external_txs": None,
        "contracts": None,
        "claims": None,
        "balances": None,
    },
    "window": {"start": ingest.DEFAULT_WINDOW_START, "end": ingest.DEFAULT_WINDOW_END},
    "allow_self_transfers": False,
    "slice_interval_days": 7,
    "weights": {op.value: 1.0 for op in flows.OPERATION_ORDER},
    "clustering": {"linkage": "single", "k_min": 2, "k_max": 20},
    "detectors": {
        "min_chain_len": 3,
        "max_chain_in": 2,
        "accumulation_slack": 0,
        "min_spokes": 5,
        "forward_frac": 0.9,
        "min_beneficiaries": 5,
        "min_sponsors": 2,
        "min_cautious_size": 6,
        "max_cautious_density": 0.2,
        "min_clique": 3,
        "max_clique": 5,
    },
    "eligibility": {
        "preset": "threshold_differential",
        "min_tx_count": 50,
        "min_interactions": 6,
        "interaction_window_days": 183,
        "max_clique": 5,
    },
    "synth": {
        "seed": 7,
        "population_total": 400,
        "tier_mix": [0.3, 0.5, 0.2],
        "noise_rate": 0.05,
        "patterns": [
            {"kind": "chain", "count": 2, "size": 4},
            {"kind": "sunflower", "count": 2, "size": 8},
            {"kind": "sunflower_relay", "count": 1, "size": 8},
            {"kind": "staging_aggregation", "count": 1, "size": 8},
            {"kind": "sponsorship_clique", "count": 1, "size": 17},
            {"kind": "cautious_clique", "count": 1, "size": 19},
            {"kind": "blatant_clique", "count": 2, "size": 5},
        ],
    },
    "output_dir": "out",
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    config = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigInvalidError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalidError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigInvalidError("config root must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
        config = _merge(DEFAULT_CONFIG, user)
    try:
        ingest.IngestConfig(config["window"]["start"], config["window"]["end"]).window_bounds()
    except ValueError as exc:
        raise ConfigInvalidError(f"bad study window: {exc}") from exc
    if set(config["weights"]) != {op.value for op in flows.OPERATION_ORDER}:
        raise ConfigInvalidError("weights must name exactly the eight operation kinds")
    if any(w <= 0 for w in config["weights"].values()):
        raise ConfigInvalidError("weights must be strictly positive")
    return config


def write_canonical_config(config: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ingest_config(config: dict) -> ingest.IngestConfig:
    return ingest.IngestConfig(
        config["window"]["start"],
        config["window"]["end"],
        config["allow_self_transfers"],
    )


def _weights(config: dict) -> tuple[float, ...]:
    return tuple(config["weights"][op.value] for op in flows.OPERATION_ORDER)


def _detector_config(config: dict) -> forensics.DetectorConfig:
    return forensics.DetectorConfig(**config["detectors"])


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"{path} not found: run the {stage} stage first"
        )
    return path


def _input_paths(config: dict, out: Path) -> dict:
    inputs = config["inputs"]
    if all(inputs.get(k) for k in ("token_transfers", "external_txs", "contracts", "claims")):
        return {k: Path(inputs[k]) for k in inputs if inputs[k]}
    synth_dir = out / "synth"
    if (synth_dir / "token_transfers.csv").exists():
        return {
            "token_transfers": synth_dir / "token_transfers.csv",
            "external_txs": synth_dir / "external_txs.csv",
            "contracts": synth_dir / "contracts.csv",
            "claims": synth_dir / "claims.csv",
        }
    raise MissingArtifactError(
        "no input files configured and no synth artifacts present: "
        "set inputs.* in the config or run the synth stage"
    )


def _load_store_from_ingest(config: dict, out: Path) -> ingest.EventStore:
    stage = _require(out / "ingest", "ingest")
    events, errs = ingest.parse_transfers(
        _require(stage / "events.csv", "ingest"),
        allow_self_transfers=config["allow_self_transfers"],
    )
    contracts, errs_c = ingest.parse_contracts(_require(stage / "contracts.csv", "ingest"))
    claims, errs_cl = ingest.parse_claims(_require(stage / "claims.csv", "ingest"))
    if errs or errs_c or errs_cl:
        raise MissingArtifactError("ingest artifacts are corrupt; re-run the ingest stage")
    return ingest.build_event_store(events, [], contracts, claims, _ingest_config(config))


def cmd_synth(config: dict, out: Path, args) -> None:
    section = config["synth"]
    seed = args.seed if args.seed is not None else section["seed"]
    spec = synth.ScenarioSpec(
        seed=seed,
        population=synth.population_from_shares(section["population_total"]),
        tier_mix=tuple(section["tier_mix"]),
        patterns=[
            synth.PatternSpec(forensics.PatternKind(p["kind"]), p.get("count", 1), p.get("size", 0))
            for p in section["patterns"]
        ],
        noise_rate=section["noise_rate"],
        window_start=config["window"]["start"],
        window_end=config["window"]["end"],
    )
    scenario = synth.generate(spec)
    scenario.write(out / "synth")
    log.info(
        "synth: %d claimants, %d token events, %d external events, %d planted instances",
        len(scenario.claims), len(scenario.token_events),
        len(scenario.external_events), len(scenario.truth.pattern_instances),
    )


def cmd_ingest(config: dict, out: Path, args) -> None:
    paths = _input_paths(config, out)
    for key in ("token_transfers", "external_txs", "contracts", "claims"):
        if not paths[key].exists():
            raise MissingArtifactError(f"input file {paths[key]} does not exist")
    store = ingest.load_event_store(
        paths["token_transfers"], paths["external_txs"],
        paths["contracts"], paths["claims"], _ingest_config(config),
    )
    stage = out / "ingest"
    stage.mkdir(parents=True, exist_ok=True)
    ingest.write_transfers_csv(store.events, stage / "events.csv")
    ingest.write_contracts_csv(list(store.contracts.values()), stage / "contracts.csv")
    ingest.write_claims_csv(list(store.claims.values()), stage / "claims.csv")
    ingest.write_report_json(store.report, stage / "report.json")
    log.info("ingest: %d events stored, %d claims, %d contracts",
             store.report.stored, store.report.n_claims, store.report.n_contracts)


def cmd_graph(config: dict, out: Path, args) -> None:
    store = _load_store_from_ingest(config, out)
    stage = out / "graph"
    stage.mkdir(parents=True, exist_ok=True)
    token_graph = graphs.build_token_graph(store)
    external_graph = graphs.build_external_graph(store)
    graphs.write_graph_json(token_graph, stage / "token_graph.json")
    graphs.write_graph_json(external_graph, stage / "external_graph.json")
    fmt = args.format if args.format in ("graphml", "dot") else "graphml"
    graphs.write_graph(token_graph, stage / f"token_graph.{fmt}", fmt, "token_graph")
    graphs.write_graph(external_graph, stage / f"external_graph.{fmt}", fmt, "external_graph")
    interval = args.slice_interval or config["slice_interval_days"]
    try:
        slices = graphs.weekly_slices(store, interval_days=interval)
        series = graphs.metric_series(slices)
        graphs.write_metric_series_json(series, stage / "metric_series.json")
    except graphs.WindowEmptyError:
        log.warning("no token events in the study window; metric series skipped")
        graphs.write_metric_series_json(graphs.MetricSeries(), stage / "metric_series.json")
    summary = {
        "token_graph": {"nodes": token_graph.n_nodes, "edges": token_graph.n_edges},
        "external_graph": {"nodes": external_graph.n_nodes, "edges": external_graph.n_edges},
        "slice_interval_days": interval,
    }
    with open(stage / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("graph: token %d/%d, external %d/%d (nodes/edges)",
             token_graph.n_nodes, token_graph.n_edges,
             external_graph.n_nodes, external_graph.n_edges)


def cmd_cluster(config: dict, out: Path, args) -> None:
    store = _load_store_from_ingest(config, out)
    stage = out / "cluster"
    stage.mkdir(parents=True, exist_ok=True)
    weights = _weights(config)
    member_flows = flows.build_flows(store, sorted(store.claims))
    features = {a: flows.extract_features(f, weights) for a, f in member_flows.items()}
    flows.write_feature_matrix(sorted(features.items()), stage / "features.csv")
    addresses = sorted(features)
    vectors = [features[a] for a in addresses]
    cc = clustering.ClusterConfig(
        linkage=clustering.Linkage(config["clustering"]["linkage"]),
        k_min=config["clustering"]["k_min"],
        k_max=config["clustering"]["k_max"],
        weights=weights,
    )
    assignment = clustering.select_k(vectors, cc, addresses)
    mapping = clustering.map_roles(assignment, features)
    clustering.write_assignment_csv(assignment, mapping, stage / "assignment.csv")
    clustering.write_silhouette_json(assignment, stage / "silhouette.json")
    clustering.write_dendrogram_json(clustering.ahc(vectors, cc), stage / "dendrogram.json")
    log.info("cluster: K=%d over %d members (%d unmapped clusters)",
             assignment.k, len(addresses), len(mapping.unmapped))


def cmd_detect(config: dict, out: Path, args) -> None:
    store = _load_store_from_ingest(config, out)
    graph_stage = _require(out / "graph", "graph")
    token_graph = graphs.load_graph_json(_require(graph_stage / "token_graph.json", "graph"))
    external_graph = graphs.load_graph_json(
        _require(graph_stage / "external_graph.json", "graph")
    )
    stage = out / "detect"
    stage.mkdir(parents=True, exist_ok=True)
    result = forensics.run_detectors(token_graph, external_graph, store, _detector_config(config))
    forensics.write_findings_jsonl(result.findings, stage / "findings.jsonl")
    forensics.write_components_csv(result.profiles, stage / "components.csv")
    rows = forensics.voting_power_report(result.findings, store.claims)
    forensics.write_voting_power_json(rows, stage / "voting_power.json")
    comp_dir = stage / "components"
    comp_dir.mkdir(exist_ok=True)
    flagged = {f.component_id for f in result.findings if f.component_id > 0}
    by_id = {p.id: p for p in result.profiles}
    for cid in sorted(flagged):
        graphs.write_graph(
            by_id[cid].graph, comp_dir / f"component_{cid}.dot", "dot", f"component_{cid}"
        )
    log.info("detect: %d components, %d findings", len(result.profiles), len(result.findings))


def cmd_eligibility(config: dict, out: Path, args) -> None:
    store = _load_store_from_ingest(config, out)
    stage = out / "eligibility"
    stage.mkdir(parents=True, exist_ok=True)
    section = dict(config["eligibility"])
    preset = section.pop("preset", "threshold_differential")
    base = {
        "threshold_differential": eligibility.EligibilityRules.threshold_differential,
        "differential": eligibility.EligibilityRules.differential,
        "fair": eligibility.EligibilityRules.fair,
    }.get(preset)
    if base is None:
        raise ConfigInvalidError(f"unknown eligibility preset {preset!r}")
    rules = base()
    for key, value in section.items():
        if not hasattr(rules, key):
            raise ConfigInvalidError(f"unknown eligibility rule {key!r}")
        setattr(rules, key, value)

    balances: dict = {}
    balances_path = config["inputs"].get("balances")
    if balances_path:
        import csv as _csv

        with open(balances_path) as fh:
            for row in _csv.DictReader(fh):
                addr = ingest.normalize_address(row["address"])
                balances.setdefault(addr, {})[row["chain"]] = float(row["balance"])

    protocol = frozenset(
        a for a, c in store.contracts.items()
        if c.category in (ingest.ContractCategory.TRADING_SWAP, ingest.ContractCategory.TRADING_OR_LP)
    )
    external = store.events_of_kind(ingest.EventKind.EXTERNAL_TX)
    if not external:
        raise MissingArtifactError("no external transactions ingested; nothing to screen")
    bounds = store.config.window_bounds()
    history = eligibility.EligibilityHistory(
        events=external,
        balances=balances,
        protocol_addresses=protocol,
        coverage_start=bounds[0] if bounds else 0,
    )
    snapshot = min((c.claim_timestamp for c in store.claims.values()), default=None)
    if snapshot is None:
        snapshot = max(e.timestamp for e in external)
    population = sorted(
        {e.sender for e in external if e.sender not in store.contracts}
    )
    result = eligibility.run_campaign(population, history, rules, snapshot)
    eligibility.write_verdicts_csv(result, stage / "verdicts.csv")
    eligibility.write_summary_json(result, stage / "summary.json")
    log.info("eligibility: %d of %d addresses pass under preset %s",
             result.summary["eligible"], result.summary["population"], preset)


def cmd_stats(config: dict, out: Path, args) -> None:
    store = _load_store_from_ingest(config, out)
    stage = out / "stats"
    stage.mkdir(parents=True, exist_ok=True)
    bounds = store.config.window_bounds()
    start_ts, end_ts = bounds if bounds else (
        store.events[0].timestamp, store.events[-1].timestamp
    )
    member_flows = flows.build_flows(store, sorted(store.claims))
    table = stats.behavior_table(member_flows, store.claims)
    stats.write_behavior_table_csv(table, stage / "behavior_table.csv")
    stats.write_behavior_table_json(table, stage / "behavior_table.json")
    timelines = stats.build_timelines(member_flows, start_ts, end_ts)
    stats.write_attrition_json(
        stats.attrition(timelines, store.claims, end_ts), stage / "attrition.json"
    )
    stats.write_top_contracts_csv(stats.top_contracts(store), stage / "top_contracts.csv")

    groups: dict[str, list[str]] = {"all": sorted(store.claims)}
    cluster_stage = out / "cluster"
    if (cluster_stage / "assignment.csv").exists():
        import csv as _csv

        labels: dict[str, int] = {}
        with open(cluster_stage / "assignment.csv") as fh:
            for row in _csv.DictReader(fh):
                labels[row["address"]] = int(row["cluster"])
        assignment = clustering.ClusterAssignment(labels, max(labels.values(), default=1), {})
        stats.write_tier_composition_csv(
            stats.tier_composition(assignment, store.claims), stage / "tier_composition.csv"
        )
        buyers: set[str] = set()
        with open(cluster_stage / "features.csv") as fh:
            for row in _csv.DictReader(fh):
                if row.get("buy") == "1":
                    buyers.add(row["address"])
        groups = {
            "group1_airdrop_only": sorted(a for a in labels if a not in buyers),
            "group2_buyers": sorted(a for a in labels if a in buyers),
        }

    period_estimates: dict[str, stats.DensityEstimate] = {}
    quantity_estimates: dict[str, stats.DensityEstimate] = {}
    for group, members in sorted(groups.items()):
        samples = stats.period_quantity_samples(timelines, members)
        for key, values in sorted(samples.items()):
            if not values:
                continue
            bucket = period_estimates if key.endswith("_period") else quantity_estimates
            bucket[f"{group}.{key}"] = stats.kde(values)
    stats.write_kde_json(period_estimates, stage / "kde_periods.json")
    stats.write_kde_json(quantity_estimates, stage / "kde_quantities.json")
    log.info("stats: behavior table, attrition, top contracts, %d densities",
             len(period_estimates) + len(quantity_estimates))


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def cmd_report(config: dict, out: Path, args) -> None:
    """Assemble stage artifacts into one report; formatting only, every
    number is traceable to an artifact file."""
    required = {
        "ingest": out / "ingest" / "report.json",
        "graph_summary": out / "graph" / "summary.json",
        "metrics": out / "graph" / "metric_series.json",
        "silhouette": out / "cluster" / "silhouette.json",
        "components": out / "detect" / "components.csv",
        "findings": out / "detect" / "findings.jsonl",
        "attrition": out / "stats" / "attrition.json",
        "behavior": out / "stats" / "behavior_table.json",
    }
    for stage_name, path in required.items():
        _require(path, stage_name.split("_")[0])

    findings = [json.loads(line) for line in
                (out / "detect" / "findings.jsonl").read_text().splitlines() if line]
    pattern_counts: dict[str, int] = {}
    for f in findings:
        pattern_counts[f["pattern"]] = pattern_counts.get(f["pattern"], 0) + 1

    import csv as _csv

    with open(out / "cluster" / "assignment.csv") as fh:
        cluster_counts: dict[str, int] = {}
        role_counts: dict[str, int] = {}
        for row in _csv.DictReader(fh):
            cluster_counts[row["cluster"]] = cluster_counts.get(row["cluster"], 0) + 1
            role_counts[row["role"]] = role_counts.get(row["role"], 0) + 1

    def read_csv_rows(path: Path) -> list[dict]:
        with open(path) as fh:
            return list(_csv.DictReader(fh))

    report = {
        "ingest": _read_json(required["ingest"]),
        "graph": _read_json(required["graph_summary"]),
        "metric_series": _read_json(required["metrics"]),
        "clustering": {
            "silhouette": _read_json(required["silhouette"]),
            "cluster_counts": dict(sorted(cluster_counts.items())),
            "role_counts": dict(sorted(role_counts.items())),
        },
        "behavior_table": _read_json(required["behavior"]),
        "top_contracts": read_csv_rows(out / "stats" / "top_contracts.csv"),
        "attrition": _read_json(required["attrition"]),
        "findings_by_pattern": dict(sorted(pattern_counts.items())),
        "voting_power": _read_json(out / "detect" / "voting_power.json"),
    }
    composition_csv = out / "stats" / "tier_composition.csv"
    if composition_csv.exists():
        report["tier_composition"] = read_csv_rows(composition_csv)
    densities = {}
    for name in ("kde_periods", "kde_quantities"):
        payload = _read_json(out / "stats" / f"{name}.json")
        densities[name] = {
            key: {"bandwidth": est["bandwidth"], "integral": est["integral"],
                  "points": len(est["grid"])}
            for key, est in payload.items()
        }
    report["density_estimates"] = densities
    eligibility_summary = out / "eligibility" / "summary.json"
    if eligibility_summary.exists():
        report["eligibility"] = _read_json(eligibility_summary)

    stage = out / "report"
    stage.mkdir(parents=True, exist_ok=True)
    with open(stage / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lines = ["# Community report", ""]
    lines.append(f"- events stored: {report['ingest']['stored']}")
    lines.append(f"- initial members: {report['ingest']['n_claims']}")
    lines.append(
        f"- token graph: {report['graph']['token_graph']['nodes']} nodes / "
        f"{report['graph']['token_graph']['edges']} edges"
    )
    lines.append(f"- chosen K: {report['clustering']['silhouette']['chosen_k']}")
    lines.append(f"- attrition: {report['attrition']['left_pct']:.2%}")
    lines.append("")
    lines.append("## Findings")
    for pattern, count in sorted(pattern_counts.items()):
        lines.append(f"- {pattern}: {count}")
    if not pattern_counts:
        lines.append("- none")
    lines.append("")
    lines.append("## Roles")
    for role, count in sorted(role_counts.items()):
        lines.append(f"- {role}: {count}")
    with open(stage / "report.md", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    log.info("report: assembled into %s", stage)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "graph": cmd_graph,
    "cluster": cmd_cluster,
    "detect": cmd_detect,
    "eligibility": cmd_eligibility,
    "stats": cmd_stats,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airdrop-forensics",
        description="Token-distribution forensics pipeline (staged batch commands)",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="pipeline stage to run")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="synth seed override")
    parser.add_argument(
        "--slice-interval", type=int, default=None, help="slice interval in days (graph stage)"
    )
    parser.add_argument(
        "--format", choices=["csv", "json", "graphml", "dot"], default=None,
        help="graph export format (graph stage)",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("AIRDROP_FORENSICS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        out = Path(args.out or config["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        write_canonical_config(config, out / "config.resolved.json")
        COMMANDS[args.command](config, out, args)
        return 0
    except (
        ConfigInvalidError,
        MissingArtifactError,
        ingest.IngestError,
        eligibility.InsufficientHistoryError,
        synth.InfeasibleSpecError,
        graphs.WindowEmptyError,
    ) as exc:
        code = getattr(exc, "code", "validation_error")
        print(json.dumps({"code": code, "error": str(exc)}), file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(json.dumps({"code": "internal_error", "error": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
