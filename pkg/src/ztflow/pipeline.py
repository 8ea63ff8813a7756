"""Orchestration for the train / mine / enforce / simulate commands."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .arl import ArlDetector, ArlState
from .config import ConfigError, PipelineConfig
from .graph import (
    AppMapping,
    CrGraph,
    Entity,
    edge_slug,
    graph_from_dict,
    graph_to_dict,
)
from .mining import (
    FlowRule,
    RuleAssociation,
    assign_rule_ids,
    mine_edge_rules,
    mine_rule_associations,
    rules_from_dict,
    rules_to_dict,
)
from .records import (
    UnsupportedStackError,
    feature_schema,
    infer_stack,
    iter_labeled_trace,
    parse_flow_stats,
    parse_trace,
    preprocess,
    serialize_flow_stats,
    serialize_trace,
    stats_from_records,
)
from .rtfsl import RtfslModel, RtfslMonitor, RtfslState, RtfslTrainer, verdict_log_rows
from .simulator import ZtAssets, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3


@dataclass
class CommandResult:
    exit_code: int
    report: dict


def derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def app_slug(app: Entity) -> str:
    raw = f"{app.host_id}-{app.app_name}"
    return "".join(c if c.isalnum() or c in "-." else "-" for c in raw)


def load_mapping(config: PipelineConfig) -> AppMapping:
    if config.app_mapping is None:
        return AppMapping()
    with open(config.app_mapping) as fh:
        return AppMapping.from_csv(fh)


def build_graph_from_traces(config: PipelineConfig,
                            mapping: AppMapping) -> tuple[CrGraph, dict]:
    graph = CrGraph()
    total = 0
    skipped = 0
    for path in sorted(config.traces):
        with open(path) as fh:
            records = parse_trace(fh)
        for rec in records:
            total += 1
            try:
                graph.observe(rec, mapping)
            except UnsupportedStackError:
                skipped += 1
    if graph.total_packets() == 0:
        raise ConfigError("no supported packets in traces")
    return graph, {"records": total, "skipped_unsupported": skipped}


def attach_flow_stats(graph: CrGraph, config: PipelineConfig) -> None:
    """Per-edge flow statistics: from provided CSVs when present, otherwise
    derived from the edge's packet dataset at the configured sampling rate."""
    stats_dir = Path(config.flow_stats_dir) if config.flow_stats_dir else None
    for key in sorted(graph.edges, key=str):
        edge = graph.edges[key]
        slug = edge_slug(key)
        if stats_dir is not None and (stats_dir / f"{slug}.csv").is_file():
            with open(stats_dir / f"{slug}.csv") as fh:
                edge.flow_stats = parse_flow_stats(fh)
        else:
            edge.flow_stats = stats_from_records(
                edge.packet_dataset, config.rtfsl.sampling_rate)


def train_models(graph: CrGraph, config: PipelineConfig
                 ) -> tuple[dict, dict, list[dict]]:
    """Train per-edge detectors and flow models; report failed edges."""
    detectors: dict[tuple, ArlDetector] = {}
    models: dict[tuple, RtfslModel] = {}
    failures: list[dict] = []
    for key in sorted(graph.edges, key=str):
        edge = graph.edges[key]
        slug = edge_slug(key)
        schema = feature_schema(edge.stack)
        det = ArlDetector(schema, config.arl,
                          seed=derive_seed(config.seed, f"arl:{slug}"))
        budget = config.arl.max_feed_samples or len(edge.packet_dataset)
        for rec in edge.packet_dataset[:budget]:
            if det.feed(preprocess(rec), rec.ts).state is ArlState.EXECUTE:
                break
        detectors[key] = det
        edge.arl = det
        if det.state is not ArlState.EXECUTE:
            failures.append({"edge": slug, "stage": "arl",
                             "state": det.state.value,
                             "samples": len(edge.packet_dataset)})

        trainer = RtfslTrainer(config.rtfsl, edge.stack.name)
        budget = config.rtfsl.max_train_samples or len(edge.flow_stats)
        for sample in edge.flow_stats[:budget]:
            if trainer.feed(sample).state is RtfslState.EXECUTE:
                break
        if trainer.state is RtfslState.EXECUTE:
            models[key] = trainer.model
            edge.rtfsl = trainer.model
        else:
            failures.append({"edge": slug, "stage": "rtfsl",
                             "state": trainer.state.value,
                             "samples": len(edge.flow_stats)})
    return detectors, models, failures


def persist_models(graph: CrGraph, detectors: dict, models: dict,
                   config: PipelineConfig) -> dict:
    model_dir = Path(config.model_dir)
    refs: dict[tuple, dict] = {}
    for key in sorted(graph.edges, key=str):
        edge = graph.edges[key]
        slug = edge_slug(key)
        files = {"packets": f"datasets/{slug}.csv",
                 "flow_stats": f"flow_stats/{slug}.csv",
                 "arl": f"arl/{slug}.json"}
        atomic_write_text(model_dir / files["packets"],
                          serialize_trace(edge.packet_dataset))
        atomic_write_text(model_dir / files["flow_stats"],
                          serialize_flow_stats(edge.flow_stats))
        atomic_write_text(model_dir / files["arl"],
                          detectors[key].to_json() + "\n")
        if key in models:
            files["rtfsl"] = f"rtfsl/{slug}.json"
            atomic_write_text(model_dir / files["rtfsl"],
                              models[key].to_json() + "\n")
        refs[key] = files
    atomic_write_text(model_dir / "graph.json",
                      dump_json(graph_to_dict(graph, refs)))
    return refs


@dataclass
class ArtifactBundle:
    graph: CrGraph
    detectors: dict
    models: dict
    rules: list[FlowRule]
    associations: list[RuleAssociation]
    rules_by_edge: dict


def load_artifacts(model_dir: str, need_rules: bool = False) -> ArtifactBundle:
    base = Path(model_dir)
    graph_path = base / "graph.json"
    if not graph_path.is_file():
        raise ConfigError(f"no trained graph at {graph_path}")
    graph, refs = graph_from_dict(json.loads(graph_path.read_text()))
    detectors: dict = {}
    models: dict = {}
    for key, files in refs.items():
        edge = graph.edges[key]
        if "packets" in files:
            with open(base / files["packets"]) as fh:
                edge.packet_dataset = parse_trace(fh)
        if "flow_stats" in files:
            with open(base / files["flow_stats"]) as fh:
                edge.flow_stats = parse_flow_stats(fh)
        if "arl" in files:
            det = ArlDetector.from_dict(json.loads((base / files["arl"]).read_text()))
            detectors[key] = det
            edge.arl = det
        if "rtfsl" in files:
            model = RtfslModel.from_dict(
                json.loads((base / files["rtfsl"]).read_text()))
            models[key] = model
            edge.rtfsl = model
    rules: list[FlowRule] = []
    associations: list[RuleAssociation] = []
    rules_by_edge: dict = {}
    rules_path = base / "rules.json"
    if rules_path.is_file():
        rules, associations = rules_from_dict(json.loads(rules_path.read_text()))
        from .simulator.controllers import assign_rules_to_edges
        rules_by_edge = assign_rules_to_edges(graph, rules)
    elif need_rules:
        raise ConfigError(f"no mined rules at {rules_path}")
    return ArtifactBundle(graph=graph, detectors=detectors, models=models,
                          rules=rules, associations=associations,
                          rules_by_edge=rules_by_edge)


# --------------------------------------------------------------------------
# commands

def cmd_train(config: PipelineConfig) -> CommandResult:
    config.require_traces()
    mapping = load_mapping(config)
    graph, ingest_stats = build_graph_from_traces(config, mapping)
    attach_flow_stats(graph, config)
    detectors, models, failures = train_models(graph, config)
    persist_models(graph, detectors, models, config)

    edges_report = []
    for key in sorted(graph.edges, key=str):
        edge = graph.edges[key]
        det = detectors[key]
        edges_report.append({
            "edge": edge_slug(key),
            "src": str(key[0]), "dst": str(key[1]), "stack": key[2],
            "packets": len(edge.packet_dataset),
            "flow_stat_samples": len(edge.flow_stats),
            "arl_state": det.state.value,
            "arl_threshold": det.decision_threshold,
            "rtfsl_trained": key in models,
        })
    report = {
        "ingest": ingest_stats,
        "edges": edges_report,
        "failures": failures,
        "model_dir": str(config.model_dir),
    }
    atomic_write_text(Path(config.model_dir) / "training_report.json",
                      dump_json(report))
    return CommandResult(EXIT_TRAINING if failures else EXIT_OK, report)


def mine_all(graph: CrGraph, config: PipelineConfig
             ) -> tuple[dict, list[RuleAssociation], dict]:
    """Rules for every edge plus per-app association groups."""
    mcfg = config.mining
    rules_by_edge = {}
    for key in sorted(graph.edges, key=str):
        rules_by_edge[key] = mine_edge_rules(
            graph.edges[key], mcfg.min_support, mcfg.min_confidence,
            idle_timeout=mcfg.idle_timeout)
    assign_rule_ids(rules_by_edge)

    groups: dict[frozenset, RuleAssociation] = {}
    per_app: dict[Entity, dict] = {}
    for app in sorted(graph.nodes, key=lambda n: (n.host_id, n.app_name)):
        edges = graph.edges_of(app)
        rules = [r for e in edges for r in rules_by_edge.get(e.key, [])]
        if not rules:
            continue
        trace = sorted((p for e in edges for p in e.packet_dataset),
                       key=lambda r: r.ts)
        assocs = mine_rule_associations(rules, trace, mcfg.window_duration,
                                        mcfg.min_support, mcfg.min_confidence)
        per_app[app] = {
            "rules": sorted(r.rule_id for r in rules),
            "associations": [
                {"rules": sorted(a.rules), "support": a.support,
                 "confidence": a.confidence} for a in assocs],
        }
        for a in assocs:
            prev = groups.get(a.rules)
            if prev is None or a.confidence > prev.confidence:
                groups[a.rules] = a
    associations = sorted(groups.values(), key=lambda g: sorted(g.rules))
    return rules_by_edge, associations, per_app


def cmd_mine(config: PipelineConfig) -> CommandResult:
    bundle = load_artifacts(config.model_dir)
    rules_by_edge, associations, per_app = mine_all(bundle.graph, config)
    doc = rules_to_dict(rules_by_edge, associations)
    atomic_write_text(Path(config.model_dir) / "rules.json", dump_json(doc))
    for app, app_doc in per_app.items():
        atomic_write_text(
            Path(config.model_dir) / "rules_by_app" / f"{app_slug(app)}.json",
            dump_json(app_doc))
    report = {
        "rules": len(doc["rules"]),
        "associations": len(doc["associations"]),
        "apps": {str(app): d for app, d in per_app.items()},
    }
    return CommandResult(EXIT_OK, report)


def cmd_enforce(config: PipelineConfig, eval_trace: str) -> CommandResult:
    if not Path(eval_trace).is_file():
        raise ConfigError(f"eval trace not found: {eval_trace}")
    bundle = load_artifacts(config.model_dir, need_rules=False)
    mapping = load_mapping(config)
    out_dir = Path(config.output_dir)

    counts = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    skipped = 0
    decision_rows = ["ts,src,dst,stack,score,decision,label,reason"]
    eval_edges: dict[tuple, list] = {}

    with open(eval_trace) as fh:
        for rec, label in iter_labeled_trace(fh):
            if label not in ("benign", "abnormal"):
                raise ConfigError(f"bad label {label!r} (want benign/abnormal)")
            try:
                stack = infer_stack(rec)
            except UnsupportedStackError:
                skipped += 1
                continue
            src_e = mapping.resolve(rec.src_ip, rec.src_port, rec.proto, rec.ts)
            dst_e = mapping.resolve(rec.dst_ip, rec.dst_port, rec.proto, rec.ts)
            edge = bundle.graph.lookup(src_e, dst_e, stack)
            score = ""
            if edge is None:
                allowed, reason = False, "unmodeled-communication"
            else:
                det = bundle.detectors.get(edge.key)
                if det is None or det.state is not ArlState.EXECUTE:
                    allowed, reason = False, "no-enforceable-model"
                else:
                    decision = det.decide(preprocess(rec))
                    allowed = decision.allowed
                    score = f"{decision.rmse:.6g}"
                    reason = "arl"
                eval_edges.setdefault(edge.key, []).append(rec)
            if label == "benign":
                counts["tn" if allowed else "fp"] += 1
            else:
                counts["fn" if allowed else "tp"] += 1
            decision_rows.append(
                f"{rec.ts},{src_e},{dst_e},{stack.name},{score},"
                f"{'allow' if allowed else 'deny'},{label},{reason}")

    atomic_write_text(out_dir / "decisions.csv",
                      "\n".join(decision_rows) + "\n")

    rtfsl_summary = {}
    for key in sorted(eval_edges, key=str):
        model = bundle.models.get(key)
        if model is None:
            continue
        stats = stats_from_records(eval_edges[key],
                                   model.config.sampling_rate)
        monitor = RtfslMonitor(model)
        anomalous = 0
        first_anomalous_t = None
        max_dist = 0.0
        for sample in stats:
            verdict = monitor.step(sample)
            for dist in verdict.distances.values():
                if dist is not None:
                    max_dist = max(max_dist, dist)
            if verdict.anomalous:
                anomalous += 1
                if first_anomalous_t is None:
                    first_anomalous_t = sample.t
        slug = edge_slug(key)
        atomic_write_text(out_dir / "verdicts" / f"{slug}.csv",
                          "\n".join(verdict_log_rows(monitor)) + "\n")
        rtfsl_summary[slug] = {
            "samples": len(stats),
            "anomalous_windows": anomalous,
            "first_anomalous_t": first_anomalous_t,
            "max_distance": max_dist,
        }

    total = sum(counts.values())
    report = {
        "arl": counts,
        "decided": total,
        "skipped_unsupported": skipped,
        "rtfsl": rtfsl_summary,
    }
    atomic_write_text(out_dir / "confusion.json", dump_json(report))
    return CommandResult(EXIT_OK, report)


def cmd_simulate(config: PipelineConfig) -> CommandResult:
    spec = config.require_sim_spec()
    out_dir = Path(config.output_dir)

    train_res = run_scenario(spec, mode="train", seed=config.seed)
    graph = train_res.controller.graph
    if not graph.edges:
        raise ConfigError("training scenario produced no traffic")
    detectors, models, failures = train_models(graph, config)
    rules_by_edge, associations, _ = mine_all(graph, config)

    assets = ZtAssets(graph=graph, detectors=detectors, models=models,
                      rules_by_edge=rules_by_edge, associations=associations)
    zt_res = run_scenario(spec, mode="zt", seed=config.seed, zt_assets=assets)
    fwd_res = run_scenario(spec, mode="fwd", seed=config.seed)

    metrics = {"zt": zt_res.metrics.to_dict(), "fwd": fwd_res.metrics.to_dict()}
    timing = {
        "train": train_res.metrics.controller_processing_time,
        "zt": zt_res.metrics.controller_processing_time,
        "fwd": fwd_res.metrics.controller_processing_time,
    }
    atomic_write_text(out_dir / "metrics.json", dump_json(metrics))
    atomic_write_text(out_dir / "timing.json", dump_json(timing))
    atomic_write_text(out_dir / "train_events.csv", train_res.event_log_csv())
    atomic_write_text(out_dir / "zt_events.csv", zt_res.event_log_csv())
    atomic_write_text(out_dir / "fwd_events.csv", fwd_res.event_log_csv())

    arl_failures = [f for f in failures if f["stage"] == "arl"]
    report = {
        "metrics": metrics,
        "edges": len(graph.edges),
        "rules": sum(len(r) for r in rules_by_edge.values()),
        "associations": len(associations),
        "training_failures": failures,
        "revoked_edges": [str(k) for k in
                          getattr(zt_res.controller, "revoked", [])],
    }
    atomic_write_text(out_dir / "simulate_report.json", dump_json(report))
    return CommandResult(EXIT_TRAINING if arl_failures else EXIT_OK, report)


def cmd_report(config: PipelineConfig) -> CommandResult:
    """Summarize whatever artifacts exist in the output/model directories."""
    lines = []
    model_dir = Path(config.model_dir)
    out_dir = Path(config.output_dir)

    training = model_dir / "training_report.json"
    if training.is_file():
        doc = json.loads(training.read_text())
        lines.append(f"training: {len(doc['edges'])} edges, "
                     f"{len(doc['failures'])} failures")
        for e in doc["edges"]:
            lines.append(f"  {e['src']} -> {e['dst']} [{e['stack']}]: "
                         f"{e['packets']} packets, arl={e['arl_state']}, "
                         f"rtfsl={'ok' if e['rtfsl_trained'] else 'missing'}")
    rules = model_dir / "rules.json"
    if rules.is_file():
        doc = json.loads(rules.read_text())
        lines.append(f"rules: {len(doc['rules'])} mined, "
                     f"{len(doc['associations'])} association groups")
        for r in doc["rules"]:
            match = ", ".join(f"{k}={v}" for k, v in sorted(r["match"].items()))
            lines.append(f"  {r['id']}: [{match}]")
    confusion = out_dir / "confusion.json"
    if confusion.is_file():
        doc = json.loads(confusion.read_text())
        c = doc["arl"]
        lines.append(f"enforcement: TP={c['tp']} TN={c['tn']} "
                     f"FP={c['fp']} FN={c['fn']}")
    metrics = out_dir / "metrics.json"
    if metrics.is_file():
        doc = json.loads(metrics.read_text())
        for mode in ("zt", "fwd"):
            m = doc[mode]
            rps = m["rules_per_switch"]
            lines.append(f"simulate[{mode}]: packet_in={m['packet_in_count']} "
                         f"delivered={m['delivered']} denied={m['denied']} "
                         f"rules/switch={max(rps.values()) if rps else 0}")
    if not lines:
        lines.append("no artifacts found (run train/mine/enforce/simulate first)")
    return CommandResult(EXIT_OK, {"text": "\n".join(lines)})
