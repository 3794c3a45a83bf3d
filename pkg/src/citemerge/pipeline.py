"""Stage orchestration: every stage reads and writes artifacts under one directory.

Layout of an output directory::

    extract/D1.jsonl, D2.jsonl, report.json   matching attributes only
    slice/plan.json, slice/<dataset>/<year>.jsonl, report.json
    match/<query>.csv (one delta per query), matches.csv, audit.json
    merge/crosswalk.csv, merged.jsonl, summary.json
    graph/edges.csv
    report/report.json
    evaluate/evaluation.json

Each stage directory also holds ``_stage.json`` with a hash of the config
sections the stage depends on. A stage refuses to run on upstream artifacts
built from a different configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from citemerge import graph_report, matcher, merger, slicer, synthgen
from citemerge.ingest import (ConfigError, DatasetDescriptor, ExtractionReport, SourceRecord,
                              descriptor_to_dict, extract_records, load_descriptor, read_jsonl,
                              write_jsonl)
from citemerge.matcher import MatchPair, QuerySpec, RecordStore

log = logging.getLogger("citemerge")

STAGES = ("extract", "slice", "match", "merge", "graph", "report")
SOURCE_IDS = ("D1", "D2")
MATCH_NEEDED = ("doi", "title", "issn", "pub_year")


class StageError(RuntimeError):
    """A stage could not run; the message names the stage."""


class StaleArtifact(StageError):
    pass


@dataclass
class DatasetInput:
    descriptor_path: Path
    data_path: Path
    descriptor: DatasetDescriptor


@dataclass
class PipelineConfig:
    datasets: list[DatasetInput]
    queries: list[QuerySpec]
    threshold: float = 0.95
    stoplist: tuple[str, ...] = merger.DEFAULT_STOPLIST
    workers: int = 1
    output_dir: Path = Path("run")
    filter_enabled: bool = True
    batch_size: int = 5000
    truth_path: Path | None = None
    config_path: Path | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if len(self.datasets) != 2:
            raise ConfigError(f"exactly two datasets required, got {len(self.datasets)}")
        if not self.queries:
            raise ConfigError("query order must be non-empty")
        ids = [q.query_id for q in self.queries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate query ids: {ids}")
        ds_ids = [d.descriptor.dataset_id for d in self.datasets]
        if len(set(ds_ids)) != 2:
            raise ConfigError(f"dataset ids must differ, got {ds_ids}")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def dataset_ids(self) -> tuple[str, str]:
        return tuple(d.descriptor.dataset_id for d in self.datasets)

    def section_hash(self, stage: str) -> str:
        """Hash of the config sections ``stage`` and its upstream stages read."""
        parts: dict[str, Any] = {
            "datasets": [
                {"descriptor": descriptor_to_dict(d.descriptor), "data": _fingerprint(d.data_path)}
                for d in self.datasets
            ],
        }
        order = STAGES.index(stage) if stage in STAGES else len(STAGES)
        if order >= STAGES.index("match"):
            parts["queries"] = [q.to_json() for q in self.queries]
            parts["threshold"] = self.threshold
        if order >= STAGES.index("merge"):
            parts["stoplist"] = list(self.stoplist)
            parts["filter"] = self.filter_enabled
        blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _fingerprint(path: Path) -> dict[str, Any]:
    try:
        st = path.stat()
    except FileNotFoundError:
        return {"path": str(path), "missing": True}
    return {"size": st.st_size, "mtime_ns": st.st_mtime_ns}


def _resolve(base: Path, value: str | os.PathLike) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path, *, workers: int | None = None,
                out: str | Path | None = None) -> PipelineConfig:
    """Read a pipeline TOML; relative paths are taken from the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    known = {"output_dir", "workers", "threshold", "stoplist", "datasets", "queries",
             "stages", "batch_size", "truth"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")

    datasets = []
    for i, entry in enumerate(doc.get("datasets", [])):
        try:
            dpath = _resolve(base, entry["descriptor"])
            data = _resolve(base, entry["data"])
        except KeyError as exc:
            raise ConfigError(f"{path}: datasets[{i}] missing {exc}") from None
        if not dpath.is_file():
            raise FileNotFoundError(f"descriptor file not found: {dpath}")
        datasets.append(DatasetInput(dpath, data, load_descriptor(dpath)))

    threshold = float(doc.get("threshold", 0.95))
    if "queries" in doc:
        queries = [QuerySpec.from_json(q) for q in doc["queries"]]
    else:
        queries = matcher.default_queries(threshold)
    stages = doc.get("stages", {})
    truth = doc.get("truth")
    return PipelineConfig(
        datasets=datasets,
        queries=queries,
        threshold=threshold,
        stoplist=tuple(doc.get("stoplist", merger.DEFAULT_STOPLIST)),
        workers=int(workers if workers is not None else doc.get("workers", 1)),
        output_dir=Path(out) if out is not None else _resolve(base, doc.get("output_dir", "run")),
        filter_enabled=bool(stages.get("filter", True)),
        batch_size=int(doc.get("batch_size", 5000)),
        truth_path=_resolve(base, truth) if truth else None,
        config_path=path,
    )


# --------------------------------------------------------------------------
# manifests and small I/O helpers


def _write_json(path: Path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")


def _read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    d = cfg.output_dir / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _mark_done(cfg: PipelineConfig, stage: str, counts: dict[str, Any]) -> None:
    _write_json(cfg.output_dir / stage / "_stage.json",
                {"stage": stage, "config_hash": cfg.section_hash(stage), "counts": counts})


def _clear_done(cfg: PipelineConfig, stage: str) -> None:
    (cfg.output_dir / stage / "_stage.json").unlink(missing_ok=True)


def require(cfg: PipelineConfig, stage: str) -> dict[str, Any]:
    """Manifest of a finished upstream stage, or a hint naming what to run."""
    manifest = cfg.output_dir / stage / "_stage.json"
    if not manifest.is_file():
        raise StaleArtifact(f"missing {stage} artifacts in {cfg.output_dir}; run `merge {stage}` first")
    info = _read_json(manifest)
    if info.get("config_hash") != cfg.section_hash(stage):
        raise StaleArtifact(f"{stage} artifacts in {cfg.output_dir} are stale "
                            f"(config or inputs changed); rerun `merge {stage}`")
    return info


def _check_inputs(cfg: PipelineConfig) -> None:
    for d in cfg.datasets:
        if not d.data_path.is_file():
            raise FileNotFoundError(f"input data file not found: {d.data_path}")


def _source_ids(cfg: PipelineConfig) -> dict[str, str]:
    # the first configured dataset plays D1, the second D2
    return dict(zip(SOURCE_IDS, cfg.dataset_ids))


class _Timer:
    def __init__(self, stage: str) -> None:
        self.stage = stage

    def __enter__(self) -> _Timer:
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.wall = time.perf_counter() - self.start

    def log(self, counts: dict[str, Any]) -> None:
        body = " ".join(f"{k}={v}" for k, v in counts.items())
        log.info("stage=%s %s wall=%.2fs", self.stage, body, time.perf_counter() - self.start)


# --------------------------------------------------------------------------
# stages


def stage_extract(cfg: PipelineConfig) -> dict[str, Any]:
    _check_inputs(cfg)
    timer = _Timer("extract")
    with timer:
        _clear_done(cfg, "extract")
        out = _stage_dir(cfg, "extract")
        reports = {}
        counts = {}
        for d in cfg.datasets:
            ds = d.descriptor.dataset_id
            report = ExtractionReport()
            records = extract_records(d.data_path, d.descriptor, MATCH_NEEDED, report,
                                      workers=cfg.workers, batch_size=cfg.batch_size)
            counts[ds] = write_jsonl(out / f"{ds}.jsonl", (r.to_json() for r in records))
            reports[ds] = report.to_json()
        _write_json(out / "report.json", reports)
        _mark_done(cfg, "extract", counts)
    timer.log({"records": _fmt(counts), "skipped": _fmt({k: v["skipped"] for k, v in reports.items()})})
    return counts


def _read_extracted(cfg: PipelineConfig, ds: str) -> Iterator[SourceRecord]:
    for obj in read_jsonl(cfg.output_dir / "extract" / f"{ds}.jsonl"):
        yield SourceRecord.from_json(obj)


def _plan(cfg: PipelineConfig) -> slicer.SlicePlan:
    d1, d2 = (d.descriptor for d in cfg.datasets)
    return slicer.plan_slices(d1, d2, cfg.output_dir / "slice")


def stage_slice(cfg: PipelineConfig) -> dict[str, Any]:
    require(cfg, "extract")
    timer = _Timer("slice")
    with timer:
        _clear_done(cfg, "slice")
        out = _stage_dir(cfg, "slice")
        plan = _plan(cfg)
        reports = {}
        for ds in cfg.dataset_ids:
            reports[ds] = slicer.partition(_read_extracted(cfg, ds), plan, ds).to_json()
        _write_json(out / "plan.json", plan.to_json())
        _write_json(out / "report.json", reports)
        counts = {ds: r["total"] for ds, r in reports.items()}
        _mark_done(cfg, "slice", counts)
    timer.log({"records": _fmt(counts), "slices": len(plan.keys),
               "overlap_slices": len(plan.sliced_keys)})
    return counts


def _load_plan(cfg: PipelineConfig) -> slicer.SlicePlan:
    return slicer.SlicePlan.from_json(_read_json(cfg.output_dir / "slice" / "plan.json"),
                                      root=cfg.output_dir / "slice")


def _load_stores(cfg: PipelineConfig, plan: slicer.SlicePlan) -> tuple[RecordStore, RecordStore]:
    ids = _source_ids(cfg)
    return (RecordStore(slicer.load_all_slices(plan, ids["D1"])),
            RecordStore(slicer.load_all_slices(plan, ids["D2"])))


def _delta_path(cfg: PipelineConfig, qid: str) -> Path:
    return cfg.output_dir / "match" / f"{qid}.csv"


def _canonical(pairs: Sequence[MatchPair]) -> list[MatchPair]:
    return sorted(pairs, key=lambda p: (p.d1_uid, p.d2_uid))


def stage_match(cfg: PipelineConfig, only: str | None = None) -> dict[str, Any]:
    """Run every enabled query in order, or just ``only`` on top of earlier deltas."""
    require(cfg, "slice")
    enabled = [q for q in cfg.queries if q.enabled]
    ids = [q.query_id for q in enabled]
    if only is not None and only not in ids:
        raise ConfigError(f"--stage {only!r} is not an enabled query; choose from {', '.join(ids)}")
    timer = _Timer("match" if only is None else f"match:{only}")
    with timer:
        _clear_done(cfg, "match")
        out = _stage_dir(cfg, "match")
        plan = _load_plan(cfg)
        res1, res2 = _load_stores(cfg, plan)
        todo = ids if only is None else [only]
        results: dict[str, Any] = {}
        summary_path = out / "queries.json"
        if only is not None and summary_path.is_file():
            results = _read_json(summary_path)
        for q in enabled:
            if q.query_id in todo:
                break
            # earlier deltas define the residuals the requested query sees
            path = _delta_path(cfg, q.query_id)
            if not path.is_file():
                raise StaleArtifact(f"match delta for {q.query_id} missing; "
                                    f"run `merge match --stage {q.query_id}` first")
            for p in matcher.read_matches(path):
                res1.remove(p.d1_uid)
                res2.remove(p.d2_uid)
        start = ids.index(todo[0])
        for qid in ids[start + len(todo):]:
            # later deltas were computed on residuals that may have changed
            _delta_path(cfg, qid).unlink(missing_ok=True)
            results.pop(qid, None)
        for q in enabled:
            if q.query_id not in todo:
                continue
            result = matcher.run_query(q, plan, res1, res2, cfg.workers)
            matcher.write_matches(_delta_path(cfg, q.query_id), _canonical(result.pairs))
            results[q.query_id] = result.to_json()
        results = {qid: results[qid] for qid in ids if qid in results}
        _write_json(summary_path, results)
        counts = {qid: r["matched"] for qid, r in results.items()}
        complete = all(_delta_path(cfg, qid).is_file() for qid in ids)
        (out / "matches.csv").unlink(missing_ok=True)
        if complete:
            pairs = []
            for qid in ids:
                pairs.extend(matcher.read_matches(_delta_path(cfg, qid)))
            matches = matcher.MatchSet(pairs)
            matcher.write_matches(out / "matches.csv", matches)
            titles1, titles2 = _titles(cfg, plan)
            _write_json(out / "audit.json",
                        matcher.audit_matches(matches, titles1, titles2, cfg.threshold))
            _mark_done(cfg, "match", counts)
    timer.log({"matched": _fmt(counts), "complete": complete})
    return counts


def _titles(cfg: PipelineConfig, plan: slicer.SlicePlan) -> tuple[dict[str, str], dict[str, str]]:
    ids = _source_ids(cfg)
    out = []
    for src in SOURCE_IDS:
        titles: dict[str, str] = {}
        for recs in slicer.load_all_slices(plan, ids[src]).values():
            for r in recs:
                titles.setdefault(r.source_uid, r.norm_title)
        out.append(titles)
    return out[0], out[1]


def _unique_records(plan: slicer.SlicePlan, ds: str) -> dict[str, SourceRecord]:
    store = RecordStore(slicer.load_all_slices(plan, ds))
    return {r.source_uid: r for r in store.records()}


def _reference_stream(d: DatasetInput, cfg: PipelineConfig, declared: dict[str, int]):
    report = ExtractionReport()
    for rec in extract_records(d.data_path, d.descriptor, ("references", "reference_count"),
                               report, workers=cfg.workers, batch_size=cfg.batch_size):
        if rec.reference_count is not None:
            declared["records"] += 1
            declared["total"] += rec.reference_count
        yield rec.source_uid, rec.references


def stage_merge(cfg: PipelineConfig) -> dict[str, Any]:
    require(cfg, "match")
    _check_inputs(cfg)
    timer = _Timer("merge")
    with timer:
        _clear_done(cfg, "merge")
        out = _stage_dir(cfg, "merge")
        plan = _load_plan(cfg)
        ids = _source_ids(cfg)
        d1 = _unique_records(plan, ids["D1"])
        d2 = _unique_records(plan, ids["D2"])
        matches = matcher.read_matches(cfg.output_dir / "match" / "matches.csv")
        stoplist = merger.Stoplist(cfg.stoplist if cfg.filter_enabled else ())
        outcome = merger.filter_merged_candidates(d1, d2, matches, stoplist)
        merged, crosswalk = merger.assign_muids(outcome.d1, outcome.d2, outcome.matches)
        if len(crosswalk) != len(outcome.d1) + len(outcome.d2) - len(outcome.matches):
            raise merger.IntegrityError("merged record count breaks n1 + n2 - |J|")
        index = merger.build_reference_index(crosswalk, outcome.d1, outcome.d2)
        declared = {src: {"records": 0, "total": 0} for src in SOURCE_IDS}
        streams = {src: _reference_stream(d, cfg, declared[src])
                   for src, d in zip(SOURCE_IDS, cfg.datasets)}
        # extraction already runs a worker pool; resolution stays in-process
        # so that two pools are never forked from one another
        counters = merger.resolve_references(merged, crosswalk, index, streams, workers=1,
                                             batch_size=cfg.batch_size)
        for c in counters.values():
            if not c.conserved():
                raise merger.IntegrityError("reference counts are not conserved")
        crosswalk.write_csv(out / "crosswalk.csv")
        merger.write_merged(out / "merged.jsonl", merged)
        titles1 = {u: r.norm_title for u, r in outcome.d1.items()}
        titles2 = {u: r.norm_title for u, r in outcome.d2.items()}
        summary = {
            "source_records": {"D1": len(d1), "D2": len(d2)},
            "doi_records": {"D1": sum(r.doi is not None for r in d1.values()),
                            "D2": sum(r.doi is not None for r in d2.values())},
            "matched_by_query": {q.query_id: 0 for q in cfg.queries if q.enabled},
            "filter": outcome.to_json(),
            "references": {s: c.to_json() for s, c in counters.items()},
            "declared_reference_counts": {
                s: {"records": v["records"], "total": v["total"],
                    "mean": v["total"] / v["records"] if v["records"] else None}
                for s, v in declared.items()
            },
            "muid_audit": merger.audit_merged_titles(
                crosswalk, titles1, titles2, [m.pub_year for m in merged], cfg.threshold),
        }
        for p in matches:
            summary["matched_by_query"][p.query_id] = summary["matched_by_query"].get(p.query_id, 0) + 1
        _write_json(out / "summary.json", summary)
        counts = {"nodes": len(crosswalk), "removed": outcome.removed,
                  "resolved": sum(c.resolved for c in counters.values()),
                  "omitted": sum(c.omitted for c in counters.values())}
        _mark_done(cfg, "merge", counts)
    timer.log(counts)
    return counts


def stage_graph(cfg: PipelineConfig) -> dict[str, Any]:
    require(cfg, "merge")
    timer = _Timer("graph")
    with timer:
        _clear_done(cfg, "graph")
        out = _stage_dir(cfg, "graph")
        crosswalk = merger.Crosswalk.read_csv(cfg.output_dir / "merge" / "crosswalk.csv")
        graph = graph_report.build_graph(merger.read_merged(cfg.output_dir / "merge" / "merged.jsonl"),
                                         node_count=len(crosswalk))
        graph_report.export_edges(graph, out / "edges.csv")
        counts = {"nodes": graph.node_count, "edges": graph.edge_count}
        _mark_done(cfg, "graph", counts)
    timer.log(counts)
    return counts


def stage_report(cfg: PipelineConfig) -> dict[str, Any]:
    require(cfg, "graph")
    timer = _Timer("report")
    with timer:
        _clear_done(cfg, "report")
        out = _stage_dir(cfg, "report")
        crosswalk = merger.Crosswalk.read_csv(cfg.output_dir / "merge" / "crosswalk.csv")
        graph = graph_report.read_edges(cfg.output_dir / "graph" / "edges.csv", len(crosswalk))
        summary = _read_json(cfg.output_dir / "merge" / "summary.json")
        report = graph_report.compute_report(
            graph, crosswalk,
            source_records=summary["source_records"],
            doi_records=summary["doi_records"],
            matched_by_query=summary["matched_by_query"],
            reference_counters=summary["references"],
            filter_summary=summary["filter"],
            title_audit=_read_json(cfg.output_dir / "match" / "audit.json"),
            muid_audit=summary["muid_audit"],
            declared_reference_counts=summary["declared_reference_counts"],
        )
        graph_report.export_report(report, out / "report.json")
        counts = {"nodes": report["node_count"], "edges": report["edge_count"]}
        _mark_done(cfg, "report", counts)
    timer.log(counts)
    return counts


def stage_evaluate(cfg: PipelineConfig, truth_path: str | Path | None = None) -> dict[str, Any]:
    path = Path(truth_path) if truth_path is not None else cfg.truth_path
    if path is None:
        raise ConfigError("evaluate needs a ground truth file (--truth PATH or `truth` in the config)")
    truth = synthgen.GroundTruth.load(path)
    require(cfg, "graph")
    timer = _Timer("evaluate")
    with timer:
        out = _stage_dir(cfg, "evaluate")
        result = synthgen.evaluate(cfg.output_dir / "match" / "matches.csv",
                                   cfg.output_dir / "merge" / "crosswalk.csv",
                                   cfg.output_dir / "graph" / "edges.csv", truth)
        _write_json(out / "evaluation.json", result)
    timer.log({"record_precision": result["records"]["precision"],
               "record_recall": result["records"]["recall"],
               "edge_precision": result["edges"]["precision"],
               "edge_recall": result["edges"]["recall"]})
    return result


STAGE_FUNCS = {
    "extract": stage_extract,
    "slice": stage_slice,
    "match": stage_match,
    "merge": stage_merge,
    "graph": stage_graph,
    "report": stage_report,
}


def run_pipeline(cfg: PipelineConfig) -> dict[str, Any]:
    """All stages in order; each writes its artifacts before the next starts."""
    _check_inputs(cfg)
    timer = _Timer("run")
    results = {}
    with timer:
        for name in STAGES:
            results[name] = STAGE_FUNCS[name](cfg)
    timer.log({"out": cfg.output_dir})
    return results


def _fmt(counts: dict[str, Any]) -> str:
    return ",".join(f"{k}:{v}" for k, v in counts.items())
