"""Acceptance criteria 1-7, one PASS/FAIL line each in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import csv
import json
import resource
import subprocess
import sys
import textwrap
import time
from collections import defaultdict
from pathlib import Path

import pytest

from citemerge import pipeline, slicer, synthgen
from citemerge.ingest import extract_records
from citemerge.matcher import oracle_match, read_matches
from citemerge.merger import BOTH

RESULTS: dict[int, tuple[bool, str]] = {}

THRESHOLD = 0.95


def verdict(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    assert ok, f"criterion {n}: {detail}"


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def generate(root: Path, **kw) -> tuple[dict[str, Path], synthgen.GroundTruth]:
    paths = synthgen.generate(synthgen.GenConfig(**kw), root)
    return paths, synthgen.GroundTruth.load(paths["truth"])


def run(paths, out: Path, workers: int = 1) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(paths["pipeline"], workers=workers, out=out)
    pipeline.run_pipeline(cfg)
    return cfg


def evaluate(cfg, truth):
    return synthgen.evaluate(cfg.output_dir / "match" / "matches.csv",
                             cfg.output_dir / "merge" / "crosswalk.csv",
                             cfg.output_dir / "graph" / "edges.csv", truth)


def count_identities(cfg) -> list[str]:
    """Every violated identity of one finished run, recounted from the exports."""
    out = cfg.output_dir
    problems = []
    rows = read_csv(out / "merge" / "crosswalk.csv")
    edges = read_csv(out / "graph" / "edges.csv")
    report = read_json(out / "report" / "report.json")
    summary = read_json(out / "merge" / "summary.json")
    flt = summary["filter"]
    j_kept = sum(1 for r in rows if r["provenance"] == BOTH)
    n1 = summary["source_records"]["D1"] - flt["removed_matched_pairs"] - flt["removed_d1_only"]
    n2 = summary["source_records"]["D2"] - flt["removed_matched_pairs"] - flt["removed_d2_only"]
    if len(rows) != n1 + n2 - j_kept:
        problems.append(f"|D|={len(rows)} != n1+n2-|J| = {n1}+{n2}-{j_kept}")
    if report["node_count"] != len(rows):
        problems.append(f"graph nodes {report['node_count']} != crosswalk rows {len(rows)}")
    indeg = defaultdict(int)
    outdeg = defaultdict(int)
    for e in edges:
        outdeg[e["src_muid"]] += 1
        indeg[e["dst_muid"]] += 1
    if not (sum(indeg.values()) == sum(outdeg.values()) == len(edges) == report["edge_count"]
            == report["degree"]["sum_in_degree"] == report["degree"]["sum_out_degree"]):
        problems.append("degree sums disagree with edge count")
    for src, c in report["references"].items():
        if c["resolved"] + c["omitted"] + c["deduped"] + c["self_dropped"] != c["raw"]:
            problems.append(f"{src}: reference counts not conserved: {c}")
    if sum(c["resolved"] for c in report["references"].values()) != len(edges):
        problems.append("resolved references != edge count")
    return problems


# --------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="module")
def noise_free(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_noise_free")
    paths, truth = generate(root, seed=2, n1=10_000, n2=10_000, overlap=0.3, title_noise_rate=0.0,
                            doi_coverage_d1=1.0, doi_coverage_d2=1.0, year_anomaly_rate=0.0)
    return run(paths, root / "run"), truth


@pytest.fixture(scope="module")
def deployment_analog(tmp_path_factory):
    # N = 6250 + 5000 - 1250 = 10000 articles, so 0.16% is 16 stoplisted records
    root = tmp_path_factory.mktemp("acc_deployment")
    paths, truth = generate(root, seed=3, n1=6250, n2=5000, overlap=0.25, doi_coverage_d2=0.61,
                            title_noise_rate=0.3, title_noise_edits=2, stoplist_rate=0.0016,
                            cross_only_citation_rate=0.2, threshold=THRESHOLD)
    return run(paths, root / "run"), truth


@pytest.fixture(scope="module")
def cross_only(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_cross")
    paths, truth = generate(root, seed=5, n1=3000, n2=3000, overlap=0.4, doi_coverage_d2=0.7,
                            title_noise_rate=0.2, cross_only_citation_rate=0.25)
    return run(paths, root / "run"), truth


# --------------------------------------------------------------------------
# criteria


INSTANCES = [
    dict(seed=1, n1=2000, n2=2000, overlap=0.3, title_noise_rate=0.3, year_anomaly_rate=0.05),
    dict(seed=7, n1=1200, n2=2000, overlap=0.3, title_noise_rate=0.5, doi_coverage_d2=0.4,
         year_anomaly_rate=0.1),
]


def test_criterion_1_oracle_equivalence(tmp_path):
    details, ok = [], True
    for k, inst in enumerate(INSTANCES):
        paths, _ = generate(tmp_path / f"i{k}", **inst)
        oracle = None
        for workers in (1, 2, 8):
            cfg = pipeline.load_config(paths["pipeline"], workers=workers, out=tmp_path / f"i{k}" / f"w{workers}")
            t0 = time.perf_counter()
            for stage in ("extract", "slice", "match"):
                pipeline.STAGE_FUNCS[stage](cfg)
            wall = time.perf_counter() - t0
            got = {(p.d1_uid, p.d2_uid, p.query_id)
                   for p in read_matches(cfg.output_dir / "match" / "matches.csv")}
            if oracle is None:
                recs = [list(extract_records(d.data_path, d.descriptor, ("doi", "title", "issn", "pub_year")))
                        for d in cfg.datasets]
                plan = slicer.SlicePlan.from_json(read_json(cfg.output_dir / "slice" / "plan.json"))
                oracle = oracle_match(recs[0], recs[1], cfg.queries, plan).as_set()
            same = got == oracle
            ok &= same and wall < 10.0
            details.append(f"{inst['n1']}+{inst['n2']} w={workers}: |J|={len(got)} "
                           f"oracle={len(oracle)} equal={same} {wall:.2f}s")
    verdict(1, ok, "; ".join(details))


def test_criterion_2_noise_free_recovery(noise_free):
    cfg, truth = noise_free
    ev = evaluate(cfg, truth)
    r, e = ev["records"], ev["edges"]
    ok = r["precision"] == r["recall"] == 1.0 and e["precision"] == e["recall"] == 1.0
    verdict(2, ok, f"records P={r['precision']} R={r['recall']} ({r['true_positives']}/{r['actual']}); "
                   f"edges P={e['precision']} R={e['recall']} ({e['true_positives']}/{e['actual']})")


def test_criterion_3_deployment_analog(deployment_analog):
    cfg, truth = deployment_analog
    ev = evaluate(cfg, truth)
    report = read_json(cfg.output_dir / "report" / "report.json")
    removed = report["filter"]["removed_fraction"]
    audit = report["title_audit"]
    matched = read_matches(cfg.output_dir / "match" / "matches.csv")
    sim = {(p["d1_uid"], p["d2_uid"]): p["similarity"] for p in truth.identity_pairs}
    clean = sum(sim[(m.d1_uid, m.d2_uid)] >= THRESHOLD - 1e-9 for m in matched) / len(matched)
    r = ev["records"]
    doi_cov = report["doi_coverage"]["D2"]["fraction"]
    ok = (r["recall_recoverable"] >= 0.99 and r["precision"] == 1.0 and removed == 0.0016
          and audit["rate"] == clean and doi_cov == 0.61)
    verdict(3, ok, f"recall_recoverable={r['recall_recoverable']} precision={r['precision']} "
                   f"removed_fraction={removed} ({report['filter']['removed']}/{report['filter']['candidates']}) "
                   f"audit_rate={audit['rate']} planted_clean={clean} d2_doi_coverage={doi_cov} "
                   f"noised_pairs={len(truth.perturbations)}")


def test_criterion_4_count_identities(noise_free, deployment_analog, cross_only):
    problems = []
    for name, (cfg, _) in (("noise_free", noise_free), ("deployment_analog", deployment_analog),
                           ("cross_only", cross_only)):
        problems += [f"{name}: {p}" for p in count_identities(cfg)]
    verdict(4, not problems, "; ".join(problems) or "3 runs: |D|, nodes, degree sums, conservation all exact")


def test_criterion_5_monotonicity(cross_only):
    cfg, _ = cross_only
    rows = read_csv(cfg.output_dir / "merge" / "crosswalk.csv")
    both = {int(r["muid"]) for r in rows if r["provenance"] == BOTH}
    merged, seen = defaultdict(int), {"D1": defaultdict(int), "D2": defaultdict(int)}
    for e in read_csv(cfg.output_dir / "graph" / "edges.csv"):
        src = int(e["src_muid"])
        merged[src] += 1
        for s in ("D1", "D2"):
            if e["provenance"] in (s, BOTH):
                seen[s][src] += 1
    violations = [m for m in both if merged[m] < seen["D1"][m] or merged[m] < seen["D2"][m]]
    active = [m for m in both if merged[m] > 0]
    avg = {k: sum(v[m] for m in active) / len(active)
           for k, v in (("merged", merged), ("D1", seen["D1"]), ("D2", seen["D2"]))}
    report = read_json(cfg.output_dir / "report" / "report.json")["avg_references_matched"]
    agrees = all(abs(report[k] - avg[k]) < 1e-12 for k in avg)
    ok = not violations and avg["merged"] > avg["D1"] and avg["merged"] > avg["D2"] and agrees
    verdict(5, ok, f"BOTH records={len(both)} violations={len(violations)} "
                   f"avg refs merged={avg['merged']:.4f} D1={avg['D1']:.4f} D2={avg['D2']:.4f} "
                   f"report_agrees={agrees}")


def test_criterion_6_determinism(tmp_path):
    paths, _ = generate(tmp_path, seed=8, n1=3000, n2=2500, title_noise_rate=0.3,
                        year_anomaly_rate=0.05, cross_only_citation_rate=0.2)
    names = ("graph/edges.csv", "merge/crosswalk.csv", "report/report.json")
    snapshots = {}
    for label, workers in (("w1", 1), ("w1_again", 1), ("w2", 2), ("w8", 8)):
        cfg = run(paths, tmp_path / label, workers)
        snapshots[label] = tuple((cfg.output_dir / n).read_bytes() for n in names)
    ref = snapshots["w1"]
    diff = [k for k, v in snapshots.items() if v != ref]
    verdict(6, not diff, f"{len(snapshots)} runs compared on {', '.join(names)}; differing: {diff or 'none'}")


def _peak_kb() -> str:
    # VmHWM resets on exec, unlike ru_maxrss which a forked child inherits
    return textwrap.dedent("""
        def peak_kb():
            import resource
            own = next(int(l.split()[1]) for l in open("/proc/self/status") if l.startswith("VmHWM"))
            return max(own, resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss)
    """)


_EXTRACT_PEAK = _peak_kb() + textwrap.dedent("""
    import sys
    from citemerge.ingest import RECORD_ATTRIBUTES, extract_records, load_descriptor
    n = sum(1 for _ in extract_records(sys.argv[1], load_descriptor(sys.argv[2]), RECORD_ATTRIBUTES))
    print(n, peak_kb())
""")

_RUN_PEAK = _peak_kb() + textwrap.dedent("""
    import sys
    from citemerge.cli import main
    code = main(sys.argv[1:])
    print(code, peak_kb())
""")

_GENERATE = textwrap.dedent("""
    import sys
    from pathlib import Path
    from citemerge.synthgen import GenConfig, generate
    generate(GenConfig(seed=1, n1=100_000, n2=100_000, refs_per_record=10, title_noise_rate=0.2),
             Path(sys.argv[1]))
""")


def _extract_peak(data: Path, descriptor: Path) -> tuple[int, int]:
    out = subprocess.run([sys.executable, "-c", _EXTRACT_PEAK, str(data), str(descriptor)],
                         capture_output=True, text=True, check=True).stdout.split()
    return int(out[0]), int(out[1])


@pytest.mark.slow
def test_criterion_7_desk_scale(tmp_path):
    # generated in a child so this process stays small
    subprocess.run([sys.executable, "-c", _GENERATE, str(tmp_path)], check=True)
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-c", _RUN_PEAK, "run", "--config", str(tmp_path / "pipeline.toml")],
                          capture_output=True, text=True)
    wall = time.perf_counter() - t0
    code, peak_kb = (int(x) for x in proc.stdout.split()[-2:]) if proc.stdout else (proc.returncode, 0)
    peak_mb = peak_kb / 1024
    report = read_json(tmp_path / "run" / "report" / "report.json") if code == 0 else {}
    raw = sum(c["raw"] for c in report.get("references", {}).values())

    # streaming: the same extraction over a 10x longer file keeps the same peak
    d1 = tmp_path / "d1.jsonl"
    small = tmp_path / "small.jsonl"
    with open(d1, "rb") as src, open(small, "wb") as dst:
        for i, line in enumerate(src):
            if i == 10_000:
                break
            dst.write(line)
    descriptor = tmp_path / "d1.descriptor.toml"
    n_small, peak_small = _extract_peak(small, descriptor)
    n_big, peak_big = _extract_peak(d1, descriptor)
    streaming = n_big == 10 * n_small and peak_big <= 1.2 * peak_small

    ok = code == 0 and wall < 300 and 0 < peak_mb < 4096 and streaming
    verdict(7, ok, f"exit={code} wall={wall:.1f}s peak={peak_mb:.0f}MB raw_refs={raw} "
                   f"nodes={report.get('node_count')} edges={report.get('edge_count')}; "
                   f"extract peak {n_small} recs={peak_small // 1024}MB vs {n_big} recs={peak_big // 1024}MB"
                   + ("" if code == 0 else f"; stderr: {proc.stderr[-500:]}"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
