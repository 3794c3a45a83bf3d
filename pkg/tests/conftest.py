from __future__ import annotations

import json
from pathlib import Path

import pytest

from citemerge import pipeline, synthgen
from citemerge.ingest import RawReference, SourceRecord, normalize_title


def rec(uid, doi=None, title="", issns=(), year=None, refs=()) -> SourceRecord:
    return SourceRecord(
        source_uid=uid,
        doi=doi,
        raw_title=title,
        norm_title=normalize_title(title),
        issns=frozenset(issns),
        pub_year=year,
        references=tuple(refs),
    )


def ref(doi=None, title=None, year=None, uid=None) -> RawReference:
    return RawReference(doi, normalize_title(title) if title else None, year, uid)


def generate_and_run(root: Path, gen: synthgen.GenConfig, workers: int = 1,
                     out_name: str = "run", **overrides) -> tuple[pipeline.PipelineConfig, synthgen.GroundTruth]:
    paths = synthgen.generate(gen, root)
    cfg = pipeline.load_config(paths["pipeline"], workers=workers, out=root / out_name)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    pipeline.run_pipeline(cfg)
    return cfg, synthgen.GroundTruth.load(paths["truth"])


def read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """One noisy 600+500 instance run end to end, shared by read-only tests."""
    root = tmp_path_factory.mktemp("small")
    gen = synthgen.GenConfig(seed=11, n1=600, n2=500, overlap=0.4, title_noise_rate=0.3,
                             doi_coverage_d2=0.6, year_anomaly_rate=0.1,
                             cross_only_citation_rate=0.2, stoplist_rate=0.005)
    cfg, truth = generate_and_run(root, gen)
    return root, cfg, truth


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
