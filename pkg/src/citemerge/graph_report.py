"""Citation graph materialization, degree statistics, and report export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from citemerge.merger import BOTH, D1_ONLY, D2_ONLY, Crosswalk, IntegrityError, MergedRecord

EDGE_PROVENANCE = ("D1", "D2", "BOTH")
_PROV_CODE = {p: i for i, p in enumerate(EDGE_PROVENANCE)}


@dataclass
class CitationGraph:
    """Directed citation edges between MUIDs, sorted by (src, dst)."""

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    provenance: np.ndarray  # index into EDGE_PROVENANCE

    @property
    def edge_count(self) -> int:
        return int(self.src.size)

    def edges(self) -> Iterable[tuple[int, int, str]]:
        for s, d, p in zip(self.src.tolist(), self.dst.tolist(), self.provenance.tolist()):
            yield s, d, EDGE_PROVENANCE[p]

    def in_degree(self, mask: np.ndarray | None = None) -> np.ndarray:
        dst = self.dst if mask is None else self.dst[mask]
        return np.bincount(dst, minlength=self.node_count)

    def out_degree(self, mask: np.ndarray | None = None) -> np.ndarray:
        src = self.src if mask is None else self.src[mask]
        return np.bincount(src, minlength=self.node_count)

    def seen_by(self, source: str) -> np.ndarray:
        """Mask of edges a single source dataset contributes on its own."""
        return (self.provenance == _PROV_CODE[source]) | (self.provenance == _PROV_CODE[BOTH])


def _from_arrays(node_count: int, src: list[int], dst: list[int], prov: list[int]) -> CitationGraph:
    s = np.asarray(src, dtype=np.int64)
    d = np.asarray(dst, dtype=np.int64)
    p = np.asarray(prov, dtype=np.int8)
    if s.size:
        if s.min() < 0 or d.min() < 0 or s.max() >= node_count or d.max() >= node_count:
            raise IntegrityError("edge endpoint outside the MUID range")
        if np.any(s == d):
            raise IntegrityError("self-loop in citation graph")
        order = np.lexsort((d, s))
        s, d, p = s[order], d[order], p[order]
        if np.any((s[1:] == s[:-1]) & (d[1:] == d[:-1])):
            raise IntegrityError("duplicate edge in citation graph")
    return CitationGraph(node_count, s, d, p)


def build_graph(merged: Iterable[MergedRecord], node_count: int | None = None) -> CitationGraph:
    """One edge per (record, reference MUID), labelled with its contributing source(s)."""
    src: list[int] = []
    dst: list[int] = []
    prov: list[int] = []
    n = 0
    for rec in merged:
        n = max(n, rec.muid + 1)
        src.extend([rec.muid] * len(rec.reference_muids))
        dst.extend(rec.reference_muids)
        prov.extend(_PROV_CODE[p] for p in rec.reference_provenance)
    if node_count is None:
        node_count = n
    elif n > node_count:
        raise IntegrityError(f"record MUID {n - 1} outside node count {node_count}")
    if len(prov) != len(dst):
        raise IntegrityError("reference provenance does not line up with references")
    return _from_arrays(node_count, src, dst, prov)


EDGE_HEADER = ("src_muid", "dst_muid", "provenance")


def export_edges(graph: CitationGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(EDGE_HEADER) + "\n")
        fh.writelines(f"{s},{d},{p}\n" for s, d, p in graph.edges())


def read_edges(path: str | Path, node_count: int) -> CitationGraph:
    src, dst, prov = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != EDGE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(EDGE_HEADER)}")
        for s, d, p in reader:
            src.append(int(s))
            dst.append(int(d))
            prov.append(_PROV_CODE[p])
    return _from_arrays(node_count, src, dst, prov)


# --------------------------------------------------------------------------
# report


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def _mean(values: np.ndarray) -> float | None:
    return float(values.mean()) if values.size else None


def _matched_averages(total: np.ndarray, d1: np.ndarray, d2: np.ndarray,
                      both: np.ndarray) -> dict[str, Any]:
    active = both & (total > 0)
    return {
        "records": int(active.sum()),
        "merged": _mean(total[active]),
        "D1": _mean(d1[active]),
        "D2": _mean(d2[active]),
        "inclusive": {
            "records": int(both.sum()),
            "merged": _mean(total[both]),
            "D1": _mean(d1[both]),
            "D2": _mean(d2[both]),
        },
    }


def compute_report(
    graph: CitationGraph,
    crosswalk: Crosswalk,
    *,
    source_records: Mapping[str, int],
    doi_records: Mapping[str, int],
    matched_by_query: Mapping[str, int],
    reference_counters: Mapping[str, Mapping[str, Any]],
    filter_summary: Mapping[str, Any] | None = None,
    title_audit: Mapping[str, Any] | None = None,
    muid_audit: Mapping[str, Any] | None = None,
    declared_reference_counts: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Every merge statistic as a JSON-ready dict with a fixed key order.

    Citations are in-degrees and references out-degrees. Matched-record
    averages run over BOTH records with at least one citation (resp.
    reference) in the merged graph; each source's figure counts the edges that
    source contributes on the same records. Inclusive averages over all BOTH
    records are reported alongside.
    """
    n = len(crosswalk)
    if graph.node_count != n:
        raise IntegrityError(f"graph has {graph.node_count} nodes, crosswalk {n} rows")
    prov_counts = crosswalk.provenance_counts()
    both = np.zeros(n, dtype=bool)
    for muid, (_, _, prov) in enumerate(crosswalk.rows):
        both[muid] = prov == BOTH

    n1 = prov_counts[BOTH] + prov_counts[D1_ONLY]
    n2 = prov_counts[BOTH] + prov_counts[D2_ONLY]
    matched_total = sum(matched_by_query.values())
    e = graph.edge_count
    e_by = {p: int((graph.provenance == _PROV_CODE[p]).sum()) for p in EDGE_PROVENANCE}
    e1 = e_by["D1"] + e_by["BOTH"]
    e2 = e_by["D2"] + e_by["BOTH"]

    m1, m2 = graph.seen_by("D1"), graph.seen_by("D2")
    indeg, outdeg = graph.in_degree(), graph.out_degree()

    return {
        "node_count": n,
        "edge_count": e,
        "source_records": {s: int(source_records.get(s, 0)) for s in ("D1", "D2")},
        "merged_source_records": {"D1": n1, "D2": n2},
        "matched_by_query": {
            q: {
                "count": c,
                "fraction_of_matches": _ratio(c, matched_total),
                "fraction_of_d1": _ratio(c, source_records.get("D1", 0)),
                "fraction_of_d2": _ratio(c, source_records.get("D2", 0)),
            }
            for q, c in matched_by_query.items()
        },
        "doi_coverage": {
            s: {"records_with_doi": int(doi_records.get(s, 0)),
                "fraction": _ratio(doi_records.get(s, 0), source_records.get(s, 0))}
            for s in ("D1", "D2")
        },
        "provenance_distribution": {
            p: {"count": prov_counts[p], "fraction": _ratio(prov_counts[p], n)}
            for p in (D1_ONLY, D2_ONLY, BOTH)
        },
        "dprime_ratios": {
            s: {
                "references": c.get("raw", 0),
                "omitted": c.get("omitted", 0),
                "ratio": _ratio(c.get("omitted", 0), c.get("raw", 0)),
                "distinct_omitted_works": c.get("distinct_omitted_works", 0),
            }
            for s, c in reference_counters.items()
        },
        "edge_distribution": {
            p: {"count": e_by[p], "fraction": _ratio(e_by[p], e)} for p in EDGE_PROVENANCE
        },
        "degree": {
            "sum_in_degree": int(indeg.sum()),
            "sum_out_degree": int(outdeg.sum()),
            "max_in_degree": int(indeg.max()) if n else 0,
            "max_out_degree": int(outdeg.max()) if n else 0,
        },
        "growth": {
            "nodes_vs_D1": _ratio(n - n1, n1),
            "nodes_vs_D2": _ratio(n - n2, n2),
            "edges_vs_D1": _ratio(e - e1, e1),
            "edges_vs_D2": _ratio(e - e2, e2),
        },
        "avg_citations_matched": _matched_averages(
            indeg, graph.in_degree(m1), graph.in_degree(m2), both),
        "avg_references_matched": _matched_averages(
            outdeg, graph.out_degree(m1), graph.out_degree(m2), both),
        "declared_reference_counts": dict(declared_reference_counts or {}),
        "references": {s: dict(c) for s, c in reference_counters.items()},
        "filter": dict(filter_summary or {}),
        "title_audit": dict(title_audit or {}),
        "muid_audit": dict(muid_audit or {}),
    }


def export_report(report: Mapping[str, Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")
