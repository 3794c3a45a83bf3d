"""Iterative record matching between two sliced datasets.

A query is a conjunction of conditions over attribute pairs. Exact conditions
compare value sets (a DOI is a one-element set, ISSNs a multi-element one) and
hold when the sets intersect; fuzzy conditions compare normalized titles by
edit-distance similarity. Sliced queries only pair records from the same
overlapping publication-year slice, unsliced ones pair any residual records.

Every query removes its matches from both residual stores before the next
query runs.
"""

from __future__ import annotations

import csv
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from citemerge._parallel import ordered_map
from citemerge.ingest import ConfigError, SourceRecord
from citemerge.similarity import meets_threshold, similar_at_least, title_similarity
from citemerge.slicer import UNKNOWN, SliceKey, SlicePlan, key_order

MATCH_FIELDS = ("uid", "doi", "title", "issn", "pub_year")
TEXT_FIELDS = ("uid", "doi", "title")
EXACT, FUZZY = "exact", "fuzzy"


class AuditError(LookupError):
    pass


@dataclass(frozen=True)
class Condition:
    left: str
    right: str
    relation: str = EXACT
    threshold: float | None = None

    def __post_init__(self) -> None:
        for attr in (self.left, self.right):
            if attr not in MATCH_FIELDS:
                raise ConfigError(f"unknown match attribute {attr!r}; expected one of {MATCH_FIELDS}")
        if self.relation == FUZZY:
            if self.threshold is None or not 0.0 < self.threshold <= 1.0:
                raise ConfigError(f"fuzzy threshold must be in (0, 1], got {self.threshold}")
            if self.left not in TEXT_FIELDS or self.right not in TEXT_FIELDS:
                raise ConfigError(f"fuzzy relation needs text attributes, got {self.left}/{self.right}")
        elif self.relation != EXACT:
            raise ConfigError(f"unknown relation {self.relation!r}")


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    conditions: tuple[Condition, ...]
    sliced: bool = True
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.conditions:
            raise ConfigError(f"query {self.query_id!r}: attribute_pairs must be non-empty")

    @property
    def blocking(self) -> Condition | None:
        return next((c for c in self.conditions if c.relation == EXACT), None)

    def to_json(self) -> dict[str, Any]:
        conds = []
        for c in self.conditions:
            d: dict[str, Any] = {"left": c.left, "right": c.right, "relation": c.relation}
            if c.threshold is not None:
                d["threshold"] = c.threshold
            conds.append(d)
        return {"id": self.query_id, "sliced": self.sliced, "enabled": self.enabled,
                "conditions": conds}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> QuerySpec:
        try:
            conds = tuple(
                Condition(c["left"], c["right"], c.get("relation", EXACT), c.get("threshold"))
                for c in obj["conditions"]
            )
            return cls(str(obj["id"]), conds, bool(obj.get("sliced", True)),
                       bool(obj.get("enabled", True)))
        except KeyError as exc:
            raise ConfigError(f"query definition missing key {exc}") from None


def default_queries(threshold: float = 0.95) -> list[QuerySpec]:
    """DOI within year slices, DOI across all residuals, then title + ISSN."""
    doi = Condition("doi", "doi")
    return [
        QuerySpec("q1", (doi,), sliced=True),
        QuerySpec("q1_residual", (doi,), sliced=False),
        QuerySpec("q2", (Condition("title", "title", FUZZY, threshold), Condition("issn", "issn")),
                  sliced=True),
    ]


@dataclass(frozen=True, order=True)
class MatchPair:
    d1_uid: str
    d2_uid: str
    query_id: str
    score: float


@dataclass
class MatchSet:
    """One-to-one set of cross-dataset pairs."""

    pairs: list[MatchPair] = field(default_factory=list)
    by_d1: dict[str, MatchPair] = field(default_factory=dict)
    by_d2: dict[str, MatchPair] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pairs, self.pairs = self.pairs, []
        for p in pairs:
            self.add(p)

    def add(self, pair: MatchPair) -> None:
        if pair.d1_uid in self.by_d1 or pair.d2_uid in self.by_d2:
            raise ValueError(f"pair {pair.d1_uid}/{pair.d2_uid} breaks one-to-one matching")
        self.pairs.append(pair)
        self.by_d1[pair.d1_uid] = pair
        self.by_d2[pair.d2_uid] = pair

    def extend(self, pairs: Iterable[MatchPair]) -> None:
        for p in pairs:
            self.add(p)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[MatchPair]:
        return iter(self.pairs)

    def as_set(self) -> set[tuple[str, str, str]]:
        return {(p.d1_uid, p.d2_uid, p.query_id) for p in self.pairs}

    def counts_by_query(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for p in self.pairs:
            out[p.query_id] = out.get(p.query_id, 0) + 1
        return out


# --------------------------------------------------------------------------
# record stores


class RecordStore:
    """Residual records of one dataset, grouped by slice key."""

    def __init__(self, slices: dict[SliceKey, Iterable[SourceRecord]]) -> None:
        self._slices: dict[SliceKey, dict[str, SourceRecord]] = {}
        self._key: dict[str, SliceKey] = {}
        self.duplicate_uids = 0
        for key in sorted(slices, key=key_order):
            bucket = self._slices.setdefault(key, {})
            for rec in slices[key]:
                if rec.source_uid in self._key:
                    self.duplicate_uids += 1
                    continue
                bucket[rec.source_uid] = rec
                self._key[rec.source_uid] = key

    @classmethod
    def from_records(cls, records: Iterable[SourceRecord], plan: SlicePlan) -> RecordStore:
        slices: dict[SliceKey, list[SourceRecord]] = defaultdict(list)
        for rec in records:
            slices[plan.key_for(rec.pub_year)].append(rec)
        return cls(slices)

    def __len__(self) -> int:
        return len(self._key)

    def __contains__(self, uid: str) -> bool:
        return uid in self._key

    def get(self, uid: str) -> SourceRecord:
        return self._slices[self._key[uid]][uid]

    def slice(self, key: SliceKey) -> list[SourceRecord]:
        return list(self._slices.get(key, {}).values())

    def records(self) -> Iterator[SourceRecord]:
        for bucket in self._slices.values():
            yield from bucket.values()

    def remove(self, uid: str) -> SourceRecord:
        key = self._key.pop(uid)
        return self._slices[key].pop(uid)


# --------------------------------------------------------------------------
# pair evaluation


def _values(rec: SourceRecord, attr: str) -> frozenset | None:
    if attr == "doi":
        return frozenset((rec.doi,)) if rec.doi else None
    if attr == "title":
        return frozenset((rec.norm_title,)) if rec.norm_title else None
    if attr == "issn":
        return rec.issns or None
    if attr == "pub_year":
        return frozenset((rec.pub_year,)) if rec.pub_year is not None else None
    return frozenset((rec.source_uid,))


def _text(rec: SourceRecord, attr: str) -> str | None:
    if attr == "title":
        return rec.norm_title or None
    if attr == "doi":
        return rec.doi
    return rec.source_uid


def _has_all(rec: SourceRecord, attrs: Sequence[str]) -> bool:
    return all(_values(rec, a) is not None for a in attrs)


def evaluate_pair(spec: QuerySpec, r1: SourceRecord, r2: SourceRecord) -> float | None:
    """Score of the pair under every condition of spec, or None if one fails.

    The score is the lowest fuzzy similarity involved, 1.0 for exact-only specs.
    """
    score = 1.0
    for c in spec.conditions:
        if c.relation == EXACT:
            v1, v2 = _values(r1, c.left), _values(r2, c.right)
            if v1 is None or v2 is None or v1.isdisjoint(v2):
                return None
        else:
            t1, t2 = _text(r1, c.left), _text(r2, c.right)
            if t1 is None or t2 is None:
                return None
            sim = similar_at_least(t1, t2, c.threshold)
            if sim is None:
                return None
            score = min(score, sim)
    return score


def match_block(spec: QuerySpec, left: Sequence[SourceRecord],
                right: Sequence[SourceRecord]) -> list[MatchPair]:
    """All candidate pairs of one block (a slice, or a hash bucket).

    With an exact condition present, right records are indexed by that
    condition's values and only index hits are scored; identical titles
    short-circuit the distance computation inside the fuzzy check.
    """
    left_attrs = [c.left for c in spec.conditions]
    right_attrs = [c.right for c in spec.conditions]
    left = [r for r in left if _has_all(r, left_attrs)]
    right = [r for r in right if _has_all(r, right_attrs)]
    out: list[MatchPair] = []
    if not left or not right:
        return out
    block = spec.blocking
    if block is None:
        for r1 in left:
            for r2 in right:
                s = evaluate_pair(spec, r1, r2)
                if s is not None:
                    out.append(MatchPair(r1.source_uid, r2.source_uid, spec.query_id, s))
        return out
    index: dict[Any, list[int]] = defaultdict(list)
    for j, r2 in enumerate(right):
        for v in _values(r2, block.right):
            index[v].append(j)
    for r1 in left:
        hits: set[int] = set()
        for v in _values(r1, block.left):
            hits.update(index.get(v, ()))
        for j in sorted(hits):
            r2 = right[j]
            s = evaluate_pair(spec, r1, r2)
            if s is not None:
                out.append(MatchPair(r1.source_uid, r2.source_uid, spec.query_id, s))
    return out


def _match_block_job(args: tuple[QuerySpec, list[SourceRecord], list[SourceRecord]]) -> list[MatchPair]:
    return match_block(*args)


def _policy_key(p: MatchPair) -> tuple[float, str, str]:
    return (-p.score, p.d1_uid, p.d2_uid)


@dataclass
class Resolution:
    pairs: list[MatchPair]
    ambiguous_dropped: int = 0


def resolve_ambiguities(candidates: Iterable[MatchPair]) -> Resolution:
    """Greedy one-to-one selection by (score desc, d1_uid asc, d2_uid asc).

    Repeated (d1, d2) candidates collapse to the best-scoring one before
    selection; every other candidate touching an accepted uid is dropped and
    counted.
    """
    best: dict[tuple[str, str], MatchPair] = {}
    for p in candidates:
        k = (p.d1_uid, p.d2_uid)
        if k not in best or _policy_key(p) < _policy_key(best[k]):
            best[k] = p
    used1: set[str] = set()
    used2: set[str] = set()
    accepted: list[MatchPair] = []
    dropped = 0
    for p in sorted(best.values(), key=_policy_key):
        if p.d1_uid in used1 or p.d2_uid in used2:
            dropped += 1
            continue
        used1.add(p.d1_uid)
        used2.add(p.d2_uid)
        accepted.append(p)
    return Resolution(accepted, dropped)


# --------------------------------------------------------------------------
# query execution


@dataclass
class QueryResult:
    query_id: str
    pairs: list[MatchPair]
    candidates: int
    ambiguous_dropped: int
    blocks: int

    def to_json(self) -> dict[str, Any]:
        return {"query_id": self.query_id, "matched": len(self.pairs),
                "candidates": self.candidates, "ambiguous_dropped": self.ambiguous_dropped,
                "blocks": self.blocks}


def _bucket(value: Any, n: int) -> int:
    return zlib.crc32(str(value).encode("utf-8")) % n


def _blocks(spec: QuerySpec, plan: SlicePlan, res1: RecordStore, res2: RecordStore,
            workers: int) -> list[tuple[QuerySpec, list[SourceRecord], list[SourceRecord]]]:
    if spec.sliced:
        tasks = []
        for key in plan.sliced_keys:
            left, right = res1.slice(key), res2.slice(key)
            if left and right:
                tasks.append((spec, left, right))
        return tasks
    left, right = list(res1.records()), list(res2.records())
    block = spec.blocking
    if block is None or workers == 1:
        return [(spec, left, right)]
    # hash-partition on the blocking values; a multi-valued record joins every
    # bucket of its values and duplicates collapse in resolve_ambiguities
    lb: list[list[SourceRecord]] = [[] for _ in range(workers)]
    rb: list[list[SourceRecord]] = [[] for _ in range(workers)]
    for recs, buckets, attr in ((left, lb, block.left), (right, rb, block.right)):
        for r in recs:
            vals = _values(r, attr)
            if vals is None:
                continue
            for b in sorted({_bucket(v, workers) for v in vals}):
                buckets[b].append(r)
    return [(spec, l, r) for l, r in zip(lb, rb) if l and r]


def run_query(spec: QuerySpec, plan: SlicePlan, residual_d1: RecordStore,
              residual_d2: RecordStore, workers: int = 1) -> QueryResult:
    """Run one query and delete its matches from both residual stores."""
    tasks = _blocks(spec, plan, residual_d1, residual_d2, workers)
    candidates: list[tuple[int, MatchPair]] = []
    for i, found in enumerate(ordered_map(_match_block_job, tasks, workers=workers)):
        candidates.extend((i, p) for p in found)
    res = resolve_ambiguities(p for _, p in candidates)
    first_block = {}
    for i, p in candidates:
        first_block.setdefault((p.d1_uid, p.d2_uid), i)
    pairs = sorted(res.pairs, key=lambda p: (first_block[(p.d1_uid, p.d2_uid)],) + _policy_key(p))
    for p in pairs:
        residual_d1.remove(p.d1_uid)
        residual_d2.remove(p.d2_uid)
    return QueryResult(spec.query_id, pairs, len(candidates), res.ambiguous_dropped, len(tasks))


def run_queries(specs: Sequence[QuerySpec], plan: SlicePlan, residual_d1: RecordStore,
                residual_d2: RecordStore, workers: int = 1) -> tuple[MatchSet, list[QueryResult]]:
    matches = MatchSet()
    results = []
    for spec in specs:
        if not spec.enabled:
            continue
        result = run_query(spec, plan, residual_d1, residual_d2, workers)
        matches.extend(result.pairs)
        results.append(result)
    return matches, results


# --------------------------------------------------------------------------
# brute-force oracle


def _oracle_holds(spec: QuerySpec, r1: SourceRecord, r2: SourceRecord) -> float | None:
    score = 1.0
    for c in sorted(spec.conditions, key=lambda c: c.relation != EXACT):
        if c.relation == EXACT:
            v1, v2 = _values(r1, c.left), _values(r2, c.right)
            if not v1 or not v2 or not (set(v1) & set(v2)):
                return None
        else:
            t1, t2 = _text(r1, c.left), _text(r2, c.right)
            if not t1 or not t2:
                return None
            sim = title_similarity(t1, t2)
            if not meets_threshold(sim, c.threshold):
                return None
            score = min(score, sim)
    return score


def oracle_match(d1_records: Sequence[SourceRecord], d2_records: Sequence[SourceRecord],
                 specs: Sequence[QuerySpec], plan: SlicePlan) -> MatchSet:
    """Single-threaded all-pairs reference for ``run_queries``.

    No slice files, indexes, or blocking: the slice relation is evaluated as a
    predicate (same known overlap year) on every pair.
    """
    res1: dict[str, SourceRecord] = {}
    res2: dict[str, SourceRecord] = {}
    for store, recs in ((res1, d1_records), (res2, d2_records)):
        for r in recs:
            store.setdefault(r.source_uid, r)
    sliced_ok = set(plan.sliced_keys)
    matches = MatchSet()
    for spec in specs:
        if not spec.enabled:
            continue
        left = [(r, plan.key_for(r.pub_year)) for r in res1.values()]
        right = [(r, plan.key_for(r.pub_year)) for r in res2.values()]
        found = []
        for r1, k1 in left:
            if spec.sliced and k1 not in sliced_ok:
                continue
            for r2, k2 in right:
                if spec.sliced and k1 != k2:
                    continue
                s = _oracle_holds(spec, r1, r2)
                if s is not None:
                    found.append(MatchPair(r1.source_uid, r2.source_uid, spec.query_id, s))
        accepted = resolve_ambiguities(found).pairs
        for p in accepted:
            del res1[p.d1_uid]
            del res2[p.d2_uid]
        matches.extend(accepted)
    return matches


# --------------------------------------------------------------------------
# audit


HISTOGRAM_BINS = 20


def _histogram(sims: Iterable[float]) -> list[int]:
    bins = [0] * HISTOGRAM_BINS
    for s in sims:
        bins[min(int(s * HISTOGRAM_BINS + 1e-9), HISTOGRAM_BINS - 1)] += 1
    return bins


def audit_matches(pairs: Iterable[MatchPair], d1_titles: dict[str, str],
                  d2_titles: dict[str, str], threshold: float) -> dict[str, Any]:
    """Share of matched pairs whose normalized titles reach ``threshold``.

    Purely diagnostic: nothing is unmatched.
    """
    by_query: dict[str, list[int]] = {}
    sims = []
    for p in pairs:
        if p.d1_uid not in d1_titles:
            raise AuditError(f"audit: no D1 record for uid {p.d1_uid}")
        if p.d2_uid not in d2_titles:
            raise AuditError(f"audit: no D2 record for uid {p.d2_uid}")
        s = title_similarity(d1_titles[p.d1_uid], d2_titles[p.d2_uid])
        sims.append(s)
        q = by_query.setdefault(p.query_id, [0, 0])
        q[0] += 1
        q[1] += meets_threshold(s, threshold)
    passing = sum(q[1] for q in by_query.values())
    return {
        "threshold": threshold,
        "pairs": len(sims),
        "passing": passing,
        "rate": passing / len(sims) if sims else None,
        "histogram": {"bin_width": 1 / HISTOGRAM_BINS, "counts": _histogram(sims)},
        "by_query": {
            q: {"pairs": n, "passing": k, "rate": k / n}
            for q, (n, k) in sorted(by_query.items())
        },
    }


# --------------------------------------------------------------------------
# CSV


MATCH_HEADER = ("d1_uid", "d2_uid", "query_id", "score")


def write_matches(path: str | Path, pairs: Iterable[MatchPair]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCH_HEADER)
        for p in pairs:
            w.writerow((p.d1_uid, p.d2_uid, p.query_id, repr(p.score)))
            n += 1
    return n


def read_matches(path: str | Path) -> list[MatchPair]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.DictReader(fh)
        if tuple(rows.fieldnames or ()) != MATCH_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MATCH_HEADER)}")
        return [MatchPair(r["d1_uid"], r["d2_uid"], r["query_id"], float(r["score"])) for r in rows]
