"""Union-quotient of two matched datasets: MUIDs, crosswalk, reference lists."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from citemerge._parallel import ordered_map
from citemerge.ingest import RawReference, SourceRecord, normalize_title, read_jsonl
from citemerge.matcher import MatchPair
from citemerge.similarity import meets_threshold, title_similarity

D1_ONLY, D2_ONLY, BOTH = "D1_ONLY", "D2_ONLY", "BOTH"
SOURCES = ("D1", "D2")
DEFAULT_STOPLIST = ("review", "correction")


class IntegrityError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# inconsistent-record filter


class Stoplist:
    """Normalized titles to drop; a trailing ``*`` makes a whole-word prefix."""

    def __init__(self, patterns: Iterable[str] = DEFAULT_STOPLIST) -> None:
        self.patterns = tuple(patterns)
        exact, prefixes = set(), []
        for pat in self.patterns:
            if pat.endswith("*"):
                p = normalize_title(pat[:-1])
                if p:
                    prefixes.append(p)
            else:
                exact.add(normalize_title(pat))
        self.exact = frozenset(exact)
        self.prefixes = tuple(prefixes)

    def matches(self, norm_title: str) -> bool:
        if norm_title in self.exact:
            return True
        return any(norm_title == p or norm_title.startswith(p + " ") for p in self.prefixes)


@dataclass
class FilterCount:
    removed: int = 0


def filter_inconsistent(records: Iterable[SourceRecord], stoplist: Stoplist,
                        count: FilterCount | None = None) -> Iterator[SourceRecord]:
    """Drop records whose normalized title is on the stoplist, counting them."""
    count = count if count is not None else FilterCount()
    for rec in records:
        if stoplist.matches(rec.norm_title):
            count.removed += 1
        else:
            yield rec


@dataclass
class FilterOutcome:
    d1: dict[str, SourceRecord]
    d2: dict[str, SourceRecord]
    matches: list[MatchPair]
    candidates: int
    removed: int
    removed_pairs: int
    removed_d1_only: int
    removed_d2_only: int

    @property
    def removed_fraction(self) -> float | None:
        return self.removed / self.candidates if self.candidates else None

    def to_json(self) -> dict[str, Any]:
        return {
            "candidates": self.candidates,
            "removed": self.removed,
            "removed_fraction": self.removed_fraction,
            "removed_matched_pairs": self.removed_pairs,
            "removed_d1_only": self.removed_d1_only,
            "removed_d2_only": self.removed_d2_only,
        }


def filter_merged_candidates(d1: Mapping[str, SourceRecord], d2: Mapping[str, SourceRecord],
                             matches: Sequence[MatchPair], stoplist: Stoplist) -> FilterOutcome:
    """Apply the stoplist to merge candidates after record matching.

    A matched pair is one candidate, judged on its canonical title (D1's,
    else D2's); unmatched records are judged on their own title.
    """
    for p in matches:
        if p.d1_uid not in d1:
            raise IntegrityError(f"matched D1 uid {p.d1_uid} not among D1 records")
        if p.d2_uid not in d2:
            raise IntegrityError(f"matched D2 uid {p.d2_uid} not among D2 records")
    drop1: set[str] = set()
    drop2: set[str] = set()
    kept_pairs = []
    for p in matches:
        title = d1[p.d1_uid].norm_title or d2[p.d2_uid].norm_title
        if stoplist.matches(title):
            drop1.add(p.d1_uid)
            drop2.add(p.d2_uid)
        else:
            kept_pairs.append(p)
    removed_pairs = len(drop1)
    matched1 = {p.d1_uid for p in matches}
    matched2 = {p.d2_uid for p in matches}
    c1, c2 = FilterCount(), FilterCount()
    only1 = [r for r in d1.values() if r.source_uid not in matched1]
    only2 = [r for r in d2.values() if r.source_uid not in matched2]
    for only, drop, count in ((only1, drop1, c1), (only2, drop2, c2)):
        kept = {r.source_uid for r in filter_inconsistent(only, stoplist, count)}
        drop.update(r.source_uid for r in only if r.source_uid not in kept)
    return FilterOutcome(
        d1={u: r for u, r in d1.items() if u not in drop1},
        d2={u: r for u, r in d2.items() if u not in drop2},
        matches=kept_pairs,
        candidates=len(d1) + len(d2) - len(matches),
        removed=removed_pairs + c1.removed + c2.removed,
        removed_pairs=removed_pairs,
        removed_d1_only=c1.removed,
        removed_d2_only=c2.removed,
    )


# --------------------------------------------------------------------------
# MUIDs and crosswalk


@dataclass(slots=True)
class MergedRecord:
    muid: int
    provenance: str
    d1_uid: str | None
    d2_uid: str | None
    norm_title: str
    pub_year: int | None
    reference_muids: list[int] = field(default_factory=list)
    reference_provenance: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "muid": self.muid,
            "provenance": self.provenance,
            "d1_uid": self.d1_uid,
            "d2_uid": self.d2_uid,
            "title": self.norm_title,
            "year": self.pub_year,
            "references": self.reference_muids,
            "reference_provenance": self.reference_provenance,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> MergedRecord:
        return cls(obj["muid"], obj["provenance"], obj["d1_uid"], obj["d2_uid"],
                   obj["title"], obj["year"], list(obj["references"]),
                   list(obj["reference_provenance"]))


@dataclass
class Crosswalk:
    rows: list[tuple[str | None, str | None, str]] = field(default_factory=list)
    by_d1: dict[str, int] = field(default_factory=dict)
    by_d2: dict[str, int] = field(default_factory=dict)

    def append(self, d1_uid: str | None, d2_uid: str | None) -> int:
        if d1_uid is None and d2_uid is None:
            raise IntegrityError("crosswalk row needs at least one source uid")
        prov = BOTH if d1_uid and d2_uid else (D1_ONLY if d1_uid else D2_ONLY)
        muid = len(self.rows)
        if d1_uid is not None:
            if d1_uid in self.by_d1:
                raise IntegrityError(f"D1 uid {d1_uid} assigned twice")
            self.by_d1[d1_uid] = muid
        if d2_uid is not None:
            if d2_uid in self.by_d2:
                raise IntegrityError(f"D2 uid {d2_uid} assigned twice")
            self.by_d2[d2_uid] = muid
        self.rows.append((d1_uid, d2_uid, prov))
        return muid

    def __len__(self) -> int:
        return len(self.rows)

    def index(self, source: str) -> dict[str, int]:
        return self.by_d1 if source == "D1" else self.by_d2

    def provenance_counts(self) -> dict[str, int]:
        out = {BOTH: 0, D1_ONLY: 0, D2_ONLY: 0}
        for _, _, prov in self.rows:
            out[prov] += 1
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("muid", "d1_uid", "d2_uid", "provenance"))
            for muid, (u1, u2, prov) in enumerate(self.rows):
                w.writerow((muid, u1 or "", u2 or "", prov))

    @classmethod
    def read_csv(cls, path: str | Path) -> Crosswalk:
        cw = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for i, row in enumerate(csv.DictReader(fh)):
                if int(row["muid"]) != i:
                    raise IntegrityError(f"{path}: muids not dense at row {i}")
                cw.append(row["d1_uid"] or None, row["d2_uid"] or None)
        return cw


def assign_muids(d1: Mapping[str, SourceRecord], d2: Mapping[str, SourceRecord],
                 matches: Sequence[MatchPair]) -> tuple[list[MergedRecord], Crosswalk]:
    """Dense MUIDs: matched pairs by d1_uid, then D1-only by uid, then D2-only.

    Canonical title and year come from the D1 record, falling back to D2.
    """
    for p in matches:
        if p.d1_uid not in d1:
            raise IntegrityError(f"matched D1 uid {p.d1_uid} absent from D1 input")
        if p.d2_uid not in d2:
            raise IntegrityError(f"matched D2 uid {p.d2_uid} absent from D2 input")
    cw = Crosswalk()
    merged = []
    for p in sorted(matches, key=lambda p: p.d1_uid):
        r1, r2 = d1[p.d1_uid], d2[p.d2_uid]
        muid = cw.append(p.d1_uid, p.d2_uid)
        year = r1.pub_year if r1.pub_year is not None else r2.pub_year
        merged.append(MergedRecord(muid, BOTH, p.d1_uid, p.d2_uid,
                                   r1.norm_title or r2.norm_title, year))
    matched1 = {p.d1_uid for p in matches}
    matched2 = {p.d2_uid for p in matches}
    for uid in sorted(set(d1) - matched1):
        r = d1[uid]
        merged.append(MergedRecord(cw.append(uid, None), D1_ONLY, uid, None, r.norm_title, r.pub_year))
    for uid in sorted(set(d2) - matched2):
        r = d2[uid]
        merged.append(MergedRecord(cw.append(None, uid), D2_ONLY, None, uid, r.norm_title, r.pub_year))
    return merged, cw


# --------------------------------------------------------------------------
# reference resolution


@dataclass
class ReferenceIndex:
    uid: dict[str, dict[str, int]]
    doi: dict[str, int]
    title_year: dict[tuple[str, int], int]


def build_reference_index(crosswalk: Crosswalk, d1: Mapping[str, SourceRecord],
                          d2: Mapping[str, SourceRecord]) -> ReferenceIndex:
    """Lookup tables from source uid, DOI, and (title, year) to MUID.

    Both source records of a matched pair are indexed; on key collisions the
    smallest MUID wins.
    """
    doi: dict[str, int] = {}
    title_year: dict[tuple[str, int], int] = {}
    for muid, (u1, u2, _) in enumerate(crosswalk.rows):
        for uid, records in ((u1, d1), (u2, d2)):
            if uid is None:
                continue
            rec = records[uid]
            if rec.doi:
                doi.setdefault(rec.doi, muid)
            if rec.norm_title and rec.pub_year is not None:
                title_year.setdefault((rec.norm_title, rec.pub_year), muid)
    return ReferenceIndex({"D1": dict(crosswalk.by_d1), "D2": dict(crosswalk.by_d2)},
                          doi, title_year)


def resolve_reference(ref: RawReference, source: str, index: ReferenceIndex) -> int | None:
    """MUID of the cited record: by source uid, then DOI, then title within a year."""
    if ref.target_uid is not None:
        muid = index.uid[source].get(ref.target_uid)
        if muid is not None:
            return muid
    if ref.doi is not None:
        muid = index.doi.get(ref.doi)
        if muid is not None:
            return muid
    if ref.norm_title and ref.ref_year is not None:
        ty = index.title_year
        for year in (ref.ref_year, ref.ref_year - 1, ref.ref_year + 1):
            muid = ty.get((ref.norm_title, year))
            if muid is not None:
                return muid
    return None


def _omission_key(ref: RawReference) -> tuple:
    if ref.doi is not None:
        return ("doi", ref.doi)
    if ref.target_uid is not None:
        return ("uid", ref.target_uid)
    return ("title", ref.norm_title, ref.ref_year)


_WORKER_INDEX: ReferenceIndex | None = None


def _install_index(index: ReferenceIndex) -> None:
    global _WORKER_INDEX
    _WORKER_INDEX = index


def _resolve_batch(args: tuple[str, list[tuple[str, tuple[RawReference, ...]]]]):
    source, batch = args
    index = _WORKER_INDEX
    out = []
    for uid, refs in batch:
        out.append((uid, [resolve_reference(r, source, index) for r in refs]))
    return out


def _batched(items: Iterable, size: int) -> Iterator[list]:
    batch = []
    for item in items:
        batch.append(item)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


@dataclass
class ReferenceCounters:
    raw: int = 0
    resolved: int = 0
    omitted: int = 0
    deduped: int = 0
    self_dropped: int = 0
    unmerged_record_references: int = 0
    distinct_omitted_works: int = 0
    duplicate_source_records: int = 0

    def conserved(self) -> bool:
        return self.resolved + self.omitted + self.deduped + self.self_dropped == self.raw

    def to_json(self) -> dict[str, Any]:
        return {
            "raw": self.raw,
            "resolved": self.resolved,
            "omitted": self.omitted,
            "deduped": self.deduped,
            "self_dropped": self.self_dropped,
            "unmerged_record_references": self.unmerged_record_references,
            "distinct_omitted_works": self.distinct_omitted_works,
            "duplicate_source_records": self.duplicate_source_records,
            "dprime_ratio": self.omitted / self.raw if self.raw else None,
        }


def dedupe_references(record: MergedRecord,
                      counters: Mapping[str, ReferenceCounters] | None = None) -> MergedRecord:
    """Drop repeated and self references, keeping first occurrences.

    Removals are charged to the source that contributed the dropped entry.
    A repeated target reached from the other source upgrades the kept
    edge's provenance to BOTH.
    """
    if counters is None:
        counters = {s: ReferenceCounters() for s in SOURCES}
    targets: list[int] = []
    provs: list[str] = []
    pos: dict[int, int] = {}
    provenance = record.reference_provenance or ["D1"] * len(record.reference_muids)
    for t, src in zip(record.reference_muids, provenance):
        if t == record.muid:
            counters[src].self_dropped += 1
        elif t in pos:
            counters[src].deduped += 1
            i = pos[t]
            if provs[i] != src:
                provs[i] = BOTH
        else:
            pos[t] = len(targets)
            targets.append(t)
            provs.append(src)
    return MergedRecord(record.muid, record.provenance, record.d1_uid, record.d2_uid,
                        record.norm_title, record.pub_year, targets, provs)


def resolve_references(
    merged: list[MergedRecord],
    crosswalk: Crosswalk,
    index: ReferenceIndex,
    references: Mapping[str, Iterable[tuple[str, tuple[RawReference, ...]]]],
    workers: int = 1,
    batch_size: int = 2000,
) -> dict[str, ReferenceCounters]:
    """Fill ``reference_muids`` of every merged record in place.

    ``references`` maps "D1"/"D2" to a stream of (source uid, raw references).
    Unresolvable references are omitted and counted. For matched records the
    D1 list comes first, then D2's, then duplicates and self references are
    dropped.
    """
    counters = {s: ReferenceCounters() for s in SOURCES}
    resolved: dict[str, dict[int, list[int | None]]] = {s: {} for s in SOURCES}
    omitted_keys: dict[str, set] = {s: set() for s in SOURCES}
    for source in SOURCES:
        uid_index = crosswalk.index(source)
        c = counters[source]
        seen: set[str] = set()
        raw_refs: dict[str, tuple[RawReference, ...]] = {}

        def merged_only(stream):
            for uid, refs in stream:
                if uid in seen:
                    c.duplicate_source_records += 1
                    continue
                seen.add(uid)
                if uid not in uid_index:
                    c.unmerged_record_references += len(refs)
                    continue
                raw_refs[uid] = refs
                yield uid, refs

        jobs = ((source, b) for b in _batched(merged_only(references.get(source, ())), batch_size))
        for batch in ordered_map(_resolve_batch, jobs, workers=workers,
                                 initializer=_install_index, initargs=(index,)):
            for uid, targets in batch:
                refs = raw_refs.pop(uid)
                c.raw += len(targets)
                for ref, t in zip(refs, targets):
                    if t is None:
                        c.omitted += 1
                        omitted_keys[source].add(_omission_key(ref))
                resolved[source][uid_index[uid]] = targets
        c.distinct_omitted_works = len(omitted_keys[source])

    for i, rec in enumerate(merged):
        targets: list[int] = []
        provs: list[str] = []
        for source in SOURCES:
            found = [t for t in resolved[source].get(rec.muid, ()) if t is not None]
            targets.extend(found)
            provs.extend([source] * len(found))
        rec.reference_muids, rec.reference_provenance = targets, provs
        merged[i] = dedupe_references(rec, counters)
    for c in counters.values():
        c.resolved = c.raw - c.omitted - c.deduped - c.self_dropped
    return counters


# --------------------------------------------------------------------------
# audit


def audit_merged_titles(crosswalk: Crosswalk, d1_titles: Mapping[str, str],
                        d2_titles: Mapping[str, str], years: Sequence[int | None],
                        threshold: float) -> dict[str, Any]:
    """Per-year share of matched MUIDs whose two source titles agree."""
    per_year: dict[Any, list[int]] = {}
    for muid, (u1, u2, prov) in enumerate(crosswalk.rows):
        if prov != BOTH:
            continue
        ok = meets_threshold(title_similarity(d1_titles[u1], d2_titles[u2]), threshold)
        year = years[muid]
        bucket = per_year.setdefault("unknown" if year is None else year, [0, 0])
        bucket[0] += 1
        bucket[1] += ok
    total = sum(b[0] for b in per_year.values())
    passing = sum(b[1] for b in per_year.values())
    ordered = sorted(per_year.items(), key=lambda kv: (kv[0] == "unknown", kv[0] if kv[0] != "unknown" else 0))
    return {
        "threshold": threshold,
        "rows": total,
        "passing": passing,
        "rate": passing / total if total else None,
        "by_year": {str(y): {"rows": n, "passing": k, "rate": k / n} for y, (n, k) in ordered},
    }


def write_merged(path: str | Path, merged: Iterable[MergedRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in merged:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_merged(path: str | Path) -> Iterator[MergedRecord]:
    for obj in read_jsonl(path):
        yield MergedRecord.from_json(obj)
