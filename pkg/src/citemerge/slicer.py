"""Year-keyed partitioning of extracted records into aligned slice files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Union

from citemerge.ingest import DatasetDescriptor, SourceRecord, read_jsonl

UNKNOWN = "unknown"
SANE_YEARS = (1400, 2100)

SliceKey = Union[int, str]


def key_order(key: SliceKey) -> tuple[int, int]:
    return (1, 0) if key == UNKNOWN else (0, int(key))


@dataclass(frozen=True)
class SlicePlan:
    keys: tuple[SliceKey, ...]
    overlap_keys: tuple[SliceKey, ...]
    dataset_ids: tuple[str, str]
    root: Path = Path(".")
    _known: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_known", frozenset(k for k in self.keys if k != UNKNOWN))

    def key_for(self, year: int | None) -> SliceKey:
        if year is None or not SANE_YEARS[0] <= year <= SANE_YEARS[1]:
            return UNKNOWN
        return year if year in self._known else UNKNOWN

    @property
    def sliced_keys(self) -> tuple[SliceKey, ...]:
        """Overlap keys that take part in sliced queries (UNKNOWN excluded)."""
        return tuple(k for k in self.overlap_keys if k != UNKNOWN)

    def path(self, dataset_id: str, key: SliceKey) -> Path:
        return self.root / dataset_id / f"{key}.jsonl"

    def with_root(self, root: str | Path) -> SlicePlan:
        return SlicePlan(self.keys, self.overlap_keys, self.dataset_ids, Path(root))

    def to_json(self) -> dict[str, Any]:
        return {
            "dataset_ids": list(self.dataset_ids),
            "keys": list(self.keys),
            "overlap_keys": list(self.overlap_keys),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any], root: str | Path = ".") -> SlicePlan:
        return cls(tuple(obj["keys"]), tuple(obj["overlap_keys"]),
                   tuple(obj["dataset_ids"]), Path(root))


def _years(lo: int, hi: int) -> set[int]:
    lo, hi = max(lo, SANE_YEARS[0]), min(hi, SANE_YEARS[1])
    return set(range(lo, hi + 1))


def plan_slices(d1: DatasetDescriptor, d2: DatasetDescriptor, root: str | Path = ".") -> SlicePlan:
    y1, y2 = _years(*d1.year_range), _years(*d2.year_range)
    keys = tuple(sorted(y1 | y2)) + (UNKNOWN,)
    overlap = tuple(sorted(y1 & y2)) + (UNKNOWN,)
    return SlicePlan(keys, overlap, (d1.dataset_id, d2.dataset_id), Path(root))


@dataclass
class PartitionReport:
    dataset_id: str
    counts: dict[SliceKey, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "total": self.total,
            "counts": {str(k): v for k, v in self.counts.items()},
        }


def partition(records: Iterable[SourceRecord], plan: SlicePlan, dataset_id: str) -> PartitionReport:
    """Append every record to the slice file of its publication year.

    All slice files of the dataset are (re)created, including empty ones.
    On failure the dataset's partial slice files are removed.
    """
    if dataset_id not in plan.dataset_ids:
        raise ValueError(f"dataset {dataset_id!r} not in slice plan {plan.dataset_ids}")
    (plan.root / dataset_id).mkdir(parents=True, exist_ok=True)
    counts = {k: 0 for k in plan.keys}
    handles = {}
    try:
        for k in plan.keys:
            handles[k] = open(plan.path(dataset_id, k), "w", encoding="utf-8", newline="\n")
        for rec in records:
            k = plan.key_for(rec.pub_year)
            handles[k].write(json.dumps(rec.to_json(), ensure_ascii=False, separators=(",", ":")))
            handles[k].write("\n")
            counts[k] += 1
    except BaseException:
        for fh in handles.values():
            fh.close()
        for k in plan.keys:
            plan.path(dataset_id, k).unlink(missing_ok=True)
        raise
    for fh in handles.values():
        fh.close()
    return PartitionReport(dataset_id, counts)


def load_slice(plan: SlicePlan, dataset_id: str, key: SliceKey) -> list[SourceRecord]:
    path = plan.path(dataset_id, key)
    if not path.exists():
        raise FileNotFoundError(f"slice file missing: {path}")
    return [SourceRecord.from_json(obj) for obj in read_jsonl(path)]


def load_all_slices(plan: SlicePlan, dataset_id: str) -> dict[SliceKey, list[SourceRecord]]:
    return {k: load_slice(plan, dataset_id, k) for k in plan.keys}
