"""Schema-driven extraction of citation records from newline-delimited JSON.

Each dataset is described by a TOML descriptor mapping canonical attribute
names onto dotted path expressions into the source records, e.g.::

    dataset_id = "D1"
    record_count_estimate = 120000
    year_range = [1900, 2022]
    doi_is_uid = true

    [attributes]
    uid = "id"
    title = "title.0"
    doi = "DOI"
    issn = ["ISSN"]
    pub_year = "issued.date-parts.0.0"
    references = "reference"
    reference_count = "reference-count"
    ref_doi = "DOI"
    ref_title = "article-title"
    ref_year = "year"

Path segments are dictionary keys, or list indexes when numeric. A non-numeric
segment applied to a list is mapped over its items. ``ref_*`` paths are
relative to one item of the ``references`` list. An attribute may list several
paths; for ``issn`` their values are pooled, for everything else the first
path that resolves wins.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from citemerge._parallel import ordered_map

log = logging.getLogger(__name__)

RECORD_ATTRIBUTES = frozenset(
    {"uid", "title", "doi", "issn", "pub_year", "references", "reference_count"}
)
REFERENCE_ATTRIBUTES = frozenset({"ref_doi", "ref_title", "ref_year", "ref_uid"})
CANONICAL_ATTRIBUTES = RECORD_ATTRIBUTES | REFERENCE_ATTRIBUTES
MANDATORY_ATTRIBUTES = ("uid", "title")

# attributes needed by the record-matching stages
MATCH_ATTRIBUTES = frozenset({"uid", "doi", "title", "issn", "pub_year"})

WARN_AFTER_RECORDS = 1000


class ConfigError(ValueError):
    """Invalid descriptor or pipeline configuration."""


class NotADoi(ValueError):
    pass


class NotAnIssn(ValueError):
    pass


# --------------------------------------------------------------------------
# normalizers

_DOI_PREFIXES = (
    "https://doi.org/",
    "http://doi.org/",
    "https://dx.doi.org/",
    "http://dx.doi.org/",
    "doi:",
)


def normalize_doi(raw: str) -> str:
    """Lowercase a DOI and strip resolver/``doi:`` prefixes.

    Raises NotADoi when the result is not of the form ``10.<prefix>/<suffix>``.
    """
    doi = raw.strip().lower()
    stripped = True
    while stripped:
        stripped = False
        for prefix in _DOI_PREFIXES:
            if doi.startswith(prefix):
                doi = doi[len(prefix):].strip()
                stripped = True
    if not doi.startswith("10.") or "/" not in doi:
        raise NotADoi(raw)
    return doi


_NON_ALNUM = re.compile(r"[\W_]+")


def normalize_title(raw: str) -> str:
    """Compatibility-decompose, lowercase, and reduce to alphanumeric words.

    Combining marks are dropped rather than turned into separators, so
    "Résumé" becomes "resume" and not "re sume".
    """
    text = unicodedata.normalize("NFKD", raw).lower()
    text = unicodedata.normalize("NFKD", text)
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    return _NON_ALNUM.sub(" ", text).strip()


_ISSN_SHAPE = re.compile(r"^[0-9]{7}[0-9X]$")
_ISSN_STRIP = re.compile(r"[\s\-]+")


def normalize_issn(raw: str) -> str:
    issn = _ISSN_STRIP.sub("", raw).upper()
    if not _ISSN_SHAPE.match(issn):
        raise NotAnIssn(raw)
    return issn


def parse_year(value: Any) -> int | None:
    """Calendar year from an int, a date-like string, or a date-parts list."""
    while isinstance(value, list):
        if not value:
            return None
        value = value[0]
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = re.match(r"\s*(-?\d{1,4})(?!\d)", value)
        if m:
            return int(m.group(1))
    return None


# --------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    attribute_map: dict[str, tuple[str, ...]]
    year_range: tuple[int, int]
    record_count_estimate: int = 0
    doi_is_uid: bool = False

    def __post_init__(self) -> None:
        for name in MANDATORY_ATTRIBUTES:
            if name not in self.attribute_map:
                raise ConfigError(f"attribute_map.{name} required")
        unknown = sorted(set(self.attribute_map) - CANONICAL_ATTRIBUTES)
        if unknown:
            raise ConfigError(f"unknown canonical attribute(s): {', '.join(unknown)}")
        lo, hi = self.year_range
        if lo > hi:
            raise ConfigError(f"year_range lower bound {lo} exceeds upper bound {hi}")
        if self.record_count_estimate < 0:
            raise ConfigError("record_count_estimate must be >= 0")

    @property
    def uid_attribute(self) -> str:
        return self.attribute_map["uid"][0]

    def paths(self, name: str) -> tuple[str, ...]:
        paths = self.attribute_map.get(name, ())
        if not paths and name == "doi" and self.doi_is_uid:
            return self.attribute_map["uid"]
        return paths


@dataclass(frozen=True, slots=True)
class RawReference:
    doi: str | None = None
    norm_title: str | None = None
    ref_year: int | None = None
    target_uid: str | None = None


@dataclass(frozen=True, slots=True)
class SourceRecord:
    source_uid: str
    doi: str | None = None
    raw_title: str = ""
    norm_title: str = ""
    issns: frozenset[str] = frozenset()
    pub_year: int | None = None
    references: tuple[RawReference, ...] = ()
    reference_count: int | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"uid": self.source_uid}
        if self.doi is not None:
            out["doi"] = self.doi
        if self.raw_title:
            out["title"] = self.raw_title
            out["norm_title"] = self.norm_title
        if self.issns:
            out["issns"] = sorted(self.issns)
        if self.pub_year is not None:
            out["year"] = self.pub_year
        if self.references:
            out["references"] = [
                {k: v for k, v in (("doi", r.doi), ("title", r.norm_title),
                                   ("year", r.ref_year), ("uid", r.target_uid))
                 if v is not None}
                for r in self.references
            ]
        if self.reference_count is not None:
            out["reference_count"] = self.reference_count
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> SourceRecord:
        return cls(
            source_uid=obj["uid"],
            doi=obj.get("doi"),
            raw_title=obj.get("title", ""),
            norm_title=obj.get("norm_title", ""),
            issns=frozenset(obj.get("issns", ())),
            pub_year=obj.get("year"),
            references=tuple(
                RawReference(r.get("doi"), r.get("title"), r.get("year"), r.get("uid"))
                for r in obj.get("references", ())
            ),
            reference_count=obj.get("reference_count"),
        )


@dataclass
class ExtractionReport:
    parsed: int = 0
    skipped: int = 0
    missing_attribute_counts: dict[str, int] = field(default_factory=dict)
    invalid_value_counts: dict[str, int] = field(default_factory=dict)
    dropped_references: int = 0
    warnings: list[str] = field(default_factory=list)

    def absorb(self, other: ExtractionReport) -> None:
        self.parsed += other.parsed
        self.skipped += other.skipped
        self.dropped_references += other.dropped_references
        for mine, theirs in (
            (self.missing_attribute_counts, other.missing_attribute_counts),
            (self.invalid_value_counts, other.invalid_value_counts),
        ):
            for k, v in theirs.items():
                mine[k] = mine.get(k, 0) + v

    def to_json(self) -> dict[str, Any]:
        return {
            "parsed": self.parsed,
            "skipped": self.skipped,
            "missing_attribute_counts": dict(sorted(self.missing_attribute_counts.items())),
            "invalid_value_counts": dict(sorted(self.invalid_value_counts.items())),
            "dropped_references": self.dropped_references,
            "warnings": list(self.warnings),
        }


# --------------------------------------------------------------------------
# descriptor loading


def load_descriptor(path: str | Path) -> DatasetDescriptor:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return descriptor_from_dict(doc, source=str(path))


def descriptor_from_dict(doc: dict[str, Any], source: str = "<dict>") -> DatasetDescriptor:
    try:
        dataset_id = str(doc["dataset_id"])
    except KeyError:
        raise ConfigError(f"{source}: dataset_id required") from None
    attrs = doc.get("attributes")
    if not isinstance(attrs, dict):
        raise ConfigError("attribute_map.uid required")
    attribute_map: dict[str, tuple[str, ...]] = {}
    for name, value in attrs.items():
        paths = (value,) if isinstance(value, str) else tuple(value)
        if not paths or not all(isinstance(p, str) and p for p in paths):
            raise ConfigError(f"attribute_map.{name}: expected a path or list of paths")
        attribute_map[name] = paths
    year_range = doc.get("year_range")
    if (not isinstance(year_range, list) or len(year_range) != 2
            or not all(isinstance(y, int) for y in year_range)):
        raise ConfigError(f"{source}: year_range must be a pair of integers")
    return DatasetDescriptor(
        dataset_id=dataset_id,
        attribute_map=attribute_map,
        year_range=(year_range[0], year_range[1]),
        record_count_estimate=int(doc.get("record_count_estimate", 0)),
        doi_is_uid=bool(doc.get("doi_is_uid", False)),
    )


def descriptor_to_dict(desc: DatasetDescriptor) -> dict[str, Any]:
    return {
        "dataset_id": desc.dataset_id,
        "record_count_estimate": desc.record_count_estimate,
        "year_range": list(desc.year_range),
        "doi_is_uid": desc.doi_is_uid,
        "attributes": {
            k: (v[0] if len(v) == 1 else list(v)) for k, v in desc.attribute_map.items()
        },
    }


# --------------------------------------------------------------------------
# extraction


def _split_path(path: str) -> list[str | int]:
    return [int(p) if p.lstrip("-").isdigit() else p for p in path.split(".")]


def resolve_path(obj: Any, path: str) -> Any:
    """Value at a dotted path, or None. Non-numeric segments map over lists."""
    return _walk(obj, _split_path(path))


def _walk(obj: Any, parts: list[str | int]) -> Any:
    for i, part in enumerate(parts):
        if obj is None:
            return None
        if isinstance(part, int):
            if isinstance(obj, list) and -len(obj) <= part < len(obj):
                obj = obj[part]
            elif isinstance(obj, dict):
                obj = obj.get(str(part))
            else:
                return None
        elif isinstance(obj, dict):
            obj = obj.get(part)
        elif isinstance(obj, list):
            rest = parts[i:]
            vals = [_walk(item, rest) for item in obj]
            return [v for v in vals if v is not None] or None
        else:
            return None
    return obj


def _first(obj: Any, paths: tuple[str, ...]) -> Any:
    for p in paths:
        v = resolve_path(obj, p)
        if v is not None and v != "" and v != []:
            return v
    return None


def _flatten_strings(value: Any) -> Iterator[str]:
    if isinstance(value, list):
        for v in value:
            yield from _flatten_strings(v)
    elif value is not None:
        yield str(value)


def _scalar_text(value: Any) -> str | None:
    while isinstance(value, list):
        if not value:
            return None
        value = value[0]
    if value is None:
        return None
    return str(value)


class _Parser:
    """Turns parsed JSON objects into SourceRecords for one descriptor."""

    def __init__(self, descriptor: DatasetDescriptor, needed: Iterable[str]) -> None:
        needed = set(needed)
        unknown = needed - RECORD_ATTRIBUTES
        if unknown:
            raise ConfigError(f"unknown attribute(s) requested: {', '.join(sorted(unknown))}")
        needed.add("uid")
        self.descriptor = descriptor
        self.needed = frozenset(needed)
        self.attr_paths = {name: descriptor.paths(name) for name in self.needed}
        self.ref_paths = {name: descriptor.paths(name) for name in REFERENCE_ATTRIBUTES}

    def parse(self, obj: Any, report: ExtractionReport) -> SourceRecord | None:
        if not isinstance(obj, dict):
            return None
        uid = _scalar_text(_first(obj, self.attr_paths["uid"]))
        if not uid:
            return None
        fields: dict[str, Any] = {"source_uid": uid}
        missing = report.missing_attribute_counts
        invalid = report.invalid_value_counts
        for name in sorted(self.needed - {"uid"}):
            paths = self.attr_paths[name]
            if not paths:
                continue
            if name == "issn":
                raw = [v for p in paths for v in _flatten_strings(resolve_path(obj, p))]
            else:
                raw = _first(obj, paths)
            if raw is None or raw == [] or raw == "":
                missing[name] = missing.get(name, 0) + 1
                continue
            if name == "doi":
                text = _scalar_text(raw)
                try:
                    fields["doi"] = normalize_doi(text) if text else None
                except NotADoi:
                    invalid["doi"] = invalid.get("doi", 0) + 1
            elif name == "title":
                text = _scalar_text(raw) or ""
                fields["raw_title"] = text
                fields["norm_title"] = normalize_title(text)
            elif name == "issn":
                issns = set()
                for text in raw:
                    try:
                        issns.add(normalize_issn(text))
                    except NotAnIssn:
                        invalid["issn"] = invalid.get("issn", 0) + 1
                fields["issns"] = frozenset(issns)
            elif name == "pub_year":
                year = parse_year(raw)
                if year is None:
                    invalid["pub_year"] = invalid.get("pub_year", 0) + 1
                fields["pub_year"] = year
            elif name == "reference_count":
                try:
                    fields["reference_count"] = int(_scalar_text(raw) or "")
                except ValueError:
                    invalid["reference_count"] = invalid.get("reference_count", 0) + 1
            elif name == "references":
                fields["references"] = self._references(raw, report)
        return SourceRecord(**fields)

    def _references(self, raw: Any, report: ExtractionReport) -> tuple[RawReference, ...]:
        items = raw if isinstance(raw, list) else [raw]
        refs = []
        paths = self.ref_paths
        for item in items:
            doi = title = uid = None
            year = None
            if isinstance(item, str):
                try:
                    doi = normalize_doi(item)
                except NotADoi:
                    pass
            elif isinstance(item, dict):
                text = _scalar_text(_first(item, paths["ref_doi"])) if paths["ref_doi"] else None
                if text:
                    try:
                        doi = normalize_doi(text)
                    except NotADoi:
                        pass
                if paths["ref_title"]:
                    text = _scalar_text(_first(item, paths["ref_title"]))
                    title = normalize_title(text) if text else None
                if paths["ref_year"]:
                    year = parse_year(_first(item, paths["ref_year"]))
                if paths["ref_uid"]:
                    uid = _scalar_text(_first(item, paths["ref_uid"])) or None
            if doi is None and not title and uid is None:
                report.dropped_references += 1
                continue
            refs.append(RawReference(doi=doi, norm_title=title or None, ref_year=year, target_uid=uid))
        return tuple(refs)


def _parse_batch(parser: _Parser, lines: list[bytes]) -> tuple[list[SourceRecord], ExtractionReport]:
    report = ExtractionReport()
    out = []
    for line in lines:
        try:
            obj = json.loads(line)
        except (ValueError, UnicodeDecodeError):
            obj = None
        rec = parser.parse(obj, report) if obj is not None else None
        if rec is None:
            report.skipped += 1
        else:
            report.parsed += 1
            out.append(rec)
    return out, report


def _read_batches(path: Path, batch_size: int) -> Iterator[list[bytes]]:
    with open(path, "rb") as fh:
        batch: list[bytes] = []
        for line in fh:
            batch.append(line)
            if len(batch) >= batch_size:
                yield batch
                batch = []
        if batch:
            yield batch


def extract_records(
    data_path: str | Path,
    descriptor: DatasetDescriptor,
    needed: Iterable[str],
    report: ExtractionReport | None = None,
    *,
    workers: int = 1,
    batch_size: int = 5000,
) -> Iterator[SourceRecord]:
    """Stream SourceRecords from a newline-delimited JSON file.

    Only the attributes in ``needed`` (plus ``uid``) are populated. Lines that
    are not JSON objects or lack a uid are skipped and counted in ``report``.
    The file is read in batches of ``batch_size`` lines; with ``workers > 1``
    batches are parsed in a process pool, and records are still yielded in
    file order.
    """
    data_path = Path(data_path)
    if not data_path.is_file():
        raise FileNotFoundError(f"input data file not found: {data_path}")
    parser = _Parser(descriptor, needed)
    if report is None:
        report = ExtractionReport()
    probe = ExtractionReport()
    probe_open = True

    results = ordered_map(_parse_batch_job, ((parser, b) for b in _read_batches(data_path, batch_size)),
                          workers=workers)
    for records, delta in results:
        report.absorb(delta)
        if probe_open:
            probe.absorb(delta)
            if probe.parsed >= WARN_AFTER_RECORDS:
                probe_open = False
                _warn_unresolved(parser, probe, report)
        yield from records
    if probe_open and probe.parsed:
        _warn_unresolved(parser, probe, report)


def _parse_batch_job(args: tuple[_Parser, list[bytes]]) -> tuple[list[SourceRecord], ExtractionReport]:
    return _parse_batch(*args)


def _warn_unresolved(parser: _Parser, probe: ExtractionReport, report: ExtractionReport) -> None:
    # flagged when a configured path never resolved on the first records
    for name in sorted(parser.needed - {"uid"}):
        if parser.attr_paths[name] and probe.missing_attribute_counts.get(name, 0) == probe.parsed:
            msg = (f"{parser.descriptor.dataset_id}: attribute {name!r} "
                   f"(path {', '.join(parser.attr_paths[name])}) never resolved "
                   f"on the first {probe.parsed} records")
            report.warnings.append(msg)
            log.warning(msg)


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "rb") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n
