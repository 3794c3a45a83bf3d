"""Seeded synthetic citation datasets with ground truth, and their evaluation.

Two datasets are drawn from one population of articles. ``D1`` is shaped like
a DOI-indexed open dataset (Crossref-style JSON, references by DOI and/or
title), ``D2`` like a proprietary one with its own accession numbers
(references by local uid where the cited work is indexed, otherwise by DOI or
title). The ground truth records which records describe the same article, the
true citation edges, and every planted title perturbation.
"""

from __future__ import annotations

import csv
import json
import math
import random
import string
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from citemerge.ingest import ConfigError, normalize_doi, normalize_title
from citemerge.similarity import levenshtein

CODE_ALPHABET = "ABCDEFGHJKLMNPQRSTUVWXYZ23456789"
CODE_LENGTH = 24
NOISE_ALPHABET = string.ascii_lowercase + string.digits
STOPLIST_TITLES = ("Review", "Correction")

_ADJ = ("Sparse", "Robust", "Adaptive", "Stochastic", "Scalable", "Nonlinear", "Bayesian",
        "Distributed", "Quantum", "Spectral", "Hierarchical", "Efficient", "Dynamic",
        "Discrete", "Convex", "Parallel", "Statistical", "Molecular", "Coupled", "Optimal")
_NOUN = ("Networks", "Graphs", "Models", "Flows", "Operators", "Estimators", "Systems",
         "Proteins", "Lattices", "Markets", "Algorithms", "Embeddings", "Manifolds",
         "Populations", "Circuits", "Sensors", "Polymers", "Catalysts", "Queues", "Fields")
_TOPIC = ("Citation Analysis", "Climate Dynamics", "Drug Discovery", "Traffic Flow",
          "Gene Regulation", "Power Grids", "Image Retrieval", "Fluid Mechanics",
          "Supply Chains", "Neural Coding", "Soil Chemistry", "Crystal Growth")
_PATTERNS = (
    "{a} {n} for {t}",
    "On the Stability of {a} {n}",
    "{a} {n} and {a2} {n2} in {t}",
    "Learning {a} {n} from {t} Data",
    "A Note on {a} {n}",
    "Towards {a} {n}: Evidence from {t}",
)


class EvaluationError(ValueError):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    n1: int = 1000
    n2: int = 1000
    overlap: float = 0.3
    year_range_d1: tuple[int, int] = (1900, 2022)
    year_range_d2: tuple[int, int] = (1981, 2020)
    doi_coverage_d1: float = 1.0
    doi_coverage_d2: float = 0.61
    title_noise_rate: float = 0.0
    title_noise_edits: int = 2
    stoplist_rate: float = 0.0016
    refs_per_record: int = 10
    cross_only_citation_rate: float = 0.2
    external_ref_rate: float = 0.1
    ref_doi_rate: float = 0.9
    year_anomaly_rate: float = 0.0
    articles_per_journal_year: int = 5
    threshold: float = 0.95

    def __post_init__(self) -> None:
        self.year_range_d1 = tuple(self.year_range_d1)
        self.year_range_d2 = tuple(self.year_range_d2)
        for f in ("overlap", "doi_coverage_d1", "doi_coverage_d2", "title_noise_rate",
                  "stoplist_rate", "cross_only_citation_rate", "external_ref_rate",
                  "ref_doi_rate", "year_anomaly_rate", "threshold"):
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{f} must be a fraction in [0, 1], got {v}")
        for f in ("n1", "n2", "title_noise_edits", "refs_per_record"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be >= 0")
        if self.articles_per_journal_year < 1:
            raise ConfigError("articles_per_journal_year must be >= 1")
        for name, (lo, hi) in (("year_range_d1", self.year_range_d1),
                               ("year_range_d2", self.year_range_d2)):
            if lo > hi:
                raise ConfigError(f"{name}: lower bound exceeds upper bound")
        if self.shared_count and self.shared_years is None:
            raise ConfigError("overlap > 0 needs intersecting year ranges")

    @property
    def shared_count(self) -> int:
        return math.floor(self.overlap * min(self.n1, self.n2) + 1e-9)

    @property
    def shared_years(self) -> tuple[int, int] | None:
        lo = max(self.year_range_d1[0], self.year_range_d2[0])
        hi = min(self.year_range_d1[1], self.year_range_d2[1])
        return (lo, hi) if lo <= hi else None

    @property
    def article_count(self) -> int:
        return self.n1 + self.n2 - self.shared_count

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["year_range_d1"] = list(self.year_range_d1)
        d["year_range_d2"] = list(self.year_range_d2)
        return d

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> GenConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown generator option(s): {', '.join(unknown)}")
        return cls(**obj)


def load_gen_config(path: str | Path) -> GenConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return GenConfig.from_dict(doc.get("generate", doc))


# --------------------------------------------------------------------------
# helpers


def reference_distance(a: str, b: str) -> int:
    """Textbook Wagner-Fischer edit distance, kept apart from the matcher's."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def reference_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return 1.0 if longest == 0 else 1.0 - reference_distance(a, b) / longest


def _issn(rng: random.Random) -> str:
    digits = [rng.randrange(10) for _ in range(7)]
    check = (11 - sum(d * (8 - i) for i, d in enumerate(digits)) % 11) % 11
    tail = "X" if check == 10 else str(check)
    s = "".join(map(str, digits)) + tail
    return f"{s[:4]}-{s[4:]}"


def _code(rng: random.Random, used: set[str]) -> str:
    while True:
        c = "".join(rng.choice(CODE_ALPHABET) for _ in range(CODE_LENGTH))
        if c not in used:
            used.add(c)
            return c


def _template(rng: random.Random) -> str:
    while True:
        a, a2 = rng.sample(_ADJ, 2)
        n, n2 = rng.sample(_NOUN, 2)
        t = rng.choice(_TOPIC)
        text = rng.choice(_PATTERNS).format(a=a, a2=a2, n=n, n2=n2, t=t)
        if len(text) >= 16:
            return text


def _perturb(rng: random.Random, text: str, edits: int) -> str:
    chars = list(text)
    for _ in range(edits):
        op = rng.randrange(3)
        if op == 0 or len(chars) <= 1:
            chars.insert(rng.randrange(len(chars) + 1), rng.choice(NOISE_ALPHABET))
        elif op == 1:
            del chars[rng.randrange(len(chars))]
        else:
            i = rng.randrange(len(chars))
            chars[i] = rng.choice([c for c in NOISE_ALPHABET if c != chars[i]])
    return "".join(chars)


def _min_separation(cfg: GenConfig, a: str, b: str) -> bool:
    """Titles of distinct articles stay apart even after noise on one side."""
    longest = max(len(a), len(b))
    need = math.floor((1.0 - cfg.threshold) * longest) + 2 * cfg.title_noise_edits + 1
    if abs(len(a) - len(b)) >= need:
        return True
    return levenshtein(a, b) >= need


@dataclass
class _Article:
    aid: int
    role: str  # "both" | "d1" | "d2"
    year: int
    journal: int
    title: str
    doi: str
    stoplisted: bool = False


# --------------------------------------------------------------------------
# generation


def generate(config: GenConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write D1/D2 data, their descriptors, ground truth, and a pipeline config."""
    cfg = config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(cfg.seed)

    n_shared = cfg.shared_count
    n_art = cfg.article_count
    roles = ["both"] * n_shared + ["d1"] * (cfg.n1 - n_shared) + ["d2"] * (cfg.n2 - n_shared)
    rng.shuffle(roles)

    years_all = set(range(cfg.year_range_d1[0], cfg.year_range_d1[1] + 1)) | set(
        range(cfg.year_range_d2[0], cfg.year_range_d2[1] + 1))
    n_journals = max(1, math.ceil(n_art / (cfg.articles_per_journal_year * len(years_all))))
    journals = []
    seen_issn: set[str] = set()
    for _ in range(n_journals):
        pair = []
        while len(pair) < 2:
            s = _issn(rng)
            if s not in seen_issn:
                seen_issn.add(s)
                pair.append(s)
        journals.append(tuple(pair))

    used_codes: set[str] = set()
    articles: list[_Article] = []
    for aid, role in enumerate(roles):
        lo, hi = {"both": cfg.shared_years, "d1": cfg.year_range_d1, "d2": cfg.year_range_d2}[role]
        year = rng.randint(lo, hi)
        journal = rng.randrange(n_journals)
        code = _code(rng, used_codes)
        title = f"{_template(rng)} {code}"
        doi = f"10.{5000 + journal % 900}/{code[:8].lower()}.{aid}"
        articles.append(_Article(aid, role, year, journal, title, doi))

    n_stop = round(cfg.stoplist_rate * n_art)
    d1_only = [a for a in articles if a.role == "d1"]
    if n_stop > len(d1_only):
        raise ConfigError(f"stoplist_rate needs {n_stop} D1-only articles, only {len(d1_only)} exist")
    for i, a in enumerate(rng.sample(d1_only, n_stop)):
        a.stoplisted = True
        a.title = STOPLIST_TITLES[i % len(STOPLIST_TITLES)]

    _separate(cfg, rng, articles, used_codes)

    # DOI presence: one uniform draw per article, the lowest draws of each
    # dataset carry a DOI, so shared articles have nested coverage
    u = [rng.random() for _ in articles]
    in1 = [a for a in articles if a.role in ("both", "d1")]
    in2 = [a for a in articles if a.role in ("both", "d2")]
    has_doi1 = {a.aid for a in sorted(in1, key=lambda a: (u[a.aid], a.aid))[:round(cfg.doi_coverage_d1 * len(in1))]}
    has_doi2 = {a.aid for a in sorted(in2, key=lambda a: (u[a.aid], a.aid))[:round(cfg.doi_coverage_d2 * len(in2))]}

    uid1: dict[int, str] = {}
    uid2: dict[int, str] = {}
    used_uids: set[str] = set()
    for a in in1:
        uid1[a.aid] = a.doi if a.aid in has_doi1 else _unique(rng, used_uids, "D1-", 12, string.hexdigits[:16])
    for a in in2:
        uid2[a.aid] = _unique(rng, used_uids, "WOS:", 15, string.digits)

    # D2-side title noise and year anomalies on shared articles
    d2_title: dict[int, str] = {}
    d2_year: dict[int, int | None] = {}
    perturbations: dict[str, dict[str, Any]] = {}
    anomalies = []
    for a in articles:
        if a.role != "both":
            continue
        d2_year[a.aid] = a.year
        if rng.random() < cfg.title_noise_rate and cfg.title_noise_edits > 0:
            edits = rng.randint(1, cfg.title_noise_edits)
            noisy = _perturb(rng, normalize_title(a.title), edits)
            d2_title[a.aid] = noisy
            sim = reference_similarity(normalize_title(a.title), normalize_title(noisy))
            perturbations[uid2[a.aid]] = {"edits": edits, "similarity": sim}
        shares_doi = a.aid in has_doi1 and a.aid in has_doi2
        if shares_doi and rng.random() < cfg.year_anomaly_rate:
            lo, hi = cfg.year_range_d2
            if rng.random() < 0.5:
                d2_year[a.aid] = None
            else:
                shifted = a.year + rng.choice((-1, 1))
                d2_year[a.aid] = shifted if lo <= shifted <= hi else a.year - (shifted - a.year)
            anomalies.append(uid2[a.aid])

    # citations: each listing dataset of the citing article carries the edge,
    # shared citing articles list some edges on one side only
    citable = [a.aid for a in articles if not a.stoplisted]
    refs1: dict[int, list[dict[str, Any]]] = defaultdict(list)
    refs2: dict[int, list[dict[str, Any]]] = defaultdict(list)
    edges: list[tuple[int, int]] = []
    cross_only = {"D1": 0, "D2": 0}
    first_shared_edges: list[tuple[int, int]] = []
    for a in articles:
        if a.stoplisted:
            continue
        lo, hi = max(0, cfg.refs_per_record // 2), cfg.refs_per_record + cfg.refs_per_record // 2
        k = min(rng.randint(lo, hi), len(citable) - 1) if cfg.refs_per_record else 0
        targets = []
        if k > 0:
            for b in rng.sample(citable, k + 1):
                if b != a.aid and len(targets) < k:
                    targets.append(b)
        for b in targets:
            edges.append((a.aid, b))
            if a.role == "both":
                if rng.random() < cfg.cross_only_citation_rate:
                    side = rng.choice(("D1", "D2"))
                    sides = (side,)
                    cross_only[side] += 1
                else:
                    sides = ("D1", "D2")
                    if len(first_shared_edges) < 2:
                        first_shared_edges.append((a.aid, b))
            else:
                sides = ("D1",) if a.role == "d1" else ("D2",)
            if "D1" in sides:
                refs1[a.aid].append(_ref_d1(rng, cfg, articles[b]))
            if "D2" in sides:
                refs2[a.aid].append(_ref_d2(rng, cfg, articles[b], uid2))
        for side, refs in (("D1", refs1), ("D2", refs2)):
            if (side == "D1" and a.role in ("both", "d1")) or (side == "D2" and a.role in ("both", "d2")):
                n_ext = sum(rng.random() < cfg.external_ref_rate for _ in range(max(k, 1)))
                for _ in range(n_ext):
                    refs[a.aid].append(_external_ref(rng, side, used_codes))

    # guarantee the strict merged-vs-single-source reference gap
    if cfg.cross_only_citation_rate > 0:
        for side in ("D1", "D2"):
            if cross_only[side] == 0 and first_shared_edges:
                src, dst = first_shared_edges.pop(0)
                other = refs2 if side == "D1" else refs1
                other_uid = _ref_key(articles[dst], uid2, side="D2" if side == "D1" else "D1")
                other[src] = [r for r in other[src] if _ref_key_of(r) != other_uid]
                cross_only[side] += 1

    paths = {
        "d1": out / "d1.jsonl",
        "d2": out / "d2.jsonl",
        "d1_descriptor": out / "d1.descriptor.toml",
        "d2_descriptor": out / "d2.descriptor.toml",
        "truth": out / "truth.json",
        "pipeline": out / "pipeline.toml",
    }
    hist1: Counter = Counter()
    hist2: Counter = Counter()
    with open(paths["d1"], "w", encoding="utf-8", newline="\n") as fh:
        for a in in1:
            rec = _record_d1(rng, a, uid1[a.aid], a.aid in has_doi1, journals[a.journal], refs1[a.aid])
            hist1[str(a.year)] += 1
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
    with open(paths["d2"], "w", encoding="utf-8", newline="\n") as fh:
        for a in in2:
            year = d2_year.get(a.aid, a.year)
            title = d2_title.get(a.aid, a.title)
            rec = _record_d2(rng, a, uid2[a.aid], a.aid in has_doi2, journals[a.journal],
                             title, year, refs2[a.aid])
            hist2["unknown" if year is None else str(year)] += 1
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")

    pairs = []
    for a in articles:
        if a.role != "both":
            continue
        u1, u2 = uid1[a.aid], uid2[a.aid]
        sim = perturbations.get(u2, {}).get("similarity", 1.0)
        pairs.append({
            "d1_uid": u1,
            "d2_uid": u2,
            "article": a.aid,
            "doi_shared": a.aid in has_doi1 and a.aid in has_doi2,
            "issn_shared": True,
            "similarity": sim,
        })

    truth = {
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "articles": n_art,
        "d1_uids": {uid1[a.aid]: a.aid for a in in1},
        "d2_uids": {uid2[a.aid]: a.aid for a in in2},
        "identity_pairs": pairs,
        "perturbations": perturbations,
        "year_anomalies": anomalies,
        "stoplisted": sorted(a.aid for a in articles if a.stoplisted),
        "edges": sorted(edges),
        "year_histogram": {"D1": _sorted_hist(hist1), "D2": _sorted_hist(hist2)},
    }
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth, fh, separators=(",", ":"))
        fh.write("\n")

    _write_toml(paths["d1_descriptor"], {
        "dataset_id": "D1",
        "record_count_estimate": len(in1),
        "year_range": list(cfg.year_range_d1),
        "doi_is_uid": cfg.doi_coverage_d1 == 1.0,
        "attributes": {
            "uid": "id", "title": "title.0", "doi": "DOI", "issn": "ISSN",
            "pub_year": "issued.date-parts.0.0", "references": "reference",
            "reference_count": "reference-count", "ref_doi": "DOI",
            "ref_title": "article-title", "ref_year": "year",
        },
    })
    _write_toml(paths["d2_descriptor"], {
        "dataset_id": "D2",
        "record_count_estimate": len(in2),
        "year_range": list(cfg.year_range_d2),
        "doi_is_uid": False,
        "attributes": {
            "uid": "UT", "title": "TI", "doi": "DI", "issn": ["SN", "EI"],
            "pub_year": "PY", "references": "CR", "reference_count": "NR",
            "ref_uid": "ut", "ref_doi": "doi", "ref_title": "title", "ref_year": "year",
        },
    })
    _write_toml(paths["pipeline"], {
        "output_dir": "run",
        "threshold": cfg.threshold,
        "datasets": [
            {"descriptor": "d1.descriptor.toml", "data": "d1.jsonl"},
            {"descriptor": "d2.descriptor.toml", "data": "d2.jsonl"},
        ],
    })
    return paths


def _unique(rng: random.Random, used: set[str], prefix: str, n: int, alphabet: str) -> str:
    while True:
        s = prefix + "".join(rng.choice(alphabet) for _ in range(n))
        if s not in used:
            used.add(s)
            return s


def _sorted_hist(h: Counter) -> dict[str, int]:
    return dict(sorted(h.items(), key=lambda kv: (kv[0] == "unknown", kv[0])))


def _separate(cfg: GenConfig, rng: random.Random, articles: list[_Article], used: set[str]) -> None:
    # only same-year, same-journal titles can meet in a title+ISSN query
    blocks: dict[tuple[int, int], list[_Article]] = defaultdict(list)
    for a in articles:
        if not a.stoplisted:
            blocks[(a.year, a.journal)].append(a)
    for block in blocks.values():
        done: list[_Article] = []
        for a in block:
            norm = normalize_title(a.title)
            while not all(_min_separation(cfg, norm, normalize_title(b.title)) for b in done):
                a.title = f"{_template(rng)} {_code(rng, used)}"
                norm = normalize_title(a.title)
            done.append(a)


def _ref_d1(rng: random.Random, cfg: GenConfig, b: _Article) -> dict[str, Any]:
    ref: dict[str, Any] = {"key": f"ref{b.aid}"}
    if rng.random() < cfg.ref_doi_rate:
        ref["DOI"] = b.doi
    ref["article-title"] = b.title
    ref["year"] = str(b.year)
    return ref


def _ref_d2(rng: random.Random, cfg: GenConfig, b: _Article, uid2: dict[int, str]) -> dict[str, Any]:
    if b.aid in uid2:
        return {"ut": uid2[b.aid]}
    ref: dict[str, Any] = {}
    if rng.random() < cfg.ref_doi_rate:
        ref["doi"] = b.doi.upper()
    ref["title"] = b.title
    ref["year"] = b.year
    return ref


def _ref_key(b: _Article, uid2: dict[int, str], side: str) -> str:
    if side == "D2" and b.aid in uid2:
        return uid2[b.aid]
    return normalize_title(b.title)


def _ref_key_of(ref: dict[str, Any]) -> str:
    if "ut" in ref:
        return ref["ut"]
    return normalize_title(ref.get("article-title") or ref.get("title") or "")


def _external_ref(rng: random.Random, side: str, used: set[str]) -> dict[str, Any]:
    code = _code(rng, used)
    title = f"Unindexed Work {code}"
    year = rng.randint(1950, 2020)
    if side == "D1":
        ref = {"key": f"ext{code[:6]}", "article-title": title, "year": str(year)}
        if rng.random() < 0.5:
            ref["DOI"] = f"10.9999/{code.lower()}"
        return ref
    return {"title": title, "year": year}


def _record_d1(rng: random.Random, a: _Article, uid: str, has_doi: bool,
               issns: tuple[str, str], refs: list[dict[str, Any]]) -> dict[str, Any]:
    rec: dict[str, Any] = {"id": uid}
    if has_doi:
        rec["DOI"] = a.doi
    rec["title"] = [a.title]
    rec["ISSN"] = list(issns)
    rec["issued"] = {"date-parts": [[a.year, rng.randint(1, 12)]]}
    rec["reference-count"] = len(refs) + rng.randint(0, 3)
    rec["reference"] = refs
    return rec


def _record_d2(rng: random.Random, a: _Article, uid: str, has_doi: bool, issns: tuple[str, str],
               title: str, year: int | None, refs: list[dict[str, Any]]) -> dict[str, Any]:
    rec: dict[str, Any] = {"UT": uid}
    if has_doi:
        rec["DI"] = f"https://doi.org/{a.doi.upper()}" if a.aid % 3 == 0 else a.doi
    rec["TI"] = title
    which = rng.randrange(3)
    if which in (0, 2):
        rec["SN"] = issns[0]
    if which in (1, 2):
        rec["EI"] = issns[1]
    if year is not None:
        rec["PY"] = year
    rec["NR"] = len(refs) + rng.randint(0, 3)
    rec["CR"] = refs
    return rec


def _write_toml(path: Path, doc: dict[str, Any]) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)


# --------------------------------------------------------------------------
# ground truth and evaluation


@dataclass
class GroundTruth:
    seed: int
    config: dict[str, Any]
    articles: int
    d1_uids: dict[str, int]
    d2_uids: dict[str, int]
    identity_pairs: list[dict[str, Any]]
    perturbations: dict[str, dict[str, Any]]
    year_anomalies: list[str]
    stoplisted: list[int]
    edges: list[list[int]]
    year_histogram: dict[str, dict[str, int]]

    @classmethod
    def load(cls, path: str | Path) -> GroundTruth:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"ground truth file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    @property
    def threshold(self) -> float:
        return self.config.get("threshold", 0.95)

    def recoverable(self, threshold: float | None = None) -> set[tuple[str, str]]:
        t = self.threshold if threshold is None else threshold
        return {
            (p["d1_uid"], p["d2_uid"]) for p in self.identity_pairs
            if p["doi_shared"] or (p["issn_shared"] and p["similarity"] >= t - 1e-9)
        }

    def pair_set(self) -> set[tuple[str, str]]:
        return {(p["d1_uid"], p["d2_uid"]) for p in self.identity_pairs}


def _read_csv(path: str | Path, what: str) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _pr(tp: int, predicted: int, actual: int) -> dict[str, Any]:
    return {
        "true_positives": tp,
        "predicted": predicted,
        "actual": actual,
        "precision": tp / predicted if predicted else None,
        "recall": tp / actual if actual else None,
    }


def evaluate(match_csv: str | Path, crosswalk_csv: str | Path, edges_csv: str | Path,
             truth: GroundTruth) -> dict[str, Any]:
    """Precision and recall of record matching and reference resolution."""
    matches = _read_csv(match_csv, "match set")
    predicted = {(r["d1_uid"], r["d2_uid"]) for r in matches}
    for u1, u2 in predicted:
        if u1 not in truth.d1_uids or u2 not in truth.d2_uids:
            raise EvaluationError(f"matched uids {u1}/{u2} unknown to ground truth; "
                                  "outputs and truth come from different generations")
    actual = truth.pair_set()
    recoverable = truth.recoverable()
    tp = len(predicted & actual)

    by_query: dict[str, dict[str, int]] = {}
    for r in matches:
        q = by_query.setdefault(r["query_id"], {"matched": 0, "true": 0, "false": 0})
        q["matched"] += 1
        q["true" if (r["d1_uid"], r["d2_uid"]) in actual else "false"] += 1

    records = _pr(tp, len(predicted), len(actual))
    records["recall_recoverable"] = (len(predicted & recoverable) / len(recoverable)
                                     if recoverable else None)
    records["recoverable"] = len(recoverable)
    records["doi_shared"] = sum(1 for p in truth.identity_pairs if p["doi_shared"])

    # map every MUID to the article of its D1 record, else of its D2 record
    article_of: list[int] = []
    for i, row in enumerate(_read_csv(crosswalk_csv, "crosswalk")):
        u1, u2 = row["d1_uid"], row["d2_uid"]
        if u1 and u1 not in truth.d1_uids or u2 and u2 not in truth.d2_uids:
            raise EvaluationError(f"crosswalk row {i} ({u1}/{u2}) unknown to ground truth")
        article_of.append(truth.d1_uids[u1] if u1 else truth.d2_uids[u2])
    pred_edges = set()
    for row in _read_csv(edges_csv, "edge list"):
        pred_edges.add((article_of[int(row["src_muid"])], article_of[int(row["dst_muid"])]))
    removed = set(truth.stoplisted)
    true_edges = {(a, b) for a, b in truth.edges if a not in removed and b not in removed}
    edges = _pr(len(pred_edges & true_edges), len(pred_edges), len(true_edges))

    return {
        "seed": truth.seed,
        "records": records,
        "by_query": dict(sorted(by_query.items())),
        "edges": edges,
    }
