import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citemerge.ingest import ConfigError, DatasetDescriptor
from citemerge.matcher import (AuditError, Condition, MatchPair, MatchSet, QuerySpec, RecordStore,
                               audit_matches, default_queries, evaluate_pair, oracle_match,
                               read_matches, resolve_ambiguities, run_queries, run_query,
                               write_matches)
from citemerge.slicer import plan_slices

from conftest import rec

Q1, Q1R, Q2 = default_queries(0.95)


def plan(lo=1990, hi=2000, tmp=".", lo2=None, hi2=None):
    d = lambda ds, a, b: DatasetDescriptor(ds, {"uid": ("u",), "title": ("t",)}, (a, b))
    return plan_slices(d("D1", lo, hi), d("D2", lo2 or lo, hi2 or hi), tmp)


def stores(p, d1, d2):
    return RecordStore.from_records(d1, p), RecordStore.from_records(d2, p)


# --- specs ----------------------------------------------------------------

def test_condition_validation():
    with pytest.raises(ConfigError, match="unknown match attribute"):
        Condition("author", "author")
    with pytest.raises(ConfigError, match="threshold"):
        Condition("title", "title", "fuzzy", 0.0)
    with pytest.raises(ConfigError, match="text attributes"):
        Condition("issn", "issn", "fuzzy", 0.9)
    with pytest.raises(ConfigError, match="relation"):
        Condition("doi", "doi", "regex")
    with pytest.raises(ConfigError, match="non-empty"):
        QuerySpec("q", ())


def test_query_json_roundtrip():
    for q in default_queries(0.9):
        assert QuerySpec.from_json(q.to_json()) == q


def test_evaluate_pair():
    a = rec("a", doi="10.1/x", title="A Long Title About Graphs", issns={"12345678"}, year=1995)
    b = rec("b", doi="10.1/x", title="A Long Title About Graph", issns={"12345678", "8765432X"}, year=1995)
    assert evaluate_pair(Q1, a, b) == 1.0
    s = evaluate_pair(Q2, a, b)
    assert s == pytest.approx(1 - 1 / len(a.norm_title))
    c = rec("c", title="Entirely Different Words Here", issns={"12345678"})
    assert evaluate_pair(Q2, a, c) is None
    d = rec("d", title="A Long Title About Graphs")  # no ISSN
    assert evaluate_pair(Q2, a, d) is None


# --- run_query ------------------------------------------------------------

def test_q1_one_pair_per_slice(tmp_path):
    p = plan(tmp=tmp_path)
    d1 = [rec(f"a{y}", doi=f"10.1/{y}", year=y) for y in (1991, 1992, 1993)] + [rec("z", doi="10.1/zz", year=1991)]
    d2 = [rec(f"b{y}", doi=f"10.1/{y}", year=y) for y in (1991, 1992, 1993)]
    r1, r2 = stores(p, d1, d2)
    result = run_query(Q1, p, r1, r2)
    assert sorted((x.d1_uid, x.d2_uid) for x in result.pairs) == [("a1991", "b1991"), ("a1992", "b1992"), ("a1993", "b1993")]
    assert all(x.score == 1.0 for x in result.pairs)
    assert len(r1) == 1 and len(r2) == 0


def test_q2_below_threshold(tmp_path):
    p = plan(tmp=tmp_path)
    t1 = "abcdefghijklmnopqrst"
    t2 = "abXdefXhijklXnopqrst"  # two substitutions over 20 chars -> 0.90
    r1, r2 = stores(p, [rec("a", title=t1, issns={"11111111"}, year=1995)],
                    [rec("b", title=t2, issns={"11111111"}, year=1995)])
    assert run_query(Q2, p, r1, r2).pairs == []


def test_sliced_query_ignores_cross_year_and_unknown(tmp_path):
    p = plan(tmp=tmp_path)
    d1 = [rec("a", doi="10.1/x", year=1995), rec("c", doi="10.1/y", year=None)]
    d2 = [rec("b", doi="10.1/x", year=1996), rec("d", doi="10.1/y", year=None)]
    r1, r2 = stores(p, d1, d2)
    assert run_query(Q1, p, r1, r2).pairs == []
    res = run_query(Q1R, p, r1, r2)
    assert sorted(x.d1_uid for x in res.pairs) == ["a", "c"]


def test_iterative_monotonicity(tmp_path):
    p = plan(tmp=tmp_path)
    rng = random.Random(2)
    d1 = [rec(f"a{i}", doi=f"10.1/{i}" if i % 2 else None, title=f"title number {i} lorem ipsum",
              issns={"11111111"}, year=rng.choice([1995, 1996, None])) for i in range(40)]
    d2 = [rec(f"b{i}", doi=f"10.1/{i}" if i % 3 else None, title=f"title number {i} lorem ipsum",
              issns={"11111111"}, year=rng.choice([1995, 1996])) for i in range(40)]
    r1, r2 = stores(p, d1, d2)
    total = 0
    for q in (Q1, Q1R, Q2):
        before = (len(r1), len(r2))
        got = run_query(q, p, r1, r2)
        total += len(got.pairs)
        assert (len(r1), len(r2)) == (before[0] - len(got.pairs), before[1] - len(got.pairs))
    r1, r2 = stores(p, d1, d2)
    ms, results = run_queries([Q1, Q1R, Q2], p, r1, r2)
    assert len(ms) == total == sum(ms.counts_by_query().values())


def test_disabled_query_skipped(tmp_path):
    p = plan(tmp=tmp_path)
    off = QuerySpec("q1", Q1.conditions, enabled=False)
    r1, r2 = stores(p, [rec("a", doi="10.1/x", year=1995)], [rec("b", doi="10.1/x", year=1995)])
    ms, results = run_queries([off], p, r1, r2)
    assert len(ms) == 0 and results == []


def test_records_missing_attributes_skipped(tmp_path):
    p = plan(tmp=tmp_path)
    r1, r2 = stores(p, [rec("a", title="same title here", year=1995)],
                    [rec("b", title="same title here", issns={"11111111"}, year=1995)])
    assert run_query(Q2, p, r1, r2).pairs == []


# --- resolve_ambiguities --------------------------------------------------

def test_resolve_keeps_higher_score():
    res = resolve_ambiguities([MatchPair("a", "x", "q", 0.97), MatchPair("a", "y", "q", 0.99)])
    assert [(p.d1_uid, p.d2_uid) for p in res.pairs] == [("a", "y")]
    assert res.ambiguous_dropped == 1


def test_resolve_tie_prefers_smaller_d2():
    res = resolve_ambiguities([MatchPair("a", "y", "q", 1.0), MatchPair("a", "x", "q", 1.0)])
    assert [(p.d1_uid, p.d2_uid) for p in res.pairs] == [("a", "x")]


def quadratic_resolver(cands):
    """Repeatedly take the single best remaining candidate, then purge conflicts."""
    pool = {(c.d1_uid, c.d2_uid): c for c in cands}
    for c in cands:
        k = (c.d1_uid, c.d2_uid)
        if c.score > pool[k].score:
            pool[k] = c
    pool = list(pool.values())
    out = []
    while pool:
        best = pool[0]
        for c in pool[1:]:
            if (c.score > best.score or (c.score == best.score and
                                         (c.d1_uid, c.d2_uid) < (best.d1_uid, best.d2_uid))):
                best = c
        out.append(best)
        pool = [c for c in pool if c.d1_uid != best.d1_uid and c.d2_uid != best.d2_uid]
    return {(c.d1_uid, c.d2_uid, c.score) for c in out}


cand = st.builds(MatchPair, st.sampled_from("abcde"), st.sampled_from("vwxyz"), st.just("q"),
                 st.sampled_from([0.95, 0.96, 0.99, 1.0]))


@given(st.lists(cand, max_size=30), st.randoms(use_true_random=False))
def test_resolve_matches_reference_and_ignores_order(cands, rnd):
    res = resolve_ambiguities(cands)
    got = {(p.d1_uid, p.d2_uid, p.score) for p in res.pairs}
    MatchSet(res.pairs)  # raises unless one-to-one
    assert got == quadratic_resolver(cands)
    shuffled = list(cands)
    rnd.shuffle(shuffled)
    assert resolve_ambiguities(shuffled).pairs == res.pairs


def test_matchset_rejects_duplicates():
    ms = MatchSet([MatchPair("a", "x", "q", 1.0)])
    with pytest.raises(ValueError):
        ms.add(MatchPair("a", "y", "q", 1.0))


# --- oracle ---------------------------------------------------------------

def test_oracle_trivial_cases(tmp_path):
    p = plan(tmp=tmp_path)
    assert len(oracle_match([], [], [Q1, Q1R, Q2], p)) == 0
    one = rec("a", doi="10.1/x", title="t", issns={"11111111"}, year=1995)
    got = oracle_match([one], [rec("b", doi="10.1/x", title="t", issns={"11111111"}, year=1995)],
                       [Q1, Q1R, Q2], p)
    assert got.as_set() == {("a", "b", "q1")}


TITLES = ["graph theory basics", "graph theory basic", "graph theory basis", "deep nets",
          "deep net", "a study of things", "a study of thing"]


def random_records(rng, prefix, n):
    out = []
    for i in range(n):
        out.append(rec(f"{prefix}{i}",
                       doi=rng.choice([None, "10.1/a", "10.1/b", "10.1/c", f"10.1/{prefix}{i}"]),
                       title=rng.choice(TITLES),
                       issns=set(rng.sample(["11111111", "22222222", "3333333X"], rng.randint(0, 2))),
                       year=rng.choice([None, 1994, 1995, 1996, 2005, 1850])))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 12), st.integers(0, 12), st.sampled_from([1, 2, 3]),
       st.sampled_from([0.9, 0.95]))
def test_pipeline_equals_oracle(tmp_path_factory, seed, n1, n2, workers, t):
    rng = random.Random(seed)
    tmp = tmp_path_factory.mktemp("orc")
    p = plan(1990, 2000, tmp, 1994, 2010)
    d1, d2 = random_records(rng, "a", n1), random_records(rng, "b", n2)
    specs = default_queries(t)
    r1, r2 = stores(p, d1, d2)
    ms, _ = run_queries(specs, p, r1, r2, workers=workers)
    assert ms.as_set() == oracle_match(d1, d2, specs, p).as_set()


# --- audit and CSV --------------------------------------------------------

def test_audit_rates():
    t = {"a": "same", "b": "same", "c": "x" * 20, "d": "y" * 20}
    u = {"w": "same", "x": "same", "y": "x" * 20, "z": "q" * 20}
    pairs = [MatchPair("a", "w", "q1", 1.0), MatchPair("b", "x", "q1", 1.0),
             MatchPair("c", "y", "q1", 1.0), MatchPair("d", "z", "q2", 1.0)]
    assert audit_matches(pairs[:3], t, u, 0.95)["rate"] == 1.0
    rep = audit_matches(pairs, t, u, 0.95)
    assert rep["rate"] == 0.75 and rep["passing"] == 3
    assert sum(rep["histogram"]["counts"]) == 4
    assert rep["by_query"]["q2"]["rate"] == 0.0


def test_audit_missing_record():
    with pytest.raises(AuditError, match="ghost"):
        audit_matches([MatchPair("ghost", "w", "q1", 1.0)], {}, {"w": "t"}, 0.95)


def test_match_csv_roundtrip(tmp_path):
    pairs = [MatchPair("10.1/a,b", "WOS:1", "q1", 1.0), MatchPair("x", "y", "q2", 0.9583333333333334)]
    write_matches(tmp_path / "m.csv", pairs)
    assert read_matches(tmp_path / "m.csv") == pairs
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "d1_uid,d2_uid,query_id,score"
