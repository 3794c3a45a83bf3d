"""Edit distance and normalized title similarity."""

from __future__ import annotations

# float slack for "similarity >= threshold" so 1 - 1/20 passes 0.95
EPS = 1e-9


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points.

    Uses the bit-parallel formulation of Myers (1999) / Hyyrö (2003): one
    machine-word-style update per character of the longer string, with the
    shorter string encoded as bitmasks in a Python int.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)

    peq: dict[str, int] = {}
    for i, ch in enumerate(b):
        peq[ch] = peq.get(ch, 0) | (1 << i)

    full = (1 << m) - 1
    top = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for ch in a:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (~(xh | pv) & full)
        mh = pv & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = mh | (~(xv | ph) & full)
        mv = ph & xv
    return score


def title_similarity(a: str, b: str) -> float:
    """1 - levenshtein(a, b) / max(len(a), len(b)); 1.0 for two empty titles."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def meets_threshold(similarity: float, threshold: float) -> bool:
    return similarity >= threshold - EPS


def similar_at_least(a: str, b: str, threshold: float) -> float | None:
    """Similarity of a and b if it reaches threshold, else None.

    Rejects on the length difference before computing any distance, since
    the distance is at least ``abs(len(a) - len(b))``.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    if not meets_threshold(1.0 - abs(len(a) - len(b)) / longest, threshold):
        return None
    sim = 1.0 - levenshtein(a, b) / longest
    return sim if meets_threshold(sim, threshold) else None
