"""Independent reference implementations used only by the tests.

None of these import the code paths they check.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import Counter


def brute_force_vote(ballots, quorum, tie_break="priority"):
    """Field-level plurality by explicit enumeration of (path, value, count) triples.

    ``ballots`` is a list of (priority, {path: (kind, text)}). Returns
    (winners, triples, tie_paths) where triples maps path -> {value: count}.
    """
    triples: dict[str, Counter] = {}
    supporters: dict[tuple[str, tuple[str, str]], list[int]] = {}
    for prio, fields in ballots:
        for path, value in fields.items():
            triples.setdefault(path, Counter())[value] += 1
            supporters.setdefault((path, value), []).append(prio)
    winners = {}
    ties = set()
    for path, counter in triples.items():
        if sum(counter.values()) < quorum:
            continue
        best = max(counter.values())
        tied = [v for v, c in counter.items() if c == best]
        if len(tied) > 1:
            ties.add(path)
        if tie_break == "priority":
            # smallest supporter priority; text breaks exact priority collisions
            tied.sort(key=lambda v: (min(supporters[(path, v)]), v[1], v[0]))
        else:
            tied.sort(key=lambda v: (v[1], v[0], min(supporters[(path, v)])))
        winners[path] = tied[0]
    return winners, {p: dict(c) for p, c in triples.items()}, ties


def brute_force_accuracy(n, q, V, quorum, tie_model, absent_p=0.0):
    """Sum over every one of the (V + 2)^n ballot assignments. Only for tiny n and V."""
    categories = ["absent", "correct"] + [f"w{i}" for i in range(V)]
    probs = {"absent": absent_p, "correct": (1 - absent_p) * q}
    for i in range(V):
        probs[f"w{i}"] = (1 - absent_p) * (1 - q) / V
    total = 0.0
    for assignment in itertools.product(categories, repeat=n):
        p = 1.0
        for a in assignment:
            p *= probs[a]
        if p == 0.0:
            continue
        counts = Counter(a for a in assignment if a != "absent")
        if sum(counts.values()) < quorum:
            continue
        c = counts.get("correct", 0)
        if c == 0:
            continue
        wrong = [v for k, v in counts.items() if k != "correct"]
        top = max(wrong, default=0)
        if c > top:
            total += p
        elif c == top:
            if tie_model == "for":
                total += p
            elif tie_model == "priority":
                total += p / (1 + wrong.count(c))
    return total


MASK = 2**64 - 1


def replay_splitmix(seed, counter):
    """splitmix64, written out from its published constants."""
    x = (seed + 0x9E3779B97F4A7C15 * (counter + 1)) % 2**64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) % 2**64
    return x ^ (x >> 31)


def replay_uniform(seed, counter):
    return (replay_splitmix(seed, counter) >> 11) / float(2**53)


def replay_key(*parts):
    return int(hashlib.sha256("\x00".join(parts).encode()).hexdigest()[:16], 16)


def replay_corruption(truth, err, drop, rename, V, seed, key):
    """Re-derive the corrupted record from the documented stream layout."""
    base = (seed ^ key) & MASK
    out = {}
    for name in sorted(truth):
        fs = replay_splitmix(base, replay_key(name))
        if replay_uniform(fs, 0) < drop:
            continue
        value = truth[name]
        if replay_uniform(fs, 1) < err:
            value = f"{value}~{int(replay_uniform(fs, 2) * V)}"
        out[name + "_x" if replay_uniform(fs, 3) < rename else name] = value
    return out


def egf_accuracy_no_absent(n, q, V, quorum, tie_model):
    """Exact accuracy via exponential generating functions (no absences, ties lose or win).

    Sequences of w wrong ballots over V values with every multiplicity <= m are
    counted as w! [x^w] (sum_{k<=m} x^k / k!)^V, in exact rationals.
    """
    from fractions import Fraction
    from math import comb, factorial

    if n < quorum:
        return Fraction(0)
    q = Fraction(q).limit_denominator(10**9)

    def bounded(w, m):
        if m < 0:
            return Fraction(1 if w == 0 else 0)
        base = [Fraction(1, factorial(k)) for k in range(min(m, w) + 1)]
        poly = [Fraction(1)]
        for _ in range(V):
            nxt = [Fraction(0)] * min(len(poly) + len(base) - 1, w + 1)
            for i, a in enumerate(poly):
                if a:
                    for j, b in enumerate(base):
                        if i + j <= w:
                            nxt[i + j] += a * b
            poly = nxt
        return poly[w] * factorial(w) if w < len(poly) else Fraction(0)

    total = Fraction(0)
    for c in range(1, n + 1):
        w = n - c
        limit = c - 1 if tie_model == "against" else c
        ways = bounded(w, limit)
        total += comb(n, c) * q**c * ((1 - q) / V) ** w * ways
    return total
