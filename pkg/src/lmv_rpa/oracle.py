"""Exact and simulated probability that field-level plurality recovers the true value.

Model for one key path: each of ``n`` ballots independently omits the path with
probability ``absent_p``; otherwise it carries the true value with probability
``q`` or one of ``V`` wrong values chosen uniformly. The path is included when
at least ``quorum`` ballots carry it; the true value then has to beat every wrong
value's count. Tie models: ``against`` (ties lose), ``for`` (ties win),
``priority`` (a k-way tie is won with probability 1/k, which is exact when
backend priorities are exchangeable with respect to the errors).
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterator
from dataclasses import dataclass

from . import kernels

MAX_EXACT_N = 12
MAX_EXACT_V = 8


class EnumerationTooLarge(ValueError):
    pass


def _partitions(total: int, max_part: int | None = None) -> Iterator[tuple[int, ...]]:
    """Integer partitions of ``total`` as non-increasing tuples."""
    if total == 0:
        yield ()
        return
    top = total if max_part is None else min(total, max_part)
    for first in range(top, 0, -1):
        for rest in _partitions(total - first, first):
            yield (first,) + rest


def _falling(v: int, r: int) -> int:
    out = 1
    for i in range(r):
        out *= v - i
    return out


def _win_share(correct: int, parts: tuple[int, ...], tie_model: str) -> float:
    if correct == 0:
        return 0.0
    top = parts[0] if parts else 0
    if correct > top:
        return 1.0
    if correct < top:
        return 0.0
    if tie_model == "against":
        return 0.0
    if tie_model == "for":
        return 1.0
    return 1.0 / (1 + sum(1 for p in parts if p == correct))


def analytic_vote_accuracy(
    n: int,
    q: float,
    V: int,
    quorum: int | None = None,
    tie_model: str = "priority",
    absent_p: float = 0.0,
) -> float:
    """Exact probability that the vote at one path returns the true value.

    Enumerates every assignment of ballots to {absent, correct, wrong_1..wrong_V}
    grouped into classes that share (absent count, correct count, multiset of
    wrong-value multiplicities); each class is weighted by its multinomial count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if V < 1:
        raise ValueError("V must be >= 1")
    if not 0.0 <= q <= 1.0 or not 0.0 <= absent_p <= 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    if tie_model not in kernels.TIE_MODELS:
        raise ValueError(f"unknown tie model {tie_model!r}")
    if n > MAX_EXACT_N and V > MAX_EXACT_V:
        raise EnumerationTooLarge(f"n={n} > {MAX_EXACT_N} with V={V} > {MAX_EXACT_V}")
    kappa = n // 2 + 1 if quorum is None else quorum
    p_absent = absent_p
    p_correct = (1.0 - absent_p) * q
    p_wrong_each = (1.0 - absent_p) * (1.0 - q) / V
    n_fact = math.factorial(n)
    total = 0.0
    for a in range(n + 1):
        if n - a < kappa:
            continue
        for c in range(1, n - a + 1):
            w = n - a - c
            base = p_absent**a * p_correct**c * p_wrong_each**w
            if base == 0.0:
                continue
            for parts in _partitions(w):
                r = len(parts)
                if r > V:
                    continue
                share = _win_share(c, parts, tie_model)
                if share == 0.0:
                    continue
                value_ways = _falling(V, r)
                for m in Counter(parts).values():
                    value_ways //= math.factorial(m)
                ballot_ways = n_fact // (math.factorial(a) * math.factorial(c) * math.prod(math.factorial(p) for p in parts))
                total += share * value_ways * ballot_ways * base
    return min(1.0, total)


@dataclass(frozen=True)
class SimulationResult:
    wins: int
    trials: int

    @property
    def estimate(self) -> float:
        return self.wins / self.trials

    def sigma(self, p: float | None = None) -> float:
        """Binomial standard error, evaluated at ``p`` (defaults to the estimate)."""
        p = self.estimate if p is None else p
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.trials)


def simulate_vote_accuracy(
    n: int,
    q: float,
    V: int,
    quorum: int | None = None,
    tie_model: str = "priority",
    absent_p: float = 0.0,
    trials: int = 1_000_000,
    seed: int = 0,
) -> SimulationResult:
    """Monte Carlo estimate of the same probability, via the compiled kernel when built."""
    kappa = n // 2 + 1 if quorum is None else quorum
    wins = kernels.simulate_plurality(n, q, V, kappa, absent_p, kernels.TIE_MODELS[tie_model], trials, seed)
    return SimulationResult(int(wins), trials)
