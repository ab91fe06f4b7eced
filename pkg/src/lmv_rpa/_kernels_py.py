"""Vectorized numpy fallback for the compiled vote-simulation kernel.

Produces the same counts as ``_kernels.pyx`` for the same arguments.
"""

from __future__ import annotations

import numpy as np

MAX_BALLOTS = 64
_CHUNK = 1 << 17

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def _mix_array(seed: np.uint64, counter: np.ndarray) -> np.ndarray:
    z = seed + (counter + np.uint64(1)) * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _uniform_array(seed: np.uint64, counter: np.ndarray) -> np.ndarray:
    return (_mix_array(seed, counter) >> np.uint64(11)).astype(np.float64) * _INV53


def mix64(seed: int, counter: int) -> int:
    with np.errstate(over="ignore"):
        return int(_mix_array(np.uint64(seed), np.array([counter], dtype=np.uint64))[0])


def simulate_plurality(
    n: int,
    q: float,
    V: int,
    quorum: int,
    absent_p: float,
    tie_model: int,
    trials: int,
    seed: int,
    start: int = 0,
) -> int:
    """Count trials in which the true value wins the vote at one path.

    tie_model: 0 = ties lose, 1 = ties win, 2 = k-way tie won with probability 1/k.
    """
    if not 1 <= n <= MAX_BALLOTS:
        raise ValueError("n must be in [1, 64]")
    if V < 1:
        raise ValueError("V must be >= 1")
    present_correct = absent_p + (1.0 - absent_p) * q
    useed = np.uint64(seed)
    stride = 2 * n + 1
    wins = 0
    cols = np.arange(n, dtype=np.uint64)
    for lo in range(start, start + trials, _CHUNK):
        hi = min(lo + _CHUNK, start + trials)
        base = np.arange(lo, hi, dtype=np.uint64)[:, None] * np.uint64(stride)
        u = _uniform_array(useed, base + np.uint64(2) * cols)
        absent = u < absent_p
        correct_mask = ~absent & (u < present_correct)
        wrong_mask = ~absent & ~correct_mask
        present = (~absent).sum(axis=1)
        correct = correct_mask.sum(axis=1)
        widx = (_uniform_array(useed, base + np.uint64(2) * cols + np.uint64(1)) * V).astype(np.int64)
        # Non-wrong ballots get unique negative codes so they never match anything.
        codes = np.where(wrong_mask, widx, -1 - np.arange(n, dtype=np.int64))
        mult = (codes[:, :, None] == codes[:, None, :]).sum(axis=2)
        mult = np.where(wrong_mask, mult, 0)
        maxw = mult.max(axis=1)
        ties = (mult == correct[:, None]).sum(axis=1)
        ok = (present >= quorum) & (correct > 0)
        win = ok & (correct > maxw)
        tie = ok & (correct == maxw)
        if tie_model == 1:
            win |= tie
        elif tie_model == 2:
            u_tie = _uniform_array(useed, base[:, 0] + np.uint64(2 * n))
            k = 1 + ties // np.maximum(correct, 1)
            win |= tie & (u_tie * k < 1.0)
        wins += int(win.sum())
    return wins
