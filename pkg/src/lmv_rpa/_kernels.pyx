# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo kernel for field-level plurality voting.

Must stay bit-identical to ``_kernels_py``: same counter layout, same
splitmix64 mixing, same float comparisons.
"""

from libc.stdint cimport uint64_t, int64_t

cdef enum:
    MAX_BALLOTS = 64


cdef inline uint64_t _mix(uint64_t seed, uint64_t counter) nogil:
    cdef uint64_t z = seed + (counter + 1) * <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t counter) nogil:
    return <double>(_mix(seed, counter) >> 11) * (1.0 / 9007199254740992.0)


def mix64(uint64_t seed, uint64_t counter):
    return _mix(seed, counter)


def simulate_plurality(int n, double q, long long V, int quorum, double absent_p,
                       int tie_model, long long trials, uint64_t seed,
                       long long start=0):
    """Count trials in which the true value wins the vote at one path.

    tie_model: 0 = ties lose, 1 = ties win, 2 = k-way tie won with probability 1/k.
    """
    if n < 1 or n > MAX_BALLOTS:
        raise ValueError("n must be in [1, 64]")
    if V < 1:
        raise ValueError("V must be >= 1")
    cdef double present_correct = absent_p + (1.0 - absent_p) * q
    cdef long long wins = 0
    cdef long long t
    cdef int b, i, j, present, correct, nwrong, maxw, mult, ties
    cdef int64_t wrong[MAX_BALLOTS]
    cdef uint64_t base
    cdef double u
    cdef uint64_t stride = 2 * n + 1
    with nogil:
        for t in range(start, start + trials):
            base = <uint64_t>t * stride
            present = 0
            correct = 0
            nwrong = 0
            for b in range(n):
                u = _uniform(seed, base + 2 * b)
                if u < absent_p:
                    continue
                present += 1
                if u < present_correct:
                    correct += 1
                else:
                    wrong[nwrong] = <int64_t>(_uniform(seed, base + 2 * b + 1) * V)
                    nwrong += 1
            if present < quorum or correct == 0:
                continue
            maxw = 0
            ties = 0
            for i in range(nwrong):
                mult = 0
                for j in range(nwrong):
                    if wrong[j] == wrong[i]:
                        mult += 1
                if mult > maxw:
                    maxw = mult
                if mult == correct:
                    ties += 1
            if correct > maxw:
                wins += 1
            elif correct == maxw:
                if tie_model == 1:
                    wins += 1
                elif tie_model == 2:
                    # ties counts each tied wrong value once per supporting ballot
                    if _uniform(seed, base + 2 * n) * (1 + ties // correct) < 1.0:
                        wins += 1
    return wins
