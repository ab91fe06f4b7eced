import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_ballot
from oracles import brute_force_vote
from lmv_rpa.model import CanonicalFieldMap, CanonValue, Granularity, TieBreak, ValueKind, VotingConfig
from lmv_rpa.vote import InsufficientBallots, MixedDocuments, VoteError, explain, majority_vote

S = ValueKind.STRING


def total_ballots(rows):
    """rows: list of (priority, total value or None)."""
    return [make_ballot({"total": v} if v is not None else {}, priority=p) for p, v in rows]


def test_unanimity():
    ballots = [make_ballot({"vendor": "ACME", "total": "100.00"}, priority=p) for p in range(11, 19)]
    out = majority_vote(ballots)
    assert out.fields == ballots[0].fields
    assert not out.tie_broken_paths
    assert all(t.count == 8 for ts in out.tallies.values() for t in ts)
    assert not out.degraded


def test_strict_majority():
    out = majority_vote(total_ballots([(11 + i, "100.00" if i < 5 else "10000") for i in range(8)]))
    assert out.quorum == 5
    assert out.fields["total"] == CanonValue(S, "100.00")


def test_four_four_tie_priority():
    spec = [(11, "100.00"), (12, "10000"), (21, "10000"), (22, "100.00"), (31, "10000"), (32, "100.00"), (41, "10000"), (42, "100.00")]
    out = majority_vote(total_ballots(spec))
    assert out.fields["total"] == CanonValue(S, "100.00")
    assert out.tie_broken_paths == frozenset({"total"})
    table = explain(out)
    assert "tie→priority" in table


def test_tie_lexicographic():
    spec = [(11, "b"), (12, "a"), (21, "b"), (22, "a")]
    out = majority_vote(total_ballots(spec), VotingConfig(tie_break=TieBreak.LEXICOGRAPHIC))
    assert out.fields["total"].text == "a"
    assert "tie→lexicographic" in explain(out)


def test_below_quorum_excluded_but_tallied():
    ballots = [make_ballot({"total": "1", **({"po_number": "X"} if i < 3 else {})}, priority=11 + i) for i in range(8)]
    out = majority_vote(ballots)
    assert "po_number" not in out.fields
    assert "po_number" in out.tallies
    assert "below quorum 5/8" in explain(out)


def test_empty_consensus_is_legal():
    ballots = [make_ballot({f"k{i}": "v"}, priority=11 + i) for i in range(4)]
    out = majority_vote(ballots)
    assert len(out.fields) == 0
    assert len(out.tallies) == 4


def test_errors():
    with pytest.raises(InsufficientBallots):
        majority_vote(total_ballots([(11, "1"), (12, "1")]))
    mixed = total_ballots([(11, "1"), (12, "1")]) + [make_ballot({"total": "1"}, priority=13, doc="other")]
    with pytest.raises(MixedDocuments):
        majority_vote(mixed)
    with pytest.raises(VoteError):
        majority_vote([])


def test_degraded_flag():
    ballots = total_ballots([(11, "1"), (12, "1"), (21, "1"), (22, "1")])
    assert majority_vote(ballots, expected=8).degraded
    assert not majority_vote(ballots, expected=4).degraded


def test_document_granularity():
    a = {"x": "1", "y": "2"}
    b = {"x": "1", "y": "3"}
    ballots = [make_ballot(a, priority=12), make_ballot(b, priority=11), make_ballot(a, priority=13)]
    out = majority_vote(ballots, VotingConfig(granularity=Granularity.DOCUMENT))
    assert out.fields == ballots[0].fields
    assert "excluded" not in explain(out)
    tie = [make_ballot(a, priority=12), make_ballot(b, priority=11), make_ballot({"z": "0"}, priority=13)]
    out = majority_vote(tie, VotingConfig(granularity=Granularity.DOCUMENT))
    assert out.fields == tie[1].fields
    assert out.tie_broken_paths


def test_explain_unanimity_rows():
    ballots = [make_ballot({"a": "1", "b": "2"}, priority=11 + i) for i in range(3)]
    lines = explain(majority_vote(ballots)).splitlines()
    rows = [ln for ln in lines if ln.startswith(("a ", "b "))]
    assert len(rows) == 2
    assert all("x3" in r and "included" in r for r in rows)


def test_fixed_quorum():
    ballots = [make_ballot({"a": "1", **({"b": "2"} if i < 2 else {})}, priority=11 + i) for i in range(4)]
    assert set(majority_vote(ballots, VotingConfig(quorum=2)).fields) == {"a", "b"}
    assert set(majority_vote(ballots, VotingConfig(quorum=3)).fields) == {"a"}


def test_five_heterogeneous_ballots_against_oracle():
    docs = [
        {"vendor": "ACME", "total": "100.00", "date": "2024-01-01"},
        {"vendor": "ACME", "total": "10000", "items": [{"qty": 2}]},
        {"vendor": "Acme", "total": "100.00", "date": "2024-01-01", "items": [{"qty": 2}]},
        {"vendor": "ACME", "total": "1,00.00", "date": "2024-01-07"},
        {"vendor": "Acme", "total": "100.00", "items": [{"qty": 3}]},
    ]
    ballots = [make_ballot(d, priority=p) for d, p in zip(docs, [11, 12, 21, 22, 31])]
    check_against_oracle(ballots, VotingConfig())


# -- properties --------------------------------------------------------------


def check_against_oracle(ballots, cfg):
    out = majority_vote(ballots, cfg)
    kappa = cfg.quorum_for(len(ballots))
    rows = [(b.priority, {p: (v.kind.value, v.text) for p, v in b.fields.items()}) for b in ballots]
    winners, triples, ties = brute_force_vote(rows, kappa, cfg.tie_break.value)
    assert {p: (v.kind.value, v.text) for p, v in out.fields.items()} == winners
    assert {p: {(t.value.kind.value, t.value.text): t.count for t in ts} for p, ts in out.tallies.items()} == triples
    assert out.tie_broken_paths == frozenset(ties)
    for path, value in out.fields.items():
        counts = {t.value: t.count for t in out.tallies[path]}
        assert counts[value] == max(counts.values())


PATHS = ["a", "b", "c"]
VALUES = [CanonValue(S, "x"), CanonValue(S, "y"), CanonValue(S, "z")]
# each ballot assigns every path either nothing or one of three values
BALLOT_SHAPES = list(itertools.product(range(4), repeat=len(PATHS)))


def shape_ballot(shape, priority):
    from lmv_rpa.model import Ballot

    fields = CanonicalFieldMap({p: VALUES[v - 1] for p, v in zip(PATHS, shape) if v})
    return Ballot("doc", "e", "s", "", fields, priority=priority)


def exhaustive_small_instances(max_n=5):
    """Every multiset of n <= max_n ballots over 3 paths and 3 values (64 ballot shapes)."""
    for n in range(1, max_n + 1):
        yield from itertools.combinations_with_replacement(range(len(BALLOT_SHAPES)), n)


def run_exhaustive(max_n=5, tie_breaks=(TieBreak.PRIORITY, TieBreak.LEXICOGRAPHIC), seed=0):
    """Returns (instances checked, counterexamples)."""
    rng = random.Random(seed)
    prebuilt = {}
    cfgs = [VotingConfig(min_ballots=1, tie_break=t) for t in tie_breaks]
    checked = 0
    failures = []
    for combo in exhaustive_small_instances(max_n):
        prios = rng.sample(range(1, 100), len(combo))
        ballots = []
        for shape, prio in zip(combo, prios):
            b = prebuilt.get((shape, prio))
            if b is None:
                b = prebuilt[(shape, prio)] = shape_ballot(BALLOT_SHAPES[shape], prio)
            ballots.append(b)
        for cfg in cfgs:
            checked += 1
            try:
                check_against_oracle(ballots, cfg)
            except AssertionError:
                failures.append((combo, prios, cfg.tie_break.value))
    return checked, failures


def test_exhaustive_small_instances_up_to_three():
    checked, failures = run_exhaustive(max_n=3)
    assert checked == 2 * sum(math.comb(64 + n - 1, n) for n in range(1, 4))
    assert failures == []


ballot_fields = st.dictionaries(st.sampled_from(PATHS), st.sampled_from(VALUES), max_size=3)


@st.composite
def ballot_sets(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    prios = draw(st.lists(st.integers(1, 99), min_size=n, max_size=n, unique=True))
    from lmv_rpa.model import Ballot

    return [Ballot("doc", f"e{i}", "s", "", CanonicalFieldMap(draw(ballot_fields)), priority=p) for i, p in enumerate(prios)]


cfgs = st.builds(
    VotingConfig,
    granularity=st.sampled_from(list(Granularity)),
    quorum=st.one_of(st.none(), st.integers(1, 9)),
    tie_break=st.sampled_from(list(TieBreak)),
    min_ballots=st.just(1),
)


@settings(max_examples=400, deadline=None)
@given(ballot_sets(), cfgs, st.randoms(use_true_random=False))
def test_permutation_invariance(ballots, cfg, rnd):
    perm = list(ballots)
    rnd.shuffle(perm)
    assert majority_vote(perm, cfg) == majority_vote(ballots, cfg)


@settings(max_examples=200, deadline=None)
@given(ballot_fields, st.integers(1, 8), st.sampled_from(list(Granularity)))
def test_idempotence_on_copies(fields, n, gran):
    from lmv_rpa.model import Ballot

    fm = CanonicalFieldMap(fields)
    ballots = [Ballot("doc", f"e{i}", "s", "", fm, priority=i + 1) for i in range(n)]
    assert majority_vote(ballots, VotingConfig(granularity=gran, min_ballots=1)).fields == fm


@settings(max_examples=300, deadline=None)
@given(ballot_sets())
def test_quorum_monotonicity(ballots):
    included = [set(majority_vote(ballots, VotingConfig(quorum=k, min_ballots=1)).fields) for k in range(1, 10)]
    for lo, hi in zip(included, included[1:]):
        assert hi <= lo
