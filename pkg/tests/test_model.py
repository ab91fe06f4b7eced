import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmv_rpa.model import (
    BackendKind,
    Ballot,
    BallotStatus,
    CanonicalFieldMap,
    CanonValue,
    DocumentFile,
    EngineDescriptor,
    Extraction,
    Granularity,
    MediaType,
    MockSpec,
    MonitorState,
    NoiseModel,
    PipelineResult,
    Status,
    StructurerDescriptor,
    Tally,
    TieBreak,
    ValueKind,
    VoteOutcome,
    VotingConfig,
    ballot_priority,
    sha256_hex,
)

texts = st.text(max_size=10)
values = st.builds(CanonValue, st.sampled_from(list(ValueKind)), texts)
field_maps = st.dictionaries(texts, values, max_size=4).map(CanonicalFieldMap)
noise = st.builds(
    NoiseModel,
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 1),
    st.integers(1, 10_000),
    st.integers(0, 2**64 - 1),
)


def roundtrip(obj):
    return type(obj).from_dict(obj.to_dict())


def test_document_id_is_content_hash():
    doc = DocumentFile.from_bytes("/x/a.png", b"abc", 5, MediaType.PNG)
    assert doc.id == sha256_hex(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert roundtrip(doc) == doc


def test_monitor_state_validation():
    with pytest.raises(ValueError):
        MonitorState("d", interval_ms=0)
    with pytest.raises(ValueError):
        MonitorState("d", known_files=frozenset({("a", "1"), ("a", "2")}))
    s = MonitorState("d", 5, frozenset({("a", "1")}), 100, True)
    assert roundtrip(s) == s


@given(noise)
def test_noise_roundtrip(n):
    assert roundtrip(n) == n


@pytest.mark.parametrize("kw", [{"field_error_rate": 1.5}, {"drop_rate": -0.1}, {"error_value_space": 0}])
def test_noise_validation(kw):
    with pytest.raises(ValueError):
        NoiseModel(**kw)


def test_descriptors():
    e = EngineDescriptor("tess", BackendKind.SUBPROCESS, "tesseract-wrap", 5000, 2, 0)
    assert roundtrip(e) == e
    m = EngineDescriptor("m", BackendKind.MOCK, mock=MockSpec("/t", NoiseModel(0.1), 3))
    assert roundtrip(m) == m
    with pytest.raises(ValueError):
        StructurerDescriptor("s", BackendKind.SUBPROCESS, "x")
    with pytest.raises(ValueError):
        EngineDescriptor("m", BackendKind.MOCK)
    with pytest.raises(ValueError):
        EngineDescriptor("h", BackendKind.HTTP, "http://x", timeout_ms=0)
    s = StructurerDescriptor("llm", BackendKind.HTTP, "http://x", priority=2)
    assert roundtrip(s) == s


def test_ballot_priority():
    assert ballot_priority(1, 1) == 11
    assert ballot_priority(4, 2) == 42


@given(field_maps)
def test_field_map_roundtrip_and_order(fm):
    assert roundtrip(fm) == fm
    assert list(fm) == sorted(fm)
    assert hash(fm) == hash(CanonicalFieldMap(dict(reversed(list(fm.items())))))


@given(field_maps, st.sampled_from(list(Status)), st.integers(1, 99))
def test_ballot_roundtrip(fm, status, prio):
    b = Ballot("d", "e", "s", "{}", fm, 3, status, None if status is Status.OK else "why", prio)
    assert roundtrip(b) == b


def test_voting_config():
    assert VotingConfig().quorum_for(8) == 5
    assert VotingConfig().quorum_for(5) == 3
    assert VotingConfig(quorum=2).quorum_for(8) == 2
    c = VotingConfig(Granularity.DOCUMENT, 4, TieBreak.LEXICOGRAPHIC, 2)
    assert roundtrip(c) == c
    assert VotingConfig().to_dict()["inclusion_quorum"] == "majority"
    with pytest.raises(ValueError):
        VotingConfig(quorum=0)


def test_outcome_and_result_roundtrip():
    fm = CanonicalFieldMap({"a": CanonValue(ValueKind.STRING, "x")})
    out = VoteOutcome("d", fm, {"a": (Tally(fm["a"], 3, 33, 11),)}, 3, 2, frozenset({"a"}), True)
    assert roundtrip(out) == out
    r = PipelineResult("d", "/p.png", out, None, None, 10, 5, 1, 20, (BallotStatus("e", "s", Status.OK, None),))
    assert roundtrip(r) == r
    ex = Extraction("d", "e", "t", 4, Status.TIMEOUT, "slow")
    assert roundtrip(ex) == ex and not ex.ok
