"""Immutable domain types shared across the pipeline.

Every type serializes to a JSON-compatible dict with snake_case keys via
``to_dict`` and back via ``from_dict``. That form is what lands in the audit
log and the record store.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class MediaType(str, Enum):
    PNG = "png"
    JPEG = "jpeg"
    TIFF = "tiff"
    BMP = "bmp"


EXTENSION_MEDIA_TYPES: dict[str, MediaType] = {
    "png": MediaType.PNG,
    "jpg": MediaType.JPEG,
    "jpeg": MediaType.JPEG,
    "tif": MediaType.TIFF,
    "tiff": MediaType.TIFF,
    "bmp": MediaType.BMP,
}


class BackendKind(str, Enum):
    SUBPROCESS = "subprocess"
    HTTP = "http"
    MOCK = "mock"


class Status(str, Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    FAILED = "failed"
    INVALID_JSON = "invalid_json"


class Granularity(str, Enum):
    FIELD = "field"
    DOCUMENT = "document"


class TieBreak(str, Enum):
    PRIORITY = "priority"
    LEXICOGRAPHIC = "lexicographic"


class ValueKind(str, Enum):
    STRING = "string"
    NUMBER = "number"
    BOOLEAN = "boolean"
    NULL = "null"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class DocumentFile:
    id: str
    path: str
    detected_at: int
    media_type: MediaType

    @classmethod
    def from_bytes(cls, path: str, data: bytes, detected_at: int, media_type: MediaType) -> DocumentFile:
        return cls(id=sha256_hex(data), path=str(path), detected_at=detected_at, media_type=media_type)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "path": self.path,
            "detected_at": self.detected_at,
            "media_type": self.media_type.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DocumentFile:
        return cls(d["id"], d["path"], int(d["detected_at"]), MediaType(d["media_type"]))


@dataclass(frozen=True)
class MonitorState:
    """Poller state: the directory, the tick interval and the file set seen last tick.

    ``horizon_ms`` of ``None`` means run forever.
    """

    directory: str
    interval_ms: int = 1000
    known_files: frozenset[tuple[str, str]] = frozenset()
    horizon_ms: int | None = None
    strict_magic: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.interval_ms, int) or self.interval_ms < 1:
            raise ValueError(f"interval_ms must be an integer >= 1, got {self.interval_ms!r}")
        if self.horizon_ms is not None and self.horizon_ms < 0:
            raise ValueError("horizon_ms must be non-negative")
        paths = [p for p, _ in self.known_files]
        if len(paths) != len(set(paths)):
            raise ValueError("known_files contains duplicate paths")

    @property
    def known_paths(self) -> dict[str, str]:
        return dict(self.known_files)

    def to_dict(self) -> dict[str, Any]:
        return {
            "directory": self.directory,
            "interval_ms": self.interval_ms,
            "known_files": [list(pair) for pair in sorted(self.known_files)],
            "horizon_ms": self.horizon_ms,
            "strict_magic": self.strict_magic,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MonitorState:
        return cls(
            directory=d["directory"],
            interval_ms=d.get("interval_ms", 1000),
            known_files=frozenset((p, h) for p, h in d.get("known_files", [])),
            horizon_ms=d.get("horizon_ms"),
            strict_magic=bool(d.get("strict_magic", False)),
        )


@dataclass(frozen=True)
class NoiseModel:
    field_error_rate: float = 0.0
    drop_rate: float = 0.0
    rename_rate: float = 0.0
    error_value_space: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("field_error_rate", "drop_rate", "rename_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value!r}")
        if self.error_value_space < 1:
            raise ValueError("error_value_space must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def is_identity(self) -> bool:
        return self.field_error_rate == 0 and self.drop_rate == 0 and self.rename_rate == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "field_error_rate": self.field_error_rate,
            "drop_rate": self.drop_rate,
            "rename_rate": self.rename_rate,
            "error_value_space": self.error_value_space,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NoiseModel:
        return cls(
            field_error_rate=float(d.get("field_error_rate", 0.0)),
            drop_rate=float(d.get("drop_rate", 0.0)),
            rename_rate=float(d.get("rename_rate", 0.0)),
            error_value_space=int(d.get("error_value_space", 1)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class MockSpec:
    """Deterministic stand-in backend.

    For engines, ``noise`` corrupts the sidecar truth before rendering text.
    For structurers, ``noise`` corrupts the parsed record, keyed per ballot.
    ``stream_alias`` makes a backend reuse another backend's corruption stream
    (used to model correlated engines).
    """

    ground_truth_dir: str | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    latency_ms: int = 0
    stream_alias: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "ground_truth_dir": self.ground_truth_dir,
            "noise": self.noise.to_dict(),
            "latency_ms": self.latency_ms,
            "stream_alias": self.stream_alias,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MockSpec:
        return cls(
            ground_truth_dir=d.get("ground_truth_dir"),
            noise=NoiseModel.from_dict(d.get("noise", {})),
            latency_ms=int(d.get("latency_ms", 0)),
            stream_alias=d.get("stream_alias"),
        )


# Kept under the name used by the adapter contract.
MockEngineSpec = MockSpec


@dataclass(frozen=True)
class EngineDescriptor:
    engine_id: str
    kind: BackendKind
    target: str = ""
    timeout_ms: int = 30_000
    priority: int = 1
    inter_call_delay_ms: int = 0
    mock: MockSpec | None = None

    def __post_init__(self) -> None:
        _check_backend(self.engine_id, self.kind, self.timeout_ms, self.priority, self.mock)
        if self.inter_call_delay_ms < 0:
            raise ValueError("inter_call_delay_ms must be >= 0")

    @property
    def backend_id(self) -> str:
        return self.engine_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "engine_id": self.engine_id,
            "kind": self.kind.value,
            "target": self.target,
            "timeout_ms": self.timeout_ms,
            "priority": self.priority,
            "inter_call_delay_ms": self.inter_call_delay_ms,
            "mock": self.mock.to_dict() if self.mock else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EngineDescriptor:
        return cls(
            engine_id=d["engine_id"],
            kind=BackendKind(d["kind"]),
            target=d.get("target", ""),
            timeout_ms=int(d.get("timeout_ms", 30_000)),
            priority=int(d.get("priority", 1)),
            inter_call_delay_ms=int(d.get("inter_call_delay_ms", 0)),
            mock=MockSpec.from_dict(d["mock"]) if d.get("mock") is not None else None,
        )


@dataclass(frozen=True)
class StructurerDescriptor:
    structurer_id: str
    kind: BackendKind
    target: str = ""
    timeout_ms: int = 30_000
    priority: int = 1
    inter_call_delay_ms: int = 0
    mock: MockSpec | None = None

    def __post_init__(self) -> None:
        if self.kind is BackendKind.SUBPROCESS:
            raise ValueError("structurers support only http and mock kinds")
        _check_backend(self.structurer_id, self.kind, self.timeout_ms, self.priority, self.mock)
        if self.inter_call_delay_ms < 0:
            raise ValueError("inter_call_delay_ms must be >= 0")

    @property
    def backend_id(self) -> str:
        return self.structurer_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "structurer_id": self.structurer_id,
            "kind": self.kind.value,
            "target": self.target,
            "timeout_ms": self.timeout_ms,
            "priority": self.priority,
            "inter_call_delay_ms": self.inter_call_delay_ms,
            "mock": self.mock.to_dict() if self.mock else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StructurerDescriptor:
        return cls(
            structurer_id=d["structurer_id"],
            kind=BackendKind(d["kind"]),
            target=d.get("target", ""),
            timeout_ms=int(d.get("timeout_ms", 30_000)),
            priority=int(d.get("priority", 1)),
            inter_call_delay_ms=int(d.get("inter_call_delay_ms", 0)),
            mock=MockSpec.from_dict(d["mock"]) if d.get("mock") is not None else None,
        )


def _check_backend(backend_id: str, kind: BackendKind, timeout_ms: int, priority: int, mock: MockSpec | None) -> None:
    if not backend_id:
        raise ValueError("backend id must be non-empty")
    if timeout_ms < 1:
        raise ValueError(f"{backend_id}: timeout_ms must be positive")
    if priority < 1:
        raise ValueError(f"{backend_id}: priority must be positive")
    if kind is BackendKind.MOCK and mock is None:
        raise ValueError(f"{backend_id}: mock backend needs a mock spec")


@dataclass(frozen=True)
class Extraction:
    document_id: str
    engine_id: str
    text: str
    latency_ms: int
    status: Status = Status.OK
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "engine_id": self.engine_id,
            "text": self.text,
            "latency_ms": self.latency_ms,
            "status": self.status.value,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Extraction:
        return cls(
            d["document_id"], d["engine_id"], d["text"], int(d["latency_ms"]), Status(d["status"]), d.get("reason")
        )


@dataclass(frozen=True, order=True)
class CanonValue:
    kind: ValueKind
    text: str

    def to_json(self) -> list[str]:
        return [self.kind.value, self.text]

    @classmethod
    def from_json(cls, v: Any) -> CanonValue:
        if isinstance(v, Mapping):
            return cls(ValueKind(v["kind"]), v["text"])
        kind, text = v
        return cls(ValueKind(kind), text)

    def __str__(self) -> str:
        return self.text if self.kind is not ValueKind.STRING else repr(self.text)


class CanonicalFieldMap(Mapping[str, CanonValue]):
    """Read-only map from rendered key path to value, iterated in sorted path order."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, CanonValue] | None = None) -> None:
        items = dict(entries or {})
        self._entries: dict[str, CanonValue] = {k: items[k] for k in sorted(items)}

    def __getitem__(self, key: str) -> CanonValue:
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    # direct views; the generic Mapping ones go through __getitem__ per key
    def keys(self):
        return self._entries.keys()

    def values(self):
        return self._entries.values()

    def items(self):
        return self._entries.items()

    def __eq__(self, other: object) -> bool:
        if isinstance(other, CanonicalFieldMap):
            return self._entries == other._entries
        if isinstance(other, Mapping):
            return self._entries == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(self._entries.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {v}" for k, v in self._entries.items())
        return f"CanonicalFieldMap({{{inner}}})"

    def to_dict(self) -> dict[str, list[str]]:
        return {k: v.to_json() for k, v in self._entries.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CanonicalFieldMap:
        return cls({k: CanonValue.from_json(v) for k, v in d.items()})


@dataclass(frozen=True)
class Ballot:
    document_id: str
    engine_id: str
    structurer_id: str
    raw_json: str
    fields: CanonicalFieldMap
    latency_ms: int = 0
    status: Status = Status.OK
    reason: str | None = None
    priority: int = 1

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "engine_id": self.engine_id,
            "structurer_id": self.structurer_id,
            "raw_json": self.raw_json,
            "fields": self.fields.to_dict(),
            "latency_ms": self.latency_ms,
            "status": self.status.value,
            "reason": self.reason,
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Ballot:
        return cls(
            document_id=d["document_id"],
            engine_id=d["engine_id"],
            structurer_id=d["structurer_id"],
            raw_json=d["raw_json"],
            fields=CanonicalFieldMap.from_dict(d["fields"]),
            latency_ms=int(d.get("latency_ms", 0)),
            status=Status(d.get("status", "ok")),
            reason=d.get("reason"),
            priority=int(d.get("priority", 1)),
        )


def ballot_priority(engine_priority: int, structurer_priority: int) -> int:
    """Tie-break weight of an (engine, structurer) pair; lower wins."""
    return engine_priority * 10 + structurer_priority


@dataclass(frozen=True, order=True)
class Tally:
    value: CanonValue
    count: int
    priority_sum: int
    best_priority: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value.to_json(),
            "count": self.count,
            "priority_sum": self.priority_sum,
            "best_priority": self.best_priority,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Tally:
        return cls(CanonValue.from_json(d["value"]), int(d["count"]), int(d["priority_sum"]), int(d["best_priority"]))


@dataclass(frozen=True)
class VotingConfig:
    granularity: Granularity = Granularity.FIELD
    quorum: int | None = None
    tie_break: TieBreak = TieBreak.PRIORITY
    min_ballots: int = 3

    def __post_init__(self) -> None:
        if self.quorum is not None and self.quorum < 1:
            raise ValueError("fixed quorum requires k >= 1")
        if self.min_ballots < 1:
            raise ValueError("min_ballots must be positive")

    def quorum_for(self, n: int) -> int:
        """Key-inclusion threshold: strict majority of ``n`` unless a fixed k is set."""
        return self.quorum if self.quorum is not None else n // 2 + 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "granularity": self.granularity.value,
            "inclusion_quorum": "majority" if self.quorum is None else {"fixed": self.quorum},
            "tie_break": self.tie_break.value,
            "min_ballots": self.min_ballots,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> VotingConfig:
        q = d.get("inclusion_quorum", "majority")
        if q == "majority" or q is None:
            quorum = None
        elif isinstance(q, Mapping):
            quorum = int(q["fixed"])
        elif isinstance(q, int) and not isinstance(q, bool):
            quorum = q
        else:
            raise ValueError(f"inclusion_quorum: expected 'majority' or {{'fixed': k}}, got {q!r}")
        return cls(
            granularity=Granularity(d.get("granularity", "field")),
            quorum=quorum,
            tie_break=TieBreak(d.get("tie_break", "priority")),
            min_ballots=int(d.get("min_ballots", 3)),
        )


@dataclass(frozen=True)
class VoteOutcome:
    document_id: str
    fields: CanonicalFieldMap
    tallies: Mapping[str, tuple[Tally, ...]]
    n_ballots: int
    quorum: int
    tie_broken_paths: frozenset[str] = frozenset()
    degraded: bool = False
    granularity: Granularity = Granularity.FIELD
    tie_break: TieBreak = TieBreak.PRIORITY

    def __post_init__(self) -> None:
        if self.n_ballots < 1:
            raise ValueError("n_ballots must be >= 1")

    @property
    def included_paths(self) -> list[str]:
        return list(self.fields)

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "fields": self.fields.to_dict(),
            "tallies": {p: [t.to_dict() for t in ts] for p, ts in sorted(self.tallies.items())},
            "n_ballots": self.n_ballots,
            "quorum": self.quorum,
            "tie_broken_paths": sorted(self.tie_broken_paths),
            "degraded": self.degraded,
            "granularity": self.granularity.value,
            "tie_break": self.tie_break.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> VoteOutcome:
        return cls(
            document_id=d["document_id"],
            fields=CanonicalFieldMap.from_dict(d["fields"]),
            tallies={p: tuple(Tally.from_dict(t) for t in ts) for p, ts in d["tallies"].items()},
            n_ballots=int(d["n_ballots"]),
            quorum=int(d["quorum"]),
            tie_broken_paths=frozenset(d.get("tie_broken_paths", [])),
            degraded=bool(d.get("degraded", False)),
            granularity=Granularity(d.get("granularity", "field")),
            tie_break=TieBreak(d.get("tie_break", "priority")),
        )


@dataclass(frozen=True)
class BallotStatus:
    engine_id: str
    structurer_id: str
    status: Status
    reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "engine_id": self.engine_id,
            "structurer_id": self.structurer_id,
            "status": self.status.value,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BallotStatus:
        return cls(d["engine_id"], d["structurer_id"], Status(d["status"]), d.get("reason"))


@dataclass(frozen=True)
class PipelineResult:
    """What happened to one detected document.

    ``failure`` is None on consensus, otherwise ``InsufficientBallots`` or
    ``PersistenceFailure``. ``skipped`` marks documents whose final output
    already existed.
    """

    document_id: str
    path: str
    outcome: VoteOutcome | None
    failure: str | None = None
    failure_detail: str | None = None
    extraction_ms: int = 0
    structuring_ms: int = 0
    vote_ms: int = 0
    total_ms: int = 0
    ballot_statuses: tuple[BallotStatus, ...] = ()
    skipped: bool = False
    final_path: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "path": self.path,
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "failure": self.failure,
            "failure_detail": self.failure_detail,
            "extraction_ms": self.extraction_ms,
            "structuring_ms": self.structuring_ms,
            "vote_ms": self.vote_ms,
            "total_ms": self.total_ms,
            "ballot_statuses": [b.to_dict() for b in self.ballot_statuses],
            "skipped": self.skipped,
            "final_path": self.final_path,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PipelineResult:
        return cls(
            document_id=d["document_id"],
            path=d["path"],
            outcome=VoteOutcome.from_dict(d["outcome"]) if d.get("outcome") else None,
            failure=d.get("failure"),
            failure_detail=d.get("failure_detail"),
            extraction_ms=int(d.get("extraction_ms", 0)),
            structuring_ms=int(d.get("structuring_ms", 0)),
            vote_ms=int(d.get("vote_ms", 0)),
            total_ms=int(d.get("total_ms", 0)),
            ballot_statuses=tuple(BallotStatus.from_dict(b) for b in d.get("ballot_statuses", [])),
            skipped=bool(d.get("skipped", False)),
            final_path=d.get("final_path"),
        )
