"""Detection → extraction fan-out → structuring → vote → persistence, in a loop."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import adapters
from .logs import event
from .model import (
    Ballot,
    BallotStatus,
    DocumentFile,
    EngineDescriptor,
    Extraction,
    MonitorState,
    PipelineResult,
    StructurerDescriptor,
    VotingConfig,
)
from .store import PersistenceFailure, Store
from .vote import majority_vote
from .watch import DirectoryUnreadable, scan

log = logging.getLogger("lmv_rpa.pipeline")

INSUFFICIENT_BALLOTS = "InsufficientBallots"
PERSISTENCE_FAILURE = "PersistenceFailure"
INTERNAL_ERROR = "InternalError"


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class MonitorSettings:
    directory: str = "."
    interval_ms: int = 1000
    horizon_ms: int | None = None
    strict_magic: bool = False
    queue_capacity: int = 64

    def to_dict(self) -> dict[str, Any]:
        return {
            "directory": self.directory,
            "interval_ms": self.interval_ms,
            "horizon_ms": self.horizon_ms,
            "strict_magic": self.strict_magic,
            "queue_capacity": self.queue_capacity,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MonitorSettings:
        return cls(
            directory=str(d.get("directory", ".")),
            interval_ms=d.get("interval_ms", 1000),
            horizon_ms=d.get("horizon_ms"),
            strict_magic=bool(d.get("strict_magic", False)),
            queue_capacity=int(d.get("queue_capacity", 64)),
        )

    def initial_state(self) -> MonitorState:
        return MonitorState(self.directory, self.interval_ms, frozenset(), self.horizon_ms, self.strict_magic)


@dataclass(frozen=True)
class PipelineConfig:
    engines: tuple[EngineDescriptor, ...]
    structurers: tuple[StructurerDescriptor, ...]
    voting: VotingConfig = field(default_factory=VotingConfig)
    output_dir: str = "out"
    audit: bool = True
    monitor: MonitorSettings = field(default_factory=MonitorSettings)
    max_in_flight: int = 2
    voting_enabled: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "engines", tuple(self.engines))
        object.__setattr__(self, "structurers", tuple(self.structurers))
        self.validate()

    def validate(self) -> None:
        if not self.engines:
            raise ConfigInvalid("engines: at least one engine is required")
        if not self.structurers:
            raise ConfigInvalid("structurers: at least one structurer is required")
        for label, items, ident in (
            ("engines", self.engines, lambda e: e.engine_id),
            ("structurers", self.structurers, lambda s: s.structurer_id),
        ):
            ids = [ident(x) for x in items]
            if len(set(ids)) != len(ids):
                raise ConfigInvalid(f"{label}: duplicate id")
            prios = [x.priority for x in items]
            if len(set(prios)) != len(prios):
                raise ConfigInvalid(f"{label}: duplicate priority")
        if self.max_in_flight < 1:
            raise ConfigInvalid("max_in_flight must be >= 1")
        if self.monitor.queue_capacity < 1:
            raise ConfigInvalid("monitor.queue_capacity must be >= 1")
        if not isinstance(self.monitor.interval_ms, int) or self.monitor.interval_ms < 1:
            raise ConfigInvalid(f"monitor.interval_ms must be an integer >= 1, got {self.monitor.interval_ms!r}")
        if self.monitor.horizon_ms is not None and self.monitor.horizon_ms < 0:
            raise ConfigInvalid("monitor.horizon_ms must be >= 0")
        if os.path.abspath(self.output_dir) == os.path.abspath(self.monitor.directory):
            raise ConfigInvalid("output_dir must differ from monitor.directory")

    @property
    def ballots_total(self) -> int:
        return len(self.engines) * len(self.structurers)

    def to_dict(self) -> dict[str, Any]:
        return {
            "engines": [e.to_dict() for e in self.engines],
            "structurers": [s.to_dict() for s in self.structurers],
            "voting": self.voting.to_dict(),
            "output_dir": self.output_dir,
            "audit": self.audit,
            "monitor": self.monitor.to_dict(),
            "max_in_flight": self.max_in_flight,
            "voting_enabled": self.voting_enabled,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PipelineConfig:
        try:
            return cls(
                engines=tuple(EngineDescriptor.from_dict(e) for e in d.get("engines", [])),
                structurers=tuple(StructurerDescriptor.from_dict(s) for s in d.get("structurers", [])),
                voting=VotingConfig.from_dict(d.get("voting", {})),
                output_dir=str(d.get("output_dir", "out")),
                audit=bool(d.get("audit", True)),
                monitor=MonitorSettings.from_dict(d.get("monitor", {})),
                max_in_flight=int(d.get("max_in_flight", 2)),
                voting_enabled=bool(d.get("voting_enabled", True)),
            )
        except ConfigInvalid:
            raise
        except KeyError as exc:
            raise ConfigInvalid(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from None


def load_config(path: str | os.PathLike[str]) -> PipelineConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {p}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{p}: config must be a JSON object")
    cfg = PipelineConfig.from_dict(data)
    # Relative paths in a config file resolve against the file's directory.
    base = p.resolve().parent
    return _rebase(cfg, base)


def _rebase(cfg: PipelineConfig, base: Path) -> PipelineConfig:
    def fix(path: str | None) -> str | None:
        if path is None or os.path.isabs(path):
            return path
        return str(base / path)

    def fix_mock(d):
        if d.mock is None or d.mock.ground_truth_dir is None:
            return d
        return replace(d, mock=replace(d.mock, ground_truth_dir=fix(d.mock.ground_truth_dir)))

    return replace(
        cfg,
        engines=tuple(fix_mock(e) for e in cfg.engines),
        structurers=tuple(fix_mock(s) for s in cfg.structurers),
        output_dir=fix(cfg.output_dir),
        monitor=replace(cfg.monitor, directory=fix(cfg.monitor.directory)),
    )


class Pipeline:
    """Holds the per-backend rate gates and the store shared by all documents."""

    def __init__(self, cfg: PipelineConfig) -> None:
        self.cfg = cfg
        self.store = Store(cfg.output_dir, audit=cfg.audit)
        self.gates = {("engine", e.engine_id): adapters.Gate(e.inter_call_delay_ms) for e in cfg.engines}
        self.gates.update({("structurer", s.structurer_id): adapters.Gate(s.inter_call_delay_ms) for s in cfg.structurers})
        self._engine_prio = {e.engine_id: e.priority for e in cfg.engines}

    # -- one document ---------------------------------------------------------

    def _extract(self, engine: EngineDescriptor, doc: DocumentFile) -> Extraction:
        return adapters.extract_text(engine, doc, self.gates[("engine", engine.engine_id)])

    def _structure(self, s: StructurerDescriptor, ex: Extraction) -> Ballot:
        return adapters.structure_text(s, ex, self.gates[("structurer", s.structurer_id)], self._engine_prio[ex.engine_id])

    def _gather_pipelined(self, doc: DocumentFile) -> tuple[list[Ballot], float, float, float]:
        cfg = self.cfg
        t0 = time.monotonic()
        first_struct = last_struct = None
        last_extract = t0
        ballots: list[Ballot] = []
        workers = len(cfg.engines) * (1 + len(cfg.structurers))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="lmv-backend") as pool:
            pending: dict[Future, str] = {pool.submit(self._extract, e, doc): "extract" for e in cfg.engines}
            while pending:
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    kind = pending.pop(fut)
                    now = time.monotonic()
                    if kind == "extract":
                        last_extract = max(last_extract, now)
                        ex: Extraction = fut.result()
                        if not ex.ok:
                            event(log, "backend_failure", f"engine {ex.engine_id}: {ex.status.value} {ex.reason or ''}".strip(), doc.id, logging.WARNING)
                        for s in cfg.structurers:
                            if ex.ok:
                                if first_struct is None:
                                    first_struct = now
                                pending[pool.submit(self._structure, s, ex)] = "structure"
                            else:
                                ballots.append(self._structure(s, ex))
                    else:
                        last_struct = now
                        ballots.append(fut.result())
        return ballots, t0, last_extract, (last_struct - first_struct) if first_struct and last_struct else 0.0

    def _gather_sequential(self, doc: DocumentFile) -> tuple[list[Ballot], float, float, float]:
        t0 = time.monotonic()
        ballots = []
        extract_total = struct_total = 0.0
        for e in sorted(self.cfg.engines, key=lambda e: e.priority):
            t = time.monotonic()
            ex = self._extract(e, doc)
            extract_total += time.monotonic() - t
            for s in sorted(self.cfg.structurers, key=lambda s: s.priority):
                t = time.monotonic()
                ballots.append(self._structure(s, ex))
                struct_total += time.monotonic() - t
        return ballots, t0, t0 + extract_total, struct_total

    def process(self, doc: DocumentFile, sequential: bool = False) -> PipelineResult:
        """Process one detected document end to end. Never raises for backend failures."""
        cfg = self.cfg
        if self.store.has_output(doc.id):
            event(log, "skipped_existing", f"final output exists for {doc.path}", doc.id)
            return PipelineResult(doc.id, doc.path, None, skipped=True, final_path=str(self.store.final_path(doc.id)))

        gather = self._gather_sequential if sequential else self._gather_pipelined
        ballots, t0, t_extract, struct_span = gather(doc)
        ballots.sort(key=lambda b: (b.priority, b.engine_id, b.structurer_id))
        statuses = tuple(BallotStatus(b.engine_id, b.structurer_id, b.status, b.reason) for b in ballots)
        ok = [b for b in ballots if b.ok]
        extraction_ms = int(round((t_extract - t0) * 1000))
        structuring_ms = int(round(struct_span * 1000))

        def finish(outcome=None, failure=None, detail=None, vote_ms=0, final_path=None) -> PipelineResult:
            total = int(round((time.monotonic() - t0) * 1000))
            return PipelineResult(
                doc.id, doc.path, outcome, failure, detail, extraction_ms, structuring_ms, vote_ms,
                max(total, extraction_ms, structuring_ms, vote_ms), statuses, final_path=final_path,
            )

        voting = cfg.voting
        expected: int | None = cfg.ballots_total
        if not cfg.voting_enabled:
            ok = ok[:1]
            voting = replace(voting, min_ballots=1)
            expected = None
        if len(ok) < max(1, voting.min_ballots):
            result = finish(failure=INSUFFICIENT_BALLOTS, detail=f"{len(ok)} ok ballots of {len(ballots)}, need {voting.min_ballots}")
            event(log, "insufficient_ballots", result.failure_detail, doc.id, logging.WARNING)
            try:
                self.store.record_failure(result, ballots)
            except PersistenceFailure as exc:
                event(log, "persistence_failure", str(exc), doc.id, logging.ERROR)
            return result

        tv = time.monotonic()
        outcome = majority_vote(ok, voting, expected=expected)
        vote_ms = int(round((time.monotonic() - tv) * 1000))
        interim = finish(outcome, vote_ms=vote_ms)
        try:
            paths = self.store.persist(interim, outcome, ballots, ballots_total=len(ballots))
        except PersistenceFailure as exc:
            event(log, "persistence_failure", str(exc), doc.id, logging.ERROR)
            return replace(interim, failure=PERSISTENCE_FAILURE, failure_detail=str(exc))
        result = replace(interim, final_path=str(paths["final"]))
        event(
            log, "document_processed",
            {"path": doc.path, "included": len(outcome.fields), "ballots_ok": len(ok), "ballots_total": len(ballots),
             "degraded": outcome.degraded, "ties": len(outcome.tie_broken_paths), "total_ms": result.total_ms},
            doc.id,
        )
        return result

    # -- the loop -------------------------------------------------------------

    def run(
        self,
        stop: threading.Event | None = None,
        on_result: Callable[[PipelineResult], None] | None = None,
    ) -> list[PipelineResult]:
        """Poll, enqueue and process until the horizon passes or ``stop`` is set.

        On stop, documents already detected (queued or in flight) are drained
        before returning. Results come back in detection order.
        """
        cfg = self.cfg
        stop = stop or threading.Event()
        state = cfg.monitor.initial_state()
        work: queue.Queue[tuple[int, DocumentFile] | None] = queue.Queue(maxsize=cfg.monitor.queue_capacity)
        results: dict[int, PipelineResult] = {}
        lock = threading.Lock()

        def worker() -> None:
            while True:
                item = work.get()
                if item is None:
                    return
                seq, doc = item
                try:
                    result = self.process(doc)
                except Exception as exc:  # noqa: BLE001 - the loop survives any per-document failure
                    log.exception("document failed", extra={"event": "internal_error", "document_id": doc.id, "detail": str(exc)})
                    result = PipelineResult(doc.id, doc.path, None, INTERNAL_ERROR, f"{type(exc).__name__}: {exc}")
                with lock:
                    results[seq] = result
                if on_result is not None:
                    try:
                        on_result(result)
                    except Exception:  # noqa: BLE001
                        log.exception("on_result callback failed", extra={"event": "callback_error"})

        threads = [threading.Thread(target=worker, name=f"lmv-doc-{i}", daemon=True) for i in range(cfg.max_in_flight)]
        for t in threads:
            t.start()

        event(log, "loop_started", {"directory": state.directory, "interval_ms": state.interval_ms, "horizon_ms": state.horizon_ms})
        started = time.monotonic()
        seq = 0

        def ignored(path: str) -> None:
            event(log, "ignored_non_image", f"ignored non-image file {path}")

        try:
            while not stop.is_set():
                try:
                    docs, state = scan(state, on_ignored=ignored)
                except DirectoryUnreadable as exc:
                    event(log, "scan_failed", str(exc), level=logging.WARNING)
                    docs = []
                for doc in docs:
                    event(log, "document_detected", doc.path, doc.id)
                    # Blocking put: a full queue pauses the watcher instead of dropping work.
                    work.put((seq, doc))
                    seq += 1
                if state.horizon_ms is not None and (time.monotonic() - started) * 1000 >= state.horizon_ms:
                    break
                wait_s = state.interval_ms / 1000.0
                if state.horizon_ms is not None:
                    remaining = state.horizon_ms / 1000.0 - (time.monotonic() - started)
                    wait_s = max(0.0, min(wait_s, remaining))
                stop.wait(wait_s)
        finally:
            for _ in threads:
                work.put(None)
            for t in threads:
                t.join()
            event(log, "loop_stopped", {"documents": seq})
        return [results[i] for i in sorted(results)]


def process_document(doc: DocumentFile, cfg: PipelineConfig, sequential: bool = False) -> PipelineResult:
    return Pipeline(cfg).process(doc, sequential=sequential)


def run_loop(
    cfg: PipelineConfig,
    stop: threading.Event | None = None,
    on_result: Callable[[PipelineResult], None] | None = None,
) -> list[PipelineResult]:
    return Pipeline(cfg).run(stop, on_result)


def document_from_path(path: str | os.PathLike[str], strict: bool = False) -> DocumentFile | None:
    """Build a DocumentFile for one-shot processing; None when not a valid image."""
    from .watch import has_magic, media_type_for

    p = os.fspath(path)
    media_type = media_type_for(p)
    if media_type is None:
        return None
    data = Path(p).read_bytes()
    if strict and not has_magic(data, media_type):
        return None
    return DocumentFile.from_bytes(p, data, int(time.time() * 1000), media_type)


__all__ = [
    "ConfigInvalid",
    "INSUFFICIENT_BALLOTS",
    "MonitorSettings",
    "Pipeline",
    "PipelineConfig",
    "PipelineResult",
    "document_from_path",
    "load_config",
    "process_document",
    "run_loop",
]
