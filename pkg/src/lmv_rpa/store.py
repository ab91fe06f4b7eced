"""On-disk outputs: final JSON per document, an append-only record log, audit trail, report.

Layout under ``output_dir``::

    final/<document_id>.json                       consensus output (atomic replace)
    records.jsonl                                  one RecordEntry per processed document
    audit/<document_id>/ballot_<eng>_<str>.json    every ballot (audit on)
    audit/<document_id>/vote_explain.txt           tally table (audit on)
    audit/<document_id>/failure.json               terminal failure (audit on)
    report.md                                      rendered report
"""

from __future__ import annotations

import json
import os
import statistics
import tempfile
import threading
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import canon
from .model import Ballot, PipelineResult, VoteOutcome
from .vote import explain

RECORDS = "records.jsonl"
REPORT = "report.md"


class PersistenceFailure(OSError):
    pass


class ReportFailure(ValueError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"records line {line}: {reason}")
        self.line = line


@dataclass(frozen=True)
class RecordEntry:
    document_id: str
    completed_at: int
    status: str
    included_paths: int
    n_ballots: int
    ballots_total: int
    degraded: bool
    ties: int
    wall_clock_ms: int
    final_path: str | None
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "document_id": self.document_id,
            "completed_at": self.completed_at,
            "status": self.status,
            "included_paths": self.included_paths,
            "n_ballots": self.n_ballots,
            "ballots_total": self.ballots_total,
            "degraded": self.degraded,
            "ties": self.ties,
            "wall_clock_ms": self.wall_clock_ms,
            "final_path": self.final_path,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RecordEntry:
        return cls(
            document_id=str(d["document_id"]),
            completed_at=int(d["completed_at"]),
            status=str(d["status"]),
            included_paths=int(d["included_paths"]),
            n_ballots=int(d["n_ballots"]),
            ballots_total=int(d["ballots_total"]),
            degraded=bool(d["degraded"]),
            ties=int(d["ties"]),
            wall_clock_ms=int(d["wall_clock_ms"]),
            final_path=d.get("final_path"),
            failure=d.get("failure"),
        )


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _safe(component: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in component)


class Store:
    """Serializes all writes under ``output_dir`` through one lock."""

    def __init__(self, output_dir: str | os.PathLike[str], audit: bool = True) -> None:
        self.root = Path(output_dir)
        self.audit = audit
        self._lock = threading.Lock()

    def final_path(self, document_id: str) -> Path:
        return self.root / "final" / f"{document_id}.json"

    def has_output(self, document_id: str) -> bool:
        return self.final_path(document_id).exists()

    @property
    def records_path(self) -> Path:
        return self.root / RECORDS

    def _append_record(self, entry: RecordEntry) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        line = json.dumps(entry.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
        with open(self.records_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def persist(
        self,
        result: PipelineResult,
        outcome: VoteOutcome,
        ballots: Sequence[Ballot],
        ballots_total: int | None = None,
    ) -> dict[str, Path]:
        """Write the final JSON, append the record line and (optionally) the audit files."""
        doc_id = outcome.document_id
        final = self.final_path(doc_id)
        written: list[Path] = []
        with self._lock:
            try:
                atomic_write_text(final, canon.render(outcome.fields))
                written.append(final)
                paths: dict[str, Path] = {"final": final}
                if self.audit:
                    audit_dir = self.root / "audit" / _safe(doc_id)
                    for b in ballots:
                        p = audit_dir / f"ballot_{_safe(b.engine_id)}_{_safe(b.structurer_id)}.json"
                        atomic_write_text(p, json.dumps(b.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n")
                        written.append(p)
                    p = audit_dir / "vote_explain.txt"
                    atomic_write_text(p, explain(outcome))
                    written.append(p)
                    paths["audit"] = audit_dir
                self._append_record(
                    RecordEntry(
                        document_id=doc_id,
                        completed_at=int(time.time() * 1000),
                        status="ok",
                        included_paths=len(outcome.fields),
                        n_ballots=outcome.n_ballots,
                        ballots_total=ballots_total if ballots_total is not None else len(result.ballot_statuses),
                        degraded=outcome.degraded,
                        ties=len(outcome.tie_broken_paths),
                        wall_clock_ms=result.total_ms,
                        final_path=str(final.relative_to(self.root)),
                    )
                )
                paths["records"] = self.records_path
                return paths
            except OSError as exc:
                for p in written:
                    try:
                        p.unlink()
                    except OSError:
                        pass
                raise PersistenceFailure(f"persisting {doc_id}: {exc}") from exc

    def record_failure(self, result: PipelineResult, ballots: Iterable[Ballot] = ()) -> None:
        with self._lock:
            try:
                if self.audit:
                    audit_dir = self.root / "audit" / _safe(result.document_id)
                    body = {
                        "document_id": result.document_id,
                        "path": result.path,
                        "failure": result.failure,
                        "detail": result.failure_detail,
                        "ballot_statuses": [b.to_dict() for b in result.ballot_statuses],
                        "ballots": [b.to_dict() for b in ballots],
                    }
                    atomic_write_text(audit_dir / "failure.json", json.dumps(body, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
                self._append_record(
                    RecordEntry(
                        document_id=result.document_id,
                        completed_at=int(time.time() * 1000),
                        status="failed",
                        included_paths=0,
                        n_ballots=sum(1 for b in result.ballot_statuses if b.status.value == "ok"),
                        ballots_total=len(result.ballot_statuses),
                        degraded=True,
                        ties=0,
                        wall_clock_ms=result.total_ms,
                        final_path=None,
                        failure=result.failure,
                    )
                )
            except OSError as exc:
                raise PersistenceFailure(f"recording failure of {result.document_id}: {exc}") from exc


def read_records(path: str | os.PathLike[str]) -> list[RecordEntry]:
    p = Path(path)
    if not p.exists():
        return []
    entries = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entries.append(RecordEntry.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ReportFailure(lineno, f"{type(exc).__name__}: {exc}") from None
    return entries


def format_report(entries: Sequence[RecordEntry]) -> str:
    lines = [
        "# Processing report",
        "",
        "| document | fields included | ballots ok/total | degraded | ties | wall-clock ms |",
        "|---|---:|---:|---|---:|---:|",
    ]
    for e in entries:
        doc = e.document_id if e.status == "ok" else f"{e.document_id} (failed: {e.failure})"
        lines.append(
            f"| {doc} | {e.included_paths} | {e.n_ballots}/{e.ballots_total} | "
            f"{'yes' if e.degraded else 'no'} | {e.ties} | {e.wall_clock_ms} |"
        )
    times = [e.wall_clock_ms for e in entries]
    failures = sum(1 for e in entries if e.status != "ok")
    lines += ["", "## Summary", "", f"- {len(entries)} documents", f"- {failures} failures"]
    if times:
        lines.append(f"- mean wall-clock: {statistics.fmean(times):.1f} ms")
        lines.append(f"- median wall-clock: {statistics.median(times):.1f} ms")
    else:
        lines.append("- mean wall-clock: n/a")
        lines.append("- median wall-clock: n/a")
    return "\n".join(lines) + "\n"


def render_report(output_dir: str | os.PathLike[str]) -> Path:
    """Rebuild ``report.md`` from ``records.jsonl``."""
    root = Path(output_dir)
    entries = read_records(root / RECORDS)
    out = root / REPORT
    atomic_write_text(out, format_report(entries))
    return out
