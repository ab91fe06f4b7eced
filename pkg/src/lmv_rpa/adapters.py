"""Clients for extraction engines and structurer backends.

Three transports share one contract: subprocess (argv + document path, text on
stdout), HTTP (octet-stream in, ``{"text": ...}`` out for engines; ``{"text": ...}``
in, ``{"json": {...}}`` out for structurers) and deterministic mocks driven by
sidecar truth files. No adapter call raises on backend failure; every failure
becomes a status on the returned Extraction or Ballot.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import signal
import subprocess
import threading
import time
import urllib.error
import urllib.request
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from . import canon
from .model import (
    BackendKind,
    Ballot,
    CanonicalFieldMap,
    DocumentFile,
    EngineDescriptor,
    Extraction,
    NoiseModel,
    Status,
    StructurerDescriptor,
    ballot_priority,
)

log = logging.getLogger(__name__)

TRUTH_SUFFIX = ".truth.json"
_STDERR_EXCERPT = 240
_MASK64 = (1 << 64) - 1


# -- seeded corruption --------------------------------------------------------


def splitmix64(seed: int, counter: int) -> int:
    z = (seed + (counter + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def uniform(seed: int, counter: int) -> float:
    return (splitmix64(seed, counter) >> 11) * (1.0 / 9007199254740992.0)


def stream_key(*parts: str) -> int:
    """64-bit key for a per-call random stream, e.g. (document id, backend id)."""
    digest = hashlib.sha256("\x00".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def wrong_value(value: Any, index: int) -> str:
    return f"{value}~{index}"


def render_record(record: Mapping[str, Any]) -> str:
    return "".join(f"{k}: {record[k]}\n" for k in sorted(record))


def corrupt_record(truth: Mapping[str, Any], noise: NoiseModel, key: int) -> tuple[str, dict[str, Any]]:
    """Apply drop / value-corruption / rename noise to a flat record.

    Each field draws from its own stream keyed by (seed xor key, field name), so
    the fate of one field never depends on which other fields exist.
    """
    base = (noise.seed ^ key) & _MASK64
    out: dict[str, Any] = {}
    for name in sorted(truth):
        field_seed = splitmix64(base, stream_key(name))
        if uniform(field_seed, 0) < noise.drop_rate:
            continue
        value = truth[name]
        if uniform(field_seed, 1) < noise.field_error_rate:
            value = wrong_value(value, int(uniform(field_seed, 2) * noise.error_value_space))
        out_name = name + "_x" if uniform(field_seed, 3) < noise.rename_rate else name
        out[out_name] = value
    return render_record(out), out


def parse_key_values(text: str) -> dict[str, str]:
    """Mock structurer grammar: ``key: value`` lines; later duplicates win."""
    record: dict[str, str] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        if key:
            record[key] = value.strip()
    return record


def load_truth(ground_truth_dir: str | os.PathLike[str], document_id: str) -> dict[str, Any]:
    path = Path(ground_truth_dir) / f"{document_id}{TRUTH_SUFFIX}"
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: sidecar is not a JSON object")
    return data


# -- rate gate ----------------------------------------------------------------


class Gate:
    """Spaces successive dispatches to one backend by at least ``delay_ms``."""

    def __init__(self, delay_ms: int = 0) -> None:
        self.delay_ms = delay_ms
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if self.delay_ms <= 0:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.delay_ms / 1000.0
        if start > now:
            time.sleep(start - now)


# -- transports ---------------------------------------------------------------


class _Timeout(Exception):
    pass


def _elapsed_ms(t0: float) -> int:
    return int(round((time.monotonic() - t0) * 1000))


def _run_subprocess(argv: list[str], timeout_ms: int) -> tuple[int, bytes, bytes]:
    proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, start_new_session=True)
    try:
        out, err = proc.communicate(timeout=timeout_ms / 1000.0)
    except subprocess.TimeoutExpired:
        # Kill the whole session so grandchildren holding the pipes die too.
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        proc.communicate()
        raise _Timeout from None
    return proc.returncode, out, err


def _post(url: str, body: bytes, content_type: str, timeout_ms: int) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, method="POST", headers={"Content-Type": content_type})
    try:
        with urllib.request.urlopen(req, timeout=timeout_ms / 1000.0) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read() if exc.fp else b""
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError) or "timed out" in str(exc.reason):
            raise _Timeout from None
        raise
    except TimeoutError:
        raise _Timeout from None


def _mock_sleep(latency_ms: int, timeout_ms: int) -> None:
    if latency_ms > timeout_ms:
        time.sleep(timeout_ms / 1000.0)
        raise _Timeout
    if latency_ms > 0:
        time.sleep(latency_ms / 1000.0)


# -- engines ------------------------------------------------------------------


def extract_text(engine: EngineDescriptor, doc: DocumentFile, gate: Gate | None = None) -> Extraction:
    """Run one extraction engine on one document."""
    (gate or Gate(engine.inter_call_delay_ms)).wait()
    t0 = time.monotonic()

    def result(text: str = "", status: Status = Status.OK, reason: str | None = None) -> Extraction:
        return Extraction(doc.id, engine.engine_id, text, _elapsed_ms(t0), status, reason)

    try:
        if engine.kind is BackendKind.SUBPROCESS:
            argv = shlex.split(engine.target) + [doc.path]
            rc, out, err = _run_subprocess(argv, engine.timeout_ms)
            if rc != 0:
                excerpt = err.decode("utf-8", "replace").strip()[-_STDERR_EXCERPT:]
                return result(status=Status.FAILED, reason=f"exit {rc}: {excerpt}".rstrip(": "))
            try:
                return result(out.decode("utf-8"))
            except UnicodeDecodeError:
                return result(status=Status.FAILED, reason="stdout is not valid UTF-8")
        if engine.kind is BackendKind.HTTP:
            body = Path(doc.path).read_bytes()
            code, payload = _post(engine.target, body, "application/octet-stream", engine.timeout_ms)
            if code != 200:
                return result(status=Status.FAILED, reason=f"HTTP {code}")
            try:
                data = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                return result(status=Status.FAILED, reason="response is not JSON")
            if not isinstance(data, dict) or not isinstance(data.get("text"), str):
                return result(status=Status.FAILED, reason='response lacks string "text"')
            return result(data["text"])
        spec = engine.mock
        assert spec is not None
        if spec.ground_truth_dir is None:
            return result(status=Status.FAILED, reason="mock engine has no ground_truth_dir")
        truth = load_truth(spec.ground_truth_dir, doc.id)
        key = stream_key(doc.id, spec.stream_alias or engine.engine_id)
        text, _ = corrupt_record(truth, spec.noise, key)
        _mock_sleep(spec.latency_ms, engine.timeout_ms)
        return result(text)
    except _Timeout:
        return result(status=Status.TIMEOUT, reason=f"exceeded {engine.timeout_ms} ms")
    except Exception as exc:  # noqa: BLE001 - every backend failure becomes a status
        return result(status=Status.FAILED, reason=f"{type(exc).__name__}: {exc}")


# -- structurers --------------------------------------------------------------


def structure_text(
    structurer: StructurerDescriptor,
    extraction: Extraction,
    gate: Gate | None = None,
    engine_priority: int = 1,
) -> Ballot:
    """Turn one extraction into a ballot via one structurer backend."""
    priority = ballot_priority(engine_priority, structurer.priority)
    empty = CanonicalFieldMap()
    if not extraction.ok:
        return Ballot(
            extraction.document_id, extraction.engine_id, structurer.structurer_id, "", empty, 0,
            Status.FAILED, f"extraction status {extraction.status.value}", priority,
        )
    (gate or Gate(structurer.inter_call_delay_ms)).wait()
    t0 = time.monotonic()

    def result(raw: str = "", fields: CanonicalFieldMap = empty, status: Status = Status.OK, reason: str | None = None) -> Ballot:
        return Ballot(
            extraction.document_id, extraction.engine_id, structurer.structurer_id,
            raw, fields, _elapsed_ms(t0), status, reason, priority,
        )

    try:
        if structurer.kind is BackendKind.HTTP:
            body = json.dumps({"text": extraction.text}, ensure_ascii=False).encode("utf-8")
            code, payload = _post(structurer.target, body, "application/json", structurer.timeout_ms)
            if code != 200:
                return result(status=Status.FAILED, reason=f"HTTP {code}")
            try:
                decoded = canon.parse_json(payload)
            except canon.CanonError as exc:
                return result(status=Status.FAILED, reason=f"response is not JSON: {exc}")
            if not canon.is_object(decoded) or canon.object_get(decoded, "json", _MISSING) is _MISSING:
                return result(status=Status.FAILED, reason='response lacks "json"')
            inner = canon.object_get(decoded, "json")
            raw = canon.dumps(inner)
        else:
            spec = structurer.mock
            assert spec is not None
            record: dict[str, Any] = parse_key_values(extraction.text)
            if not spec.noise.is_identity:
                key = stream_key(extraction.document_id, extraction.engine_id, spec.stream_alias or structurer.structurer_id)
                _, record = corrupt_record(record, spec.noise, key)
            raw = json.dumps(record, ensure_ascii=False)
            _mock_sleep(spec.latency_ms, structurer.timeout_ms)
        try:
            fields = canon.canonicalize(raw)
        except canon.CanonError as exc:
            return result(raw, status=Status.INVALID_JSON, reason=f"{type(exc).__name__}: {exc}")
        return result(raw, fields)
    except _Timeout:
        return result(status=Status.TIMEOUT, reason=f"exceeded {structurer.timeout_ms} ms")
    except Exception as exc:  # noqa: BLE001
        return result(status=Status.FAILED, reason=f"{type(exc).__name__}: {exc}")


_MISSING = object()
