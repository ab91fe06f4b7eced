from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lmv_rpa.bench import placeholder_png  # noqa: E402
from lmv_rpa.canon import canonicalize  # noqa: E402
from lmv_rpa.model import (  # noqa: E402
    BackendKind,
    Ballot,
    EngineDescriptor,
    MockSpec,
    NoiseModel,
    StructurerDescriptor,
    sha256_hex,
)
from lmv_rpa.pipeline import MonitorSettings, PipelineConfig  # noqa: E402

ENGINE_NAMES = ["paddle", "tesseract", "easyocr", "doctr"]


def make_ballot(fields_json, priority=11, engine="e", structurer="s", doc="doc"):
    raw = fields_json if isinstance(fields_json, str) else json.dumps(fields_json)
    return Ballot(doc, engine, structurer, raw, canonicalize(raw), priority=priority)


def write_image(directory: Path, name: str, truth: dict | None = None, tag: str | None = None) -> tuple[Path, str]:
    """A unique PNG plus (optionally) its truth sidecar. Returns (path, document id)."""
    data = placeholder_png(tag or name)
    path = directory / name
    path.write_bytes(data)
    doc_id = sha256_hex(data)
    if truth is not None:
        (directory.parent / "truth").mkdir(exist_ok=True)
        (directory.parent / "truth" / f"{doc_id}.truth.json").write_text(json.dumps(truth))
    return path, doc_id


def mock_config(
    tmp_path: Path,
    engines: int = 4,
    structurers: int = 2,
    engine_latency_ms: int = 0,
    structurer_latency_ms: int = 0,
    noise: NoiseModel | None = None,
    audit: bool = True,
    **kw,
) -> PipelineConfig:
    truth_dir = tmp_path / "truth"
    truth_dir.mkdir(exist_ok=True)
    inbox = tmp_path / "inbox"
    inbox.mkdir(exist_ok=True)
    engs = [
        EngineDescriptor(
            ENGINE_NAMES[i] if i < 4 else f"eng{i}", BackendKind.MOCK, priority=i + 1, timeout_ms=60_000,
            mock=MockSpec(str(truth_dir), noise or NoiseModel(), engine_latency_ms),
        )
        for i in range(engines)
    ]
    strs = [
        StructurerDescriptor(f"llm{i + 1}", BackendKind.MOCK, priority=i + 1, timeout_ms=60_000, mock=MockSpec(None, NoiseModel(), structurer_latency_ms))
        for i in range(structurers)
    ]
    monitor = kw.pop("monitor", MonitorSettings(directory=str(inbox), interval_ms=50))
    return PipelineConfig(tuple(engs), tuple(strs), output_dir=str(tmp_path / "out"), audit=audit, monitor=monitor, **kw)


@pytest.fixture
def http_backend():
    """Start a local HTTP server whose responses are set per test: (status, body bytes)."""
    state = {"status": 200, "body": b"{}", "requests": [], "delay": 0.0}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            state["requests"].append((self.headers.get("Content-Type"), self.rfile.read(length)))
            if state["delay"]:
                import time

                time.sleep(state["delay"])
            self.send_response(state["status"])
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(state["body"])

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state["url"] = f"http://127.0.0.1:{server.server_address[1]}/"
    yield state
    server.shutdown()
    server.server_close()
