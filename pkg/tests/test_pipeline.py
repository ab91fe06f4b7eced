import io
import json
import logging
import threading
import time
from dataclasses import replace

import pytest

from conftest import mock_config, write_image
from lmv_rpa import logs
from lmv_rpa.canon import canonicalize, render
from lmv_rpa.model import BackendKind, EngineDescriptor, Status
from lmv_rpa.pipeline import (
    INSUFFICIENT_BALLOTS,
    INTERNAL_ERROR,
    ConfigInvalid,
    MonitorSettings,
    Pipeline,
    PipelineConfig,
    document_from_path,
    load_config,
    process_document,
)
from lmv_rpa.store import read_records

TRUTH = {"Vendor": "ACME Co", "total": "1,200.00", "invoice_number": "INV-001", "date": "2024-03-01"}


def doc_in(tmp_path, name="a.png", truth=TRUTH):
    path, _ = write_image(tmp_path / "inbox", name, truth)
    return document_from_path(path)


def test_unanimous_zero_noise(tmp_path):
    cfg = mock_config(tmp_path)
    doc = doc_in(tmp_path)
    result = process_document(doc, cfg)
    assert result.ok and not result.skipped
    assert len(result.ballot_statuses) == 8
    assert all(s.status is Status.OK for s in result.ballot_statuses)
    out = result.outcome
    assert out.n_ballots == 8 and not out.degraded and not out.tie_broken_paths
    truth_fields = canonicalize(json.dumps(TRUTH))
    assert out.fields == truth_fields
    final = tmp_path / "out" / "final" / f"{doc.id}.json"
    assert final.read_text() == render(truth_fields)
    assert result.total_ms >= max(result.extraction_ms, result.structuring_ms, result.vote_ms)


def test_two_engines_time_out(tmp_path):
    cfg = mock_config(tmp_path)
    slow = [EngineDescriptor(f"slow{i}", BackendKind.SUBPROCESS, "sh -c 'sleep 5'", timeout_ms=300, priority=5 + i) for i in range(2)]
    cfg = replace(cfg, engines=cfg.engines[:2] + tuple(slow))
    result = process_document(doc_in(tmp_path), cfg)
    assert result.ok
    assert result.outcome.n_ballots == 4
    assert result.outcome.degraded
    assert sum(s.status is Status.OK for s in result.ballot_statuses) == 4
    assert sum(s.status is Status.FAILED for s in result.ballot_statuses) == 4
    assert result.outcome.fields == canonicalize(json.dumps(TRUTH))


def test_all_engines_fail(tmp_path):
    cfg = mock_config(tmp_path)
    bad = tuple(EngineDescriptor(f"f{i}", BackendKind.SUBPROCESS, "false", priority=i + 1) for i in range(4))
    cfg = replace(cfg, engines=bad)
    doc = doc_in(tmp_path)
    result = process_document(doc, cfg)
    assert not result.ok
    assert result.failure == INSUFFICIENT_BALLOTS
    assert not (tmp_path / "out" / "final").exists()
    assert (tmp_path / "out" / "audit" / doc.id / "failure.json").is_file()
    [rec] = read_records(tmp_path / "out" / "records.jsonl")
    assert rec.status == "failed"


def test_second_run_skips(tmp_path):
    cfg = mock_config(tmp_path)
    doc = doc_in(tmp_path)
    process_document(doc, cfg)
    again = process_document(doc, cfg)
    assert again.skipped
    assert len(read_records(tmp_path / "out" / "records.jsonl")) == 1


def test_sequential_matches_pipelined(tmp_path):
    cfg = mock_config(tmp_path, audit=False)
    doc = doc_in(tmp_path)
    seq = Pipeline(replace(cfg, output_dir=str(tmp_path / "o1"))).process(doc, sequential=True)
    par = Pipeline(replace(cfg, output_dir=str(tmp_path / "o2"))).process(doc)
    assert seq.outcome == par.outcome


def test_parallel_speedup_small(tmp_path):
    cfg = mock_config(tmp_path, engine_latency_ms=200, structurer_latency_ms=100, audit=False)
    doc = doc_in(tmp_path)
    par = Pipeline(cfg).process(doc)
    seq = Pipeline(replace(cfg, output_dir=str(tmp_path / "o2"))).process(doc, sequential=True)
    assert par.total_ms <= 200 + 100 + 500
    assert seq.total_ms >= 4 * 200 + 8 * 100


def test_voting_disabled_uses_one_ballot(tmp_path):
    cfg = mock_config(tmp_path, engines=1, structurers=1, voting_enabled=False)
    result = process_document(doc_in(tmp_path), cfg)
    assert result.ok and result.outcome.n_ballots == 1 and not result.outcome.degraded


def test_config_validation(tmp_path):
    cfg = mock_config(tmp_path)
    with pytest.raises(ConfigInvalid):
        replace(cfg, output_dir=cfg.monitor.directory)
    with pytest.raises(ConfigInvalid):
        replace(cfg, engines=())
    with pytest.raises(ConfigInvalid):
        replace(cfg, monitor=replace(cfg.monitor, interval_ms=0))
    with pytest.raises(ConfigInvalid):
        replace(cfg, engines=cfg.engines[:1] * 2)


def test_load_config_round_trip_and_relative_paths(tmp_path):
    cfg = mock_config(tmp_path)
    data = cfg.to_dict()
    data["output_dir"] = "out"
    data["monitor"]["directory"] = "inbox"
    for e in data["engines"]:
        e["mock"]["ground_truth_dir"] = "truth"
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    loaded = load_config(path)
    assert loaded.output_dir == str(tmp_path / "out")
    assert loaded.monitor.directory == str(tmp_path / "inbox")
    assert loaded.engines[0].mock.ground_truth_dir == str(tmp_path / "truth")
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigInvalid, match="missing.json"):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "bad.json")


def test_loop_horizon_empty(tmp_path):
    cfg = mock_config(tmp_path, monitor=MonitorSettings(directory=str(tmp_path / "inbox"), interval_ms=50, horizon_ms=300))
    t0 = time.monotonic()
    assert Pipeline(cfg).run() == []
    assert time.monotonic() - t0 < 5


def test_loop_orders_by_detection(tmp_path):
    (tmp_path / "inbox").mkdir()
    cfg = mock_config(tmp_path, monitor=MonitorSettings(directory=str(tmp_path / "inbox"), interval_ms=50, horizon_ms=2500))
    ids = []

    def dropper():
        for name in ["z.png", "m.png", "a.png"]:
            _, doc_id = write_image(tmp_path / "inbox", name, {**TRUTH, "name": name})
            ids.append(doc_id)
            time.sleep(0.4)

    t = threading.Thread(target=dropper)
    t.start()
    results = Pipeline(cfg).run()
    t.join()
    assert [r.document_id for r in results] == ids
    assert all(r.ok for r in results)


def test_loop_survives_internal_error(tmp_path, monkeypatch):
    import lmv_rpa.pipeline as pl

    calls = {"n": 0}
    real = pl.majority_vote

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real(*a, **kw)

    monkeypatch.setattr(pl, "majority_vote", flaky)
    (tmp_path / "inbox").mkdir()
    write_image(tmp_path / "inbox", "a.png", TRUTH)
    write_image(tmp_path / "inbox", "b.png", {**TRUTH, "x": "1"})
    cfg = mock_config(tmp_path, max_in_flight=1, monitor=MonitorSettings(directory=str(tmp_path / "inbox"), interval_ms=50, horizon_ms=300))
    results = Pipeline(cfg).run()
    assert [r.failure for r in results] == [INTERNAL_ERROR, None]


def test_stop_drains_in_flight(tmp_path):
    (tmp_path / "inbox").mkdir()
    for i in range(3):
        write_image(tmp_path / "inbox", f"d{i}.png", {**TRUTH, "i": str(i)})
    cfg = mock_config(tmp_path, engine_latency_ms=300, max_in_flight=1, monitor=MonitorSettings(directory=str(tmp_path / "inbox"), interval_ms=50))
    stop = threading.Event()
    seen = []

    def on_result(r):
        seen.append(r)

    threading.Timer(0.2, stop.set).start()
    results = Pipeline(cfg).run(stop, on_result)
    # all three were detected on the first tick, so all three finish
    assert len(results) == 3 == len(seen)
    assert all(r.ok for r in results)


def test_json_log_lines(tmp_path):
    buf = io.StringIO()
    logs.configure("info", buf)
    try:
        (tmp_path / "inbox").mkdir()
        write_image(tmp_path / "inbox", "a.png", TRUTH)
        (tmp_path / "inbox" / "notes.txt").write_text("hi")
        cfg = mock_config(tmp_path, monitor=MonitorSettings(directory=str(tmp_path / "inbox"), interval_ms=50, horizon_ms=200))
        Pipeline(cfg).run()
    finally:
        logs.configure("warning", io.StringIO())
    records = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert all(set(r) == {"ts", "level", "event", "document_id", "detail"} for r in records)
    events = [r["event"] for r in records]
    assert events.count("ignored_non_image") == 1
    assert events.count("document_processed") == 1
    assert events[0] == "loop_started" and events[-1] == "loop_stopped"
    assert logging.getLogger("lmv_rpa").propagate is False
