"""Synthetic-corpus benchmark: accuracy of single-ballot vs voted configurations.

A corpus is a directory of placeholder PNGs plus ``<document_id>.truth.json``
sidecars. Each configuration runs the real pipeline against mock backends and
scores the persisted final JSON against the sidecars at canonical key paths.
"""

from __future__ import annotations

import json
import math
import os
import random
import shutil
import statistics
import struct
import time
import zlib
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import canon
from .adapters import TRUTH_SUFFIX
from .model import (
    BackendKind,
    DocumentFile,
    EngineDescriptor,
    MediaType,
    MockSpec,
    NoiseModel,
    StructurerDescriptor,
    VotingConfig,
    sha256_hex,
)
from .oracle import analytic_vote_accuracy
from .pipeline import MonitorSettings, Pipeline, PipelineConfig

REPORT_JSON = "bench_report.json"
REPORT_MD = "bench_report.md"
TIMING_JSON = "bench_timing.json"
TIMING_MD = "bench_timing.md"


class BenchSpecError(ValueError):
    pass


class TargetNotEmpty(FileExistsError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    backend_id: str
    priority: int
    noise: NoiseModel = field(default_factory=NoiseModel)
    latency_ms: int = 0
    stream_alias: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], id_key: str) -> BackendSpec:
        return cls(
            backend_id=str(d[id_key]),
            priority=int(d["priority"]),
            noise=NoiseModel.from_dict(d.get("noise", {})),
            latency_ms=int(d.get("latency_ms", 0)),
            stream_alias=d.get("stream_alias"),
        )

    def to_dict(self, id_key: str) -> dict[str, Any]:
        return {
            id_key: self.backend_id,
            "priority": self.priority,
            "noise": self.noise.to_dict(),
            "latency_ms": self.latency_ms,
            "stream_alias": self.stream_alias,
        }


@dataclass(frozen=True)
class BenchConfiguration:
    label: str
    engines: int
    structurers: int
    voting: bool = True


@dataclass(frozen=True)
class TimingSpec:
    n_documents: int = 2
    engine_latency_ms: int = 2000
    structurer_latency_ms: int = 1000


@dataclass(frozen=True)
class BenchSpec:
    n_documents: int
    fields_per_document: int
    engines: tuple[BackendSpec, ...]
    structurers: tuple[BackendSpec, ...]
    configurations: tuple[BenchConfiguration, ...]
    seed: int = 0
    voting: VotingConfig = field(default_factory=VotingConfig)
    max_in_flight: int = 4
    timing: TimingSpec | None = None

    def __post_init__(self) -> None:
        if self.n_documents < 1:
            raise BenchSpecError("n_documents must be >= 1")
        if self.fields_per_document < 1:
            raise BenchSpecError("fields_per_document must be >= 1")
        if not self.engines or not self.structurers:
            raise BenchSpecError("at least one engine and one structurer are required")
        if not self.configurations:
            raise BenchSpecError("at least one configuration is required")
        for c in self.configurations:
            if not 1 <= c.engines <= len(self.engines):
                raise BenchSpecError(f"configuration {c.label!r}: engine count must be in [1, {len(self.engines)}]")
            if not 1 <= c.structurers <= len(self.structurers):
                raise BenchSpecError(f"configuration {c.label!r}: structurer count must be in [1, {len(self.structurers)}]")
        if len({c.label for c in self.configurations}) != len(self.configurations):
            raise BenchSpecError("configuration labels must be unique")
        if self.timing is not None and self.timing.n_documents < 1:
            raise BenchSpecError("timing.n_documents must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BenchSpec:
        try:
            timing = d.get("timing")
            return cls(
                n_documents=int(d["n_documents"]),
                fields_per_document=int(d["fields_per_document"]),
                engines=tuple(BackendSpec.from_dict(e, "engine_id") for e in d["engines"]),
                structurers=tuple(BackendSpec.from_dict(s, "structurer_id") for s in d["structurers"]),
                configurations=tuple(
                    BenchConfiguration(str(c["label"]), int(c["engines"]), int(c["structurers"]), bool(c.get("voting", True)))
                    for c in d["configurations"]
                ),
                seed=int(d.get("seed", 0)),
                voting=VotingConfig.from_dict(d.get("voting", {})),
                max_in_flight=int(d.get("max_in_flight", 4)),
                timing=TimingSpec(**timing) if timing else None,
            )
        except BenchSpecError:
            raise
        except KeyError as exc:
            raise BenchSpecError(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise BenchSpecError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_documents": self.n_documents,
            "fields_per_document": self.fields_per_document,
            "engines": [e.to_dict("engine_id") for e in self.engines],
            "structurers": [s.to_dict("structurer_id") for s in self.structurers],
            "configurations": [
                {"label": c.label, "engines": c.engines, "structurers": c.structurers, "voting": c.voting}
                for c in self.configurations
            ],
            "seed": self.seed,
            "voting": self.voting.to_dict(),
            "max_in_flight": self.max_in_flight,
            "timing": None if self.timing is None else {
                "n_documents": self.timing.n_documents,
                "engine_latency_ms": self.timing.engine_latency_ms,
                "structurer_latency_ms": self.timing.structurer_latency_ms,
            },
        }


def load_spec(path: str | os.PathLike[str]) -> BenchSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BenchSpecError(f"spec file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise BenchSpecError(f"cannot read spec {path}: {exc}") from None
    if not isinstance(data, dict):
        raise BenchSpecError("spec must be a JSON object")
    return BenchSpec.from_dict(data)


def preset_path(name: str) -> Path:
    return Path(__file__).parent / "presets" / name


# -- corpus -------------------------------------------------------------------

_KEYS = [
    "invoice_number", "invoice_date", "due_date", "vendor_name", "vendor_address", "vendor_tax_id",
    "customer_name", "customer_address", "po_number", "currency", "subtotal", "tax_rate",
    "tax_amount", "discount", "shipping", "total_amount", "amount_due", "payment_terms",
    "iban", "swift", "item_description", "item_quantity", "item_unit_price", "item_total",
]
_WORDS = [
    "acme", "globex", "initech", "umbrella", "stark", "wayne", "hooli", "vandelay", "soylent",
    "tyrell", "wonka", "cyberdyne", "gringotts", "oscorp", "aperture", "monarch", "dunder", "pied",
]
_STREETS = ["Main St", "Oak Ave", "Pine Rd", "Harbor Blvd", "Elm Way", "Cedar Ln", "Park Pl"]
_CURRENCIES = ["USD", "EUR", "EGP", "GBP", "JPY"]
_TERMS = ["Net 15", "Net 30", "Net 60", "Due on receipt"]


def _amount(rng: random.Random) -> str:
    cents = rng.randrange(100, 10_000_000)
    return f"{cents // 100:,}.{cents % 100:02d}"


def _value(key: str, rng: random.Random) -> str:
    if key.endswith("_date"):
        return f"{rng.randrange(2019, 2025)}-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}"
    if key in ("invoice_number", "po_number"):
        return f"{'INV' if key == 'invoice_number' else 'PO'}-{rng.randrange(0, 10**6):06d}"
    if key.endswith("_name"):
        return f"{rng.choice(_WORDS).title()} {rng.choice(['Co', 'Ltd', 'LLC', 'GmbH', 'Inc'])}"
    if key.endswith("_address"):
        return f"{rng.randrange(1, 9999)} {rng.choice(_STREETS)}"
    if key == "vendor_tax_id":
        return f"{rng.randrange(0, 10**9):09d}"
    if key == "currency":
        return rng.choice(_CURRENCIES)
    if key == "tax_rate":
        return f"{rng.choice([0, 5, 7, 10, 14, 20])}%"
    if key == "payment_terms":
        return rng.choice(_TERMS)
    if key == "iban":
        return "EG" + "".join(str(rng.randrange(10)) for _ in range(27))
    if key == "swift":
        return "".join(rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ") for _ in range(8))
    if key == "item_quantity":
        return str(rng.randrange(1, 500))
    if key == "item_description":
        return f"{rng.choice(_WORDS)} {rng.choice(['widget', 'service', 'license', 'support', 'part'])}"
    if key in ("subtotal", "tax_amount", "discount", "shipping", "total_amount", "amount_due", "item_unit_price", "item_total"):
        return _amount(rng)
    return f"{rng.choice(_WORDS)}-{rng.randrange(0, 10**4)}"


def field_names(count: int) -> list[str]:
    names = list(_KEYS[:count])
    names += [f"extra_field_{i:03d}" for i in range(count - len(names))]
    return names


def _png_chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)


def placeholder_png(comment: str) -> bytes:
    """A valid 1x1 greyscale PNG with a tEXt comment chunk to make its bytes unique."""
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    idat = zlib.compress(b"\x00\xff", 9)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", idat)
        + _png_chunk(b"tEXt", b"Comment\x00" + comment.encode("latin-1"))
        + _png_chunk(b"IEND", b"")
    )


@dataclass(frozen=True)
class CorpusDocument:
    document: DocumentFile
    truth_path: Path


def generate_corpus(spec: BenchSpec, target: str | os.PathLike[str]) -> list[CorpusDocument]:
    """Write images and truth sidecars into an empty (or absent) directory."""
    root = Path(target)
    if root.exists() and any(root.iterdir()):
        raise TargetNotEmpty(f"{root} is not empty")
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    names = field_names(spec.fields_per_document)
    docs = []
    for i in range(spec.n_documents):
        truth = {name: _value(name, rng) for name in names}
        png = placeholder_png(f"lmv-rpa synthetic document {i} seed {spec.seed}")
        image = root / f"doc_{i:05d}.png"
        image.write_bytes(png)
        doc_id = sha256_hex(png)
        sidecar = root / f"{doc_id}{TRUTH_SUFFIX}"
        sidecar.write_text(json.dumps(truth, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        docs.append(CorpusDocument(DocumentFile(doc_id, str(image), 0, MediaType.PNG), sidecar))
    return docs


def load_corpus(target: str | os.PathLike[str]) -> list[CorpusDocument]:
    root = Path(target)
    docs = []
    for image in sorted(root.glob("doc_*.png")):
        doc_id = sha256_hex(image.read_bytes())
        sidecar = root / f"{doc_id}{TRUTH_SUFFIX}"
        if not sidecar.exists():
            raise FileNotFoundError(f"missing sidecar for {image.name}")
        docs.append(CorpusDocument(DocumentFile(doc_id, str(image), 0, MediaType.PNG), sidecar))
    return docs


# -- running ------------------------------------------------------------------


def _engines(spec: BenchSpec, count: int, corpus: Path, latency_ms: int | None = None) -> tuple[EngineDescriptor, ...]:
    chosen = sorted(spec.engines, key=lambda e: e.priority)[:count]
    return tuple(
        EngineDescriptor(
            e.backend_id, BackendKind.MOCK, "", timeout_ms=600_000, priority=e.priority,
            mock=MockSpec(str(corpus), e.noise, e.latency_ms if latency_ms is None else latency_ms, e.stream_alias),
        )
        for e in chosen
    )


def _structurers(spec: BenchSpec, count: int, latency_ms: int | None = None) -> tuple[StructurerDescriptor, ...]:
    chosen = sorted(spec.structurers, key=lambda s: s.priority)[:count]
    return tuple(
        StructurerDescriptor(
            s.backend_id, BackendKind.MOCK, "", timeout_ms=600_000, priority=s.priority,
            mock=MockSpec(None, s.noise, s.latency_ms if latency_ms is None else latency_ms, s.stream_alias),
        )
        for s in chosen
    )


def _pipeline_config(spec: BenchSpec, conf: BenchConfiguration, corpus: Path, out: Path, latency: tuple[int, int] | None) -> PipelineConfig:
    return PipelineConfig(
        engines=_engines(spec, conf.engines, corpus, None if latency is None else latency[0]),
        structurers=_structurers(spec, conf.structurers, None if latency is None else latency[1]),
        voting=spec.voting,
        output_dir=str(out),
        audit=False,
        monitor=MonitorSettings(directory=str(corpus)),
        max_in_flight=spec.max_in_flight,
        voting_enabled=conf.voting,
    )


def _oracle_inputs(spec: BenchSpec, conf: BenchConfiguration) -> tuple[int, float, int, float] | None:
    """(n, q, V, absent_p) when every ballot's errors are independent and identically distributed."""
    engines = sorted(spec.engines, key=lambda e: e.priority)[: conf.engines]
    structurers = sorted(spec.structurers, key=lambda s: s.priority)[: conf.structurers]
    if any(not e.noise.is_identity for e in engines):
        return None
    noises = {(s.noise.field_error_rate, s.noise.drop_rate, s.noise.rename_rate, s.noise.error_value_space) for s in structurers}
    if len(noises) != 1 or any(s.stream_alias for s in structurers):
        return None
    err, drop, rename, space = noises.pop()
    n = conf.engines * conf.structurers if conf.voting else 1
    return n, 1.0 - err, space, drop + (1.0 - drop) * rename


def _score(docs: Sequence[CorpusDocument], out: Path) -> tuple[int, int, int, int]:
    fields_total = fields_correct = docs_correct = failures = 0
    for cd in docs:
        truth = canon.canonicalize(cd.truth_path.read_text(encoding="utf-8"))
        final = out / "final" / f"{cd.document.id}.json"
        got = canon.canonicalize(final.read_text(encoding="utf-8")) if final.exists() else None
        if got is None:
            failures += 1
        correct = 0 if got is None else sum(1 for p, v in truth.items() if got.get(p) == v)
        fields_total += len(truth)
        fields_correct += correct
        docs_correct += int(correct == len(truth))
    return fields_total, fields_correct, docs_correct, failures


def _modeled_ms(spec: BenchSpec, conf: BenchConfiguration) -> dict[str, int]:
    engines = sorted(spec.engines, key=lambda e: e.priority)[: conf.engines]
    structurers = sorted(spec.structurers, key=lambda s: s.priority)[: conf.structurers]
    le = [e.latency_ms for e in engines]
    ls = [s.latency_ms for s in structurers]
    return {
        "pipelined": max(le) + max(ls),
        "sequential": sum(le) + len(le) * sum(ls),
    }


def _run_configuration(spec: BenchSpec, conf: BenchConfiguration, docs: Sequence[CorpusDocument], corpus: Path, out: Path) -> dict[str, Any]:
    if out.exists():
        shutil.rmtree(out)
    cfg = _pipeline_config(spec, conf, corpus, out, latency=(0, 0))
    pipe = Pipeline(cfg)
    with ThreadPoolExecutor(max_workers=spec.max_in_flight) as pool:
        results = list(pool.map(pipe.process, [cd.document for cd in docs]))
    fields_total, fields_correct, docs_correct, failures = _score(docs, out)
    row: dict[str, Any] = {
        "label": conf.label,
        "engines": conf.engines,
        "structurers": conf.structurers,
        "voting": conf.voting,
        "ballots_per_document": conf.engines * conf.structurers,
        "documents": len(docs),
        "fields_scored": fields_total,
        "fields_correct": fields_correct,
        "field_accuracy": fields_correct / fields_total,
        "document_accuracy": docs_correct / len(docs),
        "terminal_failures": sum(1 for r in results if not r.ok),
        "missing_outputs": failures,
        "modeled_wall_clock_ms": _modeled_ms(spec, conf),
        "oracle": None,
    }
    inputs = _oracle_inputs(spec, conf)
    if inputs is not None:
        n, q, space, absent = inputs
        kappa = spec.voting.quorum_for(n) if conf.voting else 1
        p = analytic_vote_accuracy(n, q, space, kappa, "priority", absent)
        sigma = math.sqrt(p * (1.0 - p) / fields_total)
        row["oracle"] = {
            "n": n,
            "q": q,
            "error_value_space": space,
            "absent_p": absent,
            "quorum": kappa,
            "tie_model": "priority",
            "field_accuracy": p,
            "sigma": sigma,
            "z": 0.0 if sigma == 0 else (row["field_accuracy"] - p) / sigma,
            "within_3sigma": abs(row["field_accuracy"] - p) <= 3 * sigma + 1e-12,
        }
    return row


def run_benchmark(spec: BenchSpec, workdir: str | os.PathLike[str]) -> dict[str, Any]:
    """Run every configuration over the corpus in ``workdir/corpus`` (generated if absent)."""
    root = Path(workdir)
    corpus = root / "corpus"
    docs = load_corpus(corpus) if corpus.exists() and any(corpus.iterdir()) else generate_corpus(spec, corpus)
    if len(docs) != spec.n_documents:
        raise BenchSpecError(f"corpus at {corpus} has {len(docs)} documents, spec wants {spec.n_documents}")
    rows = [_run_configuration(spec, conf, docs, corpus, root / "runs" / conf.label) for conf in spec.configurations]
    return {"seed": spec.seed, "spec": spec.to_dict(), "configurations": rows}


def measure_timing(spec: BenchSpec, workdir: str | os.PathLike[str]) -> dict[str, Any]:
    """Wall-clock per document, pipelined vs fully sequential, with fixed mock latencies."""
    t = spec.timing or TimingSpec()
    root = Path(workdir)
    corpus = root / "corpus"
    docs = load_corpus(corpus)[: t.n_documents]
    widest = max(spec.configurations, key=lambda c: c.engines * c.structurers)
    rows = {}
    for mode in ("pipelined", "sequential"):
        out = root / "timing" / mode
        if out.exists():
            shutil.rmtree(out)
        conf = replace(widest, voting=True)
        cfg = _pipeline_config(spec, conf, corpus, out, latency=(t.engine_latency_ms, t.structurer_latency_ms))
        pipe = Pipeline(cfg)
        times = []
        for cd in docs:
            t0 = time.monotonic()
            pipe.process(cd.document, sequential=mode == "sequential")
            times.append(int(round((time.monotonic() - t0) * 1000)))
        rows[mode] = {"per_document_ms": times, "mean_ms": statistics.fmean(times)}
    return {
        "engines": widest.engines,
        "structurers": widest.structurers,
        "engine_latency_ms": t.engine_latency_ms,
        "structurer_latency_ms": t.structurer_latency_ms,
        **rows,
        "speedup": rows["sequential"]["mean_ms"] / rows["pipelined"]["mean_ms"],
    }


def format_report(report: Mapping[str, Any]) -> str:
    lines = [
        f"# Benchmark report (seed {report['seed']})",
        "",
        "| configuration | ballots | vote | fields | field accuracy | document accuracy | oracle | z | modeled ms (pipelined / sequential) |",
        "|---|---:|---|---:|---:|---:|---:|---:|---:|",
    ]
    for r in report["configurations"]:
        o = r["oracle"]
        lines.append(
            f"| {r['label']} | {r['ballots_per_document']} | {'yes' if r['voting'] else 'no'} | {r['fields_scored']} | "
            f"{r['field_accuracy']:.4f} | {r['document_accuracy']:.4f} | "
            f"{'n/a' if o is None else format(o['field_accuracy'], '.6f')} | {'n/a' if o is None else format(o['z'], '+.2f')} | "
            f"{r['modeled_wall_clock_ms']['pipelined']} / {r['modeled_wall_clock_ms']['sequential']} |"
        )
    return "\n".join(lines) + "\n"


def format_timing(timing: Mapping[str, Any]) -> str:
    return (
        "# Timing\n\n"
        f"{timing['engines']} engines at {timing['engine_latency_ms']} ms, "
        f"{timing['structurers']} structurers at {timing['structurer_latency_ms']} ms\n\n"
        "| mode | mean ms | per document |\n|---|---:|---|\n"
        f"| pipelined | {timing['pipelined']['mean_ms']:.0f} | {timing['pipelined']['per_document_ms']} |\n"
        f"| sequential | {timing['sequential']['mean_ms']:.0f} | {timing['sequential']['per_document_ms']} |\n\n"
        f"speedup: {timing['speedup']:.2f}x\n"
    )


def write_report(report: Mapping[str, Any], out_dir: str | os.PathLike[str]) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pj, pm = out / REPORT_JSON, out / REPORT_MD
    pj.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    pm.write_text(format_report(report), encoding="utf-8")
    return pj, pm


def write_timing(timing: Mapping[str, Any], out_dir: str | os.PathLike[str]) -> tuple[Path, Path]:
    out = Path(out_dir)
    pj, pm = out / TIMING_JSON, out / TIMING_MD
    pj.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    pm.write_text(format_timing(timing), encoding="utf-8")
    return pj, pm
