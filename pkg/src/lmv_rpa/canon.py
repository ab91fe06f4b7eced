"""Flatten JSON objects into canonical key-path maps and render them back.

Two candidates from different backends compare equal under voting exactly when
their canonical maps are equal: keys are normalized (case, whitespace, hyphens),
string values are whitespace-collapsed, thousands separators are dropped from
numeric strings and JSON numbers are reduced to minimal decimal form.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from decimal import Context, Decimal
from typing import Any, Union

from .model import CanonicalFieldMap, CanonValue, ValueKind

log = logging.getLogger(__name__)

MAX_DEPTH = 32
MAX_PATH_LENGTH = 1024

Segment = Union[str, int]


class CanonError(ValueError):
    pass


class InvalidJson(CanonError):
    pass


class NotAnObject(CanonError):
    pass


class DepthExceeded(CanonError):
    pass


class PathConflict(CanonError):
    pass


_KEY_RUN = re.compile(r"[\s\-]+")
_ESCAPES = {"%": "%25", ".": "%2E", "[": "%5B", "]": "%5D"}
_UNESCAPE = re.compile(r"%(25|2E|5B|5D)")
_UNESCAPES = {v[1:]: k for k, v in _ESCAPES.items()}

_GROUPED_NUMBER = re.compile(r"-?(?:[0-9]{1,3}(?:,[0-9]{3})+|[0-9]+)(?:\.[0-9]+)?")
# ID-like codes such as "007" keep their text verbatim.
_LEADING_ZERO_ID = re.compile(r"-?0[0-9,]")

# Decimal exponents outside this window render in scientific form.
_PLAIN_EXPONENT_RANGE = (-30, 60)


def normalize_key(key: str) -> str:
    """Lowercase, trim, collapse whitespace/hyphen runs to ``_`` and escape path syntax."""
    k = _KEY_RUN.sub("_", key.strip().lower())
    if not k:
        k = "_"
    return "".join(_ESCAPES.get(ch, ch) for ch in k)


def unescape_key(key: str) -> str:
    return _UNESCAPE.sub(lambda m: _UNESCAPES[m.group(1)], key)


@dataclass(frozen=True)
class KeyPath:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        if not self.segments or not isinstance(self.segments[0], str):
            raise ValueError("a key path starts with an object key")

    def render(self) -> str:
        out = []
        for seg in self.segments:
            if isinstance(seg, int):
                out.append(f"[{seg}]")
            else:
                out.append("." + seg if out else seg)
        return "".join(out)

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> KeyPath:
        segments: list[Segment] = []
        for m in _PATH_TOKEN.finditer(text):
            if m.group("key") is not None:
                segments.append(m.group("key"))
            else:
                segments.append(int(m.group("idx")))
        if not segments or KeyPath(tuple(segments)).render() != text:
            raise ValueError(f"malformed key path {text!r}")
        return cls(tuple(segments))


_PATH_TOKEN = re.compile(r"(?:^|\.)(?P<key>[^.\[\]]+)|\[(?P<idx>0|[1-9]\d*)\]")


def canonical_number(d: Decimal) -> str:
    if not d.is_finite():
        raise InvalidJson(f"non-finite number {d}")
    if d.is_zero():
        return "0"
    # Exact trailing-zero strip; Decimal.normalize() would round to context precision.
    d = d.normalize(Context(prec=max(1, len(d.as_tuple().digits))))
    lo, hi = _PLAIN_EXPONENT_RANGE
    if lo <= d.adjusted() <= hi:
        text = format(d, "f")
    else:
        sign, digits, exp = d.as_tuple()
        mant = "".join(map(str, digits))
        adjusted = d.adjusted()
        if len(mant) > 1:
            mant = mant[0] + "." + mant[1:]
        text = ("-" if sign else "") + mant + f"e{'+' if adjusted >= 0 else '-'}{abs(adjusted)}"
    return text


def canonical_string(s: str) -> str:
    text = " ".join(s.split())
    if _GROUPED_NUMBER.fullmatch(text) and not _LEADING_ZERO_ID.match(text):
        text = text.replace(",", "")
    return text


def canon_leaf(value: Any) -> CanonValue:
    if value is None:
        return CanonValue(ValueKind.NULL, "null")
    if value is True:
        return CanonValue(ValueKind.BOOLEAN, "true")
    if value is False:
        return CanonValue(ValueKind.BOOLEAN, "false")
    if isinstance(value, (int, Decimal)):
        return CanonValue(ValueKind.NUMBER, canonical_number(Decimal(value)))
    if isinstance(value, float):
        return CanonValue(ValueKind.NUMBER, canonical_number(Decimal(repr(value))))
    if isinstance(value, str):
        return CanonValue(ValueKind.STRING, canonical_string(value))
    raise TypeError(f"not a JSON scalar: {type(value).__name__}")


class _Pairs(list):
    """Raw object members, kept so duplicate keys can be detected."""


def _reject_constant(name: str) -> Any:
    raise InvalidJson(f"non-standard JSON constant {name}")


def _parse(raw_json: str | bytes) -> Any:
    if isinstance(raw_json, bytes):
        try:
            raw_json = raw_json.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidJson(f"not UTF-8: {exc}") from None
    try:
        return json.loads(
            raw_json,
            object_pairs_hook=_Pairs,
            parse_float=Decimal,
            parse_int=Decimal,
            parse_constant=_reject_constant,
        )
    except RecursionError:
        raise DepthExceeded(f"nesting deeper than {MAX_DEPTH} levels") from None
    except json.JSONDecodeError as exc:
        raise InvalidJson(str(exc)) from None


def parse_json(raw_json: str | bytes) -> Any:
    """Decode JSON exactly: numbers as Decimal, objects as ordered member lists."""
    return _parse(raw_json)


def dumps(node: Any) -> str:
    """Compact JSON for values produced by ``parse_json`` (keeps numbers exact)."""
    if isinstance(node, _Pairs):
        return "{" + ",".join(json.dumps(k, ensure_ascii=False) + ":" + dumps(v) for k, v in node) + "}"
    if isinstance(node, dict):
        return "{" + ",".join(json.dumps(k, ensure_ascii=False) + ":" + dumps(v) for k, v in node.items()) + "}"
    if isinstance(node, list):
        return "[" + ",".join(dumps(v) for v in node) + "]"
    if isinstance(node, Decimal):
        return str(node)
    return json.dumps(node, ensure_ascii=False)


def is_object(node: Any) -> bool:
    return isinstance(node, (_Pairs, dict))


def object_get(node: Any, key: str, default: Any = None) -> Any:
    """Member lookup on a decoded object; the last duplicate wins."""
    if isinstance(node, dict):
        return node.get(key, default)
    found = default
    for k, v in node:
        if k == key:
            found = v
    return found


def _members(pairs: _Pairs) -> dict[str, Any]:
    """Resolve duplicates and key-normalization collisions deterministically.

    Exact duplicate keys: last occurrence wins. Distinct raw keys that normalize
    to the same key: the lexicographically greatest raw key wins, so the result
    never depends on member order.
    """
    last: dict[str, Any] = {}
    for k, v in pairs:
        if k in last:
            log.warning("duplicate JSON key %r, keeping last occurrence", k, extra={"event": "duplicate_key"})
        last[k] = v
    chosen: dict[str, tuple[str, Any]] = {}
    for raw in sorted(last):
        chosen[normalize_key(raw)] = (raw, last[raw])
    return {k: v for k, (_, v) in chosen.items()}


def flatten(obj: Any) -> CanonicalFieldMap:
    out: dict[str, CanonValue] = {}

    def walk(node: Any, prefix: str, depth: int) -> None:
        if depth > MAX_DEPTH and isinstance(node, (list, dict)):
            raise DepthExceeded(f"nesting deeper than {MAX_DEPTH} levels")
        if isinstance(node, _Pairs):
            items: list[tuple[str, Any]] = [
                ((prefix + "." + k) if prefix else k, v) for k, v in _members(node).items()
            ]
        elif isinstance(node, dict):
            items = [((prefix + "." + k) if prefix else k, v) for k, v in _members(_Pairs(node.items())).items()]
        elif isinstance(node, list):
            items = [(f"{prefix}[{i}]", v) for i, v in enumerate(node)]
        else:
            if len(prefix) > MAX_PATH_LENGTH:
                raise InvalidJson(f"key path longer than {MAX_PATH_LENGTH} characters")
            out[prefix] = canon_leaf(node)
            return
        for path, child in items:
            walk(child, path, depth + 1)

    if not isinstance(obj, (_Pairs, dict)):
        raise NotAnObject(f"top-level JSON value is {_json_type(obj)}, expected object")
    walk(obj, "", 1)
    return CanonicalFieldMap(out)


def _json_type(v: Any) -> str:
    if isinstance(v, list):
        return "array"
    if isinstance(v, str):
        return "string"
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    return "number"


def canonicalize(raw_json: str | bytes) -> CanonicalFieldMap:
    """Parse a JSON object and flatten it into a canonical field map.

    Raises InvalidJson, NotAnObject or DepthExceeded.
    """
    return flatten(_parse(raw_json))


def canonicalize_object(obj: dict[str, Any]) -> CanonicalFieldMap:
    """Canonicalize an already-decoded JSON object (e.g. from an HTTP body)."""
    return canonicalize(json.dumps(obj, ensure_ascii=False))


def _to_tree(fields: CanonicalFieldMap) -> dict[str, Any]:
    root: dict[str, Any] = {}
    _LEAF = object()
    for path_text, value in fields.items():
        segments = KeyPath.parse(path_text).segments
        node: Any = root
        for i, seg in enumerate(segments):
            last = i == len(segments) - 1
            want_container = None if last else (list if isinstance(segments[i + 1], int) else dict)
            if isinstance(seg, int):
                if not isinstance(node, list):
                    raise PathConflict(f"{path_text}: array index under an object")
                while len(node) <= seg:
                    node.append(_LEAF)
                slot = node[seg]
            else:
                if not isinstance(node, dict):
                    raise PathConflict(f"{path_text}: object key under an array")
                slot = node.get(seg, _LEAF)
            if last:
                if slot is not _LEAF:
                    raise PathConflict(f"{path_text} is a prefix of another path")
                new: Any = ("leaf", value)
            elif slot is _LEAF:
                new = want_container()
            elif isinstance(slot, tuple):
                raise PathConflict(f"a prefix of {path_text} is itself a path")
            elif not isinstance(slot, want_container):
                raise PathConflict(f"{path_text}: conflicting container types")
            else:
                new = slot
            node[seg] = new
            node = new

    def finish(node: Any) -> Any:
        if isinstance(node, tuple):
            return node[1]
        if isinstance(node, dict):
            return {unescape_key(k): finish(v) for k, v in node.items()}
        # Array gaps become {} so that re-flattening reproduces the same map.
        return [{} if v is _LEAF else finish(v) for v in node]

    return finish(root)


def _dump(node: Any, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    if isinstance(node, CanonValue):
        if node.kind is ValueKind.STRING:
            out.append(json.dumps(node.text, ensure_ascii=False))
        else:
            out.append(node.text)
    elif isinstance(node, dict):
        if not node:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(node)
        for i, k in enumerate(keys):
            out.append(pad + "  " + json.dumps(k, ensure_ascii=False) + ": ")
            _dump(node[k], indent + 1, out)
            out.append(",\n" if i < len(keys) - 1 else "\n")
        out.append(pad + "}")
    else:
        if not node:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(node):
            out.append(pad + "  ")
            _dump(v, indent + 1, out)
            out.append(",\n" if i < len(node) - 1 else "\n")
        out.append(pad + "]")


def render(fields: CanonicalFieldMap) -> str:
    """Rebuild the nested JSON object: sorted keys, two-space indent, no trailing newline."""
    out: list[str] = []
    _dump(_to_tree(CanonicalFieldMap(fields)), 0, out)
    return "".join(out)


def to_plain(fields: CanonicalFieldMap) -> dict[str, Any]:
    """Nested Python object equivalent of ``render`` (numbers as Decimal)."""
    return json.loads(render(fields), parse_float=Decimal, parse_int=Decimal)
