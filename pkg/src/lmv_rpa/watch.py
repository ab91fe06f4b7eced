"""Interval polling of one directory, detecting new files by set difference."""

from __future__ import annotations

import hashlib
import logging
import os
import time
from collections.abc import Callable
from dataclasses import replace

from .model import EXTENSION_MEDIA_TYPES, DocumentFile, MediaType, MonitorState

log = logging.getLogger(__name__)

_MAGIC: dict[MediaType, tuple[bytes, ...]] = {
    MediaType.PNG: (b"\x89PNG\r\n\x1a\n",),
    MediaType.JPEG: (b"\xff\xd8\xff",),
    MediaType.TIFF: (b"II*\x00", b"MM\x00*"),
    MediaType.BMP: (b"BM",),
}


class DirectoryUnreadable(OSError):
    pass


def media_type_for(path: str | os.PathLike[str]) -> MediaType | None:
    ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
    return EXTENSION_MEDIA_TYPES.get(ext)


def has_magic(data: bytes, media_type: MediaType) -> bool:
    return any(data.startswith(sig) for sig in _MAGIC[media_type])


def is_valid_image(path: str | os.PathLike[str], strict: bool = False) -> bool:
    media_type = media_type_for(path)
    if media_type is None:
        return False
    if not strict:
        return True
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError:
        return False
    return has_magic(head, media_type)


def _list(directory: str) -> dict[str, int]:
    try:
        entries = list(os.scandir(directory))
    except OSError as exc:
        raise DirectoryUnreadable(f"cannot list {directory}: {exc}") from exc
    sizes = {}
    for entry in entries:
        try:
            if entry.is_file():
                sizes[entry.path] = entry.stat().st_size
        except FileNotFoundError:
            continue
    return sizes


def _read_stable(path: str, size: int) -> bytes | None:
    """File bytes, or None when the file vanished or is still being written."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
        after = os.stat(path).st_size
    except FileNotFoundError:
        return None
    if len(data) != size or after != size:
        return None
    return data


def scan(
    state: MonitorState,
    on_ignored: Callable[[str], None] | None = None,
    now_ms: Callable[[], int] | None = None,
) -> tuple[list[DocumentFile], MonitorState]:
    """Compare the directory against ``state.known_files`` and report new images.

    A file is taken as present only once its size agrees between the listing
    and a re-check after reading; half-written files are left for a later tick.
    Non-image files join the known set (so they are reported once via
    ``on_ignored``) but are never emitted.
    """
    sizes = _list(state.directory)
    known = state.known_paths
    clock = now_ms or (lambda: int(time.time() * 1000))
    next_known: dict[str, str] = {p: h for p, h in known.items() if p in sizes}
    new_docs: list[DocumentFile] = []
    for path in sorted(sizes):
        if path in known:
            continue
        data = _read_stable(path, sizes[path])
        if data is None:
            continue
        digest = hashlib.sha256(data).hexdigest()
        next_known[path] = digest
        media_type = media_type_for(path)
        if media_type is None or (state.strict_magic and not has_magic(data, media_type)):
            if on_ignored is not None:
                on_ignored(path)
            continue
        new_docs.append(DocumentFile(digest, path, clock(), media_type))
    return new_docs, replace(state, known_files=frozenset(next_known.items()))
