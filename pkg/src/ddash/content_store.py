"""Content-addressed object store with two-level Merkle DAG chunking.

Objects live one per file under ``<data_dir>/objects/``; the filename is the
base58 ContentId.  Each file is a one-byte kind tag followed by the object's
serialized form, and the id is the multihash of that serialized form only.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import base58

from .errors import CorruptionError, NotFoundError, PersistenceError, ValidationError

log = logging.getLogger(__name__)

CHUNK_SIZE = 262144
MAX_CHILDREN = 65536
MAX_BLOB_SIZE = CHUNK_SIZE * MAX_CHILDREN

SHA2_256 = 0x12
DIGEST_LEN = 32
MULTIHASH_PREFIX = bytes([SHA2_256, DIGEST_LEN])
MULTIHASH_LEN = 2 + DIGEST_LEN

# Kind tags are 4 bits apart so a single flipped bit never turns one into the other.
KIND_LEAF = 0x03
KIND_MANIFEST = 0x0C
KINDS = (KIND_LEAF, KIND_MANIFEST)

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_CHILD = struct.Struct(">I34s")


@dataclass(frozen=True, order=True)
class ContentId:
    """Multihash bytes (``0x12 0x20`` + SHA-256 digest) rendered as base58btc."""

    multihash: bytes

    @classmethod
    def for_bytes(cls, data: bytes) -> ContentId:
        return cls(MULTIHASH_PREFIX + hashlib.sha256(data).digest())

    @classmethod
    def parse(cls, text: str) -> ContentId:
        if not isinstance(text, str) or not text:
            raise ValidationError("content id must be a non-empty string")
        try:
            raw = base58.b58decode(text.strip())
        except ValueError as exc:
            raise ValidationError(f"malformed content id {text!r}: {exc}") from None
        cid = cls(raw)
        if not cid.is_wellformed():
            raise ValidationError(f"malformed content id {text!r}")
        return cid

    def is_wellformed(self) -> bool:
        return len(self.multihash) == MULTIHASH_LEN and self.multihash[:2] == MULTIHASH_PREFIX

    @property
    def digest(self) -> bytes:
        return self.multihash[2:]

    def __str__(self) -> str:
        return base58.b58encode(self.multihash).decode("ascii")

    def __repr__(self) -> str:
        return f"ContentId({str(self)!r})"


@dataclass(frozen=True)
class ManifestEntry:
    length: int
    cid: ContentId


@dataclass(frozen=True)
class Manifest:
    children: tuple[ManifestEntry, ...]
    total_length: int

    def serialize(self) -> bytes:
        parts = [_U32.pack(len(self.children))]
        parts.extend(_CHILD.pack(c.length, c.cid.multihash) for c in self.children)
        parts.append(_U64.pack(self.total_length))
        return b"".join(parts)

    @classmethod
    def parse(cls, payload: bytes) -> Manifest:
        """Strictly decode manifest bytes; raise ValidationError on any inconsistency."""
        if len(payload) < _U32.size + _U64.size:
            raise ValidationError("manifest too short")
        (count,) = _U32.unpack_from(payload, 0)
        if count < 2 or count > MAX_CHILDREN:
            raise ValidationError(f"manifest child count {count} out of range")
        if len(payload) != _U32.size + count * _CHILD.size + _U64.size:
            raise ValidationError("manifest length does not match child count")
        children = []
        offset = _U32.size
        for _ in range(count):
            length, mh = _CHILD.unpack_from(payload, offset)
            offset += _CHILD.size
            cid = ContentId(mh)
            if not cid.is_wellformed() or not 0 < length <= CHUNK_SIZE:
                raise ValidationError("malformed manifest child")
            children.append(ManifestEntry(length, cid))
        (total,) = _U64.unpack_from(payload, offset)
        if total != sum(c.length for c in children):
            raise ValidationError("manifest total length mismatch")
        return cls(tuple(children), total)


def chunk(data: bytes) -> list[bytes]:
    if len(data) <= CHUNK_SIZE:
        return [data]
    return [data[i : i + CHUNK_SIZE] for i in range(0, len(data), CHUNK_SIZE)]


def build_objects(data: bytes) -> tuple[ContentId, list[tuple[ContentId, int, bytes]]]:
    """Split ``data`` into serialized objects without touching disk.

    Returns the root id and ``(id, kind, payload)`` triples, leaves first.
    """
    if len(data) > MAX_BLOB_SIZE:
        raise ValidationError(f"blob of {len(data)} bytes exceeds limit {MAX_BLOB_SIZE}")
    pieces = chunk(data)
    objects = [(ContentId.for_bytes(p), KIND_LEAF, p) for p in pieces]
    if len(pieces) == 1:
        return objects[0][0], objects
    manifest = Manifest(
        tuple(ManifestEntry(len(p), cid) for (cid, _, p) in objects), len(data)
    ).serialize()
    root = ContentId.for_bytes(manifest)
    objects.append((root, KIND_MANIFEST, manifest))
    return root, objects


def verify(cid: ContentId, data: bytes) -> bool:
    return ContentId.for_bytes(data) == cid


class ContentStore:
    """Local blob store.  Safe to share between threads."""

    def __init__(self, data_dir: str | os.PathLike):
        self.root = Path(data_dir)
        self.objects_dir = self.root / "objects"
        try:
            self.objects_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"cannot create object directory: {exc}") from exc

    def _path(self, cid: ContentId) -> Path:
        return self.objects_dir / str(cid)

    def put_blob(self, data: bytes) -> ContentId:
        root, objects = build_objects(bytes(data))
        for cid, kind, payload in objects:
            self._write(cid, kind, payload)
        return root

    def put_object(self, cid: ContentId, kind: int, payload: bytes) -> None:
        """Persist a single serialized object after checking it against ``cid``."""
        if kind not in KINDS:
            raise ValidationError(f"unknown object kind {kind:#x}")
        if not verify(cid, payload):
            raise ValidationError(f"payload does not hash to {cid}")
        if kind == KIND_LEAF and len(payload) > CHUNK_SIZE:
            raise ValidationError("leaf exceeds chunk size")
        if kind == KIND_MANIFEST:
            Manifest.parse(payload)
        self._write(cid, kind, payload)

    def _write(self, cid: ContentId, kind: int, payload: bytes) -> None:
        path = self._path(cid)
        if path.exists():
            return
        try:
            fd, tmp = tempfile.mkstemp(dir=self.objects_dir, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(bytes([kind]))
                    fh.write(payload)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise PersistenceError(f"cannot write object {cid}: {exc}") from exc

    def has(self, cid: ContentId) -> bool:
        return self._path(cid).is_file()

    def read_object(self, cid: ContentId) -> tuple[int, bytes]:
        """Return ``(kind, payload)`` for one object, verified against its id."""
        try:
            raw = self._path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFoundError(f"object {cid} not found") from None
        except OSError as exc:
            raise PersistenceError(f"cannot read object {cid}: {exc}") from exc
        if not raw or raw[0] not in KINDS:
            raise CorruptionError(f"object {cid} has an invalid kind tag")
        kind, payload = raw[0], raw[1:]
        if not verify(cid, payload):
            raise CorruptionError(f"object {cid} failed integrity check")
        if kind == KIND_LEAF and len(payload) > CHUNK_SIZE:
            raise CorruptionError(f"leaf {cid} exceeds chunk size")
        return kind, payload

    def get(self, cid: ContentId) -> bytes:
        kind, payload = self.read_object(cid)
        if kind == KIND_LEAF:
            return payload
        try:
            manifest = Manifest.parse(payload)
        except ValidationError as exc:
            raise CorruptionError(f"manifest {cid}: {exc}") from None
        parts = []
        for entry in manifest.children:
            child_kind, child = self.read_object(entry.cid)
            if child_kind != KIND_LEAF or len(child) != entry.length:
                raise CorruptionError(f"manifest {cid} child {entry.cid} mismatch")
            parts.append(child)
        return b"".join(parts)

    def missing_children(self, cid: ContentId) -> list[ContentId]:
        kind, payload = self.read_object(cid)
        if kind == KIND_LEAF:
            return []
        return [e.cid for e in Manifest.parse(payload).children if not self.has(e.cid)]

    def verify(self, cid: ContentId, data: bytes) -> bool:
        return verify(cid, data)

    def object_ids(self) -> list[ContentId]:
        ids = []
        for entry in self.objects_dir.iterdir():
            if entry.name.startswith("."):
                continue
            try:
                ids.append(ContentId.parse(entry.name))
            except ValidationError:
                log.warning("ignoring stray file %s in object store", entry.name)
        return ids

    def object_count(self) -> int:
        return len(self.object_ids())
