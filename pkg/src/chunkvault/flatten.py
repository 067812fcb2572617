"""Flatten ordered container layers into a canonical byte image.

Layers apply in order (later entries win, whiteouts delete), producing a
path-keyed file tree whose serialization is a pure function of content:
entries are laid out in lexicographic path order, every timestamp-like
field is pinned to 0, and file contents are 4096-byte aligned. Two trees
with the same content serialize to identical bytes regardless of how they
were built, which is what makes chunk-level deduplication work.

Flat image layout (all integers little-endian):

    magic "FIMG" | u32 version=1 | u64 entry_count |
    directory table (one record per node, sorted by path) |
    content region (file contents in path order, each 4096-aligned)

Directory record: u16 path_len + path | u8 kind | u16 mode | u64 mtime=0 |
u64 content_offset | u64 content_length | u16 target_len + target
(symlinks only). The image is zero-padded to a multiple of 4096.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from chunkvault.errors import ValidationError

PAGE_SIZE = 4096
DEFAULT_CHUNK_SIZE = 512 * 1024
IMAGE_MAGIC = b"FIMG"
IMAGE_VERSION = 1

KIND_DIR = "dir"
KIND_FILE = "file"
KIND_SYMLINK = "symlink"
KIND_WHITEOUT = "whiteout"
KIND_OPAQUE = "opaque"  # OCI opaque-dir marker: clears lower-layer children

_NODE_KINDS = (KIND_DIR, KIND_FILE, KIND_SYMLINK)
_KIND_CODE = {KIND_DIR: 0, KIND_FILE: 1, KIND_SYMLINK: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def normalize_path(raw: str) -> str:
    """Canonicalize a layer path to "/a/b" form.

    Rejects empty paths, ".." escapes, and embedded NULs; collapses "."
    segments and duplicate separators.
    """
    if not isinstance(raw, str) or raw == "":
        raise ValidationError("empty path")
    if "\x00" in raw:
        raise ValidationError(f"NUL byte in path {raw!r}")
    segments = [seg for seg in raw.split("/") if seg not in ("", ".")]
    if not segments:
        raise ValidationError(f"path {raw!r} names the root")
    if ".." in segments:
        raise ValidationError(f"path {raw!r} escapes the tree")
    return "/" + "/".join(segments)


@dataclass(frozen=True)
class LayerEntry:
    path: str
    kind: str
    mode: int = 0o644
    content: bytes = b""

    @staticmethod
    def file(path: str, content: bytes, mode: int = 0o644) -> "LayerEntry":
        return LayerEntry(path, KIND_FILE, mode, content)

    @staticmethod
    def directory(path: str, mode: int = 0o755) -> "LayerEntry":
        return LayerEntry(path, KIND_DIR, mode)

    @staticmethod
    def symlink(path: str, target: str, mode: int = 0o777) -> "LayerEntry":
        return LayerEntry(path, KIND_SYMLINK, mode, target.encode("utf-8"))

    @staticmethod
    def whiteout(path: str) -> "LayerEntry":
        return LayerEntry(path, KIND_WHITEOUT)

    @staticmethod
    def opaque(path: str) -> "LayerEntry":
        return LayerEntry(path, KIND_OPAQUE)


@dataclass
class LayerArchive:
    """Ordered entries of one layer (the in-repo stand-in for a tarball)."""

    entries: list[LayerEntry] = field(default_factory=list)


@dataclass(frozen=True)
class TreeNode:
    kind: str
    mode: int
    content: bytes = b""


class FileTree:
    """Path-keyed tree with deterministic (lexicographic) iteration."""

    def __init__(self):
        self._nodes: dict[str, TreeNode] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, path: str) -> bool:
        return path in self._nodes

    def get(self, path: str) -> TreeNode | None:
        return self._nodes.get(path)

    def items(self) -> list[tuple[str, TreeNode]]:
        return sorted(self._nodes.items())

    def _ensure_parents(self, path: str) -> None:
        parts = path.split("/")[1:-1]
        cur = ""
        for part in parts:
            cur += "/" + part
            node = self._nodes.get(cur)
            if node is None:
                self._nodes[cur] = TreeNode(KIND_DIR, 0o755)
            elif node.kind != KIND_DIR:
                # a file in the way of a deeper path is replaced by a dir
                self._nodes[cur] = TreeNode(KIND_DIR, 0o755)

    def set_node(self, path: str, node: TreeNode) -> None:
        if node.kind not in _NODE_KINDS:
            raise ValidationError(f"invalid node kind {node.kind!r}")
        if node.kind != KIND_DIR:
            self.remove_subtree(path, keep_self=False)
        self._ensure_parents(path)
        self._nodes[path] = node

    def remove_subtree(self, path: str, keep_self: bool = False) -> None:
        prefix = path + "/"
        doomed = [p for p in self._nodes if p.startswith(prefix)]
        if not keep_self and path in self._nodes:
            doomed.append(path)
        for p in doomed:
            del self._nodes[p]


def apply_layers(layers: Iterable[LayerArchive]) -> FileTree:
    """Apply ordered layers; later layers override, whiteouts delete.

    Per OCI semantics whiteouts act on the state of lower layers, so each
    layer's deletions run before its additions. The result depends only on
    layer content and order.
    """
    tree = FileTree()
    for index, layer in enumerate(layers):
        normalized: list[tuple[str, LayerEntry]] = []
        for entry in layer.entries:
            try:
                normalized.append((normalize_path(entry.path), entry))
            except ValidationError as exc:
                raise ValidationError(
                    f"layer {index}: path {entry.path!r}: {exc}") from exc
        for path, entry in normalized:
            if entry.kind == KIND_WHITEOUT:
                tree.remove_subtree(path)
            elif entry.kind == KIND_OPAQUE:
                tree.remove_subtree(path, keep_self=True)
        for path, entry in normalized:
            if entry.kind in (KIND_WHITEOUT, KIND_OPAQUE):
                continue
            if entry.kind not in _NODE_KINDS:
                raise ValidationError(
                    f"layer {index}: path {entry.path!r}: "
                    f"unknown entry kind {entry.kind!r}")
            tree.set_node(path, TreeNode(entry.kind, entry.mode & 0xFFFF,
                                         bytes(entry.content)))
    return tree


@dataclass(frozen=True)
class FlatImage:
    """Serialized canonical image; a pure function of tree content."""

    data: bytes
    entry_count: int

    def __len__(self) -> int:
        return len(self.data)

    def write_to(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.data)

    @staticmethod
    def read_from(path) -> "FlatImage":
        with open(path, "rb") as fh:
            data = fh.read()
        header = parse_image_header(data)
        return FlatImage(data=data, entry_count=header[1])


def _align(n: int, boundary: int = PAGE_SIZE) -> int:
    return (n + boundary - 1) // boundary * boundary


def serialize_image(tree: FileTree) -> FlatImage:
    """Serialize a tree to its canonical flat image.

    Directory table first (sorted by path), then file contents in path
    order, each starting on a 4096-byte boundary; mtimes pinned to 0.
    """
    items = tree.items()
    records = []
    table_len = 0
    for path, node in items:
        pb = path.encode("utf-8")
        rec_len = 2 + len(pb) + 1 + 2 + 8 + 8 + 8
        if node.kind == KIND_SYMLINK:
            rec_len += 2 + len(node.content)
        records.append((path, pb, node, rec_len))
        table_len += rec_len

    header = IMAGE_MAGIC + struct.pack("<I", IMAGE_VERSION) + struct.pack("<Q", len(items))
    cursor = _align(len(header) + table_len)

    table = bytearray()
    contents = []
    for path, pb, node, _rec_len in records:
        if node.kind == KIND_FILE:
            offset, length = cursor, len(node.content)
            contents.append((cursor, node.content))
            cursor = _align(cursor + length) if length else cursor
        else:
            offset, length = 0, 0
        table += struct.pack("<H", len(pb)) + pb
        table += bytes([_KIND_CODE[node.kind]])
        table += struct.pack("<H", node.mode)
        table += struct.pack("<Q", 0)  # mtime, pinned
        table += struct.pack("<Q", offset)
        table += struct.pack("<Q", length)
        if node.kind == KIND_SYMLINK:
            table += struct.pack("<H", len(node.content)) + node.content

    total = _align(cursor)
    image = bytearray(total)
    image[:len(header)] = header
    image[len(header):len(header) + len(table)] = table
    for offset, content in contents:
        image[offset:offset + len(content)] = content
    return FlatImage(data=bytes(image), entry_count=len(items))


def parse_image_header(data: bytes) -> tuple[int, int]:
    """Return (version, entry_count); raises on bad magic/version."""
    if len(data) < 16 or data[:4] != IMAGE_MAGIC:
        raise ValidationError("bad flat image magic")
    version = struct.unpack("<I", data[4:8])[0]
    if version != IMAGE_VERSION:
        raise ValidationError(f"unsupported flat image version {version}")
    return version, struct.unpack("<Q", data[8:16])[0]


def parse_image_entries(data: bytes) -> list[tuple[str, str, int, int, int, bytes]]:
    """Decode the directory table.

    Yields (path, kind, mode, content_offset, content_length, symlink_target)
    per entry, in table order.
    """
    _, count = parse_image_header(data)
    pos = 16
    out = []
    for _ in range(count):
        (plen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        path = data[pos:pos + plen].decode("utf-8")
        pos += plen
        kind = _CODE_KIND[data[pos]]
        pos += 1
        (mode,) = struct.unpack_from("<H", data, pos)
        pos += 2
        pos += 8  # mtime
        offset, length = struct.unpack_from("<QQ", data, pos)
        pos += 16
        target = b""
        if kind == KIND_SYMLINK:
            (tlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            target = data[pos:pos + tlen]
            pos += tlen
        out.append((path, kind, mode, offset, length, target))
    return out


@dataclass(frozen=True)
class PlainChunk:
    index: int
    is_zero: bool
    data: bytes | None  # absent exactly when is_zero

    def plaintext(self, chunk_size: int) -> bytes:
        return b"\x00" * chunk_size if self.is_zero else self.data


@dataclass(frozen=True)
class PlainChunkList:
    chunk_size: int
    image_length: int
    chunks: tuple[PlainChunk, ...]

    def reassemble(self) -> bytes:
        buf = b"".join(c.plaintext(self.chunk_size) for c in self.chunks)
        return buf[:self.image_length]


def iter_plain_chunks(data: bytes, chunk_size: int) -> Iterator[PlainChunk]:
    """Fixed-size chunks of ``data``; final chunk zero-padded, all-zero
    chunks flagged with no plaintext retained."""
    validate_chunk_size(chunk_size)
    total = (len(data) + chunk_size - 1) // chunk_size
    for i in range(total):
        piece = data[i * chunk_size:(i + 1) * chunk_size]
        if len(piece) < chunk_size:
            piece = piece + b"\x00" * (chunk_size - len(piece))
        if piece.count(0) == chunk_size:
            yield PlainChunk(i, True, None)
        else:
            yield PlainChunk(i, False, piece)


def validate_chunk_size(chunk_size: int) -> None:
    if chunk_size <= 0 or chunk_size % PAGE_SIZE != 0:
        raise ValidationError(
            f"chunk size {chunk_size} must be a positive multiple of {PAGE_SIZE}")


def chunk_image(image: FlatImage | bytes,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> PlainChunkList:
    """Split an image into fixed-size chunks with zero-chunk elision."""
    data = image.data if isinstance(image, FlatImage) else image
    return PlainChunkList(
        chunk_size=chunk_size,
        image_length=len(data),
        chunks=tuple(iter_plain_chunks(data, chunk_size)))
