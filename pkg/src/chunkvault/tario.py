"""POSIX tar layer importer with OCI whiteout names.

Translates a tar archive into the in-repo layer model: regular files,
directories, and symlinks map directly; ".wh.<name>" members become
whiteouts of <name>, and the ".wh..wh..opq" marker becomes an opaque
entry clearing the containing directory's lower-layer content. Hardlinks,
devices, and FIFOs are out of scope and rejected with the member named.
"""

from __future__ import annotations

import posixpath
import tarfile
from typing import BinaryIO

from chunkvault.errors import ValidationError
from chunkvault.flatten import LayerArchive, LayerEntry, normalize_path

_WHITEOUT_PREFIX = ".wh."
_OPAQUE_MARKER = ".wh..wh..opq"


def load_layer_tar(source: str | BinaryIO, layer_index: int = 0) -> LayerArchive:
    """Read one layer tarball into a LayerArchive, preserving member order."""
    if isinstance(source, str):
        tf = tarfile.open(source, mode="r:*")
    else:
        tf = tarfile.open(fileobj=source, mode="r:*")
    entries: list[LayerEntry] = []
    with tf:
        for member in tf:
            entry = _convert_member(tf, member, layer_index)
            if entry is not None:
                entries.append(entry)
    return LayerArchive(entries=entries)


def _convert_member(tf: tarfile.TarFile, member: tarfile.TarInfo,
                    layer_index: int) -> LayerEntry | None:
    name = member.name
    stripped = name.strip("/")
    if stripped in ("", "."):
        return None  # root entry carries no content
    dirname, basename = posixpath.split(stripped)

    try:
        if basename == _OPAQUE_MARKER:
            if not dirname:
                raise ValidationError("opaque marker at archive root")
            return LayerEntry.opaque(normalize_path(dirname))
        if basename.startswith(_WHITEOUT_PREFIX):
            target = posixpath.join(dirname, basename[len(_WHITEOUT_PREFIX):])
            return LayerEntry.whiteout(normalize_path(target))

        path = normalize_path(stripped)
    except ValidationError as exc:
        raise ValidationError(f"layer {layer_index}: member {name!r}: {exc}") from exc

    mode = member.mode & 0xFFFF
    if member.isreg():
        fh = tf.extractfile(member)
        content = fh.read() if fh is not None else b""
        return LayerEntry.file(path, content, mode)
    if member.isdir():
        return LayerEntry.directory(path, mode)
    if member.issym():
        return LayerEntry.symlink(path, member.linkname, mode)
    raise ValidationError(
        f"layer {layer_index}: member {name!r}: unsupported entry type "
        f"{member.type!r} (hardlinks/devices are not supported)")
