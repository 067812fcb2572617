"""Copy-on-write block-device view over a manifest-backed base image.

Reads route per page: a dirty bitmap selects between the private overlay
and the shared base image, whose chunks arrive through the tiered fetch
path (zero-elided chunks produce zeros without any fetch). Writes that
cover whole pages land directly in the overlay; partial writes to a clean
page first materialize the page from the base (the read-modify-write the
page-granular bitmap forces), then apply.

The base stays immutable through the view: overlay pages are private
copies, so any number of views can share the same caches, and the
overlay dies with the view.
"""

from __future__ import annotations

from chunkvault.cache.fetch import TieredFetcher
from chunkvault.errors import ValidationError
from chunkvault.manifest import OpenManifest

PAGE_SIZE = 4096


class Bitmap:
    """One bit per page."""

    def __init__(self, bits: int):
        self.bits = bits
        self._words = bytearray((bits + 7) // 8)

    def get(self, i: int) -> bool:
        return bool(self._words[i >> 3] & (1 << (i & 7)))

    def set(self, i: int) -> None:
        self._words[i >> 3] |= 1 << (i & 7)

    def count(self) -> int:
        return sum(bin(w).count("1") for w in self._words)


class OverlayState:
    """Dirty bitmap plus the private overlay pages it indexes.

    Invariant: bit set exactly when an overlay page exists, and overlay
    pages are exactly page_size bytes.
    """

    def __init__(self, image_length: int, page_size: int = PAGE_SIZE):
        self.page_size = page_size
        self.page_count = (image_length + page_size - 1) // page_size
        self.dirty = Bitmap(self.page_count)
        self.pages: dict[int, bytearray] = {}

    def page(self, index: int) -> bytearray | None:
        return self.pages.get(index)

    def install(self, index: int, data: bytearray) -> None:
        if len(data) != self.page_size:
            raise ValidationError("overlay pages must be exactly one page")
        self.pages[index] = data
        self.dirty.set(index)


class DeviceView:
    """One guest's block device: immutable base + private overlay."""

    def __init__(self, manifest: OpenManifest, fetcher: TieredFetcher,
                 page_size: int = PAGE_SIZE):
        if manifest.chunk_size % page_size != 0:
            raise ValidationError("chunk size must be a multiple of page size")
        self.manifest = manifest
        self.fetcher = fetcher
        self.page_size = page_size
        self.pages_per_chunk = manifest.chunk_size // page_size
        self.image_length = manifest.image_length
        self.overlay = OverlayState(self.image_length, page_size)
        self.chunks_requested: set[int] = set()

    # -- helpers -----------------------------------------------------------
    def _check_range(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.image_length:
            raise ValidationError(
                f"range [{offset}, {offset + length}) outside device of "
                f"{self.image_length} bytes")

    def _base_page(self, page_index: int) -> bytes:
        chunk_index = page_index // self.pages_per_chunk
        record = self.manifest.records[chunk_index]
        if record.is_zero:
            return b"\x00" * self.page_size
        self.chunks_requested.add(chunk_index)
        chunk = self.fetcher.fetch(record, self.manifest.keys[chunk_index])
        start = (page_index % self.pages_per_chunk) * self.page_size
        return chunk.plaintext[start:start + self.page_size]

    def _page_view(self, page_index: int) -> bytes | bytearray:
        if self.overlay.dirty.get(page_index):
            return self.overlay.pages[page_index]
        return self._base_page(page_index)

    # -- operations ---------------------------------------------------------
    def read(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        if length == 0:
            return b""
        out = bytearray()
        pos = offset
        end = offset + length
        while pos < end:
            page_index = pos // self.page_size
            page_start = page_index * self.page_size
            lo = pos - page_start
            hi = min(end - page_start, self.page_size)
            out += self._page_view(page_index)[lo:hi]
            pos = page_start + hi
        return bytes(out)

    def write(self, offset: int, data: bytes) -> None:
        self._check_range(offset, len(data))
        pos = offset
        end = offset + len(data)
        while pos < end:
            page_index = pos // self.page_size
            page_start = page_index * self.page_size
            lo = pos - page_start
            hi = min(end - page_start, self.page_size)
            piece = data[pos - offset:pos - offset + (hi - lo)]
            if lo == 0 and hi == self.page_size:
                # full page: no read needed
                self.overlay.install(page_index, bytearray(piece))
            elif self.overlay.dirty.get(page_index):
                self.overlay.pages[page_index][lo:hi] = piece
            else:
                # partial write to a clean page: read-modify-write
                page = bytearray(self._base_page(page_index))
                page[lo:hi] = piece
                self.overlay.install(page_index, page)
            pos = page_start + hi
        return None

    @property
    def dirty_pages(self) -> int:
        return self.overlay.dirty.count()
