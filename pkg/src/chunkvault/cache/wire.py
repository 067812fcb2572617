"""Optional socket transport for cache nodes.

Deliberately minimal length-prefixed binary framing:

    request:  u32-LE frame length | op u8 (0=GET, 1=PUT) | name 32 bytes |
              stripe_index u8 | stripe bytes (PUT only)
    response: status u8 (0=OK, 1=NOT_FOUND, 2=ERROR) | u32-LE length | bytes

The in-process transport is the default everywhere; this exists for
running a cache node as a real server.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading

from chunkvault.cache.node import CacheNode
from chunkvault.errors import ValidationError

OP_GET = 0
OP_PUT = 1
STATUS_OK = 0
STATUS_NOT_FOUND = 1
STATUS_ERROR = 2

_NAME_LEN = 32
_MAX_FRAME = 16 * 1024 * 1024


def pack_request(op: int, name: bytes, stripe_index: int,
                 data: bytes = b"") -> bytes:
    if len(name) != _NAME_LEN:
        raise ValidationError("chunk name must be 32 bytes")
    if not 0 <= stripe_index <= 0xFF:
        raise ValidationError("stripe index must fit a u8")
    payload = bytes([op]) + name + bytes([stripe_index]) + data
    return struct.pack("<I", len(payload)) + payload


def unpack_request(payload: bytes) -> tuple[int, bytes, int, bytes]:
    if len(payload) < 1 + _NAME_LEN + 1:
        raise ValidationError("request frame too short")
    op = payload[0]
    if op not in (OP_GET, OP_PUT):
        raise ValidationError(f"unknown op {op}")
    name = payload[1:1 + _NAME_LEN]
    stripe_index = payload[1 + _NAME_LEN]
    data = payload[2 + _NAME_LEN:]
    if op == OP_GET and data:
        raise ValidationError("GET carries no body")
    return op, name, stripe_index, data


def pack_response(status: int, data: bytes = b"") -> bytes:
    return bytes([status]) + struct.pack("<I", len(data)) + data


def unpack_response(raw: bytes) -> tuple[int, bytes]:
    if len(raw) < 5:
        raise ValidationError("response too short")
    status = raw[0]
    (length,) = struct.unpack("<I", raw[1:5])
    data = raw[5:]
    if len(data) != length:
        raise ValidationError("response length mismatch")
    return status, data


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        piece = sock.recv(n - len(buf))
        if not piece:
            raise ConnectionError("peer closed mid-frame")
        buf += piece
    return bytes(buf)


class _StripeHandler(socketserver.BaseRequestHandler):
    def handle(self):
        node: CacheNode = self.server.node  # type: ignore[attr-defined]
        sock = self.request
        while True:
            try:
                (frame_len,) = struct.unpack("<I", _recv_exact(sock, 4))
            except ConnectionError:
                return
            if frame_len > _MAX_FRAME:
                sock.sendall(pack_response(STATUS_ERROR))
                return
            try:
                op, name, idx, data = unpack_request(_recv_exact(sock, frame_len))
            except ValidationError:
                sock.sendall(pack_response(STATUS_ERROR))
                return
            if op == OP_GET:
                stripe = node.get_stripe(name.hex(), idx)
                if stripe is None:
                    sock.sendall(pack_response(STATUS_NOT_FOUND))
                else:
                    sock.sendall(pack_response(STATUS_OK, stripe))
            else:
                node.put_stripe(name.hex(), idx, data)
                sock.sendall(pack_response(STATUS_OK))


class StripeCacheServer(socketserver.ThreadingTCPServer):
    """Serve one CacheNode over the wire protocol."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], node: CacheNode):
        super().__init__(address, _StripeHandler)
        self.node = node

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class RemoteNode:
    """Client-side view of a served cache node."""

    def __init__(self, address: tuple[str, int], timeout: float = 5.0):
        self._sock = socket.create_connection(address, timeout=timeout)

    def close(self) -> None:
        self._sock.close()

    def _roundtrip(self, frame: bytes) -> tuple[int, bytes]:
        self._sock.sendall(frame)
        status_and_len = _recv_exact(self._sock, 5)
        (length,) = struct.unpack("<I", status_and_len[1:5])
        body = _recv_exact(self._sock, length) if length else b""
        return unpack_response(status_and_len + body)

    def get_stripe(self, chunk_name: str, stripe_index: int) -> bytes | None:
        status, data = self._roundtrip(
            pack_request(OP_GET, bytes.fromhex(chunk_name), stripe_index))
        if status == STATUS_OK:
            return data
        if status == STATUS_NOT_FOUND:
            return None
        raise ValidationError("server reported protocol error")

    def put_stripe(self, chunk_name: str, stripe_index: int, data: bytes) -> None:
        status, _ = self._roundtrip(
            pack_request(OP_PUT, bytes.fromhex(chunk_name), stripe_index, data))
        if status != STATUS_OK:
            raise ValidationError("server rejected PUT")
