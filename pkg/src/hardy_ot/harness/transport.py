"""Message transports: an in-process queue pair and a length-prefixed stream.

Stream frames are a 4-byte big-endian length followed by the UTF-8 JSON body.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
from typing import Any

from ..protocol.messages import Message, SchemaError

PROTOCOL_VERSION = 1
_HEADER = struct.Struct("!I")
MAX_FRAME = 1 << 28
_CLOSED = object()


class TransportError(Exception):
    """The channel failed; distinct from a protocol abort."""


def encode_frame(obj: dict[str, Any]) -> bytes:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(body)) + body


def decode_frame(buf: bytes) -> tuple[dict[str, Any], bytes]:
    """Split one frame off the front of ``buf``; returns ``(obj, rest)``."""
    if len(buf) < _HEADER.size:
        raise ValueError("incomplete frame header")
    (n,) = _HEADER.unpack_from(buf)
    end = _HEADER.size + n
    if len(buf) < end:
        raise ValueError("incomplete frame body")
    return json.loads(buf[_HEADER.size:end].decode("utf-8")), buf[end:]


class LoopbackEndpoint:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None = None):
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout
        self.closed = False

    def send(self, msg: Message) -> None:
        if self.closed:
            raise TransportError("endpoint is closed")
        self._outbox.put(msg)

    def recv(self) -> Message:
        try:
            item = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError("receive timed out") from None
        if item is _CLOSED:
            raise TransportError("peer closed the channel")
        return item

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._outbox.put(_CLOSED)


class LoopbackTransport:
    """Pair of in-process endpoints over FIFO queues."""

    name = "loopback"

    def __init__(self, timeout: float | None = 60.0):
        self.timeout = timeout

    def pair(self) -> tuple[LoopbackEndpoint, LoopbackEndpoint]:
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        return (LoopbackEndpoint(b_to_a, a_to_b, self.timeout),
                LoopbackEndpoint(a_to_b, b_to_a, self.timeout))


class StreamEndpoint:
    """Framed JSON messages over a connected socket."""

    def __init__(self, sock: socket.socket, timeout: float | None = 60.0):
        self.sock = sock
        self.sock.settimeout(timeout)
        self._rfile = sock.makefile("rb")
        self.closed = False

    def send_obj(self, obj: dict[str, Any]) -> None:
        try:
            self.sock.sendall(encode_frame(obj))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_obj(self) -> dict[str, Any]:
        try:
            head = self._rfile.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise TransportError("peer closed the stream")
            (n,) = _HEADER.unpack(head)
            if n > MAX_FRAME:
                raise TransportError(f"frame of {n} bytes exceeds the limit")
            body = self._rfile.read(n)
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if len(body) < n:
            raise TransportError("stream ended inside a frame")
        try:
            obj = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TransportError(f"undecodable frame: {exc}") from exc
        return obj

    def send(self, msg: Message) -> None:
        self.send_obj(msg.to_dict())

    def recv(self) -> Message:
        try:
            return Message.from_dict(self.recv_obj())
        except SchemaError as exc:
            raise TransportError(f"schema violation on the wire: {exc}") from exc

    def handshake(self, role: str, config_digest: str) -> dict[str, Any]:
        """Exchange version and config digest; both must match."""
        self.send_obj({"hello": role, "version": PROTOCOL_VERSION, "config_digest": config_digest})
        peer = self.recv_obj()
        if peer.get("version") != PROTOCOL_VERSION:
            raise TransportError(f"protocol version mismatch: {peer.get('version')!r}")
        if peer.get("config_digest") != config_digest:
            raise TransportError("peer runs a different configuration")
        if peer.get("hello") == role:
            raise TransportError("both ends claim the same role")
        return peer

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self._rfile.close()
                self.sock.close()
            except OSError:
                pass


class StreamTransport:
    """In-process stream pair over ``socket.socketpair`` (same code path as TCP)."""

    name = "stream"

    def __init__(self, timeout: float | None = 60.0):
        self.timeout = timeout

    def pair(self) -> tuple[StreamEndpoint, StreamEndpoint]:
        s1, s2 = socket.socketpair()
        return StreamEndpoint(s1, self.timeout), StreamEndpoint(s2, self.timeout)


def make_transport(name: str) -> LoopbackTransport | StreamTransport:
    if name == "loopback":
        return LoopbackTransport()
    if name == "stream":
        return StreamTransport()
    raise ValueError(f"unknown transport {name!r}")


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = "127.0.0.1", text
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"bad address {text!r}") from None


def tcp_listen(host: str, port: int) -> socket.socket:
    srv = socket.create_server((host, port))
    srv.listen(1)
    return srv


def tcp_accept(srv: socket.socket, timeout: float | None = 60.0) -> StreamEndpoint:
    srv.settimeout(timeout)
    try:
        conn, _ = srv.accept()
    except OSError as exc:
        raise TransportError(f"accept failed: {exc}") from exc
    return StreamEndpoint(conn, timeout)


def tcp_connect(host: str, port: int, timeout: float | None = 60.0) -> StreamEndpoint:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"connect to {host}:{port} failed: {exc}") from exc
    return StreamEndpoint(sock, timeout)
