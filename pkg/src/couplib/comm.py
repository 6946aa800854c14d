"""Peer-to-peer transport of storages and control messages.

Two observationally equivalent channels are provided: a TCP socket pair
and an in-process queue pair.  Both move the same length-prefixed frames;
the in-process channel encodes and decodes the identical bytes so that the
wire format is exercised either way.

Wire format (all integers little-endian, floats IEEE-754 binary64):

  frame          = u8 tag, u32 payload_length, payload
  HELLO payload  = u32 protocol_version, u32 name_length, name (UTF-8)
  STORAGE and INITIAL_DATA payload
                 = u32 data_id, u32 stample_count,
                   stample_count * (f64 time, u32 value_count, f64 * values)
  MESH payload   = u32 name_length, name, u32 dimensions, u32 vertex_count,
                   vertex_count * dimensions * f64
  CONVERGENCE    = one byte, 1 for window accepted, 0 for repeat
  BYE            = empty
"""

from __future__ import annotations

import queue
import socket
import struct
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import HandshakeError, TransportError
from .mapping import Mesh
from .storage import Sample, Storage

PROTOCOL_VERSION = 1

CONNECT_RETRY_DELAY = 0.1
CONNECT_ATTEMPTS = 50


class Tag(IntEnum):
    HELLO = 1
    INITIAL_DATA = 2
    STORAGE = 3
    CONVERGENCE = 4
    BYE = 5
    MESH = 6


@dataclass(frozen=True)
class Message:
    tag: Tag
    payload: bytes


# -- payload codecs ----------------------------------------------------------


def encode_hello(name: str, version: int = PROTOCOL_VERSION) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<II", version, len(raw)) + raw


def decode_hello(payload: bytes) -> tuple[int, str]:
    version, length = struct.unpack_from("<II", payload, 0)
    name = payload[8 : 8 + length].decode("utf-8")
    return version, name


def serialize_storage(data_id: int, storage: Storage) -> bytes:
    """Serialize all stamples, including the window-start one."""
    stamples = storage.stamples()
    parts = [struct.pack("<II", data_id, len(stamples))]
    for st in stamples:
        values = st.sample.values
        parts.append(struct.pack("<dI", st.time, values.size))
        parts.append(values.astype("<f8").tobytes())
    return b"".join(parts)


def deserialize_storage(payload: bytes) -> tuple[int, list[tuple[float, np.ndarray]]]:
    data_id, count = struct.unpack_from("<II", payload, 0)
    offset = 8
    records = []
    for _ in range(count):
        t, n = struct.unpack_from("<dI", payload, offset)
        offset += 12
        values = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        records.append((t, values))
    return data_id, records


def serialize_sample(data_id: int, t: float, sample: Sample) -> bytes:
    values = sample.values
    return (
        struct.pack("<II", data_id, 1)
        + struct.pack("<dI", t, values.size)
        + values.astype("<f8").tobytes()
    )


def serialize_mesh(mesh: Mesh) -> bytes:
    raw = mesh.name.encode("utf-8")
    return (
        struct.pack("<I", len(raw))
        + raw
        + struct.pack("<II", mesh.dimensions, mesh.vertex_count)
        + mesh.vertices.astype("<f8").tobytes()
    )


def deserialize_mesh(payload: bytes) -> Mesh:
    (name_len,) = struct.unpack_from("<I", payload, 0)
    name = payload[4 : 4 + name_len].decode("utf-8")
    offset = 4 + name_len
    dims, count = struct.unpack_from("<II", payload, offset)
    offset += 8
    verts = np.frombuffer(payload, dtype="<f8", count=dims * count, offset=offset)
    return Mesh(name, dims, verts.reshape(count, dims).copy())


def encode_frame(msg: Message) -> bytes:
    return struct.pack("<BI", int(msg.tag), len(msg.payload)) + msg.payload


# -- channels ----------------------------------------------------------------


class Channel:
    """Reliable, ordered, blocking message channel to the peer."""

    def send(self, msg: Message) -> None:
        raise NotImplementedError

    def receive(self) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def expect(self, tag: Tag) -> Message:
        msg = self.receive()
        if msg.tag != tag:
            raise TransportError(f"expected {tag.name} message, got {msg.tag.name}")
        return msg

    def handshake(self, my_name: str) -> str:
        """Exchange HELLO frames; returns the peer's name."""
        self.send(Message(Tag.HELLO, encode_hello(my_name)))
        msg = self.receive()
        if msg.tag != Tag.HELLO:
            raise HandshakeError(f"expected HELLO, got {msg.tag.name}")
        version, peer = decode_hello(msg.payload)
        if version != PROTOCOL_VERSION:
            raise HandshakeError(
                f"protocol version mismatch: ours {PROTOCOL_VERSION}, "
                f"peer '{peer}' speaks {version}"
            )
        return peer


class InProcessChannel(Channel):
    """Queue-backed channel; frames are encoded/decoded exactly as on TCP."""

    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @staticmethod
    def pair() -> tuple["InProcessChannel", "InProcessChannel"]:
        a_to_b: queue.Queue[bytes] = queue.Queue()
        b_to_a: queue.Queue[bytes] = queue.Queue()
        return InProcessChannel(b_to_a, a_to_b), InProcessChannel(a_to_b, b_to_a)

    def send(self, msg: Message) -> None:
        if self._closed:
            raise TransportError("channel is closed")
        self._outbox.put(encode_frame(msg))

    def receive(self) -> Message:
        if self._closed:
            raise TransportError("channel is closed")
        frame = self._inbox.get()
        if frame == b"":
            raise TransportError("peer disconnected")
        tag, length = struct.unpack_from("<BI", frame, 0)
        return Message(Tag(tag), frame[5 : 5 + length])

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(b"")


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @staticmethod
    def accept(address: str) -> "TcpChannel":
        host, port = _split_address(address)
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server.bind((host, port))
            server.listen(1)
            conn, _ = server.accept()
        finally:
            server.close()
        return TcpChannel(conn)

    @staticmethod
    def connect(address: str) -> "TcpChannel":
        host, port = _split_address(address)
        last_error: Exception | None = None
        for _ in range(CONNECT_ATTEMPTS):
            try:
                return TcpChannel(socket.create_connection((host, port)))
            except OSError as exc:  # peer may not be listening yet
                last_error = exc
                time.sleep(CONNECT_RETRY_DELAY)
        raise TransportError(f"could not connect to {address}: {last_error}")

    def send(self, msg: Message) -> None:
        try:
            self._sock.sendall(encode_frame(msg))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self._sock.recv(remaining)
            if not chunk:
                raise TransportError("peer disconnected")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def receive(self) -> Message:
        try:
            header = self._recv_exact(5)
            tag, length = struct.unpack("<BI", header)
            payload = self._recv_exact(length) if length else b""
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        return Message(Tag(tag), payload)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def _split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise TransportError(f"bad address '{address}', expected HOST:PORT")
    return host, int(port)


def open_channel(mode: str, role_is_acceptor: bool, address: str,
                 injected: Channel | None = None) -> Channel:
    """Create the participant's channel per the m2n configuration."""
    if mode == "inprocess":
        if injected is None:
            raise TransportError(
                "in-process mode needs a pre-built channel pair "
                "(see InProcessChannel.pair)"
            )
        return injected
    if mode == "tcp":
        if injected is not None:
            return injected
        if role_is_acceptor:
            return TcpChannel.accept(address)
        return TcpChannel.connect(address)
    raise TransportError(f"unknown m2n mode '{mode}'")
