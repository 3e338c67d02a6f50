"""Binary message framing shared by both transports.

Frame layout, all little-endian:

====================  ======================================================
u32                   length of everything after this field
u8                    message tag
u32                   round counter
u32                   client id (0 where not applicable; clients are 1-based)
u32, u32              payload row and column counts
rows*cols f64         payload, row-major
u64                   dataset size (LocalUpdate frames only, after payload)
====================  ======================================================

Vectors travel as single-column matrices; tags whose payload is semantically
a vector are decoded back to 1-D. Tag values: 1 BroadcastPlain,
2 BroadcastEncoded, 3 BroadcastDoublyEncoded, 4 LocalUpdate,
5 AggregateToServer, 6 Done.
"""

import queue
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

TAG_BROADCAST_PLAIN = 1
TAG_BROADCAST_ENCODED = 2
TAG_BROADCAST_DOUBLY_ENCODED = 3
TAG_LOCAL_UPDATE = 4
TAG_AGGREGATE_TO_SERVER = 5
TAG_DONE = 6

_HEAD = struct.Struct("<BII")
_DIMS = struct.Struct("<II")
_SIZE = struct.Struct("<Q")


@dataclass(frozen=True)
class BroadcastPlain:
    round: int
    w: np.ndarray


@dataclass(frozen=True)
class BroadcastEncoded:
    round: int
    w_tilde: np.ndarray


@dataclass(frozen=True)
class BroadcastDoublyEncoded:
    round: int
    w_prime: np.ndarray


@dataclass(frozen=True)
class LocalUpdate:
    round: int
    client_id: int
    payload: np.ndarray
    dataset_size: int


@dataclass(frozen=True)
class AggregateToServer:
    round: int
    payload: np.ndarray   # vector, or matrix in the doubly-encoded mode


@dataclass(frozen=True)
class Done:
    round: int
    w_final: np.ndarray


Message = (BroadcastPlain | BroadcastEncoded | BroadcastDoublyEncoded
           | LocalUpdate | AggregateToServer | Done)

_TAG_OF = {
    BroadcastPlain: TAG_BROADCAST_PLAIN,
    BroadcastEncoded: TAG_BROADCAST_ENCODED,
    BroadcastDoublyEncoded: TAG_BROADCAST_DOUBLY_ENCODED,
    LocalUpdate: TAG_LOCAL_UPDATE,
    AggregateToServer: TAG_AGGREGATE_TO_SERVER,
    Done: TAG_DONE,
}


def _payload_of(msg) -> np.ndarray:
    if isinstance(msg, BroadcastPlain):
        return msg.w
    if isinstance(msg, BroadcastEncoded):
        return msg.w_tilde
    if isinstance(msg, BroadcastDoublyEncoded):
        return msg.w_prime
    if isinstance(msg, Done):
        return msg.w_final
    return msg.payload


def encode_message(msg: Message) -> bytes:
    tag = _TAG_OF.get(type(msg))
    if tag is None:
        raise ShapeMismatch(f"not a wire message: {type(msg).__name__}")
    payload = np.asarray(_payload_of(msg), dtype=np.float64)
    if payload.ndim == 1:
        rows, cols = payload.shape[0], 1
    elif payload.ndim == 2:
        rows, cols = payload.shape
    else:
        raise ShapeMismatch(f"payload must be 1-D or 2-D, got shape {payload.shape}")
    client_id = msg.client_id if isinstance(msg, LocalUpdate) else 0

    body = bytearray()
    body += _HEAD.pack(tag, msg.round, client_id)
    body += _DIMS.pack(rows, cols)
    body += np.ascontiguousarray(payload.reshape(rows, cols), dtype="<f8").tobytes()
    if isinstance(msg, LocalUpdate):
        body += _SIZE.pack(msg.dataset_size)
    return struct.pack("<I", len(body)) + bytes(body)


def decode_message(frame: bytes) -> Message:
    if len(frame) < 4:
        raise ShapeMismatch("frame shorter than its length prefix")
    (length,) = struct.unpack_from("<I", frame)
    if len(frame) != 4 + length:
        raise ShapeMismatch(f"frame length {len(frame) - 4} != declared {length}")
    tag, rnd, client_id = _HEAD.unpack_from(frame, 4)
    rows, cols = _DIMS.unpack_from(frame, 4 + _HEAD.size)
    off = 4 + _HEAD.size + _DIMS.size
    count = rows * cols
    payload = np.frombuffer(frame, dtype="<f8", count=count, offset=off)
    payload = payload.reshape(rows, cols).astype(np.float64)
    off += 8 * count

    if tag == TAG_LOCAL_UPDATE:
        (size,) = _SIZE.unpack_from(frame, off)
        off += _SIZE.size
    if off != 4 + length:
        raise ShapeMismatch("frame has trailing bytes")

    vec = payload[:, 0] if cols == 1 else payload
    if tag == TAG_BROADCAST_PLAIN:
        return BroadcastPlain(round=rnd, w=vec)
    if tag == TAG_BROADCAST_ENCODED:
        return BroadcastEncoded(round=rnd, w_tilde=vec)
    if tag == TAG_BROADCAST_DOUBLY_ENCODED:
        return BroadcastDoublyEncoded(round=rnd, w_prime=payload)
    if tag == TAG_LOCAL_UPDATE:
        return LocalUpdate(round=rnd, client_id=client_id, payload=vec,
                           dataset_size=size)
    if tag == TAG_AGGREGATE_TO_SERVER:
        return AggregateToServer(round=rnd, payload=vec)
    if tag == TAG_DONE:
        return Done(round=rnd, w_final=vec)
    raise ShapeMismatch(f"unknown message tag {tag}")


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

# Channel names the protocol uses.
CH_BROADCAST = "broadcast"   # server -> clients
CH_UPLINK = "uplink"         # clients -> aggregator
CH_AGGREGATE = "aggregate"   # aggregator -> server


class InProcessTransport:
    """Default transport: per-channel FIFO queues of encoded frames.

    Taps are callables ``(channel, frame_bytes)`` invoked on every send;
    they observe exactly the bytes a network eavesdropper would.
    """

    def __init__(self, taps=()):
        self._queues = {ch: [] for ch in (CH_BROADCAST, CH_UPLINK, CH_AGGREGATE)}
        self.taps = list(taps)

    def send(self, channel: str, msg: Message) -> None:
        frame = encode_message(msg)
        for tap in self.taps:
            tap(channel, frame)
        self._queues[channel].append(frame)

    def recv(self, channel: str) -> Message:
        if not self._queues[channel]:
            raise ShapeMismatch(f"no frame waiting on channel {channel!r}")
        return decode_message(self._queues[channel].pop(0))


def send_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(frame)


def recv_frame(sock: socket.socket) -> bytes:
    head = _recv_exact(sock, 4)
    (length,) = struct.unpack("<I", head)
    return head + _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    got = 0
    while got < count:
        chunk = sock.recv(count - got)
        if not chunk:
            raise ConnectionError("socket closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class TcpTransport:
    """Optional transport: every channel is a loopback TCP connection.

    Frames are pumped off each connection by a reader thread into a queue,
    so a single-threaded protocol driver cannot deadlock on socket buffers.
    Byte-level framing is identical to the in-process transport.
    """

    def __init__(self, taps=()):
        self.taps = list(taps)
        self._send = {}
        self._queues = {}
        self._threads = []
        self._socks = []
        for ch in (CH_BROADCAST, CH_UPLINK, CH_AGGREGATE):
            server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            server.bind(("127.0.0.1", 0))
            server.listen(1)
            sender = socket.create_connection(server.getsockname())
            receiver, _ = server.accept()
            server.close()
            self._send[ch] = sender
            self._queues[ch] = queue.Queue()
            self._socks += [sender, receiver]
            t = threading.Thread(target=self._pump, args=(ch, receiver), daemon=True)
            t.start()
            self._threads.append(t)

    def _pump(self, channel, sock):
        try:
            while True:
                self._queues[channel].put(recv_frame(sock))
        except (ConnectionError, OSError):
            pass

    def send(self, channel: str, msg: Message) -> None:
        frame = encode_message(msg)
        for tap in self.taps:
            tap(channel, frame)
        send_frame(self._send[channel], frame)

    def recv(self, channel: str, timeout: float = 30.0) -> Message:
        return decode_message(self._queues[channel].get(timeout=timeout))

    def close(self) -> None:
        for s in self._socks:
            try:
                s.close()
            except OSError:
                pass
