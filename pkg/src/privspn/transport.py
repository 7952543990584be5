"""Manager/member messaging: wire frames, traffic metering and two transports.

Wire frame: a 4-byte big-endian unsigned length followed by that many bytes
of UTF-8 JSON::

    {"exercise_id": int, "step": str, "sender": int, "recipient": int,
     "payload": [str, ...], "meta": {...}}

``payload`` carries field elements as decimal strings; ``meta`` carries
public metadata only (exercise kind, value ids, public constants).

Both transports meter the exact frame length, identically at sender and
receiver. Latency is charged once per message at the sender.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import time
from collections import Counter, defaultdict, deque
from dataclasses import asdict, dataclass, field

from .errors import ProtocolAbort, SetupError

MANAGER_ID = 0
_LEN = struct.Struct(">I")


@dataclass
class ExerciseMessage:
    exercise_id: int
    step: str
    sender: int
    recipient: int
    payload: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def encode_frame(msg: ExerciseMessage) -> bytes:
    body = json.dumps(asdict(msg), separators=(",", ":"), sort_keys=True).encode()
    return _LEN.pack(len(body)) + body


def decode_frame(frame: bytes) -> ExerciseMessage:
    (length,) = _LEN.unpack_from(frame)
    body = frame[_LEN.size:]
    if len(body) != length:
        raise ValueError(f"frame length {length} does not match body of {len(body)} bytes")
    return ExerciseMessage(**json.loads(body))


@dataclass
class NodeIdentity:
    node_id: int
    host: str = "127.0.0.1"
    port: int = 0

    @property
    def is_manager(self) -> bool:
        return self.node_id == MANAGER_ID


class TrafficMeter:
    """Per-node byte and message counters; safe to update from several threads."""

    def __init__(self, node_ids=()):
        self._lock = threading.Lock()
        self.bytes_in = Counter({n: 0 for n in node_ids})
        self.bytes_out = Counter({n: 0 for n in node_ids})
        self.messages_in = Counter({n: 0 for n in node_ids})
        self.messages_out = Counter({n: 0 for n in node_ids})

    def record_out(self, node: int, nbytes: int):
        with self._lock:
            self.bytes_out[node] += nbytes
            self.messages_out[node] += 1

    def record_in(self, node: int, nbytes: int):
        with self._lock:
            self.bytes_in[node] += nbytes
            self.messages_in[node] += 1

    def total(self, node: int) -> int:
        return self.bytes_in[node] + self.bytes_out[node]

    def snapshot(self) -> dict[int, dict[str, int]]:
        with self._lock:
            nodes = sorted(set(self.bytes_in) | set(self.bytes_out))
            return {
                n: {
                    "bytes_in": self.bytes_in[n],
                    "bytes_out": self.bytes_out[n],
                    "messages_in": self.messages_in[n],
                    "messages_out": self.messages_out[n],
                }
                for n in nodes
            }

    def merge(self, node: int, counts: dict[str, int]):
        with self._lock:
            self.bytes_in[node] = counts["bytes_in"]
            self.bytes_out[node] = counts["bytes_out"]
            self.messages_in[node] = counts["messages_in"]
            self.messages_out[node] = counts["messages_out"]


def channel_count(n_members: int) -> int:
    """Full mesh among members plus one link from the manager to each member."""
    return n_members * (n_members - 1) // 2 + n_members


class SimulatedNetwork:
    """In-process channels with a virtual clock.

    Messages are serialized to frames on ``send`` and parsed again on
    ``recv`` so metering and wire format are identical to TCP. Delivery is
    FIFO per (sender, recipient). The virtual clock advances per tick by
    ``latency * max(messages sent by one node in the tick)``.
    """

    def __init__(self, node_ids, latency_ms: float = 0.0, record: bool = False):
        self.node_ids = list(node_ids)
        self.latency = latency_ms / 1000.0
        self.meter = TrafficMeter(self.node_ids)
        self.clock = 0.0
        self.record = record
        self.transcripts: dict[int, list[ExerciseMessage]] = defaultdict(list)
        self._queues: dict[tuple[int, int], deque[bytes]] = defaultdict(deque)
        self._tick = Counter()

    def send(self, msg: ExerciseMessage):
        frame = encode_frame(msg)
        self.meter.record_out(msg.sender, len(frame))
        self._queues[(msg.sender, msg.recipient)].append(frame)
        self._tick[msg.sender] += 1

    def end_tick(self) -> float:
        elapsed = self.latency * max(self._tick.values(), default=0)
        self.clock += elapsed
        self._tick.clear()
        return elapsed

    def recv(self, sender: int, recipient: int, exercise_id: int, step: str) -> ExerciseMessage:
        queue = self._queues[(sender, recipient)]
        if not queue:
            raise ProtocolAbort(f"node {recipient} expected {step!r} from {sender}; nothing queued")
        frame = queue.popleft()
        self.meter.record_in(recipient, len(frame))
        msg = decode_frame(frame)
        if (msg.exercise_id, msg.step) != (exercise_id, step):
            raise ProtocolAbort(
                f"node {recipient} expected ({exercise_id}, {step!r}) from {sender}, "
                f"got ({msg.exercise_id}, {msg.step!r})"
            )
        if self.record:
            self.transcripts[recipient].append(msg)
        return msg

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())


class TcpNode:
    """One endpoint of the full TCP mesh.

    Lower ids accept, higher ids dial; the first frame on every connection is
    a ``hello`` naming the dialer. A reader thread per connection files
    incoming frames by (sender, exercise_id, step).
    """

    def __init__(self, node_id: int, identities: list[NodeIdentity], latency_ms: float = 0.0,
                 record: bool = False):
        self.node_id = node_id
        self.identities = {i.node_id: i for i in identities}
        self.latency = latency_ms / 1000.0
        self.meter = TrafficMeter([node_id])
        self.record = record
        self.transcript: list[ExerciseMessage] = []
        self._socks: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._cv = threading.Condition()
        self._inbox: dict[tuple, deque[ExerciseMessage]] = defaultdict(deque)
        self._descriptors: deque[ExerciseMessage] = deque()
        self._listener: socket.socket | None = None
        self._closed = False
        self._dead: set[int] = set()

    @property
    def peers(self) -> list[int]:
        return sorted(n for n in self.identities if n != self.node_id)

    def listen(self) -> int:
        me = self.identities[self.node_id]
        self._listener = socket.create_server((me.host, me.port))
        me.port = self._listener.getsockname()[1]
        threading.Thread(target=self._accept_loop, daemon=True).start()
        return me.port

    def connect(self, timeout: float = 10.0):
        if self._listener is None:
            self.listen()
        deadline = time.monotonic() + timeout
        for peer in self.peers:
            if peer > self.node_id:
                continue
            ident = self.identities[peer]
            while True:
                try:
                    sock = socket.create_connection((ident.host, ident.port), timeout=1.0)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise SetupError(f"node {peer} at {ident.host}:{ident.port} unreachable")
                    time.sleep(0.05)
            sock.settimeout(None)
            sock.sendall(encode_frame(ExerciseMessage(-1, "hello", self.node_id, peer)))
            self._register(peer, sock)
        with self._cv:
            while len(self._socks) < len(self.peers):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = sorted(set(self.peers) - set(self._socks))
                    raise SetupError(f"nodes {missing} never connected to node {self.node_id}")
                self._cv.wait(remaining)

    def _accept_loop(self):
        while not self._closed:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            hello = _read_frame(sock)
            if hello is None:
                sock.close()
                continue
            self._register(decode_frame(hello).sender, sock)

    def _register(self, peer: int, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._cv:
            self._socks[peer] = sock
            self._send_locks[peer] = threading.Lock()
            self._cv.notify_all()
        threading.Thread(target=self._read_loop, args=(peer, sock), daemon=True).start()

    def _read_loop(self, peer: int, sock: socket.socket):
        while True:
            frame = _read_frame(sock)
            if frame is None:
                with self._cv:
                    self._dead.add(peer)
                    self._cv.notify_all()
                return
            self.meter.record_in(self.node_id, len(frame))
            msg = decode_frame(frame)
            with self._cv:
                if self.record:
                    self.transcript.append(msg)
                if msg.step == "descriptor":
                    self._descriptors.append(msg)
                else:
                    self._inbox[(msg.sender, msg.exercise_id, msg.step)].append(msg)
                self._cv.notify_all()

    def send(self, msg: ExerciseMessage):
        if self.latency:
            time.sleep(self.latency)
        frame = encode_frame(msg)
        with self._send_locks[msg.recipient]:
            self._socks[msg.recipient].sendall(frame)
        self.meter.record_out(self.node_id, len(frame))

    def recv(self, sender: int, exercise_id: int, step: str, timeout: float | None = 60.0):
        key = (sender, exercise_id, step)
        with self._cv:
            ok = self._cv.wait_for(lambda: self._inbox[key] or sender in self._dead, timeout)
            if not ok or not self._inbox[key]:
                raise ProtocolAbort(f"node {self.node_id}: no {step!r} from {sender} "
                                    f"in exercise {exercise_id}")
            return self._inbox[key].popleft()

    def next_descriptor(self, timeout: float | None = None) -> ExerciseMessage:
        with self._cv:
            ok = self._cv.wait_for(lambda: self._descriptors or MANAGER_ID in self._dead, timeout)
            if not ok or not self._descriptors:
                raise ProtocolAbort(f"node {self.node_id}: manager went away")
            return self._descriptors.popleft()

    def close(self):
        self._closed = True
        for sock in list(self._socks.values()):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        if self._listener is not None:
            self._listener.close()


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def _read_frame(sock: socket.socket) -> bytes | None:
    head = _read_exact(sock, _LEN.size)
    if head is None:
        return None
    body = _read_exact(sock, _LEN.unpack(head)[0])
    return None if body is None else head + body
