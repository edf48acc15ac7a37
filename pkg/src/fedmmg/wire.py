"""Length-prefixed binary frames for the server/participant exchange.

Frame layout (all integers little-endian)::

    u32 body_length | u8 version | u8 type | payload

Payloads:

    HELLO   u32 agent_id, 16s spec_hash
    GLOBAL  u32 round, u32 local_epochs, 16s spec_hash, u64 n, n * f64
    PARAMS  u32 round, u32 agent_id, u64 n_transitions, f64 round_eval_mean,
            16s spec_hash, u64 n, n * f64
    DONE    16s spec_hash, u64 n, n * f64        (final global parameters)
    REJECT  utf-8 reason
    ERROR   u32 agent_id, utf-8 reason           (participant failed mid-round)
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .mlp import ParamVector

VERSION = 1
HELLO, GLOBAL, PARAMS, DONE, REJECT, ERROR = 1, 2, 3, 4, 5, 6
_HEAD = struct.Struct("<IBB")
MAX_FRAME = 1 << 30


class ProtocolError(RuntimeError):
    pass


class SpecMismatch(ProtocolError):
    """The server refused a participant whose topology hash differs."""


class ParticipantFailed(ProtocolError):
    def __init__(self, agent_id: int, reason: str):
        super().__init__(f"participant {agent_id} failed: {reason}")
        self.agent_id = agent_id
        self.reason = reason


def _hash_bytes(h: str) -> bytes:
    return h.encode("ascii").ljust(16, b"\0")[:16]


def _pack_vec(vec: ParamVector) -> bytes:
    return _hash_bytes(vec.spec_hash) + struct.pack("<Q", len(vec)) + vec.values.astype("<f8").tobytes()


def _unpack_vec(buf: bytes, k: int) -> tuple[ParamVector, int]:
    spec_hash = buf[k : k + 16].rstrip(b"\0").decode("ascii")
    (n,) = struct.unpack_from("<Q", buf, k + 16)
    k += 24
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=k)
    return ParamVector(vals, spec_hash), k + 8 * n


@dataclass(frozen=True)
class Message:
    kind: int
    round: int = 0
    agent_id: int = 0
    local_epochs: int = 0
    n_transitions: int = 0
    eval_mean: float = float("nan")
    spec_hash: str = ""
    params: ParamVector | None = None
    reason: str = ""


def encode(msg: Message) -> bytes:
    k = msg.kind
    if k == HELLO:
        body = struct.pack("<I", msg.agent_id) + _hash_bytes(msg.spec_hash)
    elif k == GLOBAL:
        body = struct.pack("<II", msg.round, msg.local_epochs) + _pack_vec(msg.params)
    elif k == PARAMS:
        body = struct.pack("<IIQd", msg.round, msg.agent_id, msg.n_transitions, msg.eval_mean) + _pack_vec(msg.params)
    elif k == DONE:
        body = _pack_vec(msg.params)
    elif k == REJECT:
        body = msg.reason.encode()
    elif k == ERROR:
        body = struct.pack("<I", msg.agent_id) + msg.reason.encode()
    else:
        raise ProtocolError(f"unknown message type {k}")
    return _HEAD.pack(len(body) + 2, VERSION, k) + body


def decode(kind: int, body: bytes) -> Message:
    if kind == HELLO:
        (aid,) = struct.unpack_from("<I", body)
        return Message(HELLO, agent_id=aid, spec_hash=body[4:20].rstrip(b"\0").decode("ascii"))
    if kind == GLOBAL:
        r, n_ep = struct.unpack_from("<II", body)
        vec, _ = _unpack_vec(body, 8)
        return Message(GLOBAL, round=r, local_epochs=n_ep, params=vec, spec_hash=vec.spec_hash)
    if kind == PARAMS:
        r, aid, n_tr, ev = struct.unpack_from("<IIQd", body)
        vec, _ = _unpack_vec(body, 24)
        return Message(PARAMS, round=r, agent_id=aid, n_transitions=n_tr, eval_mean=ev, params=vec,
                       spec_hash=vec.spec_hash)
    if kind == DONE:
        vec, _ = _unpack_vec(body, 0)
        return Message(DONE, params=vec, spec_hash=vec.spec_hash)
    if kind == REJECT:
        return Message(REJECT, reason=body.decode())
    if kind == ERROR:
        (aid,) = struct.unpack_from("<I", body)
        return Message(ERROR, agent_id=aid, reason=body[4:].decode())
    raise ProtocolError(f"unknown message type {kind}")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def send(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode(msg))


def recv(sock: socket.socket) -> Message:
    length, version, kind = _HEAD.unpack(_recv_exact(sock, _HEAD.size))
    if version != VERSION:
        raise ProtocolError(f"protocol version {version}, expected {VERSION}")
    if not 2 <= length <= MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    return decode(kind, _recv_exact(sock, length - 2))


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)
