import socket
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedmmg import wire
from fedmmg.mlp import ParamVector
from fedmmg.wire import Message

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


def roundtrip(msg):
    frame = wire.encode(msg)
    length, version, kind = struct.unpack_from("<IBB", frame)
    assert version == wire.VERSION and length == len(frame) - 4
    return wire.decode(kind, frame[6:])


@given(st.lists(floats, max_size=50), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_params_roundtrip_is_bitwise(vals, r, aid):
    vec = ParamVector(np.array(vals, dtype=float), "0123456789abcdef")
    msg = Message(wire.PARAMS, round=r, agent_id=aid, n_transitions=24 * 8, eval_mean=-1.5, params=vec)
    back = roundtrip(msg)
    assert back.params.values.tobytes() == vec.values.tobytes()
    assert (back.round, back.agent_id, back.n_transitions, back.eval_mean) == (r, aid, 192, -1.5)
    assert back.spec_hash == vec.spec_hash


def test_other_messages_roundtrip():
    vec = ParamVector(np.arange(3.0), "abcd" * 4)
    g = roundtrip(Message(wire.GLOBAL, round=2, local_epochs=500, params=vec))
    assert (g.round, g.local_epochs) == (2, 500) and np.array_equal(g.params.values, vec.values)
    h = roundtrip(Message(wire.HELLO, agent_id=7, spec_hash="abcd" * 4))
    assert (h.agent_id, h.spec_hash) == (7, "abcd" * 4)
    assert np.array_equal(roundtrip(Message(wire.DONE, params=vec)).params.values, vec.values)
    assert roundtrip(Message(wire.REJECT, reason="hash mismatch")).reason == "hash mismatch"
    e = roundtrip(Message(wire.ERROR, agent_id=2, reason="nan"))
    assert (e.agent_id, e.reason) == (2, "nan")


def test_frame_layout_is_little_endian():
    frame = wire.encode(Message(wire.HELLO, agent_id=1, spec_hash="x" * 16))
    assert frame[:6] == struct.pack("<I", 22) + bytes([1, wire.HELLO])
    assert frame[6:10] == b"\x01\0\0\0"


def test_recv_checks_version_and_type():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack("<IBB", 2, 9, wire.DONE))
        with pytest.raises(wire.ProtocolError, match="version"):
            wire.recv(b)
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack("<IBB", 2, wire.VERSION, 99))
        with pytest.raises(wire.ProtocolError, match="unknown"):
            wire.recv(b)
    a, b = socket.socketpair()
    with b:
        a.sendall(struct.pack("<IBB", 100, wire.VERSION, wire.REJECT) + b"short")
        a.close()
        with pytest.raises(wire.ProtocolError, match="closed"):
            wire.recv(b)


def test_send_recv_over_socket():
    a, b = socket.socketpair()
    with a, b:
        vec = ParamVector(np.random.default_rng(0).standard_normal(1000), "h" * 16)
        wire.send(a, Message(wire.GLOBAL, round=1, local_epochs=3, params=vec))
        assert wire.recv(b).params.values.tobytes() == vec.values.tobytes()


def test_parse_address():
    assert wire.parse_address("127.0.0.1:5000") == ("127.0.0.1", 5000)
    for bad in ("5000", "host:", "host:port"):
        with pytest.raises(ValueError):
            wire.parse_address(bad)
