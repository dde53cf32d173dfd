import random
import socket
import struct
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardy_ot.harness.transport import (
    PROTOCOL_VERSION,
    LoopbackTransport,
    StreamEndpoint,
    StreamTransport,
    TransportError,
    decode_frame,
    encode_frame,
    make_transport,
    parse_address,
    tcp_accept,
    tcp_connect,
    tcp_listen,
)
from hardy_ot.protocol import Message, MsgType
from hardy_ot.protocol.messages import REQUIRED_FIELDS

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-2**53, 2**53) | st.text(max_size=20)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda kids: st.lists(kids, max_size=5) | st.dictionaries(st.text(max_size=8), kids, max_size=5),
    max_leaves=30,
)


def random_message(rng: random.Random) -> Message:
    t = rng.choice(list(MsgType))
    payload = {k: rng.choice([rng.randint(-10**9, 10**9), [rng.randint(0, 99) for _ in range(rng.randint(0, 6))],
                              rng.random(), "x" * rng.randint(0, 5), None])
               for k in REQUIRED_FIELDS[t]}
    return Message(rng.randint(0, 10**6), f"{rng.getrandbits(64):016x}", rng.choice(["alice", "bob"]), t, payload)


class TestFrames:
    def test_round_trip_10k(self):
        rng = random.Random(0)
        msgs = [random_message(rng) for _ in range(10_000)]
        buf = b"".join(encode_frame(m.to_dict()) for m in msgs)
        for m in msgs:
            obj, buf = decode_frame(buf)
            assert Message.from_dict(obj) == m
        assert buf == b""

    @settings(max_examples=300)
    @given(st.dictionaries(st.text(max_size=10), json_values, max_size=6))
    def test_round_trip_property(self, obj):
        frame = encode_frame(obj)
        assert struct.unpack("!I", frame[:4])[0] == len(frame) - 4
        back, rest = decode_frame(frame + b"tail")
        assert back == obj and rest == b"tail"

    def test_incomplete(self):
        frame = encode_frame({"a": 1})
        with pytest.raises(ValueError):
            decode_frame(frame[:3])
        with pytest.raises(ValueError):
            decode_frame(frame[:-1])

    def test_utf8(self):
        assert decode_frame(encode_frame({"s": "αβ⊥"}))[0] == {"s": "αβ⊥"}


def _jittered_exchange(transport, n=300, seed=0):
    """Both ends send ``n`` messages with random pauses; each side must see its peer's order."""
    a, b = transport.pair()
    got = {"alice": [], "bob": []}

    def side(ep, role, r):
        def send():
            for i in range(n):
                ep.send(Message(i, "s", role, MsgType.OT_INDEX, {"pair": i}))
                if r.random() < 0.2:
                    time.sleep(r.random() * 1e-3)

        t = threading.Thread(target=send)
        t.start()
        for _ in range(n):
            got[role].append(ep.recv().payload["pair"])
            if r.random() < 0.2:
                time.sleep(r.random() * 1e-3)
        t.join()

    threads = [threading.Thread(target=side, args=(a, "alice", random.Random(seed))),
               threading.Thread(target=side, args=(b, "bob", random.Random(seed + 1)))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    a.close()
    b.close()
    return got


@pytest.mark.parametrize("name", ["loopback", "stream"])
def test_fifo_under_jitter(name):
    got = _jittered_exchange(make_transport(name), seed=3)
    assert got["alice"] == list(range(300)) and got["bob"] == list(range(300))


def test_make_transport_rejects():
    with pytest.raises(ValueError):
        make_transport("carrier-pigeon")


class TestLoopbackFailures:
    def test_timeout(self):
        a, _ = LoopbackTransport(timeout=0.05).pair()
        with pytest.raises(TransportError):
            a.recv()

    def test_closed(self):
        a, b = LoopbackTransport(timeout=1).pair()
        a.close()
        with pytest.raises(TransportError):
            b.recv()
        with pytest.raises(TransportError):
            a.send(Message(0, "s", "alice", MsgType.OT_INDEX, {"pair": 0}))


class TestStream:
    def _handshake(self, da, db, role_b="bob"):
        a, b = StreamTransport(timeout=2).pair()
        out = {}

        def run_b():
            try:
                out["b"] = b.handshake(role_b, db)
            except TransportError as exc:
                out["b"] = exc

        t = threading.Thread(target=run_b)
        t.start()
        try:
            return a.handshake("alice", da), out
        finally:
            t.join()
            a.close()
            b.close()

    def test_handshake_ok(self):
        peer, out = self._handshake("d1", "d1")
        assert peer["hello"] == "bob" and peer["version"] == PROTOCOL_VERSION
        assert out["b"]["hello"] == "alice"

    def test_handshake_digest_mismatch(self):
        with pytest.raises(TransportError, match="configuration"):
            self._handshake("d1", "d2")

    def test_handshake_same_role(self):
        with pytest.raises(TransportError, match="role"):
            self._handshake("d1", "d1", role_b="alice")

    def test_truncated_and_garbage(self):
        s1, s2 = socket.socketpair()
        ep = StreamEndpoint(s2, timeout=1)
        s1.sendall(struct.pack("!I", 10) + b"abc")
        s1.close()
        with pytest.raises(TransportError):
            ep.recv_obj()
        s1, s2 = socket.socketpair()
        ep = StreamEndpoint(s2, timeout=1)
        s1.sendall(struct.pack("!I", 3) + b"\xff\xfe{")
        with pytest.raises(TransportError):
            ep.recv_obj()
        s1.sendall(encode_frame({"seq": 0}))
        with pytest.raises(TransportError, match="schema"):
            ep.recv()
        s1.close()

    def test_tcp(self):
        srv = tcp_listen("127.0.0.1", 0)
        port = srv.getsockname()[1]
        box = {}
        t = threading.Thread(target=lambda: box.setdefault("ep", tcp_accept(srv, timeout=5)))
        t.start()
        c = tcp_connect("127.0.0.1", port, timeout=5)
        t.join()
        srv.close()
        m = Message(0, "s", "alice", MsgType.OT_INDEX, {"pair": 4})
        c.send(m)
        assert box["ep"].recv() == m
        c.close()
        box["ep"].close()

    def test_connect_refused(self):
        srv = tcp_listen("127.0.0.1", 0)
        port = srv.getsockname()[1]
        srv.close()
        with pytest.raises(TransportError):
            tcp_connect("127.0.0.1", port, timeout=1)


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_address("7000") == ("127.0.0.1", 7000)
    assert parse_address(":0") == ("127.0.0.1", 0)
    with pytest.raises(ValueError):
        parse_address("host:port")
