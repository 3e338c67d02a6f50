"""Wire codec: golden fixtures, round trips, framing errors, transports."""

import pathlib
import socket
import threading

import numpy as np
import pytest

from golden_wire import fixture_messages, longhand_frame
from sifl import wire
from sifl.errors import ShapeMismatch

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def _messages_equal(a, b):
    if type(a) is not type(b):
        return False
    for name in a.__dataclass_fields__:
        va, vb = getattr(a, name), getattr(b, name)
        if isinstance(va, np.ndarray):
            if va.shape != vb.shape or not np.array_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


@pytest.mark.parametrize("name,msg,longhand", fixture_messages(),
                         ids=[c[0] for c in fixture_messages()])
class TestGoldenFixtures:
    def test_encode_matches_checked_in_bytes(self, name, msg, longhand):
        golden = (FIXTURES / f"{name}.bin").read_bytes()
        assert golden == longhand, "fixture file drifted from the longhand builder"
        assert wire.encode_message(msg) == golden

    def test_decode_of_fixture_reproduces_message(self, name, msg, longhand):
        golden = (FIXTURES / f"{name}.bin").read_bytes()
        assert _messages_equal(wire.decode_message(golden), msg)

    def test_byte_identical_round_trip(self, name, msg, longhand):
        frame = wire.encode_message(msg)
        assert wire.encode_message(wire.decode_message(frame)) == frame


class TestFraming:
    def test_length_prefix_mismatch(self):
        frame = bytearray(wire.encode_message(wire.Done(round=0, w_final=np.zeros(2))))
        frame += b"\x00"
        with pytest.raises(ShapeMismatch):
            wire.decode_message(bytes(frame))

    def test_unknown_tag(self):
        frame = bytearray(longhand_frame(9, 0, 0, np.zeros(1)))
        with pytest.raises(ShapeMismatch):
            wire.decode_message(bytes(frame))

    def test_trailing_bytes_inside_frame(self):
        body = longhand_frame(1, 0, 0, np.zeros(1))[4:] + b"\x00" * 4
        frame = len(body).to_bytes(4, "little") + body
        with pytest.raises(ShapeMismatch):
            wire.decode_message(frame)

    def test_3d_payload_rejected(self):
        with pytest.raises(ShapeMismatch):
            wire.encode_message(wire.Done(round=0, w_final=np.zeros((2, 2, 2))))


class TestInProcessTransport:
    def test_fifo_and_taps(self):
        seen = []
        bus = wire.InProcessTransport(taps=[lambda ch, fr: seen.append((ch, fr))])
        m1 = wire.BroadcastPlain(round=0, w=np.array([1.0]))
        m2 = wire.BroadcastPlain(round=1, w=np.array([2.0]))
        bus.send(wire.CH_BROADCAST, m1)
        bus.send(wire.CH_BROADCAST, m2)
        assert _messages_equal(bus.recv(wire.CH_BROADCAST), m1)
        assert _messages_equal(bus.recv(wire.CH_BROADCAST), m2)
        assert [ch for ch, _ in seen] == [wire.CH_BROADCAST] * 2
        assert seen[0][1] == wire.encode_message(m1)

    def test_empty_channel(self):
        bus = wire.InProcessTransport()
        with pytest.raises(ShapeMismatch):
            bus.recv(wire.CH_UPLINK)


class TestTcpFraming:
    def test_frame_round_trip_over_socketpair(self):
        a, b = socket.socketpair()
        msg = wire.LocalUpdate(round=1, client_id=2,
                               payload=np.linspace(0, 1, 50), dataset_size=123)
        frame = wire.encode_message(msg)

        def sender():
            wire.send_frame(a, frame)
            a.close()

        t = threading.Thread(target=sender)
        t.start()
        got = wire.recv_frame(b)
        t.join()
        b.close()
        assert got == frame
        assert _messages_equal(wire.decode_message(got), msg)

    def test_tcp_transport_carries_same_bytes(self):
        try:
            bus = wire.TcpTransport()
        except OSError:
            pytest.skip("loopback sockets unavailable")
        try:
            msg = wire.AggregateToServer(round=2, payload=np.full((6, 3), 2.5))
            bus.send(wire.CH_AGGREGATE, msg)
            got = bus.recv(wire.CH_AGGREGATE, timeout=10.0)
            assert _messages_equal(got, msg)
        finally:
            bus.close()
