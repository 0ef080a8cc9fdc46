import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peeg import protocol as p


def random_message(rng):
    kind = rng.integers(0, 6)
    if kind == 0:
        return p.Hello(
            fs=int(rng.choice([250, 500, 16000])),
            channel_labels=tuple(f"CH{i}" for i in range(8)),
            gains=tuple(int(g) for g in rng.choice([1, 2, 4, 24], size=8)),
            vref=4.5,
            auth_required=bool(rng.integers(0, 2)),
        )
    if kind == 1:
        n = int(rng.integers(0, 64))
        raw = bool(rng.integers(0, 2))
        payload = (
            rng.integers(-(2**23), 2**23, size=(8, n)).astype(np.int32)
            if raw
            else rng.standard_normal((8, n)).astype(np.float32)
        )
        return p.Data(
            seq=int(rng.integers(0, 2**63)),
            epoch=int(rng.integers(0, 2**31)),
            t0_ns=int(rng.integers(0, 2**63)),
            dropped_before=int(rng.integers(0, 2**31)),
            payload=payload,
            raw=raw,
        )
    if kind == 2:
        return p.Metrics({"alpha_power_uv2": [float(x) for x in rng.standard_normal(8)],
                          "produced": int(rng.integers(0, 10**9))})
    if kind == 3:
        op = str(rng.choice(p.CMD_OPS))
        return p.Cmd(int(rng.integers(1, 2**31)), op, {"addr": int(rng.integers(0, 24))})
    if kind == 4:
        return p.Ack(int(rng.integers(1, 2**31)), {"value": int(rng.integers(0, 256))})
    return p.Err(
        str(rng.choice([p.ERR_INVALID_REG, p.ERR_UNSUPPORTED, p.ERR_NOT_RUNNING])),
        "synthetic",
        int(rng.integers(1, 2**31)),
    )


class TestCodec:
    def test_hello_round_trip(self):
        msg = p.Hello(250, tuple(f"C{i}" for i in range(8)), (24,) * 8, 4.5)
        decoded, used = p.decode_message(p.encode_message(msg))
        assert decoded == msg
        assert used == len(p.encode_message(msg))

    def test_data_length_arithmetic(self):
        payload = np.zeros((8, 25), dtype=np.float32)
        frame = p.encode_message(p.Data(1, 0, 0, 0, payload))
        declared = struct.unpack_from("<I", frame, 6)[0]
        assert declared == len(frame) - p.HEADER_LEN
        assert declared == struct.calcsize("<QIQQBI") + 8 * 25 * 4

    def test_data_raw_codes_round_trip(self):
        payload = np.arange(16, dtype=np.int32).reshape(8, 2)
        msg = p.Data(7, 1, 123, 4, payload, raw=True)
        decoded, _ = p.decode_message(p.encode_message(msg))
        assert decoded == msg
        assert decoded.payload.dtype == np.int32

    def test_random_round_trips(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            msg = random_message(rng)
            decoded, _ = p.decode_message(p.encode_message(msg))
            assert decoded == msg

    @given(st.binary(min_size=0, max_size=9))
    def test_incomplete_header(self, blob):
        with pytest.raises(p.ProtocolError):
            p.decode_message(blob)

    def test_bad_magic(self):
        with pytest.raises(p.BadMagic):
            p.decode_message(b"NOPE" + bytes(20))

    def test_bad_version(self):
        frame = bytearray(p.encode_message(p.Ack(1)))
        frame[4] = 99
        with pytest.raises(p.BadVersion):
            p.decode_message(bytes(frame))

    def test_unknown_type(self):
        frame = bytearray(p.encode_message(p.Ack(1)))
        frame[5] = 42
        with pytest.raises(p.UnknownType):
            p.decode_message(bytes(frame))

    def test_length_overflow(self):
        header = p.MAGIC + struct.pack("<BBI", p.PROTO_VERSION, p.TYPE_ACK, p.MAX_BODY + 1)
        with pytest.raises(p.LengthOverflow):
            p.decode_message(header)

    def test_unknown_cmd_op(self):
        body = b'{"id":1,"op":"EXPLODE","args":{}}'
        frame = p.MAGIC + struct.pack("<BBI", 1, p.TYPE_CMD, len(body)) + body
        with pytest.raises(p.BadBody):
            p.decode_message(frame)


class TestFrameDecoder:
    def test_concatenated_frames(self):
        rng = np.random.default_rng(1)
        messages = [random_message(rng) for _ in range(50)]
        blob = b"".join(p.encode_message(m) for m in messages)
        decoder = p.FrameDecoder()
        out = decoder.feed(blob)
        assert out == messages

    def test_byte_by_byte(self):
        msg = p.Cmd(5, "RREG", {"addr": 1})
        decoder = p.FrameDecoder()
        got = []
        for byte in p.encode_message(msg):
            got.extend(decoder.feed(bytes([byte])))
        assert got == [msg]

    def test_bad_magic_poisons(self):
        decoder = p.FrameDecoder()
        out = decoder.feed(b"XXXXXXXXXXXX")
        assert len(out) == 1 and isinstance(out[0], p.BadMagic)
        with pytest.raises(p.BadMagic):
            decoder.feed(b"more")

    def test_frame_error_then_recovery(self):
        good = p.encode_message(p.Ack(1))
        bad = bytearray(p.encode_message(p.Ack(2)))
        bad[5] = 42  # unknown type, same length
        decoder = p.FrameDecoder()
        out = decoder.feed(good + bytes(bad) + good)
        assert out[0] == p.Ack(1)
        assert isinstance(out[1], p.UnknownType)
        assert out[2] == p.Ack(1)

    def test_fuzz_never_crashes(self):
        rng = np.random.default_rng(2)
        for _ in range(20000):
            blob = rng.integers(0, 256, size=int(rng.integers(0, 64))).astype(np.uint8).tobytes()
            decoder = p.FrameDecoder()
            try:
                items = decoder.feed(blob)
            except p.ProtocolError:
                continue
            for item in items:
                assert isinstance(item, (p.ProtocolError,)) or hasattr(item, "body")

    def test_fuzz_valid_prefix_survives(self):
        # valid frame followed by garbage: frame decodes, garbage poisons
        rng = np.random.default_rng(3)
        msg = p.Metrics({"x": 1})
        for _ in range(200):
            garbage = rng.integers(0, 256, size=16).astype(np.uint8).tobytes()
            decoder = p.FrameDecoder()
            out = decoder.feed(p.encode_message(msg) + garbage)
            assert out[0] == msg
