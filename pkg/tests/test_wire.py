import binascii
import hashlib
import hmac
import random
import struct

import pytest
from hypothesis import given, strategies as st

from orvicon.wire import (FRAME_LEN, Envelope, FrameCorrupt, FrameMalformed, IngestionBatch,
                          AnnotatedFrame, RangeError, UplinkFrame, WireError, canonical_bytes,
                          crc16_ccitt_false, decode_frame, encode_frame, hmac_sha256_hex, make_envelope,
                          pack_message, recv_message, sign_envelope, verify_envelope, with_crc)


def crc_bitwise(data: bytes) -> int:
    """Reference CRC: one bit at a time, straight from the polynomial definition."""
    crc = 0xFFFF
    for byte in data:
        for i in range(7, -1, -1):
            bit = (byte >> i) & 1
            top = (crc >> 15) & 1
            crc = (crc << 1) & 0xFFFF
            if top ^ bit:
                crc ^= 0x1021
    return crc


frames = st.builds(
    UplinkFrame,
    device_id=st.integers(0, 2**64 - 1),
    frame_counter=st.integers(0, 2**32 - 1),
    timestamp_s=st.integers(0, 2**64 - 1),
    temperature_cdeg=st.integers(-(2**15), 2**15 - 1),
    battery_pct=st.integers(0, 100),
)


def test_crc_check_value():
    assert crc_bitwise(b"123456789") == 0x29B1
    assert crc16_ccitt_false(b"123456789") == 0x29B1


@given(st.binary(max_size=64))
def test_crc_matches_bitwise_oracle(data):
    assert crc16_ccitt_false(data) == crc_bitwise(data)
    assert crc16_ccitt_false(data) == binascii.crc_hqx(data, 0xFFFF)


def test_hmac_vector():
    expected = "f7bc83f430538424b13298e6aa6fb143ef4d59a14946175997479dbc2d1a3cd8"
    msg = b"The quick brown fox jumps over the lazy dog"
    assert hmac.new(b"key", msg, hashlib.sha256).hexdigest() == expected
    assert hmac_sha256_hex(b"key", msg) == expected


def test_minimal_frame_roundtrip():
    f = UplinkFrame(device_id=7, frame_counter=1, timestamp_s=0, temperature_cdeg=0, battery_pct=100)
    buf = encode_frame(f)
    assert len(buf) == FRAME_LEN
    assert decode_frame(buf) == with_crc(f)
    assert buf[0] == 1


def test_negative_temperature_bytes():
    buf = encode_frame(UplinkFrame(1, 1, 0, round(-5.25 * 100), 50))
    assert buf[21:23] == bytes([0xFD, 0xF3])


def test_layout_offsets():
    f = UplinkFrame(0x0102030405060708, 0x0A0B0C0D, 0x1112131415161718, 0x2122, 99)
    buf = encode_frame(f)
    assert buf[1:9] == bytes.fromhex("0102030405060708")
    assert buf[9:13] == bytes.fromhex("0a0b0c0d")
    assert buf[13:21] == bytes.fromhex("1112131415161718")
    assert buf[21:23] == bytes.fromhex("2122")
    assert buf[23] == 99
    assert struct.unpack(">H", buf[24:])[0] == crc_bitwise(buf[:24])


@given(frames)
def test_roundtrip_property(f):
    assert decode_frame(encode_frame(f)) == with_crc(f)


@pytest.mark.parametrize("kwargs", [{"battery_pct": 101}, {"version": 2}])
def test_encode_range_errors(kwargs):
    with pytest.raises(RangeError):
        encode_frame(UplinkFrame(1, 1, 0, 0, **kwargs))


def test_last_byte_flip_is_corrupt():
    buf = bytearray(encode_frame(UplinkFrame(7, 1, 0, 0, 100)))
    buf[-1] ^= 0x01
    with pytest.raises(FrameCorrupt):
        decode_frame(bytes(buf))


@pytest.mark.parametrize("n", [0, 25, 27])
def test_bad_length_malformed(n):
    with pytest.raises(FrameMalformed):
        decode_frame(bytes(n))


def test_bad_version_and_battery_malformed():
    for version, batt in ((2, 50), (1, 101)):
        head = struct.pack(">BQIQhB", version, 1, 1, 0, 0, batt)
        buf = head + struct.pack(">H", crc_bitwise(head))
        with pytest.raises(FrameMalformed):
            decode_frame(buf)


def test_every_single_bit_flip_rejected():
    buf = encode_frame(UplinkFrame(0xDEADBEEF, 42, 1_713_834_000, -311, 87))
    for i in range(len(buf) * 8):
        bad = bytearray(buf)
        bad[i // 8] ^= 1 << (i % 8)
        with pytest.raises((FrameCorrupt, FrameMalformed)):
            decode_frame(bytes(bad))


@given(frames, st.integers(0, FRAME_LEN - 1), st.integers(1, 255))
def test_single_byte_mutation_rejected_or_different(f, pos, xor):
    buf = bytearray(encode_frame(f))
    original = decode_frame(bytes(buf))
    buf[pos] ^= xor
    try:
        assert decode_frame(bytes(buf)) != original
    except (FrameCorrupt, FrameMalformed):
        pass


def _env(body=None):
    return make_envelope("cons-1", "DATA_REQUEST", body or {"contract_id": "ctr-0001", "window": [1, 2]},
                         random.Random(1))


def test_sign_verify_roundtrip():
    key = b"k" * 32
    env = sign_envelope(_env(), key)
    assert len(env.signature) == 64 and env.signature == env.signature.lower()
    assert verify_envelope(env, key)


def test_mutated_body_fails():
    key = b"k" * 32
    env = sign_envelope(_env(), key)
    tampered = Envelope(env.msg_id, env.sender_id, env.msg_type, dict(env.body, window=[1, 3]), env.signature)
    assert not verify_envelope(tampered, key)


def test_signature_is_hmac_over_sorted_compact_json():
    key = b"secret-key-16byt"
    env = sign_envelope(_env({"b": 1, "a": [1, 2]}), key)
    manual = ('{"body":{"a":[1,2],"b":1},"msg_id":"%s","msg_type":"DATA_REQUEST","sender_id":"cons-1"}'
              % env.msg_id).encode()
    assert canonical_bytes(env) == manual
    assert env.signature == hmac.new(key, manual, hashlib.sha256).hexdigest()


def test_canonical_encoding_deterministic():
    env = _env({"z": 1, "y": {"b": 2, "a": 1}})
    assert canonical_bytes(env) == canonical_bytes(Envelope.from_dict(env.to_dict()))


@given(st.binary(min_size=1, max_size=64), st.binary(min_size=1, max_size=64))
def test_verify_is_key_sensitive(k1, k2):
    env = sign_envelope(_env(), k1)
    assert verify_envelope(env, k2) == (k1 == k2)


@given(st.sampled_from(["msg_id", "sender_id", "msg_type"]))
def test_header_field_mutation_fails(name):
    key = b"x" * 16
    env = sign_envelope(_env(), key)
    d = env.to_dict()
    d[name] = "ERROR" if name == "msg_type" else d[name] + "0"
    assert not verify_envelope(Envelope.from_dict(d), key)


def test_sign_requires_key():
    with pytest.raises(ValueError):
        sign_envelope(_env(), b"")
    assert not verify_envelope(_env(), b"")


class _FakeSock:
    def __init__(self, data: bytes):
        self.data = data

    def recv(self, n):
        out, self.data = self.data[:n], self.data[n:]
        return out


def test_length_prefixed_stream_roundtrip():
    env = sign_envelope(_env(), b"k" * 16)
    msg = pack_message(env)
    assert struct.unpack(">I", msg[:4])[0] == len(msg) - 4
    sock = _FakeSock(msg + msg)
    assert recv_message(sock) == env
    assert recv_message(sock) == env
    with pytest.raises(ConnectionError):
        recv_message(sock)


def test_unknown_msg_type_rejected():
    with pytest.raises(WireError):
        Envelope.from_dict({"msg_id": "0", "sender_id": "x", "msg_type": "NOPE", "body": {}})


def test_ingestion_batch_body_roundtrip_and_crc_check():
    f = with_crc(UplinkFrame(3, 9, 100, -12, 80))
    batch = IngestionBatch("gw-1", 105, (AnnotatedFrame(f, -77),))
    assert IngestionBatch.from_body(batch.to_body()) == batch
    body = batch.to_body()
    body["frames"][0]["temperature_cdeg"] = 500
    with pytest.raises(WireError):
        IngestionBatch.from_body(body)
    with pytest.raises(WireError):
        IngestionBatch.from_body(dict(batch.to_body(), frames=[]))
