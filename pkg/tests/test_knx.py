from functools import reduce
from operator import xor

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from cpsbed.errors import DecodeError
from cpsbed.knx import (
    Apci,
    BusDump,
    GroupAddress,
    IndividualAddress,
    KnxBus,
    RoomController,
    Telegram,
    TemperatureSensor,
    decode_dpt9,
    decode_telegram,
    dpt9_exponent_mantissa,
    encode_dpt9,
    encode_telegram,
    read_pcap,
)
from cpsbed.sim import Simulation

GOLDEN = bytes.fromhex("BC 11 0A 11 00 E3 00 80 0C 1A 3C")
SRC = IndividualAddress(1, 1, 10)
DST = GroupAddress(2, 1, 0)


def xor_oracle(frame):
    acc = 0
    for b in frame:
        acc ^= b
    return acc


telegrams = st.builds(
    lambda src, dst, apci, payload, hop, ctrl: Telegram(
        IndividualAddress.from_int(src), GroupAddress.from_int(dst), apci,
        b"" if apci is Apci.GROUP_VALUE_READ else payload, hop, ctrl),
    st.integers(0, 0xFFFF),
    st.integers(0, 0xFFFF),
    st.sampled_from(list(Apci)),
    st.binary(max_size=14),
    st.integers(0, 7),
    st.integers(0, 255),
)


def test_golden_write_frame():
    t = Telegram(SRC, DST, Apci.GROUP_VALUE_WRITE, bytes.fromhex("0C1A"), hop_count=6)
    assert encode_telegram(t) == GOLDEN
    # checksum recomputed independently of the codec
    assert (~reduce(xor, GOLDEN[:-1]) & 0xFF) == GOLDEN[-1] == 0x3C


def test_golden_decodes():
    t = decode_telegram(GOLDEN)
    assert t.apci is Apci.GROUP_VALUE_WRITE
    assert str(t.source) == "1.1.10"
    assert str(t.dest) == "2/1/0"
    assert t.payload == bytes.fromhex("0C1A")
    assert t.hop_count == 6 and t.control == 0xBC


def test_group_value_read_frame():
    frame = encode_telegram(Telegram(SRC, DST, Apci.GROUP_VALUE_READ))
    assert len(frame) == 9
    assert frame[5] & 0x0F == 1
    assert frame.hex().upper() == "BC110A1100E10000" + f"{(~reduce(xor, frame[:-1])) & 0xFF:02X}"


def test_payload_too_long_rejected():
    with pytest.raises(ValueError):
        Telegram(SRC, DST, Apci.GROUP_VALUE_WRITE, bytes(15))


def test_read_with_payload_rejected():
    with pytest.raises(ValueError):
        Telegram(SRC, DST, Apci.GROUP_VALUE_READ, b"\x01")


def test_max_length_frame():
    frame = encode_telegram(Telegram(SRC, DST, Apci.GROUP_VALUE_WRITE, bytes(range(14))))
    assert len(frame) == 23
    assert frame[5] & 0x0F == 15


@settings(max_examples=300)
@given(telegrams)
def test_round_trip(t):
    frame = encode_telegram(t)
    assert 9 <= len(frame) <= 23
    assert xor_oracle(frame) == 0xFF
    assert decode_telegram(frame) == t
    assert encode_telegram(decode_telegram(frame)) == frame


@pytest.mark.parametrize("frame,code", [
    (b"", "too-short"),
    (GOLDEN[:8], "too-short"),
    (GOLDEN[:-1] + bytes([GOLDEN[-1] ^ 0xFF]), "bad-checksum"),
])
def test_decode_errors(frame, code):
    with pytest.raises(DecodeError) as info:
        decode_telegram(frame)
    assert info.value.code == code


def refix(frame: bytes) -> bytes:
    body = frame[:-1]
    return body + bytes([~reduce(xor, body) & 0xFF])


def test_bad_length_nibble():
    f = bytearray(GOLDEN)
    f[5] = (f[5] & 0xF0) | 0x05
    with pytest.raises(DecodeError) as info:
        decode_telegram(refix(bytes(f)))
    assert info.value.code == "bad-length-nibble"


def test_zero_length_nibble():
    f = bytearray(GOLDEN)
    f[5] &= 0xF0
    with pytest.raises(DecodeError) as info:
        decode_telegram(refix(bytes(f)))
    assert info.value.code == "bad-length-nibble"


def test_unknown_apci():
    f = bytearray(GOLDEN)
    f[7] = 0xC0
    with pytest.raises(DecodeError) as info:
        decode_telegram(refix(bytes(f)))
    assert info.value.code == "unknown-apci"


@settings(max_examples=500)
@given(st.binary(max_size=64))
def test_decoder_total(data):
    try:
        t = decode_telegram(data)
    except DecodeError:
        return
    assert encode_telegram(t) == data


# -- DPT9 -------------------------------------------------------------------------

ALL_CODES = np.arange(65536, dtype=np.int64)
_e = (ALL_CODES >> 11) & 0xF
_m = (ALL_CODES & 0x7FF) - np.where(ALL_CODES & 0x8000, 2048, 0)
ALL_VALUES = 0.01 * _m * (2.0 ** _e)


def brute_force_dpt9(v):
    """Nearest representable value over every (e, m); ties go to the smaller exponent."""
    err = np.abs(ALL_VALUES - v)
    best = err.min()
    cands = ALL_CODES[err <= best + 1e-12]
    code = min(cands, key=lambda c: (int(_e[c]), int(c)))
    return int(code).to_bytes(2, "big"), float(best)


@pytest.mark.parametrize("v,hexval", [(0.0, "0000"), (21.0, "0C1A"), (-30.0, "8A24")])
def test_dpt9_golden(v, hexval):
    assert encode_dpt9(v).hex().upper() == hexval
    assert brute_force_dpt9(v)[0].hex().upper() == hexval
    assert decode_dpt9(bytes.fromhex(hexval)) == pytest.approx(v)


def test_dpt9_golden_mantissas():
    assert dpt9_exponent_mantissa(21.0) == (1, 1050)
    assert dpt9_exponent_mantissa(-30.0) == (1, -1500)
    assert dpt9_exponent_mantissa(23.0) == (1, 1150)


def test_dpt9_matches_brute_force_oracle():
    rng = np.random.default_rng(9001)
    values = np.concatenate([rng.uniform(-50, 60, 300), rng.uniform(-671088.64, 670760.96, 200)])
    for v in values:
        e, _ = dpt9_exponent_mantissa(v)
        code, best = brute_force_dpt9(v)
        got = abs(decode_dpt9(encode_dpt9(v)) - v)
        assert got == pytest.approx(best, abs=1e-9)
        assert got <= 0.01 * 2**e / 2 + 1e-9


def test_dpt9_range():
    with pytest.raises(ValueError):
        encode_dpt9(670760.97)
    with pytest.raises(ValueError):
        encode_dpt9(-671088.65)
    with pytest.raises(ValueError):
        encode_dpt9(float("nan"))
    assert decode_dpt9(encode_dpt9(670760.96)) == pytest.approx(670760.96)
    assert decode_dpt9(encode_dpt9(-671088.64)) == pytest.approx(-671088.64)


@settings(max_examples=500)
@given(st.floats(-20.47, 20.47))
def test_dpt9_small_values_precise(v):
    assert dpt9_exponent_mantissa(v)[0] == 0
    assert abs(decode_dpt9(encode_dpt9(v)) - v) <= 0.005 + 1e-12


def test_dpt9_decode_length():
    with pytest.raises(DecodeError):
        decode_dpt9(b"\x00")


# -- bus ---------------------------------------------------------------------------


def test_broadcast_semantics():
    sim = Simulation()
    bus = KnxBus(sim)
    got = {}
    ports = {}
    for name in ("a", "b", "c"):
        got[name] = []
        sim.add_endpoint(name, lambda ev, n=name: got[n].append(ev.payload))
        ports[name] = bus.attach(name)
    assert ports["a"].send(GOLDEN) == 2
    sim.run_until(10_000)
    assert got == {"a": [], "b": [GOLDEN], "c": [GOLDEN]}
    assert len(bus.dump) == 1


def test_duplicate_attach_rejected():
    sim = Simulation()
    bus = KnxBus(sim)
    sim.add_endpoint("a")
    bus.attach("a")
    with pytest.raises(ValueError):
        bus.attach("a")


def sensor_session():
    sim = Simulation(seed=3)
    bus = KnxBus(sim)
    sensor = TemperatureSensor(sim, "sensor", bus, SRC, DST, lambda now: 21.0 + now / 6e8)
    RoomController(sim, "ctl", bus, poll_group=DST, poll_period_us=150_000_000)
    sim.run_until(600_000_000)
    return sim, bus, sensor


def test_sensor_every_60s_for_10_min():
    sim = Simulation()
    bus = KnxBus(sim)
    TemperatureSensor(sim, "sensor", bus, SRC, DST, lambda now: 21.0)
    sim.add_endpoint("listener")
    bus.attach("listener")
    sim.run_until(600_000_000)
    stamps = [r.timestamp_us for r in bus.dump]
    assert len(stamps) == 10
    assert all(b - a == 60_000_000 for a, b in zip(stamps, stamps[1:]))


def test_dump_of_mixed_session_fully_decodable():
    _, bus, _ = sensor_session()
    annotated = bus.dump.annotate()
    apcis = {entry[2].apci for entry in annotated}
    assert apcis == {Apci.GROUP_VALUE_READ, Apci.GROUP_VALUE_RESPONSE, Apci.GROUP_VALUE_WRITE}
    assert all(isinstance(entry[2], Telegram) for entry in annotated)


def test_dump_text_format_and_roundtrip():
    _, bus, _ = sensor_session()
    text = bus.dump.to_text()
    lines = text.split("\n")
    assert lines[-1] == ""
    ts, hexframe = lines[0].split("\t")
    assert ts == "60000000"
    assert hexframe == hexframe.upper() and " " not in hexframe
    assert "\r" not in text
    again = BusDump.from_text(text)
    assert again.to_text() == text


def test_dump_flags_malformed():
    dump = BusDump()
    dump.append(0, GOLDEN)
    dump.append(5, b"\x00\x01")
    flags = [isinstance(x[2], DecodeError) for x in dump.annotate()]
    assert flags == [False, True]


def test_dump_requires_time_order():
    dump = BusDump()
    dump.append(10, GOLDEN)
    with pytest.raises(ValueError):
        dump.append(5, GOLDEN)


def test_pcap_roundtrip():
    _, bus, _ = sensor_session()
    blob = bus.dump.to_pcap()
    assert blob[:4] == bytes.fromhex("D4C3B2A1")
    assert read_pcap(blob).to_text() == bus.dump.to_text()


def test_controller_records_readings():
    sim, bus, sensor = sensor_session()
    assert len(sensor.published) == len(bus.dump) - 4
