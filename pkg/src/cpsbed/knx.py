"""KNX TP1-style telegram codec, DPT 9.001 float codec, shared bus and bus dump.

Frame profile (normative for this testbed)::

    octet 0      control            (default 0xBC)
    octet 1-2    source address     area(4) | line(4) | device(8)
    octet 3-4    group address      main(5) | middle(3) | sub(8)
    octet 5      AT | hop | length  bit7 = 1 (group), bits 6-4 hop count,
                                    bits 3-0 = payload length + 1
    octet 6      TPCI               0x00 | APCI bits 9-8
    octet 7      APCI bits 7-0
    octet 8..    payload            0-14 octets
    last         checksum           ~(XOR of all preceding octets) & 0xFF

Only GroupValueRead/Response/Write are supported; payload data is always
carried in separate octets (no 6-bit short data in the APCI octet).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import reduce
from operator import xor
from typing import Callable, Iterable, Iterator, Optional, TextIO, Union

from .errors import DecodeError
from .sim import Event, Simulation

DEFAULT_CONTROL = 0xBC
DEFAULT_HOP_COUNT = 6
MAX_PAYLOAD = 14
MIN_FRAME = 9
MAX_FRAME = MIN_FRAME + MAX_PAYLOAD

DPT9_MIN = -671088.64
DPT9_MAX = 670760.96

# pcap DLT_USER0: private link type for raw TP1 frames
PCAP_LINKTYPE = 147


class Apci(IntEnum):
    GROUP_VALUE_READ = 0x000
    GROUP_VALUE_RESPONSE = 0x040
    GROUP_VALUE_WRITE = 0x080


@dataclass(frozen=True, order=True)
class IndividualAddress:
    area: int
    line: int
    device: int

    def __post_init__(self):
        if not (0 <= self.area <= 15 and 0 <= self.line <= 15 and 0 <= self.device <= 255):
            raise ValueError(f"individual address out of range: {self.area}.{self.line}.{self.device}")

    def to_int(self) -> int:
        return self.area << 12 | self.line << 8 | self.device

    @classmethod
    def from_int(cls, raw: int) -> "IndividualAddress":
        return cls(raw >> 12 & 0xF, raw >> 8 & 0xF, raw & 0xFF)

    @classmethod
    def parse(cls, text: str) -> "IndividualAddress":
        try:
            a, l, d = (int(x) for x in text.split("."))
        except ValueError:
            raise ValueError(f"bad individual address {text!r}") from None
        return cls(a, l, d)

    def __str__(self):
        return f"{self.area}.{self.line}.{self.device}"


@dataclass(frozen=True, order=True)
class GroupAddress:
    main: int
    middle: int
    sub: int

    def __post_init__(self):
        if not (0 <= self.main <= 31 and 0 <= self.middle <= 7 and 0 <= self.sub <= 255):
            raise ValueError(f"group address out of range: {self.main}/{self.middle}/{self.sub}")

    def to_int(self) -> int:
        return self.main << 11 | self.middle << 8 | self.sub

    @classmethod
    def from_int(cls, raw: int) -> "GroupAddress":
        return cls(raw >> 11 & 0x1F, raw >> 8 & 0x7, raw & 0xFF)

    @classmethod
    def parse(cls, text: str) -> "GroupAddress":
        try:
            m, mi, s = (int(x) for x in text.split("/"))
        except ValueError:
            raise ValueError(f"bad group address {text!r}") from None
        return cls(m, mi, s)

    def __str__(self):
        return f"{self.main}/{self.middle}/{self.sub}"


@dataclass(frozen=True)
class Telegram:
    source: IndividualAddress
    dest: GroupAddress
    apci: Apci
    payload: bytes = b""
    hop_count: int = DEFAULT_HOP_COUNT
    control: int = DEFAULT_CONTROL

    def __post_init__(self):
        object.__setattr__(self, "apci", Apci(self.apci))
        object.__setattr__(self, "payload", bytes(self.payload))
        if not 0 <= self.hop_count <= 7:
            raise ValueError(f"hop_count {self.hop_count} out of range 0-7")
        if not 0 <= self.control <= 0xFF:
            raise ValueError("control must be one octet")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        if self.apci is Apci.GROUP_VALUE_READ and self.payload:
            raise ValueError("GroupValueRead carries no payload")

    def with_payload(self, payload: bytes) -> "Telegram":
        return Telegram(self.source, self.dest, self.apci, payload, self.hop_count, self.control)


def checksum(data: bytes) -> int:
    return ~reduce(xor, data, 0) & 0xFF


def encode_telegram(t: Telegram) -> bytes:
    n = len(t.payload)
    if n > MAX_PAYLOAD:
        raise ValueError(f"payload of {n} bytes exceeds {MAX_PAYLOAD}")
    src = t.source.to_int()
    dst = t.dest.to_int()
    head = bytes((
        t.control,
        src >> 8, src & 0xFF,
        dst >> 8, dst & 0xFF,
        0x80 | t.hop_count << 4 | (n + 1),
        (t.apci >> 8) & 0x03,
        t.apci & 0xFF,
    )) + t.payload
    return head + bytes((checksum(head),))


_APCI_BY_VALUE = {a.value: a for a in Apci}


def decode_telegram(frame: bytes) -> Telegram:
    """Parse one frame; raises :class:`DecodeError` naming the first violated rule."""
    frame = bytes(frame)
    n = len(frame)
    if n < MIN_FRAME:
        raise DecodeError("too-short", f"{n} bytes, need at least {MIN_FRAME}")
    if checksum(frame[:-1]) != frame[-1]:
        raise DecodeError("bad-checksum", f"expected {checksum(frame[:-1]):02X}, got {frame[-1]:02X}")
    at = frame[5]
    length = at & 0x0F
    if length == 0 or length + 8 != n:
        raise DecodeError("bad-length-nibble", f"nibble {length} for a {n}-byte frame")
    if not at & 0x80:
        raise DecodeError("not-group-addressed", "individual destination addressing unsupported")
    tpci = frame[6]
    if tpci & 0xFC:
        raise DecodeError("unknown-apci", f"TPCI octet {tpci:02X}")
    apci = _APCI_BY_VALUE.get((tpci & 0x03) << 8 | frame[7])
    if apci is None:
        raise DecodeError("unknown-apci", f"APCI {(tpci & 0x03) << 8 | frame[7]:03X}")
    payload = frame[8:-1]
    if apci is Apci.GROUP_VALUE_READ and payload:
        raise DecodeError("read-with-payload", f"{len(payload)} payload bytes on GroupValueRead")
    return Telegram(
        source=IndividualAddress.from_int(frame[1] << 8 | frame[2]),
        dest=GroupAddress.from_int(frame[3] << 8 | frame[4]),
        apci=apci,
        payload=payload,
        hop_count=(at >> 4) & 0x07,
        control=frame[0],
    )


# -- DPT 9.001 ------------------------------------------------------------------


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def dpt9_exponent_mantissa(celsius: float) -> tuple[int, int]:
    """Smallest exponent whose rounded mantissa fits the signed 12-bit range."""
    if not math.isfinite(celsius) or not DPT9_MIN <= celsius <= DPT9_MAX:
        raise ValueError(f"{celsius} outside DPT 9 range [{DPT9_MIN}, {DPT9_MAX}]")
    scaled = celsius * 100.0
    for e in range(16):
        m = _round_half_away(scaled / (1 << e))
        if -2048 <= m <= 2047:
            return e, m
    raise ValueError(f"{celsius} not representable")  # unreachable given the range check


def encode_dpt9(celsius: float) -> bytes:
    e, m = dpt9_exponent_mantissa(celsius)
    raw = (0x8000 if m < 0 else 0) | e << 11 | (m & 0x7FF)
    return raw.to_bytes(2, "big")


def decode_dpt9(data: bytes) -> float:
    if len(data) != 2:
        raise DecodeError("bad-dpt9-length", f"{len(data)} bytes, need 2")
    raw = data[0] << 8 | data[1]
    e = raw >> 11 & 0x0F
    m = raw & 0x7FF
    if raw & 0x8000:
        m -= 2048
    return 0.01 * m * (1 << e)


def dpt9_resolution(celsius: float) -> float:
    """Quantization step ``0.01 * 2**e`` of the encoding chosen for ``celsius``."""
    e, _ = dpt9_exponent_mantissa(celsius)
    return 0.01 * (1 << e)


# -- bus ------------------------------------------------------------------------


@dataclass
class DumpRecord:
    timestamp_us: int
    frame: bytes


@dataclass
class BusDump:
    records: list[DumpRecord] = field(default_factory=list)

    def append(self, timestamp_us: int, frame: bytes) -> None:
        if self.records and timestamp_us < self.records[-1].timestamp_us:
            raise ValueError("dump records must be time-ordered")
        self.records.append(DumpRecord(timestamp_us, bytes(frame)))

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[DumpRecord]:
        return iter(self.records)

    def annotate(self) -> list[tuple[int, bytes, Union[Telegram, DecodeError]]]:
        """Each record with its decoded telegram, or the DecodeError flagging it malformed."""
        out = []
        for r in self.records:
            try:
                out.append((r.timestamp_us, r.frame, decode_telegram(r.frame)))
            except DecodeError as exc:
                out.append((r.timestamp_us, r.frame, exc))
        return out

    def to_text(self) -> str:
        return "".join(f"{r.timestamp_us}\t{r.frame.hex().upper()}\n" for r in self.records)

    def write(self, fh: TextIO) -> None:
        fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "BusDump":
        dump = cls()
        for lineno, line in enumerate(text.split("\n"), 1):
            if not line:
                continue
            try:
                ts, hexframe = line.split("\t")
                dump.append(int(ts), bytes.fromhex(hexframe))
            except ValueError as exc:
                raise ValueError(f"dump line {lineno}: {exc}") from None
        return dump

    def to_pcap(self) -> bytes:
        """libpcap container (microsecond timestamps, link type DLT_USER0)."""
        out = [struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, PCAP_LINKTYPE)]
        for r in self.records:
            sec, usec = divmod(r.timestamp_us, 1_000_000)
            out.append(struct.pack("<IIII", sec, usec, len(r.frame), len(r.frame)))
            out.append(r.frame)
        return b"".join(out)


def read_pcap(data: bytes) -> BusDump:
    magic, _, _, _, _, _, linktype = struct.unpack_from("<IHHiIII", data, 0)
    if magic != 0xA1B2C3D4 or linktype != PCAP_LINKTYPE:
        raise ValueError("not a testbed KNX pcap")
    dump = BusDump()
    off = 24
    while off < len(data):
        sec, usec, incl, _ = struct.unpack_from("<IIII", data, off)
        off += 16
        dump.append(sec * 1_000_000 + usec, data[off:off + incl])
        off += incl
    return dump


class KnxBus:
    """Shared twisted-pair medium: a frame reaches every attached device but the sender.

    Devices are simulation endpoints; delivery is an event with ``source`` set to
    the sender's endpoint id.  Every frame put on the wire is recorded in
    :attr:`dump` at the send time, as a tap on the cable would see it.
    """

    def __init__(self, sim: Simulation, name: str = "knx", latency_us: int = 1000):
        self.sim = sim
        self.name = name
        self.latency_us = latency_us
        self.devices: list[str] = []
        self.ports: dict[str, BusPort] = {}
        self.dump = BusDump()

    def attach(self, endpoint_id: str) -> "BusPort":
        if endpoint_id in self.devices:
            raise ValueError(f"{endpoint_id!r} already attached to bus {self.name!r}")
        self.sim.endpoint(endpoint_id)
        self.devices.append(endpoint_id)
        port = self.ports[endpoint_id] = BusPort(self, endpoint_id)
        return port

    def adopt(self, port: "BusPort") -> None:
        """Move an existing port (and its device) onto this bus."""
        port.bus.detach(port.endpoint_id)
        self.devices.append(port.endpoint_id)
        self.ports[port.endpoint_id] = port
        port.bus = self

    def detach(self, endpoint_id: str) -> None:
        self.devices.remove(endpoint_id)
        del self.ports[endpoint_id]

    def send(self, sender: str, frame: bytes) -> int:
        self.dump.append(self.sim.now, frame)
        delivered = 0
        for dev in self.devices:
            if dev != sender:
                self.sim.schedule(self.latency_us, dev, frame, source=sender)
                delivered += 1
        return delivered


class BusPort:
    """A device's connection to a bus; re-pointed when the bus is split by a tap."""

    def __init__(self, bus: KnxBus, endpoint_id: str):
        self.bus = bus
        self.endpoint_id = endpoint_id

    def send(self, frame: bytes) -> int:
        return self.bus.send(self.endpoint_id, frame)


def bus_attach(bus: KnxBus, endpoint_id: str) -> BusPort:
    return bus.attach(endpoint_id)


def bus_send(bus: KnxBus, sender: str, frame: bytes) -> int:
    return bus.send(sender, frame)


def dump_export(bus: KnxBus) -> str:
    return bus.dump.to_text()


# -- devices --------------------------------------------------------------------


class TemperatureSensor:
    """Publishes a DPT 9.001 GroupValueWrite every ``period_us``; answers GroupValueRead."""

    def __init__(self, sim: Simulation, endpoint_id: str, bus: KnxBus,
                 address: IndividualAddress, group: GroupAddress,
                 temperature: Callable[[int], float], period_us: int = 60_000_000,
                 first_at_us: Optional[int] = None):
        self.sim = sim
        self.id = endpoint_id
        self.address = address
        self.group = group
        self.temperature = temperature
        self.period_us = period_us
        self.published: list[tuple[int, float, bytes]] = []
        sim.add_endpoint(endpoint_id, self._on_event)
        self.port = bus.attach(endpoint_id)
        sim.timer(endpoint_id, period_us if first_at_us is None else first_at_us, b"tick")

    def reading(self) -> float:
        return self.temperature(self.sim.now)

    def _frame(self, apci: Apci) -> tuple[float, bytes]:
        value = self.reading()
        t = Telegram(self.address, self.group, apci, encode_dpt9(value))
        return value, encode_telegram(t)

    def _on_event(self, ev: Event) -> None:
        if ev.is_timer:
            value, frame = self._frame(Apci.GROUP_VALUE_WRITE)
            self.published.append((self.sim.now, value, frame))
            self.port.send(frame)
            self.sim.timer(self.id, self.period_us, b"tick")
            return
        try:
            t = decode_telegram(ev.payload)
        except DecodeError:
            return
        if t.apci is Apci.GROUP_VALUE_READ and t.dest == self.group:
            value, frame = self._frame(Apci.GROUP_VALUE_RESPONSE)
            self.published.append((self.sim.now, value, frame))
            self.port.send(frame)


class RoomController:
    """Records every temperature telegram it hears, keyed by source address.

    Optionally polls a group with GroupValueRead so a session mixes reads and writes.
    """

    def __init__(self, sim: Simulation, endpoint_id: str, bus: KnxBus,
                 address: IndividualAddress = IndividualAddress(1, 1, 1),
                 poll_group: Optional[GroupAddress] = None, poll_period_us: int = 0):
        self.sim = sim
        self.id = endpoint_id
        self.address = address
        self.readings: dict[IndividualAddress, list[tuple[int, float]]] = {}
        self.frames: list[tuple[int, bytes]] = []
        self.rejected = 0
        self.poll_group = poll_group
        self.poll_period_us = poll_period_us
        sim.add_endpoint(endpoint_id, self._on_event)
        self.port = bus.attach(endpoint_id)
        if poll_group is not None and poll_period_us > 0:
            sim.timer(endpoint_id, poll_period_us, b"poll")

    def latest(self, source: IndividualAddress) -> Optional[float]:
        vals = self.readings.get(source)
        return vals[-1][1] if vals else None

    def _on_event(self, ev: Event) -> None:
        if ev.is_timer:
            t = Telegram(self.address, self.poll_group, Apci.GROUP_VALUE_READ)
            self.port.send(encode_telegram(t))
            self.sim.timer(self.id, self.poll_period_us, b"poll")
            return
        self.frames.append((self.sim.now, ev.payload))
        try:
            t = decode_telegram(ev.payload)
        except DecodeError:
            self.rejected += 1
            return
        if t.apci is not Apci.GROUP_VALUE_READ and len(t.payload) == 2:
            self.readings.setdefault(t.source, []).append((self.sim.now, decode_dpt9(t.payload)))


def frames_from(records: Iterable[DumpRecord]) -> list[bytes]:
    return [r.frame for r in records]
