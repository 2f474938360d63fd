"""Minimal BACnet/IP: codec, a simulated controller device and a discovery scanner.

Wire profile (a strict subset of BACnet/IP):

    BVLC   81 <fn> <len:u16>        fn 0x0A unicast, 0x0B broadcast
    NPDU   01 00
    APDU   unconfirmed  10 <svc>    Who-Is 0x08, I-Am 0x00
           confirmed    00 05 <invoke> <svc>   ReadProperty 0x0C, WriteProperty 0x0F
           complex-ack  30 <invoke> <svc>
           simple-ack   20 <invoke> <svc>
           error        50 <invoke> <svc> 91 <class> 91 <code>

I-Am carries application tags ``C4`` object id, ``22`` max-APDU (u16), ``91``
segmentation, ``21`` vendor (u8).  Confirmed requests use context tags ``0C``
object id, ``19`` property id and a ``3E .. 3F`` value wrapper.  Values are a
REAL (``44`` + IEEE-754 big endian), a character string (application tag 7,
charset byte 0) or, for the object list, a run of ``C4`` object ids.

Profile limits: no segmentation, no write priority, vendor ids up to 255,
property array indices unsupported, only object-list (76), object-name (77) and
present-value (85).
"""

from __future__ import annotations

import ipaddress
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from .errors import DecodeError, TransportError
from .sim import Event, Simulation

BVLC_TYPE = 0x81
BVLC_UNICAST = 0x0A
BVLC_BROADCAST = 0x0B
DEFAULT_PORT = 47808
MAX_FRAME = 1500

SVC_I_AM = 0x00
SVC_WHO_IS = 0x08
SVC_READ_PROPERTY = 0x0C
SVC_WRITE_PROPERTY = 0x0F

PROP_OBJECT_LIST = 76
PROP_OBJECT_NAME = 77
PROP_PRESENT_VALUE = 85
PROPERTIES = (PROP_OBJECT_LIST, PROP_OBJECT_NAME, PROP_PRESENT_VALUE)

OBJ_ANALOG_INPUT = 0
OBJ_ANALOG_OUTPUT = 1
OBJ_DEVICE = 8

SEGMENTATION_NONE = 3

# (class, code) pairs carried in Error PDUs
ERROR_CLASS_OBJECT = 1
ERROR_CLASS_PROPERTY = 2
ERRORS = {
    "unknown-object": (ERROR_CLASS_OBJECT, 31),
    "unknown-property": (ERROR_CLASS_PROPERTY, 32),
    "write-access-denied": (ERROR_CLASS_PROPERTY, 40),
}
_ERROR_BY_CODE = {v: k for k, v in ERRORS.items()}


@dataclass(frozen=True, order=True)
class ObjectId:
    object_type: int
    instance: int

    def __post_init__(self):
        if not 0 <= self.object_type <= 1023:
            raise ValueError(f"object type {self.object_type} outside 0..1023")
        if not 0 <= self.instance <= 4194302:
            raise ValueError(f"instance {self.instance} outside 0..4194302")

    def pack(self) -> int:
        return self.object_type << 22 | self.instance

    @classmethod
    def unpack(cls, raw: int) -> "ObjectId":
        return cls(raw >> 22, raw & 0x3FFFFF)

    def __str__(self):
        return f"{self.object_type}:{self.instance}"

    @classmethod
    def parse(cls, text: str) -> "ObjectId":
        try:
            t, i = text.split(":")
            return cls(int(t), int(i))
        except ValueError:
            raise ValueError(f"object id must look like TYPE:INSTANCE, got {text!r}") from None


def _f32(value: float) -> float:
    return struct.unpack(">f", struct.pack(">f", value))[0]


Value = Union[float, str, tuple]


def _normalise_value(value: Value) -> Value:
    if isinstance(value, bool):
        raise TypeError("boolean values are not part of the profile")
    if isinstance(value, (int, float)):
        return _f32(float(value))
    if isinstance(value, str):
        if len(value.encode("utf-8")) > 250:
            raise ValueError("character strings are limited to 250 bytes")
        return value
    if isinstance(value, (tuple, list)):
        oids = tuple(value)
        if not all(isinstance(o, ObjectId) for o in oids):
            raise TypeError("object lists must contain ObjectId values")
        return oids
    raise TypeError(f"unsupported value type {type(value).__name__}")


# -- APDU types ---------------------------------------------------------------------


@dataclass(frozen=True)
class WhoIs:
    pass


@dataclass(frozen=True)
class IAm:
    device: ObjectId
    max_apdu: int = 1024
    segmentation: int = SEGMENTATION_NONE
    vendor: int = 0

    def __post_init__(self):
        if not 0 <= self.max_apdu <= 0xFFFF:
            raise ValueError("max_apdu must fit in 16 bits")
        if not 0 <= self.segmentation <= 3:
            raise ValueError("segmentation must be 0..3")
        if not 0 <= self.vendor <= 0xFF:
            raise ValueError("vendor id must fit in 8 bits in this profile")


def _check_invoke(invoke_id: int) -> None:
    if not 0 <= invoke_id <= 0xFF:
        raise ValueError("invoke id must fit in 8 bits")


def _check_property(prop: int) -> None:
    if not 0 <= prop <= 0xFF:
        raise ValueError("property id must fit in 8 bits")


@dataclass(frozen=True)
class ReadProperty:
    oid: ObjectId
    property: int
    invoke_id: int = 0

    def __post_init__(self):
        _check_property(self.property)
        _check_invoke(self.invoke_id)


@dataclass(frozen=True)
class ReadPropertyAck:
    oid: ObjectId
    property: int
    value: Value
    invoke_id: int = 0

    def __post_init__(self):
        _check_property(self.property)
        _check_invoke(self.invoke_id)
        object.__setattr__(self, "value", _normalise_value(self.value))


@dataclass(frozen=True)
class WriteProperty:
    oid: ObjectId
    property: int
    value: float
    invoke_id: int = 0

    def __post_init__(self):
        _check_property(self.property)
        _check_invoke(self.invoke_id)
        if not isinstance(self.value, (int, float)) or isinstance(self.value, bool):
            raise TypeError("WriteProperty carries a REAL value")
        object.__setattr__(self, "value", _f32(float(self.value)))


@dataclass(frozen=True)
class SimpleAck:
    invoke_id: int
    service: int = SVC_WRITE_PROPERTY

    def __post_init__(self):
        _check_invoke(self.invoke_id)


@dataclass(frozen=True)
class Error:
    invoke_id: int
    reason: str
    service: int = SVC_READ_PROPERTY

    def __post_init__(self):
        _check_invoke(self.invoke_id)
        if self.reason not in ERRORS:
            raise ValueError(f"unknown error reason {self.reason!r}")


Apdu = Union[WhoIs, IAm, ReadProperty, ReadPropertyAck, WriteProperty, SimpleAck, Error]


@dataclass(frozen=True)
class BacnetMessage:
    apdu: Apdu
    bvlc_function: int = BVLC_UNICAST

    def __post_init__(self):
        if self.bvlc_function not in (BVLC_UNICAST, BVLC_BROADCAST):
            raise ValueError(f"unsupported BVLC function 0x{self.bvlc_function:02X}")


# -- encoding -----------------------------------------------------------------------


def _enc_oid_app(oid: ObjectId) -> bytes:
    return b"\xC4" + oid.pack().to_bytes(4, "big")


def _enc_value(value: Value) -> bytes:
    if isinstance(value, float):
        return b"\x44" + struct.pack(">f", value)
    if isinstance(value, str):
        body = b"\x00" + value.encode("utf-8")
        if len(body) <= 4:
            return bytes([0x70 | len(body)]) + body
        return bytes([0x75, len(body)]) + body
    return b"".join(_enc_oid_app(o) for o in value)


def _enc_apdu(a: Apdu) -> bytes:
    if isinstance(a, WhoIs):
        return bytes([0x10, SVC_WHO_IS])
    if isinstance(a, IAm):
        return (bytes([0x10, SVC_I_AM]) + _enc_oid_app(a.device)
                + b"\x22" + a.max_apdu.to_bytes(2, "big")
                + bytes([0x91, a.segmentation, 0x21, a.vendor]))
    if isinstance(a, ReadProperty):
        return (bytes([0x00, 0x05, a.invoke_id, SVC_READ_PROPERTY, 0x0C]) + a.oid.pack().to_bytes(4, "big")
                + bytes([0x19, a.property]))
    if isinstance(a, WriteProperty):
        return (bytes([0x00, 0x05, a.invoke_id, SVC_WRITE_PROPERTY, 0x0C]) + a.oid.pack().to_bytes(4, "big")
                + bytes([0x19, a.property, 0x3E]) + _enc_value(a.value) + b"\x3F")
    if isinstance(a, ReadPropertyAck):
        return (bytes([0x30, a.invoke_id, SVC_READ_PROPERTY, 0x0C]) + a.oid.pack().to_bytes(4, "big")
                + bytes([0x19, a.property, 0x3E]) + _enc_value(a.value) + b"\x3F")
    if isinstance(a, SimpleAck):
        return bytes([0x20, a.invoke_id, a.service])
    if isinstance(a, Error):
        cls, code = ERRORS[a.reason]
        return bytes([0x50, a.invoke_id, a.service, 0x91, cls, 0x91, code])
    raise TypeError(f"not an APDU: {a!r}")


def encode_bacnet(m: Union[BacnetMessage, Apdu]) -> bytes:
    if not isinstance(m, BacnetMessage):
        fn = BVLC_BROADCAST if isinstance(m, (WhoIs, IAm)) else BVLC_UNICAST
        m = BacnetMessage(m, fn)
    body = b"\x01\x00" + _enc_apdu(m.apdu)
    return bytes([BVLC_TYPE, m.bvlc_function]) + (len(body) + 4).to_bytes(2, "big") + body


# -- decoding -----------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated", f"need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def expect(self, tag: int, what: str) -> None:
        got = self.u8()
        if got != tag:
            raise DecodeError("bad-tag", f"expected {what} tag 0x{tag:02X}, got 0x{got:02X}")

    def peek(self) -> Optional[int]:
        return self.data[self.pos] if self.pos < len(self.data) else None

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing-bytes", f"{len(self.data) - self.pos} unparsed bytes")


def _dec_oid(r: _Reader) -> ObjectId:
    return ObjectId.unpack(int.from_bytes(r.take(4), "big"))


def _dec_value(r: _Reader) -> Value:
    tag = r.peek()
    if tag == 0x44:
        r.pos += 1
        return struct.unpack(">f", r.take(4))[0]
    if tag is not None and tag >> 4 == 0x7:
        r.pos += 1
        n = tag & 0x07
        if n == 5:
            n = r.u8()
            if n < 5:
                raise DecodeError("bad-tag", "extended string length below 5")
        elif n == 0 or n > 4:
            raise DecodeError("bad-tag", f"string tag 0x{tag:02X}")
        body = r.take(n)
        if body[0] != 0:
            raise DecodeError("bad-charset", f"charset {body[0]} is not UTF-8")
        try:
            return body[1:].decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("bad-string", "invalid UTF-8") from None
    oids = []
    while r.peek() == 0xC4:
        r.pos += 1
        oids.append(_dec_oid(r))
    if r.peek() != 0x3F:
        raise DecodeError("bad-tag", "unrecognised value encoding")
    return tuple(oids)


def _dec_context(r: _Reader) -> tuple[ObjectId, int]:
    r.expect(0x0C, "object-id")
    oid = _dec_oid(r)
    r.expect(0x19, "property-id")
    return oid, r.u8()


def _dec_apdu(r: _Reader) -> Apdu:
    pdu = r.u8()
    if pdu == 0x10:
        svc = r.u8()
        if svc == SVC_WHO_IS:
            return WhoIs()
        if svc == SVC_I_AM:
            r.expect(0xC4, "object-id")
            dev = _dec_oid(r)
            r.expect(0x22, "unsigned-16")
            max_apdu = int.from_bytes(r.take(2), "big")
            r.expect(0x91, "enumerated")
            seg = r.u8()
            if seg > 3:
                raise DecodeError("bad-value", f"segmentation {seg}")
            r.expect(0x21, "unsigned-8")
            return IAm(dev, max_apdu, seg, r.u8())
        raise DecodeError("unknown-service", f"unconfirmed service 0x{svc:02X}")
    if pdu == 0x00:
        r.expect(0x05, "max-apdu")
        invoke, svc = r.u8(), r.u8()
        if svc == SVC_READ_PROPERTY:
            oid, prop = _dec_context(r)
            return ReadProperty(oid, prop, invoke)
        if svc == SVC_WRITE_PROPERTY:
            oid, prop = _dec_context(r)
            r.expect(0x3E, "opening")
            r.expect(0x44, "real")
            value = struct.unpack(">f", r.take(4))[0]
            r.expect(0x3F, "closing")
            return WriteProperty(oid, prop, value, invoke)
        raise DecodeError("unknown-service", f"confirmed service 0x{svc:02X}")
    if pdu == 0x30:
        invoke, svc = r.u8(), r.u8()
        if svc != SVC_READ_PROPERTY:
            raise DecodeError("unknown-service", f"complex-ack service 0x{svc:02X}")
        oid, prop = _dec_context(r)
        r.expect(0x3E, "opening")
        value = _dec_value(r)
        r.expect(0x3F, "closing")
        return ReadPropertyAck(oid, prop, value, invoke)
    if pdu == 0x20:
        invoke, svc = r.u8(), r.u8()
        return SimpleAck(invoke, svc)
    if pdu == 0x50:
        invoke, svc = r.u8(), r.u8()
        r.expect(0x91, "error-class")
        cls = r.u8()
        r.expect(0x91, "error-code")
        code = r.u8()
        reason = _ERROR_BY_CODE.get((cls, code))
        if reason is None:
            raise DecodeError("unknown-error", f"error class {cls} code {code}")
        return Error(invoke, reason, svc)
    raise DecodeError("unknown-pdu", f"PDU type 0x{pdu:02X}")


def decode_bacnet(data: bytes) -> BacnetMessage:
    """Parse a frame of the profile; every failure is a :class:`DecodeError`."""
    data = bytes(data)
    if len(data) < 4:
        raise DecodeError("too-short", f"{len(data)} bytes")
    if data[0] != BVLC_TYPE:
        raise DecodeError("bad-magic", f"BVLC type 0x{data[0]:02X}")
    fn = data[1]
    if fn not in (BVLC_UNICAST, BVLC_BROADCAST):
        raise DecodeError("bad-function", f"BVLC function 0x{fn:02X}")
    declared = int.from_bytes(data[2:4], "big")
    if declared != len(data):
        raise DecodeError("length-mismatch", f"BVLC says {declared}, frame has {len(data)}")
    r = _Reader(data, 4)
    if r.take(2) != b"\x01\x00":
        raise DecodeError("bad-npdu", "expected NPDU 01 00")
    try:
        apdu = _dec_apdu(r)
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        # field range checks in the dataclasses
        raise DecodeError("bad-value", str(exc)) from None
    r.done()
    return BacnetMessage(apdu, fn)


# -- simulated device ---------------------------------------------------------------


@dataclass
class BacnetObject:
    oid: ObjectId
    name: str
    present_value: Optional[float] = None
    writable: bool = False
    readable: bool = True


ActuatorHook = Callable[[ObjectId, float], None]


class SimulatedBacnetDevice:
    """A controller exposing a device object and a table of analog objects.

    ``respond`` is a pure frame-in/frame-out function so the same device can be
    served over the simulator (:meth:`attach`) or a UDP socket
    (:class:`UdpDeviceServer`).
    """

    def __init__(self, instance: int, name: str = "controller", vendor: int = 7, max_apdu: int = 1024,
                 objects: Iterable[BacnetObject] = (), on_write: Optional[ActuatorHook] = None):
        self.device = BacnetObject(ObjectId(OBJ_DEVICE, instance), name)
        self.vendor = vendor
        self.max_apdu = max_apdu
        self.table: dict[ObjectId, BacnetObject] = {self.device.oid: self.device}
        for obj in objects:
            self.add(obj)
        self.on_write = on_write
        self.requests = 0

    def add(self, obj: BacnetObject) -> None:
        if obj.oid in self.table:
            raise ValueError(f"duplicate object {obj.oid}")
        if obj.oid.object_type == OBJ_DEVICE:
            raise ValueError("a device holds exactly one device object")
        self.table[obj.oid] = obj

    @property
    def object_list(self) -> tuple:
        return tuple(self.table)

    def i_am(self) -> IAm:
        return IAm(self.device.oid, self.max_apdu, SEGMENTATION_NONE, self.vendor)

    def _read(self, req: ReadProperty) -> Apdu:
        obj = self.table.get(req.oid)
        if obj is None:
            return Error(req.invoke_id, "unknown-object", SVC_READ_PROPERTY)
        if req.property == PROP_OBJECT_LIST and obj is self.device:
            value: Value = self.object_list
        elif req.property == PROP_OBJECT_NAME:
            value = obj.name
        elif req.property == PROP_PRESENT_VALUE and obj.present_value is not None and obj.readable:
            value = obj.present_value
        else:
            return Error(req.invoke_id, "unknown-property", SVC_READ_PROPERTY)
        return ReadPropertyAck(req.oid, req.property, value, req.invoke_id)

    def _write(self, req: WriteProperty) -> Apdu:
        obj = self.table.get(req.oid)
        if obj is None:
            return Error(req.invoke_id, "unknown-object", SVC_WRITE_PROPERTY)
        if req.property != PROP_PRESENT_VALUE or not obj.writable:
            return Error(req.invoke_id, "write-access-denied", SVC_WRITE_PROPERTY)
        changed = obj.present_value != req.value
        obj.present_value = req.value
        if changed and self.on_write is not None and obj.oid.object_type == OBJ_ANALOG_OUTPUT:
            self.on_write(obj.oid, req.value)
        return SimpleAck(req.invoke_id, SVC_WRITE_PROPERTY)

    def respond(self, frame: bytes) -> Optional[bytes]:
        try:
            msg = decode_bacnet(frame)
        except DecodeError:
            return None
        self.requests += 1
        a = msg.apdu
        if isinstance(a, WhoIs):
            return encode_bacnet(BacnetMessage(self.i_am(), BVLC_BROADCAST))
        if isinstance(a, ReadProperty):
            reply = self._read(a)
        elif isinstance(a, WriteProperty):
            reply = self._write(a)
        else:
            return None
        return encode_bacnet(BacnetMessage(reply, BVLC_UNICAST))

    def attach(self, sim: Simulation, endpoint_id: str):
        def handler(ev: Event) -> None:
            if ev.source is None:
                return
            reply = self.respond(ev.payload)
            if reply is not None:
                sim.send(endpoint_id, ev.source, reply)
        return sim.add_endpoint(endpoint_id, handler)


def attach_responder(sim: Simulation, endpoint_id: str, respond: Callable[[bytes], Optional[bytes]]):
    """Serve an arbitrary frame-in/frame-out function at ``endpoint_id``."""
    def handler(ev: Event) -> None:
        if ev.source is None:
            return
        reply = respond(ev.payload)
        if reply is not None:
            sim.send(endpoint_id, ev.source, reply)
    return sim.add_endpoint(endpoint_id, handler)


def random_responder(sim: Simulation, endpoint_id: str, max_len: int = 64):
    """Endpoint answering every datagram with seeded random bytes.

    Half of the replies start with the BVLC magic and a correct length so they
    survive the cheapest checks and exercise the deeper decoder paths.
    """
    rng = sim.rng(f"bacnet/random/{endpoint_id}")

    def respond(_frame: bytes) -> bytes:
        n = rng.randint(0, max_len)
        body = rng.randbytes(n)
        if rng.draw(2) and n >= 4:
            body = bytes([BVLC_TYPE, BVLC_BROADCAST]) + n.to_bytes(2, "big") + body[4:]
        return body
    return attach_responder(sim, endpoint_id, respond)


# -- transports ---------------------------------------------------------------------


class SimTransport:
    """Scanner transport over the in-memory simulator."""

    concurrent = False

    def __init__(self, sim: Simulation, client_id: str = "scanner"):
        self.sim = sim
        self.client_id = client_id
        self.endpoint = sim.add_endpoint(client_id)

    def request(self, endpoint: str, frame: bytes, timeout_us: int) -> tuple[Optional[bytes], int]:
        inbox = self.endpoint.inbox
        inbox.clear()
        start = self.sim.now

        def replied() -> bool:
            return any(src == endpoint for src, _ in inbox)

        self.sim.send(self.client_id, endpoint, frame)
        self.sim.run_until(start + timeout_us, until=replied)
        for src, payload in inbox:
            if src == endpoint:
                inbox.clear()
                return payload, self.sim.now - start
        inbox.clear()
        return None, timeout_us


class ScanNotAllowed(PermissionError):
    """Target outside the explicit socket-mode allowlist."""


class RateLimiter:
    def __init__(self, rate_per_s: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate_per_s <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate_per_s
        self._clock = clock
        self._sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is None or self._next <= now:
                self._next = now + self.interval
                return
            wait = self._next - now
            self._next += self.interval
        self._sleep(wait)


def _split_host(endpoint: str, default_port: int) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if sep and host and port.isdigit():
        return host, int(port)
    return endpoint, default_port


class UdpTransport:
    """Scanner transport over real datagram sockets.

    Every target must fall inside ``allowlist`` (addresses or CIDR networks)
    and probes are paced to ``rate_per_s``.  Each request owns its socket.
    """

    concurrent = True

    def __init__(self, allowlist: Sequence[str], rate_per_s: float = 10.0, port: int = DEFAULT_PORT):
        if not allowlist:
            raise ScanNotAllowed("socket scans need an explicit allowlist")
        self.allowlist = [ipaddress.ip_network(a, strict=False) for a in allowlist]
        self.port = port
        self.limiter = RateLimiter(rate_per_s)

    def allowed(self, host: str) -> bool:
        try:
            addr = ipaddress.ip_address(host)
        except ValueError:
            return False
        return any(addr in net for net in self.allowlist)

    def request(self, endpoint: str, frame: bytes, timeout_us: int) -> tuple[Optional[bytes], int]:
        host, port = _split_host(endpoint, self.port)
        if not self.allowed(host):
            raise ScanNotAllowed(f"{host} is not in the scan allowlist")
        self.limiter.acquire()
        start = time.perf_counter_ns()
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
                sock.settimeout(timeout_us / 1e6)
                sock.sendto(frame, (host, port))
                while True:
                    try:
                        data, peer = sock.recvfrom(MAX_FRAME + 1)
                    except socket.timeout:
                        return None, timeout_us
                    if peer[0] == host and peer[1] == port:
                        return data, (time.perf_counter_ns() - start) // 1000
        except OSError as exc:
            raise TransportError(exc.errno, f"{endpoint}: {exc.strerror or exc}") from exc


class UdpDeviceServer:
    """Serve a frame-in/frame-out function on a UDP socket in a background thread."""

    def __init__(self, respond: Callable[[bytes], Optional[bytes]], host: str = "127.0.0.1", port: int = 0):
        self.respond = respond
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.05)
        self.address = self.sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                data, peer = self.sock.recvfrom(MAX_FRAME + 1)
            except socket.timeout:
                continue
            except OSError:
                return
            reply = self.respond(data)
            if reply is not None:
                self.sock.sendto(reply, peer)

    def __enter__(self) -> "UdpDeviceServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        self._thread.join()
        self.sock.close()


# -- scanner ------------------------------------------------------------------------

BACNET_DEVICE = "bacnet_device"
NO_RESPONSE = "no_response"
NON_BACNET = "non_bacnet"
TRANSPORT_ERROR = "transport_error"


@dataclass(frozen=True)
class DeviceProbe:
    endpoint: str
    verdict: str
    device_id: Optional[ObjectId] = None
    vendor: Optional[int] = None
    max_apdu: Optional[int] = None
    rtt_us: int = 0
    detail: str = ""

    def __post_init__(self):
        if (self.device_id is not None) != (self.verdict == BACNET_DEVICE):
            raise ValueError("device_id is present exactly when the verdict is bacnet_device")

    def to_dict(self) -> dict:
        return {"endpoint": self.endpoint, "verdict": self.verdict,
                "device_id": str(self.device_id) if self.device_id else None,
                "vendor": self.vendor, "rtt_us": self.rtt_us, "detail": self.detail}


Transport = Union[SimTransport, UdpTransport]


def scan_host(transport: Transport, endpoint: str, timeout_ms: float = 1000) -> DeviceProbe:
    if timeout_ms <= 0:
        raise ValueError("timeout must be positive")
    timeout_us = int(timeout_ms * 1000)
    try:
        reply, rtt = transport.request(endpoint, encode_bacnet(WhoIs()), timeout_us)
    except TransportError as exc:
        return DeviceProbe(endpoint, TRANSPORT_ERROR, detail=str(exc))
    if reply is None:
        return DeviceProbe(endpoint, NO_RESPONSE, rtt_us=rtt)
    try:
        msg = decode_bacnet(reply)
    except DecodeError as exc:
        return DeviceProbe(endpoint, NON_BACNET, rtt_us=rtt, detail=exc.code)
    if not isinstance(msg.apdu, IAm):
        return DeviceProbe(endpoint, NON_BACNET, rtt_us=rtt, detail=type(msg.apdu).__name__)
    if msg.apdu.device.object_type != OBJ_DEVICE:
        return DeviceProbe(endpoint, NON_BACNET, rtt_us=rtt, detail="i-am for a non-device object")
    a = msg.apdu
    return DeviceProbe(endpoint, BACNET_DEVICE, a.device, a.vendor, a.max_apdu, rtt)


def scan_hosts(transport: Transport, endpoints: Sequence[str], timeout_ms: float = 1000,
               workers: int = 8) -> list[DeviceProbe]:
    """Probe each endpoint; results come back in input order.

    Socket transports are probed with a bounded thread pool, the simulator
    sequentially (it is single-threaded by design).
    """
    if not getattr(transport, "concurrent", False) or workers <= 1:
        return [scan_host(transport, e, timeout_ms) for e in endpoints]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda e: scan_host(transport, e, timeout_ms), endpoints))


class BacnetClient:
    """Confirmed-request helper with invoke-id bookkeeping."""

    def __init__(self, transport: Transport, endpoint: str, timeout_ms: float = 1000):
        self.transport = transport
        self.endpoint = endpoint
        self.timeout_us = int(timeout_ms * 1000)
        self._invoke = 0

    def _next_invoke(self) -> int:
        self._invoke = (self._invoke + 1) & 0xFF
        return self._invoke

    def call(self, apdu: Apdu) -> Apdu:
        reply, _ = self.transport.request(self.endpoint, encode_bacnet(apdu), self.timeout_us)
        if reply is None:
            raise TimeoutError(f"{self.endpoint}: no reply")
        msg = decode_bacnet(reply)
        if getattr(msg.apdu, "invoke_id", None) != apdu.invoke_id:
            raise DecodeError("invoke-mismatch", f"reply does not answer invoke {apdu.invoke_id}")
        return msg.apdu

    def read(self, oid: ObjectId, prop: int) -> Union[ReadPropertyAck, Error]:
        return self.call(ReadProperty(oid, prop, self._next_invoke()))

    def write(self, oid: ObjectId, prop: int, value: float) -> Union[SimpleAck, Error]:
        return self.call(WriteProperty(oid, prop, value, self._next_invoke()))


@dataclass(frozen=True)
class ObjectEntry:
    oid: ObjectId
    name: Optional[str]
    present_value: Optional[float]
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {"oid": str(self.oid), "name": self.name, "present_value": self.present_value,
                "error": self.error}


def enumerate_objects(transport: Transport, probe: DeviceProbe, timeout_ms: float = 1000) -> list[ObjectEntry]:
    """Read the device's object list, then name and present value of each object."""
    if probe.verdict != BACNET_DEVICE:
        raise ValueError(f"{probe.endpoint} was not identified as a BACnet device")
    client = BacnetClient(transport, probe.endpoint, timeout_ms)
    ack = client.read(probe.device_id, PROP_OBJECT_LIST)
    if isinstance(ack, Error):
        raise DecodeError("enumeration-failed", f"object-list read refused: {ack.reason}")
    if not isinstance(ack.value, tuple):
        raise DecodeError("enumeration-failed", "object-list is not a list of object ids")
    out = []
    for oid in ack.value:
        errors = []
        name = value = None
        r = client.read(oid, PROP_OBJECT_NAME)
        if isinstance(r, Error):
            errors.append(f"name:{r.reason}")
        else:
            name = r.value
        if oid.object_type != OBJ_DEVICE:
            r = client.read(oid, PROP_PRESENT_VALUE)
            if isinstance(r, Error):
                errors.append(f"present-value:{r.reason}")
            else:
                value = r.value
        out.append(ObjectEntry(oid, name, value, ";".join(errors) or None))
    return out


def write_present_value(transport: Transport, endpoint: str, oid: ObjectId, value: float,
                        timeout_ms: float = 1000) -> Union[SimpleAck, Error]:
    return BacnetClient(transport, endpoint, timeout_ms).write(oid, PROP_PRESENT_VALUE, value)


def read_present_value(transport: Transport, endpoint: str, oid: ObjectId,
                       timeout_ms: float = 1000) -> Union[ReadPropertyAck, Error]:
    return BacnetClient(transport, endpoint, timeout_ms).read(oid, PROP_PRESENT_VALUE)


def demo_controller(instance: int = 102, on_write: Optional[ActuatorHook] = None) -> SimulatedBacnetDevice:
    """Room controller with a temperature input and a damper-angle output."""
    return SimulatedBacnetDevice(instance, "room-controller", vendor=7, objects=[
        BacnetObject(ObjectId(OBJ_ANALOG_INPUT, 1), "temp", 22.5),
        BacnetObject(ObjectId(OBJ_ANALOG_OUTPUT, 3), "damper", 0.0, writable=True),
    ], on_write=on_write)
