"""Seeded blind-mutation fuzzer for the testbed's decoders.

Each execution picks a corpus entry, applies one to four mutations and feeds
the result to a target.  Outcomes are ``ok``, ``error:<code>`` for a
structured :class:`DecodeError`, or ``FAULT`` for anything else: an
unexpected exception, exhausted recursion, or a consistency failure where a
decoded value does not survive a second encode/decode cycle.

There is no coverage feedback.  Executions are split into fixed-size chunks;
chunk ``k`` draws from its own stream named after the target and ``k``, so a
campaign report does not depend on how many worker processes ran it.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import airquality, bacnet, knx, smartplug
from .errors import DecodeError
from .sim import RngStream

MAX_GROWTH = 16
MUTATIONS = ("bit_flip", "byte_set", "byte_insert", "byte_delete", "byte_duplicate",
             "truncate", "length_field_corrupt", "splice")
INTERESTING = (0x00, 0x01, 0x0F, 0x10, 0x7F, 0x80, 0xFE, 0xFF)
FAULT = "FAULT"
OK = "ok"
DEFAULT_CHUNK = 2000


# -- mutations ----------------------------------------------------------------------


@dataclass(frozen=True)
class LengthField:
    """Where a target keeps a length: ``offset`` and a bit ``mask`` (or 16-bit big endian)."""

    offset: int
    mask: int = 0xFF
    u16: bool = False


def _bit_flip(d: bytearray, rng: RngStream, ctx) -> bytearray:
    if d:
        i = rng.draw(len(d))
        d[i] ^= 1 << rng.draw(8)
    return d


def _byte_set(d: bytearray, rng: RngStream, ctx) -> bytearray:
    if d:
        i = rng.draw(len(d))
        d[i] = INTERESTING[rng.draw(len(INTERESTING))] if rng.draw(2) else rng.draw(256)
    return d


def _byte_insert(d: bytearray, rng: RngStream, ctx) -> bytearray:
    d.insert(rng.draw(len(d) + 1), rng.draw(256))
    return d


def _byte_delete(d: bytearray, rng: RngStream, ctx) -> bytearray:
    if d:
        i = rng.draw(len(d))
        n = 1 + rng.draw(min(4, len(d) - i))
        del d[i:i + n]
    return d


def _byte_duplicate(d: bytearray, rng: RngStream, ctx) -> bytearray:
    if d:
        i = rng.draw(len(d))
        n = 1 + rng.draw(min(MAX_GROWTH, len(d) - i))
        d[i:i] = d[i:i + n]
    return d


def _truncate(d: bytearray, rng: RngStream, ctx) -> bytearray:
    if d:
        del d[rng.draw(len(d)):]
    return d


def _length_field_corrupt(d: bytearray, rng: RngStream, ctx) -> bytearray:
    fields = [f for f in ctx[1] if f.offset + (2 if f.u16 else 1) <= len(d)]
    if not fields:
        return _byte_set(d, rng, ctx)
    f = fields[rng.draw(len(fields))]
    if f.u16:
        cur = int.from_bytes(d[f.offset:f.offset + 2], "big")
        new = rng.draw(0x10000) if rng.draw(4) == 0 else max(0, min(0xFFFF, cur + rng.draw(33) - 16))
        d[f.offset:f.offset + 2] = new.to_bytes(2, "big")
    else:
        keep = d[f.offset] & ~f.mask & 0xFF
        shift = (f.mask & -f.mask).bit_length() - 1
        d[f.offset] = keep | ((rng.draw((f.mask >> shift) + 1) << shift) & f.mask)
    return d


def _splice(d: bytearray, rng: RngStream, ctx) -> bytearray:
    corpus = ctx[0]
    if not corpus:
        return _byte_duplicate(d, rng, ctx)
    other = corpus[rng.draw(len(corpus))]
    i = rng.draw(len(d) + 1)
    j = rng.draw(len(other) + 1)
    out = d[:i] + other[j:]
    return out[:len(d) + MAX_GROWTH]


_OPS = {
    "bit_flip": _bit_flip, "byte_set": _byte_set, "byte_insert": _byte_insert,
    "byte_delete": _byte_delete, "byte_duplicate": _byte_duplicate, "truncate": _truncate,
    "length_field_corrupt": _length_field_corrupt, "splice": _splice,
}


def apply_mutation(kind: str, data: bytes, stream: RngStream, corpus: Sequence[bytes] = (),
                   length_fields: Sequence[LengthField] = ()) -> bytes:
    out = bytes(_OPS[kind](bytearray(data), stream, (corpus, length_fields)))
    assert len(out) <= len(data) + MAX_GROWTH
    return out


def mutate_traced(seed_input: bytes, stream: RngStream, corpus: Sequence[bytes] = (),
                  length_fields: Sequence[LengthField] = ()) -> tuple[bytes, list[str]]:
    data = bytes(seed_input)
    kinds = []
    for _ in range(1 + stream.draw(4)):
        kind = MUTATIONS[stream.draw(len(MUTATIONS))]
        data = apply_mutation(kind, data, stream, corpus, length_fields)
        kinds.append(kind)
    return data, kinds


def mutate(seed_input: bytes, stream: RngStream, corpus: Sequence[bytes] = (),
           length_fields: Sequence[LengthField] = ()) -> bytes:
    """Apply 1-4 mutations drawn from ``stream``."""
    return mutate_traced(seed_input, stream, corpus, length_fields)[0]


# -- targets ------------------------------------------------------------------------


@dataclass(frozen=True)
class FuzzTarget:
    name: str
    entry: Callable[[bytes], object]
    encode: Optional[Callable[[object], bytes]] = None
    corpus: tuple = ()
    length_fields: tuple = ()

    def run(self, data: bytes) -> tuple[str, str]:
        """Return ``(outcome, detail)``; never raises for ordinary exceptions."""
        try:
            value = self.entry(data)
        except DecodeError as exc:
            return f"error:{exc.code}", ""
        except RecursionError:
            return FAULT, "RecursionError"
        except Exception as exc:  # noqa: BLE001 - classifying arbitrary failures is the point
            return FAULT, f"{type(exc).__name__}: {exc}"
        if self.encode is None:
            return OK, ""
        try:
            first = self.encode(value)
            again = self.encode(self.entry(first))
        except Exception as exc:  # noqa: BLE001
            return FAULT, f"consistency: {type(exc).__name__}: {exc}"
        if again != first:
            return FAULT, "consistency: re-encoding is not stable"
        return OK, ""


@dataclass(frozen=True)
class ExternalTarget:
    """Third-party decoder run as a process: input on stdin, crash = abnormal exit.

    Exit status 0 is ``ok``, a positive status is a structured rejection,
    death by signal or a timeout is a FAULT.
    """

    name: str
    argv: tuple
    timeout_s: float = 5.0
    corpus: tuple = ()
    length_fields: tuple = ()

    def run(self, data: bytes) -> tuple[str, str]:
        try:
            proc = subprocess.run(list(self.argv), input=data, capture_output=True, timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            return FAULT, "timeout"
        if proc.returncode == 0:
            return OK, ""
        if proc.returncode > 0:
            return f"error:exit-{proc.returncode}", ""
        return FAULT, f"signal {-proc.returncode}"


def sentinel_decode(frame: bytes) -> knx.Telegram:
    """KNX decoder with a planted bug, used to prove the harness can find faults.

    A length nibble of 15 makes it index past the payload before the checksum
    is verified.  Never use it for anything but harness self-tests.
    """
    if len(frame) < 6:
        raise DecodeError("too-short", f"{len(frame)} bytes")
    nibble = frame[5] & 0x0F
    if nibble == 15:
        last = frame[7 + nibble]  # out of bounds for every frame shorter than 23 bytes
        del last
    return knx.decode_telegram(frame)


_KNX_CORPUS = (
    bytes.fromhex("BC110A1100E300800C1A3C"),
    knx.encode_telegram(knx.Telegram(knx.IndividualAddress(1, 1, 1), knx.GroupAddress(1, 0, 1), knx.Apci.GROUP_VALUE_READ)),
    knx.encode_telegram(knx.Telegram(knx.IndividualAddress(1, 1, 11), knx.GroupAddress(1, 0, 2),
                                     knx.Apci.GROUP_VALUE_RESPONSE, knx.encode_dpt9(-30.0))),
)
_KNX_LENGTHS = (LengthField(5, 0x0F),)

_BAC_CORPUS = tuple(bacnet.encode_bacnet(m) for m in (
    bacnet.WhoIs(),
    bacnet.IAm(bacnet.ObjectId(8, 102), 1024, 3, 7),
    bacnet.ReadProperty(bacnet.ObjectId(8, 102), 76, 1),
    bacnet.ReadPropertyAck(bacnet.ObjectId(8, 102), 76, (bacnet.ObjectId(8, 102), bacnet.ObjectId(0, 1)), 1),
    bacnet.ReadPropertyAck(bacnet.ObjectId(0, 1), 77, "temperature", 2),
    bacnet.WriteProperty(bacnet.ObjectId(1, 3), 85, 45.0, 3),
    bacnet.SimpleAck(3),
    bacnet.Error(4, "write-access-denied", 0x0F),
))
_BAC_LENGTHS = (LengthField(2, u16=True),)

_PLUG_CORPUS = (
    b"REG AC:CF:23:00:01:BD",
    b"HEARTBEAT AC:CF:23:00:01:BD",
    smartplug.auth_frame(smartplug.MacAddress.parse("AC:CF:23:00:01:BD"), "1234"),
    b"CMD AC:CF:23:00:01:BD OFF",
)

_AQ_CORPUS = (
    b"POST /update id=5C:CF:7F:00:01:00&pm25=1.5&ts=3600",
    b"POST /update id=5C:CF:7F:00:01:01&pm25=500.0&ts=7199",
)


def _registry() -> dict[str, FuzzTarget]:
    return {
        "knx": FuzzTarget("knx", knx.decode_telegram, knx.encode_telegram, _KNX_CORPUS, _KNX_LENGTHS),
        "bacnet": FuzzTarget("bacnet", bacnet.decode_bacnet, bacnet.encode_bacnet, _BAC_CORPUS, _BAC_LENGTHS),
        "smartplug": FuzzTarget("smartplug", smartplug.decode_client_message, smartplug.encode_client_message,
                                _PLUG_CORPUS),
        "airquality": FuzzTarget("airquality", airquality.decode_report, airquality.encode_report, _AQ_CORPUS),
        "sentinel": FuzzTarget("sentinel", sentinel_decode, knx.encode_telegram, _KNX_CORPUS, _KNX_LENGTHS),
    }


TARGETS = _registry()
SHIPPED = ("knx", "bacnet", "smartplug", "airquality")


def get_target(name: str) -> FuzzTarget:
    try:
        return TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown fuzz target {name!r}; choose from {', '.join(sorted(TARGETS))}") from None


def load_corpus(directory) -> tuple:
    paths = sorted(Path(directory).glob("*.bin"))
    if not paths:
        raise ValueError(f"no .bin seeds in {directory}")
    return tuple(p.read_bytes() for p in paths)


# -- campaign -----------------------------------------------------------------------


@dataclass
class FaultCase:
    index: int
    input: bytes
    detail: str
    minimized: Optional[bytes] = None

    def to_dict(self) -> dict:
        return {"index": self.index, "input_hex": self.input.hex(), "detail": self.detail,
                "minimized_hex": None if self.minimized is None else self.minimized.hex()}


@dataclass
class FuzzReport:
    target: str
    master_seed: int
    executions: int
    histogram: Counter = field(default_factory=Counter)
    faults: list = field(default_factory=list)
    fault_count: int = 0
    corpus_digest: str = ""

    @property
    def first_fault(self) -> Optional[int]:
        return self.faults[0].index if self.faults else None

    def merge(self, other: "FuzzReport", max_faults: int = 20) -> "FuzzReport":
        faults = sorted(self.faults + other.faults, key=lambda f: f.index)[:max_faults]
        return FuzzReport(self.target, self.master_seed, self.executions + other.executions,
                          self.histogram + other.histogram, faults, self.fault_count + other.fault_count,
                          self.corpus_digest)

    def to_dict(self) -> dict:
        return {"target": self.target, "master_seed": self.master_seed, "executions": self.executions,
                "histogram": dict(sorted(self.histogram.items())), "fault_count": self.fault_count,
                "first_fault": self.first_fault, "faults": [f.to_dict() for f in self.faults],
                "corpus_digest": self.corpus_digest}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def corpus_digest(corpus: Sequence[bytes]) -> str:
    h = hashlib.sha256()
    for c in corpus:
        h.update(len(c).to_bytes(4, "big") + c)
    return h.hexdigest()[:16]


def _run_chunk(target, corpus: tuple, master_seed: int, chunk: int, start: int, count: int,
               max_faults: int) -> FuzzReport:
    if isinstance(target, str):
        target = get_target(target)
    stream = RngStream(master_seed, f"fuzz/{target.name}/{chunk}")
    hist: Counter = Counter()
    faults = []
    fault_count = 0
    n = len(corpus)
    lf = target.length_fields
    run = target.run
    for i in range(start, start + count):
        data = mutate(corpus[stream.draw(n)], stream, corpus, lf)
        outcome, detail = run(data)
        hist[outcome] += 1
        if outcome == FAULT:
            fault_count += 1
            if len(faults) < max_faults:
                faults.append(FaultCase(i, data, detail))
    return FuzzReport(target.name, master_seed, count, hist, faults, fault_count)


def run_campaign(target, corpus: Optional[Sequence[bytes]] = None, executions: int = 10_000,
                 master_seed: int = 0, workers: int = 1, chunk_size: int = DEFAULT_CHUNK,
                 max_faults: int = 20, minimize_faults: int = 3) -> FuzzReport:
    """Fuzz ``target`` (a registry name or a target object) for ``executions`` runs."""
    if isinstance(target, str):
        target = get_target(target)
    corpus = tuple(target.corpus if corpus is None else corpus)
    if not corpus:
        raise ValueError("corpus must not be empty")
    if executions < 0 or chunk_size < 1:
        raise ValueError("executions must be >= 0 and chunk size >= 1")
    jobs = [(k, k * chunk_size, min(chunk_size, executions - k * chunk_size))
            for k in range((executions + chunk_size - 1) // chunk_size)]
    # registry targets travel to worker processes by name
    ref = target.name if TARGETS.get(target.name) is target else target
    report = FuzzReport(target.name, master_seed, 0, corpus_digest=corpus_digest(corpus))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, ref, corpus, master_seed, k, s, c, max_faults)
                       for k, s, c in jobs]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_chunk(target, corpus, master_seed, k, s, c, max_faults) for k, s, c in jobs]
    for part in parts:
        report = report.merge(part, max_faults)
    for case in report.faults[:minimize_faults]:
        try:
            case.minimized = minimize(target, case.input)
        except UnstableFault:
            case.minimized = None
    return report


# -- minimisation -------------------------------------------------------------------


class UnstableFault(RuntimeError):
    """The input did not reproduce its FAULT when replayed."""


def _signature(detail: str) -> str:
    return detail.split(":", 1)[0]


def minimize(target, data: bytes) -> bytes:
    """Shrink a faulting input while it keeps faulting the same way.

    Passes: drop chunks of halving size, drop single bytes, zero single bytes.
    They repeat until none makes progress, so the result is a fixed point and
    minimising it again returns it unchanged.
    """
    if isinstance(target, str):
        target = get_target(target)
    outcome, detail = target.run(data)
    if outcome != FAULT:
        raise UnstableFault("input does not fault on replay")
    sig = _signature(detail)

    def faults(candidate: bytes) -> bool:
        out, det = target.run(candidate)
        return out == FAULT and _signature(det) == sig

    cur = bytes(data)
    while True:
        before = cur
        size = max(1, len(cur) // 2)
        while size >= 1:
            i = 0
            while i < len(cur):
                cand = cur[:i] + cur[i + size:]
                if cand != cur and faults(cand):
                    cur = cand
                else:
                    i += size
            size //= 2
        for i in range(len(cur)):
            if cur[i] != 0:
                cand = cur[:i] + b"\x00" + cur[i + 1:]
                if faults(cand):
                    cur = cand
        if cur == before:
            return cur


def write_fault_files(report: FuzzReport, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in report.faults:
        p = out / f"{report.target}-fault-{f.index}.bin"
        p.write_bytes(f.input)
        paths.append(p)
        if f.minimized is not None:
            q = out / f"{report.target}-fault-{f.index}-min.bin"
            q.write_bytes(f.minimized)
            paths.append(q)
    return paths
