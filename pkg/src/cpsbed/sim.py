"""Deterministic discrete-event scheduler and in-memory datagram transport.

Every simulated ecosystem (KNX bus, smart-plug cloud, air-quality network,
BACnet LAN) runs on one :class:`Simulation`.  Time is an integer count of
microseconds; events fire in ``(fire_at, seq)`` order so simultaneous events
keep their enqueue order.  Randomness comes only from :class:`RngStream`
objects derived from the master seed, so a run is a pure function of its
configuration and seed.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TextIO

DEFAULT_LATENCY_US = 1000


class EndpointNotFound(KeyError):
    pass


class SimulationFault(RuntimeError):
    """A handler raised during dispatch; the run is aborted."""

    def __init__(self, endpoint: str, time_us: int, cause: BaseException):
        super().__init__(f"handler for endpoint {endpoint!r} failed at t={time_us}us: {cause!r}")
        self.endpoint = endpoint
        self.time_us = time_us
        self.cause = cause


class RngStream:
    """Named, independently seeded random stream.

    The generator is CPython's MT19937 seeded with the first 128 bits of
    ``sha256(f"{master_seed}:{name}")``.  Only ``getrandbits`` is used, so
    draws are integer arithmetic and stable across platforms; bounded draws
    use rejection sampling rather than ``randrange`` whose algorithm is not
    part of the stability guarantee.
    """

    __slots__ = ("name", "master_seed", "_bits")

    def __init__(self, master_seed: int, name: str):
        self.name = name
        self.master_seed = master_seed
        digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
        self._bits = random.Random(int.from_bytes(digest[:16], "big")).getrandbits

    def draw(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)``."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        if bound == 1:
            return 0
        k = (bound - 1).bit_length()
        bits = self._bits
        r = bits(k)
        while r >= bound:
            r = bits(k)
        return r

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]``."""
        return lo + self.draw(hi - lo + 1)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * (self._bits(53) / 9007199254740992.0)

    def choice(self, seq: Sequence):
        return seq[self.draw(len(seq))]

    def randbytes(self, n: int) -> bytes:
        if n == 0:
            return b""
        return self._bits(8 * n).to_bytes(n, "little")


def rng_draw(stream: RngStream, bound: int) -> int:
    return stream.draw(bound)


@dataclass(eq=False)
class Event:
    fire_at: int
    seq: int
    target: str
    payload: bytes
    source: Optional[str] = None
    cancelled: bool = False
    dispatched: bool = False

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    @property
    def is_timer(self) -> bool:
        return self.source is None


class EventHandle:
    def __init__(self, sim: "Simulation", event: Event):
        self._sim = sim
        self.event = event

    def cancel(self) -> bool:
        """Cancel the event; returns False if it was already dispatched or cancelled."""
        return self._sim._cancel(self.event)


Handler = Callable[[Event], None]


@dataclass
class Endpoint:
    id: str
    handler: Optional[Handler] = None
    inbox: deque = field(default_factory=deque)


class Simulation:
    def __init__(self, seed: int = 0, default_latency_us: int = DEFAULT_LATENCY_US):
        self.seed = seed
        self.default_latency_us = default_latency_us
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._pending = 0
        self._endpoints: dict[str, Endpoint] = {}
        self._latency: dict[frozenset, int] = {}
        self._streams: dict[str, RngStream] = {}
        self.log: list[tuple[int, int, str, bytes]] = []
        self.dropped = 0

    # -- registry -----------------------------------------------------------------

    def add_endpoint(self, endpoint_id: str, handler: Optional[Handler] = None) -> Endpoint:
        if endpoint_id in self._endpoints:
            raise ValueError(f"endpoint {endpoint_id!r} already registered")
        ep = Endpoint(endpoint_id, handler)
        self._endpoints[endpoint_id] = ep
        return ep

    def endpoint(self, endpoint_id: str) -> Endpoint:
        try:
            return self._endpoints[endpoint_id]
        except KeyError:
            raise EndpointNotFound(endpoint_id) from None

    def has_endpoint(self, endpoint_id: str) -> bool:
        return endpoint_id in self._endpoints

    def set_latency(self, a: str, b: str, latency_us: int) -> None:
        if latency_us < 0:
            raise ValueError("latency must be non-negative")
        self._latency[frozenset((a, b))] = latency_us

    def latency(self, a: str, b: str) -> int:
        return self._latency.get(frozenset((a, b)), self.default_latency_us)

    def rng(self, name: str) -> RngStream:
        stream = self._streams.get(name)
        if stream is None:
            stream = self._streams[name] = RngStream(self.seed, name)
        return stream

    # -- scheduling ---------------------------------------------------------------

    @property
    def pending(self) -> int:
        return self._pending

    def schedule(self, delay_us: int, target: str, payload: bytes = b"",
                 source: Optional[str] = None) -> EventHandle:
        if delay_us < 0:
            raise ValueError(f"delay must be non-negative, got {delay_us}")
        if target not in self._endpoints:
            raise EndpointNotFound(target)
        ev = Event(self.now + delay_us, self._seq, target, bytes(payload), source)
        self._seq += 1
        self._pending += 1
        heapq.heappush(self._queue, ev)
        return EventHandle(self, ev)

    def timer(self, endpoint_id: str, delay_us: int, tag: bytes = b"") -> EventHandle:
        """Self-addressed event (``source`` is None) used for periodic actors and timeouts."""
        return self.schedule(delay_us, endpoint_id, tag)

    def send(self, src: str, dst: str, payload: bytes, latency_us: Optional[int] = None) -> Optional[EventHandle]:
        """Datagram send.  Unknown destinations silently drop, like UDP to a dead host."""
        if dst not in self._endpoints:
            self.dropped += 1
            return None
        delay = self.latency(src, dst) if latency_us is None else latency_us
        return self.schedule(delay, dst, payload, source=src)

    def _cancel(self, ev: Event) -> bool:
        if ev.cancelled or ev.dispatched:
            return False
        ev.cancelled = True
        self._pending -= 1
        return True

    # -- running ------------------------------------------------------------------

    def run_until(self, t_end_us: int, until: Optional[Callable[[], bool]] = None) -> int:
        """Dispatch every event with ``fire_at <= t_end_us``; return the dispatch count.

        If ``until`` is given it is checked after each dispatch and stops the run
        early, leaving the clock at the last dispatched event.
        """
        if t_end_us < self.now:
            raise ValueError(f"t_end {t_end_us} is before now {self.now}")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t_end_us:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self._dispatch(ev)
            count += 1
            if until is not None and until():
                return count
        self.now = t_end_us
        return count

    def run_for(self, duration_us: int, until: Optional[Callable[[], bool]] = None) -> int:
        return self.run_until(self.now + duration_us, until)

    def _dispatch(self, ev: Event) -> None:
        self._pending -= 1
        self.now = ev.fire_at
        ev.dispatched = True
        self.log.append((ev.fire_at, ev.seq, ev.target, ev.payload))
        ep = self._endpoints[ev.target]
        if ev.source is not None:
            ep.inbox.append((ev.source, ev.payload))
        if ep.handler is not None:
            try:
                ep.handler(ev)
            except Exception as exc:
                raise SimulationFault(ev.target, ev.fire_at, exc) from exc

    # -- dispatch log -------------------------------------------------------------

    def log_lines(self) -> Iterable[str]:
        for t, seq, target, payload in self.log:
            yield f"{t}\t{seq}\t{target}\t{payload.hex()}\n"

    def export_log(self, fh: TextIO) -> None:
        fh.writelines(self.log_lines())

    def log_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.log_lines():
            h.update(line.encode())
        return h.hexdigest()


def parse_log(lines: Iterable[str]) -> list[tuple[int, int, str, bytes]]:
    out = []
    for line in lines:
        t, seq, target, hexpayload = line.rstrip("\n").split("\t")
        out.append((int(t), int(seq), target, bytes.fromhex(hexpayload)))
    return out
