"""Man-in-the-middle tap pair for a KNX line and false-data-injection policies.

Cutting a KNX link splits the bus into a sensor segment and a controller
segment.  Two tap endpoints, one per segment, relay every telegram to the other
side after a fixed forwarding delay, optionally rewriting it.  By default only
the sensor->controller direction is subject to the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .arch import Topology
from .errors import DecodeError
from .knx import (
    Apci,
    GroupAddress,
    IndividualAddress,
    KnxBus,
    RoomController,
    Telegram,
    TemperatureSensor,
    decode_dpt9,
    decode_telegram,
    dpt9_resolution,
    encode_dpt9,
    encode_telegram,
)
from .sim import Event, Simulation

SENSOR_TO_CONTROLLER = "s2c"
CONTROLLER_TO_SENSOR = "c2s"


class Mode(str, Enum):
    PASSTHROUGH = "passthrough"
    BIAS = "bias"
    DROP = "drop"
    REPLAY_LAST = "replay_last"  # freshness attack; goes beyond plain value rewriting


@dataclass(frozen=True)
class Match:
    """Telegram selector; ``None`` for a field means any value."""

    sources: Optional[frozenset] = None
    dests: Optional[frozenset] = None
    apcis: Optional[frozenset] = None

    def __call__(self, t: Telegram) -> bool:
        return ((self.sources is None or t.source in self.sources)
                and (self.dests is None or t.dest in self.dests)
                and (self.apcis is None or t.apci in self.apcis))

    @classmethod
    def from_config(cls, cfg: dict) -> "Match":
        def opt(key, parse):
            vals = cfg.get(key)
            return None if vals is None else frozenset(parse(v) for v in vals)
        return cls(opt("sources", IndividualAddress.parse), opt("dests", GroupAddress.parse),
                   opt("apcis", lambda name: Apci[name.upper()]))


@dataclass(frozen=True)
class InjectionPolicy:
    mode: Mode = Mode.PASSTHROUGH
    bias_celsius: float = 0.0
    match: Match = Match()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))


def rewrite_temperature(t: Telegram, bias_celsius: float) -> Telegram:
    if len(t.payload) != 2:
        raise ValueError(f"expected a 2-byte DPT 9 payload, got {len(t.payload)} bytes")
    if bias_celsius == 0.0:
        return t
    return t.with_payload(encode_dpt9(decode_dpt9(t.payload) + bias_celsius))


@dataclass
class ForwardRecord:
    time_us: int
    direction: str
    original: bytes
    forwarded: Optional[bytes]
    note: str = ""

    def line(self) -> str:
        fwd = self.forwarded.hex().upper() if self.forwarded is not None else "-"
        return f"{self.time_us}\t{self.direction}\t{self.original.hex().upper()}\t{fwd}\n"


class TapPair:
    def __init__(self, sim: Simulation, seg_sensor: KnxBus, seg_controller: KnxBus,
                 policy: InjectionPolicy, latency_us: int = 1000, modify_reverse: bool = False,
                 name: str = "tap"):
        self.sim = sim
        self.seg_sensor = seg_sensor
        self.seg_controller = seg_controller
        self.policy = policy
        self.latency_us = latency_us
        self.modify_reverse = modify_reverse
        self.log: list[ForwardRecord] = []
        self.skipped: list[ForwardRecord] = []
        self._last_match: Optional[bytes] = None
        self.sensor_end = f"{name}-sensor"
        self.controller_end = f"{name}-controller"
        sim.add_endpoint(self.sensor_end, lambda ev: self._on_event(ev, SENSOR_TO_CONTROLLER))
        sim.add_endpoint(self.controller_end, lambda ev: self._on_event(ev, CONTROLLER_TO_SENSOR))
        self._ports = {
            self.sensor_end: seg_sensor.attach(self.sensor_end),
            self.controller_end: seg_controller.attach(self.controller_end),
        }

    def _on_event(self, ev: Event, direction: str) -> None:
        here = self.sensor_end if direction == SENSOR_TO_CONTROLLER else self.controller_end
        there = self.controller_end if direction == SENSOR_TO_CONTROLLER else self.sensor_end
        if ev.is_timer:
            # delayed egress scheduled by the other tap
            self._ports[here].send(ev.payload)
            return
        out = self._apply(ev.payload, direction)
        if out is not None:
            self.sim.timer(there, self.latency_us, out)

    def _apply(self, frame: bytes, direction: str) -> Optional[bytes]:
        now = self.sim.now
        try:
            t = decode_telegram(frame)
        except DecodeError as exc:
            self.log.append(ForwardRecord(now, direction, frame, None, f"malformed:{exc.code}"))
            return None
        policy = self.policy
        if direction == CONTROLLER_TO_SENSOR and not self.modify_reverse:
            policy = InjectionPolicy()
        out, note = frame, ""
        if policy.mode is not Mode.PASSTHROUGH and policy.match(t):
            if policy.mode is Mode.DROP:
                out, note = None, "dropped"
            elif policy.mode is Mode.REPLAY_LAST:
                if self._last_match is not None:
                    out, note = self._last_match, "replayed"
                self._last_match = frame
            elif policy.mode is Mode.BIAS and t.apci is not Apci.GROUP_VALUE_READ:
                try:
                    out = encode_telegram(rewrite_temperature(t, policy.bias_celsius))
                    note = "biased"
                except ValueError as exc:
                    note = f"skip:{exc}"
        rec = ForwardRecord(now, direction, frame, out, note)
        self.log.append(rec)
        if note.startswith("skip"):
            self.skipped.append(rec)
        return out

    def export_log(self) -> str:
        return "".join(r.line() for r in self.log)


def knx_sides(topology: Topology, cut_link: str) -> tuple[set, set]:
    """Nodes on each side of ``cut_link`` within the KNX line it belongs to."""
    link = topology.link(cut_link)
    if link.io_class != "knx":
        raise ValueError(f"link {cut_link!r} is {link.io_class}, a tap needs a knx link")

    def flood(start):
        seen = {start}
        todo = [start]
        while todo:
            cur = todo.pop()
            for nb, l in topology.neighbours(cur):
                if l.id != cut_link and l.io_class == "knx" and nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        return seen

    side_a, side_b = flood(link.a), flood(link.b)
    if side_a & side_b:
        raise ValueError(f"cutting {cut_link!r} does not split the KNX line (loop)")
    return side_a, side_b


def deploy_tap(sim: Simulation, bus: KnxBus, topology: Topology, cut_link: str,
               policy: InjectionPolicy, latency_us: int = 1000, modify_reverse: bool = False) -> TapPair:
    side_a, side_b = knx_sides(topology, cut_link)
    kinds = {n.id: n.kind for n in topology.nodes}
    if any(kinds[n] == "controller" for n in side_a):
        side_a, side_b = side_b, side_a
    sensor_side, controller_side = side_a, side_b
    unknown = [d for d in bus.devices if d not in sensor_side | controller_side]
    if unknown:
        raise ValueError(f"bus devices not placed on either side of {cut_link!r}: {unknown}")
    seg_s = KnxBus(sim, f"{bus.name}-sensor", bus.latency_us)
    seg_c = KnxBus(sim, f"{bus.name}-controller", bus.latency_us)
    for dev in list(bus.devices):
        port = bus.ports[dev]
        (seg_s if dev in sensor_side else seg_c).adopt(port)
    return TapPair(sim, seg_s, seg_c, policy, latency_us, modify_reverse, name=f"{bus.name}-tap")


# -- two-sensor false data injection run ----------------------------------------------

BIASED_SENSOR = IndividualAddress(1, 1, 10)
CLEAN_SENSOR = IndividualAddress(1, 1, 11)


@dataclass
class FdiRun:
    sim: Simulation
    tap: TapPair
    sensors: dict
    controller: RoomController
    bias: float

    def biased_errors(self) -> list[tuple[float, float, float]]:
        """(true, received, tolerance) per telegram of the biased sensor, in order."""
        sent = self.sensors["temp-sensor-1"].published
        got = self.controller.readings.get(BIASED_SENSOR, [])
        out = []
        for (_, true, _), (_, received) in zip(sent, got):
            tol = 0.01 * 2 ** max_exponent(true, true + self.bias)
            out.append((true, received, tol))
        return out

    def biased_within_quantization(self) -> float:
        rows = self.biased_errors()
        if not rows:
            return 0.0
        ok = sum(abs(rec - (true + self.bias)) <= tol + 1e-9 for true, rec, tol in rows)
        return ok / len(rows)

    def clean_frames_identical(self) -> bool:
        sent = [f for _, _, f in self.sensors["temp-sensor-2"].published]
        src = CLEAN_SENSOR.to_int().to_bytes(2, "big")
        received = [f for _, f in self.controller.frames if f[1:3] == src]
        return bool(sent) and sent == received


def max_exponent(*values: float) -> int:
    return max(int(round(math.log2(dpt9_resolution(v) / 0.01))) for v in values)


def run_two_sensor_fdi(topology: Topology, bias: float, duration_s: int = 3600, seed: int = 0,
                       period_s: int = 60, cut_link: str = "knx-trunk") -> FdiRun:
    sim = Simulation(seed=seed)
    bus = KnxBus(sim, "knx")
    group = GroupAddress(1, 0, 1)
    noise = {name: sim.rng(f"knx/{name}") for name in ("temp-sensor-1", "temp-sensor-2")}

    def profile(base, name):
        rng = noise[name]
        return lambda now: base + 1.5 * math.sin(2 * math.pi * now / 86_400e6) + rng.uniform(-0.2, 0.2)

    sensors = {
        "temp-sensor-1": TemperatureSensor(sim, "temp-sensor-1", bus, BIASED_SENSOR, group,
                                           profile(23.0, "temp-sensor-1"), period_s * 1_000_000),
        "temp-sensor-2": TemperatureSensor(sim, "temp-sensor-2", bus, CLEAN_SENSOR, GroupAddress(1, 0, 2),
                                           profile(22.0, "temp-sensor-2"), period_s * 1_000_000,
                                           first_at_us=period_s * 500_000),
    }
    controller = RoomController(sim, "room-controller", bus)
    policy = InjectionPolicy(Mode.BIAS, bias, Match(sources=frozenset({BIASED_SENSOR})))
    tap = deploy_tap(sim, bus, topology, cut_link, policy)
    sim.run_until(duration_s * 1_000_000 + 10_000)
    return FdiRun(sim, tap, sensors, controller, bias)
