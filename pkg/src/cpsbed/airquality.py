"""Air-quality monitoring network and the data pollution attack against it.

Devices post plaintext PM2.5 readings identified only by their MAC address;
the server registers any MAC it has not seen before.  A fake device that
claims the victim's MAC therefore blends its own values into the victim's
windowed average on the public map.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import DecodeError
from .sim import Event, EventHandle, Simulation
from .smartplug import MacAddress
from .svg import Svg, num

DEFAULT_INTERVAL_S = 60
DEFAULT_WINDOW_S = 3600

_LINE_RE = re.compile(
    r"^POST /update id=([0-9A-F]{2}(?::[0-9A-F]{2}){5})&pm25=(0|[1-9][0-9]{0,4})\.([0-9])&ts=(0|[1-9][0-9]{0,11})$"
)


@dataclass(frozen=True)
class AqReport:
    mac: MacAddress
    pm25: float
    ts: int

    def __post_init__(self):
        if not (self.pm25 >= 0 and math.isfinite(self.pm25)):
            raise ValueError("pm25 must be a finite non-negative number")
        if self.ts < 0:
            raise ValueError("timestamp must be non-negative")


def quantise(pm25: float) -> float:
    """Value as it appears after the one-decimal wire encoding."""
    return int(f"{pm25:.1f}".replace(".", "")) / 10


def encode_report(r: AqReport) -> bytes:
    return f"POST /update id={r.mac}&pm25={r.pm25:.1f}&ts={r.ts}".encode("ascii")


def decode_report(data: bytes) -> AqReport:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise DecodeError("not-ascii", "report is not ASCII") from None
    m = _LINE_RE.match(text)
    if m is None:
        raise DecodeError("bad-report", text[:60])
    mac, whole, tenth, ts = m.groups()
    # integer arithmetic keeps the parse exact and independent of float formatting
    return AqReport(MacAddress.parse(mac), (int(whole) * 10 + int(tenth)) / 10, int(ts))


# -- server -------------------------------------------------------------------------


@dataclass(frozen=True)
class MapEntry:
    mac: str
    location: Optional[tuple[float, float]]
    average: Optional[float]
    count: int

    @property
    def category(self) -> str:
        return aqi_category(self.average)

    def to_dict(self) -> dict:
        return {"mac": self.mac,
                "lat": None if self.location is None else self.location[0],
                "lon": None if self.location is None else self.location[1],
                "pm25_avg": self.average, "count": self.count, "category": self.category}


@dataclass(frozen=True)
class MapSnapshot:
    time_s: int
    window_s: int
    entries: tuple[MapEntry, ...]

    def entry(self, mac) -> MapEntry:
        key = str(mac)
        for e in self.entries:
            if e.mac == key:
                return e
        raise KeyError(key)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mac", "lat", "lon", "pm25_avg", "count", "category"])
        for e in self.entries:
            lat, lon = e.location if e.location else ("", "")
            avg = "" if e.average is None else f"{e.average:.6f}"
            w.writerow([e.mac, lat, lon, avg, e.count, e.category])
        return buf.getvalue()

    def to_svg(self, width: int = 480, height: int = 360) -> str:
        return map_svg(self, width, height)


AQI_COLOURS = {"good": "#2e9e44", "moderate": "#e8d229", "unhealthy-sensitive": "#f08a24",
               "unhealthy": "#d62828", "no-data": "#9e9e9e"}


def aqi_category(pm25: Optional[float]) -> str:
    """Fixed PM2.5 colour scale: 0-12 good, to 35.4 moderate, to 150 sensitive, above unhealthy."""
    if pm25 is None:
        return "no-data"
    if pm25 <= 12.0:
        return "good"
    if pm25 <= 35.4:
        return "moderate"
    if pm25 <= 150.0:
        return "unhealthy-sensitive"
    return "unhealthy"


class AqServer:
    """Ingestion server.  State is a pure fold of the accepted report sequence.

    Each MAC keeps the reports whose timestamp lies within ``retention_s`` of
    the newest report for that MAC.
    """

    def __init__(self, sim: Simulation, endpoint_id: str = "aq-server", retention_s: int = DEFAULT_WINDOW_S,
                 locations: Optional[dict] = None):
        if retention_s <= 0:
            raise ValueError("retention must be positive")
        self.sim = sim
        self.id = endpoint_id
        self.retention_s = retention_s
        self.buffers: dict[MacAddress, deque] = {}
        self.newest: dict[MacAddress, int] = {}
        self.locations: dict[MacAddress, tuple[float, float]] = dict(locations or {})
        self.dropped = 0
        self.accepted = 0
        sim.add_endpoint(endpoint_id, self._on_event)

    def _on_event(self, ev: Event) -> None:
        if ev.source is not None:
            self.ingest(ev.payload)

    def ingest(self, line: bytes) -> bool:
        try:
            r = decode_report(line)
        except DecodeError:
            self.dropped += 1
            return False
        buf = self.buffers.setdefault(r.mac, deque())
        buf.append(r)
        newest = self.newest[r.mac] = max(self.newest.get(r.mac, r.ts), r.ts)
        while buf and buf[0].ts < newest - self.retention_s:
            buf.popleft()
        self.accepted += 1
        return True

    def snapshot(self, window_s: int = DEFAULT_WINDOW_S, now_s: Optional[int] = None) -> MapSnapshot:
        if window_s <= 0:
            raise ValueError("window must be positive")
        now = self.sim.now // 1_000_000 if now_s is None else now_s
        entries = []
        for mac in sorted(set(self.buffers) | set(self.locations)):
            vals = [r.pm25 for r in self.buffers.get(mac, ()) if now - window_s <= r.ts <= now]
            avg = math.fsum(vals) / len(vals) if vals else None
            entries.append(MapEntry(str(mac), self.locations.get(mac), avg, len(vals)))
        return MapSnapshot(now, window_s, tuple(entries))


# -- devices ------------------------------------------------------------------------


def noisy_constant(base: float, spread: float, rng) -> Callable[[int], float]:
    """``base`` plus uniform noise in ``[-spread, spread]``, clipped at zero."""
    return lambda _t: max(0.0, base + rng.uniform(-spread, spread))


class AqDevice:
    """Sensor node posting one report every ``interval_s`` seconds."""

    def __init__(self, sim: Simulation, endpoint_id: str, mac: MacAddress, location: tuple[float, float],
                 true_pm25: Callable[[int], float], interval_s: int = DEFAULT_INTERVAL_S,
                 server: str = "aq-server", start_s: int = 0):
        if interval_s <= 0:
            raise ValueError("interval must be positive")
        self.sim = sim
        self.id = endpoint_id
        self.mac = mac
        self.location = location
        self.true_pm25 = true_pm25
        self.interval_us = interval_s * 1_000_000
        self.server = server
        self.sent: list[AqReport] = []
        self._timer: Optional[EventHandle] = None
        sim.add_endpoint(endpoint_id, self._on_event)
        self._timer = sim.timer(endpoint_id, start_s * 1_000_000, b"tick")

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()

    def _on_event(self, ev: Event) -> None:
        if not ev.is_timer:
            return
        ts = self.sim.now // 1_000_000
        r = AqReport(self.mac, quantise(self.true_pm25(ts)), ts)
        self.sent.append(r)
        self.sim.send(self.id, self.server, encode_report(r))
        self._timer = self.sim.timer(self.id, self.interval_us, b"tick")


@dataclass
class PolluteReport:
    victim: str
    fake_value: float
    rate_hz: float
    duration_s: float
    frames_sent: int = 0
    first_ts: Optional[int] = None
    last_ts: Optional[int] = None

    def to_dict(self) -> dict:
        return {"victim": self.victim, "fake_value": self.fake_value, "rate_hz": self.rate_hz,
                "duration_s": self.duration_s, "frames_sent": self.frames_sent,
                "first_ts": self.first_ts, "last_ts": self.last_ts}


class Injector:
    """Fake software device that posts reports under someone else's MAC."""

    def __init__(self, sim: Simulation, victim: MacAddress, fake_value: float, rate_hz: float,
                 duration_s: float, endpoint_id: str = "attacker", server: str = "aq-server"):
        if rate_hz < 0 or duration_s < 0:
            raise ValueError("rate and duration must be non-negative")
        self.sim = sim
        self.id = endpoint_id
        self.server = server
        self.victim = victim
        self.value = quantise(fake_value)
        self.report = PolluteReport(str(victim), fake_value, rate_hz, duration_s)
        self.times_us: list[int] = []
        if rate_hz > 0:
            period = 1e6 / rate_hz
            start = sim.now
            n = int(math.floor(duration_s * rate_hz + 1e-9))
            self.times_us = [start + int(round(k * period)) for k in range(n)]
        sim.add_endpoint(endpoint_id, self._on_event)
        for t in self.times_us:
            sim.timer(endpoint_id, t - sim.now, b"inject")

    def _on_event(self, ev: Event) -> None:
        if not ev.is_timer:
            return
        ts = self.sim.now // 1_000_000
        self.sim.send(self.id, self.server, encode_report(AqReport(self.victim, self.value, ts)))
        rep = self.report
        rep.frames_sent += 1
        rep.first_ts = ts if rep.first_ts is None else rep.first_ts
        rep.last_ts = ts


def attack_pollute(sim: Simulation, victim_mac: MacAddress, fake_value: float, rate_hz: float,
                   duration_s: float, endpoint_id: str = "attacker", server: str = "aq-server") -> Injector:
    """Start injecting now; the returned injector's ``report`` fills in as the simulation runs."""
    return Injector(sim, victim_mac, fake_value, rate_hz, duration_s, endpoint_id, server)


def mixture_mean(genuine: Sequence[float], n_fake: int, fake_value: float) -> float:
    """Count-weighted mean of genuine readings and ``n_fake`` copies of the fake value."""
    n = len(genuine) + n_fake
    if n == 0:
        raise ValueError("empty mixture")
    return (math.fsum(genuine) + n_fake * fake_value) / n


def in_window(ts_values: Sequence[int], now_s: int, window_s: int) -> list[int]:
    return [t for t in ts_values if now_s - window_s <= t <= now_s]


# -- reference scenario -------------------------------------------------------------

# Florida sensor sites (lat, lon); the baseline air is clean, PM2.5 about 0-3
FLORIDA_SITES = [
    (28.06, -82.41), (27.95, -82.46), (28.54, -81.38), (25.76, -80.19),
    (30.44, -84.28), (29.65, -82.32), (26.12, -80.14), (27.34, -82.53),
]
OUI_AQ = bytes.fromhex("5CCF7F")
DRAIN_US = 500_000


@dataclass
class PollutionRun:
    sim: Simulation
    server: AqServer
    devices: list[AqDevice]
    injector: Optional[Injector]
    before: MapSnapshot
    after: MapSnapshot
    victim: MacAddress
    window_s: int

    def genuine_in_window(self) -> list[float]:
        dev = next(d for d in self.devices if d.mac == self.victim)
        return [r.pm25 for r in dev.sent if self.after.time_s - self.window_s <= r.ts <= self.after.time_s]

    def fake_in_window(self) -> int:
        if self.injector is None:
            return 0
        # analytic count from the injection schedule, independent of the server
        ts = [t // 1_000_000 for t in self.injector.times_us]
        return len(in_window(ts, self.after.time_s, self.window_s))

    def closed_form(self) -> float:
        value = self.injector.value if self.injector else 0.0
        return mixture_mean(self.genuine_in_window(), self.fake_in_window(), value)

    def to_dict(self) -> dict:
        return {"victim": str(self.victim), "window_s": self.window_s,
                "before": self.before.entry(self.victim).to_dict(),
                "after": self.after.entry(self.victim).to_dict(),
                "closed_form": self.closed_form(),
                "injector": self.injector.report.to_dict() if self.injector else None,
                "dropped": self.server.dropped}


def run_pollution(seed: int = 0, n_devices: int = 6, victim_index: int = 0, fake_value: float = 500.0,
                  rate_hz: float = 1.0, window_s: int = DEFAULT_WINDOW_S, interval_s: int = DEFAULT_INTERVAL_S,
                  baseline_pm: float = 1.5, noise: float = 1.5, attack_duration_s: Optional[float] = None
                  ) -> PollutionRun:
    """Baseline for one window, snapshot, then inject for a full window and snapshot again."""
    if not 0 <= victim_index < n_devices <= len(FLORIDA_SITES):
        raise ValueError("victim index or device count out of range")
    sim = Simulation(seed=seed)
    macs = [MacAddress.from_parts(OUI_AQ, 0x100 + i) for i in range(n_devices)]
    server = AqServer(sim, retention_s=window_s,
                      locations={m: FLORIDA_SITES[i] for i, m in enumerate(macs)})
    devices = [
        AqDevice(sim, f"aq-{i}", m, FLORIDA_SITES[i],
                 noisy_constant(baseline_pm, noise, sim.rng(f"aq/pm/{i}")), interval_s, start_s=i)
        for i, m in enumerate(macs)
    ]
    # the half-second margin lets reports sent at the boundary second arrive
    sim.run_until(window_s * 1_000_000 + DRAIN_US)
    before = server.snapshot(window_s)
    duration = window_s if attack_duration_s is None else attack_duration_s
    injector = attack_pollute(sim, macs[victim_index], fake_value, rate_hz, duration)
    sim.run_until(2 * window_s * 1_000_000 + DRAIN_US)
    after = server.snapshot(window_s)
    return PollutionRun(sim, server, devices, injector, before, after, macs[victim_index], window_s)


def map_svg(snap: MapSnapshot, width: int = 480, height: int = 360) -> str:
    """Dot map in an equirectangular projection of the devices' bounding box."""
    located = [e for e in snap.entries if e.location is not None]
    svg = Svg(width, height)
    svg.rect(0, 0, width, height, fill="#f4f6f8")
    svg.text(10, 20, f"PM2.5 average over {snap.window_s} s at t={snap.time_s} s")
    if located:
        lats = [e.location[0] for e in located]
        lons = [e.location[1] for e in located]
        lat_lo, lat_hi = min(lats) - 0.5, max(lats) + 0.5
        lon_lo, lon_hi = min(lons) - 0.5, max(lons) + 0.5
        pad = 40
        for e in located:
            x = pad + (e.location[1] - lon_lo) / (lon_hi - lon_lo) * (width - 2 * pad)
            y = pad + (lat_hi - e.location[0]) / (lat_hi - lat_lo) * (height - 2 * pad)
            svg.circle(x, y, 9, fill=AQI_COLOURS[e.category], stroke="#333")
            label = "n/a" if e.average is None else num(e.average)
            svg.text(x + 12, y + 4, f"{e.mac[-5:]} {label}")
    y = height - 12
    x = 10
    for cat in ("good", "moderate", "unhealthy-sensitive", "unhealthy", "no-data"):
        svg.circle(x + 5, y - 4, 5, fill=AQI_COLOURS[cat])
        svg.text(x + 14, y, cat)
        x += 92
    return svg.render()
