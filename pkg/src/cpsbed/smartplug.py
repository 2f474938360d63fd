"""Smart-plug ecosystem: plugs, a cloud relay server, phone apps, and attacks on them.

The relay server knows nothing about passwords.  It binds each MAC to the
endpoint that last sent ``REG <mac>`` and forwards authentication attempts to
that endpoint; the plug itself checks the password.  Response codes follow
the vendor protocol:

    plug online, password correct   ->  1070
    plug online, password wrong     ->  (no reply)
    plug offline or unknown MAC     ->  5000

Because identity is just the MAC and the latest ``REG`` wins, a fake plug can
steal the session and collect the app's password.

Wire format: one ASCII line per datagram.

    REG <mac>                     plug   -> server
    HEARTBEAT <mac>               plug   -> server
    AUTH <mac> <hex>              app    -> server   (hex = obfuscated password)
    CMD <mac> ON|OFF              app    -> server
    1070 | 5000 | ACK <mac> ON|OFF       server -> app
    REGOK <mac> | KICK <mac>             server -> plug
    RELAY AUTH <mac> <hex> <tag>         server -> plug
    RELAY CMD <mac> ON|OFF <tag>         server -> plug
    AUTHOK <mac> <tag> | DONE <mac> ON|OFF <tag>   plug -> server
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import DecodeError
from .sim import Event, EventHandle, Simulation

CODE_OK = "1070"
CODE_OFFLINE = "5000"
DEFAULT_PASSWORD = "1234"
DEFAULT_OUI = bytes.fromhex("ACCF23")
MAX_LINE = 256


# -- obfuscation --------------------------------------------------------------------


def _rotl3(b: int) -> int:
    return ((b << 3) | (b >> 5)) & 0xFF


def _rotr3(b: int) -> int:
    return ((b >> 3) | (b << 5)) & 0xFF


def obfuscate(data: bytes) -> bytes:
    """Rotate every byte left by three bits."""
    return bytes(_rotl3(b) for b in data)


def deobfuscate(data: bytes) -> bytes:
    return bytes(_rotr3(b) for b in data)


# -- addresses and frames -----------------------------------------------------------

_MAC_RE = re.compile(r"^[0-9A-F]{2}(?::[0-9A-F]{2}){5}$")


@dataclass(frozen=True, order=True)
class MacAddress:
    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 6:
            raise ValueError("a MAC address has six bytes")

    @property
    def oui(self) -> bytes:
        return self.raw[:3]

    @property
    def suffix(self) -> int:
        return int.from_bytes(self.raw[3:], "big")

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        if not _MAC_RE.match(text):
            raise ValueError(f"not a canonical MAC address: {text!r}")
        return cls(bytes.fromhex(text.replace(":", "")))

    @classmethod
    def from_parts(cls, oui: bytes, suffix: int) -> "MacAddress":
        if len(oui) != 3 or not 0 <= suffix < 2**24:
            raise ValueError("OUI is 3 bytes and the suffix 24 bits")
        return cls(bytes(oui) + suffix.to_bytes(3, "big"))

    def __str__(self):
        return ":".join(f"{b:02X}" for b in self.raw)


_TOKEN = re.compile(r"^[!-~]+$")


def parse_frame(data: bytes) -> list[str]:
    """Split a wire line into tokens; reject anything that is not short printable ASCII."""
    if not data or len(data) > MAX_LINE:
        raise DecodeError("bad-length", f"{len(data)} bytes")
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise DecodeError("not-ascii", "frame is not ASCII") from None
    parts = text.split(" ")
    if not all(_TOKEN.match(p) for p in parts):
        raise DecodeError("bad-token", "empty or non-printable token")
    return parts


def format_frame(*tokens: object) -> bytes:
    return " ".join(str(t) for t in tokens).encode("ascii")


@dataclass(frozen=True)
class ClientMessage:
    verb: str
    mac: MacAddress
    arg: Optional[str] = None


_ARITY = {"REG": 0, "HEARTBEAT": 0, "AUTH": 1, "CMD": 1}
_HEX = re.compile(r"^(?:[0-9a-f]{2})+$")


def decode_client_message(data: bytes) -> ClientMessage:
    """Parse the four message kinds the relay server accepts."""
    parts = parse_frame(data)
    verb = parts[0]
    if verb not in _ARITY:
        raise DecodeError("unknown-verb", verb[:16])
    if len(parts) != 2 + _ARITY[verb]:
        raise DecodeError("bad-arity", f"{verb} takes {_ARITY[verb]} argument(s)")
    try:
        mac = MacAddress.parse(parts[1])
    except ValueError:
        raise DecodeError("bad-mac", parts[1][:32]) from None
    arg = parts[2] if len(parts) == 3 else None
    if verb == "AUTH" and not _HEX.match(arg):
        raise DecodeError("bad-password-hex", arg[:32])
    if verb == "CMD" and arg not in ("ON", "OFF"):
        raise DecodeError("bad-command", arg[:16])
    return ClientMessage(verb, mac, arg)


def encode_client_message(m: ClientMessage) -> bytes:
    return format_frame(m.verb, m.mac, *(() if m.arg is None else (m.arg,)))


def auth_frame(mac: MacAddress, password: str) -> bytes:
    return format_frame("AUTH", mac, obfuscate(password.encode("utf-8")).hex())


# -- relay server -------------------------------------------------------------------


@dataclass
class Session:
    endpoint: str
    epoch: int
    last_seen_us: int


class RelayServer:
    """Cloud relay.  ``sessions`` maps each MAC to at most one plug endpoint."""

    def __init__(self, sim: Simulation, endpoint_id: str = "relay-server", session_timeout_s: float = 90.0):
        self.sim = sim
        self.id = endpoint_id
        self.session_timeout_us = int(session_timeout_s * 1e6)
        self.sessions: dict[MacAddress, Session] = {}
        self.authenticated: set[tuple[str, MacAddress, int]] = set()
        self.pending: dict[str, tuple[str, MacAddress, object]] = {}
        self.dropped = 0
        self._epoch = 0
        self._tag = 0
        sim.add_endpoint(endpoint_id, self._on_event)

    def online(self, mac: MacAddress) -> Optional[Session]:
        s = self.sessions.get(mac)
        if s is None or self.sim.now - s.last_seen_us > self.session_timeout_us:
            return None
        return s

    def _new_tag(self) -> str:
        self._tag += 1
        return f"t{self._tag}"

    def _on_event(self, ev: Event) -> None:
        if ev.source is None:
            return
        src = ev.source
        try:
            parts = parse_frame(ev.payload)
        except DecodeError:
            self.dropped += 1
            return
        if parts[0] in ("AUTHOK", "DONE"):
            self._from_plug(src, parts)
            return
        try:
            m = decode_client_message(ev.payload)
        except DecodeError:
            self.dropped += 1
            return
        getattr(self, f"_on_{m.verb.lower()}")(src, m)

    def _on_reg(self, src: str, m: ClientMessage) -> None:
        old = self.sessions.get(m.mac)
        self._epoch += 1
        self.sessions[m.mac] = Session(src, self._epoch, self.sim.now)
        if old is not None and old.endpoint != src:
            self.sim.send(self.id, old.endpoint, format_frame("KICK", m.mac))
        self.sim.send(self.id, src, format_frame("REGOK", m.mac))

    def _on_heartbeat(self, src: str, m: ClientMessage) -> None:
        s = self.sessions.get(m.mac)
        if s is not None and s.endpoint == src:
            s.last_seen_us = self.sim.now

    def _on_auth(self, src: str, m: ClientMessage) -> None:
        s = self.online(m.mac)
        if s is None:
            self.sim.send(self.id, src, CODE_OFFLINE.encode())
            return
        tag = self._new_tag()
        self.pending[tag] = (src, m.mac, s.epoch)
        self.sim.send(self.id, s.endpoint, format_frame("RELAY", "AUTH", m.mac, m.arg, tag))

    def _on_cmd(self, src: str, m: ClientMessage) -> None:
        s = self.online(m.mac)
        if s is None:
            self.sim.send(self.id, src, CODE_OFFLINE.encode())
            return
        if (src, m.mac, s.epoch) not in self.authenticated:
            return
        tag = self._new_tag()
        self.pending[tag] = (src, m.mac, m.arg)
        self.sim.send(self.id, s.endpoint, format_frame("RELAY", "CMD", m.mac, m.arg, tag))

    def _from_plug(self, src: str, parts: list[str]) -> None:
        pend = self.pending.pop(parts[-1], None)
        if pend is None:
            self.dropped += 1
            return
        client, mac, extra = pend
        s = self.sessions.get(mac)
        if s is None or s.endpoint != src:
            return
        if parts[0] == "AUTHOK" and len(parts) == 3 and extra == s.epoch:
            self.authenticated.add((client, mac, s.epoch))
            self.sim.send(self.id, client, CODE_OK.encode())
        elif parts[0] == "DONE" and len(parts) == 4:
            self.sim.send(self.id, client, format_frame("ACK", mac, parts[2]))


# -- plugs --------------------------------------------------------------------------


class SmartPlug:
    """A networked power switch.  Registers on start, heartbeats, obeys relayed commands.

    When the server reports the session was taken over (``KICK``), the plug
    stays offline for ``lockout_s`` and then registers again.
    """

    def __init__(self, sim: Simulation, endpoint_id: str, mac: MacAddress, password: str = DEFAULT_PASSWORD,
                 server: str = "relay-server", heartbeat_s: float = 30.0, lockout_s: float = 60.0,
                 online: bool = True, switch_on: bool = False, start_s: float = 0.0):
        self.sim = sim
        self.id = endpoint_id
        self.mac = mac
        self.password = password
        self.server = server
        self.heartbeat_us = int(heartbeat_s * 1e6)
        self.lockout_us = int(lockout_s * 1e6)
        self.switch_on = switch_on
        self.registered = False
        self.powered = online
        self.kicked_at: list[int] = []
        self.history: list[tuple[int, bool]] = []
        self._timer: Optional[EventHandle] = None
        sim.add_endpoint(endpoint_id, self._on_event)
        if online:
            self._arm(int(start_s * 1e6), b"reg")

    def _arm(self, delay_us: int, tag: bytes) -> None:
        if self._timer is not None:
            self._timer.cancel()
        self._timer = self.sim.timer(self.id, delay_us, tag)

    def power_off(self) -> None:
        self.powered = False
        self.registered = False
        if self._timer is not None:
            self._timer.cancel()

    def _on_event(self, ev: Event) -> None:
        if not self.powered:
            return
        if ev.is_timer:
            if ev.payload == b"reg":
                self.sim.send(self.id, self.server, format_frame("REG", self.mac))
            else:
                self.sim.send(self.id, self.server, format_frame("HEARTBEAT", self.mac))
            self._arm(self.heartbeat_us, b"hb")
            return
        if ev.source != self.server:
            return
        try:
            parts = parse_frame(ev.payload)
        except DecodeError:
            return
        mac = str(self.mac)
        if parts[:2] == ["REGOK", mac]:
            self.registered = True
        elif parts[:2] == ["KICK", mac]:
            self.registered = False
            self.kicked_at.append(self.sim.now)
            self._arm(self.lockout_us, b"reg")
        elif parts[:3] == ["RELAY", "AUTH", mac] and len(parts) == 5:
            try:
                given = deobfuscate(bytes.fromhex(parts[3])).decode("utf-8")
            except ValueError:
                return
            if given == self.password:
                self.sim.send(self.id, self.server, format_frame("AUTHOK", mac, parts[4]))
        elif parts[:3] == ["RELAY", "CMD", mac] and len(parts) == 5:
            self.switch_on = parts[3] == "ON"
            self.history.append((self.sim.now, self.switch_on))
            self.sim.send(self.id, self.server, format_frame("DONE", mac, parts[3], parts[4]))


# -- request/response clients -------------------------------------------------------

SILENCE = None


class Client:
    """Synchronous client that drives the simulation until a reply or timeout."""

    def __init__(self, sim: Simulation, endpoint_id: str, server: str = "relay-server"):
        self.sim = sim
        self.id = endpoint_id
        self.server = server
        self.ep = sim.add_endpoint(endpoint_id)
        self.sent = 0

    def request(self, frame: bytes, timeout_s: float = 2.0) -> Optional[str]:
        inbox = self.ep.inbox
        inbox.clear()
        self.sent += 1
        self.sim.send(self.id, self.server, frame)
        self.sim.run_for(int(timeout_s * 1e6), until=lambda: bool(inbox))
        if not inbox:
            return SILENCE
        _, payload = inbox.popleft()
        inbox.clear()
        return payload.decode("ascii", "replace")

    def auth(self, mac: MacAddress, password: str, timeout_s: float = 2.0) -> Optional[str]:
        return self.request(auth_frame(mac, password), timeout_s)

    def command(self, mac: MacAddress, on: bool, timeout_s: float = 2.0) -> Optional[str]:
        return self.request(format_frame("CMD", mac, "ON" if on else "OFF"), timeout_s)


class PhoneApp:
    """Vendor app as an event-driven actor.

    ``switch(on, at_s)`` schedules an attempt: AUTH, then CMD once 1070 comes
    back.  While the plug looks offline (5000 or silence) the app retries AUTH
    every ``retry_s`` seconds, up to ``max_tries``.
    """

    def __init__(self, sim: Simulation, endpoint_id: str, mac: MacAddress, password: str,
                 server: str = "relay-server", retry_s: float = 5.0, max_tries: int = 60):
        self.sim = sim
        self.id = endpoint_id
        self.mac = mac
        self.password = password
        self.server = server
        self.retry_us = int(retry_s * 1e6)
        self.max_tries = max_tries
        self.log: list[tuple[int, str]] = []
        self.done: list[tuple[int, bool]] = []
        self._want: Optional[bool] = None
        self._tries = 0
        self._timer: Optional[EventHandle] = None
        sim.add_endpoint(endpoint_id, self._on_event)

    def switch(self, on: bool, at_s: float = 0.0) -> None:
        self.sim.timer(self.id, max(0, int(at_s * 1e6) - self.sim.now), b"start:" + (b"ON" if on else b"OFF"))

    def _auth(self) -> None:
        self._tries += 1
        self.log.append((self.sim.now, "AUTH"))
        self.sim.send(self.id, self.server, auth_frame(self.mac, self.password))
        self._timer = self.sim.timer(self.id, self.retry_us, b"retry")

    def _on_event(self, ev: Event) -> None:
        if ev.is_timer:
            if ev.payload.startswith(b"start:"):
                self._want = ev.payload == b"start:ON"
                self._tries = 0
                self._auth()
            elif ev.payload == b"retry" and self._want is not None:
                if self._tries < self.max_tries:
                    self._auth()
                else:
                    self.log.append((self.sim.now, "GAVE-UP"))
                    self._want = None
            return
        reply = ev.payload.decode("ascii", "replace")
        self.log.append((self.sim.now, reply))
        if self._want is None:
            return
        if reply == CODE_OK:
            if self._timer is not None:
                self._timer.cancel()
            self.sim.send(self.id, self.server, format_frame("CMD", self.mac, "ON" if self._want else "OFF"))
        elif reply.startswith("ACK "):
            self.done.append((self.sim.now, self._want))
            self._want = None
        # 5000: wait for the pending retry timer


# -- response table -------------------------------------------------------------------


def auth_response(online: bool, password_correct: bool, seed: int = 0) -> Optional[str]:
    """Reply an app receives for one AUTH in a fresh one-plug world."""
    sim = Simulation(seed=seed)
    RelayServer(sim)
    mac = MacAddress.from_parts(DEFAULT_OUI, 1)
    SmartPlug(sim, "plug", mac, "1234", online=online)
    sim.run_for(1_000_000)
    return Client(sim, "app").auth(mac, "1234" if password_correct else "9999")


def auth_response_table(seed: int = 0) -> dict[tuple[bool, bool], Optional[str]]:
    return {(on, ok): auth_response(on, ok, seed) for on in (True, False) for ok in (True, False)}


# -- ecosystem builder --------------------------------------------------------------


@dataclass
class PlugNet:
    sim: Simulation
    server: RelayServer
    plugs: list[SmartPlug]

    def plug(self, mac: MacAddress) -> SmartPlug:
        for p in self.plugs:
            if p.mac == mac:
                return p
        raise KeyError(str(mac))


def build_plugnet(sim: Simulation, count: int = 3, oui: bytes = DEFAULT_OUI, suffix_base: int = 0x000100,
                  window: int = 256, password_policy: str = "default", lockout_s: float = 60.0,
                  heartbeat_s: float = 30.0, offline: Sequence[int] = (),
                  passwords: Optional[dict] = None) -> PlugNet:
    """Server plus ``count`` plugs at seeded distinct suffixes in ``[suffix_base, suffix_base+window)``.

    ``password_policy`` is ``"default"`` (every plug uses 1234) or ``"random4"``
    (per-plug random 4-digit PIN).  ``offline`` lists plug indices that never
    come online; ``passwords`` overrides by index.
    """
    if count > window:
        raise ValueError("more plugs than suffixes in the window")
    if password_policy not in ("default", "random4"):
        raise ValueError(f"unknown password policy {password_policy!r}")
    server = RelayServer(sim)
    rng = sim.rng("smartplug/layout")
    suffixes: list[int] = []
    while len(suffixes) < count:
        s = suffix_base + rng.draw(window)
        if s not in suffixes:
            suffixes.append(s)
    pw_rng = sim.rng("smartplug/passwords")
    plugs = []
    for i, s in enumerate(suffixes):
        pw = DEFAULT_PASSWORD if password_policy == "default" else f"{pw_rng.draw(10000):04d}"
        if passwords and i in passwords:
            pw = passwords[i]
        plugs.append(SmartPlug(sim, f"plug-{i}", MacAddress.from_parts(oui, s), pw, server=server.id,
                               heartbeat_s=heartbeat_s, lockout_s=lockout_s, online=i not in offline,
                               start_s=0.01 * i))
    return PlugNet(sim, server, plugs)


# -- attacks ------------------------------------------------------------------------

ONLINE = "online"
OFFLINE_OR_ABSENT = "offline_or_absent"
EXISTS_WRONG_PASSWORD = "exists_wrong_password"


def classify(reply: Optional[str]) -> str:
    if reply == CODE_OK:
        return ONLINE
    if reply is SILENCE:
        return EXISTS_WRONG_PASSWORD
    return OFFLINE_OR_ABSENT


def attack_scan(sim: Simulation, oui: bytes, suffixes: Iterable[int], password_guess: str = DEFAULT_PASSWORD,
                timeout_s: float = 2.0, client_id: str = "attacker-scan",
                server: str = "relay-server") -> list[tuple[MacAddress, str]]:
    """Enumerate MACs under ``oui`` by their AUTH response to ``password_guess``."""
    suffixes = list(suffixes)
    if len(suffixes) > 2**24:
        raise ValueError("suffix range exceeds 24 bits")
    client = Client(sim, client_id, server)
    out = []
    for s in suffixes:
        mac = MacAddress.from_parts(oui, s)
        out.append((mac, classify(client.auth(mac, password_guess, timeout_s))))
    return out


@dataclass
class BruteforceResult:
    mac: MacAddress
    password: Optional[str]
    attempts: int
    outcome: str  # found | exhausted | offline

    def to_dict(self) -> dict:
        return {"mac": str(self.mac), "password": self.password, "attempts": self.attempts,
                "outcome": self.outcome}


def pin_dictionary(digits: int = 4) -> list[str]:
    return [f"{i:0{digits}d}" for i in range(10**digits)]


def attack_bruteforce(sim: Simulation, mac: MacAddress, dictionary: Sequence[str], timeout_s: float = 1.0,
                      client_id: str = "attacker-brute", server: str = "relay-server") -> BruteforceResult:
    """Try each password in order; nothing on the server side ever rate-limits this."""
    if not dictionary:
        raise ValueError("dictionary must not be empty")
    client = Client(sim, client_id, server)
    for i, pw in enumerate(dictionary, 1):
        reply = client.auth(mac, pw, timeout_s)
        if reply == CODE_OK:
            return BruteforceResult(mac, pw, i, "found")
        if reply == CODE_OFFLINE:
            return BruteforceResult(mac, None, i, "offline")
    return BruteforceResult(mac, None, len(dictionary), "exhausted")


class SpoofRejected(ValueError):
    """The victim MAC has no live session to hijack."""


@dataclass
class SpoofState:
    victim: MacAddress
    fake_session_active: bool = False
    captured_password: Optional[str] = None
    lockout_remaining_us: int = 0
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"victim": str(self.victim), "fake_session_active": self.fake_session_active,
                "captured_password": self.captured_password,
                "lockout_remaining_s": self.lockout_remaining_us / 1e6,
                "events": [list(e) for e in self.events]}


class FakePlug:
    """Software plug that registers under the victim's MAC and records relayed passwords."""

    def __init__(self, sim: Simulation, victim: MacAddress, endpoint_id: str = "fake-plug",
                 server: str = "relay-server", lockout_s: float = 60.0, heartbeat_s: float = 30.0):
        self.sim = sim
        self.id = endpoint_id
        self.server = server
        self.heartbeat_us = int(heartbeat_s * 1e6)
        self.lockout_us = int(lockout_s * 1e6)
        self.state = SpoofState(victim)
        self._registered_at: Optional[int] = None
        self._hb: Optional[EventHandle] = None
        sim.add_endpoint(endpoint_id, self._on_event)

    def register(self) -> None:
        self.sim.send(self.id, self.server, format_frame("REG", self.state.victim))

    def refresh(self) -> SpoofState:
        st = self.state
        if st.fake_session_active and self._registered_at is not None:
            st.lockout_remaining_us = max(0, self._registered_at + self.lockout_us - self.sim.now)
        else:
            st.lockout_remaining_us = 0
        return st

    def _on_event(self, ev: Event) -> None:
        st = self.state
        mac = str(st.victim)
        if ev.is_timer:
            if st.fake_session_active:
                self.sim.send(self.id, self.server, format_frame("HEARTBEAT", mac))
                self._hb = self.sim.timer(self.id, self.heartbeat_us, b"hb")
            return
        try:
            parts = parse_frame(ev.payload)
        except DecodeError:
            return
        if parts[:2] == ["REGOK", mac]:
            st.fake_session_active = True
            self._registered_at = self.sim.now
            st.events.append((self.sim.now, "session-hijacked"))
            self._hb = self.sim.timer(self.id, self.heartbeat_us, b"hb")
        elif parts[:2] == ["KICK", mac]:
            st.fake_session_active = False
            st.events.append((self.sim.now, "session-lost"))
            if self._hb is not None:
                self._hb.cancel()
        elif parts[:3] == ["RELAY", "AUTH", mac] and len(parts) == 5:
            try:
                pw = deobfuscate(bytes.fromhex(parts[3])).decode("utf-8")
            except ValueError:
                return
            if st.captured_password is None:
                st.captured_password = pw
                st.events.append((self.sim.now, "password-captured"))
            # play along so the app believes the plug answered
            self.sim.send(self.id, self.server, format_frame("AUTHOK", mac, parts[4]))
        elif parts[:3] == ["RELAY", "CMD", mac] and len(parts) == 5:
            st.events.append((self.sim.now, f"swallowed-{parts[3]}"))
            self.sim.send(self.id, self.server, format_frame("DONE", mac, parts[3], parts[4]))
        self.refresh()


def attack_spoof(sim: Simulation, server: RelayServer, victim: MacAddress, lockout_s: float = 60.0,
                 endpoint_id: str = "fake-plug") -> FakePlug:
    """Start the hijack: the fake plug registers the victim's MAC right away."""
    if server.online(victim) is None:
        raise SpoofRejected(f"{victim} has no live session to displace")
    fake = FakePlug(sim, victim, endpoint_id, server.id, lockout_s)
    fake.register()
    return fake


@dataclass
class SpoofOutcome:
    state: SpoofState
    app_log: list
    commands_after: list
    final_switch_on: bool
    success: bool

    def to_dict(self) -> dict:
        return {"state": self.state.to_dict(), "app_log": [list(e) for e in self.app_log],
                "attacker_replies": self.commands_after, "final_switch_on": self.final_switch_on,
                "success": self.success}


SPOOF_ACTIONS = ("spoof", "app_switch", "attacker_switch")


def default_spoof_script(app_acts: bool = True, app_at_s: float = 20.0, listen_s: float = 120.0,
                         attacker_command_on: bool = False) -> list[dict]:
    script = [{"at_s": 10.0, "action": "spoof"}]
    if app_acts:
        script.append({"at_s": app_at_s, "action": "app_switch", "on": True})
    script.append({"at_s": 10.0 + listen_s, "action": "attacker_switch", "on": attacker_command_on})
    return script


def run_spoof_scenario(seed: int = 0, app_acts: bool = True, lockout_s: float = 60.0,
                       app_at_s: float = 20.0, listen_s: float = 120.0, password: str = DEFAULT_PASSWORD,
                       attacker_command_on: bool = False, script: Optional[Sequence[dict]] = None,
                       sim: Optional[Simulation] = None) -> SpoofOutcome:
    """Scripted end-to-end hijack.

    The default script: at t=0 the victim plug (switched ON) registers; at
    10 s the fake plug steals the session; at ``app_at_s`` the owner's app
    tries to switch ON; after the listening window the victim has registered
    again and the attacker, holding the captured password, switches the real
    plug OFF.  ``script`` entries are ``{"at_s", "action", "on"}`` dicts with
    actions from :data:`SPOOF_ACTIONS`, in time order.
    """
    if script is None:
        script = default_spoof_script(app_acts, app_at_s, listen_s, attacker_command_on)
    times = [float(a["at_s"]) for a in script]
    if times != sorted(times):
        raise ValueError("script actions must be in time order")
    for a in script:
        if a["action"] not in SPOOF_ACTIONS:
            raise ValueError(f"unknown script action {a['action']!r}")
    sim = Simulation(seed=seed) if sim is None else sim
    server = RelayServer(sim)
    mac = MacAddress.from_parts(DEFAULT_OUI, 0x00ABCD)
    victim = SmartPlug(sim, "victim-plug", mac, password, lockout_s=lockout_s, switch_on=True)
    app = PhoneApp(sim, "owner-app", mac, password)
    attacker = Client(sim, "attacker-app")
    fake: Optional[FakePlug] = None
    replies: list = []
    wanted = None
    for a in script:
        sim.run_until(max(sim.now, int(float(a["at_s"]) * 1e6)))
        if a["action"] == "spoof":
            fake = attack_spoof(sim, server, mac, lockout_s)
        elif a["action"] == "app_switch":
            app.switch(bool(a.get("on", True)), at_s=sim.now / 1e6)
        elif a["action"] == "attacker_switch":
            wanted = bool(a.get("on", False))
            pw = fake.refresh().captured_password if fake is not None else None
            if pw is not None:
                replies.append(attacker.auth(mac, pw))
                if replies[-1] == CODE_OK:
                    replies.append(attacker.command(mac, wanted))
    sim.run_for(1_000_000)
    state = fake.refresh() if fake is not None else SpoofState(mac)
    ok = (state.captured_password == password and wanted is not None and victim.switch_on == wanted
          and bool(replies) and replies[-1] is not None and replies[-1].startswith("ACK"))
    return SpoofOutcome(state, list(app.log), replies, victim.switch_on, ok)
