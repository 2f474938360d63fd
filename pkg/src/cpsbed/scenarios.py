"""Scenario files: loading, validation and deterministic execution.

A scenario is a TOML file::

    [scenario]
    name = "pollute_airmap"
    kind = "pollute_airmap"      # optional, defaults to name
    seed = 7                     # mandatory
    topology = "airquality"      # bundled name or a path
    outputs = ["map_after.svg"]  # optional subset of the kind's artifacts

    [params]                     # kind-specific, unknown keys are rejected
    fake_value = 500.0

    [[assert]]
    metric = "victim_after_avg"
    op = ">"
    value = 100

Running writes every artifact plus ``manifest.json`` (config hash, seed and
a SHA-256 per artifact) and ``report.md`` into one directory per scenario.
"""

from __future__ import annotations

import hashlib
import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from . import airquality, bacnet, fuzz, hvac, knx, mitm, smartplug
from .arch import Finding, Severity, Topology, assess_risk, load_topology
from .config import bundled, bundled_names, load_toml
from .errors import ConfigError
from .svg import line_chart

OPS: dict[str, Callable] = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
                            ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str
    value: object

    def check(self, metrics: dict) -> tuple[bool, str]:
        if self.metric not in metrics:
            return False, f"{self.metric}: not produced"
        got = metrics[self.metric]
        try:
            ok = bool(OPS[self.op](got, self.value))
        except TypeError:
            ok = False
        return ok, f"{self.metric} {self.op} {self.value!r} (got {got!r})"


@dataclass
class Scenario:
    name: str
    kind: str
    seed: int
    topology_ref: str
    topology: Topology
    params: dict
    assertions: list
    outputs: Optional[list]
    source: str
    config_sha256: str
    script: list = field(default_factory=list)


@dataclass
class RunResult:
    scenario: Scenario
    artifacts: dict  # file name -> bytes
    metrics: dict
    checks: list  # (Assertion, passed, message)
    manifest: dict

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    @property
    def failures(self) -> list[str]:
        return [msg for _, ok, msg in self.checks if not ok]

    def manifest_json(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_json().encode()).hexdigest()


# -- kinds --------------------------------------------------------------------------


@dataclass(frozen=True)
class Kind:
    runner: Callable
    defaults: dict
    metrics: tuple
    artifacts: tuple


KINDS: dict[str, Kind] = {}


def _kind(name: str, defaults: dict, metrics: tuple, artifacts: tuple):
    def register(fn):
        KINDS[name] = Kind(fn, defaults, metrics, artifacts)
        return fn
    return register


def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _attack_md(title: str, rows: list[tuple[str, object]]) -> bytes:
    lines = [f"# {title}", "", "| Item | Value |", "|---|---|"]
    lines += [f"| {k} | {v} |" for k, v in rows]
    return ("\n".join(lines) + "\n").encode()


def _log(sim) -> bytes:
    return "".join(sim.log_lines()).encode()


def _finding(factor, severity, title, evidence, ref, rule_id) -> Finding:
    return Finding(factor, Severity.parse(severity), title, evidence, ref, rule_id)


@_kind("pollute_airmap",
       {"n_devices": 6, "victim_index": 0, "fake_value": 500.0, "rate_hz": 1.0, "window_s": 3600,
        "interval_s": 60, "baseline_pm": 1.5, "noise": 1.5},
       ("victim_before_avg", "victim_after_avg", "closed_form_avg", "closed_form_rel_error",
        "max_before_avg", "frames_injected", "dropped"),
       ("map_before.json", "map_before.csv", "map_before.svg", "map_after.json", "map_after.csv",
        "map_after.svg", "attack.json", "attack.md", "ingest.log"))
def _run_pollute(sc: Scenario, p: dict):
    run = airquality.run_pollution(seed=sc.seed, **p)
    before = run.before.entry(run.victim).average
    after = run.after.entry(run.victim).average
    closed = run.closed_form()
    metrics = {
        "victim_before_avg": before, "victim_after_avg": after, "closed_form_avg": closed,
        "closed_form_rel_error": abs(after - closed) / abs(closed) if closed else abs(after - closed),
        "max_before_avg": max(e.average for e in run.before.entries if e.average is not None),
        "frames_injected": run.injector.report.frames_sent, "dropped": run.server.dropped,
    }
    server_log = "".join(l for l in run.sim.log_lines() if l.split("\t")[2] == run.server.id)
    art = {
        "map_before.json": run.before.to_json().encode(), "map_before.csv": run.before.to_csv().encode(),
        "map_before.svg": run.before.to_svg().encode(), "map_after.json": run.after.to_json().encode(),
        "map_after.csv": run.after.to_csv().encode(), "map_after.svg": run.after.to_svg().encode(),
        "attack.json": _dump(run.to_dict()),
        "attack.md": _attack_md("Data pollution", [
            ("victim", run.victim), ("average before", f"{before:.3f}"), ("average after", f"{after:.3f}"),
            ("closed-form mixture mean", f"{closed:.3f}"),
            ("frames injected", metrics["frames_injected"])]),
        "ingest.log": server_log.encode(),
    }
    probes = []
    if after > 100 > before:
        probes.append(_finding("data", "high", "Forged readings accepted under a spoofed MAC",
                               f"victim average moved from {before:.1f} to {after:.1f} ug/m3",
                               "aq-server", "PROBE-DATA-POLLUTION"))
    return art, metrics, probes


def _plugnet(sc: Scenario, p: dict):
    from .sim import Simulation
    sim = Simulation(seed=sc.seed)
    net = smartplug.build_plugnet(sim, count=p["plug_count"], oui=bytes.fromhex(p["oui"].replace(":", "")),
                                  suffix_base=p["suffix_base"], window=p["window"],
                                  password_policy=p["password_policy"], lockout_s=p["lockout_s"],
                                  passwords={int(k): v for k, v in p["passwords"].items()})
    sim.run_for(1_000_000)
    return sim, net


_PLUG_DEFAULTS = {"plug_count": 3, "oui": "AC:CF:23", "suffix_base": 256, "window": 256,
                  "password_policy": "default", "lockout_s": 60.0, "passwords": {}}


@_kind("scan_plugs", {**_PLUG_DEFAULTS, "guess": "1234", "timeout_s": 2.0},
       ("online", "exists_wrong_password", "offline_or_absent", "false_positives", "plugs"),
       ("scan.json", "attack.md", "dispatch.log"))
def _run_scan(sc: Scenario, p: dict):
    sim, net = _plugnet(sc, p)
    res = smartplug.attack_scan(sim, bytes.fromhex(p["oui"].replace(":", "")),
                                range(p["suffix_base"], p["suffix_base"] + p["window"]), p["guess"],
                                p["timeout_s"])
    truth = {pl.mac: pl for pl in net.plugs}
    counts = {v: sum(1 for _, x in res if x == v) for v in
              (smartplug.ONLINE, smartplug.EXISTS_WRONG_PASSWORD, smartplug.OFFLINE_OR_ABSENT)}
    fp = sum(1 for m, v in res if v == smartplug.ONLINE
             and not (m in truth and truth[m].password == p["guess"]))
    metrics = {"online": counts[smartplug.ONLINE], "exists_wrong_password": counts[smartplug.EXISTS_WRONG_PASSWORD],
               "offline_or_absent": counts[smartplug.OFFLINE_OR_ABSENT], "false_positives": fp,
               "plugs": len(net.plugs)}
    hits = [{"mac": str(m), "verdict": v} for m, v in res if v != smartplug.OFFLINE_OR_ABSENT]
    art = {"scan.json": _dump({"guess": p["guess"], "candidates": len(res), "hits": hits, **metrics}),
           "attack.md": _attack_md("Plug enumeration", [(h["mac"], h["verdict"]) for h in hits]),
           "dispatch.log": _log(sim)}
    probes = []
    if metrics["online"]:
        probes.append(_finding("human", "high", "Plugs answer to the factory default password",
                               f"{metrics['online']} plugs accepted '{p['guess']}'", "plug",
                               "PROBE-DEFAULT-PASSWORD"))
    if metrics["online"] + metrics["exists_wrong_password"]:
        probes.append(_finding("networking", "medium", "Response codes reveal which MACs exist",
                               "1070/silence/5000 distinguish online, wrong password and absent",
                               "relay-server", "PROBE-MAC-ENUMERATION"))
    return art, metrics, probes


@_kind("bruteforce_plug", {**_PLUG_DEFAULTS, "plug_count": 1, "password_policy": "random4", "target_index": 0,
                           "digits": 4, "timeout_s": 1.0},
       ("found", "attempts", "password_matches", "max_attempts"),
       ("bruteforce.json", "attack.md"))
def _run_brute(sc: Scenario, p: dict):
    sim, net = _plugnet(sc, p)
    plug = net.plugs[p["target_index"]]
    dictionary = smartplug.pin_dictionary(p["digits"])
    r = smartplug.attack_bruteforce(sim, plug.mac, dictionary, p["timeout_s"])
    metrics = {"found": r.outcome == "found", "attempts": r.attempts,
               "password_matches": r.password == plug.password, "max_attempts": len(dictionary)}
    art = {"bruteforce.json": _dump({**r.to_dict(), "dictionary_size": len(dictionary)}),
           "attack.md": _attack_md("Password brute force", [
               ("target", plug.mac), ("outcome", r.outcome), ("password", r.password), ("attempts", r.attempts)])}
    probes = []
    if metrics["found"]:
        probes.append(_finding("software", "high", "No rate limiting or lockout on authentication",
                               f"{r.attempts} consecutive guesses went unnoticed", "relay-server",
                               "PROBE-NO-RATE-LIMIT"))
    return art, metrics, probes


@_kind("spoof_plug", {"lockout_s": 60.0, "password": "1234"},
       ("success", "captured_password", "final_switch_on", "password_captured"),
       ("spoof.json", "attack.md", "dispatch.log"))
def _run_spoof(sc: Scenario, p: dict):
    from .sim import Simulation
    sim = Simulation(seed=sc.seed)
    out = smartplug.run_spoof_scenario(seed=sc.seed, lockout_s=p["lockout_s"], password=p["password"],
                                       script=sc.script or None, sim=sim)
    metrics = {"success": out.success, "captured_password": out.state.captured_password,
               "final_switch_on": out.final_switch_on,
               "password_captured": out.state.captured_password is not None}
    art = {"spoof.json": _dump(out.to_dict()),
           "attack.md": _attack_md("Device spoofing", [
               ("victim", out.state.victim), ("captured password", out.state.captured_password),
               ("final switch state", "ON" if out.final_switch_on else "OFF"), ("success", out.success)]),
           "dispatch.log": _log(sim)}
    probes = []
    if out.state.captured_password is not None:
        probes.append(_finding("networking", "high", "Relay session hijack by MAC re-registration",
                               "a fake plug received the owner's password", "relay-server",
                               "PROBE-SESSION-HIJACK"))
    return art, metrics, probes


@_kind("knx_dump", {"duration_s": 600, "period_s": 60, "poll_period_s": 120},
       ("frames", "decoded_fraction", "sensor_frames", "controller_polls"),
       ("knx.dump", "knx.pcap", "telegrams.json", "dispatch.log"))
def _run_knx(sc: Scenario, p: dict):
    from .sim import Simulation
    sim = Simulation(seed=sc.seed)
    bus = knx.KnxBus(sim, "knx")
    noise = sim.rng("knx/noise")
    group = knx.GroupAddress(1, 0, 1)
    sensors = [
        knx.TemperatureSensor(sim, f"temp-sensor-{i + 1}", bus, knx.IndividualAddress(1, 1, 10 + i),
                              knx.GroupAddress(1, 0, 1 + i),
                              lambda now, b=21.0 + i: b + noise.uniform(-0.3, 0.3),
                              p["period_s"] * 1_000_000, first_at_us=(i + 1) * 1_000_000)
        for i in range(2)
    ]
    ctl = knx.RoomController(sim, "room-controller", bus, poll_group=group,
                             poll_period_us=p["poll_period_s"] * 1_000_000)
    sim.run_until(p["duration_s"] * 1_000_000)
    rows = []
    ok = 0
    for ts, frame, t in bus.dump.annotate():
        if isinstance(t, knx.Telegram):
            ok += 1
            value = knx.decode_dpt9(t.payload) if len(t.payload) == 2 else None
            rows.append({"ts_us": ts, "src": str(t.source), "dst": str(t.dest), "apci": t.apci.name,
                         "value": value})
        else:
            rows.append({"ts_us": ts, "error": t.code})
    n = len(bus.dump)
    metrics = {"frames": n, "decoded_fraction": ok / n if n else 0.0,
               "sensor_frames": sum(len(s.published) for s in sensors),
               "controller_polls": sum(1 for r in rows if r.get("apci") == "GROUP_VALUE_READ")}
    art = {"knx.dump": bus.dump.to_text().encode(), "knx.pcap": bus.dump.to_pcap(),
           "telegrams.json": _dump(rows), "dispatch.log": _log(sim)}
    probes = []
    if ok:
        probes.append(_finding("networking", "high", "KNX telegrams readable by any bus participant",
                               f"{ok} telegrams decoded from a passive dump", "knx-trunk", "PROBE-KNX-SNIFF"))
    return art, metrics, probes


@_kind("fdi_energy", {"bias": 2.0, "duration_s": 3600, "biases": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                      "days": 7, "cut_link": "knx-trunk"},
       ("extra_at_zero", "extra_at_max", "non_decreasing", "within_quantization", "clean_identical",
        "energy_at_zero"),
       ("bias_curve.csv", "bias_curve.svg", "mitm.log", "attack.json", "attack.md"))
def _run_fdi(sc: Scenario, p: dict):
    run = mitm.run_two_sensor_fdi(sc.topology, p["bias"], duration_s=p["duration_s"], seed=sc.seed,
                                  cut_link=p["cut_link"])
    points = hvac.sweep_bias(hvac.reference_scenario(days=p["days"]), sorted(p["biases"]))
    extra = [pt.extra_kwh for pt in points]
    metrics = {
        "extra_at_zero": next(pt.extra_kwh for pt in points if pt.bias == 0),
        "extra_at_max": extra[-1],
        "non_decreasing": all(a <= b for a, b in zip(extra, extra[1:])),
        "within_quantization": run.biased_within_quantization(),
        "clean_identical": run.clean_frames_identical(),
        "energy_at_zero": points[0].energy_kwh,
    }
    csv_text = hvac.curve_csv(points)
    art = {
        "bias_curve.csv": csv_text.encode(),
        "bias_curve.svg": plot_csv(csv_text).encode(),
        "mitm.log": run.tap.export_log().encode(),
        "attack.json": _dump({"bias": p["bias"], "telegrams": len(run.biased_errors()), **metrics}),
        "attack.md": _attack_md("False data injection", [
            ("bias", p["bias"]), ("telegrams rewritten", len(run.biased_errors())),
            ("within DPT 9 quantisation", f"{metrics['within_quantization']:.0%}"),
            (f"extra energy at {points[-1].bias:g} degC over {p['days']} days", f"{extra[-1]:.2f} kWh")]),
    }
    probes = [_finding("data", "high", "Sensor telegrams can be rewritten in transit",
                       f"controller received true+{p['bias']} degC from the biased sensor",
                       p["cut_link"], "PROBE-FDI")] if metrics["within_quantization"] == 1.0 else []
    return art, metrics, probes


@_kind("bacnet_enumerate", {"instance": 102, "hosts": 8, "device_host": 5, "junk_hosts": [2, 7],
                            "timeout_ms": 200, "write_value": 45.0},
       ("devices_found", "false_positives", "objects", "write_acked", "readback", "actuator_angle"),
       ("probes.json", "objects.json", "attack.md", "dispatch.log"))
def _run_bacnet(sc: Scenario, p: dict):
    from .sim import Simulation
    sim = Simulation(seed=sc.seed)
    angle = []
    dev = bacnet.demo_controller(p["instance"], on_write=lambda oid, v: angle.append(v))
    hosts = [f"192.168.1.{i}" for i in range(1, p["hosts"] + 1)]
    dev.attach(sim, f"192.168.1.{p['device_host']}")
    for j in p["junk_hosts"]:
        bacnet.random_responder(sim, f"192.168.1.{j}")
    tr = bacnet.SimTransport(sim)
    probes_ = bacnet.scan_hosts(tr, hosts, p["timeout_ms"])
    found = [pr for pr in probes_ if pr.verdict == bacnet.BACNET_DEVICE]
    entries = [e for pr in found for e in bacnet.enumerate_objects(tr, pr, p["timeout_ms"])]
    damper = bacnet.ObjectId(bacnet.OBJ_ANALOG_OUTPUT, 3)
    ack = readback = None
    if found:
        ack = bacnet.write_present_value(tr, found[0].endpoint, damper, p["write_value"], p["timeout_ms"])
        rb = bacnet.read_present_value(tr, found[0].endpoint, damper, p["timeout_ms"])
        readback = getattr(rb, "value", None)
    metrics = {"devices_found": len(found),
               "false_positives": sum(1 for pr in found if pr.endpoint != f"192.168.1.{p['device_host']}"),
               "objects": len(entries), "write_acked": isinstance(ack, bacnet.SimpleAck),
               "readback": readback, "actuator_angle": angle[-1] if angle else None}
    art = {"probes.json": _dump([pr.to_dict() for pr in probes_]),
           "objects.json": _dump([e.to_dict() for e in entries]),
           "attack.md": _attack_md("BACnet discovery", [
               *[(pr.endpoint, pr.verdict) for pr in probes_],
               ("damper write", "acknowledged" if metrics["write_acked"] else "refused"),
               ("damper read-back", readback)]),
           "dispatch.log": _log(sim)}
    findings = []
    if metrics["write_acked"]:
        findings.append(_finding("networking", "high", "Unauthenticated BACnet writes move actuators",
                                 f"damper present-value set to {p['write_value']}", "room-controller",
                                 "PROBE-BACNET-WRITE"))
    return art, metrics, findings


@_kind("fuzz_codecs", {"executions": 20000, "targets": list(fuzz.SHIPPED), "sentinel": True,
                       "chunk_size": fuzz.DEFAULT_CHUNK},
       ("shipped_faults", "sentinel_found", "executions", "sentinel_first_fault"),
       ("fuzz.json", "attack.md"))
def _run_fuzz(sc: Scenario, p: dict):
    reports = {}
    names = list(p["targets"]) + (["sentinel"] if p["sentinel"] else [])
    for name in names:
        reports[name] = fuzz.run_campaign(name, executions=p["executions"], master_seed=sc.seed,
                                          chunk_size=p["chunk_size"])
    shipped = sum(r.fault_count for n, r in reports.items() if n != "sentinel")
    sent = reports.get("sentinel")
    metrics = {"shipped_faults": shipped, "sentinel_found": bool(sent and sent.fault_count),
               "executions": sum(r.executions for r in reports.values()),
               "sentinel_first_fault": sent.first_fault if sent else None}
    art = {"fuzz.json": _dump({n: r.to_dict() for n, r in reports.items()}),
           "attack.md": _attack_md("Decoder fuzzing", [
               (n, f"{r.executions} runs, {r.fault_count} faults") for n, r in reports.items()])}
    probes = []
    if shipped:
        probes.append(_finding("software", "critical", "Decoder fault under fuzzing",
                               f"{shipped} faulting inputs", "decoders", "PROBE-FUZZ-FAULT"))
    return art, metrics, probes


# -- loading ------------------------------------------------------------------------


def resolve_topology(ref: str, base: Path) -> Topology:
    candidate = (base / ref)
    if ref.endswith(".toml") and candidate.exists():
        return load_topology(candidate)
    try:
        return load_topology(bundled("topologies", ref))
    except ConfigError:
        raise ConfigError(f"[scenario] topology {ref!r} is neither a file nor a bundled topology") from None


def _check_type(section: str, key: str, value, default) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{section} {key}: expected {type(default).__name__}, got {type(value).__name__}")


def scenario_from_dict(doc: dict, origin: str, text: bytes, base: Path = Path(".")) -> Scenario:
    where = f"{origin}:"
    head = doc.get("scenario")
    if not isinstance(head, dict):
        raise ConfigError(f"{where} missing [scenario] section")
    unknown = set(head) - {"name", "kind", "seed", "topology", "outputs", "description"}
    if unknown:
        raise ConfigError(f"{where} [scenario] unknown keys {sorted(unknown)}")
    name = head.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{where} [scenario] name is required")
    kind_name = head.get("kind", name)
    if kind_name not in KINDS:
        raise ConfigError(f"{where} [scenario] unknown kind {kind_name!r}; known: {', '.join(sorted(KINDS))}")
    kind = KINDS[kind_name]
    seed = head.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"{where} [scenario] seed is mandatory and must be an integer")
    topo_ref = head.get("topology")
    if not isinstance(topo_ref, str):
        raise ConfigError(f"{where} [scenario] topology is required")
    topology = resolve_topology(topo_ref, base)
    outputs = head.get("outputs")
    if outputs is not None:
        bad = [o for o in outputs if o not in kind.artifacts]
        if bad:
            raise ConfigError(f"{where} [scenario] outputs {bad} not produced by {kind_name}")
    params = dict(kind.defaults)
    given = doc.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError(f"{where} [params] must be a table")
    for key, value in given.items():
        if key not in kind.defaults:
            raise ConfigError(f"{where} [params] unknown key {key!r} for kind {kind_name}")
        _check_type("[params]", key, value, kind.defaults[key])
        params[key] = value
    for key, default in kind.defaults.items():
        if isinstance(default, float) and isinstance(params[key], int):
            params[key] = float(params[key])
    assertions = []
    for i, a in enumerate(doc.get("assert", [])):
        sec = f"[[assert]] #{i + 1}"
        if not isinstance(a, dict) or set(a) != {"metric", "op", "value"}:
            raise ConfigError(f"{where} {sec} needs exactly metric, op and value")
        if a["metric"] not in kind.metrics:
            raise ConfigError(f"{where} {sec} unknown metric {a['metric']!r}; known: {', '.join(kind.metrics)}")
        if a["op"] not in OPS:
            raise ConfigError(f"{where} {sec} unknown op {a['op']!r}")
        assertions.append(Assertion(a["metric"], a["op"], a["value"]))
    script = doc.get("script", [])
    if script and kind_name != "spoof_plug":
        raise ConfigError(f"{where} [[script]] is only supported by spoof_plug")
    for i, step in enumerate(script):
        if not isinstance(step, dict) or "at_s" not in step or step.get("action") not in smartplug.SPOOF_ACTIONS:
            raise ConfigError(f"{where} [[script]] #{i + 1} needs at_s and an action from "
                              f"{', '.join(smartplug.SPOOF_ACTIONS)}")
    if [s["at_s"] for s in script] != sorted(s["at_s"] for s in script):
        raise ConfigError(f"{where} [[script]] actions must be in time order")
    return Scenario(name, kind_name, seed, topo_ref, topology, params, assertions, outputs, origin,
                    hashlib.sha256(text).hexdigest(), list(script))


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    if not path.exists() and not path.suffix:
        path = bundled("scenarios", str(path))
    doc = load_toml(path)
    return scenario_from_dict(doc, str(path.name), path.read_bytes(), path.parent)


# -- running ------------------------------------------------------------------------


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def execute(sc: Scenario, seed: Optional[int] = None) -> RunResult:
    if seed is not None and seed != sc.seed:
        sc = Scenario(**{**sc.__dict__, "seed": seed})
    art, metrics, probes = KINDS[sc.kind].runner(sc, dict(sc.params))
    metrics = {k: _clean(v) for k, v in metrics.items()}
    if sc.outputs is not None:
        art = {k: v for k, v in art.items() if k in sc.outputs}
    risk = assess_risk(sc.topology, probes)
    art["risk.json"] = risk.to_json().encode()
    art["risk.md"] = risk.to_markdown().encode()
    checks = [(a, *a.check(metrics)) for a in sc.assertions]
    manifest = {
        "scenario": sc.name, "kind": sc.kind, "seed": sc.seed, "config_sha256": sc.config_sha256,
        "topology": sc.topology_ref, "topology_digest": sc.topology.digest(),
        "artifacts": {k: _sha(v) for k, v in sorted(art.items())},
        "metrics": metrics,
        "assertions": [{"metric": a.metric, "op": a.op, "value": a.value, "passed": ok} for a, ok, _ in checks],
        "passed": all(ok for _, ok, _ in checks),
    }
    result = RunResult(sc, art, metrics, checks, manifest)
    from .report import render_report
    result.artifacts["report.md"] = render_report(manifest, art).encode()
    return result


def write_run(result: RunResult, out_dir: Union[str, Path]) -> Path:
    d = Path(out_dir) / result.scenario.name
    d.mkdir(parents=True, exist_ok=True)
    for name, data in sorted(result.artifacts.items()):
        (d / name).write_bytes(data)
    (d / "manifest.json").write_text(result.manifest_json())
    return d


def run_file(path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
             seed: Optional[int] = None) -> RunResult:
    result = execute(load_scenario(path), seed)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def bundled_scenarios() -> list[str]:
    return bundled_names("scenarios")


# -- plotting -----------------------------------------------------------------------

CURVES = {
    ("bias_c", "energy_kwh", "extra_kwh", "duty_cycle"): ("bias_c", "extra_kwh", "bias (°C)",
                                                           "extra energy (kWh)", "Extra cooling energy vs sensor bias"),
}


def plot_csv(text: str) -> str:
    """Render a known curve CSV as SVG; raise :class:`ConfigError` on an unknown schema."""
    import csv
    import io
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigError("empty curve file")
    header = tuple(rows[0])
    if header not in CURVES:
        raise ConfigError(f"unknown curve schema {list(header)}; expected one of {[list(h) for h in CURVES]}")
    xcol, ycol, xlabel, ylabel, title = CURVES[header]
    xi, yi = header.index(xcol), header.index(ycol)
    data = rows[1:]
    if not data:
        raise ConfigError("curve file has no data rows")
    try:
        xs = [float(r[xi]) for r in data]
        ys = [float(r[yi]) for r in data]
    except (ValueError, IndexError):
        raise ConfigError("curve file has a malformed row") from None
    return line_chart(xs, ys, xlabel, ylabel, title)
