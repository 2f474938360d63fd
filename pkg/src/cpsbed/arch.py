"""Unified IoT/CPS architecture model and six-factor risk assessment.

A :class:`Topology` is things, controllers, gateways, firewalls and servers
joined by links typed by their I/O class.  UART and proprietary I/O carry no
networking of their own, so traffic may only cross them when a controller or
gateway sits on the link to bridge it.  Firewalls are declared with the set of
neighbours on their outside; unsolicited inbound flows are governed by policy.

Risk is scored per factor (hardware, networking, OS, software, data, human)
as the maximum severity among that factor's findings, mapped to 0-4.  That
scale is a convention of this testbed and is stated in every report.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .errors import ConfigError

NODE_KINDS = ("thing", "actuator", "sensor", "controller", "gateway", "firewall",
              "server", "client", "attacker")
IO_CLASSES = ("uart", "knx", "bacnet_ip", "wifi", "ethernet", "proprietary_io")
NON_NETWORKED_IO = frozenset({"uart", "proprietary_io"})
EXPOSURE_FLAGS = ("physically_exposed_io", "default_credentials", "unencrypted_storage")
BRIDGES = frozenset({"controller", "gateway"})
FACTORS = ("hardware", "networking", "os", "software", "data", "human")

SCALE_NOTE = ("Factor score = highest finding severity (info=0, low=1, medium=2, high=3, "
              "critical=4); this 0-4 scale is a testbed convention.")


class Severity(IntEnum):
    INFO = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    CRITICAL = 4

    @classmethod
    def parse(cls, name: Union[str, "Severity"]) -> "Severity":
        if isinstance(name, Severity):
            return name
        return cls[name.upper()]

    def __str__(self):
        return self.name.lower()


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    exposure: frozenset = frozenset()
    label: str = ""


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    io_class: str
    networked: bool
    encrypted: bool = False
    authenticated: bool = False
    id: str = ""
    latency_us: int = 1000

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", f"{self.a}--{self.b}")

    def other(self, node_id: str) -> str:
        return self.b if node_id == self.a else self.a


@dataclass(frozen=True)
class FirewallPolicy:
    node: str
    outside: frozenset
    inbound_unsolicited: bool = False
    outbound: bool = True


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    firewalls: tuple[FirewallPolicy, ...] = ()
    name: str = ""

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UnknownNode(node_id)

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(f"no link {link_id!r}")

    def policy(self, node_id: str) -> Optional[FirewallPolicy]:
        for p in self.firewalls:
            if p.node == node_id:
                return p
        return None

    def neighbours(self, node_id: str) -> list[tuple[str, Link]]:
        return [(l.other(node_id), l) for l in self.links if node_id in (l.a, l.b)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": [{"id": n.id, "kind": n.kind, "exposure": sorted(n.exposure), "label": n.label}
                      for n in self.nodes],
            "links": [{"id": l.id, "a": l.a, "b": l.b, "io": l.io_class, "networked": l.networked,
                       "encrypted": l.encrypted, "authenticated": l.authenticated,
                       "latency_us": l.latency_us} for l in self.links],
            "firewalls": [{"node": p.node, "outside": sorted(p.outside),
                           "inbound_unsolicited": p.inbound_unsolicited, "outbound": p.outbound}
                          for p in self.firewalls],
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def make_link(a: str, b: str, io_class: str, networked: Optional[bool] = None, **kw) -> Link:
    """Link with ``networked`` defaulted from its I/O class."""
    if networked is None:
        networked = io_class not in NON_NETWORKED_IO
    return Link(a, b, io_class, networked, **kw)


# -- config -----------------------------------------------------------------------


def topology_from_dict(data: dict, name: str = "") -> Topology:
    try:
        nodes = tuple(
            Node(str(n["id"]), str(n["kind"]), frozenset(n.get("exposure", ())), n.get("label", ""))
            for n in data.get("nodes", ())
        )
        links = tuple(
            make_link(str(l["a"]), str(l["b"]), str(l["io"]), l.get("networked"),
                      encrypted=bool(l.get("encrypted", False)),
                      authenticated=bool(l.get("authenticated", False)),
                      id=l.get("id", ""), latency_us=int(l.get("latency_us", 1000)))
            for l in data.get("links", ())
        )
        firewalls = tuple(
            FirewallPolicy(str(f["node"]), frozenset(f.get("outside", ())),
                           bool(f.get("inbound_unsolicited", False)), bool(f.get("outbound", True)))
            for f in data.get("firewalls", ())
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"topology {name or '?'}: missing or invalid field {exc}") from None
    return Topology(nodes, links, firewalls, name=data.get("name", name))


def load_topology(path: Union[str, Path]) -> Topology:
    from .config import load_toml

    path = Path(path)
    return topology_from_dict(load_toml(path), name=path.stem)


# -- validation ------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    element: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.element}: {self.message} [{self.rule}]"


def validate_topology(t: Topology) -> list[Violation]:
    out: list[Violation] = []
    seen: set[str] = set()
    for n in t.nodes:
        if n.id in seen:
            out.append(Violation(n.id, "unique-node-id", f"node id {n.id!r} defined twice"))
        seen.add(n.id)
        if n.kind not in NODE_KINDS:
            out.append(Violation(n.id, "node-kind", f"unknown node kind {n.kind!r}"))
        for flag in sorted(n.exposure - set(EXPOSURE_FLAGS)):
            out.append(Violation(n.id, "exposure-flag", f"unknown exposure flag {flag!r}"))

    link_ids: set[str] = set()
    for l in t.links:
        if l.id in link_ids:
            out.append(Violation(l.id, "unique-link-id", f"link id {l.id!r} defined twice"))
        link_ids.add(l.id)
        for end in (l.a, l.b):
            if end not in seen:
                out.append(Violation(l.id, "link-endpoint", f"link endpoint {end!r} is not a node"))
        if l.io_class not in IO_CLASSES:
            out.append(Violation(l.id, "io-class", f"unknown I/O class {l.io_class!r}"))
        elif l.networked != (l.io_class not in NON_NETWORKED_IO):
            out.append(Violation(
                l.id, "networked-io",
                f"{l.io_class} link marked networked={l.networked}; uart and proprietary_io "
                "have no networking capability, every other class does"))

    for p in t.firewalls:
        if p.node not in seen:
            out.append(Violation(p.node, "firewall-node", f"firewall policy for unknown node {p.node!r}"))
            continue
        if t.node(p.node).kind != "firewall":
            out.append(Violation(p.node, "firewall-node", f"policy attached to non-firewall {p.node!r}"))
        adjacent = {nb for nb, _ in t.neighbours(p.node)}
        for o in sorted(p.outside - adjacent):
            out.append(Violation(p.node, "firewall-outside", f"outside neighbour {o!r} is not adjacent"))

    if t.nodes:
        start = t.nodes[0].id
        reached = {start}
        todo = [start]
        while todo:
            cur = todo.pop()
            for nb, _ in t.neighbours(cur):
                if nb in seen and nb not in reached:
                    reached.add(nb)
                    todo.append(nb)
        for n in t.nodes:
            if n.id not in reached:
                out.append(Violation(n.id, "connected", f"node {n.id!r} is disconnected from {start!r}"))
    return out


# -- reachability ------------------------------------------------------------------


def _crossing_allowed(t: Topology, fw: str, prev: str, nxt: str, initiated_by_src: bool) -> bool:
    p = t.policy(fw)
    if p is None:
        return True
    came_out = prev in p.outside
    going_out = nxt in p.outside
    if came_out == going_out:
        return True
    inbound = came_out and not going_out
    # who opened the flow decides which rule governs this crossing
    initiator_outside = inbound if initiated_by_src else not inbound
    return p.inbound_unsolicited if initiator_outside else p.outbound


def reachable(t: Topology, src: str, dst: str, initiated_by_src: bool = True) -> bool:
    """Whether traffic from ``src`` can reach ``dst``.

    ``initiated_by_src=False`` asks whether ``src`` can *reply* on a flow that
    ``dst`` opened.
    """
    ids = {n.id for n in t.nodes}
    for x in (src, dst):
        if x not in ids:
            raise UnknownNode(x)
    if src == dst:
        return True
    kinds = {n.id: n.kind for n in t.nodes}
    start = (src, None)
    seen = {start}
    queue = deque([start])
    while queue:
        node, prev = queue.popleft()
        for nb, link in t.neighbours(node):
            if nb not in ids:
                continue
            if not link.networked and kinds[link.a] not in BRIDGES and kinds[link.b] not in BRIDGES:
                continue
            if kinds[node] == "firewall" and prev is not None and node != src:
                if not _crossing_allowed(t, node, prev, nb, initiated_by_src):
                    continue
            if nb == dst:
                return True
            state = (nb, node)
            if state not in seen:
                seen.add(state)
                queue.append(state)
    return False


def reachable_via_relay(t: Topology, a: str, b: str, relay: str) -> bool:
    """Both parties dial out to a relay server, as smart-plug clouds do."""
    return reachable(t, a, relay, True) and reachable(t, b, relay, True)


# -- risk ------------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    factor: str
    severity: Severity
    title: str
    evidence: str
    ref: str
    rule_id: str = ""

    def __post_init__(self):
        if self.factor not in FACTORS:
            raise ValueError(f"factor must be one of {FACTORS}, got {self.factor!r}")
        object.__setattr__(self, "severity", Severity.parse(self.severity))

    def sort_key(self):
        return (FACTORS.index(self.factor), -int(self.severity), self.title, self.ref, self.rule_id)

    def to_dict(self) -> dict:
        return {"factor": self.factor, "severity": str(self.severity), "rule_id": self.rule_id,
                "title": self.title, "ref": self.ref, "evidence": self.evidence}


@dataclass(frozen=True)
class Rule:
    rule_id: str
    scope: str  # "node" | "link" | "firewall"
    factor: str
    severity: Severity
    title: str
    predicate: Callable[..., Optional[str]]


def _flag(flag: str, evidence: str):
    return lambda n: evidence if flag in n.exposure else None


CHECKLIST: tuple[Rule, ...] = (
    Rule("HW-EXPOSED-IO", "node", "hardware", Severity.HIGH,
         "Physically reachable debug/data I/O",
         _flag("physically_exposed_io",
               "a cable attached to the exposed port can read or reflash firmware")),
    Rule("NET-PLAINTEXT", "link", "networking", Severity.HIGH,
         "Unencrypted network link",
         lambda l: (f"{l.io_class} traffic between {l.a} and {l.b} is readable in transit"
                    if l.networked and not l.encrypted else None)),
    Rule("NET-NO-AUTH", "link", "networking", Severity.MEDIUM,
         "Unauthenticated network link",
         lambda l: (f"peers on {l.io_class} link {l.a}<->{l.b} are not authenticated; "
                    "identities can be forged" if l.networked and not l.authenticated else None)),
    Rule("NET-INBOUND-OPEN", "firewall", "networking", Severity.MEDIUM,
         "Firewall admits unsolicited inbound traffic",
         lambda p: "inbound_unsolicited=true" if p.inbound_unsolicited else None),
    Rule("DATA-PLAIN-STORAGE", "node", "data", Severity.MEDIUM,
         "Stored data not encrypted",
         _flag("unencrypted_storage", "flash contents (credentials, configuration) readable when dumped")),
    Rule("HUM-DEFAULT-CRED", "node", "human", Severity.HIGH,
         "Default credentials in use",
         _flag("default_credentials", "device ships with a guessable default password")),
)


@dataclass
class RiskReport:
    scores: dict
    findings: list
    topology_digest: str
    topology_name: str = ""

    def to_dict(self) -> dict:
        return {
            "topology": self.topology_name,
            "topology_digest": self.topology_digest,
            "scale": SCALE_NOTE,
            "scores": {f: self.scores[f] for f in FACTORS},
            "findings": [f.to_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        lines = [f"# Risk assessment: {self.topology_name or 'topology'}", "",
                 f"Topology digest: `{self.topology_digest[:16]}`", "",
                 "| Factor | Score |", "|---|---|"]
        lines += [f"| {f} | {self.scores[f]} |" for f in FACTORS]
        lines += ["", f"_{SCALE_NOTE}_", "", "## Findings", ""]
        if not self.findings:
            lines.append("No findings.")
        for f in self.findings:
            rid = f" `{f.rule_id}`" if f.rule_id else ""
            lines.append(f"- **{f.factor}/{f.severity}**{rid} {f.title} ({f.ref}): {f.evidence}")
        return "\n".join(lines) + "\n"


def factor_scores(findings: Iterable[Finding]) -> dict:
    scores = {f: 0 for f in FACTORS}
    for f in findings:
        scores[f.factor] = max(scores[f.factor], int(f.severity))
    return scores


def assess_risk(t: Topology, probes: Sequence[Finding] = (), checklist: Sequence[Rule] = CHECKLIST) -> RiskReport:
    found: list[Finding] = []
    for rule in checklist:
        if rule.scope == "node":
            elements = [(n.id, n) for n in t.nodes]
        elif rule.scope == "link":
            elements = [(l.id, l) for l in t.links]
        elif rule.scope == "firewall":
            elements = [(p.node, p) for p in t.firewalls]
        else:
            raise ValueError(f"rule {rule.rule_id}: unknown scope {rule.scope!r}")
        for ref, elem in elements:
            evidence = rule.predicate(elem)
            if evidence:
                found.append(Finding(rule.factor, rule.severity, rule.title, evidence, ref, rule.rule_id))
    found.extend(probes)
    found.sort(key=Finding.sort_key)
    return RiskReport(factor_scores(found), found, t.digest(), t.name)
