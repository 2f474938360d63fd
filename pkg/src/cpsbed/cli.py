"""Command-line entry point: ``cpsbed <command> ...``.

Exit status: 0 success, 2 configuration error, 3 assertion failure,
4 transport error.  ``CPSBED_SEED`` overrides scenario seeds and
``CPSBED_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import ipaddress
import json
import os
import shlex
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import ConfigError, TransportError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSERT = 3
EXIT_TRANSPORT = 4
MAX_SCAN_HOSTS = 4096


def _env_seed() -> Optional[int]:
    raw = os.environ.get("CPSBED_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"CPSBED_SEED={raw!r} is not an integer") from None


def _out_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get("CPSBED_OUT") or "runs")


# -- run ----------------------------------------------------------------------------


def cmd_run(args) -> int:
    from .scenarios import bundled_scenarios, run_file

    names = list(args.scenario)
    if args.all:
        names += bundled_scenarios()
    if not names:
        raise ConfigError("run: name at least one scenario file, or pass --all")
    seed = args.seed if args.seed is not None else _env_seed()
    out = _out_dir(args.out)
    status = EXIT_OK
    for name in names:
        result = run_file(name, out, seed)
        verdict = "PASS" if result.passed else "FAIL"
        print(f"{verdict} {result.scenario.name} seed={result.scenario.seed} -> "
              f"{out / result.scenario.name} (manifest {result.manifest_hash()[:12]})")
        for msg in result.failures:
            print(f"  assertion failed: {msg}")
        if not result.passed:
            status = EXIT_ASSERT
    return status


# -- validate -----------------------------------------------------------------------


def cmd_validate(args) -> int:
    from .arch import load_topology, validate_topology
    from .config import load_toml
    from .scenarios import load_scenario

    status = EXIT_OK
    for path in args.files:
        p = Path(path)
        if p.exists() and "scenario" not in load_toml(p):
            problems = [str(v) for v in validate_topology(load_topology(p))]
        else:
            sc = load_scenario(path)
            problems = [str(v) for v in validate_topology(sc.topology)]
        if problems:
            status = EXIT_CONFIG
            print(f"INVALID {path}")
            for line in problems:
                print(f"  {line}")
        else:
            print(f"OK {path}")
    return status


# -- scan-bacnet --------------------------------------------------------------------


def expand_targets(targets: Sequence[str]) -> list[str]:
    hosts: list[str] = []
    for t in targets:
        host, sep, port = t.partition(":")
        try:
            net = ipaddress.ip_network(host, strict=False)
        except ValueError:
            raise ConfigError(f"scan target {t!r} is not an address or network") from None
        addrs = [str(a) for a in (net.hosts() if net.num_addresses > 2 else net)]
        if len(hosts) + len(addrs) > MAX_SCAN_HOSTS:
            raise ConfigError(f"scan covers more than {MAX_SCAN_HOSTS} hosts")
        hosts += [f"{a}:{port}" if sep else a for a in addrs]
    return hosts


def cmd_scan_bacnet(args) -> int:
    from . import bacnet

    try:
        transport = bacnet.UdpTransport(args.allow, rate_per_s=args.rate, port=args.port)
    except bacnet.ScanNotAllowed as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"--allow: {exc}") from None
    hosts = expand_targets(args.targets)
    outside = [h for h in hosts if not transport.allowed(h.partition(":")[0])]
    if outside:
        raise ConfigError(f"{len(outside)} targets fall outside the allowlist, first {outside[0]}")
    probes = bacnet.scan_hosts(transport, hosts, args.timeout_ms, workers=args.workers)
    rows = []
    for p in probes:
        row = p.to_dict()
        if args.enumerate and p.verdict == bacnet.BACNET_DEVICE:
            row["objects"] = [e.to_dict() for e in bacnet.enumerate_objects(transport, p, args.timeout_ms)]
        rows.append(row)
        dev = f" device={p.device_id} vendor={p.vendor}" if p.device_id is not None else ""
        print(f"{p.endpoint}\t{p.verdict}{dev}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    if any(p.verdict == bacnet.TRANSPORT_ERROR for p in probes):
        return EXIT_TRANSPORT
    return EXIT_OK


# -- fuzz ---------------------------------------------------------------------------


def cmd_fuzz(args) -> int:
    from . import fuzz

    if args.external:
        target = fuzz.ExternalTarget(args.target, tuple(shlex.split(args.external)), args.timeout)
        corpus = None
    else:
        if args.target not in fuzz.TARGETS:
            raise ConfigError(f"unknown fuzz target {args.target!r}; known: {', '.join(fuzz.TARGETS)}")
        target = args.target
        corpus = None
    if args.corpus:
        try:
            corpus = fuzz.load_corpus(args.corpus)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if isinstance(target, fuzz.ExternalTarget) and corpus is None:
        raise ConfigError("external targets need --corpus")
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    report = fuzz.run_campaign(target, corpus=corpus, executions=args.executions, master_seed=seed,
                               workers=args.workers)
    out = Path(args.out) if args.out else _out_dir(None) / f"fuzz-{report.target}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    files = fuzz.write_fault_files(report, out.with_suffix("").as_posix() + "-faults") if report.faults else []
    hist = ", ".join(f"{k}={v}" for k, v in sorted(report.histogram.items()))
    print(f"{report.target}: {report.executions} executions, {report.fault_count} faults ({hist})")
    for f in files:
        print(f"  fault input {f}")
    print(f"report {out}")
    return EXIT_ASSERT if (args.fail_on_fault and report.fault_count) else EXIT_OK


# -- plot / report ------------------------------------------------------------------


def cmd_plot(args) -> int:
    from .scenarios import plot_csv

    try:
        text = Path(args.csv).read_text()
    except OSError as exc:
        raise ConfigError(f"{args.csv}: {exc.strerror}") from None
    svg = plot_csv(text)
    out = Path(args.output) if args.output else Path(args.csv).with_suffix(".svg")
    out.write_text(svg)
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import report_from_dir

    text = report_from_dir(args.run_dir)
    missing = [r for r in args.require if not (Path(args.run_dir) / r).is_file()]
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if missing:
        print(f"required artifacts absent: {', '.join(missing)}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpsbed", description="Simulated smart-building attack testbed.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute scenario files and write their artifacts")
    p.add_argument("scenario", nargs="*", help="scenario file or bundled scenario name")
    p.add_argument("--all", action="store_true", help="run every bundled scenario")
    p.add_argument("--out", help="output directory (default $CPSBED_OUT or ./runs)")
    p.add_argument("--seed", type=int, help="override the scenario seed (default $CPSBED_SEED)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check scenario or topology files without running them")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("scan-bacnet", help="Who-Is scan over real UDP sockets")
    p.add_argument("targets", nargs="+", help="addresses or CIDR networks, optionally host:port")
    p.add_argument("--allow", action="append", required=True, metavar="CIDR",
                   help="networks the scan may touch (repeatable, required)")
    p.add_argument("--rate", type=float, default=10.0, help="probes per second (default 10)")
    p.add_argument("--port", type=int, default=47808)
    p.add_argument("--timeout-ms", type=float, default=1000.0)
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--enumerate", action="store_true", help="read object lists of discovered devices")
    p.add_argument("--json", help="write probe results to this file")
    p.set_defaults(func=cmd_scan_bacnet)

    p = sub.add_parser("fuzz", help="mutation-fuzz a decoder")
    p.add_argument("target", help="knx, bacnet, smartplug, airquality, sentinel, or a label for --external")
    p.add_argument("--external", metavar="CMD", help="fuzz an external program fed on standard input")
    p.add_argument("--timeout", type=float, default=2.0, help="per-input timeout for --external")
    p.add_argument("--corpus", help="directory of *.bin seed inputs")
    p.add_argument("--executions", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="report path (default $CPSBED_OUT/fuzz-<target>.json)")
    p.add_argument("--fail-on-fault", action="store_true", help="exit 3 when any fault is found")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("plot", help="render a curve CSV as SVG")
    p.add_argument("csv")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="markdown summary of a run directory")
    p.add_argument("run_dir")
    p.add_argument("-o", "--output")
    p.add_argument("--require", action="append", default=[], metavar="FILE",
                   help="exit 2 if this artifact is missing (repeatable)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
