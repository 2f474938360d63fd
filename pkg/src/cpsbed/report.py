"""Markdown summary of a scenario run directory.

The summary is a pure function of the manifest and artifact bytes, so two runs
with the same seed and configuration produce byte-identical reports.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Union

from .arch import FACTORS
from .errors import ConfigError

SEVERITY_NAMES = ("info", "low", "medium", "high", "critical")
PLOT_SUFFIXES = (".svg",)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _risk(artifacts: Mapping[str, Optional[bytes]]) -> Optional[dict]:
    raw = artifacts.get("risk.json")
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except ValueError:
        return None


def render_report(manifest: dict, artifacts: Mapping[str, Optional[bytes]]) -> str:
    """Render the run summary.  ``artifacts`` maps file names to bytes, or None when absent."""
    lines = [f"# Scenario `{manifest['scenario']}`", "",
             f"- kind: {manifest.get('kind', manifest['scenario'])}",
             f"- seed: {manifest['seed']}",
             f"- topology: {manifest.get('topology', '?')}",
             f"- config sha256: `{manifest['config_sha256'][:16]}`",
             f"- result: {'PASS' if manifest.get('passed') else 'FAIL'}", ""]

    lines += ["## Risk by factor", ""]
    risk = _risk(artifacts)
    if risk is None:
        lines += ["_risk.json absent_", ""]
    else:
        lines += ["| Factor | Score | Level | Findings |", "|---|---|---|---|"]
        for f in FACTORS:
            score = risk["scores"].get(f, 0)
            n = sum(1 for x in risk["findings"] if x["factor"] == f)
            lines.append(f"| {f} | {score} | {SEVERITY_NAMES[score]} | {n} |")
        lines.append("")
        probes = [x for x in risk["findings"] if str(x.get("rule_id", "")).startswith("PROBE-")]
        if probes:
            lines += ["Confirmed by the attack run:", ""]
            lines += [f"- `{x['rule_id']}` {x['title']}: {x['evidence']}" for x in probes]
            lines.append("")

    lines += ["## Attack outcome", "", "| Metric | Value |", "|---|---|"]
    lines += [f"| {k} | {_fmt(v)} |" for k, v in sorted(manifest.get("metrics", {}).items())]
    lines.append("")
    checks = manifest.get("assertions", [])
    if checks:
        lines += ["## Assertions", ""]
        lines += [f"- [{'x' if a['passed'] else ' '}] `{a['metric']} {a['op']} {a['value']!r}`" for a in checks]
        lines.append("")

    lines += ["## Artifacts", ""]
    names = sorted(set(manifest.get("artifacts", {})) | set(artifacts))
    names = [n for n in names if n != "report.md"]
    for name in names:
        present = artifacts.get(name) is not None
        if not present:
            lines.append(f"- {name}: absent")
        elif name.endswith(PLOT_SUFFIXES):
            lines.append(f"- [{name}]({name}) (plot)")
        else:
            lines.append(f"- [{name}]({name})")
    return "\n".join(lines) + "\n"


def report_from_dir(run_dir: Union[str, Path]) -> str:
    """Rebuild the summary from files on disk, flagging artifacts that are missing."""
    d = Path(run_dir)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise ConfigError(f"{d}: no manifest.json, not a run directory")
    try:
        manifest = json.loads(mpath.read_text())
    except ValueError as exc:
        raise ConfigError(f"{mpath}: {exc}") from None
    artifacts = {}
    for name in manifest.get("artifacts", {}):
        p = d / name
        artifacts[name] = p.read_bytes() if p.is_file() else None
    return render_report(manifest, artifacts)
