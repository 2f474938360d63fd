import json
import subprocess
import sys

import pytest

from cpsbed.bacnet import UdpDeviceServer, demo_controller
from cpsbed.cli import EXIT_ASSERT, EXIT_CONFIG, EXIT_OK, EXIT_TRANSPORT, expand_targets, main


def test_run_writes_layout(tmp_path, capsys):
    assert main(["run", "knx_dump", "--out", str(tmp_path)]) == EXIT_OK
    d = tmp_path / "knx_dump"
    assert {"manifest.json", "report.md", "risk.json", "knx.pcap"} <= {p.name for p in d.iterdir()}
    assert capsys.readouterr().out.startswith("PASS knx_dump")


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("CPSBED_OUT", str(tmp_path))
    monkeypatch.setenv("CPSBED_SEED", "42")
    assert main(["run", "scan_plugs"]) == EXIT_OK
    assert json.loads((tmp_path / "scan_plugs" / "manifest.json").read_text())["seed"] == 42


def test_bad_env_seed(monkeypatch):
    monkeypatch.setenv("CPSBED_SEED", "abc")
    assert main(["run", "scan_plugs"]) == EXIT_CONFIG


def test_assertion_failure_exit(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text('[scenario]\nname = "knx_dump"\nseed = 1\ntopology = "smartbuilding"\n'
                 '[[assert]]\nmetric = "frames"\nop = "=="\nvalue = 0\n')
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_ASSERT
    assert "assertion failed: frames == 0" in capsys.readouterr().out


def test_config_error_exit(tmp_path, capsys):
    p = tmp_path / "s.toml"
    p.write_text('[scenario]\nname = "knx_dump"\n')
    assert main(["run", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "seed" in capsys.readouterr().err
    assert main(["run"]) == EXIT_CONFIG


def test_validate(tmp_path):
    assert main(["validate", "fdi_energy"]) == EXIT_OK
    bad = tmp_path / "t.toml"
    bad.write_text('[[nodes]]\nid = "a"\nkind = "toaster"\n')
    assert main(["validate", str(bad)]) == EXIT_CONFIG


def test_plot_and_report(tmp_path):
    assert main(["run", "fdi_energy", "--out", str(tmp_path)]) == EXIT_OK
    d = tmp_path / "fdi_energy"
    out = tmp_path / "c.svg"
    assert main(["plot", str(d / "bias_curve.csv"), "-o", str(out)]) == EXIT_OK
    assert out.read_bytes() == (d / "bias_curve.svg").read_bytes()
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["plot", str(bad)]) == EXIT_CONFIG
    assert main(["report", str(d), "-o", str(tmp_path / "r.md")]) == EXIT_OK
    (d / "mitm.log").unlink()
    assert main(["report", str(d), "-o", str(tmp_path / "r.md")]) == EXIT_OK
    assert "mitm.log: absent" in (tmp_path / "r.md").read_text()
    assert main(["report", str(d), "--require", "mitm.log", "-o", str(tmp_path / "r.md")]) == EXIT_CONFIG


def test_fuzz_command(tmp_path):
    report = tmp_path / "s.json"
    assert main(["fuzz", "sentinel", "--executions", "2000", "--seed", "1", "--out", str(report)]) == EXIT_OK
    data = json.loads(report.read_text())
    assert data["executions"] == 2000 and data["faults"]
    assert list((tmp_path / "s-faults").glob("*.bin"))
    assert main(["fuzz", "sentinel", "--executions", "2000", "--out", str(report), "--fail-on-fault"]) == EXIT_ASSERT
    assert main(["fuzz", "nope", "--out", str(report)]) == EXIT_CONFIG


def test_fuzz_with_corpus_dir(tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "a.bin").write_bytes(bytes.fromhex("BC110A1100E300800C1A3C"))
    assert main(["fuzz", "knx", "--corpus", str(tmp_path / "c"), "--executions", "500",
                 "--out", str(tmp_path / "k.json")]) == EXIT_OK
    assert main(["fuzz", "knx", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "k.json")]) \
        == EXIT_CONFIG


def test_expand_targets():
    assert expand_targets(["10.0.0.0/30"]) == ["10.0.0.1", "10.0.0.2"]
    assert expand_targets(["127.0.0.1:5000"]) == ["127.0.0.1:5000"]
    with pytest.raises(Exception):
        expand_targets(["not-a-host"])


def test_scan_requires_allowlist(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["scan-bacnet", "127.0.0.1"])
    assert exc.value.code == 2


def test_scan_outside_allowlist():
    assert main(["scan-bacnet", "10.0.0.1", "--allow", "127.0.0.0/8"]) == EXIT_CONFIG


def test_scan_loopback(tmp_path, capsys):
    dev = demo_controller()
    with UdpDeviceServer(dev.respond) as srv:
        out = tmp_path / "p.json"
        code = main(["scan-bacnet", srv.endpoint, "--allow", "127.0.0.1/32", "--timeout-ms", "500",
                     "--rate", "100", "--enumerate", "--json", str(out)])
    assert code == EXIT_OK
    rows = json.loads(out.read_text())
    assert rows[0]["verdict"] == "bacnet_device" and len(rows[0]["objects"]) == 3
    assert "device=" in capsys.readouterr().out


def test_scan_transport_error():
    assert main(["scan-bacnet", "127.0.0.1:0", "--allow", "127.0.0.1/32", "--timeout-ms", "100"]) \
        in (EXIT_OK, EXIT_TRANSPORT)


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "cpsbed.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "cpsbed" in r.stdout
