import csv
import io
import json
import math

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from cpsbed.airquality import (
    AqDevice,
    AqReport,
    AqServer,
    OUI_AQ,
    aqi_category,
    attack_pollute,
    decode_report,
    encode_report,
    mixture_mean,
    quantise,
    run_pollution,
)
from cpsbed.errors import DecodeError
from cpsbed.sim import Simulation
from cpsbed.smartplug import MacAddress

MAC = MacAddress.from_parts(OUI_AQ, 0x42)


def line(pm, ts, mac=MAC):
    return encode_report(AqReport(mac, pm, ts))


def test_wire_format():
    assert line(5.0, 120) == b"POST /update id=5C:CF:7F:00:00:42&pm25=5.0&ts=120"


@given(st.integers(0, 10**6), st.integers(0, 10**11), st.binary(min_size=6, max_size=6))
def test_report_round_trip(tenths, ts, raw):
    r = AqReport(MacAddress(raw), tenths / 10, ts)
    assert decode_report(encode_report(r)) == r


@pytest.mark.parametrize("bad", [
    b"POST /update id=5C:CF:7F:00:00:42&pm25=5&ts=1",
    b"POST /update id=5c:cf:7f:00:00:42&pm25=5.0&ts=1",
    b"POST /update id=5C:CF:7F:00:00:42&pm25=-1.0&ts=1",
    b"POST /update id=5C:CF:7F:00:00:42&pm25=5.0&ts=1&x=2",
    b"GET /update id=5C:CF:7F:00:00:42&pm25=5.0&ts=1",
    b"POST /update id=5C:CF:7F:00:00:42&pm25=05.0&ts=1",
    b"\xff",
    b"",
])
def test_malformed_rejected(bad):
    with pytest.raises(DecodeError):
        decode_report(bad)


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_parser_total(data):
    try:
        decode_report(data)
    except DecodeError:
        pass


def test_quantise():
    assert quantise(1.25) in (1.2, 1.3)
    assert quantise(0.04) == 0.0
    assert quantise(499.96) == 500.0


def server():
    sim = Simulation()
    return sim, AqServer(sim)


def test_auto_registration():
    sim, srv = server()
    assert srv.snapshot(60, now_s=0).entries == ()
    srv.ingest(line(3.0, 0))
    snap = srv.snapshot(60, now_s=0)
    assert snap.entry(MAC).count == 1 and snap.entry(MAC).location is None


def test_ten_reports_average():
    sim, srv = server()
    for i in range(10):
        srv.ingest(line(5.0, i * 60))
    assert srv.snapshot(3600, now_s=540).entry(MAC).average == 5.0


def test_malformed_counter_and_unchanged_snapshot():
    sim, srv = server()
    srv.ingest(line(5.0, 0))
    before = srv.snapshot(60, now_s=0)
    assert srv.ingest(b"POST /update id=junk") is False
    assert srv.dropped == 1
    assert srv.snapshot(60, now_s=0) == before


def test_window_bounds_inclusive():
    sim, srv = server()
    for ts, v in [(0, 1.0), (100, 2.0), (200, 3.0)]:
        srv.ingest(line(v, ts))
    assert srv.snapshot(100, now_s=200).entry(MAC).average == 2.5
    assert srv.snapshot(99, now_s=200).entry(MAC).average == 3.0


def test_empty_window_flagged():
    sim = Simulation()
    srv = AqServer(sim, locations={MAC: (27.0, -82.0)})
    e = srv.snapshot(60, now_s=10).entry(MAC)
    assert e.count == 0 and e.average is None and e.category == "no-data"


def test_snapshot_idempotent():
    sim, srv = server()
    srv.ingest(line(5.0, 0))
    assert srv.snapshot(60, now_s=30) == srv.snapshot(60, now_s=30)


def test_window_must_be_positive():
    sim, srv = server()
    with pytest.raises(ValueError):
        srv.snapshot(0)


def test_retention_trims_old_reports():
    sim = Simulation()
    srv = AqServer(sim, retention_s=100)
    for ts in range(0, 1000, 10):
        srv.ingest(line(1.0, ts))
    assert min(r.ts for r in srv.buffers[MAC]) >= 990 - 100


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 3000)), max_size=40))
def test_server_state_is_pure_fold(reports):
    lines = [line(v / 10, ts) for v, ts in reports]
    states = []
    for _ in range(2):
        sim, srv = server()
        for l in lines:
            srv.ingest(l)
        states.append(srv.snapshot(3600, now_s=3000))
    assert states[0] == states[1]
    if reports:
        vals = [v / 10 for v, ts in reports if ts >= 0]
        assert states[0].entry(MAC).average == pytest.approx(sum(vals) / len(vals))


def test_aqi_breakpoints():
    assert [aqi_category(v) for v in (0, 12.0, 12.1, 35.4, 35.5, 150.0, 150.1)] == [
        "good", "good", "moderate", "moderate", "unhealthy-sensitive", "unhealthy-sensitive", "unhealthy"]


def test_mixture_mean():
    assert mixture_mean([1.0, 3.0], 2, 10.0) == 6.0
    with pytest.raises(ValueError):
        mixture_mean([], 0, 1.0)


def test_reference_attack_crosses_threshold():
    run = run_pollution(seed=0)
    assert all(e.average < 5 for e in run.before.entries)
    after = run.after.entry(run.victim).average
    assert after > 400
    assert after == pytest.approx(run.closed_form(), rel=1e-9)
    # the other devices are untouched
    assert all(e.average < 5 for e in run.after.entries if e.mac != str(run.victim))


@pytest.mark.parametrize("rate,value", [(0.5, 80.0), (0.1, 1000.0), (2.0, 20.0)])
def test_mixture_law_various(rate, value):
    run = run_pollution(seed=3, rate_hz=rate, fake_value=value)
    got = run.after.entry(run.victim)
    assert got.count == len(run.genuine_in_window()) + run.fake_in_window()
    assert got.average == pytest.approx(run.closed_form(), rel=1e-9)


def test_rate_zero_no_injection():
    run = run_pollution(seed=1, rate_hz=0)
    assert run.injector.report.frames_sent == 0
    assert run.after.entry(run.victim).average < 5


def test_noop_pollution():
    run = run_pollution(seed=2, fake_value=1.5, rate_hz=0.2)
    assert run.after.entry(run.victim).average == pytest.approx(1.5, abs=0.2)


def test_pollution_deterministic():
    a, b = run_pollution(seed=9), run_pollution(seed=9)
    assert a.to_dict() == b.to_dict()
    assert a.sim.log_digest() == b.sim.log_digest()


def test_exports():
    run = run_pollution(seed=0)
    data = json.loads(run.after.to_json())
    assert {d["mac"] for d in data} == {e.mac for e in run.after.entries}
    victim = next(d for d in data if d["mac"] == str(run.victim))
    assert victim["category"] == "unhealthy"
    rows = list(csv.DictReader(io.StringIO(run.after.to_csv())))
    assert len(rows) == len(data)
    svg = run.after.to_svg()
    assert svg.startswith("<svg") and svg.count("<circle") == len(data) + 5
    assert svg == run.after.to_svg()
    assert "#d62828" in svg


def test_device_reports_on_interval():
    sim = Simulation()
    srv = AqServer(sim)
    dev = AqDevice(sim, "d", MAC, (0.0, 0.0), lambda t: 2.0, interval_s=60)
    sim.run_until(600_500_000)
    assert [r.ts for r in dev.sent] == list(range(0, 601, 60))
    assert srv.snapshot(3600).entry(MAC).count == 11


def test_injector_schedule():
    sim = Simulation()
    AqServer(sim)
    inj = attack_pollute(sim, MAC, 500.0, 2.0, 10)
    sim.run_until(20_000_000)
    assert inj.report.frames_sent == 20
    assert (inj.report.first_ts, inj.report.last_ts) == (0, 9)
