import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from cpsbed.errors import DecodeError
from cpsbed.sim import Simulation
from cpsbed.smartplug import (
    CODE_OFFLINE,
    CODE_OK,
    DEFAULT_OUI,
    EXISTS_WRONG_PASSWORD,
    OFFLINE_OR_ABSENT,
    ONLINE,
    Client,
    ClientMessage,
    FakePlug,
    MacAddress,
    PhoneApp,
    RelayServer,
    SmartPlug,
    SpoofRejected,
    attack_bruteforce,
    attack_scan,
    attack_spoof,
    auth_response_table,
    build_plugnet,
    decode_client_message,
    deobfuscate,
    encode_client_message,
    format_frame,
    obfuscate,
    pin_dictionary,
    run_spoof_scenario,
)

MAC = MacAddress.from_parts(DEFAULT_OUI, 0x000042)


def rotl3_by_hand(b):
    # write the bit string out and rotate it as text
    bits = format(b, "08b")
    return int(bits[3:] + bits[:3], 2)


def test_obfuscate_golden():
    assert obfuscate(b"1234").hex(" ").upper() == "89 91 99 A1"
    assert bytes(rotl3_by_hand(b) for b in b"1234") == obfuscate(b"1234")


def test_obfuscate_empty():
    assert obfuscate(b"") == b"" == deobfuscate(b"")


@given(st.binary())
def test_obfuscate_inverse(x):
    assert deobfuscate(obfuscate(x)) == x
    assert obfuscate(deobfuscate(x)) == x


def test_obfuscate_bijection():
    assert len({obfuscate(bytes([b])) for b in range(256)}) == 256
    assert all(obfuscate(bytes([b]))[0] == rotl3_by_hand(b) for b in range(256))


def test_mac_text():
    m = MacAddress.parse("AC:CF:23:00:00:42")
    assert m == MAC and str(m) == "AC:CF:23:00:00:42"
    assert m.oui == DEFAULT_OUI and m.suffix == 0x42
    for bad in ("ac:cf:23:00:00:42", "AC:CF:23:00:00", "ACCF23000042"):
        with pytest.raises(ValueError):
            MacAddress.parse(bad)


@given(st.sampled_from(["REG", "HEARTBEAT", "AUTH", "CMD"]), st.binary(min_size=6, max_size=6), st.data())
def test_client_message_round_trip(verb, raw, data):
    arg = None
    if verb == "AUTH":
        arg = obfuscate(data.draw(st.binary(min_size=1, max_size=8))).hex()
    elif verb == "CMD":
        arg = data.draw(st.sampled_from(["ON", "OFF"]))
    m = ClientMessage(verb, MacAddress(raw), arg)
    assert decode_client_message(encode_client_message(m)) == m


@pytest.mark.parametrize("frame,code", [
    (b"", "bad-length"),
    (b"REG", "bad-arity"),
    (b"REG zz", "bad-mac"),
    (b"FOO AC:CF:23:00:00:42", "unknown-verb"),
    (b"AUTH AC:CF:23:00:00:42 xyz", "bad-password-hex"),
    (b"CMD AC:CF:23:00:00:42 MAYBE", "bad-command"),
    (b"REG  AC:CF:23:00:00:42", "bad-token"),
    (b"\xffREG", "not-ascii"),
])
def test_decode_errors(frame, code):
    with pytest.raises(DecodeError) as ei:
        decode_client_message(frame)
    assert ei.value.code == code


@settings(max_examples=500)
@given(st.binary(max_size=300))
def test_parser_total(data):
    try:
        decode_client_message(data)
    except DecodeError:
        pass


def test_auth_response_table_exhaustive():
    table = auth_response_table()
    assert table == {
        (True, True): CODE_OK,
        (True, False): None,
        (False, True): CODE_OFFLINE,
        (False, False): CODE_OFFLINE,
    }


def world():
    sim = Simulation(seed=2)
    server = RelayServer(sim)
    plug = SmartPlug(sim, "plug", MAC)
    sim.run_for(1_000_000)
    return sim, server, plug


def test_unknown_mac_is_5000():
    sim, server, plug = world()
    assert Client(sim, "app").auth(MacAddress.from_parts(DEFAULT_OUI, 7), "1234") == CODE_OFFLINE


def test_malformed_is_silent():
    sim, server, plug = world()
    c = Client(sim, "app")
    assert c.request(b"HELLO") is None
    assert server.dropped == 1


def test_expired_session_is_5000():
    sim, server, plug = world()
    plug.power_off()
    sim.run_for(200_000_000)
    assert Client(sim, "app").auth(MAC, "1234") == CODE_OFFLINE


def test_heartbeats_keep_session():
    sim, server, plug = world()
    sim.run_for(600_000_000)
    assert server.online(MAC) is not None


def test_cmd_requires_auth():
    sim, server, plug = world()
    c = Client(sim, "app")
    assert c.command(MAC, True) is None
    assert plug.switch_on is False
    assert c.auth(MAC, "1234") == CODE_OK
    assert c.command(MAC, True) == f"ACK {MAC} ON"
    assert plug.switch_on is True


def test_wrong_password_does_not_authenticate():
    sim, server, plug = world()
    c = Client(sim, "app")
    assert c.auth(MAC, "0000") is None
    assert c.command(MAC, True) is None
    assert plug.switch_on is False


def test_rebind_displaces_and_kicks():
    sim, server, plug = world()
    a = FakePlug(sim, MAC, "fake-a")
    b = FakePlug(sim, MAC, "fake-b")
    a.register()
    b.register()
    sim.run_for(10_000)
    assert server.sessions[MAC].endpoint == "fake-b"
    assert plug.kicked_at and not plug.registered
    assert a.state.fake_session_active is False
    assert b.state.fake_session_active is True


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["p1", "p2", "p3"]),
                          st.sampled_from(["REG", "HEARTBEAT"]),
                          st.integers(0, 2)), max_size=20))
def test_session_uniqueness(ops):
    sim = Simulation()
    server = RelayServer(sim)
    macs = [MacAddress.from_parts(DEFAULT_OUI, i) for i in range(3)]
    for name in ("p1", "p2", "p3"):
        sim.add_endpoint(name)
    for src, verb, i in ops:
        sim.send(src, server.id, format_frame(verb, macs[i]))
        sim.run_for(5000)
    assert set(server.sessions) <= set(macs)
    assert all(isinstance(s.endpoint, str) for s in server.sessions.values())


def test_scan_finds_three_default_plugs():
    sim = Simulation(seed=1)
    net = build_plugnet(sim, count=3)
    sim.run_for(1_000_000)
    res = attack_scan(sim, DEFAULT_OUI, range(0x100, 0x200))
    online = sorted(m for m, v in res if v == ONLINE)
    assert online == sorted(p.mac for p in net.plugs)
    assert sum(v == OFFLINE_OR_ABSENT for _, v in res) == 253


def test_scan_empty_window():
    sim = Simulation(seed=1)
    build_plugnet(sim, count=3)
    sim.run_for(1_000_000)
    res = attack_scan(sim, DEFAULT_OUI, range(0x900, 0x910))
    assert {v for _, v in res} == {OFFLINE_OR_ABSENT}


def test_scan_strong_password_detected_as_existing():
    sim = Simulation(seed=1)
    net = build_plugnet(sim, count=2, passwords={1: "v3ry-str0ng"})
    sim.run_for(1_000_000)
    verdicts = dict(attack_scan(sim, DEFAULT_OUI, range(0x100, 0x200)))
    assert verdicts[net.plugs[0].mac] == ONLINE
    assert verdicts[net.plugs[1].mac] == EXISTS_WRONG_PASSWORD


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**16))
def test_scan_soundness(seed):
    sim = Simulation(seed=seed)
    net = build_plugnet(sim, count=4, password_policy="random4", window=32, offline=(0,))
    sim.run_for(1_000_000)
    for mac, verdict in attack_scan(sim, DEFAULT_OUI, range(0x100, 0x120)):
        if verdict == ONLINE:
            p = net.plug(mac)
            assert p.password == "1234" and p.powered


def test_bruteforce_order():
    sim, server, plug = world()
    r = attack_bruteforce(sim, MAC, ["0000", "1111", "1234"])
    assert (r.password, r.attempts, r.outcome) == ("1234", 3, "found")


def test_bruteforce_exhausted():
    sim, server, plug = world()
    r = attack_bruteforce(sim, MAC, ["0000", "1111"])
    assert (r.password, r.attempts, r.outcome) == (None, 2, "exhausted")


def test_bruteforce_offline():
    sim, server, plug = world()
    r = attack_bruteforce(sim, MacAddress.from_parts(DEFAULT_OUI, 9), ["0000", "1111"])
    assert (r.attempts, r.outcome) == (1, "offline")


def test_bruteforce_empty_dictionary():
    sim, server, plug = world()
    with pytest.raises(ValueError):
        attack_bruteforce(sim, MAC, [])


@pytest.mark.parametrize("seed", [4, 9])
def test_bruteforce_full_pin_space(seed):
    sim = Simulation(seed=seed)
    net = build_plugnet(sim, count=1, password_policy="random4")
    sim.run_for(1_000_000)
    pin = net.plugs[0].password
    r = attack_bruteforce(sim, net.plugs[0].mac, pin_dictionary())
    assert r.password == pin
    assert r.attempts == int(pin) + 1 <= 10**4


def test_spoof_end_to_end():
    out = run_spoof_scenario(seed=0)
    assert out.success
    assert out.state.captured_password == "1234"
    assert out.final_switch_on is False
    kinds = [k for _, k in out.state.events]
    assert kinds[:2] == ["session-hijacked", "password-captured"]
    assert "session-lost" in kinds


def test_spoof_deterministic():
    assert run_spoof_scenario(seed=3).to_dict() == run_spoof_scenario(seed=3).to_dict()


def test_spoof_without_app_fails():
    out = run_spoof_scenario(app_acts=False)
    assert out.state.captured_password is None
    assert not out.success


def test_spoof_requires_registered_victim():
    sim = Simulation()
    server = RelayServer(sim)
    with pytest.raises(SpoofRejected):
        attack_spoof(sim, server, MAC)


def test_spoof_lockout_countdown():
    sim, server, plug = world()
    fake = attack_spoof(sim, server, MAC, lockout_s=60)
    sim.run_for(20_000_000)
    st_ = fake.refresh()
    assert st_.fake_session_active
    assert st_.lockout_remaining_us == 60_000_000 - (sim.now - 1_002_000)
    assert st_.captured_password is None


def test_phone_app_retries_until_online():
    sim = Simulation()
    RelayServer(sim)
    plug = SmartPlug(sim, "plug", MAC, start_s=12.0)
    app = PhoneApp(sim, "app", MAC, "1234")
    app.switch(True, at_s=0.0)
    sim.run_for(30_000_000)
    auths = [t for t, k in app.log if k == "AUTH"]
    assert auths[:3] == [0, 5_000_000, 10_000_000]
    assert plug.switch_on and app.done
