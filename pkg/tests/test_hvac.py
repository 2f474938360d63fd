import csv
import io
from dataclasses import replace

import pytest
from hypothesis import given
import hypothesis.strategies as st

from cpsbed.hvac import (
    DiurnalProfile,
    EnergyScenario,
    ThermalParams,
    curve_csv,
    reference_scenario,
    simulate,
    step_thermal,
    sweep_bias,
    thermostat,
)

GRID = [0, 0.5, 1, 1.5, 2, 2.5, 3]
# one compressor step = 60 s * 5000 W / COP 3 = 1e5 J = 1/36 kWh
STEP_KWH = 1 / 36


def const(v):
    return DiurnalProfile(mean=v, amplitude=0.0)


def test_equilibrium_no_change():
    s = EnergyScenario(params=ThermalParams(Q_internal=1e-300), T_out=const(28.0))
    assert step_thermal(28.0, False, s, 0.0) == pytest.approx(28.0, abs=1e-12)


def test_internal_gain_heats():
    s = EnergyScenario(T_out=const(28.0))
    assert step_thermal(28.0, False, s, 0.0) > 28.0


def test_cooling_off_converges_to_analytic_fixed_point():
    p = ThermalParams()
    s = EnergyScenario(params=p, T_out=const(30.0), T_set=1000.0, duration=30 * 86400)
    T = 30.0
    for k in range(s.steps):
        T = step_thermal(T, False, s, k * s.dt)
    assert T == pytest.approx(30.0 + p.Q_internal * p.R, abs=0.01)


def test_unstable_dt_rejected():
    with pytest.raises(ValueError):
        EnergyScenario(dt=1001.0)


@pytest.mark.parametrize("field", ["R", "C", "Q_internal", "P_cool", "COP"])
def test_params_positive(field):
    with pytest.raises(ValueError):
        ThermalParams(**{field: 0.0})


def test_deadband_positive():
    with pytest.raises(ValueError):
        EnergyScenario(deadband=0.0)


def test_thermostat_hysteresis():
    s = reference_scenario()
    assert thermostat(s.T_set, s, True) is True
    assert thermostat(s.T_set, s, False) is False
    assert thermostat(s.T_set + s.deadband, s, False) is True
    assert thermostat(s.T_set - s.deadband, s, True) is False


@given(st.floats(-3, 3), st.floats(15, 35))
def test_bias_shifts_thresholds_down(bias, T_true):
    s = reference_scenario()
    for state in (False, True):
        assert thermostat(T_true + bias, s, state) == thermostat(T_true, replace(s, T_set=s.T_set - bias), state)


def test_no_cooling_needed():
    s = EnergyScenario(params=ThermalParams(P_cool=50000.0), T_out=const(15.0), duration=86400)
    r = simulate(s)
    assert r.duty_cycle == 0.0 and r.energy_kwh == 0.0


def test_reference_golden_energies():
    e0 = simulate(reference_scenario(0.0))
    e2 = simulate(reference_scenario(2.0))
    assert e2.energy_kwh > e0.energy_kwh
    # frozen from the first run of this simulator: on-step counts 3425 and 4248
    assert e0.energy_kwh == pytest.approx(3425 * STEP_KWH, rel=1e-12)
    assert e2.energy_kwh == pytest.approx(4248 * STEP_KWH, rel=1e-12)


def test_discrete_energy_balance_oracle():
    """Heat removed equals envelope + internal gains minus stored heat, step for step."""
    s = reference_scenario(1.0, days=2)
    r = simulate(s, keep_trace=True)
    p = s.params
    gains = sum(s.dt * ((s.T_out(t) - T) / p.R + p.Q_internal) for t, T, _ in r.trace)
    t_last, T_last, on_last = r.trace[-1]
    T_end = step_thermal(T_last, on_last, s, t_last)
    stored = p.C * (T_end - r.trace[0][1])
    removed_j = r.energy_kwh * 3.6e6 * p.COP
    assert removed_j == pytest.approx(gains - stored, rel=1e-9)


def test_mean_temperature_falls_with_bias():
    temps = [simulate(reference_scenario(b)).mean_temperature for b in GRID]
    assert all(a > b for a, b in zip(temps, temps[1:]))
    assert temps[0] == pytest.approx(24.0, abs=0.1)


def test_sweep_zero_only():
    pts = sweep_bias(reference_scenario(), [0])
    assert [(p.bias, p.extra_kwh) for p in pts] == [(0, 0.0)]


def test_sweep_requires_zero():
    with pytest.raises(ValueError):
        sweep_bias(reference_scenario(), [1.0])


def test_sweep_monotone():
    pts = sweep_bias(reference_scenario(), GRID)
    extra = [p.extra_kwh for p in pts]
    assert extra[0] == 0.0
    assert all(a <= b for a, b in zip(extra, extra[1:]))
    assert extra[-1] > 0


def test_extra_energy_linear_in_time():
    week = sweep_bias(reference_scenario(days=7), [0, 2])[1].extra_kwh
    fortnight = sweep_bias(reference_scenario(days=14), [0, 2])[1].extra_kwh
    assert fortnight == pytest.approx(2 * week, rel=0.05)


def test_deterministic():
    a = simulate(reference_scenario(1.5))
    b = simulate(reference_scenario(1.5))
    assert (a.energy_kwh, a.mean_temperature, a.duty_cycle) == (b.energy_kwh, b.mean_temperature, b.duty_cycle)


def test_result_invariants():
    for b in GRID:
        r = simulate(reference_scenario(b, days=1))
        assert r.energy_kwh >= 0
        assert 0 <= r.duty_cycle <= 1


def test_curve_csv():
    text = curve_csv(sweep_bias(reference_scenario(days=1), [0, 1]))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["bias_c", "energy_kwh", "extra_kwh", "duty_cycle"]
    assert float(rows[0]["extra_kwh"]) == 0.0
