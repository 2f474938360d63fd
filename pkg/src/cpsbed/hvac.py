"""First-order RC model of a cooled room under a biased temperature sensor.

The room follows

    dT/dt = (T_out(t) - T) / (R*C) + (Q_internal - P_cool*[on]) / C

integrated with explicit Euler.  A hysteresis thermostat acts on the *sensed*
temperature ``T + bias``, so a positive bias makes it hold the true room
temperature ``bias`` degrees lower, and the compressor runs longer.

Reference parameters are testbed choices, not measured values.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence


@dataclass(frozen=True)
class ThermalParams:
    R: float = 0.005          # K/W
    C: float = 2.0e6          # J/K
    Q_internal: float = 500.0  # W
    P_cool: float = 5000.0    # W (heat removed while on)
    COP: float = 3.0

    def __post_init__(self):
        for name in ("R", "C", "Q_internal", "P_cool", "COP"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def time_constant(self) -> float:
        return self.R * self.C


@dataclass(frozen=True)
class DiurnalProfile:
    """Outdoor temperature ``mean + amplitude * sin(2*pi*t / period)``."""

    mean: float = 30.0
    amplitude: float = 5.0
    period_s: float = 86400.0

    def __call__(self, t: float) -> float:
        return self.mean + self.amplitude * math.sin(2.0 * math.pi * t / self.period_s)


@dataclass(frozen=True)
class EnergyScenario:
    params: ThermalParams = ThermalParams()
    T_out: Callable[[float], float] = DiurnalProfile()
    T_set: float = 24.0
    deadband: float = 1.0
    duration: float = 7 * 86400.0
    dt: float = 60.0
    bias: float = 0.0
    T_initial: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > self.params.time_constant / 10:
            raise ValueError(f"dt={self.dt}s exceeds the stability margin R*C/10="
                             f"{self.params.time_constant / 10:g}s")
        if not self.deadband > 0:
            raise ValueError("deadband must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


def reference_scenario(bias: float = 0.0, days: float = 7) -> EnergyScenario:
    """Cooling-dominated climate: 30 +/- 5 degC diurnal swing, 24 degC setpoint."""
    return EnergyScenario(bias=bias, duration=days * 86400.0)


@dataclass
class EnergyResult:
    energy_kwh: float
    mean_temperature: float
    duty_cycle: float
    trace: Optional[list] = None


def step_thermal(T: float, cooling_on: bool, s: EnergyScenario, t: float) -> float:
    p = s.params
    return T + s.dt * ((s.T_out(t) - T) / (p.R * p.C) + (p.Q_internal - (p.P_cool if cooling_on else 0.0)) / p.C)


def thermostat(sensed: float, s: EnergyScenario, currently_on: bool) -> bool:
    half = s.deadband / 2
    if sensed > s.T_set + half:
        return True
    if sensed < s.T_set - half:
        return False
    return currently_on


def simulate(s: EnergyScenario, keep_trace: bool = False) -> EnergyResult:
    T = s.T_set if s.T_initial is None else s.T_initial
    on = False
    on_steps = 0
    temp_sum = 0.0
    trace = [] if keep_trace else None
    n = s.steps
    for k in range(n):
        t = k * s.dt
        on = thermostat(T + s.bias, s, on)
        on_steps += on
        temp_sum += T
        if trace is not None:
            trace.append((t, T, on))
        T = step_thermal(T, on, s, t)
    joules = on_steps * s.dt * s.params.P_cool / s.params.COP
    return EnergyResult(
        energy_kwh=joules / 3.6e6,
        mean_temperature=temp_sum / n if n else T,
        duty_cycle=on_steps / n if n else 0.0,
        trace=trace,
    )


@dataclass(frozen=True)
class BiasPoint:
    bias: float
    energy_kwh: float
    extra_kwh: float
    duty_cycle: float
    mean_temperature: float


def sweep_bias(s: EnergyScenario, biases: Sequence[float]) -> list[BiasPoint]:
    if 0 not in biases:
        raise ValueError("bias grid must include 0")
    results = {b: simulate(replace(s, bias=b)) for b in sorted(set(biases))}
    base = results[0].energy_kwh
    return [
        BiasPoint(b, r.energy_kwh, r.energy_kwh - base, r.duty_cycle, r.mean_temperature)
        for b, r in ((b, results[b]) for b in biases)
    ]


CURVE_COLUMNS = ("bias_c", "energy_kwh", "extra_kwh", "duty_cycle")


def curve_csv(points: Sequence[BiasPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for p in points:
        w.writerow([f"{p.bias:g}", f"{p.energy_kwh:.6f}", f"{p.extra_kwh:.6f}", f"{p.duty_cycle:.6f}"])
    return buf.getvalue()
