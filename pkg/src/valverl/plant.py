"""Stiction valve, FOPTD process and the third-order perturbation process.

All models are discrete-time with a fixed sample interval. The lags use the
zero-order-hold exact discretisation ``y <- a*y + (1-a)*gain*u`` with
``a = exp(-ts/tau)``, which stays stable for any ts.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

# Defaults below are the benchmark plant.
FS_DEFAULT = 8.40
FD_DEFAULT = 3.524
K_DEFAULT = 3.8163
T_DEFAULT = 156.46
DELAY_DEFAULT = 2.5


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


@dataclass(frozen=True)
class ValveParams:
    fs: float = FS_DEFAULT
    fd: float = FD_DEFAULT

    def __post_init__(self):
        if self.fs < 0 or self.fd < 0:
            raise ValueError("friction values must be >= 0")
        if self.fd > self.fs:
            raise ValueError(f"dynamic friction {self.fd} exceeds static friction {self.fs}")

    def scaled(self, factor: float) -> "ValveParams":
        return ValveParams(self.fs * factor, self.fd * factor)


@dataclass
class ValveState:
    x_prev: float = 0.0


def valve_step(state: ValveState, params: ValveParams, u: float) -> float:
    """Advance the stiction valve one sample and return the new position.

    The valve only moves once the command leaves the ``+-fs`` band around the
    last position; it then lands ``fd`` short of the command.
    """
    _check_finite(u, state.x_prev)
    delta = u - state.x_prev
    if delta > params.fs:
        state.x_prev = u - params.fd
    elif delta < -params.fs:
        state.x_prev = u + params.fd
    return state.x_prev


@dataclass(frozen=True)
class FoptdParams:
    k: float = K_DEFAULT
    t_const: float = T_DEFAULT
    delay: float = DELAY_DEFAULT

    def __post_init__(self):
        if not self.t_const > 0:
            raise ValueError("time constant must be > 0")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")


@dataclass
class FoptdState:
    y: float
    delay_line: deque
    a: float
    ts: float

    @property
    def delay_steps(self) -> int:
        return self.delay_line.maxlen


def foptd_init(params: FoptdParams, ts: float, y0: float = 0.0, x0: float = 0.0) -> FoptdState:
    # fractional delays are rounded to whole samples
    n = int(round(params.delay / ts))
    return FoptdState(y=y0, delay_line=deque([x0] * n, maxlen=n),
                      a=math.exp(-ts / params.t_const), ts=ts)


def foptd_step(state: FoptdState, params: FoptdParams, x: float) -> float:
    _check_finite(x)
    line = state.delay_line
    if line.maxlen:
        x_d = line[0]
        line.append(x)
    else:
        x_d = x
    state.y = state.a * state.y + (1.0 - state.a) * params.k * x_d
    return state.y


@dataclass(frozen=True)
class PerturbParams:
    tau: tuple[float, ...] = (1.0, 5.0, 10.0)

    def __post_init__(self):
        if not self.tau or any(not t > 0 for t in self.tau):
            raise ValueError("perturbation time constants must be > 0")


@dataclass
class PerturbState:
    stages: list[float]
    coeffs: list[float]


def perturb_init(params: PerturbParams, ts: float, y0: float = 0.0) -> PerturbState:
    return PerturbState(stages=[y0] * len(params.tau),
                        coeffs=[math.exp(-ts / t) for t in params.tau])


def perturb_step(state: PerturbState, params: PerturbParams, value: float) -> float:
    """Unit-gain first-order lags in series."""
    _check_finite(value)
    stages = state.stages
    for i, a in enumerate(state.coeffs):
        value = a * stages[i] + (1.0 - a) * value
        stages[i] = value
    return value


def plant_reset(foptd: FoptdState, valve: ValveState, initial_flow: float,
                params: FoptdParams, max_flow: float = math.inf,
                perturb: PerturbState | None = None) -> None:
    """Put valve, delay line and lag into the steady state that yields ``initial_flow``."""
    if not 0.0 <= initial_flow <= max_flow:
        raise ValueError(f"initial flow {initial_flow} outside [0, {max_flow}]")
    x = initial_flow / params.k
    valve.x_prev = x
    foptd.y = initial_flow
    n = foptd.delay_line.maxlen
    foptd.delay_line.clear()
    foptd.delay_line.extend([x] * n)
    if perturb is not None:
        perturb.stages[:] = [initial_flow] * len(perturb.stages)


@dataclass
class Plant:
    """Valve feeding the process, with the optional perturbation lags appended."""

    valve_params: ValveParams
    process: FoptdParams
    ts: float
    perturb_params: PerturbParams | None = None
    valve: ValveState = field(init=False)
    foptd: FoptdState = field(init=False)
    perturb: PerturbState | None = field(init=False)

    def __post_init__(self):
        self.valve = ValveState()
        self.foptd = foptd_init(self.process, self.ts)
        self.perturb = (perturb_init(self.perturb_params, self.ts)
                        if self.perturb_params is not None else None)

    def reset(self, initial_flow: float = 0.0, max_flow: float = math.inf) -> None:
        plant_reset(self.foptd, self.valve, initial_flow, self.process, max_flow, self.perturb)

    @property
    def output(self) -> float:
        if self.perturb is not None:
            return self.perturb.stages[-1]
        return self.foptd.y

    def step(self, u: float) -> tuple[float, float]:
        """Apply command ``u``; return ``(valve_position, flow)``."""
        x = valve_step(self.valve, self.valve_params, u)
        y = foptd_step(self.foptd, self.process, x)
        if self.perturb is not None:
            y = perturb_step(self.perturb, self.perturb_params, y)
        return x, y
