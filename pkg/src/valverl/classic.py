"""Filtered PID and the two-move stiction compensation sequence."""
from __future__ import annotations

import math
from dataclasses import dataclass

# Auto-tuned gains for the benchmark plant. kd is negative as published.
KP_DEFAULT = 0.3631
KI_DEFAULT = 0.0045
KD_DEFAULT = -1.72
N_DEFAULT = 0.0114


@dataclass(frozen=True)
class PidGains:
    kp: float = KP_DEFAULT
    ki: float = KI_DEFAULT
    kd: float = KD_DEFAULT
    n: float = N_DEFAULT

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.kp, self.ki, self.kd, self.n)):
            raise ValueError("PID gains must be finite")
        if self.n < 0:
            raise ValueError("derivative filter coefficient must be >= 0")


@dataclass
class PidState:
    integ: float = 0.0
    dfilt: float = 0.0


def pid_reset(state: PidState) -> PidState:
    state.integ = 0.0
    state.dfilt = 0.0
    return state


def pid_step(state: PidState, gains: PidGains, e: float, ts: float) -> float:
    """Parallel PID with a first-order filtered derivative ``kd*N*s/(s+N)``.

    Both the integral and the filter state use forward Euler; no anti-windup.
    """
    if not ts > 0:
        raise ValueError("ts must be > 0")
    if not math.isfinite(e):
        raise ValueError(f"non-finite error {e!r}")
    state.integ += e * ts
    state.dfilt += ts * gains.n * (e - state.dfilt)
    d_term = gains.kd * gains.n * (e - state.dfilt)
    return gains.kp * e + gains.ki * state.integ + d_term


class PidController:
    """Closed-loop adaptor: ``u = controller(r, y)``."""

    name = "pid"

    def __init__(self, gains: PidGains | None = None, ts: float = 1.0):
        self.gains = gains or PidGains()
        self.ts = ts
        self.state = PidState()

    def reset(self) -> None:
        pid_reset(self.state)

    def __call__(self, r: float, y: float) -> float:
        return pid_step(self.state, self.gains, r - y, self.ts)


@dataclass(frozen=True)
class TwoMoveParams:
    fs_hat: float
    fd_hat: float
    a: float  # first-move amplification; no published value, so no default
    x_ss_hat: float

    def __post_init__(self):
        if self.fs_hat < 0 or self.fd_hat < 0:
            raise ValueError("friction estimates must be >= 0")


PHASES = ("first", "second", "hold")


def two_move_step(params: TwoMoveParams, u_prev: float, phase: str,
                  held: float | None = None) -> float:
    """One command of the open-loop two-move sequence.

    ``u_prev`` is the command issued before the sequence started. ``held`` is
    the second-move value, required for the ``hold`` phase.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    above = u_prev >= params.x_ss_hat
    if phase == "first":
        return u_prev + params.a * params.fs_hat if above else u_prev - params.a * params.fs_hat
    if phase == "second":
        return params.x_ss_hat - params.fd_hat if above else params.x_ss_hat + params.fd_hat
    if held is None:
        raise ValueError("hold phase needs the second-move value")
    return held


class TwoMoveController:
    """Replays the two-move sequence whenever the reference level changes.

    The steady-state valve estimate is ``r / k_hat``; the loop is open, so the
    measured output is ignored.
    """

    name = "two_move"

    def __init__(self, fs_hat: float, fd_hat: float, a: float, k_hat: float):
        self.fs_hat, self.fd_hat, self.a, self.k_hat = fs_hat, fd_hat, a, k_hat
        self.reset()

    def reset(self) -> None:
        self.r_last: float | None = None
        self.u_last = 0.0
        self.u_start = 0.0
        self.phase_idx = 2
        self.held = 0.0
        self.params: TwoMoveParams | None = None

    def __call__(self, r: float, y: float) -> float:
        if self.r_last is None or r != self.r_last:
            self.r_last = r
            self.params = TwoMoveParams(self.fs_hat, self.fd_hat, self.a, r / self.k_hat)
            self.u_start = self.u_last
            self.phase_idx = 0
        phase = PHASES[self.phase_idx]
        u = two_move_step(self.params, self.u_start, phase, self.held)
        if phase == "second":
            self.held = u
        self.phase_idx = min(self.phase_idx + 1, 2)
        self.u_last = u
        return u
