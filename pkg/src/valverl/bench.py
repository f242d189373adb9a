"""RL-vs-PID evaluation harness: closed-loop runs, disturbance injection, metrics.

Disturbances can enter at three points of the loop::

    r --(+n_ci)--> controller --u--(+n_pi)--> valve -> process --y--(+n_po)--> y_meas
                      ^-------------------------------------------------------'

``Trajectory.output`` is the measured output (what the loop and the plots see);
``Trajectory.flow`` is the undisturbed process output.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .classic import PidController, PidGains, TwoMoveController
from .ddpg import Agent, load_agent
from .env import EnvConfig, make_obs
from .plant import FoptdParams, PerturbParams, Plant, ValveParams
from .simcore import (ARBITRARY_WAVEFORM, BENCHMARK_WAVEFORM, NoiseSpec, TimeBase,
                      WaveformSpec, build_waveform, derive_seed, make_rng, noise_signal)

NOISE_POINTS = ("controller_input", "plant_input", "plant_output")
SETTLING_BAND = 0.02
RIPPLE_WINDOW = 0.2


class Controller(Protocol):
    name: str

    def reset(self) -> None: ...

    def __call__(self, r: float, y: float) -> float: ...


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    reference: WaveformSpec
    duration: float
    valve: ValveParams = ValveParams()
    process: FoptdParams = FoptdParams()
    perturb: PerturbParams | None = None
    noise_at_controller_input: NoiseSpec | None = None
    noise_at_plant_input: NoiseSpec | None = None
    noise_at_plant_output: NoiseSpec | None = None
    controllers: tuple[str, ...] = ("pid", "rl")
    seed: int = 0
    ts: float = 0.1
    # experiment 6 repeats the run at a reduced reference magnitude
    reference_gains: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not self.controllers:
            raise ValueError("at least one controller is required")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")

    @property
    def timebase(self) -> TimeBase:
        return TimeBase.from_duration(self.duration, self.ts)

    def noise(self, point: str) -> NoiseSpec | None:
        return getattr(self, f"noise_at_{point}")


@dataclass
class Trajectory:
    time: np.ndarray
    reference: np.ndarray
    output: np.ndarray
    control: np.ndarray
    valve_position: np.ndarray
    flow: np.ndarray
    controller: str = ""

    def __post_init__(self):
        n = len(self.time)
        if any(len(a) != n for a in (self.reference, self.output, self.control,
                                     self.valve_position, self.flow)):
            raise ValueError("trajectory series must have equal lengths")


@dataclass(frozen=True)
class Metrics:
    iae: float
    ise: float
    overshoot_pct: float
    settling_time_s: float
    ripple: float
    steady_state_error: float

    def row(self) -> list[str]:
        return [repr(v) for v in (self.iae, self.ise, self.overshoot_pct,
                                  self.settling_time_s, self.ripple, self.steady_state_error)]


# ---------------------------------------------------------------- controllers

class RlController:
    """Deterministic actor as a sampled controller.

    The actor decides every ``env_cfg.ts`` seconds and the command is held in
    between, like the training environment. Observations are built exactly as
    in training.
    """

    name = "rl"

    def __init__(self, agent: Agent, env_cfg: EnvConfig, ts: float):
        self.agent = agent
        self.env_cfg = env_cfg
        self.ts = ts
        self.hold = max(1, int(round(env_cfg.ts / ts)))
        self.reset()

    @classmethod
    def from_checkpoint(cls, path: str | Path, ts: float) -> "RlController":
        agent, header = load_agent(path)
        env_cfg = EnvConfig(**header["env"]) if "env" in header else EnvConfig()
        return cls(agent, env_cfg, ts)

    def reset(self) -> None:
        self.k = 0
        self.ie = 0.0
        self.u = 0.0

    def __call__(self, r: float, y: float) -> float:
        if self.k % self.hold == 0:
            e = r - y
            if self.k:
                self.ie += e * self.env_cfg.ts
            self.u = self.agent.act(make_obs(y, e, self.ie, self.env_cfg), explore=False)
        self.k += 1
        return self.u


def make_controller(name: str, spec: ExperimentSpec, checkpoint: str | Path | None = None,
                    pid_gains: PidGains | None = None, rl: RlController | None = None,
                    two_move_a: float | None = None) -> Controller:
    if name == "pid":
        return PidController(pid_gains or PidGains(), spec.ts)
    if name == "rl":
        if rl is not None:
            return rl
        if checkpoint is None:
            raise ValueError("the rl controller needs a checkpoint")
        return RlController.from_checkpoint(checkpoint, spec.ts)
    if name == "two_move":
        if two_move_a is None:
            raise ValueError("the two_move controller needs the amplification factor a")
        return TwoMoveController(spec.valve.fs, spec.valve.fd, two_move_a, spec.process.k)
    raise ValueError(f"unknown controller {name!r}")


# ---------------------------------------------------------------- simulation

def disturbance(spec: ExperimentSpec, point: str, tb: TimeBase) -> np.ndarray:
    ns = spec.noise(point)
    if ns is None:
        return np.zeros(tb.horizon)
    return noise_signal(ns, tb, make_rng(derive_seed(spec.seed, point, ns.seed)))


def run_closed_loop(spec: ExperimentSpec, controller: Controller,
                    reference_gain: float = 1.0) -> Trajectory:
    tb = spec.timebase
    ref = spec.reference.scaled(reference_gain) if reference_gain != 1.0 else spec.reference
    r = build_waveform(ref, tb)
    n_ci = disturbance(spec, "controller_input", tb)
    n_pi = disturbance(spec, "plant_input", tb)
    n_po = disturbance(spec, "plant_output", tb)

    plant = Plant(spec.valve, spec.process, spec.ts, spec.perturb)
    plant.reset(0.0)
    controller.reset()
    n = tb.horizon
    out = np.empty(n)
    ctl = np.empty(n)
    pos = np.empty(n)
    flow = np.empty(n)
    y = plant.output
    r_l, ci_l, pi_l, po_l = r.tolist(), n_ci.tolist(), n_pi.tolist(), n_po.tolist()
    for i in range(n):
        y_meas = y + po_l[i]
        u = controller(r_l[i] + ci_l[i], y_meas)
        x, y_next = plant.step(u + pi_l[i])
        out[i] = y_meas
        ctl[i] = u
        pos[i] = x
        flow[i] = y
        y = y_next
    return Trajectory(tb.times(), r, out, ctl, pos, flow, controller=controller.name)


def compute_metrics(traj: Trajectory, tb: TimeBase) -> Metrics:
    if len(traj.time) == 0:
        raise ValueError("empty trajectory")
    ts = tb.ts
    r = np.asarray(traj.reference, dtype=float)
    y = np.asarray(traj.output, dtype=float)
    e = r - y
    iae = ts * float(np.sum(np.abs(e)))
    ise = ts * float(np.sum(e * e))

    r_final = float(r[-1])
    changed = np.nonzero(r != r_final)[0]
    start = int(changed[-1]) + 1 if len(changed) else 0
    seg = y[start:]
    if r_final != 0:
        overshoot = max(float(np.max((seg - r_final) / r_final)), 0.0) * 100.0
    else:
        overshoot = 0.0
    outside = np.nonzero(np.abs(seg - r_final) > SETTLING_BAND * abs(r_final))[0]
    if len(outside) == 0:
        settling = 0.0
    elif outside[-1] == len(seg) - 1:
        settling = math.inf
    else:
        settling = float(traj.time[start + outside[-1] + 1] - traj.time[start])
    tail = max(1, int(round(RIPPLE_WINDOW * len(y))))
    ripple = float(np.std(y[-tail:]))
    sse = float(np.mean(e[-tail:]))
    return Metrics(iae, ise, overshoot, settling, ripple, sse)


# ---------------------------------------------------------------- presets

def _gauss(sigma: float, hz: float = 1.0) -> NoiseSpec:
    return NoiseSpec(kind="gaussian-hold", mu=0.0, sigma=sigma, update_hz=hz)


BENCH_NOISE = _gauss(0.01)
STRONG_NOISE = _gauss(3.0)
# Vibration band is 30-100 Hz; amplitude is not published, 3.0 matches the strong noise
VIBRATION = NoiseSpec(kind="sine-mix", f_min=30.0, f_max=100.0, n_components=8, amplitude=3.0)

EXPERIMENT_IDS = ("1", "2", "3a", "3b", "3c", "4", "5", "6")


def experiment_preset(exp_id: str | int, seed: int = 0,
                      controllers: Sequence[str] = ("pid", "rl")) -> ExperimentSpec:
    exp_id = str(exp_id).lower()
    base = dict(seed=seed, controllers=tuple(controllers))
    bench = BENCHMARK_WAVEFORM
    if exp_id == "1":
        return ExperimentSpec("1", WaveformSpec.constant(100.0, 2000.0), 2000.0,
                              noise_at_controller_input=BENCH_NOISE, **base)
    if exp_id == "2":
        return ExperimentSpec("2", bench, bench.duration, noise_at_controller_input=BENCH_NOISE, **base)
    if exp_id == "3a":
        return ExperimentSpec("3a", bench, bench.duration, noise_at_controller_input=STRONG_NOISE, **base)
    if exp_id == "3b":
        return ExperimentSpec("3b", bench, bench.duration, noise_at_plant_input=STRONG_NOISE, **base)
    if exp_id == "3c":
        return ExperimentSpec("3c", bench, bench.duration, noise_at_plant_output=STRONG_NOISE, **base)
    if exp_id == "4":
        # the vibration band needs a sample rate above 200 Hz
        return ExperimentSpec("4", bench, bench.duration, noise_at_plant_input=VIBRATION,
                              ts=0.004, **base)
    if exp_id == "5":
        return ExperimentSpec("5", ARBITRARY_WAVEFORM, ARBITRARY_WAVEFORM.duration,
                              noise_at_controller_input=BENCH_NOISE, **base)
    if exp_id == "6":
        return ExperimentSpec("6", bench, bench.duration, perturb=PerturbParams((1.0, 5.0, 10.0)),
                              noise_at_controller_input=BENCH_NOISE,
                              reference_gains=(1.0, 0.4), **base)
    raise ValueError(f"unknown experiment id {exp_id!r}; expected one of {EXPERIMENT_IDS}")


# ---------------------------------------------------------------- DOE

@dataclass(frozen=True)
class DoeLevels:
    delay: tuple[float, float] = (0.025, 2.5)
    friction: tuple[tuple[float, float], tuple[float, float]] = ((0.084, 0.0352), (8.4, 3.524))

    def cells(self) -> list[tuple[float, float, float]]:
        return [(L, fs, fd) for L in self.delay for fs, fd in self.friction]

    @classmethod
    def scaled_friction(cls, high: tuple[float, float], factor: float = 100.0,
                        delay: tuple[float, float] = (0.025, 2.5)) -> "DoeLevels":
        return cls(delay, ((high[0] / factor, high[1] / factor), high))


@dataclass(frozen=True)
class DoeRow:
    delay: float
    fs: float
    fd: float
    ripple: float
    settling: float
    iae: float


DOE_HEADER = ["L", "fs", "fd", "ripple", "settling", "iae"]


def doe_base_spec(seed: int = 0, duration: float = 2000.0) -> ExperimentSpec:
    return ExperimentSpec("doe", WaveformSpec.constant(100.0, duration), duration,
                          controllers=("rl",), seed=seed)


def run_doe(base_spec: ExperimentSpec, levels: DoeLevels, controller: Controller) -> list[DoeRow]:
    rows = []
    for L, fs, fd in levels.cells():
        spec = replace(base_spec, valve=ValveParams(fs, fd),
                       process=replace(base_spec.process, delay=L))
        traj = run_closed_loop(spec, controller)
        m = compute_metrics(traj, spec.timebase)
        rows.append(DoeRow(L, fs, fd, m.ripple, m.settling_time_s, m.iae))
    return rows


# ---------------------------------------------------------------- output files

METRICS_HEADER = ["controller", "iae", "ise", "overshoot", "settling", "ripple", "sse"]


def write_trajectories_csv(path: str | Path, trajs: Sequence[Trajectory]) -> None:
    header = ["time", "r"]
    for t in trajs:
        header += [f"y_{t.controller}", f"u_{t.controller}", f"x_{t.controller}",
                   f"flow_{t.controller}"]
    cols = [trajs[0].time, trajs[0].reference]
    for t in trajs:
        cols += [t.output, t.control, t.valve_position, t.flow]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*(c.tolist() for c in cols)):
            w.writerow([repr(v) for v in row])


def write_metrics_csv(path: str | Path, metrics: dict[str, Metrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for name, m in metrics.items():
            w.writerow([name] + m.row())


def write_doe_csv(path: str | Path, rows: Sequence[DoeRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DOE_HEADER)
        for r in rows:
            w.writerow([repr(v) for v in (r.delay, r.fs, r.fd, r.ripple, r.settling, r.iae)])


PLOT_TEMPLATE = '''\
"""Plot the trajectory CSVs written next to this script (needs matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
FILES = {files!r}

for name in FILES:
    with open(HERE / name) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {{h: [float(r[i]) for r in data] for i, h in enumerate(header)}}
    fig, (ax_y, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(10, 6))
    ax_y.plot(cols["time"], cols["r"], "k--", label="reference")
    for h in header:
        if h.startswith("y_"):
            ax_y.plot(cols["time"], cols[h], label=h[2:])
        if h.startswith("u_"):
            ax_u.plot(cols["time"], cols[h], label=h[2:])
    ax_y.set_ylabel("flow")
    ax_u.set_ylabel("command")
    ax_u.set_xlabel("time [s]")
    ax_y.legend()
    fig.suptitle(name)
    fig.savefig(HERE / (Path(name).stem + ".png"), dpi=120)
    if "--show" in sys.argv:
        plt.show()
'''


def write_plot_script(path: str | Path, csv_names: Sequence[str]) -> None:
    Path(path).write_text(PLOT_TEMPLATE.format(files=list(csv_names)))
