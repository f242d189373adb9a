"""Training environment: valve + process loop with a constant random reference."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import FoptdParams, PerturbParams, Plant, ValveParams


@dataclass(frozen=True)
class EnvConfig:
    max_flow: float = 200.0
    ref_min: float = 20.0
    ref_max: float = 150.0
    episode_steps: int = 150
    delta: float = 1.0
    lam: float = 0.1
    reward_cap: float = 10.0
    penalty: float = -100.0
    reward_kind: str = "hybrid"  # "hybrid" | "discrete"
    normalize_obs: bool = True
    # agent decision interval; the plant integrates at sim_ts with the action held
    ts: float = 5.0
    sim_ts: float | None = 0.1

    def __post_init__(self):
        if not 0 <= self.ref_min < self.ref_max <= self.max_flow:
            raise ValueError("need 0 <= ref_min < ref_max <= max_flow")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not self.penalty < 0:
            raise ValueError("penalty must be < 0")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be >= 1")
        if self.reward_kind not in ("hybrid", "discrete"):
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")
        if not self.ts > 0:
            raise ValueError("ts must be > 0")
        if self.sim_ts is not None and not (0 < self.sim_ts <= self.ts):
            raise ValueError("need 0 < sim_ts <= ts")

    @property
    def plant_ts(self) -> float:
        return self.ts if self.sim_ts is None else self.sim_ts

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.ts / self.plant_ts)))

    @property
    def obs_scale(self) -> np.ndarray:
        if not self.normalize_obs:
            return np.ones(3)
        horizon = self.episode_steps * self.ts
        return np.array([self.max_flow, self.max_flow, self.max_flow * horizon])


def out_of_bounds(y: float, max_flow: float) -> bool:
    return y <= 0.0 or y > max_flow


def reward(e: float, y: float, cfg: EnvConfig) -> float:
    if out_of_bounds(y, cfg.max_flow):
        return cfg.penalty
    if cfg.reward_kind == "discrete":
        return 10.0 if abs(e) < cfg.delta else -1.0
    return min(1.0 / (abs(e) + cfg.lam), cfg.reward_cap)


def make_obs(y: float, e: float, ie: float, cfg: EnvConfig) -> np.ndarray:
    return np.array([y, e, ie]) / cfg.obs_scale


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class EpisodeFinished(RuntimeError):
    pass


class ValveEnv:
    """Episode = constant reference, random start flow, ``episode_steps`` samples."""

    def __init__(self, cfg: EnvConfig | None = None, valve: ValveParams | None = None,
                 process: FoptdParams | None = None, perturb: PerturbParams | None = None):
        self.cfg = cfg or EnvConfig()
        self.valve_params = valve or ValveParams()
        self.plant = Plant(self.valve_params, process or FoptdParams(), self.cfg.plant_ts, perturb)
        self.r = 0.0
        self.y = 0.0
        self.ie = 0.0
        self.steps = 0
        self.done = True

    def observation(self) -> np.ndarray:
        return make_obs(self.y, self.r - self.y, self.ie, self.cfg)

    def reset(self, rng: np.random.Generator, reference: float | None = None,
              initial_flow: float | None = None) -> np.ndarray:
        cfg = self.cfg
        r = rng.uniform(cfg.ref_min, cfg.ref_max)
        y0 = rng.uniform(cfg.ref_min, cfg.ref_max)
        self.r = r if reference is None else reference
        y0 = y0 if initial_flow is None else initial_flow
        self.plant.reset(y0, cfg.max_flow)
        self.y = y0
        self.ie = 0.0
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action: float) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode finished; call reset()")
        cfg = self.cfg
        for _ in range(cfg.substeps):
            x, y = self.plant.step(action)
        e = self.r - y
        self.ie += e * cfg.ts
        self.y = y
        self.steps += 1
        rew = reward(e, y, cfg)
        self.done = out_of_bounds(y, cfg.max_flow) or self.steps >= cfg.episode_steps
        info = {"valve_position": x, "action": action, "reference": self.r, "error": e}
        return StepResult(self.observation(), rew, self.done, info)


class EpisodeLogger:
    """Per-step CSV log: episode, step, r, y, e, action, reward, done."""

    HEADER = ["episode", "step", "r", "y", "e", "action", "reward", "done"]

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.HEADER)

    def log(self, episode: int, step: int, env: ValveEnv, action: float, res: StepResult) -> None:
        self._w.writerow([episode, step, repr(env.r), repr(env.y), repr(env.r - env.y),
                          repr(float(action)), repr(float(res.reward)), int(res.done)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
