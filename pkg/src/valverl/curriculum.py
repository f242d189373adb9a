"""Graded learning: train one agent through plants of increasing difficulty.

Weights carry over between grades. Replay, OU exploration and optimizer
moments restart at every grade, and each grade draws from its own seeded
streams, so resuming from a grade checkpoint replays the same run.
"""
from __future__ import annotations

import configparser
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .ddpg import Agent, Transition, learn_step, save_agent
from .env import ValveEnv, out_of_bounds
from .simcore import derive_seed, make_rng

WINDOW = 20


@dataclass(frozen=True)
class GradeSpec:
    label: str
    delay: float
    fs: float
    fd: float
    episodes: int
    stop_avg_reward: float | None = None

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError(f"{self.label}: episodes must be >= 1")
        if min(self.delay, self.fs, self.fd) < 0:
            raise ValueError(f"{self.label}: delay and friction must be >= 0")


# Staged schedule: delay and friction (fractions of 8.4 / 3.524) grow per grade.
_FS, _FD = 8.4, 3.524
DEFAULT_CURRICULUM: tuple[GradeSpec, ...] = (
    GradeSpec("Grade-I.1", 0.1, _FS / 10, _FD / 10, 930),
    GradeSpec("Grade-I.2", 0.1, _FS / 10, _FD / 10, 2000),
    GradeSpec("Grade-II", 0.5, _FS / 5, _FD / 5, 1000),
    GradeSpec("Grade-III", 1.5, _FS / 2, _FD / 2, 1000),
    GradeSpec("Grade-IV", 1.5, _FS * 2 / 3, _FD * 2 / 3, 1000),
    GradeSpec("Grade-V", 2.0, _FS * 2 / 3, _FD * 2 / 3, 500),
    GradeSpec("Grade-VI", 2.5, _FS, _FD, 2000),
)


def load_curriculum(path: str | Path | None = None) -> list[GradeSpec]:
    """Read ``[grade:<label>]`` sections in file order."""
    parser = configparser.ConfigParser()
    if path is None:
        parser.read_string(resources.files("valverl.data").joinpath("graded_learning.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    allowed = {"delay", "fs", "fd", "episodes", "stop_avg_reward"}
    grades = []
    for section in parser.sections():
        if not section.startswith("grade:"):
            raise ValueError(f"unexpected section [{section}] in curriculum file")
        sec = parser[section]
        unknown = set(sec) - allowed
        if unknown:
            raise ValueError(f"[{section}]: unknown keys {sorted(unknown)}")
        stop = sec.get("stop_avg_reward")
        grades.append(GradeSpec(
            label=section.split(":", 1)[1],
            delay=sec.getfloat("delay"),
            fs=sec.getfloat("fs"),
            fd=sec.getfloat("fd"),
            episodes=sec.getint("episodes"),
            stop_avg_reward=float(stop) if stop not in (None, "") else None,
        ))
    if not grades:
        raise ValueError("curriculum has no grades")
    return grades


def dump_curriculum(grades: list[GradeSpec]) -> str:
    lines = []
    for g in grades:
        lines += [f"[grade:{g.label}]", f"delay = {g.delay!r}", f"fs = {g.fs!r}",
                  f"fd = {g.fd!r}", f"episodes = {g.episodes}"]
        if g.stop_avg_reward is not None:
            lines.append(f"stop_avg_reward = {g.stop_avg_reward!r}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class GradeReport:
    label: str
    episodes_run: int = 0
    rewards: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: Path | None = None
    stopped_early: bool = False


class CurriculumError(RuntimeError):
    def __init__(self, reports: list[GradeReport], cause: BaseException):
        super().__init__(f"curriculum aborted after {len(reports)} grade(s): {cause}")
        self.reports = reports
        self.cause = cause


EnvFactory = Callable[[GradeSpec], ValveEnv]
EpisodeHook = Callable[[str, int, float, int], None]


def run_episode(agent: Agent, env: ValveEnv, rng: np.random.Generator, train: bool = True,
                step_hook=None) -> tuple[float, int]:
    """One episode; returns (total reward, steps)."""
    obs = env.reset(rng)
    total = 0.0
    steps = 0
    while True:
        a_norm = agent.act_normalized(obs, explore=train)
        action = agent.to_action(a_norm)
        res = env.step(action)
        total += res.reward
        steps += 1
        if step_hook is not None:
            step_hook(steps, env, action, res)
        if train:
            # horizon cut-offs are not terminal states; only bound trips stop bootstrapping
            terminal = out_of_bounds(env.y, env.cfg.max_flow)
            agent.replay.push(Transition(obs, a_norm, res.reward, res.obs, terminal))
            learn_step(agent)
        obs = res.obs
        if res.done:
            return total, steps


def run_grade(agent: Agent, grade: GradeSpec, env_factory: EnvFactory,
              rng: np.random.Generator, checkpoint_dir: str | Path | None = None,
              run_id: str = "run", on_episode: EpisodeHook | None = None,
              checkpoint_extra: dict | None = None) -> GradeReport:
    env = env_factory(grade)
    report = GradeReport(grade.label)
    t0 = time.perf_counter()
    for ep in range(grade.episodes):
        total, steps = run_episode(agent, env, rng, train=True)
        report.rewards.append(total)
        report.episodes_run += 1
        if on_episode is not None:
            on_episode(grade.label, ep, total, steps)
        if (grade.stop_avg_reward is not None and len(report.rewards) >= WINDOW
                and np.mean(report.rewards[-WINDOW:]) >= grade.stop_avg_reward):
            report.stopped_early = report.episodes_run < grade.episodes
            break
    report.wall_time = time.perf_counter() - t0
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"{run_id}__{grade.label}.ckpt"
        report.checkpoint = save_agent(agent, path, grade.label, checkpoint_extra)
    return report


def run_curriculum(grades: list[GradeSpec], agent_seed: int, env_factory: EnvFactory,
                   checkpoint_dir: str | Path | None = None, run_id: str = "run",
                   agent: Agent | None = None, start_index: int = 0,
                   on_episode: EpisodeHook | None = None,
                   on_grade_start: Callable[[int, Agent], None] | None = None,
                   checkpoint_extra: dict | None = None) -> list[GradeReport]:
    """Run ``grades[start_index:]`` in order on one agent.

    Pass a loaded ``agent`` with ``start_index`` to resume after a checkpoint.
    """
    if not grades:
        raise ValueError("empty curriculum")
    agent = agent if agent is not None else Agent(seed=agent_seed)
    reports: list[GradeReport] = []
    for i in range(start_index, len(grades)):
        grade = grades[i]
        agent.reset_for_new_task(seed=derive_seed(agent_seed, "grade", i))
        if on_grade_start is not None:
            on_grade_start(i, agent)
        rng = make_rng(derive_seed(agent_seed, "env", i))
        try:
            reports.append(run_grade(agent, grade, env_factory, rng, checkpoint_dir, run_id,
                                     on_episode, checkpoint_extra))
        except Exception as exc:
            raise CurriculumError(reports, exc) from exc
    return reports
