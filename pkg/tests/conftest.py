"""Shared fixtures: one Grade-I training run reused by every test that needs a trained agent."""
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pytest

from valverl.curriculum import GradeReport, GradeSpec, run_curriculum
from valverl.ddpg import Agent, AgentConfig
from valverl.env import EnvConfig, ValveEnv
from valverl.plant import FoptdParams, ValveParams
from valverl.simcore import make_rng

GRADE_I = GradeSpec("Grade-I", delay=0.1, fs=0.84, fd=0.3524, episodes=300)
TRAIN_SEED = 0
EVAL_SEEDS = range(5)
EVAL_REFERENCE = 100.0

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_LINES].append((number, line))
        print(line)
        return ok
    return record


def grade_env(grade: GradeSpec, cfg: EnvConfig) -> ValveEnv:
    return ValveEnv(cfg, ValveParams(grade.fs, grade.fd), FoptdParams(delay=grade.delay))


def evaluation_iae(agent: Agent, grade: GradeSpec, cfg: EnvConfig) -> float:
    """Mean IAE of the greedy policy over constant-reference episodes."""
    out = []
    for s in EVAL_SEEDS:
        env = grade_env(grade, cfg)
        obs = env.reset(make_rng(10_000 + s), reference=EVAL_REFERENCE)
        iae = 0.0
        while True:
            res = env.step(agent.act(obs))
            iae += abs(res.info["error"]) * cfg.ts
            obs = res.obs
            if res.done:
                break
        out.append(iae)
    return float(np.mean(out))


@dataclass
class TrainedRun:
    agent: Agent
    report: GradeReport
    env_cfg: EnvConfig
    fresh_iae: float
    trained_iae: float
    checkpoint: Path
    wall_time: float


@pytest.fixture(scope="session")
def grade1_run(tmp_path_factory) -> TrainedRun:
    t0 = time.perf_counter()
    cfg = EnvConfig()
    agent = Agent(AgentConfig(), seed=TRAIN_SEED)
    fresh = evaluation_iae(agent, GRADE_I, cfg)
    out = tmp_path_factory.mktemp("grade1")
    reports = run_curriculum([GRADE_I], TRAIN_SEED, lambda g: grade_env(g, cfg), out, "accept",
                             agent=agent, checkpoint_extra={"env": asdict(cfg)})
    trained = evaluation_iae(agent, GRADE_I, cfg)
    return TrainedRun(agent, reports[0], cfg, fresh, trained, reports[0].checkpoint,
                      time.perf_counter() - t0)
