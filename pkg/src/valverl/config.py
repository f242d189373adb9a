"""Run configuration: strict INI-style key/value file.

Every section and key is listed in ``SCHEMA`` together with its default and
type. Unknown sections or keys are errors, so a typo never silently falls
back to a default.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .classic import PidGains
from .ddpg import AgentConfig
from .env import EnvConfig
from .plant import FoptdParams, PerturbParams, ValveParams


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if text.startswith("["):
        return tuple(float(v) for v in json.loads(text))
    return tuple(float(v) for v in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(w for w in text.replace(",", " ").split() if w)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "time": {"ts": (float, 0.1)},
    "valve": {"fs": (float, 8.40), "fd": (float, 3.524)},
    "process": {"k": (float, 3.8163), "T": (float, 156.46), "delay": (float, 2.5)},
    "perturb": {"enabled": (_bool, False), "tau": (_floats, (1.0, 5.0, 10.0))},
    "pid": {"kp": (float, 0.3631), "ki": (float, 0.0045), "kd": (float, -1.72),
            "n": (float, 0.0114)},
    "agent": {
        "gamma": (float, 0.9), "critic_lr": (float, 1e-3), "actor_lr": (float, 1e-4),
        "batch_size": (int, 64), "tau": (float, 1e-3), "replay_capacity": (int, 100_000),
        "ou_variance": (float, 1.5), "ou_variance_decay": (float, 1e-5),
        "ou_mean": (float, 0.0), "ou_mean_attraction": (float, 0.15),
        "action_low": (float, 0.0), "action_high": (float, 100.0),
        "sample_time": (float, 5.0), "seed": (int, 0),
    },
    "env": {"max_flow": (float, 200.0), "ref_min": (float, 20.0), "ref_max": (float, 150.0),
            "episode_steps": (int, 150), "normalize_obs": (_bool, True),
            "log_steps": (_bool, False)},
    "reward": {"kind": (str, "hybrid"), "delta": (float, 1.0), "lambda": (float, 0.1),
               "cap": (float, 10.0), "penalty": (float, -100.0)},
    "curriculum": {"file": (str, "default"), "max_episodes": (int, 0),
                   "stop_avg_reward": (_opt_float, None)},
    "experiment": {"id": (str, "1"), "controllers": (_words, ("pid", "rl")),
                   "seed": (int, 0), "two_move_a": (_opt_float, None),
                   "doe_delay": (_floats, (0.025, 2.5)), "doe_fs_high": (float, 8.4),
                   "doe_fd_high": (float, 3.524), "doe_factor": (float, 100.0)},
}


@dataclass
class RunConfig:
    values: dict[str, dict]
    source: Path | None = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def resolved(self) -> dict:
        """JSON-ready view with defaults filled in."""
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
                for s, sec in self.values.items()}

    def hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        vals = {s: dict(sec) for s, sec in self.values.items()}
        vals["agent"]["seed"] = seed
        vals["experiment"]["seed"] = seed
        return RunConfig(vals, self.source)

    # typed views
    @property
    def ts(self) -> float:
        return self["time"]["ts"]

    def valve(self) -> ValveParams:
        return ValveParams(self["valve"]["fs"], self["valve"]["fd"])

    def process(self, delay: float | None = None) -> FoptdParams:
        p = self["process"]
        return FoptdParams(p["k"], p["T"], p["delay"] if delay is None else delay)

    def perturb(self) -> PerturbParams | None:
        return PerturbParams(tuple(self["perturb"]["tau"])) if self["perturb"]["enabled"] else None

    def pid(self) -> PidGains:
        p = self["pid"]
        return PidGains(p["kp"], p["ki"], p["kd"], p["n"])

    def agent(self) -> AgentConfig:
        a = dict(self["agent"])
        a.pop("seed")
        a["ts"] = a.pop("sample_time")
        return AgentConfig(**a)

    def env(self) -> EnvConfig:
        e, r = self["env"], self["reward"]
        return EnvConfig(max_flow=e["max_flow"], ref_min=e["ref_min"], ref_max=e["ref_max"],
                         episode_steps=e["episode_steps"], delta=r["delta"], lam=r["lambda"],
                         reward_cap=r["cap"], penalty=r["penalty"], reward_kind=r["kind"],
                         normalize_obs=e["normalize_obs"], ts=self["agent"]["sample_time"],
                         sim_ts=min(self.ts, self["agent"]["sample_time"]))


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive ("T")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except (ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None
    cfg = RunConfig(values, source)
    try:  # surface invariant violations as config errors
        cfg.valve(), cfg.process(), cfg.perturb(), cfg.pid(), cfg.agent(), cfg.env()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def default_config_text() -> str:
    lines = ["# valverl run configuration (all keys optional; defaults shown)"]
    for section, keys in SCHEMA.items():
        lines.append(f"\n[{section}]")
        for key, (_, default) in keys.items():
            if isinstance(default, tuple):
                default = ", ".join(str(v) for v in default)
            lines.append(f"{key} = {'' if default is None else default}")
    return "\n".join(lines) + "\n"
