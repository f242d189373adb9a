"""Command-line entry point: ``valverl {train,eval,doe,inspect}``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 runtime failure (including interruption).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import signal
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .bench import (DoeLevels, RlController, compute_metrics, doe_base_spec, experiment_preset,
                    make_controller, run_closed_loop, run_doe, write_doe_csv, write_metrics_csv,
                    write_plot_script, write_trajectories_csv)
from .config import ConfigError, RunConfig, load_config, parse_config
from .curriculum import GradeSpec, load_curriculum, run_curriculum
from .ddpg import Agent, load_agent, read_agent_file
from .env import EpisodeLogger, ValveEnv
from .nn import CheckpointError
from .plant import ValveParams

log = logging.getLogger("valverl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
OUT_ENV = "VALVERL_OUT"


class DataError(RuntimeError):
    pass


class Run:
    """Output directory plus the manifest written when the command ends."""

    def __init__(self, command: str, cfg: RunConfig, seed: int, out: Path, tag: str = ""):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.config_hash = cfg.hash()
        suffix = f"-{tag}" if tag else ""
        self.run_id = f"{command}{suffix}-{self.config_hash[:10]}-s{seed}"
        self.dir = out / self.run_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def write_manifest(self, complete: bool, extra: dict | None = None) -> Path:
        manifest = {
            "run_id": self.run_id,
            "command": self.command,
            "config_hash": self.config_hash,
            "config": self.cfg.resolved(),
            "seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "complete": complete,
            "files": sorted(set(self.files)),
            **(extra or {}),
        }
        target = self.dir / "manifest.json"
        tmp = self.dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        tmp.replace(target)
        return target


@contextmanager
def _terminate_as_interrupt():
    def handler(signum, frame):
        raise KeyboardInterrupt(f"signal {signum}")

    try:
        previous = signal.signal(signal.SIGTERM, handler)
    except ValueError:  # not in the main thread
        previous = None
    try:
        yield
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs"))


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# ---------------------------------------------------------------- train

def _grades(cfg: RunConfig) -> list[GradeSpec]:
    c = cfg["curriculum"]
    try:
        grades = load_curriculum(None if c["file"] == "default" else c["file"])
    except OSError as exc:
        raise ConfigError(f"cannot read curriculum file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"curriculum file: {exc}") from None
    out = []
    for g in grades:
        if c["max_episodes"] > 0:
            g = dataclasses.replace(g, episodes=min(g.episodes, c["max_episodes"]))
        if c["stop_avg_reward"] is not None:
            g = dataclasses.replace(g, stop_avg_reward=c["stop_avg_reward"])
        out.append(g)
    return out


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    seed = cfg["agent"]["seed"]
    grades = _grades(cfg)
    env_cfg = cfg.env()
    agent_cfg = cfg.agent()

    agent = None
    start = 0
    if args.checkpoint:
        agent, header = load_agent(args.checkpoint, seed=seed)
        labels = [g.label for g in grades]
        done_label = header.get("grade_label", "")
        if done_label not in labels:
            raise DataError(f"checkpoint grade {done_label!r} is not in the curriculum")
        start = labels.index(done_label) + 1
    run = Run("train", cfg, seed, _out_root(args), tag=f"from{start}" if start else "")

    def env_factory(grade: GradeSpec) -> ValveEnv:
        return ValveEnv(env_cfg, ValveParams(grade.fs, grade.fd), cfg.process(grade.delay))

    rewards_path = run.path("rewards.csv")
    steps_log = EpisodeLogger(run.path("steps.csv")) if cfg["env"]["log_steps"] else None
    complete = False
    reports = []
    with open(rewards_path, "w", newline="") as fh, _terminate_as_interrupt():
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grade", "episode", "reward", "steps"])

        def on_episode(label, ep, total, steps):
            w.writerow([label, ep, repr(float(total)), steps])
            fh.flush()
            log.info("%s episode %d reward %.2f", label, ep, total)

        try:
            reports = run_curriculum(
                grades, seed, env_factory, checkpoint_dir=run.dir, run_id=run.run_id,
                agent=agent if agent is not None else Agent(agent_cfg, seed=seed),
                start_index=start, on_episode=on_episode,
                checkpoint_extra={"env": dataclasses.asdict(env_cfg),
                                  "run_config_hash": run.config_hash})
            complete = True
        finally:
            if steps_log is not None:
                steps_log.close()
            for r in reports:
                run.files.append(r.checkpoint.name)
            for p in run.dir.glob(f"{run.run_id}__*.ckpt"):
                run.files.append(p.name)
            run.write_manifest(complete, {"grades": [g.label for g in grades[start:]]})
    print(run.dir)
    return EXIT_OK


# ---------------------------------------------------------------- eval / doe

def _rl_controller(args, ts: float) -> RlController:
    if not args.checkpoint:
        raise ConfigError("the rl controller needs --checkpoint")
    return RlController.from_checkpoint(args.checkpoint, ts)


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    exp = cfg["experiment"]
    exp_id = args.experiment or exp["id"]
    seed = exp["seed"]
    try:
        spec = experiment_preset(exp_id, seed=seed, controllers=exp["controllers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec = dataclasses.replace(
        spec, valve=cfg.valve(), process=cfg.process(),
        perturb=cfg.perturb() or spec.perturb, ts=min(spec.ts, cfg.ts))
    controllers = []
    for name in spec.controllers:
        if name == "rl":
            controllers.append(_rl_controller(args, spec.ts))
        else:
            try:
                controllers.append(make_controller(name, spec, pid_gains=cfg.pid(),
                                                   two_move_a=exp["two_move_a"]))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    run = Run("eval", cfg, seed, _out_root(args), tag=f"exp{spec.id}")
    csv_names = []
    with _terminate_as_interrupt():
        complete = False
        try:
            for gain in spec.reference_gains:
                tag = f"exp{spec.id}" if len(spec.reference_gains) == 1 else f"exp{spec.id}_ref{gain:g}"
                trajs = [run_closed_loop(spec, c, reference_gain=gain) for c in controllers]
                metrics = {t.controller: compute_metrics(t, spec.timebase) for t in trajs}
                name = f"trajectory_{tag}.csv"
                write_trajectories_csv(run.path(name), trajs)
                write_metrics_csv(run.path(f"metrics_{tag}.csv"), metrics)
                csv_names.append(name)
            write_plot_script(run.path("plot.py"), csv_names)
            complete = True
        finally:
            run.write_manifest(complete, {"experiment": spec.id,
                                          "checkpoint": str(args.checkpoint or "")})
    print(run.dir)
    return EXIT_OK


def cmd_doe(args) -> int:
    cfg = _load_cfg(args)
    exp = cfg["experiment"]
    seed = exp["seed"]
    base = dataclasses.replace(doe_base_spec(seed), process=cfg.process(), ts=cfg.ts)
    rl = _rl_controller(args, base.ts)
    levels = DoeLevels.scaled_friction((exp["doe_fs_high"], exp["doe_fd_high"]),
                                       exp["doe_factor"], tuple(exp["doe_delay"]))
    run = Run("doe", cfg, seed, _out_root(args))
    with _terminate_as_interrupt():
        complete = False
        try:
            rows = run_doe(base, levels, rl)
            write_doe_csv(run.path("doe.csv"), rows)
            complete = True
        finally:
            run.write_manifest(complete, {"checkpoint": str(args.checkpoint)})
    print(run.dir)
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def cmd_inspect(args) -> int:
    path = args.checkpoint or args.path
    if not path:
        raise ConfigError("inspect needs a checkpoint path")
    header, nets = read_agent_file(path)
    print(f"file:          {path}")
    print(f"tool version:  {header.get('tool_version', '?')}")
    print(f"grade label:   {header.get('grade_label', '')}")
    print(f"created:       {header.get('created', '?')}")
    print(f"config hash:   {header.get('config_hash', '?')}")
    if "run_config_hash" in header:
        print(f"run config:    {header['run_config_hash']}")
    total = 0
    for name, net in nets.items():
        shapes = " -> ".join([str(net.in_dim)] + [f"{s.out_dim}({s.activation})" for s in net.specs])
        print(f"  {name:20s} {shapes}  params={net.param_count}")
        if not name.startswith("target"):
            total += net.param_count
    print(f"parameters:    {total} (online networks)")
    return EXIT_OK


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="valverl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint_help="agent checkpoint"):
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--checkpoint", help=checkpoint_help)
        sp.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")

    common(sub.add_parser("train", help="run the graded-learning curriculum"),
           "resume after the grade stored in this checkpoint")
    sp = sub.add_parser("eval", help="run an experiment preset")
    common(sp)
    sp.add_argument("--experiment", help="1, 2, 3a, 3b, 3c, 4, 5 or 6")
    common(sub.add_parser("doe", help="two-factor delay/friction sweep of the RL controller"))
    sp = sub.add_parser("inspect", help="summarise a checkpoint")
    sp.add_argument("path", nargs="?")
    sp.add_argument("--checkpoint")
    return p


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "doe": cmd_doe, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"valverl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DataError) as exc:
        print(f"valverl: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"valverl: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print("valverl: interrupted; partial outputs kept, manifest marked incomplete",
              file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"valverl: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
