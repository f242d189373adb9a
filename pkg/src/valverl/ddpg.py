"""DDPG agent: actor/critic, target networks, replay, OU exploration."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .nn import (CheckpointError, DenseNet, ForwardCache, Gradients, LayerSpec, OptState,
                 backward, forward, net_deserialize_with_meta, net_init, net_serialize,
                 opt_step, soft_update)
from .simcore import derive_seed, make_rng

OBS_DIM = 3


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    critic_lr: float = 1e-3
    actor_lr: float = 1e-4
    batch_size: int = 64
    tau: float = 1e-3
    replay_capacity: int = 100_000
    # OU noise lives in action units (same units as action_low/high)
    ou_variance: float = 1.5
    ou_variance_decay: float = 1e-5
    ou_mean: float = 0.0
    ou_mean_attraction: float = 0.15
    action_low: float = 0.0
    action_high: float = 100.0
    hidden: tuple[int, int] = (50, 25)
    action_hidden: int = 25
    ts: float = 5.0  # decision interval, drives the OU time step

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if not 1 <= self.batch_size <= self.replay_capacity:
            raise ValueError("need 1 <= batch_size <= replay_capacity")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be < action_high")
        if not 0 <= self.ou_variance_decay < 1:
            raise ValueError("ou_variance_decay must be in [0, 1)")
        if self.ou_variance < 0:
            raise ValueError("ou_variance must be >= 0")
        if not self.ts > 0:
            raise ValueError("ts must be > 0")
        if self.action_hidden != self.hidden[1]:
            raise ValueError("action path width must equal the second hidden width (paths are summed)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------- replay

@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: float  # normalized action in [-1, 1]
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity ring; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity)
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.count = 0  # total insertions

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def clear(self) -> None:
        self.count = 0

    def push(self, t: Transition) -> None:
        i = self.count % self.capacity
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.done[i] = t.done
        self.count += 1

    def _batch(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.action[idx], self.reward[idx],
                     self.next_obs[idx], self.done[idx])

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement."""
        size = len(self)
        if size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if n > size:
            raise ValueError(f"requested {n} transitions from a buffer of {size}")
        return self._batch(rng.integers(0, size, size=n))

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        size = len(self)
        start = self.count - size
        out = []
        for k in range(start, self.count):
            i = k % self.capacity
            out.append(Transition(self.obs[i].copy(), float(self.action[i]),
                                  float(self.reward[i]), self.next_obs[i].copy(),
                                  bool(self.done[i])))
        return out


def replay_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def replay_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)


# ---------------------------------------------------------------- OU noise

@dataclass
class OuState:
    x: float
    variance: float
    decay: float
    mean: float = 0.0
    attraction: float = 0.15

    @classmethod
    def from_config(cls, cfg: AgentConfig) -> "OuState":
        return cls(x=cfg.ou_mean, variance=cfg.ou_variance, decay=cfg.ou_variance_decay,
                   mean=cfg.ou_mean, attraction=cfg.ou_mean_attraction)


def ou_sample(state: OuState, ts: float, rng: np.random.Generator | None = None) -> float:
    if not ts > 0:
        raise ValueError("ts must be > 0")
    shock = 0.0
    if state.variance > 0:
        shock = math.sqrt(state.variance) * math.sqrt(ts) * rng.standard_normal()
    state.x += state.attraction * (state.mean - state.x) * ts + shock
    state.variance *= 1.0 - state.decay
    return state.x


def variance_half_life(decay: float) -> float:
    """Steps until geometric variance decay halves the variance."""
    return math.log(0.5) / math.log(1.0 - decay)


# ---------------------------------------------------------------- networks

def actor_specs(cfg: AgentConfig, obs_dim: int = OBS_DIM) -> list[LayerSpec]:
    h1, h2 = cfg.hidden
    return [LayerSpec(obs_dim, h1, "relu"), LayerSpec(h1, h2, "relu"), LayerSpec(h2, 1, "tanh")]


@dataclass
class CriticCache:
    obs: ForwardCache
    act: ForwardCache
    head: ForwardCache
    merged: np.ndarray


class Critic:
    """Q(s, a): observation path FC-relu-FC, action path FC, summed, relu, FC(1)."""

    def __init__(self, obs_net: DenseNet, act_net: DenseNet, head: DenseNet):
        self.obs_net, self.act_net, self.head = obs_net, act_net, head

    @classmethod
    def init(cls, cfg: AgentConfig, rng: np.random.Generator, obs_dim: int = OBS_DIM) -> "Critic":
        h1, h2 = cfg.hidden
        obs_net = net_init([LayerSpec(obs_dim, h1, "relu"), LayerSpec(h1, h2, "linear")], rng)
        act_net = net_init([LayerSpec(1, cfg.action_hidden, "linear")], rng)
        head = net_init([LayerSpec(h2, 1, "linear")], rng)
        return cls(obs_net, act_net, head)

    @property
    def nets(self) -> tuple[DenseNet, DenseNet, DenseNet]:
        return (self.obs_net, self.act_net, self.head)

    def copy(self) -> "Critic":
        return Critic(*(n.copy() for n in self.nets))

    def forward(self, obs: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, CriticCache]:
        o, co = forward(self.obs_net, obs)
        a, ca = forward(self.act_net, np.asarray(action).reshape(-1, 1))
        merged = o + a
        q, ch = forward(self.head, np.maximum(merged, 0.0))
        return q[:, 0], CriticCache(co, ca, ch, merged)

    def backward(self, cache: CriticCache, out_grad: np.ndarray
                 ) -> tuple[list[Gradients], np.ndarray, np.ndarray]:
        """Returns (per-net gradients, d/d obs, d/d action)."""
        gh, g_relu = backward(self.head, cache.head, np.asarray(out_grad).reshape(-1, 1))
        g_merged = g_relu * (cache.merged > 0)
        go, d_obs = backward(self.obs_net, cache.obs, g_merged)
        ga, d_act = backward(self.act_net, cache.act, g_merged)
        return [go, ga, gh], d_obs, d_act[:, 0]

    def __call__(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.forward(obs, action)[0]


def td_targets(batch: Batch, target_actor: DenseNet, target_critic: Critic, gamma: float) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("empty batch")
    next_a = target_actor(batch.next_obs)[:, 0]
    q_next = target_critic(batch.next_obs, next_a)
    return batch.reward + gamma * (1.0 - batch.done) * q_next


# ---------------------------------------------------------------- agent

class Agent:
    NET_NAMES = ("actor", "critic.obs", "critic.act", "critic.head", "target_actor",
                 "target_critic.obs", "target_critic.act", "target_critic.head")

    def __init__(self, cfg: AgentConfig | None = None, seed: int = 0):
        self.cfg = cfg or AgentConfig()
        self.seed = seed
        init_rng = make_rng(derive_seed(seed, "init"))
        self.actor = net_init(actor_specs(self.cfg), init_rng)
        self.critic = Critic.init(self.cfg, init_rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = OptState.for_net(self.actor)
        self.critic_opts = [OptState.for_net(n) for n in self.critic.nets]
        self.ou = OuState.from_config(self.cfg)
        self.replay = ReplayBuffer(self.cfg.replay_capacity)
        self.rng = make_rng(derive_seed(seed, "run"))

    # action scaling
    @property
    def _mid(self) -> float:
        return 0.5 * (self.cfg.action_low + self.cfg.action_high)

    @property
    def _half(self) -> float:
        return 0.5 * (self.cfg.action_high - self.cfg.action_low)

    def to_action(self, raw: float) -> float:
        return self._mid + self._half * raw

    def to_normalized(self, action: float) -> float:
        return (action - self._mid) / self._half

    def act_normalized(self, obs: np.ndarray, explore: bool = False) -> float:
        raw = float(self.actor(np.asarray(obs, dtype=np.float64))[0])
        if explore:
            noise = ou_sample(self.ou, self.cfg.ts, self.rng) / self._half
            raw = min(1.0, max(-1.0, raw + noise))
        return raw

    def act(self, obs: np.ndarray, explore: bool = False) -> float:
        return self.to_action(self.act_normalized(obs, explore))

    def reset_for_new_task(self, seed: int | None = None) -> None:
        """Fresh replay, exploration and optimizer moments; weights are kept."""
        self.replay.clear()
        self.ou = OuState.from_config(self.cfg)
        self.actor_opt.reset()
        for o in self.critic_opts:
            o.reset()
        if seed is not None:
            self.rng = make_rng(seed)

    def nets(self) -> dict[str, DenseNet]:
        return {
            "actor": self.actor,
            "critic.obs": self.critic.obs_net,
            "critic.act": self.critic.act_net,
            "critic.head": self.critic.head,
            "target_actor": self.target_actor,
            "target_critic.obs": self.target_critic.obs_net,
            "target_critic.act": self.target_critic.act_net,
            "target_critic.head": self.target_critic.head,
        }

    def soft_update_targets(self, tau: float | None = None) -> None:
        tau = self.cfg.tau if tau is None else tau
        soft_update(self.target_actor, self.actor, tau)
        for t, o in zip(self.target_critic.nets, self.critic.nets):
            soft_update(t, o, tau)


def learn_step(agent: Agent, batch: Batch | None = None) -> tuple[float, float] | None:
    """One critic and one actor update followed by the target soft update.

    Returns ``None`` (a skip, not an error) while the replay holds fewer than
    ``batch_size`` transitions.
    """
    cfg = agent.cfg
    if batch is None:
        if len(agent.replay) < cfg.batch_size:
            return None
        batch = agent.replay.sample(cfg.batch_size, agent.rng)
    n = len(batch)

    y = td_targets(batch, agent.target_actor, agent.target_critic, cfg.gamma)
    q, cache = agent.critic.forward(batch.obs, batch.action)
    diff = q - y
    critic_loss = float(np.mean(diff ** 2))
    grads, _, _ = agent.critic.backward(cache, 2.0 * diff / n)
    for net, g, opt in zip(agent.critic.nets, grads, agent.critic_opts):
        opt_step(net, g, opt, cfg.critic_lr)

    actor_obj = actor_update(agent, batch.obs)
    agent.soft_update_targets()
    return critic_loss, actor_obj


def actor_update(agent: Agent, obs: np.ndarray, critic: Critic | None = None) -> float:
    """One deterministic policy-gradient step; returns mean Q before the step.

    ``critic`` defaults to the agent's online critic; any object with the same
    ``forward``/``backward`` signatures works.
    """
    critic = agent.critic if critic is None else critic
    n = len(obs)
    a, acache = forward(agent.actor, obs)
    q_pi, ccache = critic.forward(obs, a[:, 0])
    _, _, dq_da = critic.backward(ccache, np.full(n, 1.0 / n))
    # gradient ascent on mean Q == descent on -mean Q
    g_actor, _ = backward(agent.actor, acache, -dq_da.reshape(-1, 1))
    opt_step(agent.actor, g_actor, agent.actor_opt, agent.cfg.actor_lr)
    return float(np.mean(q_pi))


# ---------------------------------------------------------------- checkpoints

AGENT_MAGIC = b"VRLA"
AGENT_VERSION = 1
_AHEAD = struct.Struct("<4sHHI")


def save_agent(agent: Agent, path: str | Path, grade_label: str = "",
               extra: dict | None = None) -> Path:
    blobs = []
    index = []
    offset = 0
    for name, net in agent.nets().items():
        blob = net_serialize(net, {"name": name, "grade": grade_label})
        index.append({"name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "valverl-agent",
        "tool_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "grade_label": grade_label,
        "config": agent.cfg.to_dict(),
        "config_hash": agent.cfg.hash(),
        "seed": agent.seed,
        "ou": dataclasses.asdict(agent.ou),
        "index": index,
        **(extra or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_AHEAD.pack(AGENT_MAGIC, AGENT_VERSION, 0, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def read_agent_file(path: str | Path) -> tuple[dict, dict[str, DenseNet]]:
    data = Path(path).read_bytes()
    if len(data) < _AHEAD.size:
        raise CheckpointError("corrupt checkpoint: truncated header")
    magic, version, _, hlen = _AHEAD.unpack_from(data, 0)
    if magic != AGENT_MAGIC:
        raise CheckpointError(f"corrupt checkpoint: bad magic {magic!r}")
    if version != AGENT_VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (expected {AGENT_VERSION})")
    base = _AHEAD.size + hlen
    if len(data) < base:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(data[_AHEAD.size:base].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("corrupt checkpoint: unreadable header") from None
    nets = {}
    for entry in header.get("index", []):
        start = base + entry["offset"]
        chunk = data[start:start + entry["length"]]
        if len(chunk) != entry["length"]:
            raise CheckpointError(f"corrupt checkpoint: truncated network {entry['name']!r}")
        try:
            net, _, used = net_deserialize_with_meta(chunk)
        except CheckpointError as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from None
        if used != len(chunk):
            raise CheckpointError(f"corrupt checkpoint: bad length for {entry['name']!r}")
        nets[entry["name"]] = net
    if set(nets) != set(Agent.NET_NAMES):
        raise CheckpointError(f"corrupt checkpoint: networks {sorted(nets)} incomplete")
    return header, nets


def load_agent(path: str | Path, seed: int | None = None) -> tuple[Agent, dict]:
    header, nets = read_agent_file(path)
    cfg = AgentConfig.from_dict(header["config"])
    agent = Agent(cfg, seed=header.get("seed", 0) if seed is None else seed)
    agent.actor = nets["actor"]
    agent.critic = Critic(nets["critic.obs"], nets["critic.act"], nets["critic.head"])
    agent.target_actor = nets["target_actor"]
    agent.target_critic = Critic(nets["target_critic.obs"], nets["target_critic.act"],
                                 nets["target_critic.head"])
    agent.actor_opt = OptState.for_net(agent.actor)
    agent.critic_opts = [OptState.for_net(n) for n in agent.critic.nets]
    ou = header.get("ou")
    if ou:
        agent.ou = OuState(**ou)
    return agent, header
