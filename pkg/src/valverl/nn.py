"""Small dense networks with hand-written reverse-mode gradients and Adam.

Inputs are batches of row vectors, shape ``(n, in_dim)``; a 1-D input is
treated as a batch of one and the output is returned 1-D as well.
Weights are stored ``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("linear", "relu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

MAGIC = b"VRLN"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sHHI")  # magic, version, reserved, metadata length
_LAYER = struct.Struct("<IIB3x")


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or mismatched serialized data."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.W.shape[0], self.W.shape[1], self.activation)


@dataclass
class DenseNet:
    layers: list[Layer]

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def param_count(self) -> int:
        return sum(layer.W.size + layer.b.size for layer in self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class Gradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out = []
        for dw, db in zip(self.dW, self.db):
            out.extend((dw, db))
        return out


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    post: list[np.ndarray]
    squeeze: bool
    net_id: int


def net_init(specs: list[LayerSpec], seed: int | np.random.Generator) -> DenseNet:
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    if not specs:
        raise ValueError("need at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for s in specs:
        bound = 1.0 / np.sqrt(s.in_dim)
        W = rng.uniform(-bound, bound, size=(s.in_dim, s.out_dim))
        layers.append(Layer(W, np.zeros(s.out_dim), s.activation))
    return DenseNet(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != network input dim {net.in_dim}")
    inputs, pre, post = [], [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.W + layer.b
        h = _activate(z, layer.activation)
        pre.append(z)
        post.append(h)
    out = h[0] if squeeze else h
    return out, ForwardCache(inputs, pre, post, squeeze, id(net))


def backward(net: DenseNet, cache: ForwardCache, out_grad: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Gradients of ``sum(output * out_grad)`` w.r.t. parameters and input.

    Parameter gradients are summed over the batch.
    """
    if cache.net_id != id(net) or len(cache.pre) != len(net.layers):
        raise ValueError("cache does not come from this network")
    g = np.asarray(out_grad, dtype=np.float64)
    if cache.squeeze:
        g = g.reshape(1, -1)
    if g.shape != cache.post[-1].shape:
        raise ValueError(f"out_grad shape {g.shape} != output shape {cache.post[-1].shape}")
    n_layers = len(net.layers)
    dW = [None] * n_layers
    db = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        elif layer.activation == "tanh":
            g = g * (1.0 - cache.post[i] ** 2)
        dW[i] = cache.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        g = g @ layer.W.T
    in_grad = g[0] if cache.squeeze else g
    return Gradients(dW, db), in_grad


@dataclass
class OptState:
    """Adam moments; constants are fixed."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet) -> "OptState":
        return cls([np.zeros_like(p) for p in net.params()],
                   [np.zeros_like(p) for p in net.params()])

    def reset(self) -> None:
        for a in self.m + self.v:
            a.fill(0.0)
        self.step = 0


def opt_step(net: DenseNet, grads: Gradients, opt: OptState, lr: float) -> DenseNet:
    params = net.params()
    flat = grads.flat()
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise ValueError("gradient shapes do not match the network")
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for p, g, m, v in zip(params, flat, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> None:
    """``target <- tau*online + (1-tau)*target`` in place."""
    for pt, po in zip(target.params(), online.params()):
        pt *= 1.0 - tau
        pt += tau * po


def net_serialize(net: DenseNet, metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, 0, len(meta)), meta,
             struct.pack("<I", len(net.layers))]
    for s in net.specs:
        parts.append(_LAYER.pack(s.in_dim, s.out_dim, _ACT_CODE[s.activation]))
    for p in net.params():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def header_size(net: DenseNet, metadata: dict | None = None) -> int:
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    return _HEAD.size + len(meta) + 4 + _LAYER.size * len(net.layers)


def net_deserialize_with_meta(data: bytes) -> tuple[DenseNet, dict, int]:
    """Decode one network; returns ``(net, metadata, bytes_consumed)``."""
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated network header")
    magic, version, _, meta_len = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported network format version {version}")
    off = _HEAD.size
    if len(data) < off + meta_len + 4:
        raise CheckpointError("truncated network metadata")
    try:
        meta = json.loads(data[off:off + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from None
    off += meta_len
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + n_layers * _LAYER.size:
        raise CheckpointError("truncated layer table")
    specs = []
    for _ in range(n_layers):
        i, o, code = _LAYER.unpack_from(data, off)
        off += _LAYER.size
        if code >= len(ACTIVATIONS) or i < 1 or o < 1:
            raise CheckpointError("corrupt layer table")
        specs.append(LayerSpec(i, o, ACTIVATIONS[code]))
    layers = []
    for s in specs:
        nW = s.in_dim * s.out_dim
        need = 8 * (nW + s.out_dim)
        if len(data) < off + need:
            raise CheckpointError("truncated parameter block")
        W = np.frombuffer(data, dtype="<f8", count=nW, offset=off).reshape(s.in_dim, s.out_dim)
        off += 8 * nW
        b = np.frombuffer(data, dtype="<f8", count=s.out_dim, offset=off)
        off += 8 * s.out_dim
        layers.append(Layer(W.astype(np.float64), b.astype(np.float64), s.activation))
    return DenseNet(layers), meta, off


def net_deserialize(data: bytes) -> DenseNet:
    net, _, used = net_deserialize_with_meta(data)
    if used != len(data):
        raise CheckpointError(f"{len(data) - used} trailing bytes after network payload")
    return net
