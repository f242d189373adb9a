"""Time base, reference waveforms, disturbance sources and seeded RNGs.

Everything here is a pure function over small value types. Signals are
1-D float64 numpy arrays sampled at ``t_i = i * ts`` for ``i = 0 .. horizon-1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

RNG_ALGORITHM = "PCG64"


@dataclass(frozen=True)
class TimeBase:
    ts: float = 1.0
    horizon: int = 1

    def __post_init__(self):
        if not (self.ts > 0 and math.isfinite(self.ts)):
            raise ValueError(f"ts must be positive, got {self.ts}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")

    @classmethod
    def from_duration(cls, duration: float, ts: float) -> "TimeBase":
        return cls(ts=ts, horizon=max(1, int(round(duration / ts))))

    @property
    def duration(self) -> float:
        return self.ts * self.horizon

    def times(self) -> np.ndarray:
        return np.arange(self.horizon) * self.ts


@dataclass(frozen=True)
class Segment:
    kind: str  # "hold" | "ramp"
    level: float
    duration: float

    def __post_init__(self):
        if self.kind not in ("hold", "ramp"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not math.isfinite(self.level):
            raise ValueError("segment level must be finite")
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")


@dataclass(frozen=True)
class WaveformSpec:
    segments: tuple[Segment, ...]
    name: str = "custom"

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def scaled(self, gain: float) -> "WaveformSpec":
        segs = tuple(Segment(s.kind, s.level * gain, s.duration) for s in self.segments)
        return WaveformSpec(segs, name=f"{self.name}x{gain:g}")

    @classmethod
    def constant(cls, level: float, duration: float) -> "WaveformSpec":
        return cls((Segment("hold", level, duration),), name=f"constant{level:g}")

    @classmethod
    def parse(cls, text: str, name: str = "custom") -> "WaveformSpec":
        """Parse ``"hold 100 400, ramp 120 300"`` (kind, level, seconds)."""
        segs = []
        for chunk in text.replace("\n", ",").split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split()
            if len(parts) != 3:
                raise ValueError(f"bad waveform segment {chunk!r}")
            segs.append(Segment(parts[0], float(parts[1]), float(parts[2])))
        return cls(tuple(segs), name=name)

    def format(self) -> str:
        return ", ".join(f"{s.kind} {s.level:g} {s.duration:g}" for s in self.segments)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian-hold"  # "gaussian-hold" | "sine-mix"
    mu: float = 0.0
    sigma: float = 0.0
    update_hz: float = 1.0
    f_min: float = 30.0
    f_max: float = 100.0
    n_components: int = 8
    amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian-hold", "sine-mix"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind == "gaussian-hold" and not self.update_hz > 0:
            raise ValueError("update_hz must be > 0")
        if self.kind == "sine-mix":
            if not 0 < self.f_min <= self.f_max:
                raise ValueError("need 0 < f_min <= f_max")
            if self.n_components < 1:
                raise ValueError("n_components must be >= 1")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; same seed and call sequence give the same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *tags: int | str) -> int:
    """Stable child seed for an independent sub-stream."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(int.from_bytes(tag.encode(), "little") % (1 << 63))
        else:
            words.append(int(tag))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


def build_waveform(spec: WaveformSpec, tb: TimeBase) -> np.ndarray:
    if not spec.segments:
        raise ValueError("waveform needs at least one segment")
    if spec.duration > tb.duration * (1 + 1e-9):
        raise ValueError(
            f"waveform lasts {spec.duration} s but the time base covers {tb.duration} s")
    t = tb.times()
    out = np.empty(tb.horizon)
    # samples past the last segment keep the final level
    out[:] = spec.segments[-1].level
    start = 0.0
    prev = 0.0
    eps = 1e-9 * tb.ts
    for seg in spec.segments:
        end = start + seg.duration
        mask = (t >= start - eps) & (t < end - eps)
        if seg.kind == "hold":
            out[mask] = seg.level
        else:
            out[mask] = prev + (seg.level - prev) * (t[mask] - start) / seg.duration
        prev = seg.level
        start = end
    return out


def gaussian_hold_noise(spec: NoiseSpec, tb: TimeBase, rng: np.random.Generator) -> np.ndarray:
    if spec.kind != "gaussian-hold":
        raise ValueError("expected a gaussian-hold spec")
    hold = max(1, int(round(1.0 / (spec.update_hz * tb.ts))))
    n_refresh = -(-tb.horizon // hold)
    draws = rng.normal(spec.mu, spec.sigma, size=n_refresh)
    return np.repeat(draws, hold)[: tb.horizon]


def sine_mix_noise(spec: NoiseSpec, tb: TimeBase, rng: np.random.Generator) -> np.ndarray:
    if spec.kind != "sine-mix":
        raise ValueError("expected a sine-mix spec")
    nyquist = 1.0 / (2.0 * tb.ts)
    if spec.f_max > nyquist:
        raise ValueError(f"f_max {spec.f_max} Hz exceeds Nyquist {nyquist} Hz")
    freqs = rng.uniform(spec.f_min, spec.f_max, size=spec.n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_components)
    t = tb.times()
    amp = spec.amplitude / spec.n_components
    out = np.zeros(tb.horizon)
    for f, ph in zip(freqs, phases):
        out += amp * np.sin(2.0 * np.pi * f * t + ph)
    return out


def noise_signal(spec: NoiseSpec, tb: TimeBase, rng: np.random.Generator | None = None) -> np.ndarray:
    """Dispatch on ``spec.kind``; uses ``spec.seed`` when no rng is given."""
    rng = rng if rng is not None else make_rng(spec.seed)
    if spec.kind == "gaussian-hold":
        return gaussian_hold_noise(spec, tb, rng)
    return sine_mix_noise(spec, tb, rng)


def write_signal_csv(path: str | Path, tb: TimeBase, values: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value"])
        for t, v in zip(tb.times(), values):
            w.writerow([repr(float(t)), repr(float(v))])


# Approximation of the piecewise-constant benchmark profile. The original
# breakpoints were never published; these levels only reproduce its character
# (staircase around 100 flow units over 2000 s).
BENCHMARK_WAVEFORM = WaveformSpec(
    (
        Segment("hold", 100.0, 400.0),
        Segment("hold", 120.0, 400.0),
        Segment("hold", 80.0, 400.0),
        Segment("hold", 110.0, 400.0),
        Segment("hold", 90.0, 400.0),
    ),
    name="benchmark-approx",
)

ARBITRARY_WAVEFORM = WaveformSpec(
    (
        Segment("hold", 60.0, 200.0),
        Segment("ramp", 120.0, 300.0),
        Segment("hold", 120.0, 200.0),
        Segment("ramp", 40.0, 400.0),
        Segment("hold", 40.0, 300.0),
        Segment("ramp", 90.0, 200.0),
        Segment("hold", 90.0, 400.0),
    ),
    name="arbitrary",
)

WAVEFORMS = {"benchmark": BENCHMARK_WAVEFORM, "arbitrary": ARBITRARY_WAVEFORM}
