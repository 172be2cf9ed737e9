"""Seeded synthetic event datasets for desk-scale experiments.

Two task kinds:

``rate``
    Every class owns a disjoint group of channels that fire as Poisson trains
    at ``rate_hz``; all other channels fire at ``background_hz``. Spike counts
    alone separate the classes.

``temporal``
    Classes come in pairs. Each pair splits the channels into two halves (a
    seeded partition); one class fires half A then half B, its partner fires B
    then A, with a silent gap between the bursts. Every channel emits exactly
    ``spikes_per_channel`` burst spikes in every sample, so per-channel counts
    are identical across classes and only the order carries the label.
    Optional Poisson background noise is the same for all classes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .errors import DomainError
from .events import US_PER_MS, Dataset, EventStream


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: Literal["rate", "temporal"] = "rate"
    class_count: int = 4
    channel_count: int = 40
    duration_ms: float = 700.0
    train_samples: int = 400
    test_samples: int = 200
    seed: int = 0
    # rate task
    rate_hz: float = 40.0
    background_hz: float = 2.0
    # temporal task
    burst_ms: float = 100.0
    gap_ms: float = 150.0
    spikes_per_channel: int = 2
    onset_jitter_ms: float = 100.0
    noise_hz: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rate", "temporal"):
            raise DomainError(f"unknown synthetic task kind {self.kind!r}")
        if self.class_count < 2:
            raise DomainError("class_count must be >= 2")
        if self.channel_count < 1:
            raise DomainError("channel_count must be >= 1")
        if self.kind == "rate" and self.channel_count < self.class_count:
            raise DomainError("rate task needs at least one channel per class")
        if self.kind == "temporal" and self.channel_count < 2:
            raise DomainError("temporal task needs at least two channels")
        if self.duration_ms <= 0 or self.train_samples < 1 or self.test_samples < 1:
            raise DomainError("duration and sample counts must be positive")
        for name in ("rate_hz", "background_hz", "burst_ms", "gap_ms", "onset_jitter_ms", "noise_hz"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.kind == "temporal":
            if self.burst_ms <= 0 or self.spikes_per_channel < 1:
                raise DomainError("temporal task needs burst_ms > 0 and spikes_per_channel >= 1")
            if self.onset_jitter_ms + 2 * self.burst_ms + self.gap_ms > self.duration_ms:
                raise DomainError("bursts, gap and jitter do not fit in duration_ms")

    def to_dict(self) -> dict:
        return asdict(self)


def _poisson_events(rng, rates_hz: np.ndarray, t0_ms: float, t1_ms: float):
    """Homogeneous Poisson events per channel on [t0, t1), integer microseconds."""
    span = (t1_ms - t0_ms) / 1000.0
    counts = rng.poisson(rates_hz * span)
    ch = np.repeat(np.arange(rates_hz.size), counts)
    t = rng.uniform(t0_ms * US_PER_MS, t1_ms * US_PER_MS, size=ch.size)
    return np.floor(t).astype(np.int64), ch


def _to_stream(channel_count: int, parts) -> EventStream:
    t = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.int64)
    c = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    order = np.lexsort((c, t))
    return EventStream(channel_count, t[order], c[order])


def class_channel_groups(spec: SyntheticTaskSpec) -> list[np.ndarray]:
    """Rate task: disjoint channel group owned by each class."""
    rng = np.random.default_rng([spec.seed, 0])
    perm = rng.permutation(spec.channel_count)
    return [np.sort(g) for g in np.array_split(perm, spec.class_count)]


def order_partitions(spec: SyntheticTaskSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Temporal task: channel halves (first, second) burst for each class."""
    rng = np.random.default_rng([spec.seed, 0])
    out = []
    for pair in range((spec.class_count + 1) // 2):
        perm = rng.permutation(spec.channel_count)
        a, b = np.sort(perm[: spec.channel_count // 2]), np.sort(perm[spec.channel_count // 2 :])
        out.append((a, b))
        out.append((b, a))
    return out[: spec.class_count]


def _rate_sample(spec, groups, label, rng) -> EventStream:
    rates = np.full(spec.channel_count, spec.background_hz)
    rates[groups[label]] = spec.rate_hz
    return _to_stream(spec.channel_count, [_poisson_events(rng, rates, 0.0, spec.duration_ms)])


def _burst(rng, channels, start_ms, spec):
    ch = np.repeat(channels, spec.spikes_per_channel)
    t = rng.uniform(start_ms * US_PER_MS, (start_ms + spec.burst_ms) * US_PER_MS, size=ch.size)
    return np.floor(t).astype(np.int64), ch


def _temporal_sample(spec, partitions, label, rng) -> EventStream:
    first, second = partitions[label]
    onset = rng.uniform(0.0, spec.onset_jitter_ms)
    parts = [
        _burst(rng, first, onset, spec),
        _burst(rng, second, onset + spec.burst_ms + spec.gap_ms, spec),
    ]
    if spec.noise_hz > 0:
        parts.append(_poisson_events(rng, np.full(spec.channel_count, spec.noise_hz), 0.0, spec.duration_ms))
    return _to_stream(spec.channel_count, parts)


def _split(spec: SyntheticTaskSpec, n: int, split: str, stream_id: int) -> Dataset:
    rng = np.random.default_rng([spec.seed, stream_id])
    labels = np.arange(n) % spec.class_count
    rng.shuffle(labels)
    if spec.kind == "rate":
        layout = class_channel_groups(spec)
        make = _rate_sample
    else:
        layout = order_partitions(spec)
        make = _temporal_sample
    streams = [make(spec, layout, int(lbl), rng) for lbl in labels]
    return Dataset(streams, labels, spec.class_count, spec.channel_count, split)


def generate_synthetic_dataset(spec: SyntheticTaskSpec) -> tuple[Dataset, Dataset]:
    """Balanced train and test splits, deterministic in ``spec.seed``.

    The splits draw from independent random streams, so no sample is shared.
    """
    return _split(spec, spec.train_samples, "train", 1), _split(spec, spec.test_samples, "test", 2)
