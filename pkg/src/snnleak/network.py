"""Input -> hidden (optionally recurrent) -> non-spiking readout networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import StructuralError
from .events import SpikeRaster
from .neurons import DecayParams, LayerState, ModelSpec, NeuronKind, step_layer


@dataclass(frozen=True)
class Topology:
    n_in: int
    n_hidden: int
    n_out: int
    recurrent: bool = False

    def __post_init__(self):
        if min(self.n_in, self.n_hidden, self.n_out) < 1:
            raise StructuralError(f"layer sizes must be positive: {self.sizes}")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.n_in, self.n_hidden, self.n_out)

    def __str__(self) -> str:
        return "-".join(map(str, self.sizes)) + (" rec" if self.recurrent else "")


@dataclass
class WeightSet:
    W1: np.ndarray
    W2: np.ndarray
    V: Optional[np.ndarray] = None

    @property
    def topology(self) -> Topology:
        return Topology(self.W1.shape[1], self.W1.shape[0], self.W2.shape[0], self.V is not None)

    def validate(self, topology: Optional[Topology] = None) -> None:
        n_h = self.W1.shape[0]
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.W2.shape[1] != n_h:
            raise StructuralError(f"W1 {self.W1.shape} and W2 {self.W2.shape} do not chain")
        if self.V is not None and self.V.shape != (n_h, n_h):
            raise StructuralError(f"V must be {n_h}x{n_h}, got {self.V.shape}")
        if topology is not None and self.topology != topology:
            raise StructuralError(f"weights are {self.topology}, expected {topology}")

    def as_dict(self) -> dict[str, np.ndarray]:
        d = {"W1": self.W1, "W2": self.W2}
        if self.V is not None:
            d["V"] = self.V
        return d

    def copy(self) -> "WeightSet":
        return WeightSet(self.W1.copy(), self.W2.copy(), None if self.V is None else self.V.copy())


def init_weights(topology: Topology, seed: int) -> WeightSet:
    """Gaussian weights with std 1/sqrt(fan_in).

    W1 and W2 are drawn before V, so a feedforward and a recurrent network built
    from the same seed share their feedforward weights.
    """
    rng = np.random.default_rng(seed)
    n_in, n_h, n_out = topology.sizes
    W1 = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_h, n_in))
    W2 = rng.normal(0.0, 1.0 / math.sqrt(n_h), size=(n_out, n_h))
    V = rng.normal(0.0, 1.0 / math.sqrt(n_h), size=(n_h, n_h)) if topology.recurrent else None
    return WeightSet(W1, W2, V)


@dataclass(frozen=True)
class NetworkModel:
    """Dynamics of both layers. The readout shares the hidden kind but never spikes."""

    hidden: ModelSpec
    readout: ModelSpec

    @classmethod
    def homogeneous(
        cls, kind, topology: Topology, tau_mem_ms: float = math.inf, tau_syn_ms: float = 0.0, dt_ms: float = 14.0
    ) -> "NetworkModel":
        kind = NeuronKind.parse(kind)
        return cls(
            ModelSpec(kind, DecayParams.from_tau(topology.n_hidden, tau_mem_ms, tau_syn_ms, dt_ms)),
            ModelSpec(kind, DecayParams.from_tau(topology.n_out, tau_mem_ms, tau_syn_ms, dt_ms), math.inf),
        )

    @classmethod
    def from_decays(cls, kind, hidden: DecayParams, readout: DecayParams) -> "NetworkModel":
        kind = NeuronKind.parse(kind)
        return cls(ModelSpec(kind, hidden), ModelSpec(kind, readout, math.inf))

    @property
    def kind(self) -> NeuronKind:
        return self.hidden.kind

    @property
    def dt_ms(self) -> float:
        return self.hidden.decay.dt_ms


@dataclass(eq=False)
class ForwardRecord:
    """Everything one forward pass produced, with shapes (B, T, n).

    ``hidden_spikes`` are the values sent downstream (relaxed spikes in
    surrogate-relaxed mode); reset masks are recomputed from ``hidden_U``.
    """

    inputs: np.ndarray
    hidden_spikes: np.ndarray
    hidden_I: np.ndarray
    hidden_U: np.ndarray
    readout_I: np.ndarray
    readout_U: np.ndarray
    theta: float = 1.0
    relax_steepness: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return self.readout_U.shape[0]

    @property
    def steps(self) -> int:
        return self.readout_U.shape[1]

    def hard_spikes(self) -> np.ndarray:
        if self.relax_steepness is None:
            return self.hidden_spikes
        return (self.hidden_U >= self.theta).astype(np.float64)

    def hidden_spike_count(self) -> int:
        return int(self.hard_spikes().sum())

    def select(self, idx) -> "ForwardRecord":
        return replace(
            self,
            inputs=self.inputs[idx],
            hidden_spikes=self.hidden_spikes[idx],
            hidden_I=self.hidden_I[idx],
            hidden_U=self.hidden_U[idx],
            readout_I=self.readout_I[idx],
            readout_U=self.readout_U[idx],
        )


def as_batch(raster) -> np.ndarray:
    if isinstance(raster, SpikeRaster):
        raster = raster.bits
    x = np.asarray(raster, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise StructuralError(f"expected (T, C) or (B, T, C) input, got shape {x.shape}")
    return x


def forward(raster, weights: WeightSet, model: NetworkModel, relax_steepness: Optional[float] = None) -> ForwardRecord:
    """Unroll the network over every input step.

    At step t the hidden layer receives input row t and its own spikes from
    t-1; the readout integrates the hidden spikes of step t.
    """
    x = as_batch(raster)
    B, T, C = x.shape
    weights.validate()
    n_h, n_out = weights.W1.shape[0], weights.W2.shape[0]
    if C != weights.W1.shape[1]:
        raise StructuralError(f"input has {C} channels, network expects {weights.W1.shape[1]}")
    if model.hidden.size != n_h or model.readout.size != n_out:
        raise StructuralError("model decay sizes do not match the weights")

    hs = np.zeros((B, T, n_h))
    hI = np.zeros((B, T, n_h))
    hU = np.zeros((B, T, n_h))
    oI = np.zeros((B, T, n_out))
    oU = np.zeros((B, T, n_out))
    hidden = LayerState.zeros(n_h, B)
    readout = LayerState.zeros(n_out, B)
    out = np.zeros((B, n_h))
    rec = weights.V is not None
    for t in range(T):
        hidden, out = step_layer(
            model.kind, hidden, x[:, t], out if rec else None, weights.W1, weights.V,
            model.hidden, relax_steepness=relax_steepness,
        )
        readout, _ = step_layer(model.kind, readout, out, None, weights.W2, None, model.readout)
        hs[:, t], hI[:, t], hU[:, t] = out, hidden.I, hidden.U
        oI[:, t], oU[:, t] = readout.I, readout.U
    return ForwardRecord(x, hs, hI, hU, oI, oU, model.hidden.theta, relax_steepness)


def readout_maxima(record_or_trace) -> np.ndarray:
    u = record_or_trace.readout_U if isinstance(record_or_trace, ForwardRecord) else np.asarray(record_or_trace)
    if u.ndim == 2:
        u = u[None]
    return u.max(axis=1)


def predict(record_or_trace) -> np.ndarray:
    """Class with the largest readout peak; ties go to the lowest index."""
    return np.argmax(readout_maxima(record_or_trace), axis=1)
