"""Discrete-time IF, LIF and CUBA-LIF layer dynamics.

All three kinds share one update; they differ only in which decays are pinned::

    I[t] = alpha * I[t-1] + W @ s_in + V @ S[t-1]
    U[t] = (beta * U[t-1] + I[t]) * (1 - S[t-1])
    S[t] = U[t] >= theta

IF pins alpha = 0, beta = 1; LIF pins alpha = 0; CUBA-LIF leaves both free.
Resting potential is 0 and the reset is multiplicative, so a neuron that
spiked at step t has U = 0 at step t+1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DomainError, StructuralError

THETA = 1.0


class NeuronKind(str, Enum):
    IF = "IF"
    LIF = "LIF"
    CUBA_LIF = "CUBA_LIF"

    @classmethod
    def parse(cls, value) -> "NeuronKind":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"unknown neuron kind {value!r}") from None

    @property
    def trains_alpha(self) -> bool:
        return self is NeuronKind.CUBA_LIF

    @property
    def trains_beta(self) -> bool:
        return self is not NeuronKind.IF


def decay_from_tau(tau_ms: float, dt_ms: float) -> float:
    """Per-step decay factor ``exp(-dt/tau)``; tau=0 gives 0, tau=inf gives 1."""
    if dt_ms <= 0:
        raise DomainError(f"dt_ms must be positive, got {dt_ms}")
    if math.isnan(tau_ms) or tau_ms < 0:
        raise DomainError(f"time constant must be non-negative, got {tau_ms}")
    if tau_ms == 0:
        return 0.0
    if math.isinf(tau_ms):
        return 1.0
    return math.exp(-dt_ms / tau_ms)


def tau_from_decay(decay: float, dt_ms: float) -> float:
    if decay <= 0:
        return 0.0
    if decay >= 1:
        return math.inf
    return -dt_ms / math.log(decay)


@dataclass(frozen=True, eq=False)
class DecayParams:
    """Per-neuron synaptic (alpha) and membrane (beta) decay factors."""

    alpha: np.ndarray
    beta: np.ndarray
    dt_ms: float = 14.0

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).reshape(-1)
        b = np.array(self.beta, dtype=np.float64).reshape(-1)
        if a.shape != b.shape:
            raise StructuralError(f"alpha {a.shape} and beta {b.shape} differ")
        if np.any((a < 0) | (a >= 1)) or not np.all(np.isfinite(a)):
            raise DomainError("alpha must lie in [0, 1)")
        if np.any((b <= 0) | (b > 1)) or not np.all(np.isfinite(b)):
            raise DomainError("beta must lie in (0, 1]")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @classmethod
    def from_tau(cls, n: int, tau_mem_ms: float, tau_syn_ms: float, dt_ms: float = 14.0) -> "DecayParams":
        return cls(
            np.full(n, decay_from_tau(tau_syn_ms, dt_ms)),
            np.full(n, decay_from_tau(tau_mem_ms, dt_ms)),
            dt_ms,
        )

    @property
    def size(self) -> int:
        return self.alpha.size


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Neuron kind plus decays and threshold for one layer.

    ``alpha`` and ``beta`` are the effective values after the kind's pins.
    """

    kind: NeuronKind
    decay: DecayParams
    theta: float = THETA

    def __post_init__(self):
        object.__setattr__(self, "kind", NeuronKind.parse(self.kind))

    @classmethod
    def homogeneous(
        cls, kind, n: int, tau_mem_ms: float = math.inf, tau_syn_ms: float = 0.0, dt_ms: float = 14.0
    ) -> "ModelSpec":
        return cls(NeuronKind.parse(kind), DecayParams.from_tau(n, tau_mem_ms, tau_syn_ms, dt_ms))

    @property
    def size(self) -> int:
        return self.decay.size

    @property
    def alpha(self) -> np.ndarray:
        if self.kind is NeuronKind.CUBA_LIF:
            return self.decay.alpha
        return np.zeros_like(self.decay.alpha)

    @property
    def beta(self) -> np.ndarray:
        if self.kind is NeuronKind.IF:
            return np.ones_like(self.decay.beta)
        return self.decay.beta


@dataclass(frozen=True, eq=False)
class LayerState:
    """Synaptic current, membrane potential and last spikes (hard, used for reset)."""

    I: np.ndarray
    U: np.ndarray
    S: np.ndarray

    @classmethod
    def zeros(cls, n: int, batch: Optional[int] = None) -> "LayerState":
        shape = (n,) if batch is None else (batch, n)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def fast_sigmoid(x, steepness: float):
    """x / (1 + k|x|); its derivative is the surrogate gradient."""
    return x / (1.0 + steepness * np.abs(x))


def step_layer(
    kind,
    state: LayerState,
    ff_spikes: np.ndarray,
    rec_spikes: Optional[np.ndarray],
    W: np.ndarray,
    V: Optional[np.ndarray],
    decay: DecayParams,
    theta: float = THETA,
    relax_steepness: Optional[float] = None,
) -> tuple[LayerState, np.ndarray]:
    """Advance one layer by a single step.

    ``ff_spikes`` may carry a leading batch axis. With ``relax_steepness`` set the
    returned spikes are ``fast_sigmoid(U - theta)`` instead of the Heaviside, while
    the reset still uses the hard spike stored in the new state.
    """
    model = decay if isinstance(decay, ModelSpec) else ModelSpec(kind, decay, theta)
    n = W.shape[0]
    if model.size != n or state.U.shape[-1] != n:
        raise StructuralError(f"layer has {n} neurons, decay has {model.size}, state has {state.U.shape[-1]}")
    if ff_spikes.shape[-1] != W.shape[1]:
        raise StructuralError(f"W expects {W.shape[1]} inputs, got {ff_spikes.shape[-1]}")
    if (V is None) != (rec_spikes is None):
        raise StructuralError("rec_spikes and V must be given together")

    current = ff_spikes @ W.T
    if V is not None:
        if V.shape != (n, n) or rec_spikes.shape[-1] != n:
            raise StructuralError(f"V must be {n}x{n}")
        current = current + rec_spikes @ V.T
    I = model.alpha * state.I + current
    U = (model.beta * state.U + I) * (1.0 - state.S)
    S = (U >= model.theta).astype(np.float64)
    out = S if relax_steepness is None else fast_sigmoid(U - model.theta, relax_steepness)
    return LayerState(I, U, S), out


@dataclass(frozen=True)
class NeuronTrace:
    I: np.ndarray
    U: np.ndarray
    S: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "I", "U", "S"])
        for t, (i, u, s) in enumerate(zip(self.I, self.U, self.S)):
            w.writerow([t, repr(float(i)), repr(float(u)), int(s)])
        return buf.getvalue()


def trace_single_neuron(kind, spikes, weight: float, decay: DecayParams, steps: Optional[int] = None) -> NeuronTrace:
    """Drive one neuron from one input channel and record I, U, S at every step."""
    spikes = np.asarray(spikes, dtype=np.float64).reshape(-1)
    steps = spikes.size if steps is None else steps
    x = np.zeros(steps)
    x[: min(steps, spikes.size)] = spikes[:steps]
    W = np.array([[float(weight)]])
    state = LayerState.zeros(1)
    I, U, S = np.zeros(steps), np.zeros(steps), np.zeros(steps)
    for t in range(steps):
        state, _ = step_layer(kind, state, x[t : t + 1], None, W, None, decay)
        I[t], U[t], S[t] = state.I[0], state.U[0], state.S[0]
    return NeuronTrace(I, U, S)
