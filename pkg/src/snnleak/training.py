"""Surrogate-gradient BPTT, max-over-time cross entropy and Adamax."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError, StructuralError
from .network import ForwardRecord, NetworkModel, Topology, WeightSet, as_batch, forward, init_weights, predict
from .neurons import DecayParams, NeuronKind, decay_from_tau

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurrogateConfig:
    steepness: float = 100.0

    def __post_init__(self):
        if not self.steepness > 0:
            raise DomainError("surrogate steepness must be positive")


def surrogate_derivative(u, cfg: SurrogateConfig = SurrogateConfig(), theta: float = 1.0):
    """Fast-sigmoid derivative 1 / (1 + k|u - theta|)^2, peaking at threshold."""
    return 1.0 / (1.0 + cfg.steepness * np.abs(np.asarray(u, dtype=np.float64) - theta)) ** 2


# -- loss ---------------------------------------------------------------------


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_max_over_time(records, labels) -> tuple[float, np.ndarray]:
    """Cross entropy over each readout neuron's peak membrane value.

    ``records`` is a ForwardRecord or a readout trace of shape (B, T, K).
    Returns the batch-mean loss and dL/dU for the trace; the gradient is
    non-zero only at each neuron's argmax time step.
    """
    u = records.readout_U if isinstance(records, ForwardRecord) else np.asarray(records, dtype=np.float64)
    if u.ndim == 2:
        u = u[None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, T, K = u.shape
    if B == 0 or labels.size != B:
        raise StructuralError(f"{labels.size} labels for a batch of {B}")
    t_peak = u.argmax(axis=1)
    peaks = np.take_along_axis(u, t_peak[:, None, :], axis=1)[:, 0]
    logp = _log_softmax(peaks)
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    g /= B
    grad = np.zeros_like(u)
    bb, kk = np.meshgrid(rows, np.arange(K), indexing="ij")
    grad[bb, t_peak, kk] = g
    return float(loss), grad


# -- heterogeneous time constants --------------------------------------------

_ONE_BELOW = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


def logistic(x):
    p = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))
    return np.clip(p, _TINY, _ONE_BELOW)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class HeterogeneousParams:
    """Raw per-neuron parameters; decays are their logistic images.

    Only the decays the neuron kind leaves free are present: none for IF,
    ``b_*`` for LIF, ``a_*`` and ``b_*`` for CUBA-LIF.
    """

    kind: NeuronKind
    dt_ms: float
    raw: dict[str, np.ndarray]
    fixed: NetworkModel

    @classmethod
    def from_model(cls, model: NetworkModel) -> "HeterogeneousParams":
        kind = model.kind
        raw = {}
        for layer, spec in (("hidden", model.hidden), ("readout", model.readout)):
            if kind.trains_alpha:
                a = spec.alpha
                if np.any(a <= 0):
                    raise DomainError("heterogeneous CUBA-LIF needs tau_syn > 0")
                raw[f"a_{layer}"] = logit(a)
            if kind.trains_beta:
                b = spec.beta
                if np.any(b >= 1):
                    raise DomainError("heterogeneous training needs a finite tau_mem")
                raw[f"b_{layer}"] = logit(b)
        return cls(kind, model.dt_ms, raw, model)

    def model(self) -> NetworkModel:
        decays = []
        for layer, spec in (("hidden", self.fixed.hidden), ("readout", self.fixed.readout)):
            a = logistic(self.raw[f"a_{layer}"]) if f"a_{layer}" in self.raw else spec.decay.alpha
            b = logistic(self.raw[f"b_{layer}"]) if f"b_{layer}" in self.raw else spec.decay.beta
            decays.append(DecayParams(a, b, self.dt_ms))
        return NetworkModel.from_decays(self.kind, *decays)


# -- backward pass ------------------------------------------------------------


def backward_bptt(
    record: ForwardRecord,
    raster,
    weights: WeightSet,
    model: NetworkModel,
    readout_grad: np.ndarray,
    cfg: SurrogateConfig = SurrogateConfig(),
    hetero: Optional[HeterogeneousParams] = None,
) -> dict[str, np.ndarray]:
    """Reverse-time adjoints of the unrolled dynamics.

    Spike derivatives use the surrogate and the reset factor is treated as a
    constant. Returns gradients keyed like ``weights.as_dict()`` plus the
    heterogeneous raw parameters when ``hetero`` is given.
    """
    x = record.inputs if raster is None else as_batch(raster)
    if x.shape != record.inputs.shape:
        raise StructuralError(f"raster {x.shape} does not match record {record.inputs.shape}")
    B, T, _ = x.shape
    n_h, n_out = weights.W1.shape[0], weights.W2.shape[0]
    if record.hidden_U.shape != (B, T, n_h) or record.readout_U.shape != (B, T, n_out):
        raise StructuralError("record does not match weights")
    if readout_grad.shape != record.readout_U.shape:
        raise StructuralError("readout gradient does not match record")

    a_h, b_h = model.hidden.alpha, model.hidden.beta
    a_o, b_o = model.readout.alpha, model.readout.beta
    theta = model.hidden.theta
    s = record.hidden_spikes
    hard = record.hard_spikes()
    sg = surrogate_derivative(record.hidden_U, cfg, theta)
    V = weights.V

    dIo = np.zeros((B, T, n_out))
    dUo = np.zeros((B, T, n_out))
    dI = np.zeros((B, T, n_h))
    dU = np.zeros((B, T, n_h))
    dUo_next = np.zeros((B, n_out))
    dIo_next = np.zeros((B, n_out))
    dU_next = np.zeros((B, n_h))
    dI_next = np.zeros((B, n_h))
    keep_next = np.ones((B, n_h))
    for t in range(T - 1, -1, -1):
        dUo_next = readout_grad[:, t] + b_o * dUo_next
        dIo_next = dUo_next + a_o * dIo_next
        ds = dIo_next @ weights.W2
        if V is not None:
            ds += dI_next @ V
        dU_t = ds * sg[:, t] + b_h * keep_next * dU_next
        keep = 1.0 - hard[:, t - 1] if t > 0 else np.ones((B, n_h))
        dI_next = keep * dU_t + a_h * dI_next
        dU_next, keep_next = dU_t, keep
        dUo[:, t], dIo[:, t], dU[:, t], dI[:, t] = dUo_next, dIo_next, dU_t, dI_next

    def outer(delta, act):
        return delta.reshape(-1, delta.shape[-1]).T @ act.reshape(-1, act.shape[-1])

    grads = {"W1": outer(dI, x), "W2": outer(dIo, s)}
    if V is not None:
        s_prev = np.concatenate([np.zeros((B, 1, n_h)), s[:, :-1]], axis=1)
        grads["V"] = outer(dI, s_prev)

    if hetero is not None:
        def shift(a):
            return np.concatenate([np.zeros_like(a[:, :1]), a[:, :-1]], axis=1)

        keep_all = 1.0 - shift(hard)
        partials = {
            "a_hidden": (dI * shift(record.hidden_I)).sum(axis=(0, 1)),
            "b_hidden": (dU * keep_all * shift(record.hidden_U)).sum(axis=(0, 1)),
            "a_readout": (dIo * shift(record.readout_I)).sum(axis=(0, 1)),
            "b_readout": (dUo * shift(record.readout_U)).sum(axis=(0, 1)),
        }
        for name, raw in hetero.raw.items():
            p = logistic(raw)
            grads[name] = partials[name] * p * (1.0 - p)
    return grads


# -- optimiser ------------------------------------------------------------------


@dataclass
class AdamaxState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)


def adamax_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamaxState, lr: float
) -> tuple[dict[str, np.ndarray], AdamaxState]:
    """One Adamax update. ``state`` is advanced in place and also returned."""
    state.step += 1
    scale = lr / (1.0 - state.beta1**state.step)
    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise StructuralError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        u = state.u.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        u = np.abs(g) if u is None else np.maximum(state.beta2 * u, np.abs(g))
        state.m[name], state.u[name] = m, u
        new[name] = p - scale * m / (u + state.eps)
    return new, state


# -- training loop --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    heterogeneous: bool = False
    surrogate_steepness: float = 100.0
    adamax_beta1: float = 0.9
    adamax_beta2: float = 0.999
    adamax_eps: float = 1e-8
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise DomainError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    test_accuracy: float
    hidden_spikes_per_sample: float
    wall_time_s: Optional[float] = None


@dataclass
class TrainResult:
    weights: WeightSet
    model: NetworkModel
    log: list[EpochLog]
    hetero: Optional[HeterogeneousParams] = None


def iterate_batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def evaluate(x, y, weights: WeightSet, model: NetworkModel, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and per-sample hidden spike totals."""
    preds, spikes = [], []
    for idx in iterate_batches(len(x), batch_size):
        rec = forward(x[idx], weights, model)
        preds.append(predict(rec))
        spikes.append(rec.hidden_spikes.sum(axis=(1, 2)))
    return np.concatenate(preds), np.concatenate(spikes)


def train(
    train_x: np.ndarray,
    train_y: np.ndarray,
    topology: Topology,
    model: NetworkModel,
    cfg: TrainConfig,
    test: Optional[tuple[np.ndarray, np.ndarray]] = None,
    weights: Optional[WeightSet] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Mini-batch surrogate-gradient training.

    ``train_x`` has shape (N, T, C). When ``cfg.heterogeneous`` is set the free
    decays of ``model`` become per-neuron parameters initialised at their
    configured values.
    """
    train_x = np.asarray(train_x)
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_x.ndim != 3 or train_x.shape[-1] != topology.n_in:
        raise StructuralError(f"data has shape {train_x.shape}, topology expects {topology.n_in} channels")
    if len(train_y) != len(train_x):
        raise StructuralError("train data and labels differ in length")
    if train_y.size and train_y.max() >= topology.n_out:
        raise StructuralError(f"label {train_y.max()} needs more than {topology.n_out} outputs")
    weights = init_weights(topology, cfg.seed) if weights is None else weights.copy()
    weights.validate(topology)
    hetero = HeterogeneousParams.from_model(model) if cfg.heterogeneous and model.kind is not NeuronKind.IF else None
    surrogate = SurrogateConfig(cfg.surrogate_steepness)
    opt = AdamaxState(cfg.adamax_beta1, cfg.adamax_beta2, cfg.adamax_eps)
    rng = np.random.default_rng([cfg.seed, 1])
    eval_x, eval_y = test if test is not None else (train_x, train_y)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, seen = 0.0, 0
        for idx in iterate_batches(len(train_x), cfg.batch_size, rng.permutation(len(train_x))):
            current = hetero.model() if hetero is not None else model
            xb = train_x[idx].astype(np.float64)
            rec = forward(xb, weights, current)
            loss, g = loss_max_over_time(rec, train_y[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grads = backward_bptt(rec, None, weights, current, g, surrogate, hetero)
            params = weights.as_dict() | (hetero.raw if hetero is not None else {})
            params, opt = adamax_step(params, grads, opt, cfg.lr)
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise NumericError(f"non-finite parameters at epoch {epoch}")
            weights = WeightSet(params["W1"], params["W2"], params.get("V"))
            if hetero is not None:
                hetero.raw = {k: params[k] for k in hetero.raw}
            total += loss * len(idx)
            seen += len(idx)
        current = hetero.model() if hetero is not None else model
        preds, spikes = evaluate(eval_x, eval_y, weights, current, cfg.batch_size)
        entry = EpochLog(
            epoch,
            total / max(seen, 1),
            float(np.mean(preds == eval_y)),
            float(spikes.mean()),
            time.perf_counter() - t0,
        )
        log.info("epoch %d loss %.4f acc %.4f", epoch, entry.train_loss, entry.test_accuracy)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    final = hetero.model() if hetero is not None else model
    return TrainResult(weights, final, history, hetero)


# -- time-constant sweeps -------------------------------------------------------


def kind_for_taus(tau_mem_ms: float, tau_syn_ms: float) -> NeuronKind:
    """IF at (inf, 0), LIF for tau_syn = 0, CUBA-LIF otherwise."""
    if tau_syn_ms == 0:
        return NeuronKind.IF if math.isinf(tau_mem_ms) else NeuronKind.LIF
    return NeuronKind.CUBA_LIF


@dataclass
class SweepCell:
    tau_mem_ms: float
    tau_syn_ms: float
    kind: str
    seeds: list[int]
    accuracies: list[float]
    spikes_per_sample: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0


def _sweep_job(args):
    tau_mem, tau_syn, kind, seed, data, topology, cfg, dt_ms = args
    train_x, train_y, test_x, test_y = data
    model = NetworkModel.homogeneous(kind, topology, tau_mem, tau_syn, dt_ms)
    run_cfg = TrainConfig(**(asdict(cfg) | {"seed": seed}))
    res = train(train_x, train_y, topology, model, run_cfg, test=(test_x, test_y))
    preds, spikes = evaluate(test_x, test_y, res.weights, res.model, cfg.batch_size)
    return (tau_mem, tau_syn, seed), float(np.mean(preds == test_y)), float(spikes.mean())


def grid_sweep(
    tau_mem_ms: Sequence[float],
    tau_syn_ms: Sequence[float],
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    topology: Topology,
    cfg: TrainConfig,
    seeds: Iterable[int] = (0, 1, 2),
    dt_ms: float = 14.0,
    kind=None,
    jobs: int = 1,
) -> list[SweepCell]:
    """Train every (tau_mem, tau_syn) pair once per seed.

    ``kind=None`` picks the neuron kind from the pair (see ``kind_for_taus``).
    The same seeds are reused in every cell.
    """
    if not tau_mem_ms or not tau_syn_ms:
        raise DomainError("time-constant lists must be non-empty")
    seeds = list(seeds)
    cells, jobs_args = {}, []
    for tm in tau_mem_ms:
        for ts in tau_syn_ms:
            k = kind_for_taus(tm, ts) if kind is None else NeuronKind.parse(kind)
            cells[(tm, ts)] = SweepCell(tm, ts, k.value, seeds, [], [])
            jobs_args += [(tm, ts, k, seed, data, topology, cfg, dt_ms) for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, jobs_args))
    else:
        results = [_sweep_job(a) for a in jobs_args]
    by_key = {key: (acc, spk) for key, acc, spk in results}
    for (tm, ts), cell in cells.items():
        for seed in seeds:
            acc, spk = by_key[(tm, ts, seed)]
            cell.accuracies.append(acc)
            cell.spikes_per_sample.append(spk)
    return list(cells.values())


def sweep_table_csv(cells: Sequence[SweepCell]) -> str:
    """Rows tau_mem, columns tau_syn, cells 'mean±std' test accuracy in percent."""
    mems = sorted({c.tau_mem_ms for c in cells})
    syns = sorted({c.tau_syn_ms for c in cells})
    grid = {(c.tau_mem_ms, c.tau_syn_ms): c for c in cells}

    def fmt_tau(v):
        return "inf" if math.isinf(v) else f"{v:g}"

    lines = ["tau_mem_ms," + ",".join(f"tau_syn={fmt_tau(s)}" for s in syns)]
    for m in mems:
        row = [fmt_tau(m)]
        for s in syns:
            c = grid.get((m, s))
            row.append("" if c is None else f"{100 * c.mean:.2f}±{100 * c.std:.2f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def decay_label(tau_ms: float, dt_ms: float) -> str:
    return f"{decay_from_tau(tau_ms, dt_ms):.3f}"
