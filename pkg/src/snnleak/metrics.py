"""Accuracy, hidden-layer sparsity, synaptic-operation counts and weight statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, StructuralError
from .network import ForwardRecord, WeightSet
from .neurons import NeuronKind

# Per-neuron, per-step cost of each kind: (multiplications, constant additions, comparisons);
# every kind also adds one term per arriving input spike.
NEURON_COST = {
    NeuronKind.IF: (0, 0, 1),
    NeuronKind.LIF: (1, 0, 1),
    NeuronKind.CUBA_LIF: (2, 1, 1),
}


@dataclass
class AccuracyReport:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist()}


def accuracy(predictions, labels, class_count: int | None = None) -> AccuracyReport:
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != y.shape:
        raise StructuralError(f"{p.size} predictions for {y.size} labels")
    k = class_count if class_count is not None else int(max(p.max(initial=-1), y.max(initial=-1)) + 1)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (y, p), 1)
    acc = float(np.mean(p == y)) if y.size else float("nan")
    return AccuracyReport(acc, conf)


@dataclass
class SparsityReport:
    total_spikes: int
    samples: int
    neurons: int
    steps: int

    @property
    def spikes_per_sample(self) -> float:
        return self.total_spikes / self.samples if self.samples else 0.0

    @property
    def spikes_per_neuron_step(self) -> float:
        denom = self.samples * self.neurons * self.steps
        return self.total_spikes / denom if denom else 0.0

    def merge(self, other: "SparsityReport") -> "SparsityReport":
        if (self.neurons, self.steps) != (other.neurons, other.steps):
            raise StructuralError("cannot merge sparsity reports of different shapes")
        return SparsityReport(self.total_spikes + other.total_spikes, self.samples + other.samples, self.neurons, self.steps)

    def to_dict(self) -> dict:
        return asdict(self) | {
            "spikes_per_sample": self.spikes_per_sample,
            "spikes_per_neuron_step": self.spikes_per_neuron_step,
        }


def sparsity(record: ForwardRecord) -> SparsityReport:
    B, T, N = record.hidden_U.shape
    return SparsityReport(record.hidden_spike_count(), B, N, T)


def sparsity_delta(fsnn: SparsityReport | float, rsnn: SparsityReport | float) -> float:
    """Percentage change in hidden spikes from adding recurrence."""
    f = fsnn.total_spikes if isinstance(fsnn, SparsityReport) else fsnn
    r = rsnn.total_spikes if isinstance(rsnn, SparsityReport) else rsnn
    if f == 0:
        raise DomainError("feedforward spike total is zero")
    return (r - f) / f * 100.0


@dataclass
class LayerOps:
    multiplications: float = 0.0
    additions: float = 0.0
    comparisons: float = 0.0

    def __add__(self, other: "LayerOps") -> "LayerOps":
        return LayerOps(
            self.multiplications + other.multiplications,
            self.additions + other.additions,
            self.comparisons + other.comparisons,
        )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.multiplications, self.additions, self.comparisons)


@dataclass
class SynOpReport:
    """Operation totals per layer over ``samples`` samples of ``steps`` steps."""

    kind: str
    samples: int
    steps: int
    layers: dict[str, LayerOps] = field(default_factory=dict)

    def per_sample(self) -> dict[str, LayerOps]:
        n = max(self.samples, 1)
        return {k: LayerOps(*(v / n for v in ops.as_tuple())) for k, ops in self.layers.items()}

    def per_step(self) -> dict[str, LayerOps]:
        n = max(self.samples * self.steps, 1)
        return {k: LayerOps(*(v / n for v in ops.as_tuple())) for k, ops in self.layers.items()}

    def merge(self, other: "SynOpReport") -> "SynOpReport":
        if self.kind != other.kind or self.steps != other.steps:
            raise StructuralError("cannot merge synop reports of different runs")
        layers = {k: self.layers.get(k, LayerOps()) + other.layers.get(k, LayerOps()) for k in self.layers | other.layers}
        return SynOpReport(self.kind, self.samples + other.samples, self.steps, layers)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "samples": self.samples,
            "steps": self.steps,
            "totals": {k: asdict(v) for k, v in self.layers.items()},
            "per_sample": {k: asdict(v) for k, v in self.per_sample().items()},
            "per_step": {k: asdict(v) for k, v in self.per_step().items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "scope", "multiplications", "additions", "comparisons"])
        for scope, table in (("total", self.layers), ("per_sample", self.per_sample()), ("per_step", self.per_step())):
            for name, ops in table.items():
                w.writerow([name, scope, *(repr(float(v)) for v in ops.as_tuple())])
        return buf.getvalue()


def count_synops(kind, n_inputs: int, p_active: float, neurons: int = 1, steps: int = 1) -> LayerOps:
    """Closed-form cost for ``neurons`` neurons over ``steps`` steps.

    Each neuron per step performs the kind's fixed multiplications and
    comparisons plus ``n_inputs * p_active`` input additions.
    """
    if not 0.0 <= p_active <= 1.0:
        raise DomainError(f"active input fraction must be in [0, 1], got {p_active}")
    mult, const_add, cmp = NEURON_COST[NeuronKind.parse(kind)]
    scale = neurons * steps
    return LayerOps(mult * scale, (n_inputs * p_active + const_add) * scale, cmp * scale)


def count_synops_record(record: ForwardRecord, kind, recurrent: bool) -> SynOpReport:
    """Operation counts measured from actual spikes.

    Hidden neurons see the input channels (plus their own layer when
    recurrent); readout neurons see the hidden layer and never compare
    against a threshold.
    """
    kind = NeuronKind.parse(kind)
    x = record.inputs
    s = record.hard_spikes()
    B, T, C = x.shape
    n_h = s.shape[-1]
    n_out = record.readout_U.shape[-1]
    mult, const_add, cmp = NEURON_COST[kind]

    active_h = x.sum(axis=2)
    if recurrent:
        active_h = active_h + np.concatenate([np.zeros((B, 1)), s[:, :-1].sum(axis=2)], axis=1)
    active_o = s.sum(axis=2)
    bt = B * T
    hidden = LayerOps(mult * n_h * bt, float(active_h.sum()) * n_h + const_add * n_h * bt, cmp * n_h * bt)
    readout = LayerOps(mult * n_out * bt, float(active_o.sum()) * n_out + const_add * n_out * bt, 0.0)
    return SynOpReport(kind.value, B, T, {"hidden": hidden, "readout": readout})


@dataclass
class MatrixStats:
    mean: float
    std: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "std_kind": "population", "bins": int(self.counts.size)}

    def histogram_csv(self) -> str:
        lines = ["bin_left,count"] + [f"{repr(float(e))},{int(c)}" for e, c in zip(self.bin_edges[:-1], self.counts)]
        return "\n".join(lines) + "\n"


HIST_BINS = 64


def matrix_stats(m: np.ndarray, bins: int = HIST_BINS) -> MatrixStats:
    v = np.asarray(m, dtype=np.float64).reshape(-1)
    counts, edges = np.histogram(v, bins=bins)
    return MatrixStats(float(v.mean()), float(v.std()), edges, counts)


def weight_stats(weights: WeightSet) -> dict[str, MatrixStats]:
    """Mean, population std and a 64-bin histogram per weight matrix."""
    return {name: matrix_stats(m) for name, m in weights.as_dict().items()}


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
