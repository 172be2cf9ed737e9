"""JSON weight checkpoints.

Floats are written with ``repr`` so every float64 survives a round trip
bit-for-bit. Matrices are stored row-major with an explicit shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MalformedInputError
from .network import NetworkModel, Topology, WeightSet
from .neurons import DecayParams, NeuronKind

FORMAT = "snnleak-checkpoint"
VERSION = 1


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


@dataclass
class Checkpoint:
    topology: Topology
    weights: WeightSet
    model: NetworkModel
    steps: int
    surrogate_steepness: float = 100.0
    seed_lineage: dict = field(default_factory=dict)
    hetero_raw: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "topology": {
                "n_in": self.topology.n_in,
                "n_hidden": self.topology.n_hidden,
                "n_out": self.topology.n_out,
                "recurrent": self.topology.recurrent,
            },
            "kind": self.model.kind.value,
            "dt_ms": self.model.dt_ms,
            "steps": self.steps,
            "theta": self.model.hidden.theta,
            "surrogate_steepness": self.surrogate_steepness,
            "decay": {
                layer: {"alpha": _pack(spec.decay.alpha), "beta": _pack(spec.decay.beta)}
                for layer, spec in (("hidden", self.model.hidden), ("readout", self.model.readout))
            },
            "weights": {k: _pack(v) for k, v in self.weights.as_dict().items()},
            "hetero_raw": None if self.hetero_raw is None else {k: _pack(v) for k, v in self.hetero_raw.items()},
            "seed_lineage": self.seed_lineage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise MalformedInputError("not a checkpoint file")
        if d.get("version") != VERSION:
            raise MalformedInputError(f"unsupported checkpoint version {d.get('version')}")
        topo = Topology(**d["topology"])
        w = d["weights"]
        weights = WeightSet(_unpack(w["W1"]), _unpack(w["W2"]), _unpack(w["V"]) if "V" in w else None)
        weights.validate(topo)
        dec = {
            layer: DecayParams(_unpack(v["alpha"]), _unpack(v["beta"]), d["dt_ms"]) for layer, v in d["decay"].items()
        }
        model = NetworkModel.from_decays(NeuronKind.parse(d["kind"]), dec["hidden"], dec["readout"])
        hetero = d.get("hetero_raw")
        return cls(
            topo,
            weights,
            model,
            int(d["steps"]),
            float(d["surrogate_steepness"]),
            d.get("seed_lineage", {}),
            None if hetero is None else {k: _unpack(v) for k, v in hetero.items()},
        )

    def save(self, path: str | Path) -> None:
        text = json.dumps(self.to_dict(), allow_nan=False)
        Path(path).write_text(text + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise MalformedInputError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)
