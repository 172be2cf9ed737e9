"""Spiking-network training and profiling engine for IF, LIF and CUBA-LIF neurons."""

from .events import DatasetManifest, EventStream, SpikeRaster, bin_events, load_events_file, save_events_file
from .metrics import accuracy, count_synops, count_synops_record, sparsity, sparsity_delta, weight_stats
from .network import ForwardRecord, NetworkModel, Topology, WeightSet, forward, init_weights, predict
from .neurons import DecayParams, LayerState, ModelSpec, NeuronKind, decay_from_tau, step_layer, trace_single_neuron
from .synthetic import SyntheticTaskSpec, generate_synthetic_dataset
from .training import (
    AdamaxState,
    HeterogeneousParams,
    SurrogateConfig,
    TrainConfig,
    adamax_step,
    backward_bptt,
    grid_sweep,
    loss_max_over_time,
    surrogate_derivative,
    train,
)

__version__ = "0.1.0"
