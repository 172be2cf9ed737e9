"""Command-line experiment runner.

Verbs: train, eval, sweep, profile, trace, convert. Every verb writes into a
fresh timestamped run directory under ``--out`` and ends with one
``status=...`` line on stdout. Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import Checkpoint
from .config import ExperimentConfig, load_config
from .errors import ConfigError, MalformedInputError, NumericError, SnnError, StructuralError
from .events import Dataset, EventStream, bin_events, load_events_file, read_manifest
from .metrics import accuracy, count_synops_record, dump_json, sparsity, weight_stats
from .network import forward, predict
from .neurons import DecayParams, NeuronKind, decay_from_tau, trace_single_neuron
from .synthetic import generate_synthetic_dataset
from .training import EpochLog, grid_sweep, iterate_batches, sweep_table_csv, train

log = logging.getLogger("snnleak")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- helpers -------------------------------------------------------------------


def make_run_dir(base: str | Path, verb: str) -> Path:
    base = Path(base)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for n in range(1000):
        d = base / (f"{verb}-{stamp}" if n == 0 else f"{verb}-{stamp}-{n}")
        try:
            d.mkdir(parents=True)
            return d
        except FileExistsError:
            continue
    raise OSError(f"could not create a run directory under {base}")


def load_data(cfg: ExperimentConfig) -> tuple[Optional[Dataset], Optional[Dataset]]:
    ds = cfg.dataset
    if ds.source == "synthetic":
        return generate_synthetic_dataset(ds.synthetic.spec())
    train_set = test_set = None
    if ds.train_manifest:
        train_set = Dataset.from_manifest(read_manifest(ds.train_manifest, "train", ds.class_count))
    if ds.test_manifest:
        test_set = Dataset.from_manifest(read_manifest(ds.test_manifest, "test", ds.class_count))
    return train_set, test_set


def resolve_topology(cfg: ExperimentConfig, data: Dataset) -> None:
    topo = cfg.topology
    for name, value in (("n_in", data.channel_count), ("n_out", data.class_count)):
        current = getattr(topo, name)
        if current is None:
            setattr(topo, name, value)
        elif current != value:
            raise ConfigError(f"topology.{name}", f"is {current} but the dataset has {value}")


def epoch_log_csv(entries: list[EpochLog], record_wall_time: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "test_accuracy", "hidden_spikes_per_sample", "wall_time_s"])
    for e in entries:
        wall = repr(e.wall_time_s) if record_wall_time and e.wall_time_s is not None else ""
        w.writerow([e.epoch, repr(e.train_loss), repr(e.test_accuracy), repr(e.hidden_spikes_per_sample), wall])
    return buf.getvalue()


def write_effective_config(cfg: ExperimentConfig, run_dir: Path) -> None:
    (run_dir / "config.yaml").write_text(cfg.dump())


def _status(**fields) -> str:
    parts = []
    for k, v in fields.items():
        v = str(v)
        if any(c.isspace() for c in v) or '"' in v:
            v = json.dumps(v)
        parts.append(f"{k}={v}")
    return " ".join(parts)


def evaluate_dataset(ckpt: Checkpoint, data: Dataset, batch_size: int, debug_traces: Optional[Path] = None) -> dict:
    """Accuracy, sparsity and measured synaptic operations over a split."""
    if data.channel_count != ckpt.topology.n_in:
        raise StructuralError(f"dataset has {data.channel_count} channels, checkpoint expects {ckpt.topology.n_in}")
    x = data.rasters(ckpt.model.dt_ms, ckpt.steps)
    preds = []
    spars = synops = None
    for i, idx in enumerate(iterate_batches(len(data), batch_size)):
        rec = forward(x[idx], ckpt.weights, ckpt.model)
        preds.append(predict(rec))
        s, o = sparsity(rec), count_synops_record(rec, ckpt.model.kind, ckpt.topology.recurrent)
        spars = s if spars is None else spars.merge(s)
        synops = o if synops is None else synops.merge(o)
        if debug_traces is not None and i == 0:
            np.savez(
                debug_traces,
                hidden_I=rec.hidden_I,
                hidden_U=rec.hidden_U,
                hidden_spikes=rec.hidden_spikes,
                readout_U=rec.readout_U,
            )
    preds = np.concatenate(preds)
    acc = accuracy(preds, data.labels, max(data.class_count, ckpt.topology.n_out))
    return {"accuracy": acc, "sparsity": spars, "synops": synops, "predictions": preds}


# -- verbs -----------------------------------------------------------------------


def cmd_train(args, cfg: ExperimentConfig, run_dir: Path) -> dict:
    train_set, test_set = load_data(cfg)
    if train_set is None:
        raise ConfigError("dataset.train_manifest", "training needs a train split")
    resolve_topology(cfg, train_set)
    write_effective_config(cfg, run_dir)
    topo = cfg.topology.build()
    model = cfg.model.build(topo, cfg.dataset.dt_ms)
    x = train_set.rasters(cfg.dataset.dt_ms, cfg.dataset.steps)
    test = None
    if test_set is not None:
        test = (test_set.rasters(cfg.dataset.dt_ms, cfg.dataset.steps), test_set.labels)
    timing = ["seed,epoch,wall_time_s"]
    for seed in cfg.seeds:
        tcfg = cfg.training.build(seed, cfg.model.heterogeneous)
        res = train(x, train_set.labels, topo, model, tcfg, test=test)
        seed_dir = run_dir / f"seed{seed}"
        seed_dir.mkdir()
        (seed_dir / "epoch_log.csv").write_text(epoch_log_csv(res.log, tcfg.record_wall_time))
        timing += [f"{seed},{e.epoch},{e.wall_time_s!r}" for e in res.log]
        Checkpoint(
            topo,
            res.weights,
            res.model,
            cfg.dataset.steps,
            tcfg.surrogate_steepness,
            {"init_seed": seed, "shuffle_seed": [seed, 1], "data_seed": getattr(cfg.dataset.synthetic, "seed", None)},
            None if res.hetero is None else res.hetero.raw,
        ).save(seed_dir / "checkpoint.json")
        if res.log:
            print(f"seed {seed}: final test accuracy {res.log[-1].test_accuracy:.4f}")
    (run_dir / "timing.csv").write_text("\n".join(timing) + "\n")
    return {"seeds": len(cfg.seeds)}


def _eval_data(args, ckpt: Checkpoint) -> Dataset:
    if args.manifest:
        return Dataset.from_manifest(read_manifest(args.manifest, args.split, ckpt.topology.n_out))
    cfg = load_config(args.config, args.overrides)
    train_set, test_set = load_data(cfg)
    data = test_set if args.split == "test" else train_set
    if data is None:
        raise ConfigError("dataset", f"no {args.split} split configured")
    return data


def _report_dict(result: dict) -> dict:
    return {
        "accuracy": result["accuracy"].to_dict(),
        "sparsity": result["sparsity"].to_dict(),
        "synops": result["synops"].to_dict(),
    }


def cmd_eval(args, cfg, run_dir: Path) -> dict:
    ckpt = Checkpoint.load(args.checkpoint)
    data = _eval_data(args, ckpt)
    debug = run_dir / "debug_traces.npz" if args.debug_traces else None
    result = evaluate_dataset(ckpt, data, args.batch_size, debug)
    dump_json(_report_dict(result), run_dir / "eval.json")
    print(f"accuracy {result['accuracy'].accuracy:.4f}  spikes/sample {result['sparsity'].spikes_per_sample:.2f}")
    return {"accuracy": f"{result['accuracy'].accuracy:.6f}"}


def cmd_profile(args, cfg, run_dir: Path) -> dict:
    ckpt = Checkpoint.load(args.checkpoint)
    data = _eval_data(args, ckpt)
    debug = run_dir / "debug_traces.npz" if args.debug_traces else None
    result = evaluate_dataset(ckpt, data, args.batch_size, debug)
    dump_json(result["sparsity"].to_dict(), run_dir / "sparsity.json")
    dump_json(result["synops"].to_dict(), run_dir / "synops.json")
    (run_dir / "synops.csv").write_text(result["synops"].to_csv())
    stats = weight_stats(ckpt.weights)
    dump_json({k: v.to_dict() for k, v in stats.items()}, run_dir / "weights.json")
    rows = ["matrix,mean,std"] + [f"{k},{v.mean!r},{v.std!r}" for k, v in stats.items()]
    (run_dir / "weights.csv").write_text("\n".join(rows) + "\n")
    for k, v in stats.items():
        (run_dir / f"hist_{k}.csv").write_text(v.histogram_csv())
    print(f"spikes/sample {result['sparsity'].spikes_per_sample:.2f}")
    for k, v in stats.items():
        print(f"{k}: mean {v.mean:.4g} std {v.std:.4g}")
    return {"spikes_per_sample": f"{result['sparsity'].spikes_per_sample:.6f}"}


def cmd_sweep(args, cfg: ExperimentConfig, run_dir: Path) -> dict:
    train_set, test_set = load_data(cfg)
    if train_set is None or test_set is None:
        raise ConfigError("dataset", "sweeps need both train and test splits")
    resolve_topology(cfg, train_set)
    write_effective_config(cfg, run_dir)
    topo = cfg.topology.build()
    dt, steps = cfg.dataset.dt_ms, cfg.dataset.steps
    data = (
        train_set.rasters(dt, steps),
        train_set.labels,
        test_set.rasters(dt, steps),
        test_set.labels,
    )
    tcfg = cfg.training.build(cfg.seeds[0], False)
    cells = grid_sweep(
        cfg.sweep.tau_mem_ms, cfg.sweep.tau_syn_ms, data, topo, tcfg, cfg.seeds, dt, cfg.sweep.kind, cfg.jobs
    )
    (run_dir / "sweep_table.csv").write_text(sweep_table_csv(cells))
    rows = ["tau_mem_ms,tau_syn_ms,alpha,beta,kind,seed,test_accuracy,hidden_spikes_per_sample"]
    for c in cells:
        a, b = decay_from_tau(c.tau_syn_ms, dt), decay_from_tau(c.tau_mem_ms, dt)
        for seed, acc, spk in zip(c.seeds, c.accuracies, c.spikes_per_sample):
            rows.append(f"{c.tau_mem_ms!r},{c.tau_syn_ms!r},{a!r},{b!r},{c.kind},{seed},{acc!r},{spk!r}")
    (run_dir / "sweep_cells.csv").write_text("\n".join(rows) + "\n")
    print(sweep_table_csv(cells), end="")
    return {"cells": len(cells)}


def cmd_trace(args, cfg, run_dir: Path) -> dict:
    if args.config:
        mb = load_config(args.config, args.overrides).model
        kind, tau_mem, tau_syn = mb.kind, mb.tau_mem_ms, mb.tau_syn_ms
    else:
        kind, tau_mem, tau_syn = args.kind, args.tau_mem, args.tau_syn
    stream = load_events_file(args.stimulus)
    if not 0 <= args.channel < stream.channel_count:
        raise MalformedInputError(f"channel {args.channel} not in stimulus ({stream.channel_count} channels)")
    raster = bin_events(stream, args.dt, args.steps)
    decay = DecayParams([decay_from_tau(tau_syn, args.dt)], [decay_from_tau(tau_mem, args.dt)], args.dt)
    trace = trace_single_neuron(kind, raster.bits[:, args.channel], args.weight, decay, args.steps)
    (run_dir / "trace.csv").write_text(trace.to_csv())
    return {"steps": args.steps, "spikes": int(trace.S.sum())}


# -- conversion adapters ---------------------------------------------------------

Adapter = Callable[[Path, Path, argparse.Namespace], list[Path]]
ADAPTERS: dict[str, Adapter] = {}


def register_adapter(name: str):
    """Register ``fn(source, out_dir, args) -> [manifest paths]`` under ``name``."""

    def deco(fn: Adapter) -> Adapter:
        ADAPTERS[name] = fn
        return fn

    return deco


@register_adapter("csv")
def _convert_csv(source: Path, out: Path, args) -> list[Path]:
    """Flat CSV with header ``split,sample,label,time_us,channel``; needs ``--channels``."""
    if not args.channels:
        raise ConfigError("--channels", "the csv adapter needs the channel count")
    samples: dict[tuple[str, str], list] = defaultdict(list)
    labels: dict[tuple[str, str], int] = {}
    with open(source, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"split", "sample", "label", "time_us", "channel"}
        if not need <= set(reader.fieldnames or ()):
            raise MalformedInputError(f"{source}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, 2):
            key = (row["split"], row["sample"])
            try:
                label, t, c = int(row["label"]), int(row["time_us"]), int(row["channel"])
            except ValueError:
                raise MalformedInputError(f"{source}:{lineno}: non-integer field") from None
            if labels.setdefault(key, label) != label:
                raise MalformedInputError(f"{source}:{lineno}: sample {key[1]} has two labels")
            samples[key].append((t, c))
    manifests = []
    for split in sorted({k[0] for k in samples}):
        if split not in ("train", "test"):
            raise MalformedInputError(f"{source}: unknown split {split!r}")
        keys = sorted((k for k in samples if k[0] == split), key=lambda k: k[1])
        streams = [EventStream.from_events(args.channels, sorted(samples[k])) for k in keys]
        lbls = [labels[k] for k in keys]
        ds = Dataset(streams, lbls, max(lbls) + 1, args.channels, split)
        manifests.append(ds.export(out))
    return manifests


@register_adapter("synthetic")
def _convert_synthetic(source: Path, out: Path, args) -> list[Path]:
    """Source is an experiment config; its synthetic dataset block is exported."""
    cfg = load_config(source)
    if cfg.dataset.synthetic is None:
        raise ConfigError("dataset.synthetic", "config has no synthetic dataset")
    return [ds.export(out) for ds in generate_synthetic_dataset(cfg.dataset.synthetic.spec())]


def cmd_convert(args, cfg, run_dir: Path) -> dict:
    if args.adapter not in ADAPTERS:
        raise ConfigError("adapter", f"unknown adapter {args.adapter!r}; available: {sorted(ADAPTERS)}")
    source = Path(args.source)
    if not source.exists():
        raise FileNotFoundError(source)
    manifests = ADAPTERS[args.adapter](source, run_dir, args)
    for m in manifests:
        print(m)
    return {"manifests": len(manifests)}


# -- entry point -----------------------------------------------------------------


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering values given before the verb
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON experiment config", **kw)
    common.add_argument("--seed", type=int, help="run a single seed", **kw)
    common.add_argument("--seeds", type=_parse_seeds, help="comma-separated seed list", **kw)
    common.add_argument("--out", help="base output directory (default: config output_dir)", **kw)
    common.add_argument("--jobs", type=int, help="parallel sweep jobs", **kw)
    common.add_argument("--debug-traces", action="store_true", help="dump hidden I/U traces", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="snnleak", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("train", parents=[common], help="train one model per seed")
    sub.add_parser("sweep", parents=[common], help="grid over tau_mem x tau_syn")
    for name in ("eval", "profile"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("checkpoint")
        sp.add_argument("--manifest", help="evaluate this manifest instead of the config dataset")
        sp.add_argument("--split", choices=("train", "test"), default="test")
        sp.add_argument("--batch-size", type=int, default=256)
    tr = sub.add_parser("trace", parents=[common], help="single-neuron I/U/S trajectory")
    tr.add_argument("stimulus", help="canonical event file")
    tr.add_argument("--kind", default="CUBA_LIF", type=lambda s: NeuronKind.parse(s).value)
    tr.add_argument("--tau-mem", type=float, default=140.0)
    tr.add_argument("--tau-syn", type=float, default=28.0)
    tr.add_argument("--weight", type=float, default=0.5)
    tr.add_argument("--dt", type=float, default=14.0)
    tr.add_argument("--steps", type=int, default=50)
    tr.add_argument("--channel", type=int, default=0)
    cv = sub.add_parser("convert", parents=[common], help="write canonical event files and manifests")
    cv.add_argument("adapter")
    cv.add_argument("source")
    cv.add_argument("--channels", type=int)
    return p


VERBS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "profile": cmd_profile,
    "trace": cmd_trace,
    "convert": cmd_convert,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    overrides: dict = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    elif args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    args.overrides = overrides
    try:
        cfg = None
        if args.verb in ("train", "sweep"):
            cfg = load_config(args.config, overrides)
        base = args.out or (cfg.output_dir if cfg is not None else "runs")
        run_dir = make_run_dir(base, args.verb)
        extra = VERBS[args.verb](args, cfg, run_dir)
    except ConfigError as exc:
        print(_status(status="config_error", verb=args.verb, field=exc.path, message=str(exc)))
        return EXIT_CONFIG
    except NumericError as exc:
        print(_status(status="numeric_error", verb=args.verb, message=str(exc)))
        return EXIT_NUMERIC
    except (SnnError, OSError) as exc:
        print(_status(status="data_error", verb=args.verb, message=str(exc)))
        return EXIT_DATA
    print(_status(status="ok", verb=args.verb, run_dir=run_dir, **extra))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
