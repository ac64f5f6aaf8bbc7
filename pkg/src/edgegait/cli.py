"""Command-line pipeline: synth, train, eval, export.

One TOML config file drives every stage; a few flags override it. Every
command is a pure function of (config, input files, seed): rerunning with
the same inputs reproduces output files byte for byte.

Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import Dataset, SynthConfig, generate_synthetic, load_keypoints, split_by_subject, write_keypoints
from .errors import CheckpointError, ConfigError, ParseError, ShapeError, TrainingError
from .export import diff_graphs, edge_frequency, export_graph, format_diff, write_frequency_csv
from .graph import DEFAULT_LAYOUT, JointLayout, build_anatomy_graph, load_layout
from .gumbel import TemperatureSchedule
from .models import ModelConfig, config_hash, load_checkpoint, predict, save_checkpoint
from .training import TrainConfig, evaluate, train, write_metrics_csv

# rng stream id for the train/test split, kept distinct from training streams
SPLIT_STREAM = 101


@dataclass
class RunConfig:
    seed: int
    synth: SynthConfig | None
    data_path: str | None
    train: TrainConfig
    model_kwargs: dict
    train_fraction: float
    layout: JointLayout
    resolved: dict  # canonical dict, hashed into checkpoints


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _synth_config(section: dict) -> SynthConfig:
    allowed = {"n_per_class", "frames", "joints", "pair", "lag", "sigma", "channels", "train_fraction"}
    _check_keys(section, allowed, "synth")
    kwargs = dict(section)
    if "pair" in kwargs:
        pair = kwargs["pair"]
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError("synth.pair: must be a two-element array")
        kwargs["pair"] = (int(pair[0]), int(pair[1]))
    try:
        return SynthConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"synth: {exc}")


def _train_config(section: dict, seed: int) -> TrainConfig:
    section = dict(section)
    temperature = section.pop("temperature", {})
    allowed = {
        "learning_rate", "epochs", "batch_size", "sparsity_weight", "optimizer",
        "adam_beta1", "adam_beta2", "adam_eps", "graph_mode", "hard_sampling",
    }
    _check_keys(section, allowed, "train")
    _check_keys(temperature, {"tau0", "tau_min", "decay"}, "train.temperature")
    epochs = int(section.get("epochs", TrainConfig.epochs))
    if temperature:
        if "decay" in temperature:
            schedule = TemperatureSchedule(**temperature)
        else:
            schedule = TemperatureSchedule.for_epochs(epochs, **temperature)
    else:
        schedule = None
    try:
        return TrainConfig(seed=seed, schedule=schedule, **section)
    except ConfigError as exc:
        raise ConfigError(f"train: {exc}")
    except TypeError as exc:
        raise ConfigError(f"train: {exc}")


def parse_run_config(path, seed_override=None) -> RunConfig:
    """Read and validate the TOML config; flags override file values."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}")
    _check_keys(raw, {"seed", "synth", "data", "train", "model", "layout"}, "config")

    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("seed: required (config key 'seed' or --seed flag)")
    seed = int(seed)

    synth_section = raw.get("synth")
    data_section = raw.get("data", {})
    _check_keys(data_section, {"path", "train_fraction"}, "data")
    data_path = data_section.get("path")
    if (synth_section is None) == (data_path is None):
        raise ConfigError("config must provide exactly one data source: [synth] or data.path")
    synth = _synth_config(synth_section) if synth_section is not None else None

    model_section = dict(raw.get("model", {}))
    _check_keys(
        model_section,
        {"embed_dim", "channels", "temporal_kernel", "residual_baseline"},
        "model",
    )
    if "channels" in model_section:
        model_section["channels"] = tuple(int(c) for c in model_section["channels"])

    layout_section = raw.get("layout", {})
    _check_keys(layout_section, {"path"}, "layout")
    layout = load_layout(layout_section["path"]) if "path" in layout_section else DEFAULT_LAYOUT

    train_fraction = data_section.get("train_fraction", synth.train_fraction if synth else 2 / 3)
    resolved = {
        "seed": seed,
        "synth": dataclasses.asdict(synth) if synth else None,
        "data_path": data_path,
        "train": dict(raw.get("train", {})),
        "model": {k: list(v) if isinstance(v, tuple) else v for k, v in model_section.items()},
        "train_fraction": train_fraction,
    }
    return RunConfig(
        seed=seed,
        synth=synth,
        data_path=data_path,
        train=_train_config(raw.get("train", {}), seed),
        model_kwargs=model_section,
        train_fraction=float(train_fraction),
        layout=layout,
        resolved=resolved,
    )


def _load_dataset(config: RunConfig) -> Dataset:
    if config.synth is not None:
        dataset = generate_synthetic(config.synth, seed=config.seed)
    else:
        dataset = load_keypoints(config.data_path)
        if len(dataset) == 0:
            raise ConfigError(f"data file {config.data_path} holds no sequences")
    return dataset


def _split(config: RunConfig, dataset: Dataset) -> Dataset:
    rng = np.random.default_rng([config.seed, SPLIT_STREAM])
    return split_by_subject(dataset, config.train_fraction, rng)


def _model_config(config: RunConfig, dataset: Dataset) -> ModelConfig:
    channels = {s.frames.shape[2] for s in dataset.sequences}
    if len(channels) != 1:
        raise ConfigError(f"sequences mix channel counts {sorted(channels)}")
    return ModelConfig(in_channels=channels.pop(), **config.model_kwargs)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    config = parse_run_config(args.config, args.seed)
    if config.synth is None:
        raise ConfigError("synth: config has no [synth] section")
    dataset = generate_synthetic(config.synth, seed=config.seed)
    out = _out_dir(args) / "keypoints.jsonl"
    write_keypoints(dataset, out)
    labels = [s.label for s in dataset.sequences]
    print(f"wrote {out}: {len(dataset)} sequences ({labels.count(0)} label 0, {labels.count(1)} label 1)")
    return 0


def cmd_train(args) -> int:
    config = parse_run_config(args.config, args.seed)
    dataset = _split(config, _load_dataset(config))
    model_config = _model_config(config, dataset)
    result = train(dataset, config.train, model_config, config.layout)
    out = _out_dir(args)
    metrics_path = out / "metrics.csv"
    checkpoint_path = out / "checkpoint.json"
    write_metrics_csv(result.history, metrics_path)
    save_checkpoint(
        checkpoint_path,
        result.upstream,
        result.downstream,
        model_config,
        config.layout,
        seed=config.seed,
        graph_mode=config.train.graph_mode,
        extra_config=config.resolved,
    )
    best = result.history[result.best_epoch]
    print(f"wrote {metrics_path} and {checkpoint_path}")
    print(f"best epoch {best.epoch}: test_acc {best.test_acc!r}, mean_edges {best.mean_edges!r}")
    return 0


def _load_eval_inputs(args):
    upstream, downstream, model_config, layout, meta = load_checkpoint(args.checkpoint)
    dataset = load_keypoints(args.data)
    if len(dataset) == 0:
        raise ConfigError(f"data file {args.data} holds no sequences")
    return upstream, downstream, model_config, layout, meta, dataset


def cmd_eval(args) -> int:
    upstream, downstream, model_config, layout, meta, dataset = _load_eval_inputs(args)
    mode = meta["graph_mode"]
    metrics = evaluate(dataset.sequences, upstream, downstream, model_config, layout, graph_mode=mode)
    out = _out_dir(args) / "predictions.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("index,subject,label,predicted,edges\n")
        for idx, seq in enumerate(dataset.sequences):
            pred = predict(seq, upstream, downstream, model_config, layout, graph_mode=mode)
            fh.write(f"{idx},{seq.subject_id},{seq.label},{pred.label},{int(pred.graph.sum() // 2)}\n")
    print(f"count {len(dataset)}")
    print(f"accuracy {metrics.accuracy!r}")
    print(f"class0_accuracy {metrics.per_class[0]!r}")
    print(f"class1_accuracy {metrics.per_class[1]!r}")
    print(f"mean_edges {metrics.mean_edges!r}")
    print(f"wrote {out}")
    return 0


def cmd_export(args) -> int:
    upstream, downstream, model_config, layout, meta, dataset = _load_eval_inputs(args)
    mode = meta["graph_mode"]
    threshold = args.threshold
    out = _out_dir(args)
    groups = [("all", dataset.sequences)]
    for label in (0, 1):
        subset = [s for s in dataset.sequences if s.label == label]
        if subset:
            groups.append((f"class{label}", subset))
    baseline = build_anatomy_graph(layout)
    for name, seqs in groups:
        freq = edge_frequency(seqs, upstream, downstream, model_config, layout, graph_mode=mode)
        export_graph(freq, threshold, out / f"learned_{name}.dot", layout)
        write_frequency_csv(freq, out / f"learned_{name}.csv", layout)
        if name == "all":
            diff = diff_graphs(freq, baseline, threshold)
            (out / "diff_vs_anatomy.txt").write_text(format_diff(diff, layout), encoding="utf-8")
    export_graph(baseline, 1.0, out / "anatomy.dot", layout)
    print(f"wrote graph exports to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgegait",
        description="Per-instance skeleton graph learning for gait-based gender classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic keypoint file")
    train_p = sub.add_parser("train", help="train end to end; write checkpoint and metrics")
    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on a keypoint file")
    export_p = sub.add_parser("export", help="export learned graphs as DOT/CSV")

    for p in (synth, train_p):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    for p in (eval_p, export_p):
        p.add_argument("--checkpoint", required=True, help="checkpoint JSON from train")
        p.add_argument("--data", required=True, help="JSON-lines keypoint file")
    export_p.add_argument("--threshold", type=float, default=0.5, help="edge frequency threshold")
    for p in (synth, train_p, eval_p, export_p):
        p.add_argument("--out", default=".", help="output directory")

    synth.set_defaults(func=cmd_synth)
    train_p.set_defaults(func=cmd_train)
    eval_p.set_defaults(func=cmd_eval)
    export_p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return 0 if (exc.code or 0) == 0 else 1
    try:
        return args.func(args)
    except (ConfigError, ParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
