"""End-to-end training: batching, loss, temperature annealing, evaluation.

One training loop owns the parameters. Every source of randomness (init,
shuffling, Gumbel noise) derives from the config seed, so identical
configs give bit-identical runs. Per-instance masks are sampled inside
the batch loop; instances never share an adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset, normalize_sequence
from .errors import ConfigError, TrainingError
from .graph import DEFAULT_LAYOUT, JointLayout, build_anatomy_graph
from .gumbel import TemperatureSchedule, edge_pairs, sample_edge_mask
from .models import (
    DownstreamParams,
    ModelConfig,
    UpstreamParams,
    downstream_forward,
    init_downstream,
    init_upstream,
    predict,
    upstream_forward,
)

LEARNED, ANATOMY = "learned", "anatomy"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; architecture lives in ModelConfig."""

    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    schedule: TemperatureSchedule | None = None  # None: derive from epochs
    sparsity_weight: float = 0.0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    graph_mode: str = LEARNED
    hard_sampling: bool = True  # soft mode kept for gradient checks

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sparsity_weight < 0:
            raise ConfigError("sparsity_weight must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.graph_mode not in (LEARNED, ANATOMY):
            raise ConfigError(f"unknown graph_mode {self.graph_mode!r}")


@dataclass
class Metrics:
    """Evaluation summary over one split."""

    accuracy: float
    per_class: tuple[float, float]
    mean_edges: float


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    mean_edges: float
    tau: float


@dataclass
class TrainResult:
    upstream: UpstreamParams | None
    downstream: DownstreamParams
    history: list
    best_epoch: int
    config: TrainConfig
    model_config: ModelConfig


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, named_params, grads):
        for name, arr in named_params:
            arr -= self.lr * grads[name]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, named_params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, arr in named_params:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


def loss(logits: ad.Tensor, labels, soft_keeps: ad.Tensor | None, sparsity_weight: float) -> ad.Tensor:
    """Cross-entropy plus sparsity pressure on mean keep probability.

    With weight 0 (or no keep probabilities) this is exactly the
    cross-entropy; otherwise the extra term's gradient is weight / (B * E)
    per keep-probability entry.
    """
    ce = ad.cross_entropy(logits, labels)
    if sparsity_weight == 0.0 or soft_keeps is None:
        return ce
    return ad.add(ce, ad.scale(ad.mean_all(soft_keeps), sparsity_weight))


def _forward_instance(tape, seq, up_t, down_t, tau, rng, config, model_config, pairs, baseline):
    """One instance through upstream -> mask sampling -> downstream."""
    x = tape.leaf(seq.frames)
    if config.graph_mode == ANATOMY:
        mask = tape.leaf(baseline)
        soft_keep = None
    else:
        logits = upstream_forward(x, up_t, pairs)
        mask, soft_keep = sample_edge_mask(logits, tau, hard=config.hard_sampling, rng=rng, pairs=pairs)
    class_logits = downstream_forward(x, mask, down_t, model_config, baseline=baseline)
    return class_logits, soft_keep


def train_step(
    batch,
    upstream: UpstreamParams | None,
    downstream: DownstreamParams,
    optimizer,
    tau: float,
    rng,
    config: TrainConfig,
    model_config: ModelConfig,
    layout: JointLayout,
) -> float:
    """One optimization step over a batch of normalized sequences.

    Returns the scalar batch loss. Raises TrainingError with the earliest
    offending node if anything in the pass goes non-finite.
    """
    tape = ad.Tape()
    pairs = edge_pairs(layout.num_joints)
    baseline = build_anatomy_graph(layout)
    up_t = upstream.wrap(tape) if upstream is not None else None
    down_t = downstream.wrap(tape)
    logit_rows, keep_rows, labels = [], [], []
    for seq in batch:
        class_logits, soft_keep = _forward_instance(
            tape, seq, up_t, down_t, tau, rng, config, model_config, pairs, baseline
        )
        logit_rows.append(class_logits)
        if soft_keep is not None:
            keep_rows.append(soft_keep)
        labels.append(seq.label)
    stacked = ad.stack_rows(logit_rows)
    keeps = ad.stack_rows(keep_rows) if keep_rows else None
    total = loss(stacked, labels, keeps, config.sparsity_weight)
    if not np.isfinite(total.data):
        node = ad.first_nonfinite(tape)
        where = f"node {node.node_id} (op {node.op!r})" if node is not None else "loss"
        raise TrainingError(f"non-finite loss; first non-finite value at {where}")
    ad.backward(total)
    named, grads = [], {}
    for prefix, params_np, params_t in (("up.", upstream, up_t), ("down.", downstream, down_t)):
        if params_np is None:
            continue
        for (name, arr), (_, tensor) in zip(params_np.named_arrays(), params_t.named_arrays()):
            named.append((prefix + name, arr))
            grads[prefix + name] = tensor.grad
    optimizer.step(named, grads)
    return float(total.data)


def evaluate(
    sequences,
    upstream: UpstreamParams | None,
    downstream: DownstreamParams,
    model_config: ModelConfig,
    layout: JointLayout,
    graph_mode: str = LEARNED,
) -> Metrics:
    """Noise-free prediction and exact counting over a list of sequences."""
    if not sequences:
        raise ConfigError("cannot evaluate an empty split")
    hits = {0: 0, 1: 0}
    counts = {0: 0, 1: 0}
    edges = []
    for seq in sequences:
        pred = predict(seq, upstream, downstream, model_config, layout, graph_mode=graph_mode)
        counts[seq.label] += 1
        hits[seq.label] += int(pred.label == seq.label)
        edges.append(pred.graph.sum() / 2.0)
    per_class = tuple(hits[c] / counts[c] if counts[c] else 0.0 for c in (0, 1))
    accuracy = (hits[0] + hits[1]) / len(sequences)
    return Metrics(accuracy=accuracy, per_class=per_class, mean_edges=float(np.mean(edges)))


def train(
    dataset: Dataset,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    layout: JointLayout = DEFAULT_LAYOUT,
) -> TrainResult:
    """Full training run; returns the best-test-accuracy checkpoint.

    Ties on test accuracy keep the earliest epoch, so reruns of the same
    config reproduce the same reported checkpoint bit for bit.
    """
    train_seqs = [normalize_sequence(s, layout) for s in dataset.train_sequences()]
    test_seqs = dataset.test_sequences()
    if not train_seqs or not test_seqs:
        raise ConfigError("training needs non-empty train and test splits")
    v = layout.num_joints
    channels = {s.frames.shape[2] for s in dataset.sequences}
    if any(s.num_joints != v for s in dataset.sequences):
        raise ConfigError(f"all sequences must have {v} joints to match the layout")
    if len(channels) != 1:
        raise ConfigError(f"sequences mix channel counts {sorted(channels)}")
    if model_config is None:
        model_config = ModelConfig(in_channels=channels.pop())
    elif model_config.in_channels != next(iter(channels)):
        raise ConfigError(
            f"model expects {model_config.in_channels} channels, data has {next(iter(channels))}"
        )

    schedule = config.schedule or TemperatureSchedule.for_epochs(config.epochs)
    upstream = None if config.graph_mode == ANATOMY else init_upstream(model_config, config.seed)
    downstream = init_downstream(model_config, config.seed)
    optimizer = make_optimizer(config)
    noise_rng, shuffle_rng = np.random.default_rng(config.seed).spawn(2)

    history = []
    best_acc = -1.0
    best_epoch = -1
    best_up = upstream.copy() if upstream is not None else None
    best_down = downstream.copy()
    for epoch in range(config.epochs):
        tau = schedule.tau(epoch)
        order = shuffle_rng.permutation(len(train_seqs))
        step_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_seqs[i] for i in order[start : start + config.batch_size]]
            step_losses.append(
                train_step(batch, upstream, downstream, optimizer, tau, noise_rng, config, model_config, layout)
            )
        train_metrics = evaluate(train_seqs, upstream, downstream, model_config, layout, config.graph_mode)
        test_metrics = evaluate(test_seqs, upstream, downstream, model_config, layout, config.graph_mode)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(step_losses)),
                train_acc=train_metrics.accuracy,
                test_acc=test_metrics.accuracy,
                mean_edges=test_metrics.mean_edges,
                tau=tau,
            )
        )
        if test_metrics.accuracy > best_acc:
            best_acc = test_metrics.accuracy
            best_epoch = epoch
            best_up = upstream.copy() if upstream is not None else None
            best_down = downstream.copy()
    return TrainResult(
        upstream=best_up,
        downstream=best_down,
        history=history,
        best_epoch=best_epoch,
        config=config,
        model_config=model_config,
    )


METRICS_HEADER = "epoch,train_loss,train_acc,test_acc,mean_edges,tau"


def write_metrics_csv(history, path) -> None:
    """Metrics history as CSV, columns in the canonical order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in history:
            fh.write(
                f"{row.epoch},{row.train_loss!r},{row.train_acc!r},{row.test_acc!r},{row.mean_edges!r},{row.tau!r}\n"
            )
