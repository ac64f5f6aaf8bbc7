"""The two networks: upstream edge-logit scorer and downstream ST-GCN classifier.

The upstream model maps a walking instance to keep/drop logits for every
candidate joint pair; the downstream model classifies the instance through
graph convolutions over whatever adjacency it is handed. Both are plain
parameter containers plus pure forward functions on tape tensors, so
gradients reach every weight and every sampled mask entry.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import SkeletonSequence, normalize_sequence
from .errors import CheckpointError, ConfigError, ShapeError
from .graph import JointLayout, build_anatomy_graph, normalize_adjacency_t
from .gumbel import edge_pairs, num_edges


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings shared by init, forward, and checkpoints."""

    in_channels: int = 3
    embed_dim: int = 16
    channels: tuple[int, ...] = (16, 32, 64)
    temporal_kernel: int = 9
    residual_baseline: bool = False

    def __post_init__(self):
        if self.in_channels not in (2, 3):
            raise ConfigError("in_channels must be 2 or 3")
        if self.embed_dim < 1 or not self.channels or self.temporal_kernel < 1:
            raise ConfigError("embed_dim, channels, temporal_kernel must be positive")


def _named_items(params, prefix=""):
    """Flat (name, value) pairs over a params dataclass; lists get .i suffixes."""
    for f in dataclasses.fields(params):
        val = getattr(params, f.name)
        if isinstance(val, list):
            for i, item in enumerate(val):
                yield f"{prefix}{f.name}.{i}", item
        else:
            yield f"{prefix}{f.name}", val


def _map_fields(params, fn):
    kwargs = {}
    for f in dataclasses.fields(params):
        val = getattr(params, f.name)
        kwargs[f.name] = [fn(x) for x in val] if isinstance(val, list) else fn(val)
    return type(params)(**kwargs)


class _ParamsBase:
    def named_arrays(self):
        return list(_named_items(self))

    def wrap(self, tape: ad.Tape):
        """Parallel structure of tape leaves; zip with named_arrays for grads."""
        return _map_fields(self, tape.leaf)

    def copy(self):
        return _map_fields(self, np.copy)


@dataclass
class UpstreamParams(_ParamsBase):
    embed_w: np.ndarray  # (C_in, d_e) shared per-joint embedding
    embed_b: np.ndarray  # (1, d_e)
    keep_w: np.ndarray   # (d_e, d_e) bilinear scorer, keep logit
    drop_w: np.ndarray   # (d_e, d_e) bilinear scorer, drop logit
    keep_b: np.ndarray   # scalar
    drop_b: np.ndarray   # scalar


@dataclass
class DownstreamParams(_ParamsBase):
    spatial: list   # per block: (C_l, C_{l+1})
    temporal: list  # per block: (C_{l+1}, k_t) depthwise kernels
    head_w: np.ndarray  # (C_last, 2)
    head_b: np.ndarray  # (1, 2)


def _uniform(seed_key, shape, fan_in):
    rng = np.random.default_rng(seed_key)
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_upstream(config: ModelConfig, seed: int) -> UpstreamParams:
    d = config.embed_dim
    return UpstreamParams(
        embed_w=_uniform([seed, 0], (config.in_channels, d), config.in_channels),
        embed_b=np.zeros((1, d)),
        keep_w=_uniform([seed, 1], (d, d), d),
        drop_w=_uniform([seed, 2], (d, d), d),
        keep_b=np.zeros(()),
        drop_b=np.zeros(()),
    )


def init_downstream(config: ModelConfig, seed: int) -> DownstreamParams:
    spatial, temporal = [], []
    c_prev = config.in_channels
    for idx, c_out in enumerate(config.channels):
        spatial.append(_uniform([seed, 10 + 2 * idx], (c_prev, c_out), c_prev))
        temporal.append(_uniform([seed, 11 + 2 * idx], (c_out, config.temporal_kernel), config.temporal_kernel))
        c_prev = c_out
    return DownstreamParams(
        spatial=spatial,
        temporal=temporal,
        head_w=np.zeros((c_prev, 2)),
        head_b=np.zeros((1, 2)),
    )


def upstream_forward(x: ad.Tensor, params: UpstreamParams, pairs: np.ndarray) -> ad.Tensor:
    """Edge logits (E, 2) for one instance; column 0 = keep, 1 = drop.

    Temporal mean-pool per joint, shared linear embed with relu, then a
    symmetric bilinear score per pair: z_ij + z_ji + bias for each of the
    two logit heads. Symmetrization makes the output depend only on the
    unordered pair, which is what keeps joint relabeling consistent.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"expected frames (T, V, C), got shape {x.data.shape}")
    t, v, c = x.data.shape
    if c != params.embed_w.data.shape[0]:
        raise ShapeError(f"input has {c} channels, embedding expects {params.embed_w.data.shape[0]}")
    tape = x.tape
    pooled = ad.reshape(ad.mean_axis0(ad.reshape(x, (t, v * c))), (v, c))
    bias = ad.matmul(tape.leaf(np.ones((v, 1))), params.embed_b)
    h = ad.relu(ad.add(ad.matmul(pooled, params.embed_w), bias))
    h_t = ad.permute(h, (1, 0))
    columns = []
    for w, b in ((params.keep_w, params.keep_b), (params.drop_w, params.drop_b)):
        z = ad.matmul(ad.matmul(h, w), h_t)
        scores = ad.add(ad.add(z, ad.permute(z, (1, 0))), b)
        columns.append(ad.gather_pairs(scores, pairs))
    return ad.stack_columns(columns)


def gcn_block(x: ad.Tensor, a_hat: ad.Tensor, w: ad.Tensor, kernels: ad.Tensor) -> ad.Tensor:
    """One spatio-temporal block: relu(A_hat . x_t . W) then temporal conv.

    The spatial step has no bias, so zero input stays exactly zero.
    """
    t, v, c = x.data.shape
    if a_hat.data.shape != (v, v):
        raise ShapeError(f"adjacency {a_hat.data.shape} does not match {v} joints")
    if w.data.shape[0] != c:
        raise ShapeError(f"spatial weights {w.data.shape} do not accept {c} channels")
    joints_first = ad.reshape(ad.permute(x, (1, 0, 2)), (v, t * c))
    mixed = ad.permute(ad.reshape(ad.matmul(a_hat, joints_first), (v, t, c)), (1, 0, 2))
    c_out = w.data.shape[1]
    projected = ad.reshape(ad.matmul(ad.reshape(mixed, (t * v, c)), w), (t, v, c_out))
    return ad.temporal_conv(ad.relu(projected), kernels)


def downstream_forward(
    x: ad.Tensor,
    mask: ad.Tensor,
    params: DownstreamParams,
    config: ModelConfig,
    baseline: np.ndarray | None = None,
) -> ad.Tensor:
    """Class logits (2,) from an instance and its (differentiable) adjacency.

    ``baseline`` is the anatomy graph, added to the mask before
    normalization when ``config.residual_baseline`` is set.
    """
    if config.residual_baseline:
        if baseline is None:
            raise ConfigError("residual_baseline requires the anatomy graph")
        mask = ad.add(mask, x.tape.leaf(baseline))
    a_hat = normalize_adjacency_t(mask)
    h = x
    for w, kernels in zip(params.spatial, params.temporal):
        h = gcn_block(h, a_hat, w, kernels)
    t, v, c_last = h.data.shape
    pooled = ad.mean_axis0(ad.reshape(h, (t * v, c_last)))
    logits = ad.add(ad.matmul(ad.reshape(pooled, (1, c_last)), params.head_w), params.head_b)
    return ad.reshape(logits, (2,))


@dataclass
class Prediction:
    """Noise-free evaluation output for one instance."""

    label: int
    edge_keep_probs: np.ndarray  # (E,) softmax keep probability per pair
    graph: np.ndarray            # (V, V) discrete adjacency actually used


def decide_edges(logits: np.ndarray) -> np.ndarray:
    """Noise-free edge decision: keep iff keep logit strictly beats drop."""
    return (logits[:, 0] > logits[:, 1]).astype(np.float64)


def edge_keep_probabilities(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 0] / e.sum(axis=1)


def mask_from_edges(keep: np.ndarray, pairs: np.ndarray, size: int) -> np.ndarray:
    mask = np.zeros((size, size))
    mask[pairs[:, 0], pairs[:, 1]] = keep
    mask[pairs[:, 1], pairs[:, 0]] = keep
    return mask


def predict(
    seq: SkeletonSequence,
    upstream: UpstreamParams | None,
    downstream: DownstreamParams,
    config: ModelConfig,
    layout: JointLayout,
    graph_mode: str = "learned",
) -> Prediction:
    """Deterministic evaluation-mode prediction (no Gumbel noise).

    In "anatomy" mode the upstream model is bypassed and the fixed anatomy
    graph stands in for the learned one.
    """
    v = layout.num_joints
    if seq.num_joints != v:
        raise ShapeError(f"sequence has {seq.num_joints} joints, layout has {v}")
    normalized = normalize_sequence(seq, layout)
    pairs = edge_pairs(v)
    baseline = build_anatomy_graph(layout)
    tape = ad.Tape()
    x = tape.leaf(normalized.frames)
    if graph_mode == "anatomy":
        graph_np = baseline
        keep_probs = baseline[pairs[:, 0], pairs[:, 1]].astype(np.float64)
    elif graph_mode == "learned":
        if upstream is None:
            raise ConfigError("learned graph mode needs upstream parameters")
        logits = upstream_forward(x, upstream.wrap(tape), pairs).data
        keep_probs = edge_keep_probabilities(logits)
        graph_np = mask_from_edges(decide_edges(logits), pairs, v)
    else:
        raise ConfigError(f"unknown graph mode {graph_mode!r}")
    class_logits = downstream_forward(
        x, tape.leaf(graph_np), downstream.wrap(tape), config, baseline=baseline
    )
    return Prediction(
        label=int(np.argmax(class_logits.data)),
        edge_keep_probs=keep_probs,
        graph=graph_np,
    )


# ---------------------------------------------------------------------------
# Checkpoints: JSON with flat arrays + shapes, validated on load.

CHECKPOINT_FORMAT = "edgegait-checkpoint-v1"


def config_hash(obj) -> str:
    """Stable short hash of any JSON-representable config object."""
    blob = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _arrays_to_json(params) -> dict:
    return {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in _named_items(params)
    }


def _expected_shapes(config: ModelConfig) -> tuple[dict, dict]:
    up = init_upstream(config, seed=0)
    down = init_downstream(config, seed=0)
    up_shapes = {name: arr.shape for name, arr in _named_items(up)}
    down_shapes = {name: arr.shape for name, arr in _named_items(down)}
    return up_shapes, down_shapes


def save_checkpoint(
    path,
    upstream: UpstreamParams | None,
    downstream: DownstreamParams,
    config: ModelConfig,
    layout: JointLayout,
    seed: int,
    graph_mode: str = "learned",
    extra_config=None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "seed": int(seed),
        "config_hash": config_hash(extra_config if extra_config is not None else dataclasses.asdict(config)),
        "graph_mode": graph_mode,
        "layout": layout.to_dict(),
        "model": {
            "in_channels": config.in_channels,
            "embed_dim": config.embed_dim,
            "channels": list(config.channels),
            "temporal_kernel": config.temporal_kernel,
            "residual_baseline": config.residual_baseline,
        },
        "upstream": None if upstream is None else _arrays_to_json(upstream),
        "downstream": _arrays_to_json(downstream),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def _params_from_json(cls, blob: dict, expected: dict, section: str):
    arrays = {}
    for name, spec in blob.items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        arrays[name] = arr
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"{section}: missing arrays {sorted(missing)}")
    extra = set(arrays) - set(expected)
    if extra:
        raise CheckpointError(f"{section}: unexpected arrays {sorted(extra)}")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointError(
                f"{section}: array {name!r} has shape {arrays[name].shape}, config expects {shape}"
            )
    # rebuild the dataclass structure (lists keyed by name.i suffixes)
    fields = {}
    for f in dataclasses.fields(cls):
        indexed = sorted(
            (int(name.split(".")[1]), arr)
            for name, arr in arrays.items()
            if name.startswith(f.name + ".")
        )
        if indexed:
            fields[f.name] = [arr for _, arr in indexed]
        else:
            fields[f.name] = arrays[f.name]
    return cls(**fields)


def load_checkpoint(path):
    """Read a checkpoint; returns (upstream, downstream, config, layout, meta)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}")
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognized checkpoint format {payload.get('format')!r}")
    model = payload["model"]
    config = ModelConfig(
        in_channels=int(model["in_channels"]),
        embed_dim=int(model["embed_dim"]),
        channels=tuple(int(c) for c in model["channels"]),
        temporal_kernel=int(model["temporal_kernel"]),
        residual_baseline=bool(model["residual_baseline"]),
    )
    layout = JointLayout.from_dict(payload["layout"])
    up_shapes, down_shapes = _expected_shapes(config)
    upstream = None
    if payload["upstream"] is not None:
        upstream = _params_from_json(UpstreamParams, payload["upstream"], up_shapes, "upstream")
    downstream = _params_from_json(DownstreamParams, payload["downstream"], down_shapes, "downstream")
    meta = {
        "seed": payload["seed"],
        "config_hash": payload["config_hash"],
        "graph_mode": payload.get("graph_mode", "learned"),
    }
    return upstream, downstream, config, layout, meta
