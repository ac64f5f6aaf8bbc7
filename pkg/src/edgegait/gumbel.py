"""Differentiable discrete edge sampling.

Per-edge keep/drop decisions are 2-class categoricals relaxed by the
Gumbel-Softmax; the straight-through estimator makes the hard samples
trainable. One uniform code path covers single vectors and row-wise
batches of logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

# Uniform draws are clamped away from {0, 1} before the double log.
CLAMP_EPS = 1e-12

KEEP, DROP = 0, 1


def edge_pairs(num_joints: int) -> np.ndarray:
    """Canonical candidate-edge ordering: all (i, j) with i < j, lexicographic."""
    pairs = [(i, j) for i in range(num_joints) for j in range(i + 1, num_joints)]
    return np.asarray(pairs, dtype=np.int64).reshape(len(pairs), 2)


def num_edges(num_joints: int) -> int:
    return num_joints * (num_joints - 1) // 2


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """Map uniform draws to standard Gumbel: g = -log(-log u), u clamped."""
    u = np.clip(np.asarray(u, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return -np.log(-np.log(u))


def sample_gumbel(n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. standard Gumbel samples from an explicit generator."""
    return gumbel_from_uniform(rng.random(n))


def gumbel_softmax(logits: ad.Tensor, tau: float, rng=None, noise=None) -> ad.Tensor:
    """Soft relaxed sample: softmax((logits + g) / tau) along the last axis.

    ``noise`` is a test hook; when given it is used verbatim instead of
    fresh Gumbel draws, which freezes the sample for gradient checks.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if noise is None:
        if rng is None:
            raise ConfigError("gumbel_softmax needs an rng when noise is not frozen")
        noise = sample_gumbel(logits.data.size, rng).reshape(logits.data.shape)
    else:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != logits.data.shape:
            raise ShapeError(f"noise shape {noise.shape} != logits shape {logits.data.shape}")
    perturbed = ad.add(logits, logits.tape.leaf(noise))
    return ad.softmax(ad.scale(perturbed, 1.0 / tau), axis=-1)


def straight_through(soft: ad.Tensor) -> ad.Tensor:
    """Hard one-hot forward, identity backward.

    Rows (or the single vector) become exact one-hots at their argmax, ties
    resolved to the lowest index; gradients pass through unchanged.
    """
    if soft.data.ndim not in (1, 2):
        raise ShapeError(f"straight_through expects 1-D or 2-D input, got shape {soft.data.shape}")
    hard = np.zeros_like(soft.data)
    if soft.data.ndim == 1:
        hard[np.argmax(soft.data)] = 1.0
    else:
        hard[np.arange(soft.data.shape[0]), np.argmax(soft.data, axis=1)] = 1.0

    def bwd(g):
        soft.grad += g

    return soft.tape.record(hard, "straight_through", (soft,), bwd)


def sample_edge_mask(logits: ad.Tensor, tau: float, hard: bool, rng, pairs: np.ndarray | None = None, noise=None):
    """Sample a per-instance adjacency from (E, 2) keep/drop edge logits.

    Draws fresh Gumbel noise per edge per call, relaxes each edge's 2-class
    choice, optionally hardens it straight-through, and writes the keep
    component symmetrically into a V x V matrix with zero diagonal.

    Returns ``(mask, soft_keep)``: the (differentiable) adjacency and the
    soft keep-probability vector that regularizers consume.
    """
    if logits.data.ndim != 2 or logits.data.shape[1] != 2:
        raise ShapeError(f"edge logits must be (E, 2), got shape {logits.data.shape}")
    e = logits.data.shape[0]
    v = int(round((1 + np.sqrt(1 + 8 * e)) / 2))
    if num_edges(v) != e:
        raise ShapeError(f"{e} edge logits do not correspond to any joint count")
    if pairs is None:
        pairs = edge_pairs(v)
    soft = gumbel_softmax(logits, tau, rng=rng, noise=noise)
    keep = ad.take_column(straight_through(soft) if hard else soft, KEEP)
    mask = ad.scatter_symmetric(keep, pairs, v)
    return mask, ad.take_column(soft, KEEP)


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponential decay tau(t) = max(tau_min, tau0 * exp(-decay * t))."""

    tau0: float = 5.0
    tau_min: float = 0.5
    decay: float = 0.0

    def __post_init__(self):
        if self.tau0 <= 0 or self.tau_min <= 0:
            raise ConfigError("temperatures must be positive")
        if self.decay < 0:
            raise ConfigError("decay rate must be nonnegative")

    def tau(self, t: int) -> float:
        return max(self.tau_min, self.tau0 * float(np.exp(-self.decay * t)))

    @classmethod
    def for_epochs(cls, epochs: int, tau0: float = 5.0, tau_min: float = 0.5, reach_at: float = 0.8) -> "TemperatureSchedule":
        """Decay chosen so tau hits tau_min at ``reach_at`` of the epoch budget."""
        horizon = max(1.0, reach_at * epochs)
        decay = 0.0 if tau0 <= tau_min else float(np.log(tau0 / tau_min) / horizon)
        return cls(tau0=tau0, tau_min=tau_min, decay=decay)
