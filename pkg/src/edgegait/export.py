"""Interpretability tooling: edge-frequency aggregation and graph export.

Learned graphs are aggregated into frequency matrices (how often each edge
survives the noise-free decision across instances) and rendered as DOT
text and CSV for side-by-side comparison with the anatomy baseline.
All emitters are byte-deterministic: edges are sorted by pair index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import JointLayout
from .models import ModelConfig, predict


@dataclass
class EdgeFrequencyMatrix:
    """Mean of discrete per-instance graphs over some set of instances."""

    matrix: np.ndarray
    count: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"frequency matrix must be square, got {m.shape}")
        if not np.array_equal(m, m.T):
            raise ShapeError("frequency matrix must be symmetric")
        if np.any(np.diag(m) != 0):
            raise ShapeError("frequency matrix must have a zero diagonal")
        if np.any(m < 0) or np.any(m > 1):
            raise ShapeError("frequencies must lie in [0, 1]")
        self.matrix = m


def edge_frequency(
    sequences,
    upstream,
    downstream,
    model_config: ModelConfig,
    layout: JointLayout,
    graph_mode: str = "learned",
) -> EdgeFrequencyMatrix:
    """Average the noise-free discrete graphs predicted for ``sequences``.

    Aggregate per class by filtering the sequence list before calling.
    """
    sequences = list(sequences)
    if not sequences:
        raise ConfigError("edge_frequency needs at least one instance")
    total = np.zeros((layout.num_joints, layout.num_joints))
    for seq in sequences:
        total += predict(seq, upstream, downstream, model_config, layout, graph_mode=graph_mode).graph
    return EdgeFrequencyMatrix(matrix=total / len(sequences), count=len(sequences))


def _as_matrix(matrix) -> np.ndarray:
    if isinstance(matrix, EdgeFrequencyMatrix):
        return matrix.matrix
    return np.asarray(matrix, dtype=np.float64)


def _thresholded_edges(matrix: np.ndarray, threshold: float):
    v = matrix.shape[0]
    return [(i, j) for i in range(v) for j in range(i + 1, v) if matrix[i, j] >= threshold]


def export_graph(matrix, threshold: float, path, layout: JointLayout) -> None:
    """Write a DOT graph with one undirected edge per entry >= threshold.

    Edge lines carry the frequency as a weight attribute and are emitted
    in sorted (i, j) order, so identical inputs give identical bytes.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    m = _as_matrix(matrix)
    if m.shape[0] != layout.num_joints:
        raise ShapeError(f"matrix size {m.shape[0]} does not match layout with {layout.num_joints} joints")
    lines = ["graph G {", "  node [shape=circle];"]
    for i, j in _thresholded_edges(m, threshold):
        lines.append(f'  "{layout.joints[i]}" -- "{layout.joints[j]}" [weight={float(m[i, j])!r}];')
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_frequency_csv(matrix, path, layout: JointLayout) -> None:
    """Frequency matrix as CSV: joint-name header, then V rows of V reals."""
    m = _as_matrix(matrix)
    if m.shape[0] != layout.num_joints:
        raise ShapeError(f"matrix size {m.shape[0]} does not match layout with {layout.num_joints} joints")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(layout.joints) + "\n")
        for row in m:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


@dataclass
class GraphDiff:
    """Edge-set partition of learned-vs-baseline membership."""

    added: list    # in thresholded learned graph, not in baseline
    removed: list  # in baseline, lost from learned graph
    kept: list     # in both


def diff_graphs(learned, baseline, threshold: float) -> GraphDiff:
    """Partition candidate edges by membership in learned vs baseline graphs."""
    lm = _as_matrix(learned)
    bm = np.asarray(baseline, dtype=np.float64)
    if lm.shape != bm.shape:
        raise ShapeError(f"size mismatch: learned {lm.shape} vs baseline {bm.shape}")
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    learned_edges = set(_thresholded_edges(lm, threshold))
    baseline_edges = {(min(i, j), max(i, j)) for i, j in zip(*np.nonzero(bm)) if i < j}
    return GraphDiff(
        added=sorted(learned_edges - baseline_edges),
        removed=sorted(baseline_edges - learned_edges),
        kept=sorted(learned_edges & baseline_edges),
    )


def format_diff(diff: GraphDiff, layout: JointLayout) -> str:
    """Human-readable diff listing, deterministic ordering."""
    out = []
    for title, edges in (("added", diff.added), ("removed", diff.removed), ("kept", diff.kept)):
        out.append(f"{title} ({len(edges)}):")
        for i, j in edges:
            out.append(f"  {layout.joints[i]} -- {layout.joints[j]}")
    return "\n".join(out) + "\n"
