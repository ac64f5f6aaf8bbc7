"""Spatial skeleton graphs: the hand-built anatomy baseline and GCN normalization.

The learned object elsewhere in the package is a V x V symmetric adjacency
with zero diagonal; self-loops enter only here, inside normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

# Default 17-joint layout (COCO keypoint order). The 16 bones form a
# spanning tree: head (4), nose-to-shoulders (2), arms (4), shoulder-to-hip
# trunk sides (2), legs (4). There is deliberately no shoulder-shoulder or
# hip-hip bone.
COCO17_JOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

COCO17_BONES = (
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
)


@dataclass(frozen=True)
class JointLayout:
    """Named joints plus the undirected bone list connecting them."""

    joints: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]

    def __post_init__(self):
        v = len(self.joints)
        if v < 1:
            raise ConfigError("layout needs at least one joint")
        if len(set(self.joints)) != v:
            raise ConfigError("layout joint names must be unique")
        seen = set()
        for i, j in self.bones:
            if not (0 <= i < v and 0 <= j < v):
                raise ConfigError(f"bone ({i}, {j}) references a joint outside [0, {v})")
            if i == j:
                raise ConfigError(f"bone ({i}, {j}) is a self-pair")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigError(f"duplicate bone ({i}, {j})")
            seen.add(key)

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    def index(self, name: str) -> int:
        try:
            return self.joints.index(name)
        except ValueError:
            raise ConfigError(f"layout has no joint named {name!r}") from None

    def to_dict(self) -> dict:
        return {"joints": list(self.joints), "bones": [list(b) for b in self.bones]}

    @classmethod
    def from_dict(cls, obj: dict) -> "JointLayout":
        try:
            joints = tuple(str(j) for j in obj["joints"])
            bones = tuple((int(i), int(j)) for i, j in obj["bones"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad layout object: {exc}") from exc
        return cls(joints, bones)


DEFAULT_LAYOUT = JointLayout(COCO17_JOINTS, COCO17_BONES)


def load_layout(path) -> JointLayout:
    """Read a layout from a JSON file with "joints" and "bones" keys."""
    with open(path, "r", encoding="utf-8") as fh:
        return JointLayout.from_dict(json.load(fh))


def save_layout(layout: JointLayout, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layout.to_dict(), fh, indent=2)
        fh.write("\n")


def build_anatomy_graph(layout: JointLayout) -> np.ndarray:
    """Binary adjacency with a 1 at every bone, zero diagonal, symmetric."""
    v = layout.num_joints
    a = np.zeros((v, v), dtype=np.float64)
    for i, j in layout.bones:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def validate_adjacency(a: np.ndarray) -> np.ndarray:
    """Check the raw-mask contract: square, symmetric, nonnegative, zero diagonal."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ShapeError("adjacency must be symmetric")
    if np.any(a < 0):
        raise ShapeError("adjacency entries must be nonnegative")
    if np.any(np.diag(a) != 0):
        raise ShapeError("raw adjacency must have a zero diagonal")
    return a


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric GCN normalization with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the degree of A + I. The
    added self-loop keeps every degree >= 1, so the result is always
    well-defined for nonnegative symmetric input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {a.shape}")
    with_loops = a + np.eye(a.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * np.outer(inv_sqrt_deg, inv_sqrt_deg)


def normalize_adjacency_t(mask: ad.Tensor) -> ad.Tensor:
    """Differentiable twin of :func:`normalize_adjacency` for tape tensors.

    Gradients flow through both the matrix entries and the degrees.
    """
    v = mask.data.shape[0]
    if mask.data.ndim != 2 or mask.data.shape != (v, v):
        raise ShapeError(f"adjacency must be square, got shape {mask.data.shape}")
    tape = mask.tape
    with_loops = ad.add(mask, tape.leaf(np.eye(v)))
    degrees = ad.matmul(with_loops, tape.leaf(np.ones((v, 1))))
    inv_sqrt = ad.exp(ad.scale(ad.log(degrees), -0.5))
    outer = ad.matmul(inv_sqrt, ad.reshape(inv_sqrt, (1, v)))
    return ad.mul(with_loops, outer)
