"""Skeleton sequence data model, JSON-lines ingestion, and synthetic gait data.

A sequence is T frames of V joints with 2 or 3 channels (x, y, optional
confidence). Files hold one JSON object per line; the writer emits the
same schema byte-deterministically so files round-trip exactly.

The synthetic generator plants a lagged-copy dependency between one joint
pair in class-1 sequences; class-0 sequences are fully independent smooth
random walks. That planted edge is the recoverable ground truth the rest
of the package is exercised against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateSequenceError, ParseError
from .graph import DEFAULT_LAYOUT, JointLayout

# Smooth-walk dynamics for synthetic joints: AR(1) velocity with these
# parameters gives per-frame increments large relative to the default
# planted-noise sigma of 0.05.
WALK_MOMENTUM = 0.85
WALK_STEP = 0.2

TRAIN, TEST = "train", "test"

# Rough upright body template for 17-joint synthetic anchors (x, y).
_BODY_TEMPLATE_17 = np.array(
    [
        (0.00, 1.60),  # nose
        (-0.08, 1.65), (0.08, 1.65),   # eyes
        (-0.16, 1.60), (0.16, 1.60),   # ears
        (-0.35, 1.35), (0.35, 1.35),   # shoulders
        (-0.45, 1.00), (0.45, 1.00),   # elbows
        (-0.50, 0.65), (0.50, 0.65),   # wrists
        (-0.20, 0.85), (0.20, 0.85),   # hips
        (-0.22, 0.45), (0.22, 0.45),   # knees
        (-0.24, 0.05), (0.24, 0.05),   # ankles
    ]
)


@dataclass
class SkeletonSequence:
    """One walking instance: frames (T, V, C) plus identity and metadata."""

    frames: np.ndarray
    subject_id: str
    label: int
    view: int = 0
    condition: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.validate_shape(self.frames)
        if self.label not in (0, 1):
            raise ConfigError(f"label must be 0 or 1, got {self.label}")

    @staticmethod
    def validate_shape(frames: np.ndarray):
        if frames.ndim != 3:
            raise ConfigError(f"frames must be (T, V, C), got shape {frames.shape}")
        t, v, c = frames.shape
        if t < 2 or v < 2 or c not in (2, 3):
            raise ConfigError(f"need T >= 2, V >= 2, C in {{2, 3}}; got T={t}, V={v}, C={c}")
        if not np.all(np.isfinite(frames)):
            raise ConfigError("frames contain non-finite values")
        if c == 3:
            conf = frames[:, :, 2]
            if np.any(conf < 0) or np.any(conf > 1):
                raise ConfigError("confidence channel must lie in [0, 1]")
        return t, v, c

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]


@dataclass
class Dataset:
    """Sequences plus optional per-sequence train/test assignments."""

    sequences: list
    split: list | None = None

    def __post_init__(self):
        if self.split is not None:
            if len(self.split) != len(self.sequences):
                raise ConfigError("split assignments must match sequence count")
            bad = {s for s in self.split} - {TRAIN, TEST}
            if bad:
                raise ConfigError(f"unknown split labels: {sorted(bad)}")
            self.validate_split()

    def __len__(self):
        return len(self.sequences)

    def subset(self, which: str) -> list:
        if self.split is None:
            raise ConfigError("dataset has no split assignments")
        return [s for s, w in zip(self.sequences, self.split) if w == which]

    def train_sequences(self) -> list:
        return self.subset(TRAIN)

    def test_sequences(self) -> list:
        return self.subset(TEST)

    def validate_split(self) -> None:
        """Enforce subject-disjoint splits with both labels on each side."""
        train = self.subset(TRAIN)
        test = self.subset(TEST)
        overlap = {s.subject_id for s in train} & {s.subject_id for s in test}
        if overlap:
            raise ConfigError(f"subjects appear in both splits: {sorted(overlap)[:5]}")
        for name, seqs in ((TRAIN, train), (TEST, test)):
            labels = {s.label for s in seqs}
            if labels != {0, 1}:
                raise ConfigError(f"{name} split must contain both labels, has {sorted(labels)}")


def _parse_frames(raw, line_no: int) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"line {line_no}: field 'frames' must be a non-empty array", line_no, "frames")
    v = None
    c = None
    for t, frame in enumerate(raw):
        if not isinstance(frame, list):
            raise ParseError(f"line {line_no}: field 'frames', frame {t} is not an array", line_no, "frames")
        if v is None:
            v = len(frame)
        elif len(frame) != v:
            raise ParseError(
                f"line {line_no}: field 'frames', frame {t} has {len(frame)} joints, expected {v}",
                line_no,
                "frames",
            )
        for k, joint in enumerate(frame):
            if not isinstance(joint, list):
                raise ParseError(
                    f"line {line_no}: field 'frames', frame {t} joint {k} is not an array", line_no, "frames"
                )
            if c is None:
                c = len(joint)
            elif len(joint) != c:
                raise ParseError(
                    f"line {line_no}: field 'frames', frame {t} joint {k} has {len(joint)} channels, expected {c}",
                    line_no,
                    "frames",
                )
    try:
        return np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {line_no}: field 'frames' has non-numeric entries ({exc})", line_no, "frames")


def load_keypoints(path) -> Dataset:
    """Read a JSON-lines keypoint file; malformed records name line and field."""
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})", line_no)
            if not isinstance(obj, dict):
                raise ParseError(f"line {line_no}: record must be a JSON object", line_no)
            for key in ("subject", "label", "view", "condition", "frames"):
                if key not in obj:
                    raise ParseError(f"line {line_no}: missing field '{key}'", line_no, key)
            label = obj["label"]
            if isinstance(label, bool) or label not in (0, 1):
                raise ParseError(f"line {line_no}: field 'label' must be 0 or 1, got {label!r}", line_no, "label")
            view = obj["view"]
            if isinstance(view, bool) or not isinstance(view, int):
                raise ParseError(f"line {line_no}: field 'view' must be an integer, got {view!r}", line_no, "view")
            frames = _parse_frames(obj["frames"], line_no)
            try:
                seq = SkeletonSequence(
                    frames=frames,
                    subject_id=str(obj["subject"]),
                    label=int(label),
                    view=view,
                    condition=str(obj["condition"]),
                )
            except ConfigError as exc:
                raise ParseError(f"line {line_no}: field 'frames': {exc}", line_no, "frames")
            sequences.append(seq)
    return Dataset(sequences)


def write_keypoints(sequences, path) -> None:
    """Write sequences in the JSON-lines schema, keys in canonical order."""
    if isinstance(sequences, Dataset):
        sequences = sequences.sequences
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            record = {
                "subject": seq.subject_id,
                "label": int(seq.label),
                "view": int(seq.view),
                "condition": seq.condition,
                "frames": seq.frames.tolist(),
            }
            fh.write(json.dumps(record))
            fh.write("\n")


def normalize_sequence(seq: SkeletonSequence, layout: JointLayout = DEFAULT_LAYOUT) -> SkeletonSequence:
    """Center the hip midpoint per frame and scale mean torso length to 1.

    The root is the hip midpoint; torso length is the distance from it to
    the shoulder midpoint. The confidence channel, if present, is copied
    through untouched.
    """
    lh, rh = layout.index("left_hip"), layout.index("right_hip")
    ls, rs = layout.index("left_shoulder"), layout.index("right_shoulder")
    coords = seq.frames[:, :, :2]
    root = 0.5 * (coords[:, lh] + coords[:, rh])
    shoulder_mid = 0.5 * (coords[:, ls] + coords[:, rs])
    torso = np.linalg.norm(shoulder_mid - root, axis=1)
    scale = float(torso.mean())
    if scale == 0.0:
        raise DegenerateSequenceError(
            f"sequence {seq.subject_id!r}: torso length is zero in every frame"
        )
    frames = seq.frames.copy()
    frames[:, :, :2] = (coords - root[:, None, :]) / scale
    return replace(seq, frames=frames)


@dataclass(frozen=True)
class SynthConfig:
    """Planted-structure synthetic dataset settings."""

    n_per_class: int = 300
    frames: int = 30
    joints: int = 17
    pair: tuple[int, int] = (5, 9)  # left_shoulder -> left_wrist in the default layout
    lag: int = 2
    sigma: float = 0.05
    channels: int = 3
    train_fraction: float = 2 / 3

    def __post_init__(self):
        i, j = self.pair
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if self.frames < 2 or self.joints < 2:
            raise ConfigError("need frames >= 2 and joints >= 2")
        if self.channels not in (2, 3):
            raise ConfigError("channels must be 2 or 3")
        if self.lag < 1:
            raise ConfigError("lag must be >= 1")
        if self.lag >= self.frames:
            raise ConfigError(f"lag {self.lag} must be smaller than frames {self.frames}")
        if i == j:
            raise ConfigError("planted pair must be two distinct joints")
        if not (0 <= i < self.joints and 0 <= j < self.joints):
            raise ConfigError(f"planted pair {self.pair} outside [0, {self.joints})")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError("train_fraction must be in (0, 1)")


def _anchors(rng: np.random.Generator, joints: int) -> np.ndarray:
    if joints == 17:
        return _BODY_TEMPLATE_17 + rng.normal(scale=0.05, size=(17, 2))
    angles = 2 * np.pi * np.arange(joints) / joints
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return ring + rng.normal(scale=0.05, size=(joints, 2))


def _smooth_walks(rng: np.random.Generator, t: int, joints: int) -> np.ndarray:
    """Independent AR(1)-velocity random walks, one per joint: (T, V, 2)."""
    anchors = _anchors(rng, joints)
    steps = rng.normal(size=(t, joints, 2)) * WALK_STEP
    velocity = np.zeros((joints, 2))
    out = np.empty((t, joints, 2))
    pos = anchors.copy()
    for k in range(t):
        velocity = WALK_MOMENTUM * velocity + steps[k]
        pos = pos + velocity
        out[k] = pos
    return out


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Deterministic planted-structure dataset (unsplit).

    Class 1 plants frames[t, j] = frames[t - lag, i] + N(0, sigma^2) for
    t >= lag; every other joint (and all of class 0) walks independently.
    Each sequence gets its own subject id. Splitting is a separate step
    (:func:`split_by_subject`), driven by ``config.train_fraction``.
    """
    rng = np.random.default_rng(seed)
    i, j = config.pair
    sequences = []
    index = 0
    for label in (0, 1):
        for _ in range(config.n_per_class):
            coords = _smooth_walks(rng, config.frames, config.joints)
            if label == 1:
                noise = rng.normal(scale=config.sigma, size=(config.frames - config.lag, 2))
                coords[config.lag :, j] = coords[: config.frames - config.lag, i] + noise
            if config.channels == 3:
                frames = np.concatenate([coords, np.ones((config.frames, config.joints, 1))], axis=2)
            else:
                frames = coords
            sequences.append(
                SkeletonSequence(
                    frames=frames,
                    subject_id=f"subj{index:04d}",
                    label=label,
                    view=90,
                    condition="synthetic",
                )
            )
            index += 1
    return Dataset(sequences)


def split_by_subject(dataset: Dataset, train_fraction: float, rng) -> Dataset:
    """Assign train/test subject-disjointly, stratified by label.

    A subject's sequences all land on one side. Subjects whose sequences
    mix labels are stratified by their first label.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError("train_fraction must be in (0, 1)")
    first_label = {}
    for seq in dataset.sequences:
        first_label.setdefault(seq.subject_id, seq.label)
    assignment = {}
    for label in (0, 1):
        subjects = sorted(s for s, lab in first_label.items() if lab == label)
        order = rng.permutation(len(subjects))
        n_train = int(round(train_fraction * len(subjects)))
        n_train = min(max(n_train, 1), max(len(subjects) - 1, 1))
        for rank, idx in enumerate(order):
            assignment[subjects[idx]] = TRAIN if rank < n_train else TEST
    split = [assignment[s.subject_id] for s in dataset.sequences]
    return Dataset(dataset.sequences, split)
