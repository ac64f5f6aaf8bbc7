"""Tests for the data model, JSON-lines I/O, normalization, and the generator.

The lag-correlation oracle defined here is the independent reference
classifier for planted-structure data: it never touches the models.
"""

import json

import numpy as np
import pytest

from edgegait.data import (
    Dataset,
    SkeletonSequence,
    SynthConfig,
    generate_synthetic,
    load_keypoints,
    normalize_sequence,
    split_by_subject,
    write_keypoints,
)
from edgegait.errors import ConfigError, DegenerateSequenceError, ParseError
from edgegait.graph import DEFAULT_LAYOUT


def make_record(t=30, v=17, c=3, subject="001", label=0):
    rng = np.random.default_rng(0)
    frames = rng.random((t, v, c)).tolist()
    return {"subject": subject, "label": label, "view": 90, "condition": "nm-01", "frames": frames}


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def lag_corr(frames, i, j, lag, diff_order=0):
    """Lag-correlation of joints i (earlier) and j (later).

    Pearson correlation of the two aligned coordinate series, optionally
    differenced ``diff_order`` times, with channels standardized and
    concatenated. diff_order=2 (acceleration) is near-white for the
    generator's AR(1)-velocity walks, which kills spurious correlation.
    """
    a = frames[: frames.shape[0] - lag, i, :2]
    b = frames[lag:, j, :2]
    if diff_order:
        a, b = np.diff(a, diff_order, axis=0), np.diff(b, diff_order, axis=0)
    xs, ys = [], []
    for ch in range(2):
        x, y = a[:, ch], b[:, ch]
        xs.append((x - x.mean()) / (x.std() or 1.0))
        ys.append((y - y.mean()) / (y.std() or 1.0))
    return float(np.mean(np.concatenate(xs) * np.concatenate(ys)))


def oracle_classify(seq, pair, lag):
    """Reference classifier: threshold the acceleration-space lag correlation."""
    return int(lag_corr(seq.frames, pair[0], pair[1], lag, diff_order=2) > 0.5)


class TestLoader:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert len(load_keypoints(path)) == 0

    def test_single_valid_record(self, tmp_path):
        path = tmp_path / "one.jsonl"
        write_lines(path, [make_record()])
        ds = load_keypoints(path)
        assert len(ds) == 1
        seq = ds.sequences[0]
        assert seq.frames.shape == (30, 17, 3)
        assert seq.subject_id == "001" and seq.label == 0 and seq.view == 90

    def test_ragged_frame_names_line_and_frame(self, tmp_path):
        record = make_record()
        record["frames"][5] = record["frames"][5][:16]
        path = tmp_path / "ragged.jsonl"
        write_lines(path, [make_record(), record])
        with pytest.raises(ParseError, match="line 2.*frame 5 has 16 joints, expected 17"):
            load_keypoints(path)

    def test_missing_field_names_line_and_field(self, tmp_path):
        record = make_record()
        del record["label"]
        path = tmp_path / "missing.jsonl"
        write_lines(path, [make_record(), make_record(), record])
        with pytest.raises(ParseError, match="line 3: missing field 'label'"):
            load_keypoints(path)

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "badlabel.jsonl"
        write_lines(path, [make_record(label=2)])
        with pytest.raises(ParseError, match="line 1.*'label'"):
            load_keypoints(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "badjson.jsonl"
        path.write_text('{"subject": "001"\n')
        with pytest.raises(ParseError, match="line 1: invalid JSON"):
            load_keypoints(path)

    def test_nonfinite_coordinates_rejected(self, tmp_path):
        record = make_record()
        record["frames"][0][0][0] = None
        path = tmp_path / "nan.jsonl"
        write_lines(path, [record])
        with pytest.raises(ParseError, match="line 1"):
            load_keypoints(path)


class TestWriter:
    def test_round_trip_exact(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n_per_class=4, frames=10), seed=3)
        path = tmp_path / "rt.jsonl"
        write_keypoints(ds, path)
        back = load_keypoints(path)
        assert len(back) == len(ds)
        for a, b in zip(ds.sequences, back.sequences):
            assert np.array_equal(a.frames, b.frames)
            assert (a.subject_id, a.label, a.view, a.condition) == (
                b.subject_id,
                b.label,
                b.view,
                b.condition,
            )

    def test_key_order_is_canonical(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n_per_class=1, frames=5, joints=3, pair=(0, 1), lag=1), seed=0)
        path = tmp_path / "order.jsonl"
        write_keypoints(ds, path)
        first = path.read_text().splitlines()[0]
        keys = list(json.loads(first))
        assert keys == ["subject", "label", "view", "condition", "frames"]


class TestNormalize:
    def seq(self, seed=0):
        ds = generate_synthetic(SynthConfig(n_per_class=1, frames=20), seed=seed)
        return ds.sequences[0]

    def test_root_centered_unit_torso_after_call(self):
        out = normalize_sequence(self.seq(), DEFAULT_LAYOUT)
        lh, rh = DEFAULT_LAYOUT.index("left_hip"), DEFAULT_LAYOUT.index("right_hip")
        ls, rs = DEFAULT_LAYOUT.index("left_shoulder"), DEFAULT_LAYOUT.index("right_shoulder")
        root = 0.5 * (out.frames[:, lh, :2] + out.frames[:, rh, :2])
        np.testing.assert_allclose(root, 0.0, atol=1e-12)
        torso = np.linalg.norm(0.5 * (out.frames[:, ls, :2] + out.frames[:, rs, :2]) - root, axis=1)
        assert abs(torso.mean() - 1.0) < 1e-9

    def test_fixpoint(self):
        once = normalize_sequence(self.seq(), DEFAULT_LAYOUT)
        twice = normalize_sequence(once, DEFAULT_LAYOUT)
        np.testing.assert_allclose(twice.frames, once.frames, atol=1e-12)

    def test_translation_invariance(self):
        seq = self.seq(1)
        shifted = SkeletonSequence(seq.frames.copy(), seq.subject_id, seq.label, seq.view, seq.condition)
        shifted.frames[:, :, 0] += 7.0
        shifted.frames[:, :, 1] -= 3.0
        a = normalize_sequence(seq, DEFAULT_LAYOUT)
        b = normalize_sequence(shifted, DEFAULT_LAYOUT)
        np.testing.assert_allclose(a.frames, b.frames, atol=1e-12)

    def test_confidence_channel_untouched(self):
        seq = self.seq(2)
        out = normalize_sequence(seq, DEFAULT_LAYOUT)
        np.testing.assert_array_equal(out.frames[:, :, 2], seq.frames[:, :, 2])

    def test_degenerate_sequence_rejected(self):
        frames = np.zeros((5, 17, 2))
        seq = SkeletonSequence(frames, "z", 0)
        with pytest.raises(DegenerateSequenceError):
            normalize_sequence(seq, DEFAULT_LAYOUT)


class TestSynthetic:
    def test_counts_and_balance(self):
        ds = generate_synthetic(SynthConfig(n_per_class=100, frames=8), seed=1)
        assert len(ds) == 200
        labels = [s.label for s in ds.sequences]
        assert labels.count(0) == 100 and labels.count(1) == 100

    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(n_per_class=5, frames=12)
        a = generate_synthetic(cfg, seed=9)
        b = generate_synthetic(cfg, seed=9)
        for sa, sb in zip(a.sequences, b.sequences):
            assert np.array_equal(sa.frames, sb.frames)
            assert sa.subject_id == sb.subject_id and sa.label == sb.label

    def test_sigma_zero_plants_exact_copy(self):
        cfg = SynthConfig(n_per_class=3, frames=15, sigma=0.0)
        ds = generate_synthetic(cfg, seed=2)
        i, j = cfg.pair
        for seq in ds.sequences:
            if seq.label != 1:
                continue
            lhs = seq.frames[cfg.lag :, j, :2]
            rhs = seq.frames[: cfg.frames - cfg.lag, i, :2]
            assert np.array_equal(lhs, rhs)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(lag=30, frames=30)
        with pytest.raises(ConfigError):
            SynthConfig(pair=(3, 3))
        with pytest.raises(ConfigError):
            SynthConfig(n_per_class=0)

    def test_planted_pair_correlation_statistics(self):
        # Monte-Carlo class-conditional statistic at the default sigma
        cfg = SynthConfig(n_per_class=200, frames=30, sigma=0.05)
        ds = generate_synthetic(cfg, seed=4)
        i, j = cfg.pair
        corr = {0: [], 1: []}
        for seq in ds.sequences:
            corr[seq.label].append(lag_corr(seq.frames, i, j, cfg.lag))
        assert np.mean(corr[1]) > 0.9
        assert abs(np.mean(corr[0])) < 0.2

    def test_oracle_classifier_accuracy(self):
        cfg = SynthConfig(n_per_class=200, frames=30, sigma=0.05)
        ds = generate_synthetic(cfg, seed=5)
        hits = sum(oracle_classify(s, cfg.pair, cfg.lag) == s.label for s in ds.sequences)
        assert hits / len(ds) >= 0.99


class TestSplits:
    def test_split_disjoint_and_balanced(self):
        ds = generate_synthetic(SynthConfig(n_per_class=30, frames=6), seed=6)
        split = split_by_subject(ds, 2 / 3, rng=7)
        train, test = split.train_sequences(), split.test_sequences()
        assert len(train) == 40 and len(test) == 20
        assert not ({s.subject_id for s in train} & {s.subject_id for s in test})
        assert {s.label for s in train} == {0, 1}
        assert {s.label for s in test} == {0, 1}

    def test_multi_sequence_subjects_stay_together(self):
        rng = np.random.default_rng(8)
        seqs = []
        for subject in range(8):
            for rep in range(3):
                frames = rng.random((4, 3, 2))
                seqs.append(SkeletonSequence(frames, f"s{subject}", subject % 2, 0, f"rep{rep}"))
        split = split_by_subject(Dataset(seqs), 0.5, rng=1)
        sides = {}
        for seq, side in zip(split.sequences, split.split):
            sides.setdefault(seq.subject_id, set()).add(side)
        assert all(len(v) == 1 for v in sides.values())

    def test_cross_split_leak_detected(self):
        rng = np.random.default_rng(9)
        frames = rng.random((4, 3, 2))
        seqs = [SkeletonSequence(frames, "dup", lab, 0, "") for lab in (0, 1, 0, 1)]
        with pytest.raises(ConfigError, match="both splits"):
            Dataset(seqs, ["train", "train", "test", "test"])
