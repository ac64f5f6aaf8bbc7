"""Tests for the anatomy baseline graph and adjacency normalization."""

import numpy as np
import pytest

from edgegait import autodiff as ad
from edgegait.errors import ConfigError
from edgegait.graph import (
    COCO17_BONES,
    DEFAULT_LAYOUT,
    JointLayout,
    build_anatomy_graph,
    load_layout,
    normalize_adjacency,
    normalize_adjacency_t,
    save_layout,
)

from helpers import check_grad


def random_mask(rng, v):
    """Random symmetric nonnegative adjacency with zero diagonal."""
    upper = np.triu(rng.random((v, v)) * (rng.random((v, v)) < 0.6), k=1)
    return upper + upper.T


def dense_oracle(a):
    """Direct dense formula, written independently of the implementation."""
    v = a.shape[0]
    m = a + np.eye(v)
    d = m.sum(axis=1)
    out = np.empty_like(m)
    for i in range(v):
        for j in range(v):
            out[i, j] = m[i, j] / np.sqrt(d[i] * d[j])
    return out


class TestAnatomyGraph:
    def test_single_joint_layout(self):
        layout = JointLayout(("only",), ())
        np.testing.assert_array_equal(build_anatomy_graph(layout), np.zeros((1, 1)))

    def test_symmetric_by_construction(self):
        a = build_anatomy_graph(DEFAULT_LAYOUT)
        np.testing.assert_array_equal(a, a.T)
        assert np.all(np.diag(a) == 0)

    def test_default_layout_has_16_bones_32_entries(self):
        # recount the documented bone table independently of the builder
        assert len(COCO17_BONES) == 16
        assert len({tuple(sorted(b)) for b in COCO17_BONES}) == 16
        a = build_anatomy_graph(DEFAULT_LAYOUT)
        assert int(np.count_nonzero(a)) == 32

    def test_layout_validation(self):
        with pytest.raises(ConfigError):
            JointLayout(("a", "b"), ((0, 0),))
        with pytest.raises(ConfigError):
            JointLayout(("a", "b"), ((0, 2),))
        with pytest.raises(ConfigError):
            JointLayout(("a", "b", "c"), ((0, 1), (1, 0)))

    def test_layout_json_round_trip(self, tmp_path):
        path = tmp_path / "layout.json"
        save_layout(DEFAULT_LAYOUT, path)
        assert load_layout(path) == DEFAULT_LAYOUT


class TestNormalizeAdjacency:
    def test_single_node(self):
        np.testing.assert_array_equal(normalize_adjacency(np.zeros((1, 1))), [[1.0]])

    def test_two_nodes_one_edge(self):
        out = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_random_graphs_match_dense_oracle(self):
        rng = np.random.default_rng(20)
        for _ in range(200):
            v = int(rng.integers(1, 9))
            a = random_mask(rng, v)
            out = normalize_adjacency(a)
            np.testing.assert_allclose(out, dense_oracle(a), atol=1e-12)
            np.testing.assert_allclose(out, out.T, atol=0)
            assert np.all(out >= 0) and np.all(out <= 1)

    def test_anatomy_graph_has_positive_diagonal(self):
        for layout in (DEFAULT_LAYOUT, JointLayout(("a", "b", "c"), ((0, 1),))):
            out = normalize_adjacency(build_anatomy_graph(layout))
            assert np.all(np.diag(out) > 0)


class TestDifferentiableTwin:
    def test_matches_numpy_path(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            v = int(rng.integers(2, 9))
            a = random_mask(rng, v)
            tape = ad.Tape()
            out = normalize_adjacency_t(tape.leaf(a))
            np.testing.assert_allclose(out.data, normalize_adjacency(a), atol=1e-12)

    def test_gradient_flows_through_degrees(self):
        rng = np.random.default_rng(22)
        a = random_mask(rng, 5)
        probe = rng.normal(size=(5, 5))
        probe = probe + probe.T

        def f():
            tape = ad.Tape()
            out = normalize_adjacency_t(tape.leaf(a))
            return float(ad.mean_all(ad.mul(out, tape.leaf(probe))).data)

        tape = ad.Tape()
        at = tape.leaf(a)
        ad.backward(ad.mean_all(ad.mul(normalize_adjacency_t(at), tape.leaf(probe))))
        check_grad(f, a, at.grad, tol=1e-6)
