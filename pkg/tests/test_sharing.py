"""Tests for column clustering, tied retraining, and the shared-layer equivalence."""

import itertools

import numpy as np
import pytest

from shiftadd.nncore import Dataset, Layer, ModelParams, TrainConfig, init_mlp, train
from shiftadd.numerics import FixedPointConfig
from shiftadd.sharing import (
    Cluster,
    ClusterModel,
    SharedLayer,
    affinity_propagation,
    build_equivalent,
    centroid_gradient,
    cluster_columns,
    column_similarity,
    pooling_additions,
    retrain_shared,
    shared_cost,
)


def exhaustive_exemplars(S: np.ndarray, preference: float) -> tuple[int, ...]:
    """Best exemplar subset by net similarity, over all non-empty subsets.

    Net similarity = sum of exemplar preferences + sum over the other points of
    their best similarity to an exemplar.  Ties prefer fewer exemplars, then
    the lexicographically smallest set.
    """
    n = S.shape[0]
    best_key, best_set = None, None
    for size in range(1, n + 1):
        for E in itertools.combinations(range(n), size):
            score = size * preference
            ok = True
            for i in range(n):
                if i in E:
                    continue
                score += max(S[i, e] for e in E)
            key = (score, -size)
            if best_key is None or key > best_key:
                best_key, best_set = key, E
    return best_set


def separated_cluster_instance(seed: int):
    """2-D points in two well-separated blobs of >= 3 points each.

    Blobs of at least three points make the net-similarity optimum unique
    (a two-point cluster scores identically for either representative).
    """
    rng = np.random.default_rng(seed)
    sizes = [(3, 3), (3, 4), (4, 4), (3, 5)][int(rng.integers(0, 4))]
    centers = rng.uniform(-10, 10, size=(2, 2))
    while np.linalg.norm(centers[0] - centers[1]) < 8.0:
        centers = rng.uniform(-10, 10, size=(2, 2))
    pts = np.vstack(
        [centers[b] + 0.4 * rng.normal(size=(sz, 2)) for b, sz in enumerate(sizes)]
    )
    return pts.T  # columns are points


def oracle_partition(S: np.ndarray, exemplars) -> set[frozenset]:
    labels = [max(exemplars, key=lambda e: S[i, e]) if i not in exemplars else i for i in range(S.shape[0])]
    for e in exemplars:
        labels[e] = e
    return {frozenset(i for i in range(len(labels)) if labels[i] == e) for e in exemplars}


class TestColumnSimilarity:
    def test_identical_columns(self):
        W = np.ones((3, 4))
        np.testing.assert_array_equal(column_similarity(W), np.zeros((4, 4)))

    def test_orthonormal_columns(self):
        S = column_similarity(np.eye(3))
        off = S[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, -2.0, rtol=1e-15)
        np.testing.assert_array_equal(np.diag(S), np.zeros(3))

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        S = column_similarity(rng.normal(size=(5, 7)))
        np.testing.assert_array_equal(S, S.T)


class TestAffinityPropagation:
    def test_single_point(self):
        res = affinity_propagation(np.zeros((1, 1)))
        assert res.exemplars.tolist() == [0]
        assert res.labels.tolist() == [0]
        assert res.converged

    def test_two_separated_pairs(self):
        # exemplar identity inside a 2-point cluster is a tie; the partition is not
        W = np.array([[0.0, 0.01, 5.0, 5.01], [0.0, -0.01, 5.0, 5.02]])
        S = column_similarity(W)
        res = affinity_propagation(S)
        assert len(res.exemplars) == 2
        assert res.labels[0] == res.labels[1]
        assert res.labels[2] == res.labels[3]
        off = S[~np.eye(4, dtype=bool)]
        oracle = exhaustive_exemplars(S, float(np.median(off)))
        got_partition = {frozenset(np.flatnonzero(res.labels == e)) for e in res.exemplars}
        assert got_partition == oracle_partition(S, oracle)

    def test_identical_points_form_one_cluster(self):
        W = np.ones((3, 5))
        res = affinity_propagation(column_similarity(W))
        assert len(res.exemplars) == 1
        assert np.all(res.labels == res.exemplars[0])

    def test_matches_exhaustive_oracle(self):
        hits = 0
        for seed in range(10):
            pts = separated_cluster_instance(seed)
            S = column_similarity(pts)
            off = S[~np.eye(S.shape[0], dtype=bool)]
            res = affinity_propagation(S)
            if tuple(res.exemplars) == exhaustive_exemplars(S, float(np.median(off))):
                hits += 1
        assert hits == 10

    def test_partition_invariants_large(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(10, 100))
        res = affinity_propagation(column_similarity(W))
        assert sorted(set(res.labels.tolist())) == sorted(res.exemplars.tolist())
        np.testing.assert_array_equal(res.labels[res.exemplars], res.exemplars)
        assert res.labels.shape == (100,)

    def test_non_convergence_flag(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(6, 12))
        res = affinity_propagation(column_similarity(W), max_iter=2)
        assert not res.converged
        assert res.labels.shape == (12,)  # last assignment still returned

    def test_cluster_count_monotone_in_preference_multiplier(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(8, 30))
        S = column_similarity(W)
        off = S[~np.eye(30, dtype=bool)]
        med = float(np.median(off))
        counts = [
            len(affinity_propagation(S, preference=k * med).exemplars) for k in (0.5, 1.0, 2.0)
        ]
        assert counts[0] >= counts[1] >= counts[2]


class TestCentroidGradient:
    def test_opposite_gradients_cancel(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(centroid_gradient([g, -g]), np.zeros(2))

    def test_singleton(self):
        g = np.array([0.5, 0.25])
        np.testing.assert_array_equal(centroid_gradient([g]), g)

    def test_componentwise_mean(self):
        grads = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([2.0, 2.0])]
        np.testing.assert_array_equal(centroid_gradient(grads), [1.0, 1.0])

    def test_empty_cluster(self):
        with pytest.raises(ValueError):
            centroid_gradient([])


def toy_dataset(seed: int, n: int = 64) -> Dataset:
    # label noise keeps the logistic problem non-separable (finite minimizer)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + x[:, 1] + 0.5 * rng.normal(size=n) > 0).astype(np.int64)
    return Dataset(x, y)


class TestRetrainShared:
    def test_zero_epochs_sets_columns_to_centroids(self):
        model = init_mlp([4, 3, 2], seed=4)
        W = model.layers[0].W
        cm = cluster_columns(W)
        out, final = retrain_shared(model, 0, cm, toy_dataset(5, 8), TrainConfig(epochs=0, seed=5))
        for c in final.clusters:
            for j in c.members:
                np.testing.assert_array_equal(out.layers[0].W[:, j], c.centroid)

    def test_all_singletons_equals_ordinary_training(self):
        data = toy_dataset(6)
        model = init_mlp([2, 4, 2], seed=6)
        cfg = TrainConfig(epochs=3, seed=6, batch_size=16)
        singletons = ClusterModel(
            [Cluster(model.layers[0].W[:, j].copy(), np.array([j])) for j in range(2)]
        )
        shared, _ = retrain_shared(model, 0, singletons, data, cfg)
        plain, _ = train(model, data, cfg)
        for a, b in zip(shared.layers, plain.layers):
            np.testing.assert_array_equal(a.W, b.W)
            np.testing.assert_array_equal(a.b, b.b)

    def test_tying_invariant_is_exact(self):
        data = toy_dataset(7)
        model = init_mlp([2, 6, 2], seed=7)
        cm = ClusterModel(
            [
                Cluster(model.layers[0].W[:, :2].mean(axis=1), np.array([0, 1])),
            ]
        )
        out, final = retrain_shared(model, 0, cm, data, TrainConfig(epochs=4, seed=7, batch_size=16))
        W = out.layers[0].W
        assert np.max(np.abs(W[:, 0] - W[:, 1])) == 0.0

    def test_matches_reparameterized_oracle(self):
        # two tied input columns vs a 1-feature model on the summed input;
        # the dataset is symmetrized so bias gradients cancel (the tied and
        # oracle runs use different learning rates, which only the centroid
        # update is meant to absorb)
        base = toy_dataset(8, n=64)
        x = np.vstack([base.x, -base.x])
        y = np.concatenate([base.y, 1 - base.y])
        data = Dataset(x, y)
        rng = np.random.default_rng(9)
        W0 = rng.normal(size=(2, 1)) * 0.1
        tied_model = ModelParams([Layer(np.repeat(W0, 2, axis=1), np.zeros(2), "dense", "identity")])
        cm = ClusterModel([Cluster(W0[:, 0].copy(), np.array([0, 1]))])
        cfg = TrainConfig(epochs=300, seed=10, batch_size=128, lr=0.2, momentum=0.0)
        out, final = retrain_shared(tied_model, 0, cm, data, cfg)

        pooled = Dataset(data.x.sum(axis=1, keepdims=True), data.y)
        oracle = ModelParams([Layer(W0.copy(), np.zeros(2), "dense", "identity")])
        # centroid gradient is the member mean: same trajectory needs lr / |C|
        ocfg = TrainConfig(epochs=300, seed=10, batch_size=128, lr=0.1, momentum=0.0)
        oracle_out, _ = train(oracle, pooled, ocfg)

        np.testing.assert_array_equal(out.layers[0].W[:, 0], out.layers[0].W[:, 1])
        np.testing.assert_allclose(
            out.layers[0].W[:, 0], oracle_out.layers[0].W[:, 0], atol=1e-8
        )


class TestSharedLayer:
    def test_all_singletons_is_the_matrix_itself(self):
        rng = np.random.default_rng(11)
        W = rng.normal(size=(3, 4))
        cm = ClusterModel([Cluster(W[:, j].copy(), np.array([j])) for j in range(4)])
        layer = build_equivalent(W, cm)
        np.testing.assert_array_equal(layer.G, W)
        assert pooling_additions(layer) == 0

    def test_one_cluster_pools_everything(self):
        g = np.array([1.0, -2.0, 0.5])
        W = np.tile(g[:, None], (1, 5))
        cm = ClusterModel([Cluster(g, np.arange(5))])
        layer = build_equivalent(W, cm)
        assert layer.G.shape == (3, 1)
        assert pooling_additions(layer) == 4
        x = np.arange(5.0)
        np.testing.assert_allclose(layer.matvec(x), g * x.sum(), rtol=1e-15)

    def test_two_pair_clusters(self):
        rng = np.random.default_rng(12)
        a, b = rng.normal(size=3), rng.normal(size=3)
        W = np.column_stack([a, a, b, b])
        cm = ClusterModel([Cluster(a, np.array([0, 1])), Cluster(b, np.array([2, 3]))])
        layer = build_equivalent(W, cm)
        for _ in range(5):
            x = rng.normal(size=4)
            want = W @ x
            got = layer.matvec(x)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_mismatch_detected(self):
        W = np.column_stack([np.ones(2), np.ones(2) + 1e-6])
        cm = ClusterModel([Cluster(np.ones(2), np.array([0, 1]))])
        with pytest.raises(ValueError):
            build_equivalent(W, cm)

    def test_pooling_add_counts(self):
        layer = SharedLayer(
            np.zeros((2, 3)), [np.arange(3), np.array([3, 4]), np.array([5])]
        )
        assert pooling_additions(layer) == 3

    def test_shared_cost_includes_pooling(self):
        G = np.array([[1.0, 0.5]])
        layer = SharedLayer(G, [np.array([0, 1, 2]), np.array([3])])
        report = shared_cost(layer, FixedPointConfig())
        assert report.adds == 2 + 1  # pooling (3-1 + 0) plus one add for the 2-digit row
        assert report.shifts == 2

    def test_post_retraining_equivalence(self):
        data = toy_dataset(13)
        model = init_mlp([2, 8, 2], seed=13)
        cm = cluster_columns(model.layers[1].W)
        out, final = retrain_shared(model, 1, cm, data, TrainConfig(epochs=3, seed=13))
        layer = build_equivalent(out.layers[1].W, final)
        rng = np.random.default_rng(14)
        for _ in range(10):
            x = rng.normal(size=8)
            np.testing.assert_allclose(
                layer.matvec(x), out.layers[1].W @ x, rtol=1e-12, atol=1e-12
            )
