"""Co-clustering, draw selection, relabeling, re-estimation, and
nearest-neighbor prediction."""
import numpy as np
import pytest

from rsd.gibbs import ChainTrace
from rsd.postprocess import (
    coclustering_matrix,
    dahl_select,
    nearest_labels,
    predict,
    reestimate_lasso,
    reestimate_ridge,
    relabel,
    SegmentationResult,
    summarize_trace,
)
from rsd.state import Dataset, HyperParams


def trace_from_labels(label_matrix) -> ChainTrace:
    g = np.asarray(label_matrix, dtype=np.int32)
    L, n = g.shape
    return ChainTrace(
        stored_g=g,
        stored_Beta=np.zeros((L, 2, 1)),
        stored_sigma_sq=np.ones((L, 2)),
        stored_K_nonempty=np.array([np.unique(r).size for r in g], dtype=np.int32),
        stored_iters=np.arange(1, L + 1),
    )


def brute_force_coclustering(g):
    L, n = g.shape
    d = np.zeros((n, n))
    for l in range(L):
        for i in range(n):
            for j in range(n):
                d[i, j] += g[l, i] == g[l, j]
    return d / L


def brute_force_dahl(g, d):
    losses = []
    for labels in g:
        loss = 0.0
        for i in range(g.shape[1]):
            for j in range(g.shape[1]):
                loss += (float(labels[i] == labels[j]) - d[i, j]) ** 2
        losses.append(loss)
    return int(np.argmin(losses)), losses


class TestCoclustering:
    def test_single_iteration_is_indicator(self):
        trace = trace_from_labels([[0, 0, 1]])
        d = coclustering_matrix(trace)
        np.testing.assert_array_equal(d, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])

    def test_two_iteration_hand_case(self):
        trace = trace_from_labels([[1, 1, 2], [1, 2, 2]])
        d = coclustering_matrix(trace)
        assert d[0, 1] == pytest.approx(0.5)
        assert d[1, 2] == pytest.approx(0.5)
        assert d[0, 2] == pytest.approx(0.0)

    def test_symmetric_unit_diagonal(self):
        gen = np.random.default_rng(0)
        trace = trace_from_labels(gen.integers(0, 3, size=(7, 6)))
        d = coclustering_matrix(trace)
        np.testing.assert_array_equal(d, d.T)
        np.testing.assert_allclose(np.diag(d), 1.0)
        assert np.all((d >= 0) & (d <= 1))

    def test_matches_brute_force(self):
        gen = np.random.default_rng(1)
        for _ in range(5):
            g = gen.integers(0, 4, size=(gen.integers(1, 10), gen.integers(2, 8)))
            trace = trace_from_labels(g)
            np.testing.assert_allclose(coclustering_matrix(trace), brute_force_coclustering(g))


class TestDahlSelect:
    def test_degenerate_trace_returns_first(self):
        trace = trace_from_labels([[0, 1, 1]] * 4)
        d = coclustering_matrix(trace)
        assert dahl_select(trace, d) == 0

    def test_hand_case_tie_breaks_to_first(self):
        trace = trace_from_labels([[1, 1, 2], [1, 2, 2]])
        d = coclustering_matrix(trace)
        _, losses = brute_force_dahl(trace.stored_g, d)
        np.testing.assert_allclose(losses, [1.0, 1.0])
        assert dahl_select(trace, d) == 0

    def test_majority_partition_wins(self):
        g = [[0, 0, 1, 1]] * 5 + [[0, 1, 2, 2]]
        trace = trace_from_labels(g)
        d = coclustering_matrix(trace)
        assert dahl_select(trace, d) == 0

    def test_matches_brute_force_random(self):
        gen = np.random.default_rng(2)
        for _ in range(10):
            g = gen.integers(0, 3, size=(gen.integers(2, 10), gen.integers(3, 8)))
            trace = trace_from_labels(g)
            d = coclustering_matrix(trace)
            expected, _ = brute_force_dahl(g, d)
            assert dahl_select(trace, d) == expected

    def test_loss_invariant_to_label_permutation(self):
        gen = np.random.default_rng(3)
        g = gen.integers(0, 3, size=(6, 7))
        trace_a = trace_from_labels(g)
        permuted = np.array([[2, 0, 1][v] for v in g.ravel()]).reshape(g.shape)
        trace_b = trace_from_labels(permuted)
        d_a = coclustering_matrix(trace_a)
        d_b = coclustering_matrix(trace_b)
        np.testing.assert_allclose(d_a, d_b)
        assert dahl_select(trace_a, d_a) == dahl_select(trace_b, d_b)


class TestRelabel:
    def test_first_appearance_order(self):
        labels, k = relabel([7, 7, 3, 7])
        np.testing.assert_array_equal(labels, [1, 1, 2, 1])
        assert k == 2

    def test_idempotent_on_compact(self):
        labels, k = relabel([1, 2, 1, 3])
        np.testing.assert_array_equal(labels, [1, 2, 1, 3])
        assert k == 3

    def test_all_distinct(self):
        labels, k = relabel([9, 4, 11, 2])
        np.testing.assert_array_equal(labels, [1, 2, 3, 4])
        assert k == 4

    def test_partition_preserved(self):
        gen = np.random.default_rng(4)
        raw = gen.integers(0, 6, size=40) * 3 + 5
        labels, _ = relabel(raw)
        same_before = raw[:, None] == raw[None, :]
        same_after = labels[:, None] == labels[None, :]
        np.testing.assert_array_equal(same_before, same_after)


def make_segment_data(n=200, p=3, seed=0, sigma0=1.0, beta=None, n_segments=2):
    gen = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), gen.standard_normal((n, p - 1))])
    labels = gen.integers(1, n_segments + 1, size=n)
    beta = gen.uniform(-3, 3, size=(n_segments, p)) if beta is None else beta
    counts = 15.0 + gen.poisson(20.0, n)
    y = np.einsum("np,np->n", X, beta[labels - 1])
    if sigma0 > 0:
        y = y + gen.standard_normal(n) * sigma0 / np.sqrt(counts)
    S = gen.uniform(size=(n, 2))
    data = Dataset(y=y, X=X, S=S, counts=counts, intercept_col=0)
    return data, labels, beta


class TestReestimateRidge:
    def test_noiseless_recovery(self):
        data, labels, beta = make_segment_data(n=400, sigma0=0.0, seed=1)
        hp = HyperParams()
        Beta_hat, sigma_hat, intervals = reestimate_ridge(data, labels, hp)
        assert np.abs(Beta_hat - beta).max() < 0.01
        assert np.all(sigma_hat > 0)

    def test_hand_case(self):
        data = Dataset(
            y=np.array([2.0]), X=np.array([[1.0]]), S=np.array([[0.5, 0.5]]),
            counts=np.array([4.0]),
        )
        hp = HyperParams()
        Beta_hat, _, _ = reestimate_ridge(data, np.array([1]), hp)
        assert Beta_hat[0, 0] == pytest.approx(8.0 / 4.01)

    def test_weight_scaling_limit_matches_wls(self):
        data, labels, _ = make_segment_data(n=150, seed=2, n_segments=1)
        hp = HyperParams()
        kappa = 1e6
        scaled = Dataset(
            y=data.y, X=data.X, S=data.S, counts=data.counts * kappa, intercept_col=0
        )
        Beta_hat, _, _ = reestimate_ridge(scaled, labels, hp)
        W = data.counts
        wls = np.linalg.solve((data.X * W[:, None]).T @ data.X, (data.X * W[:, None]).T @ data.y)
        np.testing.assert_allclose(Beta_hat[0], wls, atol=1e-6)

    def test_interval_coverage(self):
        hp = HyperParams()
        covered = total = 0
        for seed in range(20):
            data, labels, beta = make_segment_data(n=300, p=5, seed=100 + seed, sigma0=10.0, n_segments=2)
            Beta_hat, _, intervals = reestimate_ridge(data, labels, hp)
            lo, hi = intervals[..., 0], intervals[..., 1]
            covered += int(((beta >= lo) & (beta <= hi)).sum())
            total += beta.size
        assert covered / total >= 0.94

    def test_empty_segment_raises(self):
        data, labels, _ = make_segment_data(n=50, seed=3)
        labels = np.where(labels == 2, 1, 1)
        labels[0] = 3  # label 2 missing entirely
        with pytest.raises(ValueError, match="no members"):
            reestimate_ridge(data, labels, HyperParams())


class TestReestimateLasso:
    def test_sparse_recovery(self):
        # regime where shrinkage pays for prediction: CV-min then zeroes
        # a given truly-null coefficient in most replicates
        n, p_feat, n_active = 400, 20, 3
        hits = 0
        for seed in range(10):
            gen = np.random.default_rng(100 + seed)
            beta = np.zeros(p_feat)
            act = gen.choice(p_feat, n_active, replace=False)
            beta[act] = np.where(gen.random(n_active) < 0.5, 1, -1) * gen.uniform(2, 4, n_active)
            X = np.column_stack([np.ones(n), gen.standard_normal((n, p_feat))])
            counts = 15.0 + gen.poisson(20.0, n)
            y = X[:, 1:] @ beta + gen.standard_normal(n) * 60.0 / np.sqrt(counts)
            data = Dataset(y=y, X=X, S=gen.uniform(size=(n, 2)), counts=counts, intercept_col=0)
            Beta_hat, fallback = reestimate_lasso(
                data, np.ones(n, dtype=int), HyperParams(prior_kind="lasso"), seed=seed
            )
            assert fallback is None
            first_null = np.flatnonzero(beta == 0)[0]
            hits += int(Beta_hat[0, 1 + first_null] == 0.0)
        assert hits / 10 > 0.8

    def test_tiny_segment_falls_back_to_ridge(self):
        data, labels, _ = make_segment_data(n=40, seed=6, n_segments=1)
        labels = labels.copy()
        labels[0] = 2  # singleton segment
        Beta_hat, fallback = reestimate_lasso(data, labels, HyperParams(prior_kind="lasso"))
        assert fallback == [2]
        assert np.all(np.isfinite(Beta_hat))


class TestPredict:
    def test_nearest_label_hand_geometry(self):
        train_S = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        labels = np.array([1, 2, 3])
        query = np.array([[0.1, 0.1], [0.9, 0.2], [0.2, 0.8]])
        np.testing.assert_array_equal(nearest_labels(train_S, labels, query), [1, 2, 3])

    def test_coincident_point_inherits_label(self):
        train_S = np.array([[0.3, 0.3], [0.7, 0.7]])
        labels = np.array([2, 1])
        assert nearest_labels(train_S, labels, np.array([[0.7, 0.7]]))[0] == 1

    def test_tie_takes_smallest_index(self):
        train_S = np.array([[0.0, 0.0], [1.0, 0.0]])
        labels = np.array([5, 6])
        assert nearest_labels(train_S, labels, np.array([[0.5, 0.0]]))[0] == 5

    def test_matches_brute_force(self):
        gen = np.random.default_rng(7)
        train_S = gen.uniform(size=(30, 2))
        labels = gen.integers(1, 4, size=30)
        query = gen.uniform(size=(10, 2))
        got = nearest_labels(train_S, labels, query)
        for idx, point in enumerate(query):
            dists = np.linalg.norm(train_S - point, axis=1)
            assert got[idx] == labels[np.argmin(dists)]

    def test_empty_training_errors(self):
        with pytest.raises(ValueError, match="empty"):
            nearest_labels(np.empty((0, 2)), np.empty(0, dtype=int), np.array([[0.5, 0.5]]))

    def test_predict_uses_assigned_segment(self):
        result = SegmentationResult(
            labels=np.array([1, 2]),
            K_hat=2,
            Beta_hat=np.array([[1.0, 2.0], [3.0, -1.0]]),
            sigma_hat_sq=np.ones(2),
            intervals=None,
            selected_iter=0,
        )
        train_S = np.array([[0.1, 0.1], [0.9, 0.9]])
        test = Dataset(
            y=np.zeros(2),
            X=np.array([[1.0, 1.0], [1.0, 2.0]]),
            S=np.array([[0.0, 0.0], [1.0, 1.0]]),
            counts=np.ones(2),
        )
        labels, preds = predict(result, train_S, test)
        np.testing.assert_array_equal(labels, [1, 2])
        np.testing.assert_allclose(preds, [3.0, 1.0])

    def test_single_segment_result(self):
        result = SegmentationResult(
            labels=np.array([1, 1, 1]),
            K_hat=1,
            Beta_hat=np.array([[2.0]]),
            sigma_hat_sq=np.ones(1),
            intervals=None,
            selected_iter=0,
        )
        test = Dataset(
            y=np.zeros(2), X=np.array([[1.0], [3.0]]),
            S=np.array([[0.2, 0.2], [0.8, 0.8]]), counts=np.ones(2),
        )
        labels, preds = predict(result, np.random.default_rng(0).uniform(size=(3, 2)), test)
        assert np.all(labels == 1)
        np.testing.assert_allclose(preds, [2.0, 6.0])


class TestSummarizeTrace:
    def test_labels_compact_and_models_aligned(self):
        data, labels, beta = make_segment_data(n=60, seed=8, n_segments=2)
        g0 = np.where(labels == 1, 4, 9)  # raw chain labels, non-compact
        trace = ChainTrace(
            stored_g=np.tile(g0, (60, 1)).astype(np.int32),
            stored_Beta=np.zeros((60, 10, data.p)),
            stored_sigma_sq=np.ones((60, 10)),
            stored_K_nonempty=np.full(60, 2, dtype=np.int32),
            stored_iters=np.arange(1, 61),
        )
        hp = HyperParams()
        result = summarize_trace(trace, data, hp)
        assert result.K_hat == 2
        assert set(result.labels) == {1, 2}
        assert result.Beta_hat.shape == (2, data.p)
        assert result.intervals.shape == (2, data.p, 2)
        assert result.selected_iter == 0
        # relabeled groups must match the raw partition (label 1 is the
        # first-appearing raw value)
        np.testing.assert_array_equal(result.labels == 1, g0 == g0[0])

    def test_lasso_branch_produces_sigma_and_no_intervals(self):
        data, labels, beta = make_segment_data(n=80, seed=9, n_segments=2)
        g0 = labels - 1
        trace = ChainTrace(
            stored_g=np.tile(g0, (50, 1)).astype(np.int32),
            stored_Beta=np.zeros((50, 10, data.p)),
            stored_sigma_sq=np.ones((50, 10)),
            stored_K_nonempty=np.full(50, 2, dtype=np.int32),
            stored_iters=np.arange(1, 51),
        )
        result = summarize_trace(trace, data, HyperParams(prior_kind="lasso"))
        assert result.intervals is None
        assert result.sigma_hat_sq.shape == (2,)
        assert np.all(result.sigma_hat_sq > 0)
