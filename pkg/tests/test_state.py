"""Domain-type validation, stick breaking, and chain initialization."""
import numpy as np
import pytest

from rsd.samplers import RngStream
from rsd.state import ChainConfig, Dataset, HyperParams, init_state, stick_break, stick_break_rows

from _helpers import tiny_dataset


class TestStickBreak:
    def test_first_stick_takes_all(self):
        np.testing.assert_allclose(stick_break([1.0, 0.3, 0.7]), [1.0, 0.0, 0.0])

    def test_direct_product_three(self):
        np.testing.assert_allclose(stick_break([0.5, 0.5, 1.0]), [0.5, 0.25, 0.25])

    def test_direct_product_four(self):
        np.testing.assert_allclose(
            stick_break([0.2, 0.2, 0.2, 1.0]), [0.2, 0.16, 0.128, 0.512]
        )

    def test_final_stick_forced_to_one(self):
        q = stick_break([0.2, 0.2, 0.2, 0.4])
        assert q[-1] == pytest.approx(0.512)
        assert q.sum() == pytest.approx(1.0)

    def test_simplex_property_random_sticks(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            k = gen.integers(2, 12)
            q = stick_break(gen.uniform(0, 1, size=k))
            assert np.all(q >= 0)
            assert q.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_own_stick(self):
        base = np.array([0.3, 0.4, 0.2, 1.0])
        bumped = base.copy()
        bumped[1] += 0.2
        assert stick_break(bumped)[1] > stick_break(base)[1]

    def test_domain_error(self):
        with pytest.raises(ValueError):
            stick_break([0.5, 1.2, 1.0])

    def test_rowwise_matches_single(self):
        sticks = np.array([[0.5, 0.5, 1.0], [0.2, 0.2, 0.2]])
        rows = stick_break_rows(sticks)
        for r in range(2):
            np.testing.assert_allclose(rows[r], stick_break(sticks[r]))


class TestDataset:
    def test_row_count_mismatch(self):
        ds = tiny_dataset()
        ds.counts = ds.counts[:-1]
        with pytest.raises(ValueError, match="matching row counts"):
            ds.validate()

    def test_nonfinite_rejected(self):
        ds = tiny_dataset()
        ds.y[0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ds.validate()

    def test_counts_floor(self):
        ds = tiny_dataset()
        ds.counts[0] = 0.0
        with pytest.raises(ValueError, match="count"):
            ds.validate()

    def test_unit_square_enforced(self):
        ds = tiny_dataset()
        ds.S[0, 0] = 1.5
        with pytest.raises(ValueError, match="unit square"):
            ds.validate()
        ds.validate(unit_square=False)


class TestHyperParams:
    def test_defaults_valid(self):
        HyperParams().validate()

    @pytest.mark.parametrize("field,value", [
        ("K", 1), ("M", 0), ("tau0_sq", 0.0), ("lasso_lambda", -1.0), ("prior_kind", "net"),
    ])
    def test_invalid(self, field, value):
        hp = HyperParams(**{field: value})
        with pytest.raises(ValueError):
            hp.validate()

    def test_ridge_psi_is_inverse_of_c(self):
        assert HyperParams(ridge_c=0.01).ridge_psi == pytest.approx(100.0)


class TestChainConfig:
    def test_defaults_valid(self):
        cfg = ChainConfig().validate()
        assert cfg.n_stored == 500

    @pytest.mark.parametrize("kwargs", [
        {"n_iters": 100, "burn_in": 100},
        {"thin": 0},
        {"n_iters": 109, "burn_in": 50, "thin": 2},
        {"n_iters": 140, "burn_in": 100, "thin": 1},  # fewer than 50 stored
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ChainConfig(**kwargs).validate()


class TestInitState:
    def setup_method(self):
        self.data = tiny_dataset(n=10, p=3)
        self.hp = HyperParams(K=4, M=3)

    def test_invariants(self):
        state = init_state(self.data, self.hp, RngStream(0))
        assert state.q.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(state.P.sum(axis=1), 1.0)
        assert np.all(state.q >= 0) and np.all(state.P >= 0)
        assert np.all((state.Mu > -1) & (state.Mu < 1))
        assert np.all(state.tau_sq > 0) and np.all(state.sigma_sq > 0)
        assert np.all(state.Psi > 0) and state.bU > 0 and state.bV > 0
        assert state.g.min() >= 0 and state.g.max() < self.hp.K
        assert state.h.min() >= 0 and state.h.max() < self.hp.M

    def test_deterministic(self):
        a = init_state(self.data, self.hp, RngStream(42))
        b = init_state(self.data, self.hp, RngStream(42))
        np.testing.assert_array_equal(a.g, b.g)
        np.testing.assert_array_equal(a.Beta, b.Beta)
        np.testing.assert_array_equal(a.Mu, b.Mu)

    def test_membership_support(self):
        hp = HyperParams(K=2, M=2)
        state = init_state(self.data, hp, RngStream(1))
        assert set(np.unique(state.g)) <= {0, 1}

    def test_lasso_psi_start(self):
        data = tiny_dataset(n=10, p=3, intercept=True)
        hp = HyperParams(K=3, M=2, prior_kind="lasso")
        state = init_state(data, hp, RngStream(2))
        assert np.all(state.Psi[:, 0] == hp.ridge_psi)
        assert np.all(state.Psi[:, 1:] == 1.0)

    def test_ridge_psi_start(self):
        state = init_state(self.data, self.hp, RngStream(3))
        assert np.all(state.Psi == 100.0)
