"""BIC scoring, free-parameter counts, and the G sweep."""

import numpy as np
import pytest

import contamix as cm
from contamix.exceptions import DomainError
from contamix.selection import bic, param_count, sweep_G

from conftest import random_spd


class TestBic:
    def test_trivial_values(self):
        assert bic(0.0, 0, 10) == 0.0
        assert bic(-100.0, 10, np.e**2) == pytest.approx(-220.0)

    def test_monotonicity(self):
        assert bic(-90.0, 10, 100) > bic(-100.0, 10, 100)
        assert bic(-100.0, 5, 100) > bic(-100.0, 10, 100)

    def test_requires_positive_n(self):
        with pytest.raises(DomainError):
            bic(0.0, 1, 0)


class TestParamCount:
    def test_enumerated_values(self):
        assert param_count("sal", 1, 1) == 5
        assert param_count("sn", 2, 2) == 19

    def test_families_agree(self):
        for G in (1, 2, 3):
            for p in (1, 2, 5):
                assert param_count("sal", G, p) == param_count("sn", G, p)

    def test_serialization_oracle(self, rng):
        # count entries of an explicit free-parameter vector
        for _ in range(20):
            G = int(rng.integers(1, 5))
            p = int(rng.integers(1, 6))
            free = []
            free.extend(range(G - 1))              # mixing weights
            for _ in range(G):
                free.append("lam")
                free.append("eta")
                free.extend(["mu"] * p)
                free.extend(["alpha"] * p)
                free.extend(["sigma"] * (p * (p + 1) // 2))
            assert param_count("sal", G, p) == len(free)

    def test_fitted_benchmark_bic_uses_this_count(self):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=0))
        fit = cm.fit_sal(data, 2, cm.FitConfig(seed=0, n_starts=1, max_iter=60))
        rho = param_count("sal", 2, 2)
        assert rho == 19
        assert fit.bic == pytest.approx(bic(fit.loglik, rho, data.n))


class TestSweep:
    def test_singleton_range(self):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=1))
        res = sweep_G(data, [2], "sal", cm.FitConfig(seed=0, n_starts=1,
                                                     max_iter=1500))
        assert res.best_G == 2
        assert res.best is res.fits[2]

    def test_single_gaussian_blob_prefers_one(self, rng):
        x = rng.standard_normal((150, 2)) @ np.linalg.cholesky(
            random_spd(rng, 2, 0.3)).T
        data = cm.Dataset(x=x)
        res = sweep_G(data, [1, 2], "sn",
                      cm.FitConfig(seed=3, n_starts=2, max_iter=1500))
        assert res.best_G == 1

    def test_best_is_max_bic_among_converged(self):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=2))
        res = sweep_G(data, [1, 2], "sal",
                      cm.FitConfig(seed=1, n_starts=2, max_iter=1500))
        converged = {g: f for g, f in res.fits.items() if f.converged}
        assert res.best_G == max(sorted(converged), key=lambda g: converged[g].bic)

    def test_empty_range_rejected(self):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=1))
        with pytest.raises(DomainError):
            sweep_G(data, [], "sal", cm.FitConfig())

    def test_reproducible_given_seed(self):
        data = cm.scenario_dataset(cm.table1_scenario("sal", seed=4))
        cfg = cm.FitConfig(seed=9, n_starts=2, max_iter=1500)
        a = sweep_G(data, [2], "sal", cfg)
        b = sweep_G(data, [2], "sal", cfg)
        assert a.best.loglik == b.best.loglik
        np.testing.assert_array_equal(a.best.hard_labels, b.best.hard_labels)
        np.testing.assert_array_equal(a.best.z_hat, b.best.z_hat)
