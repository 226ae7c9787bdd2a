"""Generator tests: moment checks against the stochastic representations,
bad-point injection contracts, and seed determinism."""

import numpy as np
import pytest

import contamix as cm
from contamix.exceptions import DomainError
from contamix.simulate import default_box, scenario_dataset, table1_scenario

from conftest import random_spd


class TestSampleSal:
    def test_moments_zero_alpha(self, rng):
        mu = np.array([1.0, -2.0])
        sigma = np.array([[1.0, 0.4], [0.4, 2.0]])
        n = 400_000
        x = cm.sample_sal(n, mu, sigma, np.zeros(2), seed=1)
        se_mean = np.sqrt(np.diag(sigma) / n)
        assert np.all(np.abs(x.mean(axis=0) - mu) < 4 * se_mean)
        # Cov(X) = Sigma when alpha = 0
        cov = np.cov(x.T)
        assert np.all(np.abs(cov - sigma) < 4 * np.abs(sigma) * np.sqrt(10 / n) + 0.02)

    def test_mean_with_skew(self):
        # E[X] = mu + alpha under the exponential latent scale
        mu = np.array([0.5, 0.5])
        alpha = np.array([2.0, -1.0])
        sigma = np.eye(2)
        n = 400_000
        x = cm.sample_sal(n, mu, sigma, alpha, seed=2)
        sd = np.sqrt(np.diag(sigma) + 2 * alpha**2)
        assert np.all(np.abs(x.mean(axis=0) - (mu + alpha)) < 4 * sd / np.sqrt(n))

    def test_covariance_with_skew(self):
        mu = np.zeros(2)
        alpha = np.array([1.0, 1.0])
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        x = cm.sample_sal(500_000, mu, sigma, alpha, seed=3)
        expect = sigma + np.outer(alpha, alpha)
        got = np.cov(x.T)
        assert np.all(np.abs(got - expect) < 0.05 * np.abs(expect) + 0.03)

    def test_empty(self):
        assert cm.sample_sal(0, np.zeros(3), np.eye(3), np.zeros(3), seed=0).shape == (0, 3)


class TestSampleSn:
    def test_mean(self):
        mu = np.array([1.0, -1.0, 0.0])
        alpha = np.array([2.0, 0.0, -1.5])
        sigma = np.eye(3)
        n = 400_000
        x = cm.sample_sn(n, mu, sigma, alpha, seed=4)
        expect = mu + np.sqrt(2 / np.pi) * alpha
        sd = np.sqrt(np.diag(sigma) + alpha**2)
        assert np.all(np.abs(x.mean(axis=0) - expect) < 4 * sd / np.sqrt(n))

    def test_zero_alpha_is_gaussian(self, rng):
        sigma = random_spd(rng, 2, 0.5)
        mu = np.array([0.3, -0.6])
        x = cm.sample_sn(400_000, mu, sigma, np.zeros(2), seed=5)
        assert np.all(np.abs(x.mean(axis=0) - mu) < 0.02)
        assert np.all(np.abs(np.cov(x.T) - sigma) < 0.05 * np.abs(sigma) + 0.02)
        # third central moments vanish for a Gaussian
        c = x - x.mean(axis=0)
        m3 = (c**3).mean(axis=0)
        assert np.all(np.abs(m3) < 0.05)

    def test_density_generator_consistency(self):
        # histogram of a large sample tracks exp(sn_logpdf) on a grid
        mu, sigma, alpha = np.array([0.0]), np.array([[1.0]]), np.array([1.5])
        x = cm.sample_sn(2_000_000, mu, sigma, alpha, seed=6)[:, 0]
        edges = np.linspace(-3, 5, 41)
        hist, _ = np.histogram(x, bins=edges, density=True)
        centers = 0.5 * (edges[1:] + edges[:-1])
        dens = np.exp([cm.sn_logpdf(np.array([c]), mu, sigma, alpha)
                       for c in centers])
        assert np.max(np.abs(hist - dens)) < 0.01


class TestInjectBad:
    def test_zero_count(self, rng):
        x = rng.standard_normal((50, 2))
        out, flags = cm.inject_bad(x, 0, default_box(x), seed=1)
        np.testing.assert_array_equal(out, x)
        assert not flags.any()

    def test_count_and_flags(self, rng):
        x = rng.standard_normal((180, 2))
        box = default_box(x)
        out, flags = cm.inject_bad(x, 20, box, seed=2)
        assert out.shape == (200, 2)
        assert flags.sum() == 20
        assert flags[180:].all()
        injected = out[flags]
        assert np.all(injected >= box[0]) and np.all(injected <= box[1])

    def test_bad_box_rejected(self, rng):
        x = rng.standard_normal((10, 2))
        with pytest.raises(DomainError):
            cm.inject_bad(x, 5, np.array([[0.0, 0.0], [-1.0, 1.0]]), seed=0)


class TestScenario:
    def test_benchmark_preset_values(self):
        sc = table1_scenario("sal", seed=0)
        (n1, mu1, a1, s1), (n2, mu2, a2, s2) = sc.components
        assert n1 == n2 == 90
        np.testing.assert_array_equal(mu1, [1.0, -2.0])
        np.testing.assert_array_equal(mu2, [5.0, -5.0])
        np.testing.assert_array_equal(a1, [1.0, 1.0])
        np.testing.assert_array_equal(a2, [-1.0, -1.0])
        assert s1[0, 1] == 0.5
        np.testing.assert_array_equal(s2, np.eye(2))
        assert sc.n_bad == 20

    def test_dataset_shape_and_labels(self):
        data = scenario_dataset(table1_scenario("sn", seed=3))
        assert data.x.shape == (200, 2)
        assert data.bad_truth.sum() == 20
        assert set(np.unique(data.labels)) == {0, 1, 2}
        assert (data.labels[data.bad_truth] == 2).all()

    def test_seed_determinism(self):
        a = scenario_dataset(table1_scenario("sal", seed=11))
        b = scenario_dataset(table1_scenario("sal", seed=11))
        np.testing.assert_array_equal(a.x, b.x)
        c = scenario_dataset(table1_scenario("sal", seed=12))
        assert not np.array_equal(a.x, c.x)

    def test_roundtrip_dict(self):
        sc = table1_scenario("sal", seed=5)
        sc2 = cm.Scenario.from_dict(sc.to_dict())
        assert sc2.family == sc.family
        assert sc2.n_bad == sc.n_bad
        np.testing.assert_array_equal(sc2.components[0][1], sc.components[0][1])

    def test_generator_beats_perturbed_parameters(self):
        # the generating parameters dominate a 1-sd location shift in
        # likelihood for nearly every seed
        wins = 0
        trials = 20
        for s in range(trials):
            sc = table1_scenario("sal", seed=100 + s, n_bad=0)
            data = scenario_dataset(sc)
            comps, comps_shifted = [], []
            for (n_g, mu, alpha, sigma) in sc.components:
                kw = dict(pi=0.5, lam=0.99, eta=1.01, alpha=alpha, sigma=sigma,
                          family="sal")
                comps.append(cm.ComponentParams(mu=mu, **kw))
                comps_shifted.append(cm.ComponentParams(mu=mu + 1.0, **kw))
            good = cm.mixture_loglik(data, cm.MixtureModel("sal", tuple(comps)))
            shifted = cm.mixture_loglik(data, cm.MixtureModel("sal", tuple(comps_shifted)))
            wins += good > shifted
        assert wins >= 0.95 * trials
