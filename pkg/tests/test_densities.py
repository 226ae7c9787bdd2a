"""Density-layer tests: closed forms, simulation-based oracles, cubature
normalization and the degenerate-parameter reductions."""

import numpy as np
import pytest
from scipy import integrate, stats

import contamix as cm
from contamix.densities import (ComponentParams, MixtureModel,
                                contaminated_component_logpdf, mixture_loglik,
                                mixture_logpdf_rows, sal_logpdf, sn_logpdf)
from contamix.exceptions import DomainError

from conftest import random_spd


def table1_component(idx, family):
    mus = [np.array([1.0, -2.0]), np.array([5.0, -5.0])]
    alphas = [np.array([1.0, 1.0]), np.array([-1.0, -1.0])]
    sigmas = [np.array([[1.0, 0.5], [0.5, 1.0]]), np.eye(2)]
    return dict(mu=mus[idx], alpha=alphas[idx], sigma=sigmas[idx])


class TestSalLogpdf:
    def test_univariate_symmetric_laplace(self):
        # alpha = 0, Sigma = 1 reduces to the Laplace with rate sqrt(2)
        got = sal_logpdf(np.array([1.0]), np.array([0.0]), np.array([[1.0]]),
                         np.array([0.0]))
        assert got == pytest.approx(np.log(np.exp(-np.sqrt(2)) / np.sqrt(2)),
                                    rel=1e-12)

    def test_symmetry_at_zero_alpha(self, rng):
        sigma = random_spd(rng, 3)
        mu = rng.standard_normal(3)
        for _ in range(10):
            d = rng.standard_normal(3)
            a = sal_logpdf(mu + d, mu, sigma, np.zeros(3))
            b = sal_logpdf(mu - d, mu, sigma, np.zeros(3))
            assert a == pytest.approx(b, rel=1e-12)

    def test_density_oracle_from_generator(self):
        # box-count Monte Carlo estimate of the density at one point
        pars = table1_component(0, "sal")
        x0 = np.array([1.0, -2.0]) + np.array([0.5, 0.5])
        n = 4_000_000
        h = 0.12
        draws = cm.sample_sal(n, pars["mu"], pars["sigma"], pars["alpha"], seed=99)
        inside = np.all(np.abs(draws - x0) < h / 2, axis=1)
        p_hat = inside.mean()
        dens_mc = p_hat / h**2
        se = np.sqrt(p_hat * (1 - p_hat) / n) / h**2
        dens = np.exp(sal_logpdf(x0, pars["mu"], pars["sigma"], pars["alpha"]))
        # 3 standard errors plus a small allowance for box-discretization bias
        assert abs(dens - dens_mc) < 3 * se + 0.02 * dens

    def test_singularity_clamped(self):
        mu = np.array([0.4, -0.1])
        got = sal_logpdf(mu, mu, np.eye(2), np.array([0.2, 0.1]))
        assert np.isfinite(got)
        got3 = sal_logpdf(np.zeros(3), np.zeros(3), np.eye(3), np.zeros(3))
        assert np.isfinite(got3)

    def test_normalization_p1(self):
        f = lambda x: np.exp(sal_logpdf(np.array([x]), np.array([0.3]),
                                        np.array([[0.7]]), np.array([-0.8])))
        val, _ = integrate.quad(f, -60, 40, limit=300)
        assert val == pytest.approx(1.0, abs=1e-6)


class TestSnLogpdf:
    def test_reduces_to_gaussian_at_zero_alpha(self, rng):
        for p in (1, 2, 3, 5):
            sigma = random_spd(rng, p)
            mu = rng.standard_normal(p)
            x = rng.standard_normal(p)
            got = sn_logpdf(x, mu, sigma, np.zeros(p))
            expect = stats.multivariate_normal.logpdf(x, mu, sigma)
            assert got == pytest.approx(expect, abs=1e-10)

    def test_univariate_closed_form(self):
        got = sn_logpdf(np.array([0.0]), np.array([0.0]), np.array([[1.0]]),
                        np.array([1.0]))
        assert got == pytest.approx(np.log(stats.norm.pdf(0, 0, np.sqrt(2))),
                                    rel=1e-12)

    def test_density_oracle_from_generator(self):
        pars = table1_component(1, "sn")
        x0 = np.array([5.0, -5.0])
        n = 4_000_000
        h = 0.12
        draws = cm.sample_sn(n, pars["mu"], pars["sigma"], pars["alpha"], seed=7)
        inside = np.all(np.abs(draws - x0) < h / 2, axis=1)
        p_hat = inside.mean()
        dens_mc = p_hat / h**2
        se = np.sqrt(p_hat * (1 - p_hat) / n) / h**2
        dens = np.exp(sn_logpdf(x0, pars["mu"], pars["sigma"], pars["alpha"]))
        assert abs(dens - dens_mc) < 3 * se + 0.02 * dens

    def test_never_minus_inf_in_tail(self):
        got = sn_logpdf(np.array([-30.0, -30.0]), np.zeros(2), np.eye(2),
                        np.array([3.0, 3.0]))
        assert np.isfinite(got)


class TestContaminatedComponent:
    def test_lambda_to_one_degenerates(self):
        c = ComponentParams(pi=1.0, lam=1 - 1e-12, eta=5.0, mu=np.array([0.1]),
                            alpha=np.array([0.4]), sigma=np.array([[1.2]]),
                            family="sal")
        base = sal_logpdf(np.array([0.7]), c.mu, c.sigma, c.alpha)
        assert contaminated_component_logpdf(np.array([0.7]), c) == pytest.approx(
            base, abs=1e-9)

    def test_eta_to_one_degenerates(self):
        for family in ("sal", "sn"):
            c = ComponentParams(pi=1.0, lam=0.7, eta=1 + 1e-12, mu=np.array([0.1]),
                                alpha=np.array([0.4]), sigma=np.array([[1.2]]),
                                family=family)
            fn = sal_logpdf if family == "sal" else sn_logpdf
            base = fn(np.array([0.7]), c.mu, c.sigma, c.alpha)
            assert contaminated_component_logpdf(np.array([0.7]), c) == pytest.approx(
                base, abs=1e-9)

    def test_cubature_normalization_table_component(self):
        pars = table1_component(0, "sal")
        c = ComponentParams(pi=1.0, lam=0.9, eta=20.0, family="sal", **pars)
        f = lambda y, x: np.exp(contaminated_component_logpdf(np.array([x, y]), c))
        val, _ = integrate.dblquad(f, -60, 70, -70, 60, epsabs=1e-7, epsrel=1e-7)
        assert val == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("family", ["sal", "sn"])
    @pytest.mark.parametrize("p", [1, 2])
    def test_cubature_normalization_random(self, family, p):
        # randomized valid parameter draws; 5 per (family, dimension)
        rng = np.random.default_rng(hash((family, p)) % 2**32)
        for _ in range(5):
            c = ComponentParams(
                pi=1.0,
                lam=float(rng.uniform(0.55, 0.97)),
                eta=float(rng.uniform(1.5, 40.0)),
                mu=rng.uniform(-1, 1, p),
                alpha=rng.uniform(-1.2, 1.2, p),
                sigma=random_spd(rng, p, scale=0.3),
                family=family)
            sd = np.sqrt(np.max(np.diag(c.sigma)) * c.eta) + np.abs(c.alpha).max() * c.eta
            lo, hi = -30 * sd - 3, 30 * sd + 3
            if p == 1:
                val, _ = integrate.quad(
                    lambda x: np.exp(contaminated_component_logpdf(np.array([x]), c)),
                    lo, hi, limit=400)
            else:
                val, _ = integrate.dblquad(
                    lambda y, x: np.exp(contaminated_component_logpdf(np.array([x, y]), c)),
                    lo, hi, lo, hi, epsabs=1e-5)
            assert val == pytest.approx(1.0, abs=1e-4)

    def test_bad_branch_covariance_inflation(self):
        # covariance of the inflated branch is eta * (Sigma + alpha alpha')
        mu = np.array([0.5, -1.0])
        sigma = np.array([[1.0, 0.3], [0.3, 0.8]])
        alpha = np.array([1.0, -0.5])
        eta = 9.0
        draws = cm.sample_sal(3_000_000, mu, eta * sigma,
                              np.sqrt(eta) * alpha, seed=21)
        expect = eta * (sigma + np.outer(alpha, alpha))
        got = np.cov(draws.T)
        se = 3 * np.abs(expect) * np.sqrt(8.0 / 3_000_000) + 0.05
        assert np.all(np.abs(got - expect) < 3 * se + 0.05 * np.abs(expect) + 0.03)


class TestMixtureLoglik:
    def _model(self, family, rng, G=2, p=2):
        comps = []
        pis = rng.dirichlet(np.ones(G) * 5)
        for g in range(G):
            comps.append(ComponentParams(
                pi=float(pis[g]), lam=float(rng.uniform(0.6, 0.95)),
                eta=float(rng.uniform(1.5, 30)), mu=rng.uniform(-3, 3, p),
                alpha=rng.uniform(-1, 1, p), sigma=random_spd(rng, p, 0.4),
                family=family))
        return MixtureModel(family=family, components=tuple(comps))

    def test_full_degeneracy_equals_gaussian(self, rng):
        # G=1, lambda->1, eta->1, SN, alpha=0
        p = 3
        sigma = random_spd(rng, p)
        mu = rng.standard_normal(p)
        comp = ComponentParams(pi=1.0, lam=1 - 1e-12, eta=1 + 1e-12, mu=mu,
                               alpha=np.zeros(p), sigma=sigma, family="sn")
        model = MixtureModel(family="sn", components=(comp,))
        X = rng.standard_normal((40, p)) + mu
        got = mixture_loglik(X, model)
        expect = float(stats.multivariate_normal.logpdf(X, mu, sigma).sum())
        assert got == pytest.approx(expect, abs=1e-7)

    def test_identical_components_collapse(self, rng):
        p = 2
        base = dict(lam=0.8, eta=4.0, mu=rng.uniform(-1, 1, p),
                    alpha=rng.uniform(-1, 1, p), sigma=random_spd(rng, p, 0.5))
        c1 = ComponentParams(pi=0.3, family="sal", **base)
        c2 = ComponentParams(pi=0.7, family="sal", **base)
        model = MixtureModel(family="sal", components=(c1, c2))
        x = rng.uniform(-2, 2, p)
        got = mixture_loglik(x[None, :], model)
        expect = contaminated_component_logpdf(x, c1)
        assert got == pytest.approx(expect, rel=1e-12)

    @pytest.mark.parametrize("family", ["sal", "sn"])
    def test_naive_reimplementation_oracle(self, family, rng):
        from scipy.special import logsumexp
        model = self._model(family, rng)
        X = rng.uniform(-4, 4, (10, 2))
        got = mixture_loglik(X, model)
        fn = sal_logpdf if family == "sal" else sn_logpdf
        total = 0.0
        for x in X:
            terms = []
            for c in model.components:
                good = fn(x, c.mu, c.sigma, c.alpha)
                bad = fn(x, c.mu, c.eta * c.sigma, np.sqrt(c.eta) * c.alpha)
                terms.append(np.log(c.pi)
                             + logsumexp([np.log(c.lam) + good,
                                          np.log1p(-c.lam) + bad]))
            total += logsumexp(terms)
        assert got == pytest.approx(total, abs=1e-10)

    def test_empty_dataset_rejected(self, rng):
        model = self._model("sal", rng)
        with pytest.raises(DomainError):
            mixture_loglik(np.empty((0, 2)), model)

    def test_validation_errors(self):
        with pytest.raises(DomainError):
            ComponentParams(pi=0.5, lam=1.2, eta=2.0, mu=np.zeros(1),
                            alpha=np.zeros(1), sigma=np.eye(1), family="sal")
        with pytest.raises(DomainError):
            ComponentParams(pi=0.5, lam=0.8, eta=0.9, mu=np.zeros(1),
                            alpha=np.zeros(1), sigma=np.eye(1), family="sal")
        with pytest.raises(DomainError):
            ComponentParams(pi=0.5, lam=0.8, eta=2.0, mu=np.zeros(2),
                            alpha=np.zeros(2), sigma=np.array([[1, 2], [2, 1]]),
                            family="sal")
