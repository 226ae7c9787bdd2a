"""ECM fitting of the mixture of contaminated skew-normal distributions.

The truncated-normal posterior of the latent skewing vector has scale
matrix ``Delta = I - A Omega^{-1} A`` for both the good and the inflated
branch (the inflation cancels), and the inflated-branch location is the
good one divided by ``sqrt(eta)`` — so a single prepared component and a
single batched moment computation serve both branches of the E-step.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.special import logsumexp

from . import special
from ._fit_common import (FitConfig, eta_quadratic_candidates, maximize_eta,
                          multi_start_fit, spd_floor)
from .dataset import Dataset
from .densities import (SN, LOG_2PI, ComponentParams, MixtureModel,
                        prepare_sn, sn_posterior_shifts)
from .exceptions import (DegenerateStartError, DomainError,
                         NumericalDegeneracyError)

__all__ = ["SnResponsibilities", "e_step_sn", "cm_step1_sn",
           "cm_step2_eta_sn", "fit_sn"]

_LAMBDA_HI = 1.0 - 1e-6


@dataclass
class SnResponsibilities:
    """Posterior quantities of one E-step.

    ``tn_mean_good``/``tn_mean_bad`` are E[tau | x] under each branch,
    shaped (n, G, p); the ``tn_second_*`` arrays hold E[tau tau' | x],
    shaped (n, G, p, p).
    """

    z_hat: np.ndarray
    v_hat: np.ndarray
    tn_mean_good: np.ndarray
    tn_second_good: np.ndarray
    tn_mean_bad: np.ndarray
    tn_second_bad: np.ndarray
    loglik: float
    flags: tuple = ()


def _as_matrix(data):
    return data.x if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))


def e_step_sn(data, model, config=None, qmc_seed=0):
    """Posteriors and truncated-normal moments under ``model``.

    Raises :class:`NumericalDegeneracyError` tagged with the offending
    (observation, component) when an orthant mass collapses entirely.
    """
    if model.family != SN:
        raise DomainError("e_step_sn needs a SN-family model")
    X = _as_matrix(data)
    n, p = X.shape
    G = model.G
    n_qmc = config.n_qmc if config is not None else 2048
    flags = []

    log_num = np.empty((n, G))
    v_hat = np.empty((n, G))
    m_good = np.empty((n, G, p))
    s_good = np.empty((n, G, p, p))
    m_bad = np.empty((n, G, p))
    s_bad = np.empty((n, G, p, p))

    for g, comp in enumerate(model.components):
        prep = prepare_sn(comp.mu, comp.sigma, comp.alpha)
        shifts, delta_om = sn_posterior_shifts(X, prep)
        stacked = np.vstack([shifts, shifts / np.sqrt(comp.eta)])
        tn = special.tn_batch(stacked, prep.delta_mat, seed=qmc_seed, n_qmc=n_qmc)
        bad_rows = ~np.isfinite(tn.log_prob)
        if np.any(bad_rows):
            i = int(np.nonzero(bad_rows)[0][0]) % n
            raise NumericalDegeneracyError(
                "truncated-normal posterior collapsed", observation=i, component=g)
        m_good[:, g] = tn.mean[:n]
        s_good[:, g] = tn.second[:n]
        m_bad[:, g] = tn.mean[n:]
        s_bad[:, g] = tn.second[n:]

        base = p * np.log(2.0) - 0.5 * p * LOG_2PI - 0.5 * prep.logdet_omega
        lg_good = base - 0.5 * delta_om + tn.log_prob[:n]
        lg_bad = (base - 0.5 * p * np.log(comp.eta)
                  - 0.5 * delta_om / comp.eta + tn.log_prob[n:])
        lg = np.log(comp.lam) + lg_good
        lb = np.log1p(-comp.lam) + lg_bad
        comp_log = np.logaddexp(lg, lb)
        v_hat[:, g] = np.exp(lg - comp_log)
        log_num[:, g] = np.log(comp.pi) + comp_log

    row_log = logsumexp(log_num, axis=1)
    underflow = ~np.isfinite(row_log)
    if np.any(underflow):
        flags.append(f"{int(underflow.sum())} rows underflowed; uniform z rows assigned")
        log_num[underflow] = 0.0
        row_log[underflow] = np.log(G)
    z_hat = np.exp(log_num - row_log[:, None])
    loglik = float(np.sum(row_log))
    if config is not None and "v_one" in config.freeze:
        v_hat[:] = 1.0
    return SnResponsibilities(z_hat=z_hat, v_hat=v_hat,
                              tn_mean_good=m_good, tn_second_good=s_good,
                              tn_mean_bad=m_bad, tn_second_bad=s_bad,
                              loglik=loglik, flags=tuple(flags))


def cm_step1_sn(data, resp, model, config=None, flags=None):
    """Update weights, good proportions, locations, scales and skewness.

    The location update is scale-free; the scale update uses the current
    skewness; the skewness solves the Hadamard-product linear system from
    the exact stationarity condition at the new location and scale.
    """
    config = config or FitConfig()
    flags = flags if flags is not None else []
    X = _as_matrix(data)
    n, p = X.shape
    new_comps = []
    for g, comp in enumerate(model.components):
        zg = resp.z_hat[:, g]
        vg = resp.v_hat[:, g]
        eta = comp.eta
        sqrt_eta = np.sqrt(eta)
        alpha = comp.alpha
        n_g = zg.sum()
        mg = resp.tn_mean_good[:, g]      # (n, p)
        mb = resp.tn_mean_bad[:, g]
        sg = resp.tn_second_good[:, g]    # (n, p, p)
        sb = resp.tn_second_bad[:, g]

        w_good = zg * vg
        w_bad = zg * (1.0 - vg)
        if not n_g >= p + 1:
            raise DegenerateStartError(
                f"component {g} occupancy {n_g:.2f} fell below p+1 = {p + 1}")

        pi_new = n_g / n
        if "lambda" in config.freeze or "v_one" in config.freeze:
            lam_new = comp.lam
        else:
            lam_new = float(np.clip(w_good.sum() / n_g, config.lambda_lo, _LAMBDA_HI))

        # location: both branches share Sigma^{-1}, so it cancels
        wb_eta = w_bad / eta
        num = ((w_good[:, None] * (X - alpha * mg)).sum(axis=0)
               + (wb_eta[:, None] * (X - sqrt_eta * alpha * mb)).sum(axis=0))
        den = w_good.sum() + wb_eta.sum()
        mu_new = num / den

        # scale, at the new location and current skewness
        e_good = X - mu_new - alpha * mg
        e_bad = X - mu_new - sqrt_eta * alpha * mb
        S = (np.einsum("i,ij,ik->jk", w_good, e_good, e_good)
             + np.einsum("i,ij,ik->jk", wb_eta, e_bad, e_bad))
        cov_sum = (np.einsum("i,ijk->jk", w_good, sg)
                   - np.einsum("i,ij,ik->jk", w_good, mg, mg)
                   + np.einsum("i,ijk->jk", w_bad, sb)
                   - np.einsum("i,ij,ik->jk", w_bad, mb, mb))
        S += np.outer(alpha, alpha) * cov_sum
        sigma_new = spd_floor(S / n_g)

        # skewness, at the new location and scale
        if "alpha_zero" in config.freeze:
            alpha_new = alpha
        else:
            L = cholesky(sigma_new, lower=True)
            sig_inv = cho_solve((L, True), np.eye(p))
            gvec = cho_solve((L, True), (X - mu_new).T).T  # Sigma^{-1}(x - mu)
            psi_sum = (np.einsum("i,ijk->jk", w_good, sg)
                       + np.einsum("i,ijk->jk", w_bad, sb))
            M = sig_inv * psi_sum
            rhs = (np.einsum("i,ij,ij->j", w_good, mg, gvec)
                   + np.einsum("i,ij,ij->j", w_bad / sqrt_eta, mb, gvec))
            try:
                alpha_new = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                flags.append(f"singular skewness system in component {g}")
                alpha_new = alpha

        if not (np.all(np.isfinite(mu_new)) and np.all(np.isfinite(alpha_new))
                and np.all(np.isfinite(sigma_new)) and np.isfinite(lam_new)):
            raise DegenerateStartError(f"non-finite update in component {g}")
        new_comps.append(ComponentParams(
            pi=pi_new, lam=lam_new, eta=eta, mu=mu_new, alpha=alpha_new,
            sigma=sigma_new, family=SN))
    return MixtureModel(family=SN, components=tuple(new_comps))


def cm_step2_eta_sn(data, resp, model, config=None, flags=None):
    """Update the contamination factors by quadratic root or 1-d search."""
    config = config or FitConfig()
    if "eta" in config.freeze or "v_one" in config.freeze:
        return model
    X = _as_matrix(data)
    p = X.shape[1]
    new_comps = []
    for g, comp in enumerate(model.components):
        zg = resp.z_hat[:, g]
        vg = resp.v_hat[:, g]
        m = zg * (1.0 - vg)
        sm = m.sum()
        if sm < 1e-12:
            new_comps.append(comp)
            continue
        L = cholesky(comp.sigma, lower=True)
        diff = X - comp.mu
        gvec = cho_solve((L, True), diff.T).T
        delta = np.einsum("ij,ij->i", diff, gvec)
        skew_term = comp.alpha * resp.tn_mean_bad[:, g]  # A eta~_i
        c = np.einsum("ij,ij->i", gvec, skew_term)

        md = float(m @ delta)
        mc = float(m @ c)

        def q_of_eta(eta, sm=sm, md=md, mc=mc):
            return (-0.5 * p * sm * np.log(eta) - 0.5 * md / eta
                    + mc / np.sqrt(eta))

        eta_new = maximize_eta(q_of_eta, comp.eta,
                               eta_quadratic_candidates(p * sm, mc, -md),
                               config.eta_max)
        new_comps.append(ComponentParams(
            pi=comp.pi, lam=comp.lam, eta=eta_new, mu=comp.mu,
            alpha=comp.alpha, sigma=comp.sigma, family=SN))
    return MixtureModel(family=SN, components=tuple(new_comps))


def _cm_step_sn(X, resp, model, config, flags):
    model = cm_step1_sn(X, resp, model, config, flags)
    return cm_step2_eta_sn(X, resp, model, config, flags)


def fit_sn(data, G, config=None):
    """Fit a G-component contaminated skew-normal mixture by multi-start ECM."""
    config = config or FitConfig()
    return multi_start_fit(data, G, SN, config, e_step_sn, _cm_step_sn)
