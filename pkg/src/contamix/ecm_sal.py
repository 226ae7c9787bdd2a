"""ECM fitting of the mixture of contaminated SAL distributions.

The E-step computes component and good-point posteriors together with the
four conditional GIG moments per observation/component; the first CM-step
solves the exact stationarity system for location and skewness jointly
(coefficient matrix ``[[A, D], [D, B]]``, determinant ``A*B - D**2``) and
updates the scale in closed form; the second CM-step updates the
contamination factor by the quadratic in ``sqrt(eta)`` with a bounded 1-d
search fallback.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import special
from ._fit_common import (FitConfig, ecm_loop, eta_quadratic_candidates,
                          maximize_eta, multi_start_fit, spd_floor)
from .dataset import Dataset
from .densities import (SAL, ComponentParams, MixtureModel, prepare_sal,
                        sal_logpdf_from_quadforms, sal_quadforms)
from .exceptions import DegenerateStartError, DomainError

__all__ = ["SalResponsibilities", "e_step_sal", "cm_step1_sal",
           "cm_step2_eta_sal", "fit_sal"]

_DET_TINY = 1e-12
_LAMBDA_HI = 1.0 - 1e-6


@dataclass
class SalResponsibilities:
    """Posterior quantities of one E-step.

    ``e1``..``e4`` are the conditional expectations of the latent scale:
    E[W], E[1/W] under the good branch and their inflated-branch
    analogues, all shaped (n, G).
    """

    z_hat: np.ndarray
    v_hat: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    e4: np.ndarray
    loglik: float
    flags: tuple = ()


def _as_matrix(data):
    return data.x if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))


def e_step_sal(data, model, config=None, qmc_seed=0):
    """Component/good-point posteriors and GIG moments under ``model``."""
    if model.family != SAL:
        raise DomainError("e_step_sal needs a SAL-family model")
    X = _as_matrix(data)
    n, p = X.shape
    G = model.G
    nu = 0.5 * (2.0 - p)
    flags = []

    log_num = np.empty((n, G))
    v_hat = np.empty((n, G))
    e1 = np.empty((n, G))
    e2 = np.empty((n, G))
    e3 = np.empty((n, G))
    e4 = np.empty((n, G))
    for g, comp in enumerate(model.components):
        prep = prepare_sal(comp.mu, comp.sigma, comp.alpha)
        delta, r = sal_quadforms(X, prep)
        lg_good = sal_logpdf_from_quadforms(delta, r, prep.b, prep.logdet, p)
        lg_bad = sal_logpdf_from_quadforms(
            delta / comp.eta, r / np.sqrt(comp.eta), prep.b,
            prep.logdet + p * np.log(comp.eta), p)
        a_good = np.clip(delta, special.GIG_A_FLOOR, 1e290)
        a_bad = np.clip(delta / comp.eta, special.GIG_A_FLOOR, 1e290)
        if np.any(delta < special.GIG_A_FLOOR):
            flags.append(f"gig a-floor hit in component {g}")
        e1[:, g], e2[:, g] = special._gig_moments_arrays(a_good, prep.b, nu)
        e3[:, g], e4[:, g] = special._gig_moments_arrays(a_bad, prep.b, nu)

        lg = np.log(comp.lam) + lg_good
        lb = np.log1p(-comp.lam) + lg_bad
        with np.errstate(invalid="ignore"):
            comp_log = np.logaddexp(lg, lb)
            v_hat[:, g] = np.where(np.isfinite(comp_log), np.exp(lg - comp_log), 1.0)
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
    return SalResponsibilities(z_hat=z_hat, v_hat=v_hat, e1=e1, e2=e2, e3=e3,
                               e4=e4, loglik=loglik, flags=tuple(flags))


def cm_step1_sal(data, resp, model, config=None, flags=None):
    """Update weights, good proportions, locations, skewness and scales.

    Location and skewness solve the coupled system from the stationarity
    of the expected complete-data log-likelihood; the scale update is the
    weighted outer-product form evaluated at the new location/skewness,
    symmetrized with an eigenvalue floor.
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
        n_g = zg.sum()
        if not n_g >= p + 1:
            raise DegenerateStartError(
                f"component {g} occupancy {n_g:.2f} fell below p+1 = {p + 1}")

        pi_new = n_g / n
        if "lambda" in config.freeze or "v_one" in config.freeze:
            lam_new = comp.lam
        else:
            lam_new = float(np.clip((zg * vg).sum() / n_g, config.lambda_lo, _LAMBDA_HI))

        w2 = vg * resp.e2[:, g] + (1.0 - vg) * resp.e4[:, g] / eta
        w1 = vg * resp.e1[:, g] + (1.0 - vg) * resp.e3[:, g]
        dw = vg + (1.0 - vg) / np.sqrt(eta)
        A = float(zg @ w2)
        B = float(zg @ w1)
        D = float(zg @ dw)
        sx_a = X.T @ (zg * w2)
        sx_d = X.T @ (zg * dw)

        if "alpha_zero" in config.freeze:
            mu_new = sx_a / A
            alpha_new = comp.alpha
        else:
            det = A * B - D * D
            if abs(det) <= _DET_TINY * max(abs(A * B), D * D, 1.0):
                flags.append(f"singular location/skewness system in component {g}")
                mu_new, alpha_new = comp.mu, comp.alpha
            else:
                mu_new = (B * sx_a - D * sx_d) / det
                alpha_new = (A * sx_d - D * sx_a) / det

        diff = X - mu_new
        S = np.einsum("i,ij,ik->jk", zg * w2, diff, diff)
        cross = diff.T @ (zg * dw)
        S -= np.outer(cross, alpha_new) + np.outer(alpha_new, cross)
        S += B * np.outer(alpha_new, alpha_new)
        sigma_new = spd_floor(S / n_g)
        if not (np.all(np.isfinite(mu_new)) and np.all(np.isfinite(alpha_new))
                and np.all(np.isfinite(sigma_new)) and np.isfinite(lam_new)):
            raise DegenerateStartError(f"non-finite update in component {g}")

        new_comps.append(ComponentParams(
            pi=pi_new, lam=lam_new, eta=eta, mu=mu_new, alpha=alpha_new,
            sigma=sigma_new, family=SAL))
    return MixtureModel(family=SAL, components=tuple(new_comps))


def cm_step2_eta_sal(data, resp, model, config=None, flags=None):
    """Update each contamination factor given the refreshed parameters.

    Solves ``S*eta + T*sqrt(eta) + U = 0`` (coefficients from the
    eta-restricted expected complete-data log-likelihood) and falls back
    to a bounded maximization when no admissible root improves it; when
    neither does, the previous value is kept.
    """
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
        prep = prepare_sal(comp.mu, comp.sigma, comp.alpha)
        delta, r = sal_quadforms(X, prep)
        md = float(m @ (resp.e4[:, g] * delta))
        mr = float(m @ r)

        def q_of_eta(eta, sm=sm, md=md, mr=mr):
            return (-0.5 * p * sm * np.log(eta) - 0.5 * md / eta
                    + mr / np.sqrt(eta))

        eta_new = maximize_eta(q_of_eta, comp.eta,
                               eta_quadratic_candidates(p * sm, mr, -md),
                               config.eta_max)
        new_comps.append(ComponentParams(
            pi=comp.pi, lam=comp.lam, eta=eta_new, mu=comp.mu,
            alpha=comp.alpha, sigma=comp.sigma, family=SAL))
    return MixtureModel(family=SAL, components=tuple(new_comps))


def _cm_step_sal(X, resp, model, config, flags):
    model = cm_step1_sal(X, resp, model, config, flags)
    return cm_step2_eta_sal(X, resp, model, config, flags)


def fit_sal(data, G, config=None):
    """Fit a G-component contaminated SAL mixture by multi-start ECM."""
    config = config or FitConfig()
    return multi_start_fit(data, G, SAL, config, e_step_sal, _cm_step_sal)
