"""Component and mixture densities for the two contaminated families.

Everything is evaluated in log space; mixtures are combined with
log-sum-exp.  Each component caches its Cholesky-derived quantities in a
"prepared" object so ECM iterations re-solve nothing per observation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from . import special
from .exceptions import DomainError

__all__ = [
    "SAL",
    "SN",
    "ComponentParams",
    "MixtureModel",
    "sal_logpdf",
    "sn_logpdf",
    "contaminated_component_logpdf",
    "mixture_loglik",
]

SAL = "sal"
SN = "sn"
FAMILIES = (SAL, SN)

LOG_2PI = np.log(2.0 * np.pi)
# measure-zero SAL singularity at x = mu, p >= 2: floor the Mahalanobis
# distance at the same value the GIG moments use (so the E-step and the
# density describe one regularized objective), clamp the result, continue
LOG_DENSITY_CLAMP = np.log(1e300)
_DELTA_FLOOR = special.GIG_A_FLOOR

LAMBDA_EPS = 1e-6
ETA_MIN = 1.0 + 1e-12


@dataclass(frozen=True)
class ComponentParams:
    """One mixture component: weight, contamination and family parameters.

    ``lam`` is the proportion of good points; ``eta > 1`` inflates the
    component covariance for the bad part (``sigma -> eta * sigma`` and
    ``alpha -> sqrt(eta) * alpha``).
    """

    pi: float
    lam: float
    eta: float
    mu: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    family: str = SAL

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(-1))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(-1))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if not (0.0 < self.pi <= 1.0):
            raise DomainError(f"pi must be in (0, 1], got {self.pi}")
        if not (0.0 < self.lam < 1.0):
            raise DomainError(f"lambda must be in (0, 1), got {self.lam}")
        if not self.eta > 1.0:
            raise DomainError(f"eta must exceed 1, got {self.eta}")
        p = self.mu.shape[0]
        if self.alpha.shape != (p,) or self.sigma.shape != (p, p):
            raise DomainError("mu, alpha, sigma dimensions disagree")
        try:
            cholesky(self.sigma, lower=True)
        except Exception as exc:
            raise DomainError("sigma is not positive definite") from exc

    @property
    def p(self):
        return self.mu.shape[0]


@dataclass(frozen=True)
class MixtureModel:
    """A finite mixture of contaminated components sharing one family."""

    family: str
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise DomainError("a mixture needs at least one component")
        if any(c.family != self.family for c in comps):
            raise DomainError("all components must share the mixture family")
        p = comps[0].p
        if any(c.p != p for c in comps):
            raise DomainError("all components must share the dimension")
        total = sum(c.pi for c in comps)
        if abs(total - 1.0) > 1e-10:
            raise DomainError(f"mixing proportions sum to {total}, expected 1")

    @property
    def G(self):
        return len(self.components)

    @property
    def p(self):
        return self.components[0].p

    def component_means(self):
        """Model-implied mean of each contaminated component, shape (G, p)."""
        out = np.empty((self.G, self.p))
        for g, c in enumerate(self.components):
            scale = c.lam + (1.0 - c.lam) * np.sqrt(c.eta)
            latent = 1.0 if self.family == SAL else np.sqrt(2.0 / np.pi)
            out[g] = c.mu + latent * scale * c.alpha
        return out


# ---------------------------------------------------------------------------
# SAL family
# ---------------------------------------------------------------------------

@dataclass
class PreparedSal:
    """Cholesky-derived per-component quantities reused across observations."""

    mu: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    logdet: float
    sinv_alpha: np.ndarray
    b: float  # 2 + alpha' Sigma^{-1} alpha


def prepare_sal(mu, sigma, alpha):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    try:
        L = cholesky(sigma, lower=True)
    except Exception as exc:
        raise DomainError("sigma is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    sinv_alpha = cho_solve((L, True), alpha)
    b = 2.0 + float(alpha @ sinv_alpha)
    return PreparedSal(mu, alpha, L, logdet, sinv_alpha, b)


def sal_quadforms(X, prep):
    """Squared Mahalanobis distances and skew cross terms for all rows.

    Returns ``(delta, r)`` with ``delta_i = (x_i-mu)' Sigma^{-1} (x_i-mu)``
    and ``r_i = (x_i-mu)' Sigma^{-1} alpha``.
    """
    diff = np.atleast_2d(X) - prep.mu
    Z = solve_triangular(prep.chol, diff.T, lower=True)
    delta = np.einsum("ji,ji->i", Z, Z)
    r = diff @ prep.sinv_alpha
    return delta, r


def sal_logpdf_from_quadforms(delta, r, b, logdet, p):
    """SAL log-density given precomputed quadratic forms.

    Implements ``log 2 + r - (p/2) log 2pi - log|Sigma|/2
    + (nu/2) log(delta/b) + log K_nu(u)`` with ``nu = (2-p)/2`` and
    ``u = sqrt(b * delta)``; the ``x = mu`` singularity is floored and
    clamped for p >= 2.
    """
    nu = 0.5 * (2.0 - p)
    delta_safe = np.maximum(delta, _DELTA_FLOOR)
    u = np.sqrt(b * delta_safe)
    out = (np.log(2.0) + r - 0.5 * p * LOG_2PI - 0.5 * logdet
           + 0.5 * nu * (np.log(delta_safe) - np.log(b))
           + special.log_bessel_k(nu, u))
    if p >= 2:
        out = np.minimum(out, LOG_DENSITY_CLAMP)
    return out


def sal_component_logpdfs(X, mu, sigma, alpha, eta):
    """Good- and bad-branch SAL log-densities for every row.

    The bad branch replaces ``sigma`` by ``eta*sigma`` and ``alpha`` by
    ``sqrt(eta)*alpha``, which maps the quadratic forms to ``delta/eta``
    and ``r/sqrt(eta)`` with unchanged ``b``.

    Returns ``(lg_good, lg_bad, delta, b)``.
    """
    prep = prepare_sal(mu, sigma, alpha)
    p = prep.mu.shape[0]
    delta, r = sal_quadforms(X, prep)
    lg_good = sal_logpdf_from_quadforms(delta, r, prep.b, prep.logdet, p)
    lg_bad = sal_logpdf_from_quadforms(delta / eta, r / np.sqrt(eta), prep.b,
                                       prep.logdet + p * np.log(eta), p)
    return lg_good, lg_bad, delta, prep.b


def sal_logpdf(x, mu, sigma, alpha):
    """Log-density of the shifted asymmetric Laplace distribution at ``x``."""
    prep = prepare_sal(mu, sigma, alpha)
    p = prep.mu.shape[0]
    delta, r = sal_quadforms(np.atleast_2d(np.asarray(x, dtype=float)), prep)
    out = sal_logpdf_from_quadforms(delta, r, prep.b, prep.logdet, p)
    return float(out[0]) if np.ndim(x) <= 1 else out


# ---------------------------------------------------------------------------
# Skew-normal family
# ---------------------------------------------------------------------------

@dataclass
class PreparedSn:
    mu: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    chol_omega: np.ndarray
    logdet_omega: float
    omega_inv: np.ndarray
    delta_mat: np.ndarray  # I - A Omega^{-1} A, shared by good and bad branches


def prepare_sn(mu, sigma, alpha):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    p = mu.shape[0]
    omega = sigma + np.diag(alpha ** 2)
    try:
        L = cholesky(omega, lower=True)
    except Exception as exc:
        raise DomainError("sigma + diag(alpha^2) is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    omega_inv = cho_solve((L, True), np.eye(p))
    delta_mat = np.eye(p) - np.outer(alpha, alpha) * omega_inv
    delta_mat = 0.5 * (delta_mat + delta_mat.T)
    return PreparedSn(mu, alpha, omega, L, logdet, omega_inv, delta_mat)


def sn_posterior_shifts(X, prep):
    """Truncated-normal posterior location ``A Omega^{-1} (x - mu)`` per row,
    plus the Mahalanobis distances under Omega."""
    diff = np.atleast_2d(X) - prep.mu
    G = cho_solve((prep.chol_omega, True), diff.T).T  # Omega^{-1}(x-mu), (n, p)
    delta_om = np.einsum("ij,ij->i", diff, G)
    shifts = prep.alpha * G
    return shifts, delta_om


def sn_component_logpdfs(X, mu, sigma, alpha, eta, seed=0, n_qmc=2048):
    """Good- and bad-branch skew-normal log-densities for every row.

    The bad branch has ``Omega -> eta*Omega`` while the truncated-normal
    scale matrix is unchanged and the posterior shift scales by
    ``1/sqrt(eta)``, so one prepared component serves both branches.
    """
    prep = prepare_sn(mu, sigma, alpha)
    p = prep.mu.shape[0]
    shifts, delta_om = sn_posterior_shifts(X, prep)
    n = shifts.shape[0]
    stacked = np.vstack([shifts, shifts / np.sqrt(eta)])
    log_orth = special.log_orthant_batch(stacked, prep.delta_mat, seed=seed, n_qmc=n_qmc)
    base = p * np.log(2.0) - 0.5 * p * LOG_2PI - 0.5 * prep.logdet_omega
    lg_good = base - 0.5 * delta_om + log_orth[:n]
    lg_bad = (base - 0.5 * p * np.log(eta) - 0.5 * delta_om / eta
              + log_orth[n:])
    return lg_good, lg_bad


def sn_logpdf(x, mu, sigma, alpha, seed=0):
    """Log-density ``log[2^p phi(x; mu, Omega) Phi(A'Omega^{-1}(x-mu); Delta)]``
    of the skew-normal distribution with diagonal skewness matrix."""
    prep = prepare_sn(mu, sigma, alpha)
    p = prep.mu.shape[0]
    shifts, delta_om = sn_posterior_shifts(np.atleast_2d(np.asarray(x, dtype=float)), prep)
    log_orth = special.log_orthant_batch(shifts, prep.delta_mat, seed=seed)
    out = (p * np.log(2.0) - 0.5 * p * LOG_2PI - 0.5 * prep.logdet_omega
           - 0.5 * delta_om + log_orth)
    return float(out[0]) if np.ndim(x) <= 1 else out


# ---------------------------------------------------------------------------
# Contaminated components and mixtures
# ---------------------------------------------------------------------------

def contaminated_component_logpdfs_rows(X, comp, seed=0, n_qmc=2048):
    """(good, bad, combined) log-densities of one contaminated component."""
    if comp.family == SAL:
        lg_good, lg_bad, _, _ = sal_component_logpdfs(
            X, comp.mu, comp.sigma, comp.alpha, comp.eta)
    else:
        lg_good, lg_bad = sn_component_logpdfs(
            X, comp.mu, comp.sigma, comp.alpha, comp.eta, seed=seed, n_qmc=n_qmc)
    combined = np.logaddexp(np.log(comp.lam) + lg_good,
                            np.log1p(-comp.lam) + lg_bad)
    return lg_good, lg_bad, combined


def contaminated_component_logpdf(x, comp, seed=0):
    """Log-density of one contaminated component at ``x``.

    ``log[lam * f(x; base) + (1 - lam) * f(x; eta-inflated)]`` evaluated
    by log-sum-exp.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    _, _, combined = contaminated_component_logpdfs_rows(X, comp, seed=seed)
    return float(combined[0]) if np.ndim(x) <= 1 else combined


def mixture_logpdf_rows(X, model, seed=0, n_qmc=2048):
    """Per-row mixture log-density, shape (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    comp_log = np.empty((n, model.G))
    for g, comp in enumerate(model.components):
        _, _, combined = contaminated_component_logpdfs_rows(X, comp, seed=seed,
                                                             n_qmc=n_qmc)
        comp_log[:, g] = np.log(comp.pi) + combined
    return logsumexp(comp_log, axis=1)


def mixture_loglik(data, model, seed=0):
    """Observed-data log-likelihood of ``model`` on ``data``.

    ``data`` may be a Dataset or a plain (n, p) array.
    """
    X = np.asarray(getattr(data, "x", data), dtype=float)
    if X.size == 0:
        raise DomainError("empty dataset")
    if X.ndim != 2 or X.shape[1] != model.p:
        raise DomainError(
            f"data dimension {X.shape} does not match model dimension {model.p}")
    return float(np.sum(mixture_logpdf_rows(X, model, seed=seed)))
