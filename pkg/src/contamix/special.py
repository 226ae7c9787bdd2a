"""Numerical substrate: Bessel K on log scale, GIG conditional moments,
multivariate normal orthant probabilities, and truncated multivariate
normal moments on the positive orthant.

All routines are pure functions; the quasi-Monte-Carlo paths take an
explicit seed, so everything here is safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special as sps
from scipy.linalg import cholesky, solve_triangular
from scipy.stats import qmc

from .exceptions import DomainError, NumericalDegeneracyError

__all__ = [
    "GigMoments",
    "TNMoments",
    "log_bessel_k",
    "gig_moments",
    "mvn_orthant_upper",
    "log_mvn_orthant_upper",
    "tn_moments",
]

GIG_A_FLOOR = 1e-12
ORTHANT_FLOOR_LOG = -690.0  # ~log(1e-300); below this the orthant mass is treated as zero
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Modified Bessel function of the third kind, log scale
# ---------------------------------------------------------------------------

def log_bessel_k(nu, u):
    """Evaluate ``log K_nu(u)`` stably for u in roughly [1e-300, 1e8].

    Built on the exponentially scaled routine ``kve`` (``kve(nu, u) =
    exp(u) * K_nu(u)``), which avoids underflow of ``K_nu`` for large
    arguments.  A small-argument series kicks in when ``kve`` itself
    overflows (tiny ``u`` together with large ``|nu|``).

    Parameters
    ----------
    nu : float
        Order; any real value (``K_nu = K_{-nu}``).
    u : float or ndarray
        Argument, strictly positive.

    Returns
    -------
    float or ndarray
        ``log K_nu(u)``, finite for all valid inputs.
    """
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u_arr <= 0.0) or np.any(np.isnan(u_arr)):
        raise DomainError("log_bessel_k requires u > 0")
    out = np.log(sps.kve(nu, u_arr)) - u_arr
    bad = ~np.isfinite(out) & np.isfinite(u_arr)
    if np.any(bad):
        out[bad] = _log_bessel_k_fallback(abs(float(nu)), u_arr[bad])
    # K_nu(u) -> 0 as u -> inf; -inf is the correct log limit
    out[np.isinf(u_arr)] = -np.inf
    if np.ndim(u) == 0:
        return float(out[0])
    return out


def _log_bessel_k_fallback(nu_abs, u):
    # Leading asymptotic terms, used only where kve over- or underflowed
    # (extreme arguments), so the truncation error is negligible there.
    out = np.empty_like(u)
    small = u < 1.0
    if nu_abs == 0.0:
        out[small] = np.log(-np.log(u[small] / 2.0) - np.euler_gamma)
    else:
        out[small] = (sps.gammaln(nu_abs) - np.log(2.0)
                      + nu_abs * np.log(2.0 / u[small]))
    big = ~small
    out[big] = 0.5 * np.log(np.pi / (2.0 * u[big])) - u[big]
    return out


# ---------------------------------------------------------------------------
# GIG conditional moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GigMoments:
    """First moment and inverse moment of a GIG posterior.

    ``e_w * e_w_inv >= 1`` always holds (Cauchy-Schwarz for positive
    random variables); ``clamped`` records whether the chi-type parameter
    was raised to the evaluation floor.
    """

    e_w: float
    e_w_inv: float
    clamped: bool = False


def gig_moments(a, b, nu):
    """Conditional moments ``E[W]`` and ``E[1/W]`` of a GIG distribution.

    The density is proportional to ``w**(nu-1) * exp(-(b*w + a/w)/2)`` on
    ``w > 0``.  With ``u = sqrt(a*b)`` and ``R = K_{nu+1}(u)/K_nu(u)``,

    ``E[W] = sqrt(a/b) * R`` and ``E[1/W] = sqrt(b/a) * R - 2*nu/a``.

    Parameters
    ----------
    a : float
        Coefficient of ``1/w`` (squared Mahalanobis distance in the SAL
        posterior); may be zero, in which case it is clamped to a floor
        and the result is flagged.
    b : float
        Coefficient of ``w``; strictly positive.
    nu : float
        Index.

    Returns
    -------
    GigMoments
    """
    if b <= 0.0:
        raise DomainError(f"gig_moments requires b > 0, got {b}")
    if a < 0.0:
        raise DomainError(f"gig_moments requires a >= 0, got {a}")
    clamped = a < GIG_A_FLOOR
    a_eff = max(a, GIG_A_FLOOR)
    e_w, e_w_inv = _gig_moments_arrays(np.asarray(a_eff), b, nu)
    return GigMoments(float(e_w[0]), float(e_w_inv[0]), clamped)


def _gig_moments_arrays(a, b, nu):
    """Vectorized GIG moments; `a` already clamped away from zero."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    u = np.sqrt(a * b)
    ratio = sps.kve(nu + 1.0, u) / sps.kve(nu, u)
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        # kve overflow at tiny u: use the small-argument ratio directly.
        ratio[bad] = _bessel_ratio_small_u(nu, u[bad])
    e_w = np.sqrt(a / b) * ratio
    e_w_inv = np.sqrt(b / a) * ratio - 2.0 * nu / a
    # E[1/W] is mathematically positive; protect against cancellation.
    e_w_inv = np.maximum(e_w_inv, 1e-300)
    return e_w, e_w_inv


def _bessel_ratio_small_u(nu, u):
    # K_{nu+1}(u)/K_nu(u) as u -> 0, from the leading power-law terms.
    nu1 = abs(nu + 1.0)
    nu0 = abs(nu)
    logs = (
        sps.gammaln(nu1) - sps.gammaln(max(nu0, 1e-12))
        + (nu1 - nu0) * np.log(2.0 / np.maximum(u, 1e-300))
    )
    return np.exp(logs)


# ---------------------------------------------------------------------------
# Bivariate normal CDF (closed form, vectorized in (h, k) with scalar rho)
# ---------------------------------------------------------------------------

def _bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho.

    Owen's-T based closed form; ``h`` and ``k`` may be arrays of equal
    shape, ``rho`` is scalar.  Accuracy is ~1e-14 away from |rho| = 1.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if rho >= 1.0 - 1e-15:
        return sps.ndtr(np.minimum(h, k))
    if rho <= -1.0 + 1e-15:
        return np.maximum(sps.ndtr(h) + sps.ndtr(k) - 1.0, 0.0)
    if rho == 0.0:
        return sps.ndtr(h) * sps.ndtr(k)

    denom = np.sqrt(1.0 - rho * rho)
    # Owen (1956): Phi2(h,k,rho) = (Phi(h)+Phi(k))/2 - T(h,ah) - T(k,ak) - delta
    # with delta = 1/2 when h*k < 0 or (h*k == 0 and h + k < 0).  At h = 0 the
    # T argument degenerates to +/-inf with the sign of the other coordinate.
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = np.where(h != 0.0, (k - rho * h) / (h * denom),
                      np.where(k >= 0.0, np.inf, -np.inf))
        ak = np.where(k != 0.0, (h - rho * k) / (k * denom),
                      np.where(h >= 0.0, np.inf, -np.inf))
    t_h = _owens_t_ext(h, ah)
    t_k = _owens_t_ext(k, ak)
    delta = np.where((h * k < 0.0) | ((h * k == 0.0) & (h + k < 0.0)), 0.5, 0.0)
    out = 0.5 * (sps.ndtr(h) + sps.ndtr(k)) - t_h - t_k - delta
    # Both arguments at zero: the Owen decomposition degenerates.
    both_zero = (h == 0.0) & (k == 0.0)
    if np.any(both_zero):
        out = np.where(both_zero, 0.25 + np.arcsin(rho) / (2.0 * np.pi), out)
    return np.clip(out, 0.0, 1.0)


def _owens_t_ext(h, a):
    """Owen's T with support for a = +/-inf: T(h, inf) = Phi(-|h|)/2."""
    a = np.asarray(a, dtype=float)
    finite = np.isfinite(a)
    out = np.empty(np.broadcast(h, a).shape, dtype=float)
    h_b, a_b = np.broadcast_arrays(np.asarray(h, dtype=float), a)
    if np.any(finite):
        out[finite] = sps.owens_t(h_b[finite], a_b[finite])
    inf_mask = ~finite
    if np.any(inf_mask):
        tail = 0.5 * sps.ndtr(-np.abs(h_b[inf_mask]))
        out[inf_mask] = np.where(a_b[inf_mask] > 0.0, tail, -tail)
    return out


def _bvn_density(x1, x2, s1, s2, rho):
    """Bivariate normal density at (x1, x2), zero mean, stds s1, s2, corr rho."""
    z1 = x1 / s1
    z2 = x2 / s2
    q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (1.0 - rho * rho)
    norm = 2.0 * np.pi * s1 * s2 * np.sqrt(1.0 - rho * rho)
    return np.exp(-0.5 * q) / norm


def _log_bvn_cdf_tail(h, k, rho):
    """Crude but finite log Phi2(h, k; rho) for the deep tail.

    Uses the exact factorization Phi2 = Phi(h) E[Phi((k - rho Z)/sqrt(1-r^2)) |
    Z < h] with the inner expectation collapsed to the conditional mean
    E[Z | Z < h] = -phi(h)/Phi(h).  Accurate to O(1) nats, which is all the
    self-normalized E-step needs from rows whose posterior weight is
    exp(-hundreds).
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    log_ph = sps.log_ndtr(h)
    cond_mean = -np.exp(-0.5 * h * h - _LOG_SQRT_2PI - log_ph)
    denom = np.sqrt(max(1.0 - rho * rho, 1e-12))
    return log_ph + sps.log_ndtr((k - rho * cond_mean) / denom)


# ---------------------------------------------------------------------------
# Orthant probabilities
# ---------------------------------------------------------------------------

def _validate_spd(mat, name="matrix"):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DomainError(f"{name} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise DomainError(f"{name} must be symmetric")
    try:
        chol = cholesky(mat, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises LinAlgError
        raise DomainError(f"{name} is not positive definite") from exc
    except Exception as exc:
        raise DomainError(f"{name} is not positive definite") from exc
    return mat, chol


def mvn_orthant_upper(shift, corr, seed=0, target_abs_error=1e-6):
    """P(Y > -shift componentwise) for ``Y ~ N(0, corr)``.

    Equivalently the CDF value ``Phi(shift; corr)`` read as upper-orthant
    mass.  Exact closed forms are used for p <= 2; for p >= 3 a seeded
    randomized quasi-Monte-Carlo integration is run, so results are
    deterministic for a fixed ``seed``.

    Parameters
    ----------
    shift : array_like, shape (p,)
    corr : array_like, shape (p, p)
        Symmetric positive definite; need not have unit diagonal.
    seed : int
        Seed for the QMC path (ignored for p <= 2).
    target_abs_error : float
        Requested absolute error for the QMC path.

    Returns
    -------
    float in [0, 1]
    """
    return float(np.exp(log_mvn_orthant_upper(shift, corr, seed=seed,
                                              target_abs_error=target_abs_error)))


def log_mvn_orthant_upper(shift, corr, seed=0, target_abs_error=1e-6):
    """Log of :func:`mvn_orthant_upper`; never returns -inf for finite shifts."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    corr, chol = _validate_spd(corr, "corr")
    p = shift.shape[0]
    if corr.shape[0] != p:
        raise DomainError("shift and corr dimensions disagree")
    sd = np.sqrt(np.diag(corr))
    if p == 1:
        return float(sps.log_ndtr(shift[0] / sd[0]))
    if p == 2:
        rho = corr[0, 1] / (sd[0] * sd[1])
        # P(Y > -s) = P(-Y < s) = Phi2(s1, s2; rho) by central symmetry.
        val = float(_bvn_cdf(shift[0] / sd[0], shift[1] / sd[1], rho))
        if val > 1e-280:
            return float(np.log(val))
        # fall through to the sequential log-space estimator in the deep tail
    logp, _ = _orthant_qmc_log(-shift, chol, seed=seed,
                               target_abs_error=target_abs_error)
    return float(logp)


def _orthant_qmc_log(lower, chol, seed=0, target_abs_error=1e-6,
                     n_start=1024, n_max=65536, n_batches=8):
    """Genz separation-of-variables QMC for ``P(Z > lower)``, ``Z ~ N(0, LL')``.

    Runs ``n_batches`` independently scrambled Sobol batches and doubles the
    batch size until the between-batch standard error meets the target.
    All per-coordinate tail probabilities are handled through ``log_ndtr``
    and ``ndtri_exp`` so the estimate survives far into the tail.

    Returns ``(log_probability, estimated_abs_error)``.
    """
    p = lower.shape[0]
    n = n_start
    rng = np.random.default_rng(seed)
    scramble_seeds = rng.integers(0, 2**63 - 1, size=n_batches)
    while True:
        batch_logs = np.empty(n_batches)
        for b in range(n_batches):
            logw = _orthant_qmc_logweights(lower, chol, int(scramble_seeds[b]), n)
            batch_logs[b] = sps.logsumexp(logw) - np.log(logw.shape[0])
        logp = sps.logsumexp(batch_logs) - np.log(n_batches)
        prob = np.exp(logp)
        spread = np.exp(batch_logs)
        err = spread.std(ddof=1) / np.sqrt(n_batches) if prob > 0 else 0.0
        if err <= target_abs_error or n >= n_max:
            return logp, err
        n *= 2


def _orthant_qmc_logweights(lower, chol, scramble_seed, n):
    """Log importance weights of the sequential conditioning transform."""
    p = lower.shape[0]
    dim = max(p - 1, 1)
    sob = qmc.Sobol(d=dim, scramble=True, seed=scramble_seed)
    u = sob.random(n)  # (n, dim)
    logw = np.full(n, sps.log_ndtr(-lower[0] / chol[0, 0]))
    y = np.empty((n, p))
    if p == 1:
        return logw
    # first coordinate sampled from its truncated marginal
    log_tail0 = logw[0]
    logq = np.log1p(-u[:, 0]) + log_tail0
    y[:, 0] = -sps.ndtri_exp(logq)
    for k in range(1, p):
        cond = y[:, :k] @ chol[k, :k]
        a_k = (lower[k] - cond) / chol[k, k]
        log_tail = sps.log_ndtr(-a_k)
        logw += log_tail
        if k < p - 1:
            logq = np.log1p(-u[:, k]) + log_tail
            y[:, k] = -sps.ndtri_exp(logq)
    return logw


# ---------------------------------------------------------------------------
# Truncated multivariate normal moments (positive orthant)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TNMoments:
    """First and second moments of a positive-orthant truncated normal.

    ``mean`` is elementwise positive and ``second_moment - mean mean'`` is
    positive semi-definite.
    """

    mean: np.ndarray
    second_moment: np.ndarray

    def cov(self):
        return self.second_moment - np.outer(self.mean, self.mean)


def tn_moments(mean_param, cov, seed=0):
    """Moments of ``N(mean_param, cov)`` truncated to the positive orthant.

    Uses the Tallis-type moment-reduction identities: the mean involves
    (p-1)-dimensional orthant probabilities and the second moment
    additionally (p-2)-dimensional ones.  Orthant probabilities are exact
    for dimensions <= 2 and seeded QMC above that.

    Parameters
    ----------
    mean_param : array_like, shape (p,)
    cov : array_like, shape (p, p)
        Symmetric positive definite.
    seed : int
        Seed threaded into the QMC orthant evaluations.

    Returns
    -------
    TNMoments

    Raises
    ------
    NumericalDegeneracyError
        If the orthant mass is numerically zero.
    """
    xi = np.atleast_1d(np.asarray(mean_param, dtype=float))
    cov, _ = _validate_spd(cov, "cov")
    p = xi.shape[0]
    a = -xi  # N(0, cov) truncated to z > a

    log_alpha = log_mvn_orthant_upper(-a, cov, seed=seed)
    if log_alpha < ORTHANT_FLOOR_LOG:
        raise NumericalDegeneracyError(
            f"orthant probability underflow (log mass {log_alpha:.1f})")
    alpha = np.exp(log_alpha)

    sd = np.sqrt(np.diag(cov))
    # First-order reductions F_k
    f1 = np.empty(p)
    for k in range(p):
        dens = np.exp(-0.5 * (a[k] / sd[k]) ** 2) / (np.sqrt(2.0 * np.pi) * sd[k])
        if p == 1:
            tail = 1.0
        else:
            idx = [j for j in range(p) if j != k]
            cond_mean = cov[idx, k] * (a[k] / cov[k, k])
            cond_cov = cov[np.ix_(idx, idx)] - np.outer(cov[idx, k], cov[idx, k]) / cov[k, k]
            tail = mvn_orthant_upper(-(a[idx] - cond_mean), cond_cov,
                                     seed=_subseed(seed, 1, k))
        f1[k] = dens * tail

    e_z = cov @ f1 / alpha
    mean = xi + e_z

    # Second-order reductions F_kq
    f2 = np.zeros((p, p))
    for k in range(p):
        for q in range(k + 1, p):
            pair = [k, q]
            s_kk, s_qq, s_kq = cov[k, k], cov[q, q], cov[k, q]
            rho = s_kq / np.sqrt(s_kk * s_qq)
            dens = _bvn_density(a[k], a[q], np.sqrt(s_kk), np.sqrt(s_qq), rho)
            if p == 2:
                tail = 1.0
            else:
                rest = [j for j in range(p) if j not in pair]
                c_pp = cov[np.ix_(pair, pair)]
                c_rp = cov[np.ix_(rest, pair)]
                sol = np.linalg.solve(c_pp, a[pair])
                cond_mean = c_rp @ sol
                cond_cov = cov[np.ix_(rest, rest)] - c_rp @ np.linalg.solve(c_pp, c_rp.T)
                tail = mvn_orthant_upper(-(a[rest] - cond_mean), cond_cov,
                                         seed=_subseed(seed, 2, k * p + q))
            f2[k, q] = f2[q, k] = dens * tail

    ezz = alpha * cov.copy()
    for k in range(p):
        coeff = a[k] * f1[k] / cov[k, k]
        ezz += np.outer(cov[:, k], cov[:, k]) * coeff
        for q in range(p):
            if q == k:
                continue
            vec = cov[:, q] - cov[k, q] * cov[:, k] / cov[k, k]
            ezz += np.outer(cov[:, k], vec) * f2[k, q]
    ezz /= alpha
    ezz = 0.5 * (ezz + ezz.T)

    second = ezz + np.outer(xi, e_z) + np.outer(e_z, xi) + np.outer(xi, xi)
    second = 0.5 * (second + second.T)
    return TNMoments(mean=mean, second_moment=second)


def _subseed(seed, level, index):
    return int(np.random.SeedSequence([seed, level, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Batched TN machinery for the skew-normal E-step
# ---------------------------------------------------------------------------

@dataclass
class TNBatch:
    """Per-row TN quantities sharing one covariance matrix.

    ``log_prob[i]`` is the log orthant mass of ``N(shift_i, cov)`` on the
    positive orthant; ``mean[i]`` and ``second[i]`` the corresponding TN
    moments.  Produced by :func:`tn_batch` for the E-step, where every
    observation shares the component covariance.
    """

    log_prob: np.ndarray          # (m,)
    mean: np.ndarray              # (m, p)
    second: np.ndarray            # (m, p, p)
    _force: np.ndarray = None     # rows whose moments must use the stand-in


def tn_batch(shifts, cov, seed=0, n_qmc=2048):
    """TN moments and orthant masses for many shifts and one covariance.

    Closed forms for p <= 2 (exact); a single scrambled-Sobol sequential
    conditioning pass for p >= 3 (self-normalized, so accuracy is uniform
    in the orthant mass).

    Parameters
    ----------
    shifts : ndarray, shape (m, p)
    cov : ndarray, shape (p, p)
    seed : int
    n_qmc : int
        QMC sample count for the p >= 3 path.
    """
    shifts = np.asarray(shifts, dtype=float)
    m, p = shifts.shape
    cov = np.asarray(cov, dtype=float).reshape(p, p)
    if p == 1:
        batch = _tn_batch_1d(shifts, float(cov[0, 0]))
    elif p == 2:
        batch = _tn_batch_2d(shifts, cov)
    else:
        batch = _tn_batch_qmc(shifts, cov, seed, n_qmc)
    return _tn_guard(batch, shifts, cov)


def _tn_batch_1d(shifts, var):
    sd = np.sqrt(var)
    xi = shifts[:, 0]
    beta = xi / sd
    logp = sps.log_ndtr(beta)
    # hazard computed in log space: h = phi(beta) / Phi(beta)
    log_phi = -0.5 * beta * beta - _LOG_SQRT_2PI
    h = np.exp(log_phi - logp)
    mean = xi + sd * h
    ez2 = var * (1.0 - beta * h) + 2.0 * xi * sd * h + xi * xi
    # second moment floor: E[t^2] >= E[t]^2
    ez2 = np.maximum(ez2, mean * mean)
    return TNBatch(log_prob=logp,
                   mean=mean[:, None],
                   second=ez2[:, None, None])


def _tn_batch_2d(shifts, cov):
    # All density/orthant factors are carried as log ratios against the
    # orthant mass so deep-tail shifts stay finite.
    m = shifts.shape[0]
    a = -shifts  # truncation bounds of the centered variable
    s = np.sqrt(np.diag(cov))
    rho = cov[0, 1] / (s[0] * s[1])
    h1, h2 = shifts[:, 0] / s[0], shifts[:, 1] / s[1]
    alpha_lin = _bvn_cdf(h1, h2, rho)
    deep = alpha_lin <= 1e-280
    logp = np.log(np.maximum(alpha_lin, 1e-300))
    if np.any(deep):
        logp[deep] = _log_bvn_cdf_tail(h1[deep], h2[deep], rho)

    # log F_k = log phi(a_k; s_k) + log P(other > a_other | Z_k = a_k)
    log_f1 = np.empty((m, 2))
    for k in range(2):
        o = 1 - k
        log_dens = -0.5 * (a[:, k] / s[k]) ** 2 - _LOG_SQRT_2PI - np.log(s[k])
        cond_mean = cov[o, k] * a[:, k] / cov[k, k]
        cond_sd = np.sqrt(cov[o, o] - cov[o, k] ** 2 / cov[k, k])
        log_f1[:, k] = log_dens + sps.log_ndtr((cond_mean - a[:, o]) / cond_sd)

    with np.errstate(over="ignore", invalid="ignore"):
        ratio1 = np.exp(log_f1 - logp[:, None])  # F_k / alpha
        e_z = ratio1 @ cov.T
        mean = shifts + e_z

        z1, z2 = a[:, 0] / s[0], a[:, 1] / s[1]
        log_dens2 = (-0.5 * (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2)
                     / (1.0 - rho * rho)
                     - np.log(2.0 * np.pi * s[0] * s[1] * np.sqrt(1.0 - rho * rho)))
        ratio2 = np.exp(log_dens2 - logp)  # phi2(a) / alpha
        ezz = np.broadcast_to(cov, (m, 2, 2)).copy()
        for k in range(2):
            coeff = a[:, k] * ratio1[:, k] / cov[k, k]
            ezz += np.einsum("i,jl->ijl", coeff, np.outer(cov[:, k], cov[:, k]))
            q = 1 - k
            vec = cov[:, q] - cov[k, q] * cov[:, k] / cov[k, k]
            ezz += np.einsum("i,jl->ijl", ratio2, np.outer(cov[:, k], vec))

        second = (ezz
                  + np.einsum("ij,il->ijl", shifts, e_z)
                  + np.einsum("ij,il->ijl", e_z, shifts)
                  + np.einsum("ij,il->ijl", shifts, shifts))
    second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return TNBatch(log_prob=logp, mean=mean, second=second, _force=deep)


def _tn_guard(batch, shifts, cov):
    """Replace non-finite moment rows by a corner-concentration stand-in.

    Rows this deep in the tail carry posterior weights of exp(-hundreds)
    in the E-step, so any finite PSD-consistent value is harmless; NaNs
    would poison the weighted sums.
    """
    p = shifts.shape[1]
    ok = (np.isfinite(batch.mean).all(axis=1)
          & np.isfinite(batch.second).all(axis=(1, 2))
          & np.isfinite(batch.log_prob))
    if batch._force is not None:
        ok &= ~batch._force
    if np.all(ok):
        return batch
    fix = ~ok
    eps = 1e-8
    batch.mean[fix] = eps
    batch.second[fix] = np.eye(p) * eps * eps + eps * eps
    batch.log_prob[fix] = np.where(
        np.isfinite(batch.log_prob[fix]), batch.log_prob[fix], -745.0)
    return batch


def log_orthant_batch(shifts, cov, seed=0, n_qmc=2048):
    """Log positive-orthant masses of ``N(shift_i, cov)`` for many shifts.

    Density-only companion of :func:`tn_batch`: exact for p <= 2, one
    shared sequential QMC pass for p >= 3.
    """
    shifts = np.asarray(shifts, dtype=float)
    m, p = shifts.shape
    cov = np.asarray(cov, dtype=float)
    if p == 1:
        return sps.log_ndtr(shifts[:, 0] / np.sqrt(cov[0, 0]))
    if p == 2:
        s = np.sqrt(np.diag(cov))
        rho = cov[0, 1] / (s[0] * s[1])
        h1, h2 = shifts[:, 0] / s[0], shifts[:, 1] / s[1]
        val = _bvn_cdf(h1, h2, rho)
        deep = val <= 1e-280
        out = np.log(np.maximum(val, 1e-300))
        if np.any(deep):
            out[deep] = _log_bvn_cdf_tail(h1[deep], h2[deep], rho)
        return out
    chol = cholesky(cov, lower=True)
    lower = -shifts
    sob = qmc.Sobol(d=p - 1, scramble=True, seed=seed)
    u = sob.random(n_qmc)
    y = np.empty((m, n_qmc, p - 1))
    logw = np.zeros((m, n_qmc))
    for k in range(p):
        if k == 0:
            a_k = np.broadcast_to((lower[:, 0] / chol[0, 0])[:, None], (m, n_qmc))
        else:
            cond = y[:, :, :k] @ chol[k, :k]
            a_k = (lower[:, k][:, None] - cond) / chol[k, k]
        log_tail = sps.log_ndtr(-a_k)
        logw += log_tail
        if k < p - 1:
            logq = np.log1p(-u[None, :, k]) + log_tail
            y[:, :, k] = -sps.ndtri_exp(logq)
    return sps.logsumexp(logw, axis=1) - np.log(n_qmc)


def _tn_batch_qmc(shifts, cov, seed, n_qmc):
    """Self-normalized sequential-conditioning QMC, vectorized over rows."""
    m, p = shifts.shape
    chol = cholesky(cov, lower=True)
    sob = qmc.Sobol(d=p, scramble=True, seed=seed)
    u = sob.random(n_qmc)  # (n, p)
    lower = -shifts  # (m, p)

    y = np.empty((m, n_qmc, p))
    logw = np.zeros((m, n_qmc))
    for k in range(p):
        if k == 0:
            a_k = np.broadcast_to((lower[:, 0] / chol[0, 0])[:, None], (m, n_qmc))
        else:
            cond = y[:, :, :k] @ chol[k, :k]
            a_k = (lower[:, k][:, None] - cond) / chol[k, k]
        log_tail = sps.log_ndtr(-a_k)
        logw += log_tail
        logq = np.log1p(-u[None, :, k]) + log_tail
        y[:, :, k] = -sps.ndtri_exp(logq)

    log_prob = sps.logsumexp(logw, axis=1) - np.log(n_qmc)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)

    tau = y @ chol.T + shifts[:, None, :]  # (m, n, p)
    mean = np.einsum("mn,mnp->mp", w, tau)
    second = np.einsum("mn,mnp,mnq->mpq", w, tau, tau)
    second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return TNBatch(log_prob=log_prob, mean=mean, second=second)
