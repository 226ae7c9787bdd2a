"""Shared fitting machinery for the two ECM implementations: configuration,
initialization from hard partitions, Aitken stopping, the monotone ECM loop
and the multi-start driver."""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import Dataset
from .densities import ComponentParams, MixtureModel
from .exceptions import ConfigError, DegenerateStartError, FitFailureError
from .selection import bic as bic_score
from .selection import param_count

log = logging.getLogger(__name__)

SIGMA_EIG_FLOOR = 1e-8
MIN_ETA = 1.0 + 1e-8
ASCENT_TOL = 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Knobs of a single fit.

    ``seed`` drives every stochastic ingredient (k-means seeding, random
    restarts, QMC scrambling), so a fit is reproducible bit-for-bit.
    ``freeze`` holds tokens for degenerate-mode testing: ``v_one`` pins
    all good-point posteriors at 1, ``alpha_zero`` keeps the skewness at
    zero, ``lambda`` and ``eta`` skip those updates.
    """

    max_iter: int = 1000
    tol: float = 1e-6
    eta_max: float = 1000.0
    lambda_lo: float = 0.5
    n_starts: int = 4
    seed: int = 0
    init: str = "kmeans"  # kmeans | random_partition | labels | model
    init_model: Optional[MixtureModel] = None
    lambda_init: float = 0.95
    eta_init: float = 1.1
    n_qmc: int = 2048
    freeze: frozenset = frozenset()

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.eta_max <= 1.0:
            raise ConfigError("eta_max must exceed 1")
        if not (0.0 <= self.lambda_lo < 1.0):
            raise ConfigError("lambda_lo must lie in [0, 1)")
        if self.init not in ("kmeans", "random_partition", "labels", "model"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.init == "model" and self.init_model is None:
            raise ConfigError("init='model' requires init_model")
        unknown = set(self.freeze) - {"v_one", "alpha_zero", "lambda", "eta"}
        if unknown:
            raise ConfigError(f"unknown freeze tokens {sorted(unknown)}")


@dataclass
class FitResult:
    """Converged parameters plus the posterior quantities of the last E-step."""

    model: MixtureModel
    z_hat: np.ndarray
    v_hat: np.ndarray
    loglik_trace: np.ndarray
    bic: float
    iterations: int
    converged: bool
    hard_labels: np.ndarray
    bad_flags: np.ndarray
    flags: tuple = ()
    start_index: int = 0

    @property
    def loglik(self):
        return float(self.loglik_trace[-1])


# ---------------------------------------------------------------------------
# Initial partitions
# ---------------------------------------------------------------------------

def kmeans_partition(X, G, rng, n_iter=100):
    """Seeded k-means (++ initialization, Lloyd updates) on standardized
    columns; plain numpy so results do not depend on BLAS thread counts."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - X.mean(axis=0)) / sd

    centers = np.empty((G, p))
    centers[0] = Z[rng.integers(n)]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for g in range(1, G):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[g] = Z[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((Z - centers[g]) ** 2, axis=1))

    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dists = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for g in range(G):
            mask = new_labels == g
            if not np.any(mask):
                far = dists[np.arange(n), new_labels].argmax()
                new_labels[far] = g
                mask = new_labels == g
            centers[g] = Z[mask].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def random_partition(n, G, rng):
    """Balanced random partition: a shuffled round-robin assignment."""
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % G
    return labels


def random_centers_partition(X, G, rng):
    """Assign each point to the nearest of G randomly chosen data points.

    Spatially coherent, unlike label shuffling, so restarts explore
    genuinely different attraction basins.
    """
    n = X.shape[0]
    centers = X[rng.choice(n, size=G, replace=False)]
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def spd_floor(S, floor=SIGMA_EIG_FLOOR):
    """Symmetrize and raise eigenvalues to ``floor``."""
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals[0] >= floor:
        return S
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def model_from_partition(X, labels, G, family, config):
    """Initial parameters from a hard partition.

    Locations start at component medians (robust against the very bad
    points the model targets), skewness at the per-column third-moment
    direction scaled by the component standard deviation.
    """
    n, p = X.shape
    comps = []
    lam0 = 1.0 - 1e-12 if "v_one" in config.freeze else config.lambda_init
    for g in range(G):
        mask = labels == g
        n_g = int(mask.sum())
        if n_g < p + 1:
            raise DegenerateStartError(
                f"component {g} initialized with {n_g} < p+1 = {p + 1} points")
        sub = X[mask]
        mu = np.median(sub, axis=0)
        centered = sub - mu
        sigma = spd_floor(centered.T @ centered / n_g, 1e-6)
        if "alpha_zero" in config.freeze:
            alpha = np.zeros(p)
        else:
            m3 = np.mean(centered ** 3, axis=0)
            norm = np.linalg.norm(m3)
            direction = m3 / norm if norm > 0 else np.zeros(p)
            alpha = direction * sub.std(axis=0)
        comps.append(ComponentParams(
            pi=n_g / n, lam=lam0, eta=config.eta_init,
            mu=mu, alpha=alpha, sigma=sigma, family=family))
    return MixtureModel(family=family, components=tuple(comps))


def initial_model(X, data, G, family, config, start_idx, rng):
    """Start 0 uses the configured initializer; later starts alternate
    random-center and balanced-random partitions for basin diversity."""
    if start_idx == 0:
        if config.init == "model":
            m = config.init_model
            if m.family != family or m.G != G or m.p != X.shape[1]:
                raise ConfigError("init_model does not match family/G/p")
            return m
        if config.init == "labels":
            if data is None or getattr(data, "labels", None) is None:
                raise ConfigError("init='labels' requires labelled data")
            labels = np.asarray(data.labels)
            classes = np.unique(labels)
            if classes.shape[0] != G:
                raise ConfigError(
                    f"init='labels' needs exactly G={G} classes, got {classes.shape[0]}")
            dense = np.searchsorted(classes, labels)
            return model_from_partition(X, dense, G, family, config)
        if config.init == "kmeans":
            return model_from_partition(X, kmeans_partition(X, G, rng), G, family, config)
        return model_from_partition(X, random_partition(X.shape[0], G, rng),
                                    G, family, config)
    if start_idx % 2:
        labels = random_centers_partition(X, G, rng)
    else:
        labels = random_partition(X.shape[0], G, rng)
    return model_from_partition(X, labels, G, family, config)


# ---------------------------------------------------------------------------
# Convergence and the ECM loop
# ---------------------------------------------------------------------------

def aitken_converged(trace, tol):
    """Aitken-accelerated stopping rule on the log-likelihood sequence.

    A supplementary relative small-step rule (three consecutive gains
    below 1e-9 |loglik|) covers flat ridges where the Aitken ratio tends
    to one sub-geometrically, e.g. the skewness direction on effectively
    Gaussian data or the contamination factor pinned at its lower bound.
    """
    if len(trace) < 3:
        return False
    l1, l2, l3 = trace[-3], trace[-2], trace[-1]
    d1 = l2 - l1
    d2 = l3 - l2
    if abs(d2) < 1e-12 * max(1.0, abs(l3)):
        return True
    if len(trace) >= 4 and max(np.diff(trace[-4:])) < 1e-9 * max(1.0, abs(l3)):
        return True
    if d1 == 0.0:
        return True
    a = d2 / d1
    if a >= 1.0:
        return False
    l_inf = l2 + d2 / (1.0 - a)
    return abs(l_inf - l3) < tol


def ecm_loop(X, model, config, e_step, cm_step, qmc_seed):
    """Iterate E / CM steps until the Aitken rule fires.

    The observed log-likelihood is evaluated in each E-step; a decrease
    beyond the ascent tolerance reverts to the previous iterate and stops,
    so reported traces are nondecreasing by construction (with exact
    conditional expectations they are nondecreasing by the usual EM
    argument anyway).
    """
    trace = []
    flags = []
    last_model, last_resp = None, None
    converged = False
    for it in range(config.max_iter + 1):
        resp = e_step(X, model, config, qmc_seed)
        flags.extend(resp.flags)
        if not np.isfinite(resp.loglik):
            raise DegenerateStartError(
                f"log-likelihood became non-finite at iteration {it}")
        if trace and resp.loglik < trace[-1] - ASCENT_TOL:
            flags.append(f"ascent_stalled at iteration {it}")
            converged = True
            break
        trace.append(resp.loglik)
        last_model, last_resp = model, resp
        if aitken_converged(trace, config.tol):
            converged = True
            break
        if it == config.max_iter:
            break
        model = cm_step(X, resp, model, config, flags)
    if last_model is None:
        raise DegenerateStartError("log-likelihood not finite at initialization")
    return last_model, last_resp, np.asarray(trace), converged, flags


def multi_start_fit(data, G, family, config, e_step, cm_step):
    """Run ``config.n_starts`` seeded starts and keep the best final
    log-likelihood; raises a structured failure if every start dies."""
    X = data.x if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    n, p = X.shape
    if G < 1:
        raise ConfigError("G must be >= 1")
    if n <= G * (p + 1):
        raise ConfigError(
            f"n = {n} too small for G = {G} components in dimension {p}")

    ds = data if isinstance(data, Dataset) else None
    best = None
    reasons = []
    n_starts = max(1, config.n_starts)
    for s in range(n_starts):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, s]))
        qmc_seed = int(np.random.SeedSequence([config.seed, s, 7]).generate_state(1)[0])
        try:
            model0 = initial_model(X, ds, G, family, config, s, rng)
            model, resp, trace, converged, flags = ecm_loop(
                X, model0, config, e_step, cm_step, qmc_seed)
        except (DegenerateStartError, ConfigError) as exc:
            if isinstance(exc, ConfigError):
                raise
            reasons.append(str(exc))
            log.debug("start %d degenerate: %s", s, exc)
            continue
        cand = _build_result(model, resp, trace, converged, flags, s, n, family, G, p)
        if best is None or cand.loglik > best.loglik:
            best = cand
    if best is None:
        raise FitFailureError(reasons)
    return best


def _build_result(model, resp, trace, converged, flags, start_idx, n, family, G, p):
    hard = resp.z_hat.argmax(axis=1)
    v_assigned = resp.v_hat[np.arange(n), hard]
    bad = v_assigned < 0.5
    score = bic_score(trace[-1], param_count(family, G, p), n)
    return FitResult(
        model=model,
        z_hat=resp.z_hat,
        v_hat=resp.v_hat,
        loglik_trace=trace,
        bic=float(score),
        iterations=len(trace) - 1,
        converged=converged,
        hard_labels=hard,
        bad_flags=bad,
        flags=tuple(dict.fromkeys(flags)),
        start_index=start_idx,
    )


# ---------------------------------------------------------------------------
# Shared eta machinery
# ---------------------------------------------------------------------------

def eta_quadratic_candidates(S, T, U):
    """Positive roots of ``S*s**2 + T*s + U = 0`` in ``s = sqrt(eta)``,
    returned as eta values."""
    if S == 0.0:
        if T == 0.0:
            return []
        s = -U / T
        return [s * s] if s > 0 else []
    disc = T * T - 4.0 * S * U
    if disc < 0.0:
        return []
    sq = np.sqrt(disc)
    out = []
    for s in ((-T + sq) / (2.0 * S), (-T - sq) / (2.0 * S)):
        if s > 0.0 and np.isfinite(s):
            out.append(s * s)
    return out


def maximize_eta(q_of_eta, eta_prev, candidates, eta_max):
    """Pick the contamination factor: best admissible quadratic root that
    improves the restricted objective, else a bounded 1-d search, else the
    previous value (which preserves ECM monotonicity)."""
    from scipy.optimize import minimize_scalar

    q_prev = q_of_eta(eta_prev)
    best_eta, best_q = eta_prev, q_prev
    for cand in candidates:
        if MIN_ETA < cand <= eta_max:
            q = q_of_eta(cand)
            if q > best_q:
                best_eta, best_q = cand, q
    if best_eta != eta_prev:
        return best_eta
    res = minimize_scalar(lambda e: -q_of_eta(e), bounds=(MIN_ETA, eta_max),
                          method="bounded", options={"xatol": 1e-10})
    if res.success and -res.fun > q_prev + 1e-12 * max(1.0, abs(q_prev)):
        return float(np.clip(res.x, MIN_ETA, eta_max))
    return eta_prev
