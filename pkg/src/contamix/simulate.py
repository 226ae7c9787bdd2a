"""Sample generators for both families, bad-point injection, and the
two-component benchmark scenario used throughout the test harness."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset
from .densities import SAL, SN, FAMILIES
from .exceptions import DomainError

__all__ = [
    "Scenario",
    "sample_sal",
    "sample_sn",
    "inject_bad",
    "table1_scenario",
    "scenario_dataset",
]

DEFAULT_BOX_MARGIN = 0.5


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_sal(n, mu, sigma, alpha, seed):
    """Draw n SAL variates via ``X = mu + W*alpha + sqrt(W)*Y`` with
    ``W ~ Exp(1)`` and ``Y ~ N(0, sigma)``."""
    rng = _rng(seed)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    p = mu.shape[0]
    if n == 0:
        return np.empty((0, p))
    w = rng.exponential(1.0, size=n)
    L = np.linalg.cholesky(sigma)
    y = rng.standard_normal((n, p)) @ L.T
    return mu + np.outer(w, alpha) + np.sqrt(w)[:, None] * y


def sample_sn(n, mu, sigma, alpha, seed):
    """Draw n skew-normal variates via ``X = mu + A*tau + U`` with
    ``tau ~ HN(0, I)`` (componentwise half-normal) and ``U ~ N(0, sigma)``."""
    rng = _rng(seed)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float)
    p = mu.shape[0]
    if n == 0:
        return np.empty((0, p))
    tau = np.abs(rng.standard_normal((n, p)))
    L = np.linalg.cholesky(sigma)
    u = rng.standard_normal((n, p)) @ L.T
    return mu + alpha * tau + u


def inject_bad(data, count, box, seed):
    """Append ``count`` uniform draws over ``box`` and flag them.

    ``box`` is a (2, p) array of (lower, upper) bounds per coordinate.
    Returns ``(augmented_data, bad_flags)``.
    """
    data = np.asarray(data, dtype=float)
    box = np.asarray(box, dtype=float)
    if count == 0:
        return data, np.zeros(data.shape[0], dtype=bool)
    lo, hi = box[0], box[1]
    if not (np.all(np.isfinite(box)) and np.all(lo < hi)):
        raise DomainError("bad-point box must be finite with lower < upper")
    rng = _rng(seed)
    bad = lo + (hi - lo) * rng.random((count, data.shape[1]))
    out = np.vstack([data, bad])
    flags = np.zeros(out.shape[0], dtype=bool)
    flags[data.shape[0]:] = True
    return out, flags


def default_box(data, margin=DEFAULT_BOX_MARGIN):
    """Data bounding box inflated by ``margin`` on each side."""
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    span = hi - lo
    return np.vstack([lo - margin * span, hi + margin * span])


@dataclass(frozen=True)
class Scenario:
    """A simulation recipe: per-component sizes and parameters plus the
    bad-point count and injection box (None = bounding box + margin)."""

    family: str
    components: tuple  # of (n_g, mu, alpha, sigma)
    n_bad: int = 0
    box: Optional[np.ndarray] = None
    box_margin: float = DEFAULT_BOX_MARGIN
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if not self.components:
            raise DomainError("scenario needs at least one component")
        if any(int(c[0]) < 1 for c in self.components):
            raise DomainError("component sizes must be >= 1")

    def to_dict(self):
        comps = []
        for n_g, mu, alpha, sigma in self.components:
            comps.append({
                "n": int(n_g),
                "mu": np.asarray(mu, dtype=float).tolist(),
                "alpha": np.asarray(alpha, dtype=float).tolist(),
                "sigma": np.asarray(sigma, dtype=float).tolist(),
            })
        return {
            "family": self.family,
            "components": comps,
            "n_bad": int(self.n_bad),
            "box": None if self.box is None else np.asarray(self.box).tolist(),
            "box_margin": float(self.box_margin),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d):
        comps = tuple(
            (int(c["n"]), np.asarray(c["mu"], dtype=float),
             np.asarray(c["alpha"], dtype=float), np.asarray(c["sigma"], dtype=float))
            for c in d["components"])
        box = None if d.get("box") is None else np.asarray(d["box"], dtype=float)
        return cls(family=d["family"], components=comps, n_bad=int(d.get("n_bad", 0)),
                   box=box, box_margin=float(d.get("box_margin", DEFAULT_BOX_MARGIN)),
                   seed=int(d.get("seed", 0)))


def table1_scenario(family, seed=0, n_bad=20):
    """Two-cluster benchmark preset: 90 + 90 points in two dimensions with
    opposing skewness, plus uniformly scattered bad points."""
    mu1 = np.array([1.0, -2.0])
    mu2 = np.array([5.0, -5.0])
    alpha1 = np.array([1.0, 1.0])
    alpha2 = np.array([-1.0, -1.0])
    sigma1 = np.array([[1.0, 0.5], [0.5, 1.0]])
    sigma2 = np.eye(2)
    return Scenario(
        family=family,
        components=((90, mu1, alpha1, sigma1), (90, mu2, alpha2, sigma2)),
        n_bad=n_bad,
        seed=seed,
    )


def scenario_dataset(scenario):
    """Materialize a Scenario into a labelled Dataset.

    Per-component seeds derive from the scenario seed, so identical
    scenarios produce identical bytes.
    """
    sampler = sample_sal if scenario.family == SAL else sample_sn
    blocks = []
    labels = []
    for g, (n_g, mu, alpha, sigma) in enumerate(scenario.components):
        sub = np.random.default_rng(np.random.SeedSequence([scenario.seed, g]))
        blocks.append(sampler(int(n_g), mu, sigma, alpha, sub))
        labels.append(np.full(int(n_g), g, dtype=int))
    x = np.vstack(blocks)
    labels = np.concatenate(labels)
    box = scenario.box if scenario.box is not None else default_box(x, scenario.box_margin)
    bad_rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 10_000]))
    x, flags = inject_bad(x, scenario.n_bad, box, bad_rng)
    labels = np.concatenate([labels, np.full(scenario.n_bad, len(scenario.components), dtype=int)])
    return Dataset(x=x, labels=labels, bad_truth=flags)
