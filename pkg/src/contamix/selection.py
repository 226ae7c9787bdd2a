"""Model scoring and the sweep over the number of components."""

from dataclasses import dataclass

import numpy as np

from .densities import FAMILIES
from .exceptions import DomainError, FitFailureError

__all__ = ["bic", "param_count", "sweep_G", "SweepResult"]


def bic(loglik, n_params, n):
    """``2*loglik - n_params*log(n)``; larger is better under this sign
    convention."""
    if n < 1:
        raise DomainError("bic needs n >= 1")
    return 2.0 * loglik - n_params * np.log(n)


def param_count(family, G, p):
    """Number of free parameters of a G-component contaminated mixture.

    ``(G-1)`` mixing weights plus, per component, the good-point
    proportion, the inflation factor, location, skewness, and the
    ``p(p+1)/2`` covariance entries.  Identical for both families since
    the skewness matrix is diagonal.
    """
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    if G < 1 or p < 1:
        raise DomainError("param_count needs G >= 1 and p >= 1")
    per_component = 2 + p + p + p * (p + 1) // 2
    return (G - 1) + G * per_component


@dataclass(frozen=True)
class SweepResult:
    """Fits keyed by G with the best converged fit by BIC."""

    fits: dict
    best_G: int
    best: object
    failures: dict

    def bic_table(self):
        rows = []
        for g in sorted(self.fits):
            fit = self.fits[g]
            rows.append({"g": g, "bic": fit.bic, "loglik": fit.loglik_trace[-1],
                         "converged": bool(fit.converged)})
        for g in sorted(self.failures):
            rows.append({"g": g, "bic": None, "loglik": None, "converged": False,
                         "error": self.failures[g]})
        return rows


def sweep_G(data, G_range, family, config):
    """Fit every G in ``G_range`` and select the best converged fit by BIC.

    Non-converged fits are retained in ``fits`` but never selected; a
    structured failure is raised if nothing converged anywhere.
    """
    from .ecm_sal import fit_sal
    from .ecm_sn import fit_sn

    g_values = sorted(set(int(g) for g in G_range))
    if not g_values:
        raise DomainError("empty G range")
    fit_fn = fit_sal if family == "sal" else fit_sn

    fits = {}
    failures = {}
    for g in g_values:
        try:
            fits[g] = fit_fn(data, g, config)
        except FitFailureError as exc:
            failures[g] = str(exc)

    converged = {g: f for g, f in fits.items() if f.converged}
    if not converged:
        raise FitFailureError(
            [f"G={g}: {failures.get(g, 'did not converge')}" for g in g_values])
    best_G = max(sorted(converged), key=lambda g: converged[g].bic)
    return SweepResult(fits=fits, best_G=best_G, best=converged[best_G],
                       failures=failures)
