"""Robust model-based clustering with mixtures of contaminated
shifted-asymmetric-Laplace and contaminated skew-normal distributions.

Each cluster is a two-part mixture of a "good" density and the same
density with its covariance inflated by a per-component factor, so
outliers, noise and spurious points are absorbed and flagged instead of
distorting the clusters.  Fitting is by expectation-conditional
maximization with multi-start initialization; the number of clusters is
chosen by BIC.
"""

from ._fit_common import FitConfig, FitResult
from .dataset import Dataset
from .densities import (SAL, SN, ComponentParams, MixtureModel,
                        contaminated_component_logpdf, mixture_loglik,
                        sal_logpdf, sn_logpdf)
from .ecm_sal import SalResponsibilities, cm_step1_sal, cm_step2_eta_sal, e_step_sal, fit_sal
from .ecm_sn import SnResponsibilities, cm_step1_sn, cm_step2_eta_sn, e_step_sn, fit_sn
from .evaluation import adjusted_rand_index, bad_point_report, partition_with_bad, rand_index
from .selection import SweepResult, bic, param_count, sweep_G
from .simulate import (Scenario, inject_bad, sample_sal, sample_sn,
                       scenario_dataset, table1_scenario)
from .special import (GigMoments, TNMoments, gig_moments, log_bessel_k,
                      log_mvn_orthant_upper, mvn_orthant_upper, tn_moments)

__version__ = "0.1.0"

__all__ = [
    "SAL", "SN",
    "ComponentParams", "MixtureModel", "Dataset",
    "FitConfig", "FitResult", "SweepResult",
    "SalResponsibilities", "SnResponsibilities",
    "sal_logpdf", "sn_logpdf", "contaminated_component_logpdf", "mixture_loglik",
    "e_step_sal", "cm_step1_sal", "cm_step2_eta_sal", "fit_sal",
    "e_step_sn", "cm_step1_sn", "cm_step2_eta_sn", "fit_sn",
    "bic", "param_count", "sweep_G",
    "rand_index", "adjusted_rand_index", "partition_with_bad", "bad_point_report",
    "Scenario", "sample_sal", "sample_sn", "inject_bad", "table1_scenario",
    "scenario_dataset",
    "GigMoments", "TNMoments", "log_bessel_k", "gig_moments",
    "mvn_orthant_upper", "log_mvn_orthant_upper", "tn_moments",
    "__version__",
]
