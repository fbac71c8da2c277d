"""Linear spline index regression with unknown knots."""

from .admm import AdmmConfig, AdmmState, admm_solve
from .errors import DataError, NumericalError
from .fit import FitConfig, FitResult, NullFit, cold_start, fit_null, fit_oracle, fit_penalized
from .inference import SandwichParts, confidence_interval, sandwich_cov, score_rows, sigma2_hat, wald_beta_test
from .knot_test import KnotTestResult, TestConfig, bootstrap_crit, score_curve, test_knots
from .model import Dataset, SmoothSpec, Theta, index_values, predict, r_squared
from .penalties import PenaltyKind, PenaltyParams, pen_deriv, pen_deriv2, pen_value, prox, soft_threshold
from .simbench import RepMetrics, SimCase, gen_case, run_replications
from .smoothing import KernelKind, hinge, qn, qn_dx, qn_dxx
from .tuning import BicSpec, bic_score, select_lambda

__version__ = "0.1.0"
