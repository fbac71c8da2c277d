"""Plug-in variance, score vectors and sandwich covariance for a fitted model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NumericalError
from .model import Dataset, SmoothSpec, Theta, index_values, residuals_smoothed
from .penalties import PenaltyParams, pen_deriv2
from .smoothing import qn, qn_dx


@dataclass(frozen=True)
class SandwichParts:
    sigma2: float
    v_n: np.ndarray
    sigma_lambda: np.ndarray
    xi: np.ndarray
    # indices of knot coefficients inside the penalty's shrinkage zone
    flagged: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.xi), 0.0, None))


def sigma2_hat(data: Dataset, theta: Theta, spec: SmoothSpec) -> float:
    """Mean squared smoothed residual."""
    r = residuals_smoothed(data, theta, spec)
    return float(r @ r) / data.n


def score_rows(data: Dataset, theta: Theta, spec: SmoothSpec) -> np.ndarray:
    """Rows ``H_ni``: the negative gradient of each smoothed residual.

    Columns follow :meth:`Theta.to_vector`: knot slopes, knot locations,
    ``alpha0``, ``beta_2..beta_d1``, ``gamma0``, ``gamma``.
    """
    w = index_values(data, theta)
    xt = data.x[:, 1:]
    if theta.n_knots:
        q = qn(w[:, None], theta.tau[None, :], spec.delta, spec.kernel)
        dq = qn_dx(w[:, None], theta.tau[None, :], spec.delta, spec.kernel)
        slope = theta.alpha0 + dq @ theta.alpha
        tau_block = -dq * theta.alpha[None, :]
    else:
        q = np.empty((data.n, 0))
        tau_block = np.empty((data.n, 0))
        slope = np.full(data.n, theta.alpha0)
    return np.column_stack([q, tau_block, w, xt * slope[:, None], data.z_design])


def penalty_curvature(theta: Theta, pen: PenaltyParams | None) -> tuple[np.ndarray, tuple]:
    """Diagonal of ``Sigma_lambda`` and the knots whose ``|alpha|`` is within ``t*lambda``."""
    s = 1 + theta.beta_rest.size + theta.gamma.size + 1 + 2 * theta.n_knots
    diag = np.zeros(s)
    if pen is None or theta.n_knots == 0 or pen.lam == 0:
        return diag, ()
    a = np.abs(theta.alpha)
    nz = a > 0
    diag[: theta.n_knots][nz] = pen_deriv2(a[nz], pen)
    flagged = tuple(int(j) for j in np.flatnonzero(a <= pen.kind.t * pen.lam))
    return diag, flagged


def sandwich_cov(data: Dataset, theta: Theta, spec: SmoothSpec, pen: PenaltyParams | None = None) -> SandwichParts:
    """Sandwich estimate ``n^-1 sigma2 (V + S)^-1 V (V + S)^-1``.

    ``pen=None`` (or ``lambda = 0``) gives the unpenalised covariance.
    """
    n = data.n
    h = score_rows(data, theta, spec)
    v_n = h.T @ h / n
    diag, flagged = penalty_curvature(theta, pen)
    bread = v_n + np.diag(diag)
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("bread matrix V_n + Sigma_lambda is singular") from exc
    if not np.all(np.isfinite(bread_inv)) or np.linalg.cond(bread) > 1e14:
        raise NumericalError("bread matrix V_n + Sigma_lambda is numerically singular")
    s2 = sigma2_hat(data, theta, spec)
    xi = s2 / n * bread_inv @ v_n @ bread_inv
    xi = 0.5 * (xi + xi.T)
    return SandwichParts(sigma2=s2, v_n=v_n, sigma_lambda=np.diag(diag), xi=xi, flagged=flagged)


def confidence_interval(parts: SandwichParts, theta: Theta, j: int, level: float = 0.05) -> tuple[float, float]:
    """Normal interval ``theta_j -/+ z_{level/2} * se_j`` for the ``j``-th stacked parameter."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    var = parts.xi[j, j]
    if var < 0:
        raise NumericalError(f"negative variance estimate for parameter {j}")
    est = theta.to_vector()[j]
    half = stats.norm.isf(level / 2.0) * np.sqrt(var)
    return float(est - half), float(est + half)


def confidence_intervals(parts: SandwichParts, theta: Theta, level: float = 0.05) -> np.ndarray:
    est = theta.to_vector()
    half = stats.norm.isf(level / 2.0) * parts.se
    return np.column_stack([est - half, est + half])


def wald_beta_test(parts: SandwichParts, theta: Theta) -> tuple[float, float]:
    """Wald statistic for ``beta_2 = ... = beta_d1 = 0`` and its chi-square p-value."""
    d = theta.beta_rest.size
    if d < 1:
        raise ValueError("the Wald test needs at least two index covariates")
    start = 2 * theta.n_knots + 1
    block = parts.xi[start : start + d, start : start + d]
    b = theta.beta_rest
    if not np.any(b):
        return 0.0, 1.0
    try:
        stat = float(b @ np.linalg.solve(block, b))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("beta block of the covariance is singular") from exc
    return stat, float(stats.chi2.sf(stat, d))
