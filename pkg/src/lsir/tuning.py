"""Information criterion and tuning-parameter selection along a lambda path."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fit as _fit
from .errors import NumericalError
from .model import Dataset, Theta, residuals

log = logging.getLogger(__name__)

CN_CHOICES = ("1", "loglogn")


@dataclass(frozen=True)
class BicSpec:
    cn: str = "loglogn"

    def __post_init__(self):
        key = str(self.cn).strip().lower().replace(" ", "")
        aliases = {"one": "1", "1": "1", "1.0": "1", "loglogn": "loglogn", "loglog": "loglogn"}
        if key not in aliases:
            raise ValueError(f"unknown C_n choice {self.cn!r}; expected '1' or 'loglogn'")
        object.__setattr__(self, "cn", aliases[key])

    def weight(self, n: int) -> float:
        return 1.0 if self.cn == "1" else float(np.log(np.log(n)))


def bic_score(data: Dataset, theta: Theta, spec: BicSpec = BicSpec()) -> float:
    """``log(mean squared hinge residual) + (2M + 2 + d1 + d2) * C_n * log(n) / (2n)``.

    Returns ``-inf`` when the fit interpolates the data exactly.
    """
    n = data.n
    r = residuals(data, theta)
    mse = float(r @ r) / n
    k = 2 * theta.n_knots + 2 + data.d1 + data.d2
    penalty = k * spec.weight(n) * np.log(n) / (2.0 * n)
    if mse == 0.0:
        log.warning("zero residual sum of squares; BIC is -inf")
        return float("-inf")
    return float(np.log(mse) + penalty)


def select_lambda(data: Dataset, cfg: "_fit.FitConfig", with_cov: bool = True) -> "_fit.FitResult":
    """Fit every grid value in descending order and keep the BIC minimiser.

    ``cfg.path`` picks the start at each grid value: ``"warm"`` continues from
    the previous value's solution, ``"cold"`` restarts from
    :func:`fit.cold_start`, and ``"both"`` runs the two and keeps the lower
    penalised objective. Ties in BIC go to the larger lambda.
    """
    grid = _fit.lambda_grid(data, cfg)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    spec = BicSpec(cfg.cn)
    best = None
    path = []
    warm = None
    errors = []
    for lam in grid:
        tries = []
        starts = []
        if cfg.path in ("cold", "both") or warm is None:
            starts.append(None)
        if cfg.path in ("warm", "both") and warm is not None:
            starts.append(warm)
        for start in starts:
            try:
                tries.append(_fit.fit_penalized(data, cfg, float(lam), warm=start, with_cov=False))
            except NumericalError as exc:
                errors.append((float(lam), str(exc)))
        if not tries:
            continue
        res = min(tries, key=lambda r: r.diagnostics["final_objective"])
        # a fit that ran out of outer iterations is a poor seed for its neighbour
        warm = res.warm if res.diagnostics["converged"] else None
        path.append({"lambda": float(lam), "m_hat": res.m_hat, "bic": res.bic,
                     "objective": res.diagnostics["final_objective"],
                     "outer_iterations": res.diagnostics["outer_iterations"]})
        if best is None or res.bic < best.bic:
            best = res
    if best is None:
        raise NumericalError(f"all {grid.size} lambda fits failed: {errors[:3]}")
    assert all(best.bic <= p["bic"] for p in path)
    if with_cov:
        best = _fit.refit_covariance(data, cfg, best)
    best.diagnostics["lambda_path"] = path
    best.diagnostics["failed_lambdas"] = errors
    return best
