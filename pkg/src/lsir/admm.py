"""ADMM solver for the penalised (alpha, eta) block with beta and tau held fixed."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numba import njit

from .errors import NumericalError
from .penalties import PenaltyParams, check_prox_admissible, prox_scalar


@dataclass(frozen=True)
class AdmmConfig:
    vartheta: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if not self.vartheta > 0:
            raise ValueError("vartheta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class AdmmState:
    """ADMM iterate. ``alpha`` holds ``(alpha0, ..., alpha_M)``; ``zeta`` carries the sparsity pattern."""

    alpha: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    v: np.ndarray
    iterations: int = 0
    converged: bool = False
    gap: float = field(default=np.nan)

    @classmethod
    def cold(cls, n_knots: int, d2: int) -> "AdmmState":
        return cls(
            alpha=np.zeros(n_knots + 1),
            eta=np.zeros(d2 + 1),
            zeta=np.zeros(n_knots),
            v=np.zeros(n_knots),
        )

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.alpha.copy(), self.eta.copy(), self.zeta.copy(), self.v.copy(),
            self.iterations, self.converged, self.gap,
        )

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of knots whose coefficient survived the threshold."""
        return self.zeta != 0.0


@njit(cache=True)
def _admm_loop(a_inv, b, n, vt, lam, t, is_mcp, x, zeta, v, max_iter, tol):
    # x = (alpha0, alpha_1..alpha_M, eta); the penalised slots are x[1:m+1]
    m = zeta.shape[0]
    p = x.shape[0]
    rhs = np.empty(p)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        # joint (alpha, eta) step:
        # ([Q Z]'[Q Z] + n*vt*I_pen) x = [Q Z]'y + n(vt*zeta - v) on the penalised slots
        for i in range(p):
            rhs[i] = b[i]
        for j in range(m):
            rhs[j + 1] += n * (vt * zeta[j] - v[j])
        change = 0.0
        for i in range(p):
            s = 0.0
            for j in range(p):
                s += a_inv[i, j] * rhs[j]
            change += (s - x[i]) ** 2
            x[i] = s
        gap = 0.0
        for j in range(m):
            zeta[j] = prox_scalar(x[j + 1] + v[j] / vt, lam, t, vt, is_mcp)
            d = x[j + 1] - zeta[j]
            v[j] += vt * d
            if abs(d) > gap:
                gap = abs(d)
        if not np.isfinite(change):
            break
        if np.sqrt(change) < tol and gap < tol:
            converged = True
            break
    return it, converged


def _spd_inverse(a: np.ndarray, what: str) -> np.ndarray:
    try:
        c = sla.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is singular; the design is collinear") from exc
    inv = sla.cho_solve(c, np.eye(a.shape[0]))
    if not np.all(np.isfinite(inv)):
        raise NumericalError(f"{what} is numerically singular")
    return inv


def admm_solve(
    y: np.ndarray,
    q_design: np.ndarray,
    z_design: np.ndarray,
    pen: PenaltyParams,
    cfg: AdmmConfig = AdmmConfig(),
    warm: AdmmState | None = None,
) -> AdmmState:
    """Minimise ``0.5*||y - Z eta - Q alpha||^2 + n * sum_m p(|alpha_m|)`` over ``(alpha, eta)``.

    Column 0 of ``q_design`` is the index and its coefficient is not penalised.
    ``z_design`` must contain the intercept column. Returns a new state; ``warm``
    is left untouched.
    """
    check_prox_admissible(pen.kind, cfg.vartheta)
    y = np.asarray(y, dtype=float)
    n, p = q_design.shape
    m = p - 1
    k = z_design.shape[1]
    state = AdmmState.cold(m, k - 1) if warm is None else warm.copy()
    if state.alpha.shape != (p,) or state.eta.shape != (k,) or state.zeta.shape != (m,):
        raise ValueError("warm state does not match the design dimensions")

    design = np.hstack([q_design, z_design])
    ridge = np.zeros(p + k)
    ridge[1:p] = n * cfg.vartheta
    a_inv = _spd_inverse(design.T @ design + np.diag(ridge), "(alpha, eta) normal matrix")
    x = np.concatenate([state.alpha, state.eta])
    it, conv = _admm_loop(
        a_inv, design.T @ y, float(n), float(cfg.vartheta), float(pen.lam),
        float(pen.kind.t), pen.kind.name == "mcp",
        x, state.zeta, state.v, int(cfg.max_iter), float(cfg.tol),
    )
    state.alpha = x[:p].copy()
    state.eta = x[p:].copy()
    if not (np.all(np.isfinite(state.alpha)) and np.all(np.isfinite(state.eta))):
        raise NumericalError("ADMM iterates diverged")
    state.iterations = int(it)
    state.converged = bool(conv)
    state.gap = float(np.max(np.abs(state.alpha[1:] - state.zeta))) if m else 0.0
    return state
