"""Alternating estimation of the penalised smoothed model, plus the oracle and null fits."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats
from scipy.stats import qmc

from . import tuning
from .admm import AdmmConfig, AdmmState, admm_solve
from .errors import NumericalError
from .inference import SandwichParts, sandwich_cov, sigma2_hat
from .model import Dataset, SmoothSpec, Theta, bandwidth, r_squared, residuals_smoothed
from .penalties import PenaltyKind, PenaltyParams, pen_deriv, pen_value
from .smoothing import KernelKind, hinge, qn, qn_dx

log = logging.getLogger(__name__)

ORACLE_DELTA_FLOOR = 1e-8
ORACLE_DELTA_STEP = 0.5
SEEDINGS = ("score", "quantile", "forward")
ALPHA_STARTS = ("ols", "zero")
PATH_MODES = ("both", "warm", "cold")
BETA_STARTS = ("profile", "ols")
PROFILE_BASIS = 10
PROFILE_DIRECTIONS = 256
PROFILE_MIN_LEAD = 0.1
# candidate knot positions for score seeding, as index quantile levels
SEED_LEVELS = np.linspace(0.02, 0.98, 97)
SEED_MIN_GAP = 5


@dataclass(frozen=True)
class FitConfig:
    kernel: KernelKind = KernelKind.UNIFORM
    penalty: PenaltyKind = field(default_factory=PenaltyKind.scad)
    nu: float = 0.6
    m_cap: int = 5
    cn: str = "loglogn"
    outer_max: int = 100
    outer_tol: float = 1e-6
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    lambda_grid: tuple | None = None
    n_lambda: int = 40
    lambda_min_ratio: float = 1e-4
    joint_refine: bool = True
    knot_seeding: str = "score"
    merge_knots: bool = True
    alpha_start: str = "zero"
    path: str = "warm"
    reseed: int = 1
    beta_start: str = "profile"
    merge_gap: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelKind.from_name(self.kernel))
        object.__setattr__(self, "cn", tuning.BicSpec(self.cn).cn)
        if self.knot_seeding not in SEEDINGS:
            raise ValueError(f"knot_seeding must be one of {SEEDINGS}")
        if self.alpha_start not in ALPHA_STARTS:
            raise ValueError(f"alpha_start must be one of {ALPHA_STARTS}")
        if self.path not in PATH_MODES:
            raise ValueError(f"path must be one of {PATH_MODES}")
        if self.beta_start not in BETA_STARTS:
            raise ValueError(f"beta_start must be one of {BETA_STARTS}")
        if self.reseed < 0:
            raise ValueError("reseed must be nonnegative")
        if self.m_cap < 1:
            raise ValueError("m_cap must be at least 1")
        if not 0 < self.nu < 1:
            raise ValueError("nu must lie in (0, 1)")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in np.atleast_1d(self.lambda_grid))
            if not grid or min(grid) < 0:
                raise ValueError("lambda grid must be nonempty and nonnegative")
            object.__setattr__(self, "lambda_grid", grid)

    def smooth_spec(self, n: int) -> SmoothSpec:
        return SmoothSpec(self.kernel, bandwidth(self.m_cap, n, self.nu))

    def penalty_params(self, lam: float) -> PenaltyParams:
        return PenaltyParams(float(lam), self.penalty)

    def as_dict(self) -> dict:
        return {
            "kernel": self.kernel.value,
            "penalty": self.penalty.name,
            "t": self.penalty.t,
            "nu": self.nu,
            "m_cap": self.m_cap,
            "cn": self.cn,
            "outer_max": self.outer_max,
            "outer_tol": self.outer_tol,
            "vartheta": self.admm.vartheta,
            "admm_max_iter": self.admm.max_iter,
            "admm_tol": self.admm.tol,
            "lambda_grid": None if self.lambda_grid is None else list(self.lambda_grid),
            "n_lambda": self.n_lambda,
            "lambda_min_ratio": self.lambda_min_ratio,
            "joint_refine": self.joint_refine,
            "knot_seeding": self.knot_seeding,
            "merge_knots": self.merge_knots,
            "merge_gap": self.merge_gap,
            "alpha_start": self.alpha_start,
            "path": self.path,
            "reseed": self.reseed,
            "beta_start": self.beta_start,
            "seed": self.seed,
        }


@dataclass
class FitResult:
    theta: Theta
    m_hat: int
    sigma2: float
    cov: np.ndarray | None
    r2: float
    bic: float
    lam: float
    spec: SmoothSpec
    parts: SandwichParts | None = None
    diagnostics: dict = field(default_factory=dict)
    # full-length state (pruned knots included) used to warm-start a neighbouring fit
    warm: dict | None = field(default=None, repr=False)

    @property
    def names(self) -> list[str]:
        return self.theta.names()

    @property
    def se(self) -> np.ndarray:
        if self.cov is None:
            return np.full(len(self.names), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class NullFit:
    alpha0: float
    beta_rest: np.ndarray
    eta: np.ndarray
    weak_index: bool = False

    def theta(self) -> Theta:
        return Theta(self.alpha0, [], [], self.beta_rest, self.eta[0], self.eta[1:])


def _ols(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def fit_null(data: Dataset) -> NullFit:
    """Global least-squares fit of the knot-free model via its bilinear structure."""
    design = np.column_stack([data.z_design, data.x])
    coef = _ols(design, data.y)
    k = data.d2 + 1
    eta, a, c = coef[:k], coef[k], coef[k + 1 :]
    if abs(a) < 1e-10:
        raise NumericalError("index slope is zero under the null; the index direction is not identified")
    resid = data.y - design @ coef
    dof = max(data.n - design.shape[1], 1)
    try:
        cov = (resid @ resid / dof) * np.linalg.inv(design.T @ design)
        weak = bool(abs(a) < 2.0 * np.sqrt(max(cov[k, k], 0.0)))
    except np.linalg.LinAlgError:
        weak = True
    if weak:
        warnings.warn("anchored index coefficient is not significantly different from zero", RuntimeWarning)
    return NullFit(alpha0=float(a), beta_rest=c / a, eta=eta, weak_index=weak)


def score_seeds(w: np.ndarray, r: np.ndarray, spec: SmoothSpec, k: int, taken=()) -> np.ndarray:
    """Up to ``k`` knot positions where the residual score ``|q(w, tau)' r|`` peaks.

    Candidates are index quantiles; picks keep ``SEED_MIN_GAP`` quantile steps
    away from each other and from the knots in ``taken``.
    """
    if k <= 0:
        return np.empty(0)
    grid = np.quantile(w, SEED_LEVELS)
    score = np.abs(qn(w[:, None], grid[None, :], spec.delta, spec.kernel).T @ r)
    order = np.argsort(-score, kind="stable")
    blocked = [int(np.argmin(np.abs(grid - t))) for t in np.atleast_1d(taken)]
    chosen = []
    for i in order:
        if all(abs(i - j) >= SEED_MIN_GAP for j in chosen + blocked):
            chosen.append(int(i))
            if len(chosen) == k:
                break
    for i in order:
        if len(chosen) == k:
            break
        if i not in chosen:
            chosen.append(int(i))
    return grid[chosen]


def forward_seeds(data: Dataset, w: np.ndarray, k: int) -> np.ndarray:
    """``k`` knots added one at a time, each at the candidate quantile that most
    reduces the residual sum of squares of ``y`` on ``(Z, w)`` and the hinges so far."""
    grid = np.quantile(w, SEED_LEVELS)
    basis = [data.z_design, w[:, None]]
    chosen = []
    for _ in range(k):
        base = np.column_stack(basis)
        best, best_rss = None, np.inf
        for i, t in enumerate(grid):
            if any(abs(i - j) < SEED_MIN_GAP for j in chosen):
                continue
            design = np.column_stack([base, hinge(w, t)])
            r = data.y - design @ _ols(design, data.y)
            rss = float(r @ r)
            if rss < best_rss:
                best, best_rss = i, rss
        if best is None:
            break
        chosen.append(best)
        basis.append(hinge(w, grid[best])[:, None])
    return np.sort(grid[chosen])


def _profile_rss(data: Dataset, beta_rest: np.ndarray) -> float:
    """Residual variance of ``y`` on ``Z`` and a fixed hinge basis of the index ``X'beta``."""
    w = data.x[:, 0] + data.x[:, 1:] @ beta_rest
    t = np.quantile(w, np.arange(1, PROFILE_BASIS + 1) / (PROFILE_BASIS + 1))
    design = np.column_stack([data.z_design, w, hinge(w[:, None], t[None, :])])
    r = data.y - design @ _ols(design, data.y)
    return float(r @ r) / data.n


def profile_direction(data: Dataset, start: np.ndarray, seed: int = 0) -> np.ndarray:
    """Index direction from a profile search with a flexible hinge basis.

    Scores ``start`` and a scrambled Sobol set of directions (in standardised
    covariate units, first component bounded away from zero), then polishes
    the best with Nelder-Mead. Guards against the flat stretches a linear fit
    can leave when the link is far from monotone.
    """
    d1 = data.d1
    if d1 == 1:
        return np.empty(0)
    scale = data.x.std(axis=0)
    scale[scale == 0] = 1.0
    u = stats.norm.ppf(qmc.Sobol(d1, scramble=True, seed=seed).random(PROFILE_DIRECTIONS))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= np.sign(u[:, :1])
    u = u[u[:, 0] >= PROFILE_MIN_LEAD]
    raw = u / scale
    cands = [np.asarray(start, dtype=float)] + list(raw[:, 1:] / raw[:, :1])
    scores = [_profile_rss(data, b) for b in cands]
    best = cands[int(np.argmin(scores))]
    res = optimize.minimize(lambda b: _profile_rss(data, b), best, method="Nelder-Mead",
                            options={"xatol": 1e-4, "fatol": 1e-10, "maxiter": 200 * (d1 - 1)})
    return np.asarray(res.x) if res.fun <= min(scores) else best


def initial_theta(data: Dataset, m: int, seeding: str = "quantile", spec: SmoothSpec | None = None,
                  beta_start: str = "ols", seed: int = 0) -> Theta:
    """Starting point with no slope changes.

    ``beta`` comes from the X block of an OLS fit, optionally replaced by
    :func:`profile_direction`; knots sit at index quantiles, at
    residual-score peaks or at forward-selected positions.
    """
    coef = _ols(np.column_stack([data.z_design, data.x]), data.y)
    k = data.d2 + 1
    bx = coef[k:]
    beta_rest = bx[1:] / bx[0] if abs(bx[0]) >= 1e-8 else np.zeros(data.d1 - 1)
    if beta_start == "profile":
        beta_rest = profile_direction(data, beta_rest, seed)
    w = data.x[:, 0] + data.x[:, 1:] @ beta_rest
    lin = _ols(np.column_stack([w, data.z_design]), data.y)
    a0, eta = lin[0], lin[1:]
    if m == 0:
        tau = np.empty(0)
    elif seeding == "score":
        if spec is None:
            raise ValueError("score seeding needs a smoothing spec")
        r = data.y - data.z_design @ eta - a0 * w
        tau = np.sort(score_seeds(w, r, spec, m))
    elif seeding == "forward":
        tau = forward_seeds(data, w, m)
    else:
        tau = np.quantile(w, np.arange(1, m + 1) / (m + 1))
    return Theta(a0, np.zeros(m), tau, beta_rest, eta[0], eta[1:])


def cold_start(data: Dataset, cfg: FitConfig) -> Theta:
    """Starting point for a fit without a neighbour: seeded knots, and either
    unpenalised least-squares slopes at those knots or zero slopes."""
    spec = cfg.smooth_spec(data.n)
    th = initial_theta(data, cfg.m_cap, cfg.knot_seeding, spec, cfg.beta_start, cfg.seed)
    if cfg.alpha_start == "zero":
        return th
    w = data.x[:, 0] + data.x[:, 1:] @ th.beta_rest
    q = qn(w[:, None], th.tau[None, :], spec.delta, spec.kernel)
    coef = _ols(np.column_stack([w, q, data.z_design]), data.y)
    m = cfg.m_cap
    eta = coef[m + 1:]
    return Theta(coef[0], coef[1:m + 1], th.tau, th.beta_rest, eta[0], eta[1:])


def lambda_grid(data: Dataset, cfg: FitConfig) -> np.ndarray:
    """Descending log-spaced grid.

    The top is the larger of the zero-slope stationarity bound
    ``max|q_m' r| / n`` and the largest unpenalised knot slope, so the grid
    reaches values that prune every knot from either starting point.
    """
    if cfg.lambda_grid is not None:
        return np.sort(np.asarray(cfg.lambda_grid))[::-1]
    spec = cfg.smooth_spec(data.n)
    th = initial_theta(data, cfg.m_cap, cfg.knot_seeding, spec, cfg.beta_start, cfg.seed)
    w = data.x[:, 0] + data.x[:, 1:] @ th.beta_rest
    r = data.y - data.z_design @ th.eta - th.alpha0 * w
    q = qn(w[:, None], th.tau[None, :], spec.delta, spec.kernel)
    lam_max = float(np.max(np.abs(q.T @ r))) / data.n
    if cfg.alpha_start == "ols":
        lam_max = max(lam_max, float(np.max(np.abs(cold_start(data, cfg).alpha))))
    if not np.isfinite(lam_max) or lam_max <= 0:
        lam_max = 1.0
    return lam_max * np.logspace(0.0, np.log10(cfg.lambda_min_ratio), cfg.n_lambda)


class _Problem:
    """Smoothed least-squares pieces for the tau and beta blocks."""

    def __init__(self, data: Dataset, spec: SmoothSpec):
        self.data = data
        self.spec = spec
        self.x1 = data.x[:, 0]
        self.xt = data.x[:, 1:]
        self.zd = data.z_design

    def index(self, beta_rest):
        return self.x1 + self.xt @ beta_rest

    def objective(self, beta_rest, alpha, tau, eta) -> float:
        w = self.index(beta_rest)
        r = self.data.y - self.zd @ eta - alpha[0] * w
        if tau.size:
            r = r - qn(w[:, None], tau[None, :], self.spec.delta, self.spec.kernel) @ alpha[1:]
        return 0.5 * float(r @ r)

    def tau_fun(self, w, r0, a):
        d, k = self.spec.delta, self.spec.kernel

        def f(tau):
            q = qn(w[:, None], tau[None, :], d, k)
            r = r0 - q @ a
            g = (qn_dx(w[:, None], tau[None, :], d, k) * a[None, :]).T @ r
            return 0.5 * float(r @ r), g

        return f

    def beta_fun(self, alpha, tau, eta):
        d, k = self.spec.delta, self.spec.kernel
        base = self.data.y - self.zd @ eta

        def f(b):
            w = self.index(b)
            r = base - alpha[0] * w
            slope = np.full_like(w, alpha[0])
            if tau.size:
                r = r - qn(w[:, None], tau[None, :], d, k) @ alpha[1:]
                slope = slope + qn_dx(w[:, None], tau[None, :], d, k) @ alpha[1:]
            return 0.5 * float(r @ r), -self.xt.T @ (r * slope)

        return f


    def joint_fun(self, m, pen):
        """Penalised objective in ``(alpha0, alpha, tau, beta_rest, eta)`` on a fixed active set."""
        d, k = self.spec.delta, self.spec.kernel
        d1 = self.xt.shape[1]
        n = self.data.n

        def f(x):
            a0, a, tau = x[0], x[1:m + 1], x[m + 1:2 * m + 1]
            b, eta = x[2 * m + 1:2 * m + 1 + d1], x[2 * m + 1 + d1:]
            w = self.index(b)
            q = qn(w[:, None], tau[None, :], d, k)
            qd = qn_dx(w[:, None], tau[None, :], d, k)
            r = self.data.y - self.zd @ eta - a0 * w - q @ a
            absa = np.abs(a)
            val = 0.5 * float(r @ r)
            g = np.empty_like(x)
            g[0] = -w @ r
            g[1:m + 1] = -q.T @ r
            g[m + 1:2 * m + 1] = (qd * a[None, :]).T @ r
            g[2 * m + 1:2 * m + 1 + d1] = -self.xt.T @ (r * (a0 + qd @ a))
            g[2 * m + 1 + d1:] = -self.zd.T @ r
            if pen is not None and m:
                val += n * float(np.sum(pen_value(a, pen)))
                live = absa > 0
                g[1:m + 1][live] += n * pen_deriv(absa[live], pen) * np.sign(a[live])
            return val, g

        return f


def _minimize(fun, x0, bounds=None):
    f0, _ = fun(x0)
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 200, "ftol": 1e-13, "gtol": 1e-9})
    if not np.isfinite(res.fun):
        raise NumericalError("objective became non-finite")
    if res.fun <= f0:
        return np.asarray(res.x, dtype=float), float(res.fun)
    return x0, f0


def _alternate(data, cfg, pen, theta0: Theta, active0, deltas, admm_state=None):
    """Outer loop: ADMM for (alpha, eta), then tau, then beta.

    ``deltas`` yields the bandwidth for each outer iteration.
    """
    m = theta0.n_knots
    beta = theta0.beta_rest.copy()
    tau = theta0.tau.copy()
    alpha = np.concatenate([[theta0.alpha0], theta0.alpha])
    eta = theta0.eta.copy()
    active = np.asarray(active0, dtype=bool).copy()
    zeta = np.where(active, alpha[1:], 0.0)
    v = np.zeros(m)
    if admm_state is not None:
        zeta = np.where(active, admm_state["zeta"], 0.0)
        v = np.where(active, admm_state["v"], 0.0)
    history = []
    admm_iters = []
    n_merged = 0
    converged = False
    delta = None
    prev = None
    k = 0
    for k, new_delta in enumerate(deltas, start=1):
        # convergence is only judged once the bandwidth has stopped moving
        if new_delta != delta:
            prev = None
        delta = new_delta
        spec = SmoothSpec(cfg.kernel, delta)
        prob = _Problem(data, spec)
        idx = np.flatnonzero(active)
        w = prob.index(beta)

        # Step 1: penalised (alpha, eta) on the live knots
        q = np.column_stack([w, qn(w[:, None], tau[idx][None, :], spec.delta, spec.kernel)])
        st = AdmmState(np.concatenate([[alpha[0]], alpha[1:][idx]]), eta, zeta[idx], v[idx])
        st = admm_solve(data.y, q, data.z_design, pen, cfg.admm, st)
        admm_iters.append(st.iterations)
        alpha[0] = st.alpha[0]
        alpha[1:] = 0.0
        alpha[1:][idx] = np.where(st.zeta != 0.0, st.alpha[1:], 0.0)
        eta = st.eta
        zeta[:] = 0.0
        v[:] = 0.0
        zeta[idx] = st.zeta
        v[idx] = st.v
        active = zeta != 0.0
        idx = np.flatnonzero(active)
        obj1 = prob.objective(beta, alpha, tau, eta)

        # Step 2: knot locations; pruned knots are parked beyond the data
        tau_inf = float(np.max(np.abs(w))) + 1.0
        if idx.size:
            r0 = data.y - data.z_design @ eta - alpha[0] * w
            lo = float(np.min(w))
            x0 = np.clip(tau[idx], lo, tau_inf)
            tau[idx], _ = _minimize(prob.tau_fun(w, r0, alpha[1:][idx]), x0, [(lo, tau_inf)] * idx.size)
        tau[~active] = tau_inf
        obj2 = prob.objective(beta, alpha[np.r_[0, idx + 1]], tau[idx], eta)

        # Step 3: index direction
        if beta.size:
            beta, obj3 = _minimize(prob.beta_fun(alpha[np.r_[0, idx + 1]], tau[idx], eta), beta)
        else:
            obj3 = obj2
        if cfg.joint_refine and idx.size:
            # joint quasi-Newton pass on the live set; slopes stay in their sign orthant
            a_live = alpha[1:][idx]
            m_live = idx.size
            lo = float(np.min(w))
            x0 = np.concatenate([[alpha[0]], a_live, tau[idx], beta, eta])
            bounds = ([(None, None)]
                      + [(0.0, None) if a > 0 else (None, 0.0) for a in a_live]
                      + [(lo, tau_inf)] * m_live
                      + [(None, None)] * (beta.size + eta.size))
            xj, _ = _minimize(prob.joint_fun(m_live, pen), x0, bounds)
            alpha[0] = xj[0]
            alpha[1:][idx] = xj[1:m_live + 1]
            tau[idx] = xj[m_live + 1:2 * m_live + 1]
            beta = xj[2 * m_live + 1:2 * m_live + 1 + beta.size]
            eta = xj[2 * m_live + 1 + beta.size:]
            # restart ADMM at the matching stationary point
            zeta[idx] = alpha[1:][idx]
            wj = prob.index(beta)
            qj = qn(wj[:, None], tau[idx][None, :], spec.delta, spec.kernel)
            rj = data.y - data.z_design @ eta - alpha[0] * wj - qj @ alpha[1:][idx]
            v[idx] = qj.T @ rj / data.n
            obj3 = prob.objective(beta, alpha[np.r_[0, idx + 1]], tau[idx], eta)
        if cfg.merge_knots and pen is not None and pen.lam > 0 and idx.size > 1:
            merged = _merge_close(prob, pen, alpha, tau, beta, eta, active, cfg.merge_gap * float(np.std(w)))
            if merged:
                n_merged += merged
                tau[~active] = tau_inf
                zeta[~active] = 0.0
                v[~active] = 0.0
                zeta[active] = alpha[1:][active]
                idx = np.flatnonzero(active)
                obj3 = prob.objective(beta, alpha[np.r_[0, idx + 1]], tau[idx], eta)
        pen_sum = data.n * float(np.sum(_pen(alpha[1:][idx], pen)))
        history.append({"after_admm": obj1, "after_tau": obj2, "after_beta": obj3, "penalty": pen_sum})
        if not np.isfinite(obj3):
            raise NumericalError("objective is NaN")

        cur = np.concatenate([alpha, eta, beta, np.where(active, tau, 0.0)])
        if prev is not None and prev[1].tolist() == active.tolist() and np.linalg.norm(cur - prev[0]) < cfg.outer_tol:
            converged = True
            break
        prev = (cur, active.copy())
    theta = Theta(alpha[0], alpha[1:], tau, beta, eta[0], eta[1:])
    diag = {
        "outer_iterations": k,
        "converged": converged,
        "admm_iterations": admm_iters,
        "objective_history": history,
        "final_objective": history[-1]["after_beta"] + history[-1]["penalty"] if history else float("nan"),
        "delta": delta,
        "merged_knots": n_merged,
    }
    return theta, active, {"zeta": zeta.copy(), "v": v.copy()}, diag


def _merge_close(prob, pen, alpha, tau, beta, eta, active, gap) -> int:
    """Fuse live knots closer than ``gap`` when that lowers the penalised objective.

    Two knots at one location span the same column, and a concave penalty
    charges more for a split slope than for its sum, so fusing is a descent
    move. Arrays are updated in place; returns the number of fusions.
    """
    n = prob.data.n

    def total(a, t, act):
        live = np.flatnonzero(act)
        return (prob.objective(beta, a[np.r_[0, live + 1]], t[live], eta)
                + n * float(np.sum(_pen(a[1:][live], pen))))

    count = 0
    while True:
        live = np.flatnonzero(active)
        if live.size < 2:
            return count
        order = live[np.argsort(tau[live], kind="stable")]
        gaps = np.diff(tau[order])
        j = int(np.argmin(gaps))
        if gaps[j] >= gap:
            return count
        i, k = order[j], order[j + 1]
        a_new, t_new, act_new = alpha.copy(), tau.copy(), active.copy()
        wi, wk = abs(alpha[i + 1]), abs(alpha[k + 1])
        t_new[i] = (wi * tau[i] + wk * tau[k]) / (wi + wk) if wi + wk > 0 else tau[i]
        a_new[i + 1] = alpha[i + 1] + alpha[k + 1]
        a_new[k + 1] = 0.0
        act_new[k] = False
        if a_new[i + 1] == 0.0:
            act_new[i] = False
        if total(a_new, t_new, act_new) >= total(alpha, tau, active):
            return count
        alpha[:], tau[:], active[:] = a_new, t_new, act_new
        count += 1


def _pen(a, pen):
    return pen_value(a, pen) if a.size else np.zeros(0)


def _finish(data, cfg, theta_full, active, lam, pen, spec, diag, warm, with_cov=True) -> FitResult:
    theta = theta_full.select(np.flatnonzero(active)).sorted()
    if theta.n_knots > 1:
        gaps = np.diff(theta.tau)
        diag["knot_collision"] = bool(np.any(gaps < spec.delta))
    else:
        diag["knot_collision"] = False
    s2 = sigma2_hat(data, theta, spec)
    parts = None
    cov = None
    if with_cov:
        try:
            parts = sandwich_cov(data, theta, spec, pen)
            cov = parts.xi
            diag["flagged_knots"] = list(parts.flagged)
        except NumericalError as exc:
            diag["covariance_error"] = str(exc)
    try:
        r2 = r_squared(data, theta)
    except ValueError:
        r2 = float("nan")
    bic = tuning.bic_score(data, theta, tuning.BicSpec(cfg.cn))
    return FitResult(
        theta=theta, m_hat=theta.n_knots, sigma2=s2, cov=cov, r2=r2, bic=bic, lam=float(lam),
        spec=spec, parts=parts, diagnostics=diag, warm=warm,
    )


def _warm_theta(data: Dataset, cfg: FitConfig, warm: dict):
    """Carry live knots over from a neighbouring fit and re-seed parked slots.

    At most ``cfg.reseed`` parked slots (all of them when 0) get a fresh
    candidate location; the rest stay parked, so knots enter the path a few
    at a time.
    """
    theta = warm["theta"]
    active = warm["active"].copy()
    if not active.any() and warm.get("start") is not None:
        # a knot-free fit pins beta to the linear direction; go back to the start's index
        theta = warm["start"]
    w = data.x[:, 0] + data.x[:, 1:] @ theta.beta_rest
    free = np.flatnonzero(~active)
    if cfg.reseed:
        free = free[:cfg.reseed]
    if cfg.knot_seeding == "score":
        spec = cfg.smooth_spec(data.n)
        live = theta.select(np.flatnonzero(active))
        r = residuals_smoothed(data, live, spec)
        seeds = score_seeds(w, r, spec, free.size, taken=live.tau)
    else:
        seeds = np.quantile(w, np.arange(1, cfg.m_cap + 1) / (cfg.m_cap + 1))[free]
    tau = theta.tau.copy()
    tau[free] = seeds
    alpha = np.where(active, theta.alpha, 0.0)
    start = active.copy()
    start[free] = True
    return replace(theta, tau=tau, alpha=alpha), start, warm.get("admm")


def fit_penalized(data: Dataset, cfg: FitConfig, lam: float, warm: dict | None = None, with_cov: bool = True) -> FitResult:
    """Penalised smoothed least squares at a single tuning parameter."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    spec = cfg.smooth_spec(data.n)
    pen = cfg.penalty_params(lam)
    if warm is None:
        theta0 = cold_start(data, cfg)
        active0 = np.ones(cfg.m_cap, dtype=bool)
        admm0 = None
    else:
        theta0, active0, admm0 = _warm_theta(data, cfg, warm)
    deltas = [spec.delta] * cfg.outer_max
    theta, active, admm, diag = _alternate(data, cfg, pen, theta0, active0, deltas, admm0)
    if not diag["converged"]:
        log.info("outer loop hit %d iterations without converging (lambda=%g)", cfg.outer_max, lam)
    start = theta0 if warm is None else warm.get("start")
    warm_out = {"theta": theta, "active": active, "admm": admm, "start": start}
    return _finish(data, cfg, theta, active, lam, pen, spec, diag, warm_out, with_cov)


def fit_oracle(data: Dataset, m_true: int, cfg: FitConfig = FitConfig(), init: Theta | None = None) -> FitResult:
    """Unsmoothed least squares with the number of knots fixed at ``m_true``.

    The bandwidth is halved every outer iteration down to 1e-8 so the final
    iterations minimise the hinge objective itself.
    """
    if m_true < 0:
        raise ValueError("m_true must be nonnegative")
    if m_true == 0:
        nf = fit_null(data)
        theta = nf.theta()
        spec = SmoothSpec(cfg.kernel, ORACLE_DELTA_FLOOR)
        diag = {"outer_iterations": 0, "converged": True, "delta": ORACLE_DELTA_FLOOR}
        return _finish(data, cfg, theta, np.zeros(0, dtype=bool), 0.0, None, spec, diag, None)
    # with the count known, knots are placed by forward selection rather than the path's score peaks
    seeding = "forward" if cfg.knot_seeding == "score" else cfg.knot_seeding
    theta0 = init if init is not None else initial_theta(data, m_true, seeding, cfg.smooth_spec(data.n), cfg.beta_start, cfg.seed)
    if theta0.n_knots != m_true:
        raise ValueError("init must carry exactly m_true knots")
    delta0 = cfg.smooth_spec(data.n).delta
    n_steps = int(np.ceil(np.log(ORACLE_DELTA_FLOOR / delta0) / np.log(ORACLE_DELTA_STEP)))
    deltas = [max(delta0 * ORACLE_DELTA_STEP**i, ORACLE_DELTA_FLOOR) for i in range(n_steps + 1)]
    deltas = deltas + [ORACLE_DELTA_FLOOR] * cfg.outer_max
    # lambda = 0: the proximal map is the identity, so no knot is ever pruned
    pen = cfg.penalty_params(0.0)
    theta, active, _, diag = _alternate(data, cfg, pen, theta0, np.ones(m_true, dtype=bool), deltas)
    if not np.all(active):
        # a slope estimate of exactly zero; keep every knot for the oracle
        active = np.ones(m_true, dtype=bool)
    spec = SmoothSpec(cfg.kernel, diag["delta"])
    return _finish(data, cfg, theta, active, 0.0, None, spec, diag, None)


def refit_covariance(data: Dataset, cfg: FitConfig, res: FitResult) -> FitResult:
    """Attach the sandwich covariance to a result computed without it."""
    pen = cfg.penalty_params(res.lam) if res.lam > 0 else None
    try:
        parts = sandwich_cov(data, res.theta, res.spec, pen)
    except NumericalError as exc:
        res.diagnostics["covariance_error"] = str(exc)
        return res
    res.parts = parts
    res.cov = parts.xi
    res.diagnostics["flagged_knots"] = list(parts.flagged)
    return res
