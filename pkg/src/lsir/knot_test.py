"""Supremum score test for the existence of knots with a multiplier-bootstrap critical value."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .fit import NullFit, fit_null
from .model import Dataset, SmoothSpec, bandwidth
from .smoothing import KernelKind, hinge, qn

log = logging.getLogger(__name__)

MIN_BOOT = 100
# grid points whose studentizer falls below this fraction of the largest one are dropped
RHO_REL_TOL = 1e-10


@dataclass(frozen=True)
class TestConfig:
    """Settings for the knot-existence test.

    ``tau_grid=None`` means 100 points between the 5th and 95th percentiles of
    the null-fit index.
    """

    __test__ = False  # keep pytest from collecting this class

    tau_grid: tuple | None = None
    n_boot: int = 1000
    level: float = 0.05
    kernel: KernelKind = KernelKind.UNIFORM
    nu: float = 0.6
    m_cap: int = 5
    delta: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelKind.from_name(self.kernel))
        if self.tau_grid is not None:
            grid = np.asarray(self.tau_grid, dtype=float).ravel()
            if grid.size == 0:
                raise ValueError("tau_grid must be nonempty")
            if not np.all(np.isfinite(grid)):
                raise ValueError("tau_grid must be finite")
            if np.any(np.diff(grid) < 0):
                raise ValueError("tau_grid must be sorted ascending")
            object.__setattr__(self, "tau_grid", tuple(grid.tolist()))
        if self.n_boot < 1:
            raise ValueError("n_boot must be positive")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")

    def smooth_spec(self, n: int) -> SmoothSpec:
        d = self.delta if self.delta is not None else bandwidth(self.m_cap, n, self.nu)
        return SmoothSpec(self.kernel, d)

    def grid_for(self, w: np.ndarray) -> np.ndarray:
        if self.tau_grid is not None:
            return np.asarray(self.tau_grid)
        lo, hi = np.quantile(w, [0.05, 0.95])
        return np.linspace(lo, hi, 100)


@dataclass
class KnotTestResult:
    t_stat: float
    crit: float
    p_value: float
    reject: bool
    tau_grid: np.ndarray
    curve: np.ndarray
    n_boot: int
    level: float
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def argmax_tau(self) -> float:
        return float(self.tau_grid[int(np.argmax(self.curve))])


@dataclass
class _ScoreParts:
    grid: np.ndarray
    score: np.ndarray  # n^{-1/2} sum_i qn(w_i, tau0) r_i
    psi_star: np.ndarray  # n x K influence values with the unsmoothed hinge
    rho: np.ndarray
    dropped: np.ndarray


def _score_parts(data: Dataset, null: NullFit, cfg: TestConfig) -> _ScoreParts:
    n = data.n
    w = data.x[:, 0] + data.x[:, 1:] @ null.beta_rest
    r = data.y - data.z_design @ null.eta - null.alpha0 * w
    grid = cfg.grid_for(w)
    spec = cfg.smooth_spec(n)

    score = qn(w[:, None], grid[None, :], spec.delta, spec.kernel).T @ r / np.sqrt(n)

    xi = np.column_stack([w, null.alpha0 * data.x[:, 1:], data.z_design])
    omega = xi.T @ xi / n
    f = hinge(w[:, None], grid[None, :])
    d_mat = xi.T @ f / n
    try:
        proj = np.linalg.solve(omega, d_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("the null-model information matrix is singular") from exc
    if np.linalg.cond(omega) > 1e14:
        raise NumericalError("the null-model information matrix is numerically singular")
    psi_star = (f - xi @ proj) * r[:, None]
    rho = np.mean(psi_star**2, axis=0)

    keep = rho > RHO_REL_TOL * max(float(np.max(rho)), np.finfo(float).tiny)
    dropped = grid[~keep]
    if dropped.size:
        warnings.warn(f"dropping {dropped.size} grid point(s) with a degenerate studentizer", RuntimeWarning, stacklevel=3)
    if not np.any(keep):
        raise NumericalError("the studentizer vanishes on the whole tau grid")
    return _ScoreParts(grid[keep], score[keep], psi_star[:, keep], rho[keep], dropped)


def score_curve(data: Dataset, null: NullFit, cfg: TestConfig) -> tuple[np.ndarray, np.ndarray]:
    """Studentised squared score at each grid point; returns ``(grid, curve)`` with degenerate points removed."""
    parts = _score_parts(data, null, cfg)
    return parts.grid, parts.score**2 / parts.rho


def _bootstrap_stats(parts: _ScoreParts, n_boot: int, seed: int) -> np.ndarray:
    n = parts.psi_star.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    scale = 1.0 / (np.sqrt(n) * np.sqrt(parts.rho))
    out = np.empty(n_boot)
    chunk = max(1, min(n_boot, 2_000_000 // max(n, 1)))
    for start in range(0, n_boot, chunk):
        stop = min(n_boot, start + chunk)
        g = rng.standard_normal((stop - start, n))
        out[start:stop] = np.max((g @ parts.psi_star * scale) ** 2, axis=1)
    return out


def bootstrap_crit(data: Dataset, null: NullFit, cfg: TestConfig) -> tuple[float, float]:
    """Return ``(c, p)``: the upper ``level`` quantile of the bootstrap supremum and the add-one p-value."""
    res = test_knots(data, cfg, null=null)
    return res.crit, res.p_value


def test_knots(data: Dataset, cfg: TestConfig = TestConfig(), null: NullFit | None = None) -> KnotTestResult:
    """Test ``H0: no knots`` against at least one knot in the index."""
    if cfg.n_boot < MIN_BOOT:
        log.warning("n_boot=%d is below %d; the critical value is unreliable", cfg.n_boot, MIN_BOOT)
    if null is None:
        null = fit_null(data)
    parts = _score_parts(data, null, cfg)
    curve = parts.score**2 / parts.rho
    t_stat = float(np.max(curve))
    boot = _bootstrap_stats(parts, cfg.n_boot, cfg.seed)
    crit = float(np.quantile(boot, 1.0 - cfg.level))
    p = (1.0 + np.count_nonzero(boot >= t_stat)) / (cfg.n_boot + 1.0)
    return KnotTestResult(
        t_stat=t_stat, crit=crit, p_value=float(p), reject=bool(t_stat > crit),
        tau_grid=parts.grid, curve=curve, n_boot=cfg.n_boot, level=cfg.level, dropped=parts.dropped,
    )


test_knots.__test__ = False
