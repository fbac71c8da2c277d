"""Data containers, parameter bundle and the model's basic quantities."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .smoothing import KernelKind, hinge, qn


class DegenerateResponseError(DataError):
    """Raised when the response has zero total sum of squares."""


def _as_matrix(a, n: int, name: str) -> np.ndarray:
    if a is None:
        return np.empty((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != n:
        raise DataError(f"{name} must have {n} rows, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, index covariates ``x`` (first column anchored) and linear covariates ``z``."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        x = _as_matrix(self.x, n, "x")
        z = _as_matrix(self.z, n, "z")
        if x.shape[1] < 1:
            raise DataError("at least one index covariate is required")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if n <= x.shape[1] + z.shape[1] + 2:
            raise DataError(f"need n > d1 + d2 + 2 observations, got n={n}")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d1(self) -> int:
        return self.x.shape[1]

    @property
    def d2(self) -> int:
        return self.z.shape[1]

    @property
    def z_design(self) -> np.ndarray:
        """``(1, z)`` design matrix for the intercept and linear covariates."""
        return np.column_stack([np.ones(self.n), self.z])


@dataclass(frozen=True)
class Theta:
    """Parameter bundle; ``beta_1`` is fixed at one and not stored."""

    alpha0: float
    alpha: np.ndarray
    tau: np.ndarray
    beta_rest: np.ndarray
    gamma0: float
    gamma: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "gamma0", float(self.gamma0))
        for name in ("alpha", "tau", "beta_rest", "gamma"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy())
        if self.alpha.shape != self.tau.shape:
            raise ValueError("alpha and tau must have equal length")

    @property
    def n_knots(self) -> int:
        return self.alpha.shape[0]

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([[1.0], self.beta_rest])

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([[self.gamma0], self.gamma])

    @property
    def segment_slopes(self) -> np.ndarray:
        """Slopes ``alpha0 + sum_{k<=m} alpha_k`` on successive segments (knots sorted)."""
        order = np.argsort(self.tau, kind="stable")
        return self.alpha0 + np.concatenate([[0.0], np.cumsum(self.alpha[order])])

    def sorted(self) -> "Theta":
        order = np.argsort(self.tau, kind="stable")
        return replace(self, alpha=self.alpha[order], tau=self.tau[order])

    def select(self, keep) -> "Theta":
        keep = np.asarray(keep)
        return replace(self, alpha=self.alpha[keep], tau=self.tau[keep])

    def to_vector(self) -> np.ndarray:
        """Stack as (alpha_1..M, tau_1..M, alpha0, beta_2..d1, gamma0, gamma)."""
        return np.concatenate([self.alpha, self.tau, [self.alpha0], self.beta_rest, [self.gamma0], self.gamma])

    @classmethod
    def from_vector(cls, vec, n_knots: int, d1: int, d2: int) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        m = n_knots
        if vec.shape != (1 + d1 + d2 + 2 * m,):
            raise ValueError("parameter vector has the wrong length")
        return cls(
            alpha0=vec[2 * m],
            alpha=vec[:m],
            tau=vec[m : 2 * m],
            beta_rest=vec[2 * m + 1 : 2 * m + d1],
            gamma0=vec[2 * m + d1],
            gamma=vec[2 * m + d1 + 1 :],
        )

    def names(self) -> list[str]:
        m = self.n_knots
        return (
            [f"alpha{j}" for j in range(1, m + 1)]
            + [f"tau{j}" for j in range(1, m + 1)]
            + ["alpha0"]
            + [f"beta{j}" for j in range(2, self.beta_rest.size + 2)]
            + ["gamma0"]
            + [f"gamma{j}" for j in range(1, self.gamma.size + 1)]
        )


@dataclass(frozen=True)
class SmoothSpec:
    kernel: KernelKind
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelKind.from_name(self.kernel))
        if not self.delta > 0:
            raise ValueError(f"bandwidth must be positive, got {self.delta}")


def bandwidth(m_cap: int, n: int, nu: float) -> float:
    """Default bandwidth ``(log(M_n) / n) ** nu``."""
    if m_cap < 2:
        # log(1) = 0 would give a zero bandwidth
        return (np.log(2.0) / n) ** nu
    return (np.log(m_cap) / n) ** nu


def _check_dims(data: Dataset, theta: Theta) -> None:
    if theta.beta_rest.size != data.d1 - 1:
        raise DataError(f"theta has {theta.beta_rest.size + 1} index coefficients, data has d1={data.d1}")
    if theta.gamma.size != data.d2:
        raise DataError(f"theta has {theta.gamma.size} linear coefficients, data has d2={data.d2}")


def index_values(data: Dataset, theta: Theta) -> np.ndarray:
    _check_dims(data, theta)
    return data.x[:, 0] + data.x[:, 1:] @ theta.beta_rest


def linear_part(data: Dataset, theta: Theta, w: np.ndarray | None = None) -> np.ndarray:
    """``gamma0 + z'gamma + alpha0 * w``."""
    if w is None:
        w = index_values(data, theta)
    return theta.gamma0 + data.z @ theta.gamma + theta.alpha0 * w


def smoothed_design(data: Dataset, theta: Theta, spec: SmoothSpec) -> np.ndarray:
    """Columns ``(w, q_n(w, tau_1), ..., q_n(w, tau_M))``."""
    w = index_values(data, theta)
    if theta.n_knots == 0:
        return w[:, None]
    return np.column_stack([w, qn(w[:, None], theta.tau[None, :], spec.delta, spec.kernel)])


def residuals_smoothed(data: Dataset, theta: Theta, spec: SmoothSpec) -> np.ndarray:
    q = smoothed_design(data, theta, spec)
    return data.y - theta.gamma0 - data.z @ theta.gamma - q @ np.concatenate([[theta.alpha0], theta.alpha])


def loss_smoothed(data: Dataset, theta: Theta, spec: SmoothSpec) -> float:
    r = residuals_smoothed(data, theta, spec)
    return 0.5 * float(r @ r)


def regression_function(w, theta: Theta) -> np.ndarray:
    """Index effect ``alpha0 * w + sum_m alpha_m f(w, tau_m)``."""
    w = np.asarray(w, dtype=float)
    out = theta.alpha0 * w
    if theta.n_knots:
        out = out + hinge(w[..., None], theta.tau) @ theta.alpha
    return out


def predict(data: Dataset, theta: Theta) -> np.ndarray:
    """Fitted values from the unsmoothed hinge model."""
    w = index_values(data, theta)
    return theta.gamma0 + data.z @ theta.gamma + regression_function(w, theta)


def residuals(data: Dataset, theta: Theta) -> np.ndarray:
    return data.y - predict(data, theta)


def r_squared(data: Dataset, theta: Theta) -> float:
    """``1 - SSE/SST`` with the hinge predictions."""
    sst = float(np.sum((data.y - data.y.mean()) ** 2))
    if sst == 0:
        raise DegenerateResponseError("response is constant; R^2 undefined")
    r = residuals(data, theta)
    return 1.0 - float(r @ r) / sst
