"""SCAD and MCP penalties: values, derivatives and exact proximal maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

DEFAULT_T = {"scad": 3.7, "mcp": 3.0}


@dataclass(frozen=True)
class PenaltyKind:
    """Folded-concave penalty family with concavity parameter ``t``."""

    name: str
    t: float

    def __post_init__(self):
        name = self.name.strip().lower()
        if name not in DEFAULT_T:
            raise ValueError(f"unknown penalty {self.name!r}; expected 'scad' or 'mcp'")
        object.__setattr__(self, "name", name)
        if name == "scad" and not self.t > 2:
            raise ValueError(f"SCAD requires t > 2, got {self.t}")
        if name == "mcp" and not self.t > 1:
            raise ValueError(f"MCP requires t > 1, got {self.t}")

    @classmethod
    def scad(cls, t: float = DEFAULT_T["scad"]) -> "PenaltyKind":
        return cls("scad", t)

    @classmethod
    def mcp(cls, t: float = DEFAULT_T["mcp"]) -> "PenaltyKind":
        return cls("mcp", t)

    @classmethod
    def from_name(cls, name: str, t: float | None = None) -> "PenaltyKind":
        key = name.strip().lower()
        if key not in DEFAULT_T:
            raise ValueError(f"unknown penalty {name!r}; expected 'scad' or 'mcp'")
        return cls(key, DEFAULT_T[key] if t is None else float(t))


@dataclass(frozen=True)
class PenaltyParams:
    lam: float
    kind: PenaltyKind

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


def _ret(out, u):
    return float(out) if np.ndim(u) == 0 else out


def pen_value(u, p: PenaltyParams):
    """Penalty ``p_{lambda,t}(|u|)`` in closed form."""
    a = np.abs(np.asarray(u, dtype=float))
    lam, t = p.lam, p.kind.t
    if p.kind.name == "mcp":
        out = np.where(a <= t * lam, lam * a - a * a / (2.0 * t), t * lam * lam / 2.0)
    else:
        out = np.where(
            a <= lam,
            lam * a,
            np.where(
                a <= t * lam,
                (2.0 * t * lam * a - a * a - lam * lam) / (2.0 * (t - 1.0)),
                lam * lam * (t + 1.0) / 2.0,
            ),
        )
    return _ret(out, u)


def _check_positive(u):
    a = np.asarray(u, dtype=float)
    if np.any(a <= 0):
        raise ValueError("penalty derivatives are defined for u > 0 only")
    return a


def pen_deriv(u, p: PenaltyParams):
    """First derivative for ``u > 0``; equals ``lambda`` at ``0+``."""
    a = _check_positive(u)
    lam, t = p.lam, p.kind.t
    if lam == 0:
        return _ret(np.zeros_like(a), u)
    if p.kind.name == "mcp":
        out = np.maximum(lam - a / t, 0.0)
    else:
        out = lam * np.minimum(1.0, np.maximum(t - a / lam, 0.0) / (t - 1.0))
    return _ret(out, u)


def pen_deriv2(u, p: PenaltyParams):
    """Second derivative for ``u > 0``; zero at the junction points."""
    a = _check_positive(u)
    lam, t = p.lam, p.kind.t
    if p.kind.name == "mcp":
        out = np.where(a < t * lam, -1.0 / t, 0.0)
    else:
        out = np.where((a > lam) & (a < t * lam), -1.0 / (t - 1.0), 0.0)
    return _ret(out, u)


def soft_threshold(x, lam):
    """``sign(x) * max(|x| - lam, 0)``."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be nonnegative")
    x_ = np.asarray(x, dtype=float)
    return _ret(np.sign(x_) * np.maximum(np.abs(x_) - lam, 0.0), x)


def check_prox_admissible(kind: PenaltyKind, vartheta: float) -> None:
    """Raise if ``(vartheta/2)(u - z)^2 + p(z)`` is not strictly convex in ``z``."""
    if not vartheta > 0:
        raise ValueError(f"vartheta must be positive, got {vartheta}")
    if kind.name == "mcp" and not kind.t > 1.0 / vartheta:
        raise ValueError(f"MCP prox needs t > 1/vartheta (t={kind.t}, vartheta={vartheta})")
    if kind.name == "scad" and not kind.t > 1.0 / vartheta + 1.0:
        raise ValueError(f"SCAD prox needs t > 1/vartheta + 1 (t={kind.t}, vartheta={vartheta})")


def prox(u, p: PenaltyParams, vartheta: float):
    """Minimiser over ``z`` of ``(vartheta/2)(u - z)^2 + p(|z|)``.

    Coordinates with ``|u| > t*lambda`` pass through unchanged.
    """
    check_prox_admissible(p.kind, vartheta)
    u_ = np.asarray(u, dtype=float)
    a = np.abs(u_)
    lam, t = p.lam, p.kind.t
    if p.kind.name == "mcp":
        inner = soft_threshold(u_, lam / vartheta) / (1.0 - 1.0 / (t * vartheta))
        out = np.where(a <= t * lam, inner, u_)
    else:
        low = soft_threshold(u_, lam / vartheta)
        mid = soft_threshold(u_, t * lam / ((t - 1.0) * vartheta)) / (1.0 - 1.0 / ((t - 1.0) * vartheta))
        out = np.where(a <= lam * (1.0 + 1.0 / vartheta), low, np.where(a <= t * lam, mid, u_))
    return _ret(out, u)


@njit(cache=True)
def prox_scalar(u, lam, t, vartheta, is_mcp):
    """Scalar proximal map for compiled inner loops; agrees with :func:`prox`."""
    a = abs(u)
    if a > t * lam:
        return u
    if is_mcp:
        thr = lam / vartheta
        scale = 1.0 - 1.0 / (t * vartheta)
    elif a <= lam * (1.0 + 1.0 / vartheta):
        thr = lam / vartheta
        scale = 1.0
    else:
        thr = t * lam / ((t - 1.0) * vartheta)
        scale = 1.0 - 1.0 / ((t - 1.0) * vartheta)
    if a <= thr:
        return 0.0
    return np.sign(u) * (a - thr) / scale
