"""Hinge basis and its convolution-smoothed surrogates.

Every formula is written in the shifted variable ``u = x - tau``; the knot
enters nowhere else, so the derivative with respect to ``tau`` is simply the
negated derivative with respect to ``x``.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import expit, ndtr

# Beyond this many bandwidths the Gaussian surrogate equals the hinge to
# machine precision.
GAUSSIAN_WINDOW = 8.0
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class KernelKind(enum.Enum):
    UNIFORM = "uniform"
    EPANECHNIKOV = "epanechnikov"
    LOGISTIC = "logistic"
    GAUSSIAN = "gaussian"

    @classmethod
    def from_name(cls, name: "str | KernelKind") -> "KernelKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {name!r}; expected one of {valid}") from None

    @property
    def bounded(self) -> bool:
        return self in (KernelKind.UNIFORM, KernelKind.EPANECHNIKOV)


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise ValueError(f"bandwidth must be positive, got {delta}")
    return delta


def _scalar_or_array(out, *args):
    if all(np.ndim(a) == 0 for a in args):
        return float(out)
    return out


def hinge(x, tau=0.0):
    """Linear spline basis ``(x - tau) * I(x >= tau)``."""
    u = np.asarray(x, dtype=float) - tau
    return _scalar_or_array(np.maximum(u, 0.0), x, tau)


def hinge_dx(x, tau=0.0):
    """Right derivative of :func:`hinge` in ``x`` (the indicator ``x > tau``)."""
    u = np.asarray(x, dtype=float) - tau
    return _scalar_or_array((u > 0).astype(float), x, tau)


def qn(x, tau, delta, kernel="uniform"):
    """Smoothed hinge ``q_n(x, tau)`` for bandwidth ``delta``.

    Parameters
    ----------
    x, tau : float or array_like
        Evaluation points and knot location; broadcast against each other.
    delta : float
        Bandwidth, strictly positive.
    kernel : str or KernelKind
        One of uniform, epanechnikov, logistic, gaussian.
    """
    k = KernelKind.from_name(kernel)
    d = _check_delta(delta)
    u = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(tau, dtype=float))
    if k is KernelKind.LOGISTIC:
        out = np.maximum(u, 0.0) + d * np.log1p(np.exp(-np.abs(u) / d))
    else:
        out = np.maximum(u, 0.0)
        s = u / d
        if k is KernelKind.GAUSSIAN:
            inside = np.abs(s) <= GAUSSIAN_WINDOW
            si, ui = s[inside], u[inside]
            out[inside] = ui * ndtr(si) + d * _INV_SQRT_2PI * np.exp(-0.5 * si * si)
        else:
            inside = np.abs(s) <= 1.0
            si = s[inside]
            if k is KernelKind.UNIFORM:
                out[inside] = d * (si + 1.0) ** 2 / 4.0
            else:
                out[inside] = d * (-(si**4) + 6.0 * si**2 + 8.0 * si + 3.0) / 16.0
    if np.ndim(x) == 0 and np.ndim(tau) == 0:
        return float(out[0])
    return out.reshape(np.broadcast(np.asarray(x), np.asarray(tau)).shape)


def qn_dx(x, tau, delta, kernel="uniform"):
    """First derivative of :func:`qn` in ``x``; lies in ``[0, 1]``.

    The derivative in ``tau`` is ``-qn_dx``.
    """
    k = KernelKind.from_name(kernel)
    d = _check_delta(delta)
    u = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(tau, dtype=float))
    s = u / d
    if k is KernelKind.LOGISTIC:
        out = expit(s)
    elif k is KernelKind.GAUSSIAN:
        out = np.where(np.abs(s) <= GAUSSIAN_WINDOW, ndtr(s), (s > 0).astype(float))
    else:
        sc = np.clip(s, -1.0, 1.0)
        if k is KernelKind.UNIFORM:
            out = (sc + 1.0) / 2.0
        else:
            out = (-(sc**3) + 3.0 * sc + 2.0) / 4.0
    if np.ndim(x) == 0 and np.ndim(tau) == 0:
        return float(out[0])
    return out.reshape(np.broadcast(np.asarray(x), np.asarray(tau)).shape)


def qn_dxx(x, tau, delta, kernel="uniform"):
    """Second derivative of :func:`qn` in ``x``, i.e. ``K(u/delta)/delta``."""
    k = KernelKind.from_name(kernel)
    d = _check_delta(delta)
    u = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(tau, dtype=float))
    s = u / d
    if k is KernelKind.LOGISTIC:
        p = expit(s)
        out = p * (1.0 - p) / d
    elif k is KernelKind.GAUSSIAN:
        out = np.where(np.abs(s) <= GAUSSIAN_WINDOW, _INV_SQRT_2PI * np.exp(-0.5 * s * s), 0.0) / d
    elif k is KernelKind.UNIFORM:
        out = np.where(np.abs(s) <= 1.0, 0.5, 0.0) / d
    else:
        out = np.where(np.abs(s) <= 1.0, 0.75 * (1.0 - s * s), 0.0) / d
    if np.ndim(x) == 0 and np.ndim(tau) == 0:
        return float(out[0])
    return out.reshape(np.broadcast(np.asarray(x), np.asarray(tau)).shape)
