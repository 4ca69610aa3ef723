"""Standard normal special functions and truncated multivariate normal moments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DegenerateEstimandError

__all__ = [
    "normal_pdf",
    "normal_cdf",
    "normal_inv_cdf",
    "hazard",
    "psi",
    "severity_to_threshold",
    "threshold_to_severity",
    "psi_to_threshold",
    "TruncationSpec",
    "TruncatedMoments",
    "tallis_truncated_moments",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    return special.ndtr(x)


def normal_inv_cdf(q):
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr <= 0) | (q_arr >= 1)) or np.any(np.isnan(q_arr)):
        raise ValueError("normal_inv_cdf needs q strictly inside (0, 1)")
    return special.ndtri(q)


def hazard(x):
    """Standard normal hazard ``phi(x) / (1 - Phi(x))`` (inverse Mills ratio).

    Written as ``sqrt(2/pi) / erfcx(x / sqrt(2))`` so that the right tail, where
    both numerator and denominator underflow, keeps full relative precision.
    """
    return _SQRT_2_OVER_PI / special.erfcx(np.asarray(x, dtype=float) / _SQRT2)


def psi(s0):
    """Derivative of the hazard, ``lambda(s0) * (lambda(s0) - s0)``.

    This is the variance-deflation factor of a unit normal truncated from below
    at ``s0``: ``Var(X | X >= s0) = 1 - psi(s0)``. It increases from 0 to 1.
    """
    lam = hazard(s0)
    return lam * (lam - np.asarray(s0, dtype=float))


def severity_to_threshold(q):
    """Threshold ``s0`` with ``Pr(S < s0) = q`` for standard normal ``S``."""
    return normal_inv_cdf(q)


def threshold_to_severity(s0):
    return normal_cdf(s0)


def psi_to_threshold(target):
    """Invert :func:`psi`: the threshold whose deflation factor equals ``target``."""
    if not 0.0 < target < 1.0:
        raise ValueError("psi target must lie strictly inside (0, 1)")
    lo, hi = -30.0, 10.0
    while psi(hi) < target:
        hi *= 4.0
        if hi > 1e8:
            raise ValueError(f"psi target {target!r} too close to 1")
    if psi(lo) > target:
        raise ValueError(f"psi target {target!r} too close to 0")
    return optimize.brentq(lambda s: psi(s) - target, lo, hi, xtol=1e-15, rtol=1e-15)


@dataclass(frozen=True)
class TruncationSpec:
    """One-sided truncation ``c'V >= p``.

    ``direction`` is a unit vector over a covariance's node order, or ``None``
    for the indicator of the model's selection node (the usual case).
    Build with :meth:`from_threshold` or :meth:`from_severity`; the other
    quantity is derived on access.
    """

    threshold: float
    direction: tuple | None = None

    def __post_init__(self):
        if not math.isfinite(self.threshold) and self.threshold != -math.inf:
            raise ValueError("threshold must be finite or -inf")
        if self.direction is not None:
            c = np.asarray(self.direction, dtype=float)
            norm = np.linalg.norm(c)
            if norm == 0 or not np.isfinite(norm):
                raise ValueError("truncation direction must be a nonzero finite vector")
            object.__setattr__(self, "direction", tuple(c / norm))

    @classmethod
    def from_threshold(cls, s0, direction=None):
        return cls(float(s0), direction)

    @classmethod
    def from_severity(cls, q, direction=None):
        return cls(float(severity_to_threshold(q)), direction)

    @property
    def severity(self):
        """``Pr(R = 0)`` for a unit-variance truncation variable."""
        return float(threshold_to_severity(self.threshold))

    def resolve(self, order, node=None):
        """Unit direction vector over ``order``."""
        if self.direction is None:
            if node is None:
                raise ValueError("a node-indicator truncation needs the selection node")
            c = np.zeros(len(order))
            c[list(order).index(node)] = 1.0
            return c
        c = np.asarray(self.direction)
        if c.shape != (len(order),):
            raise ValueError(f"direction has length {c.size}, expected {len(order)}")
        return c


@dataclass(frozen=True, eq=False)
class TruncatedMoments:
    mean: np.ndarray
    variance: np.ndarray
    psi: float


def tallis_truncated_moments(sigma, trunc, node=None):
    """Mean and covariance of ``V ~ N(0, Sigma)`` restricted to ``c'V >= p``.

    With ``s = sqrt(c' Sigma c)`` and ``a = p / s``::

        E[V | c'V >= p]   = Sigma c / s * lambda(a)
        Var(V | c'V >= p) = Sigma - Sigma c c' Sigma / s**2 * psi(a)

    For the indicator of a unit-variance node, ``s = 1`` and ``a = p``.

    Parameters
    ----------
    sigma : CovarianceStructure
    trunc : TruncationSpec
    node : str, optional
        Node used when ``trunc.direction`` is None.
    """
    c = trunc.resolve(sigma.order, node)
    s = sigma.sigma
    sc = s @ c
    scale2 = float(c @ sc)
    if scale2 <= 0:
        raise DegenerateEstimandError("truncation direction has zero variance")
    scale = math.sqrt(scale2)
    a = trunc.threshold / scale
    if a == -math.inf:
        lam, ps = 0.0, 0.0
    else:
        lam, ps = float(hazard(a)), float(psi(a))
    mean = sc / scale * lam
    variance = s - np.outer(sc, sc) / scale2 * ps
    return TruncatedMoments(mean, 0.5 * (variance + variance.T), ps)
