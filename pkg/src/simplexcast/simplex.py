"""Probability vectors on the simplex: construction, smoothing, mixing,
isometric log-ratio coordinates, and ordered-support moments.

A distribution is represented as a 1-D float64 numpy array with nonnegative
entries summing to one. Support bins are indexed 1..D throughout, so the
mean of a point mass at bin k is k.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .errors import AllZeroMass, DimensionMismatch, NegativeMass, ZeroComponent

SUM_TOL = 1e-9

Dist = NDArray[np.float64]


def as_dist(values, renormalize: bool = True) -> Dist:
    """Validate (and if slightly off, renormalize) a vector as a distribution.

    Inputs whose sum deviates from 1 by more than SUM_TOL are renormalized
    rather than rejected.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DimensionMismatch(f"expected 1-D vector with D >= 2, got shape {v.shape}")
    if np.any(v < 0):
        raise NegativeMass("distribution has negative entries")
    s = v.sum()
    if s <= 0:
        raise AllZeroMass("distribution has zero total mass")
    if renormalize and abs(s - 1.0) > SUM_TOL:
        v = v / s
    return v


def normalize(raw) -> Dist:
    """Normalize nonnegative masses to a distribution.

    Raises AllZeroMass if the total mass is zero and NegativeMass if any
    entry is negative.
    """
    v = np.asarray(raw, dtype=np.float64)
    if np.any(v < 0):
        raise NegativeMass("raw masses contain negative entries")
    s = v.sum()
    if s == 0:
        raise AllZeroMass("raw masses sum to zero")
    return v / s


def smooth(p: Dist, eps: float = 1e-8) -> Dist:
    """Floor a distribution away from zero: (p + eps) / (1 + D*eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.asarray(p, dtype=np.float64)
    return (p + eps) / (1.0 + p.size * eps)


def convex_mix(a: Dist, b: Dist, lam: float) -> Dist:
    """Entrywise lam*a + (1-lam)*b; stays on the simplex by convexity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    return lam * a + (1.0 - lam) * b


@lru_cache(maxsize=64)
def helmert_basis(d: int) -> NDArray[np.float64]:
    """Orthonormal contrast basis ((D-1) x D): row i contrasts the first i
    parts against part i+1."""
    rows = []
    for i in range(1, d):
        row = np.zeros(d)
        row[:i] = 1.0 / i
        row[i] = -1.0
        row *= np.sqrt(i / (i + 1.0))
        rows.append(row)
    return np.array(rows)


def ilr_forward(p: Dist) -> NDArray[np.float64]:
    """Isometric log-ratio coordinates (length D-1) of an interior point."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ZeroComponent("ilr requires strictly positive entries; smooth first")
    logp = np.log(p)
    clr = logp - logp.mean()
    return helmert_basis(p.size) @ clr


def ilr_inverse(z, d: int) -> Dist:
    """Inverse ilr: softmax of the basis-expanded coordinates."""
    z = np.asarray(z, dtype=np.float64)
    if z.size != d - 1:
        raise DimensionMismatch(f"expected {d - 1} coordinates, got {z.size}")
    x = helmert_basis(d).T @ z
    x -= x.max()
    e = np.exp(x)
    return e / e.sum()


def support_bins(d: int) -> NDArray[np.float64]:
    return np.arange(1, d + 1, dtype=np.float64)


def mean_support(p: Dist) -> float:
    """Support mean with bins indexed 1..D."""
    p = np.asarray(p, dtype=np.float64)
    return float(support_bins(p.size) @ p)


def std_support(p: Dist) -> float:
    """Support standard deviation with bins indexed 1..D."""
    p = np.asarray(p, dtype=np.float64)
    mu = mean_support(p)
    return float(np.sqrt(p @ (support_bins(p.size) - mu) ** 2))


@dataclass
class SimplexSeries:
    """A time-indexed sequence of distributions.

    steps has shape (T, D); loss_mask has length T-1 and marks the scored
    one-step targets (mask[t] scores the transition steps[t] -> steps[t+1]).
    """

    id: str
    ordered: bool
    steps: NDArray[np.float64]
    loss_mask: NDArray[np.bool_] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64)
        if self.steps.ndim != 2 or self.steps.shape[1] < 2:
            raise DimensionMismatch(f"steps must be (T, D>=2), got {self.steps.shape}")
        if self.loss_mask is None:
            self.loss_mask = np.ones(len(self.steps) - 1, dtype=bool)
        else:
            self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if self.loss_mask.shape != (len(self.steps) - 1,):
            raise DimensionMismatch(
                f"loss_mask length {self.loss_mask.shape} != T-1 = {len(self.steps) - 1}"
            )

    @property
    def dim(self) -> int:
        return self.steps.shape[1]

    def __len__(self) -> int:
        return len(self.steps)
