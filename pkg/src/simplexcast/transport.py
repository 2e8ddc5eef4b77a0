"""Radius-1 local stochastic transport on ordered supports.

A transport kernel is a D x 3 row-stochastic matrix K(j, o) over offsets
o in {-1, 0, +1}; applying it moves mass at most one bin, with offsets
clipped into {1..D} at the boundary. The mean-shift budget gate scales the
transport strength so that the realized support-mean displacement stays
within B = delta_mu + delta_sigma * std_support(a).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch
from .simplex import Dist, convex_mix, mean_support, std_support

OFFSETS = (-1, 0, 1)


@dataclass(frozen=True)
class TransportKernel:
    """Per-bin offset probabilities, rows[j] = (left, stay, right)."""

    rows: NDArray[np.float64]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise DimensionMismatch(f"kernel rows must be (D, 3), got {rows.shape}")
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("kernel rows must be nonnegative and sum to 1")

    @property
    def dim(self) -> int:
        return self.rows.shape[0]

    @staticmethod
    def identity(d: int) -> "TransportKernel":
        rows = np.zeros((d, 3))
        rows[:, 1] = 1.0
        return TransportKernel(rows)

    @staticmethod
    def pure_shift(d: int, direction: int) -> "TransportKernel":
        """All mass moves one bin left (direction=-1) or right (+1)."""
        rows = np.zeros((d, 3))
        rows[:, 1 + direction] = 1.0
        return TransportKernel(rows)


@dataclass(frozen=True)
class BudgetParams:
    delta_mu: float = 0.25
    delta_sigma: float = 0.10
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.delta_mu < 0 or self.delta_sigma < 0:
            raise ValueError("budget coefficients must be nonnegative")

    def budget(self, a: Dist) -> float:
        return self.delta_mu + self.delta_sigma * std_support(a)


def shift_mass(left: np.ndarray, stay: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Accumulate per-bin offset masses into destination bins with boundary
    clipping. Shared with the differentiable model path."""
    out = stay.copy()
    out[:-1] += left[1:]
    out[0] += left[0]
    out[1:] += right[:-1]
    out[-1] += right[-1]
    return out


def apply_transport(kernel: TransportKernel, a: Dist) -> Dist:
    """(T a)(k) = sum_j a(j) sum_o K(j,o) 1{k = clip(j+o, 1, D)}."""
    a = np.asarray(a, dtype=np.float64)
    if kernel.dim != a.size:
        raise DimensionMismatch(f"kernel dim {kernel.dim} != dist dim {a.size}")
    m = a[:, None] * kernel.rows
    return shift_mass(m[:, 0], m[:, 1], m[:, 2])


def budget_gate(a: Dist, ta: Dist, rho_raw: float, b: BudgetParams) -> tuple[float, float]:
    """Scale the raw transport strength so the realized mean shift stays
    within the budget. Returns (rho_effective, realized mean shift of the
    full-strength transport)."""
    delta_mu = mean_support(ta) - mean_support(a)
    budget = b.budget(a)
    gate = min(1.0, budget / (abs(delta_mu) + b.epsilon))
    return rho_raw * gate, delta_mu


def cast_step(
    p: Dist,
    r: Dist,
    lam: float,
    kernel: TransportKernel | None,
    rho: float,
    b: BudgetParams,
    ordered: bool,
) -> Dist:
    """One anchored-transport transition: anchor = lam*p + (1-lam)*r, then
    mix in the budget-gated local transport on ordered supports."""
    a = convex_mix(p, r, lam)
    if not ordered or rho == 0.0 or kernel is None:
        return a
    ta = apply_transport(kernel, a)
    rho_eff, _ = budget_gate(a, ta, rho, b)
    return (1.0 - rho_eff) * a + rho_eff * ta


def operator_regularizer(
    kernel: TransportKernel,
    a: Dist,
    rho: float,
    b: BudgetParams,
    weights: tuple[float, float, float, float] = (5e-4, 5e-4, 1e-4, 5e-4),
) -> float:
    """Target-free operator prior: weighted sum of transport strength,
    off-identity mass, neighbor roughness, and relative mean shift."""
    if any(w < 0 for w in weights):
        raise ValueError("regularizer weights must be nonnegative")
    w_strength, w_offid, w_smooth, w_shift = weights
    rows = kernel.rows
    strength = rho
    off_identity = float(np.sum(rows[:, [0, 2]] ** 2))
    smoothness = float(np.sum((rows[:-1] - rows[1:]) ** 2))
    ta = apply_transport(kernel, a)
    delta_mu = mean_support(ta) - mean_support(a)
    shift = (delta_mu / b.budget(a)) ** 2
    return (
        w_strength * strength
        + w_offid * off_identity
        + w_smooth * smoothness
        + w_shift * shift
    )
