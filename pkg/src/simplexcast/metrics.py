"""Divergences and distances between simplex points.

All logarithms are natural. KL smooths both arguments with the same floor
eps so that KL(p, p) == 0 exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, WeightSumInvalid
from .simplex import Dist, smooth

DEFAULT_EPS = 1e-8


def _check_same_dim(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes {p.shape} and {q.shape} differ")
    return p, q


def kl(p: Dist, q: Dist, eps: float = DEFAULT_EPS) -> float:
    """KL(p || q) = sum p log(p/q), both arguments smoothed with eps."""
    p, q = _check_same_dim(p, q)
    ps = smooth(p, eps)
    qs = smooth(q, eps)
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def jsd(p: Dist, q: Dist, eps: float = DEFAULT_EPS) -> float:
    """Jensen-Shannon divergence (natural log, in [0, ln 2])."""
    p, q = _check_same_dim(p, q)
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m, eps) + 0.5 * kl(q, m, eps)


def l1(p: Dist, q: Dist) -> float:
    p, q = _check_same_dim(p, q)
    return float(np.abs(p - q).sum())


def bray_curtis(p: Dist, q: Dist) -> float:
    """Sum|p-q| / Sum(p+q); equals l1/2 when both live on the simplex."""
    p, q = _check_same_dim(p, q)
    denom = (p + q).sum()
    return float(np.abs(p - q).sum() / denom)


def w1_ordered(p: Dist, q: Dist) -> float:
    """1-D Wasserstein distance with unit ground metric on ordered bins:
    sum_j |cumsum(p - q)_j|."""
    p, q = _check_same_dim(p, q)
    return float(np.abs(np.cumsum(p - q)).sum())


def js_weighted(dists, weights, eps: float = DEFAULT_EPS) -> float:
    """Weighted Jensen-Shannon divergence: sum_z pi_z KL(u_z || mix)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise WeightSumInvalid("weights must be nonnegative and sum to 1")
    ds = np.asarray([np.asarray(d, dtype=np.float64) for d in dists])
    if len(ds) != len(w):
        raise WeightSumInvalid("one weight per distribution required")
    mix = w @ ds
    return float(sum(wz * kl(dz, mix, eps) for wz, dz in zip(w, ds)))


def pinsker_lower_bound(p: Dist, q: Dist) -> float:
    """0.5 * ||p - q||_1^2, a lower bound on kl(p, q)."""
    return 0.5 * l1(p, q) ** 2


@dataclass
class MetricReport:
    kl: float
    jsd: float
    l1: float
    bray_curtis: float
    w1: float | None = None

    def as_dict(self) -> dict:
        d = {"kl": self.kl, "jsd": self.jsd, "l1": self.l1, "bray_curtis": self.bray_curtis}
        if self.w1 is not None:
            d["w1"] = self.w1
        return d


def metric_report(p: Dist, q: Dist, ordered: bool = False, eps: float = DEFAULT_EPS) -> MetricReport:
    """All metrics between a target p and a prediction q."""
    return MetricReport(
        kl=kl(p, q, eps),
        jsd=jsd(p, q, eps),
        l1=l1(p, q),
        bray_curtis=bray_curtis(p, q),
        w1=w1_ordered(p, q) if ordered else None,
    )
