"""Fit-only statistical baselines sharing the forecaster's evaluation protocol:
persistence, weighted analog retrieval, VAR and simple exponential smoothing in
ilr coordinates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBank, EmptyPrefix, InsufficientData
from .simplex import ilr_forward, ilr_inverse, smooth

logger = logging.getLogger(__name__)

ETS_ALPHA_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


def persistence_predict(prefix: np.ndarray) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim != 2 or len(prefix) == 0:
        raise EmptyPrefix("persistence needs a nonempty prefix")
    return prefix[-1].copy()


# ------------------------------------------------------------------ analog


@dataclass
class AnalogBank:
    """Train-split memory of (flattened context window, successor) pairs."""

    windows: np.ndarray  # (n, w * D)
    successors: np.ndarray  # (n, D)
    w: int = 4
    k: int = 8
    bandwidth: float = 1.0


def _flat_window(steps: np.ndarray, t: int, w: int) -> np.ndarray:
    """Last-w window ending at position t, zero-padded on the left."""
    d = steps.shape[1]
    out = np.zeros((w, d))
    lo = max(0, t - w + 1)
    out[w - (t + 1 - lo) :] = steps[lo : t + 1]
    return out.ravel()


def build_analog_bank(train_seqs, w: int = 4, k: int = 8, max_pairs: int = 50000,
                      seed: int = 0) -> AnalogBank:
    windows, succs = [], []
    for seq in train_seqs:
        steps = np.asarray(seq.steps, dtype=np.float64)
        for t in range(len(steps) - 1):
            windows.append(_flat_window(steps, t, w))
            succs.append(steps[t + 1])
    if not windows:
        raise EmptyBank("no training pairs for analog bank")
    windows = np.array(windows)
    succs = np.array(succs)
    if len(windows) > max_pairs:
        idx = np.random.default_rng(seed).choice(len(windows), max_pairs, replace=False)
        windows, succs = windows[idx], succs[idx]
    # self-tuning bandwidth: median nearest-other-window L1 distance on a sample
    rng = np.random.default_rng(seed + 1)
    sample = rng.choice(len(windows), min(len(windows), 200), replace=False)
    nearest = []
    for i in sample:
        d = np.abs(windows - windows[i]).sum(axis=1)
        d[i] = np.inf
        nearest.append(d.min())
    bw = float(np.median(nearest))
    if not np.isfinite(bw) or bw <= 0:
        bw = 1.0
    return AnalogBank(windows, succs, w=w, k=k, bandwidth=bw)


def analog_predict(prefix: np.ndarray, bank: AnalogBank) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.float64)
    if len(prefix) == 0:
        raise EmptyPrefix("analog prediction needs a nonempty prefix")
    if len(bank.windows) == 0:
        raise EmptyBank("empty analog bank")
    query = _flat_window(prefix, len(prefix) - 1, bank.w)
    dist = np.abs(bank.windows - query).sum(axis=1)
    k = min(bank.k, len(dist))
    idx = np.argpartition(dist, k - 1)[:k]
    idx = idx[np.argsort(dist[idx], kind="stable")]
    weights = np.exp(-(dist[idx] ** 2) / (2.0 * bank.bandwidth**2))
    if weights.sum() <= 0:
        weights = np.ones(k)
    weights = weights / weights.sum()
    return weights @ bank.successors[idx]


# ------------------------------------------------------------------ ilr VAR


@dataclass
class VarCoefficients:
    order: int
    matrix: np.ndarray | None  # (p * (D - 1) + 1, D - 1); None means fallback
    dim: int = 0


def ilr_var_fit(train_seqs, order: int = 1, ridge: float = 1e-6) -> VarCoefficients:
    """Pooled ordinary least squares VAR(p) with intercept in ilr coordinates.
    Falls back to persistence (matrix=None) when there are too few pairs."""
    xs, ys = [], []
    dim = None
    for seq in train_seqs:
        steps = np.asarray(seq.steps, dtype=np.float64)
        dim = steps.shape[1]
        z = np.array([ilr_forward(smooth(p)) for p in steps])
        for t in range(order, len(z)):
            xs.append(np.concatenate([z[t - j] for j in range(1, order + 1)] + [[1.0]]))
            ys.append(z[t])
    n_cols = order * (dim - 1) + 1 if dim else 1
    if len(xs) < n_cols:
        logger.warning(
            "ilr VAR(%d): %d pairs < %d columns; falling back to persistence",
            order, len(xs), n_cols,
        )
        return VarCoefficients(order, None, dim or 0)
    x = np.array(xs)
    y = np.array(ys)
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    theta = np.linalg.solve(gram, x.T @ y)
    return VarCoefficients(order, theta, dim)


def ilr_var_predict(prefix: np.ndarray, coef: VarCoefficients) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.float64)
    if len(prefix) == 0:
        raise EmptyPrefix("VAR prediction needs a nonempty prefix")
    if coef.matrix is None or len(prefix) < coef.order:
        return persistence_predict(prefix)
    lags = [ilr_forward(smooth(prefix[-j])) for j in range(1, coef.order + 1)]
    x = np.concatenate(lags + [[1.0]])
    z_next = x @ coef.matrix
    return ilr_inverse(z_next, prefix.shape[1])


# ------------------------------------------------------------------ ilr ETS


@dataclass
class EtsAlphas:
    alphas: np.ndarray  # (D - 1,)
    dim: int


def _ses_levels(z: np.ndarray, alpha: float) -> np.ndarray:
    """Simple-exponential-smoothing level after each observation (per column
    handled by the caller); level_0 = z_0."""
    levels = np.empty_like(z)
    levels[0] = z[0]
    for t in range(1, len(z)):
        levels[t] = alpha * z[t] + (1 - alpha) * levels[t - 1]
    return levels


def ets_fit(train_seqs) -> EtsAlphas:
    """Per-ilr-coordinate grid search for the smoothing weight minimizing
    pooled one-step-ahead squared error."""
    if not train_seqs:
        raise InsufficientData("ETS needs at least one training series")
    dim = np.asarray(train_seqs[0].steps).shape[1]
    zs = [
        np.array([ilr_forward(smooth(p)) for p in np.asarray(seq.steps, dtype=np.float64)])
        for seq in train_seqs
    ]
    errors = np.zeros((len(ETS_ALPHA_GRID), dim - 1))
    for ai, alpha in enumerate(ETS_ALPHA_GRID):
        for z in zs:
            if len(z) < 2:
                continue
            levels = _ses_levels(z, alpha)
            errors[ai] += ((z[1:] - levels[:-1]) ** 2).sum(axis=0)
    best = np.argmin(errors, axis=0)
    return EtsAlphas(ETS_ALPHA_GRID[best], dim)


def ets_predict(prefix: np.ndarray, fitted: EtsAlphas) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.float64)
    if len(prefix) == 0:
        raise EmptyPrefix("ETS prediction needs a nonempty prefix")
    z = np.array([ilr_forward(smooth(p)) for p in prefix])
    level = z[0].copy()
    for t in range(1, len(z)):
        level = fitted.alphas * z[t] + (1 - fitted.alphas) * level
    return ilr_inverse(level, prefix.shape[1])


# ---------------------------------------------------------------- wrappers


class Predictor:
    """Uniform one-step interface used by the evaluation harness."""

    name = "predictor"

    def predict(self, prefix: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


@dataclass
class PersistencePredictor(Predictor):
    name: str = "persistence"

    def predict(self, prefix):
        return persistence_predict(prefix)


@dataclass
class AnalogPredictor(Predictor):
    bank: AnalogBank = None
    name: str = "analog_successor"

    def predict(self, prefix):
        return analog_predict(prefix, self.bank)


@dataclass
class VarPredictor(Predictor):
    coef: VarCoefficients = None
    name: str = "ilr_var"

    def predict(self, prefix):
        return ilr_var_predict(prefix, self.coef)


@dataclass
class EtsPredictor(Predictor):
    fitted: EtsAlphas = None
    name: str = "ilr_ets"

    def predict(self, prefix):
        return ets_predict(prefix, self.fitted)


@dataclass
class CastPredictor(Predictor):
    params: object = None
    name: str = "cast"
    _cache: dict = field(default_factory=dict, repr=False)

    def predict(self, prefix):
        from .model import encode_all, forward

        prefix = np.asarray(prefix, dtype=np.float64)
        cfg = self.params.cfg
        feats = encode_all(prefix, cfg)
        t = len(prefix) - 1
        mem_feats = feats[:t] if t > 0 else None
        mem_succ = prefix[1 : t + 1] if t > 0 else None
        p_hat, _ = forward(prefix, mem_feats, mem_succ, self.params, h=feats[t])
        return p_hat
