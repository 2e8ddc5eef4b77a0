import numpy as np
import pytest

from simplexcast.baselines import (
    AnalogBank,
    ETS_ALPHA_GRID,
    analog_predict,
    build_analog_bank,
    ets_fit,
    ets_predict,
    ilr_var_fit,
    ilr_var_predict,
    persistence_predict,
    _flat_window,
)
from simplexcast.errors import EmptyBank, EmptyPrefix
from simplexcast.model import make_series
from simplexcast.simplex import ilr_forward, ilr_inverse, smooth

from conftest import random_dist


def series_from(rng, t_len, d, seq_id="s"):
    steps = np.array([random_dist(rng, d) for _ in range(t_len)])
    return make_series(seq_id, True, steps)


# ------------------------------------------------------------- persistence


def test_persistence_returns_last():
    a, b, c = np.eye(3)
    assert np.array_equal(persistence_predict(np.array([a, b, c])), c)
    assert np.array_equal(persistence_predict(np.array([a])), a)


def test_persistence_empty_prefix():
    with pytest.raises(EmptyPrefix):
        persistence_predict(np.empty((0, 3)))


# ------------------------------------------------------------------ analog


def test_analog_exact_match_returns_successor(rng):
    seqs = [series_from(rng, 8, 4, f"s{i}") for i in range(3)]
    bank = build_analog_bank(seqs, w=3, k=1)
    steps = seqs[0].steps
    # query = the exact training window ending at t=4; k=1 picks distance 0
    pred = analog_predict(steps[:5], bank)
    assert np.allclose(pred, steps[5])


def test_analog_constant_successors(rng):
    u = random_dist(rng, 4)
    windows = np.array([random_dist(rng, 4 * 2).ravel() for _ in range(6)])
    windows = windows.reshape(6, -1)
    bank = AnalogBank(windows, np.tile(u, (6, 1)), w=2, k=4, bandwidth=0.5)
    pred = analog_predict(np.array([random_dist(rng, 4), random_dist(rng, 4)]), bank)
    assert np.allclose(pred, u)


def test_analog_equal_distances_average():
    d = 3
    p = np.full(d, 1 / 3)
    s1 = np.array([1.0, 0.0, 0.0])
    s2 = np.array([0.0, 0.0, 1.0])
    # two bank windows symmetric around the query: equal L1 distance
    w1 = np.concatenate([p, np.array([0.5, 0.3, 0.2])])
    w2 = np.concatenate([p, np.array([0.2, 0.3, 0.5])])
    bank = AnalogBank(np.array([w1, w2]), np.array([s1, s2]), w=2, k=2, bandwidth=1.0)
    query = np.array([p, np.array([0.35, 0.3, 0.35])])
    pred = analog_predict(query, bank)
    assert np.allclose(pred, 0.5 * (s1 + s2))


def test_analog_output_in_hull_and_simplex(rng):
    seqs = [series_from(rng, 10, 5, f"s{i}") for i in range(2)]
    bank = build_analog_bank(seqs, w=4, k=8)
    pred = analog_predict(seqs[0].steps[:6], bank)
    assert np.isclose(pred.sum(), 1.0)
    assert np.all(pred >= -1e-12)
    assert pred.min() >= bank.successors.min() - 1e-12
    assert pred.max() <= bank.successors.max() + 1e-12


def test_analog_empty_bank():
    bank = AnalogBank(np.empty((0, 4)), np.empty((0, 2)), w=2, k=1)
    with pytest.raises(EmptyBank):
        analog_predict(np.full((1, 2), 0.5), bank)


def test_flat_window_pads_left():
    steps = np.array([[0.5, 0.5], [0.9, 0.1]])
    win = _flat_window(steps, 0, 3)
    assert np.allclose(win, [0, 0, 0, 0, 0.5, 0.5])


# ------------------------------------------------------------------ ilr VAR


def _var_generated_series(rng, d, t_len, a=None, c=None):
    k = d - 1
    if a is None:
        a = 0.5 * rng.standard_normal((k, k))
        # keep spectral radius < 1 so the series stays bounded
        a *= 0.8 / max(np.abs(np.linalg.eigvals(a)).max(), 1e-9)
    if c is None:
        c = 0.3 * rng.standard_normal(k)
    z = rng.standard_normal(k)
    zs = [z]
    for _ in range(t_len - 1):
        z = a @ z + c
        zs.append(z)
    steps = np.array([ilr_inverse(z, d) for z in zs])
    return steps, a, c


def test_var_recovers_generator(rng):
    d = 4
    steps, a_true, c_true = _var_generated_series(rng, d, 40)
    seqs = [make_series("gen0", True, steps)]
    for i in range(1, 4):
        more, _, _ = _var_generated_series(rng, d, 40, a=a_true, c=c_true)
        seqs.append(make_series(f"gen{i}", True, more))
    coef = ilr_var_fit(seqs, order=1)
    # layout: first (d-1) rows = lag matrix (transposed), last row = intercept
    a_fit = coef.matrix[: d - 1].T
    c_fit = coef.matrix[-1]
    assert np.allclose(a_fit, a_true, atol=1e-5)
    assert np.allclose(c_fit, c_true, atol=1e-5)
    pred = ilr_var_predict(steps[:10], coef)
    z_next = a_true @ ilr_forward(smooth(steps[9])) + c_true
    assert np.allclose(pred, ilr_inverse(z_next, d), atol=1e-5)


def test_var_constant_series(rng):
    p = random_dist(rng, 4)
    steps = np.tile(p, (20, 1))
    coef = ilr_var_fit([make_series("c", True, steps)])
    pred = ilr_var_predict(steps[:5], coef)
    assert np.allclose(pred, p, atol=1e-6)


def test_var_d2_scalar_log_odds(rng):
    # D=2: ilr is a scalar log-odds coordinate; VAR(1) is scalar AR(1)
    steps, a_true, c_true = _var_generated_series(rng, 2, 40)
    coef = ilr_var_fit([make_series("d2", True, steps)])
    assert coef.matrix.shape == (2, 1)
    assert np.isclose(coef.matrix[0, 0], a_true[0, 0], atol=1e-5)


def test_var_insufficient_data_falls_back(rng, caplog):
    seq = make_series("tiny", True, np.array([random_dist(rng, 6), random_dist(rng, 6)]))
    import logging

    with caplog.at_level(logging.WARNING):
        coef = ilr_var_fit([seq], order=1)
    assert coef.matrix is None
    assert any("persistence" in r.message for r in caplog.records)
    pred = ilr_var_predict(seq.steps, coef)
    assert np.allclose(pred, seq.steps[-1])


# ------------------------------------------------------------------ ilr ETS


def test_ets_constant_series(rng):
    p = random_dist(rng, 4)
    steps = np.tile(p, (15, 1))
    fitted = ets_fit([make_series("c", True, steps)])
    assert np.allclose(ets_predict(steps, fitted), p, atol=1e-6)


def test_ets_alpha_one_is_persistence(rng):
    from simplexcast.baselines import EtsAlphas

    steps = np.array([random_dist(rng, 5) for _ in range(8)])
    fitted = EtsAlphas(np.ones(4), 5)
    pred = ets_predict(steps, fitted)
    assert np.allclose(pred, smooth(steps[-1]) / smooth(steps[-1]).sum(), atol=1e-6)


def test_ets_linear_drift_picks_large_alpha(rng):
    # noiseless drift in ilr space: persistence-like (large alpha) is best
    d = 3
    zs = np.array([[0.05 * t, -0.03 * t] for t in range(40)])
    steps = np.array([ilr_inverse(z, d) for z in zs])
    seqs = [make_series("drift", True, steps)]
    fitted = ets_fit(seqs)
    assert np.all(fitted.alphas >= 0.9)
    # error with fitted alphas beats the smallest-alpha variant
    from simplexcast.baselines import EtsAlphas, _ses_levels

    z = np.array([ilr_forward(smooth(p)) for p in steps])
    err_big = ((z[1:] - _ses_levels(z, fitted.alphas[0])[:-1]) ** 2).sum()
    err_small = ((z[1:] - _ses_levels(z, 0.05)[:-1]) ** 2).sum()
    assert err_big < err_small


def test_ets_grid_is_as_specified():
    assert ETS_ALPHA_GRID[0] == 0.05
    assert ETS_ALPHA_GRID[-1] == 0.95
    assert np.allclose(np.diff(ETS_ALPHA_GRID), 0.05)


# ------------------------------------------------- cross-module consistency


def test_persistence_equals_degenerate_cast(rng):
    # CAST with lambda pinned to 1 and rho pinned to 0 is persistence
    from simplexcast.model import CastParams, ModelConfig, encode_all, forward

    cfg = ModelConfig(dim=5, ordered=True, window=3, heads=1, d_r=4,
                      lambda_min=1.0, lambda_max=1.0, rho_max=1e-300)
    params = CastParams.init(cfg, seed=0)
    steps = np.array([random_dist(rng, 5) for _ in range(7)])
    feats = encode_all(steps, cfg)
    t = 5
    p_hat, _ = forward(steps[: t + 1], feats[:t], steps[1 : t + 1], params, h=feats[t])
    assert np.allclose(p_hat, persistence_predict(steps[: t + 1]), atol=1e-12)
