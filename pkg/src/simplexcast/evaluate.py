"""Offline and rollout evaluation, rank aggregation, the aliasing
diagnostic, and the multi-seed runner."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoEligibleSequences, NoScoredPositions, TooFewSequences
from .metrics import jsd, metric_report
from .simplex import SimplexSeries

METRIC_NAMES = ("kl", "jsd", "l1", "bray_curtis", "w1")


def _accumulate(sums: dict, counts: dict, report) -> None:
    for name, value in report.as_dict().items():
        sums[name] = sums.get(name, 0.0) + value
        counts[name] = counts.get(name, 0) + 1


def _means(sums: dict, counts: dict) -> dict:
    return {name: sums[name] / counts[name] for name in sums}


def evaluate_offline(predictor, seqs) -> dict:
    """Teacher-forced one-step evaluation: for every scored position, predict
    from the true prefix and score against the true successor. Predictions are
    never fed forward. Returns per-metric means."""
    sums: dict = {}
    counts: dict = {}
    for seq in seqs:
        for t in np.flatnonzero(seq.loss_mask):
            pred = predictor.predict(seq.steps[: t + 1])
            _accumulate(
                sums, counts, metric_report(seq.steps[t + 1], pred, seq.ordered)
            )
    if not sums:
        raise NoScoredPositions("no masked positions in the split")
    return _means(sums, counts)


@dataclass(frozen=True)
class RolloutConfig:
    context_len: int
    horizon: int
    max_examples: int = 1_000_000

    def __post_init__(self):
        if self.context_len < 1 or self.horizon < 1:
            raise ValueError("context_len and horizon must be >= 1")
        if self.max_examples < 1:
            raise ValueError("max_examples must be >= 1")


def evaluate_rollout(
    predictor, seqs, rc: RolloutConfig, final_step_only: bool = False
) -> dict:
    """Autoregressive evaluation: seed with the first context_len true steps,
    then feed each prediction back as the next input for `horizon` steps.
    Metrics are averaged uniformly over all horizon steps and examples, or
    over the final horizon step only when final_step_only is set.
    Sequences shorter than context_len + horizon are skipped (and counted);
    example selection is deterministic by sorted sequence id. Returns the
    per-metric means plus n_examples and n_skipped."""
    eligible = sorted(
        (s for s in seqs if len(s.steps) >= rc.context_len + rc.horizon),
        key=lambda s: s.id,
    )
    n_skipped = len(seqs) - len(eligible)
    eligible = eligible[: rc.max_examples]
    if not eligible:
        raise NoEligibleSequences(
            f"no sequence has length >= {rc.context_len + rc.horizon}"
        )
    sums: dict = {}
    counts: dict = {}
    for seq in eligible:
        prefix = seq.steps[: rc.context_len].copy()
        for h in range(rc.horizon):
            pred = predictor.predict(prefix)
            target = seq.steps[rc.context_len + h]
            if not final_step_only or h == rc.horizon - 1:
                _accumulate(sums, counts, metric_report(target, pred, seq.ordered))
            prefix = np.vstack([prefix, pred])
    out = _means(sums, counts)
    out["n_examples"] = len(eligible)
    out["n_skipped"] = n_skipped
    return out


@dataclass
class RankMatrix:
    methods: list
    sections: list
    ranks: np.ndarray  # (M, S) tie-averaged ranks, 1 = best
    average_rank: np.ndarray  # (M,)
    top1_counts: np.ndarray  # (M,) sections where the method is strictly-or-tied best


def rank_aggregate(table: dict) -> RankMatrix:
    """table maps method name -> {section name -> metric value}; every method
    must cover the same sections. Lower metric = rank 1; ties get the average
    of the ranks they span. Also reports per-method average rank and top-1
    (rank exactly the minimum of the section) win counts."""
    methods = sorted(table)
    if not methods:
        raise ValueError("empty results table")
    sections = sorted(table[methods[0]])
    for m in methods:
        if sorted(table[m]) != sections:
            raise ValueError(f"method {m!r} does not cover all sections")
    ranks = np.zeros((len(methods), len(sections)))
    for j, sec in enumerate(sections):
        values = np.array([table[m][sec] for m in methods], dtype=np.float64)
        order = np.argsort(values, kind="stable")
        col = np.empty(len(methods))
        i = 0
        while i < len(methods):
            k = i
            while k + 1 < len(methods) and values[order[k + 1]] == values[order[i]]:
                k += 1
            avg = (i + k) / 2.0 + 1.0  # ranks are 1-based
            for idx in order[i : k + 1]:
                col[idx] = avg
            i = k + 1
        ranks[:, j] = col
    top1 = (ranks == ranks.min(axis=0, keepdims=True)).sum(axis=1)
    return RankMatrix(
        methods=methods,
        sections=sections,
        ranks=ranks,
        average_rank=ranks.mean(axis=1),
        top1_counts=top1.astype(int),
    )


@dataclass(frozen=True)
class DiagnosticThresholds:
    strong_successor_jsd: float = 0.01
    moderate_successor_jsd: float = 0.001
    max_neighbor_jsd: float = 0.05


@dataclass
class DiagnosticReport:
    neighbor_jsd_quantiles: dict
    successor_jsd_quantiles: dict
    history_better_rate: float | None
    n_samples: int
    severity: str


def _window_descriptor(steps: np.ndarray, t: int, w: int) -> np.ndarray:
    lo = max(0, t + 1 - w)
    window = steps[lo : t + 1]
    if len(window) < w:
        pad = np.zeros((w - len(window), steps.shape[1]))
        window = np.vstack([pad, window])
    return window.reshape(-1)


def aliasing_diagnostic(
    seqs,
    n_samples: int = 500,
    thresholds: DiagnosticThresholds | None = None,
    window: int = 8,
    seed: int = 0,
) -> DiagnosticReport:
    """Measures how ambiguous the current distribution is as a predictor of
    the successor. For sampled (state, successor) pairs, finds the nearest
    cross-sequence state by current-distribution JSD and records both the
    neighbor JSD and the successor JSD. history_better_rate is the fraction
    of samples where the nearest neighbor by last-`window` history descriptor
    has a strictly closer successor than the nearest by current state (None
    when every successor gap ties, e.g. identical sequences)."""
    thresholds = thresholds or DiagnosticThresholds()
    if len(seqs) < 2:
        raise TooFewSequences("aliasing diagnostic needs at least two sequences")
    rng = np.random.default_rng(seed)
    positions = [
        (i, t)
        for i, seq in enumerate(seqs)
        for t in range(len(seq.steps) - 1)
    ]
    take = min(n_samples, len(positions))
    chosen = [positions[k] for k in rng.choice(len(positions), size=take, replace=False)]

    neighbor_jsds, successor_jsds = [], []
    history_better, comparable = 0, 0
    for i, t in chosen:
        cur = seqs[i].steps[t]
        succ = seqs[i].steps[t + 1]
        best_cur = best_hist = None
        best_cur_d = best_hist_d = np.inf
        desc = _window_descriptor(seqs[i].steps, t, window)
        for j, other in enumerate(seqs):
            if j == i:
                continue
            for s in range(len(other.steps) - 1):
                d_cur = jsd(cur, other.steps[s])
                if d_cur < best_cur_d:
                    best_cur_d, best_cur = d_cur, (j, s)
                d_hist = float(
                    np.abs(desc - _window_descriptor(other.steps, s, window)).sum()
                )
                if d_hist < best_hist_d:
                    best_hist_d, best_hist = d_hist, (j, s)
        nj, ns = best_cur
        neighbor_jsds.append(best_cur_d)
        succ_gap_cur = jsd(succ, seqs[nj].steps[ns + 1])
        successor_jsds.append(succ_gap_cur)
        hj, hs = best_hist
        succ_gap_hist = jsd(succ, seqs[hj].steps[hs + 1])
        if not np.isclose(succ_gap_hist, succ_gap_cur, atol=1e-12):
            comparable += 1
            if succ_gap_hist < succ_gap_cur:
                history_better += 1

    def quantiles(values):
        arr = np.asarray(values)
        return {
            "median": float(np.quantile(arr, 0.5)),
            "q90": float(np.quantile(arr, 0.9)),
        }

    succ_q = quantiles(successor_jsds)
    neigh_q = quantiles(neighbor_jsds)
    rate = history_better / comparable if comparable else None
    # aliasing is present when some near-identical states lead to clearly
    # different successors, so the upper-quantile successor gap is what is
    # classified, against the typical (median) neighbor gap
    if (
        succ_q["q90"] >= thresholds.strong_successor_jsd
        and neigh_q["median"] <= thresholds.max_neighbor_jsd
    ):
        severity = "strong"
    elif succ_q["q90"] >= thresholds.moderate_successor_jsd:
        severity = "moderate"
    else:
        severity = "weak"
    return DiagnosticReport(
        neighbor_jsd_quantiles=neigh_q,
        successor_jsd_quantiles=succ_q,
        history_better_rate=rate,
        n_samples=take,
        severity=severity,
    )


@dataclass
class SeedStudyResult:
    seeds: list
    per_seed: list  # list of per-metric dicts
    mean: dict
    sd: dict


def seed_study(runner, seeds) -> SeedStudyResult:
    """Runs `runner(seed) -> {metric: value}` once per seed and reports the
    per-metric mean and sample standard deviation."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("seed study needs at least two seeds")
    per_seed = [dict(runner(seed)) for seed in seeds]
    names = per_seed[0].keys()
    for row in per_seed[1:]:
        if row.keys() != names:
            raise ValueError("runner returned inconsistent metric names")
    mean = {}
    sd = {}
    for name in names:
        vals = np.array([row[name] for row in per_seed], dtype=np.float64)
        mean[name] = float(vals.mean())
        sd[name] = float(vals.std(ddof=1))
    return SeedStudyResult(seeds=seeds, per_seed=per_seed, mean=mean, sd=sd)
