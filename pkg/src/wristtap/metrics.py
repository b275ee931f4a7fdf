"""Score-set metrics: confusion counts, F-measure, EER, and FAR when tuned
for minimal false rejections.

The classification rule is boundary-inclusive: a trial is accepted iff its
score >= theta. FAR = fp / (fp + tn) measures wrongly accepted negatives,
FRR = fn / (fn + tp) wrongly rejected positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import SingleClassTrials, WristtapError


@dataclass(frozen=True)
class ScoredTrial:
    """One scored test example with the metadata the reports group by."""

    score: float
    positive: bool
    user_id: str = ""
    group: str = ""          # terminal id for auth trials, activity for intent
    seed: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0) or not np.isfinite(self.score):
            raise WristtapError(f"score must be finite in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f_measure: float


@dataclass(frozen=True)
class MetricSet:
    """The per-classifier metric bundle reported for every evaluation cell."""

    precision: float
    recall: float
    f_measure: float
    eer: float
    theta_eer: float
    far_at_min_frr: float
    theta_opt: float
    far_delta: float


def _split_scores(trials: Iterable[ScoredTrial]) -> tuple[np.ndarray, np.ndarray]:
    pos, neg = [], []
    for t in trials:
        (pos if t.positive else neg).append(t.score)
    return np.asarray(pos, dtype=np.float64), np.asarray(neg, dtype=np.float64)


def confusion_metrics(trials: Sequence[ScoredTrial], theta: float) -> Confusion:
    """Counts and precision/recall/F at the decision threshold theta."""
    if not trials:
        raise WristtapError("confusion_metrics needs at least one trial")
    pos, neg = _split_scores(trials)
    tp = int((pos >= theta).sum())
    fn = len(pos) - tp
    fp = int((neg >= theta).sum())
    tn = len(neg) - fp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Confusion(tp, fp, tn, fn, precision, recall, f)


def eer_from_scores(pos: np.ndarray, neg: np.ndarray) -> tuple[float, float]:
    """(EER, threshold) from positive- and negative-class score arrays.

    Sweeps thresholds over the midpoints between consecutive distinct
    scores plus sentinels; FAR is non-increasing and FRR non-decreasing in
    theta, and the crossing is linearly interpolated between the two
    candidates where FAR - FRR changes sign.
    """
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassTrials("EER needs scores from both classes")
    distinct = np.unique(np.concatenate([pos, neg]))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thetas = np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])

    far = (len(neg) - np.searchsorted(neg, thetas, side="left")) / len(neg)
    frr = np.searchsorted(pos, thetas, side="left") / len(pos)
    d = far - frr

    k = int(np.argmax(d < 0))  # first sign change; d[0] = 1, d[-1] = -1
    t = d[k - 1] / (d[k - 1] - d[k])
    eer = far[k - 1] + t * (far[k] - far[k - 1])
    theta = thetas[k - 1] + t * (thetas[k] - thetas[k - 1])
    return float(eer), float(theta)


def compute_eer(trials: Sequence[ScoredTrial]) -> tuple[float, float]:
    """(EER, threshold) for a trial set; raises SingleClassTrials if one-sided."""
    pos, neg = _split_scores(trials)
    return eer_from_scores(pos, neg)


def optimize_threshold_min_frr(trials: Sequence[ScoredTrial]) -> tuple[float, float]:
    """(theta_opt, FAR) at the largest threshold that rejects no positives.

    With the inclusive accept rule that threshold is exactly the minimum
    positive score; the returned FAR is the usability-first security cost.
    """
    pos, neg = _split_scores(trials)
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassTrials("threshold optimization needs both classes")
    theta = float(pos.min())
    far = float((neg >= theta).sum() / len(neg))
    return theta, far


def evaluate_trials(trials: Sequence[ScoredTrial], theta: float = 0.5) -> MetricSet:
    """Full MetricSet for one classifier's scored test trials."""
    con = confusion_metrics(trials, theta)
    eer, theta_eer = compute_eer(trials)
    theta_opt, far_opt = optimize_threshold_min_frr(trials)
    return MetricSet(
        precision=con.precision, recall=con.recall, f_measure=con.f_measure,
        eer=eer, theta_eer=theta_eer, far_at_min_frr=far_opt,
        theta_opt=theta_opt, far_delta=far_opt - eer,
    )


@dataclass(frozen=True)
class ActivityFar:
    activity: str
    count: int
    proportion_pct: float
    far: float


def far_by_activity(trials: Sequence[ScoredTrial], theta: float) -> list[ActivityFar]:
    """Per-activity false-acceptance rates among negative trials at theta.

    Lists walking / bus_or_train / in_store rows plus an `all` row covering
    every negative trial; `combined` negatives count toward `all` (and the
    proportion denominator) but get no row of their own.
    """
    neg = [t for t in trials if not t.positive]
    total = len(neg)
    rows = []
    for activity in ("walking", "bus_or_train", "in_store"):
        group = [t for t in neg if t.group == activity]
        fp = sum(1 for t in group if t.score >= theta)
        far = fp / len(group) if group else 0.0
        pct = 100.0 * len(group) / total if total else 0.0
        rows.append(ActivityFar(activity, len(group), pct, far))
    fp_all = sum(1 for t in neg if t.score >= theta)
    rows.append(ActivityFar("all", total, 100.0 if total else 0.0,
                            fp_all / total if total else 0.0))
    return rows
