"""Evaluation metrics and reward diagnostics computed from logged runs.

Reward logs are lists of dicts with keys ``episode``, ``t``, ``cell``,
``source``, ``value`` and ``pointer``; fulfillment logs carry ``episode``,
``k`` and ``t``. Episode ids are unique within a run.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats


def score_metric(success_rates: Sequence[float]) -> float:
    """exp(mean(ln(1 + s_k))) - 1, a geometric aggregate of per-instruction success."""
    s = np.asarray(success_rates, dtype=float)
    if s.size == 0:
        raise ValueError("score_metric needs at least one success rate")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("success rates must lie in [0, 1]")
    return float(math.exp(np.mean(np.log1p(s))) - 1.0)


@dataclass(frozen=True)
class ScoreReport:
    success_rates: tuple[float, ...]
    episodes: int

    @property
    def n(self) -> int:
        return len(self.success_rates)

    @property
    def score(self) -> float:
        return score_metric(self.success_rates)


def success_rate(episodes: Sequence[dict]) -> float:
    if not episodes:
        return 0.0
    return sum(bool(e["success"]) for e in episodes) / len(episodes)


def auc_total_reward(series: Sequence[tuple[float, float]], max_reward: float = 1.0) -> float:
    """Trapezoidal area under reward-vs-epoch with both axes scaled to [0, 1]."""
    if len(series) < 2:
        raise ValueError("AUC needs at least two points")
    x, y = np.asarray(series, dtype=float).T
    span = x[-1] - x[0]
    if span <= 0:
        raise ValueError("epochs must be increasing")
    return float(np.trapezoid(y / max_reward, (x - x[0]) / span))


@dataclass(frozen=True)
class OffsetRecord:
    episode: int
    k: int
    t_reward: int | None
    t_goal: int | None

    @property
    def offset(self) -> int | None:
        if self.t_reward is None or self.t_goal is None:
            return None
        return self.t_goal - self.t_reward

    @property
    def false_positive(self) -> bool:
        """Reward with no later-or-equal fulfillment of the instruction it was paid for."""
        return self.t_reward is not None and (self.t_goal is None or self.t_goal > self.t_reward)

    @property
    def false_negative(self) -> bool:
        return self.t_reward is None and self.t_goal is not None


def _goal_times(fulfillments: Iterable[dict]) -> dict[tuple[int, int], int]:
    return {(f["episode"], f["k"]): f["t"] for f in fulfillments}


def offset_records(rewards: Iterable[dict], fulfillments: Iterable[dict], source: str = "r_v") -> list[OffsetRecord]:
    """Pair each auxiliary reward with the fulfillment time of the instruction it was paid for.

    Fulfillments of an instruction that received no reward in the same
    episode become false-negative entries with ``t_reward=None``.
    """
    goals = _goal_times(fulfillments)
    out = []
    paid = set()
    for r in rewards:
        if r["source"] != source:
            continue
        key = (r["episode"], r["pointer"])
        paid.add(key)
        out.append(OffsetRecord(r["episode"], r["pointer"], r["t"], goals.get(key)))
    for (episode, k), t in goals.items():
        if (episode, k) not in paid:
            out.append(OffsetRecord(episode, k, None, t))
    return out


def offset_histogram(rewards: Iterable[dict], fulfillments: Iterable[dict],
                     source: str = "r_v") -> tuple[list[OffsetRecord], dict]:
    records = offset_records(rewards, fulfillments, source)
    offsets = [r.offset for r in records if r.offset is not None]
    summary = {
        "emissions": sum(r.t_reward is not None for r in records),
        "false_positives": sum(r.false_positive for r in records),
        "false_negatives": sum(r.false_negative for r in records),
        "never_fulfilled": sum(r.t_reward is not None and r.t_goal is None for r in records),
        "histogram": dict(sorted(Counter(offsets).items())),
    }
    return records, summary


def fp_ratio(rewards: Iterable[dict], fulfillments: Iterable[dict], source: str = "r_v") -> float:
    records = [r for r in offset_records(rewards, fulfillments, source) if r.t_reward is not None]
    if not records:
        return 0.0
    return sum(r.false_positive for r in records) / len(records)


def reward_heatmap(rewards: Iterable[dict], shape: tuple[int, int], source: str = "r_v") -> tuple[np.ndarray, np.ndarray]:
    """Total logged reward and emission count per cell."""
    total = np.zeros(shape)
    count = np.zeros(shape, dtype=np.int64)
    for r in rewards:
        if r["source"] != source:
            continue
        row, col = r["cell"]
        total[row, col] += r["value"]
        count[row, col] += 1
    return total, count


def write_heatmap_csv(grid: np.ndarray, path: str | Path) -> None:
    """Dense grid as CSV with a ``row`` column and one column per grid column."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + [f"c{c}" for c in range(grid.shape[1])])
        for r, line in enumerate(grid):
            writer.writerow([r] + [repr(float(v)) for v in line])


def sign_test(wins: int, trials: int) -> float:
    """One-sided binomial sign test p-value for ``wins`` out of ``trials`` non-tied pairs."""
    if trials == 0:
        return 1.0
    return float(stats.binomtest(wins, trials, 0.5, alternative="greater").pvalue)


def paired_sign_test(a: Sequence[float], b: Sequence[float]) -> tuple[int, int, float]:
    """Wins of ``a`` over ``b`` with ties dropped; returns (wins, non-ties, p)."""
    diffs = [x - y for x, y in zip(a, b, strict=True) if x != y]
    wins = sum(d > 0 for d in diffs)
    return wins, len(diffs), sign_test(wins, len(diffs))


def median_ci(values: Sequence[float], confidence: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile-bootstrap confidence interval for the median."""
    arr = np.asarray(values, dtype=float)
    if np.all(arr == arr[0]):
        return float(arr[0]), float(arr[0])
    res = stats.bootstrap((arr,), np.median, confidence_level=confidence, method="percentile",
                          n_resamples=2000, random_state=np.random.default_rng(seed))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def relative_change(x: float, baseline: float) -> float:
    """(x - b) / b; infinite when the baseline is zero and x is not."""
    if baseline == 0:
        return 0.0 if x == 0 else math.copysign(math.inf, x)
    return (x - baseline) / baseline
