"""Binary mutual-information rewards and the per-episode reward pipeline.

The pipeline turns a stream of environment events into an auxiliary reward
``r_v`` and keeps the instruction pointer. Which rule moves the pointer
depends on the mode: continuous scorers accumulate reward up to a cap, the
binary gate advances on its first firing, and the oracle and ``none`` modes
follow ground truth.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .instruction import (
    FulfillmentTracker,
    PointerState,
    Walkthrough,
    advance_pointer,
    check_completion_binary,
    check_completion_cumulative,
)
from .scorer import OracleRewardModel, cosine, embed_instruction, matched_pairs_from_solver, score_window, tokenize

MODES = ("none", "oracle", "continuous_markovian", "continuous_window", "bi", "bimi")
SCORERS = ("markovian", "window")


@dataclass(frozen=True)
class ConformalThreshold:
    q_hat: float
    alpha: float
    n: int

    def to_dict(self) -> dict:
        return {"q_hat": self.q_hat, "alpha": self.alpha, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "ConformalThreshold":
        return cls(float(d["q_hat"]), float(d["alpha"]), int(d["n"]))


def calibrate_threshold(scores: Sequence[float], alpha: float) -> ConformalThreshold:
    """Lower-interpolation empirical quantile at level ceil((n-1)(1-alpha))/n."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    arr = np.asarray(scores, dtype=float)
    n = arr.size
    if n == 0:
        raise ValueError("calibration needs at least one score")
    q_level = math.ceil((n - 1) * (1 - alpha)) / n
    q_hat = float(np.quantile(arr, q_level, method="lower"))
    return ConformalThreshold(q_hat=q_hat, alpha=alpha, n=n)


def binary_reward(score: float, thr: ConformalThreshold, fired: bool) -> int:
    return int(score >= thr.q_hat and not fired)


def estimate_frequency(rollouts: Sequence[tuple[Sequence[float], int]], thr: ConformalThreshold,
                       initial: float = 0.0) -> float:
    """Mean over rollouts of the fraction of steps whose score clears the threshold."""
    if not rollouts:
        return initial
    rates = []
    for scores, length in rollouts:
        if length < 1:
            raise ValueError("rollout length must be >= 1")
        rates.append(sum(1 for s in scores if s >= thr.q_hat) / length)
    return float(np.mean(rates))


def bimi_reward(score: float, thr: ConformalThreshold, p_lk: float, fired: bool) -> float:
    if not 0.0 <= p_lk <= 1.0:
        raise ValueError("p_lk must lie in [0, 1]")
    return max(binary_reward(score, thr, fired) - p_lk, 0.0)


def continuous_reward(score: float, r_cum: float, cap: float = 2.0) -> float:
    return score if r_cum < cap else 0.0


def combine_rewards(r_e: float, r_v: float, beta: float, gamma: float) -> float:
    return r_e + (1.0 - beta) * gamma * r_v


@dataclass(frozen=True)
class FrequencyTable:
    """p(l_k) for every instruction, estimated from the previous iteration."""

    values: dict[int, float]
    iteration: int = 0

    def __post_init__(self) -> None:
        for k, v in self.values.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"frequency for instruction {k} outside [0, 1]")

    @classmethod
    def initial(cls, n: int, value: float = 0.0) -> "FrequencyTable":
        return cls({k: value for k in range(1, n + 1)}, 0)

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    def updated(self, episode_rates: Sequence[dict[int, float]]) -> "FrequencyTable":
        """New table from per-episode hit rates; unchanged values if no episode finished."""
        if not episode_rates:
            return FrequencyTable(dict(self.values), self.iteration + 1)
        vals = {k: float(np.mean([r[k] for r in episode_rates])) for k in self.values}
        return FrequencyTable(vals, self.iteration + 1)


@dataclass(frozen=True)
class RewardPipelineConfig:
    mode: str = "bimi"
    beta: float = 0.5
    gamma: float = 0.95
    cap: float = 2.0
    window: int = 5
    scorer: str = "window"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown pipeline mode {self.mode!r}")
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def uses_threshold(self) -> bool:
        return self.mode in ("bi", "bimi")


@dataclass
class PipelineStep:
    r_v: float
    pointer: int                 # active instruction before this step
    advanced: bool               # pointer moved during this step
    fulfilled: list[int] = field(default_factory=list)  # ground-truth completions


class RewardPipeline:
    """Per-episode state machine producing ``r_v`` and the pointer.

    One instance serves one environment stream; call :meth:`reset` at every
    episode start and :meth:`finish_episode` when it ends.
    """

    def __init__(self, cfg: RewardPipelineConfig, walkthrough: Walkthrough,
                 threshold: ConformalThreshold | None = None, frequencies: FrequencyTable | None = None,
                 oracle: OracleRewardModel | None = None):
        if cfg.uses_threshold and threshold is None:
            raise ValueError(f"mode {cfg.mode!r} needs a calibrated threshold")
        if cfg.mode == "oracle" and oracle is None:
            raise ValueError("mode 'oracle' needs an oracle reward model")
        self.cfg = cfg
        self.walkthrough = walkthrough
        self.threshold = threshold
        self.frequencies = frequencies or FrequencyTable.initial(walkthrough.n)
        self.oracle = oracle
        self._instr = [embed_instruction(ins) for ins in walkthrough]
        self.tracker = FulfillmentTracker(walkthrough)
        self.reset()

    def reset(self) -> None:
        self.ptr = PointerState(n=self.walkthrough.n)
        self.tracker.reset()
        mode = self.cfg.mode
        markovian = mode == "continuous_markovian" or (self.cfg.uses_threshold and self.cfg.scorer == "markovian")
        width = 1 if markovian else self.cfg.window
        self._window: deque[tuple[str, ...]] = deque(maxlen=width)
        self._hits = [0] * self.walkthrough.n
        self._t = 0
        if self.oracle is not None:
            self.oracle.reset()

    @property
    def pointer(self) -> int:
        return self.ptr.m

    def _bag(self) -> Counter:
        bag: Counter = Counter()
        for step in self._window:
            for ev in step:
                bag.update(tokenize(ev))
        return bag

    def scores(self) -> list[float]:
        """Current window score against every instruction."""
        bag = self._bag()
        if not bag:
            return [0.0] * self.walkthrough.n
        return [cosine(bag, v) for v in self._instr]

    def _score_active(self) -> float:
        bag = self._bag()
        if not bag:
            return 0.0
        return cosine(bag, self._instr[self.ptr.m - 1])

    def step(self, step_events: Sequence[str], cell) -> PipelineStep:
        self._t += 1
        t = self._t
        events = tuple(step_events)
        self._window.append(events)
        before = self.ptr
        fulfilled = self.tracker.update(events, t)
        mode = self.cfg.mode
        r_v = 0.0

        if mode == "bimi":
            for k, s in enumerate(self.scores(), start=1):
                self._hits[k - 1] += s >= self.threshold.q_hat

        if mode in ("none", "oracle"):
            if mode == "oracle":
                r_v = self.oracle.score(cell, events, before, fulfilled)
            for _ in fulfilled:
                self.ptr = advance_pointer(self.ptr, True, t)
        elif not before.exhausted:
            score = self._score_active()
            if mode.startswith("continuous"):
                r_v = continuous_reward(score, before.r_cum, self.cfg.cap)
                self.ptr, _ = check_completion_cumulative(before, r_v, self.cfg.cap, t)
            else:
                gate = binary_reward(score, self.threshold, before.fired)
                if mode == "bi":
                    r_v = float(gate)
                else:
                    r_v = bimi_reward(score, self.threshold, self.frequencies[before.m], before.fired)
                self.ptr, _ = check_completion_binary(before, gate, t)
        return PipelineStep(r_v, before.m, self.ptr.m != before.m, fulfilled)

    def finish_episode(self) -> dict[int, float]:
        """Per-instruction fraction of this episode's steps above threshold."""
        length = max(self._t, 1)
        return {k: self._hits[k - 1] / length for k in range(1, self.walkthrough.n + 1)}


# ---------------------------------------------------------------------------
# Calibration sets


@dataclass(frozen=True)
class CalibrationRecord:
    trajectory: int
    instruction: int
    score: float


def calibration_set(envs, window: int) -> list[CalibrationRecord]:
    """Windowed scores of solver trajectories at each fulfillment step."""
    out = []
    for traj_id, k, (segment, text) in matched_pairs_from_solver(envs, window):
        out.append(CalibrationRecord(traj_id, k, score_window(segment, window, text)))
    return out


def save_calibration(records: Sequence[CalibrationRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trajectory", "instruction", "score"])
        for r in records:
            writer.writerow([r.trajectory, r.instruction, repr(r.score)])


def load_calibration(path: str | Path) -> list[CalibrationRecord]:
    with Path(path).open(newline="") as fh:
        return [CalibrationRecord(int(row["trajectory"]), int(row["instruction"]), float(row["score"]))
                for row in csv.DictReader(fh)]
