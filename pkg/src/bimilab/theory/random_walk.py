"""Monte Carlo checks of unit-step random walks: squared displacement and first passage."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


def unit_steps(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` steps uniform on the unit (d-1)-sphere; +-1 when d = 1."""
    if d == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=(n, 1))
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def ci(self, z: float = 1.959963984540054) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr


def exact_msd_1d(steps: int) -> float:
    """E|S_T|^2 for +-1 steps by enumerating all 2^T paths."""
    total = sum(sum(path) ** 2 for path in itertools.product((-1, 1), repeat=steps))
    return total / 2 ** steps


def random_walk_msd(d: int, steps: int, trials: int, seed: int = 0) -> Estimate:
    if d < 1 or steps < 1 or trials < 1:
        raise ValueError("d, steps and trials must be >= 1")
    rng = np.random.default_rng(seed)
    pos = np.zeros((trials, d))
    for _ in range(steps):
        pos += unit_steps(rng, trials, d)
    sq = np.einsum("ij,ij->i", pos, pos)
    stderr = float(sq.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return Estimate(float(sq.mean()), stderr, trials)


@dataclass(frozen=True)
class PassageStats:
    distance: float
    estimate: Estimate
    censored: int


def first_passage_times(d: int, distance: float, trials: int, rng: np.random.Generator,
                        max_steps: int | None = None) -> tuple[np.ndarray, int]:
    """First step with |S_t| >= distance for each trial; unfinished trials are censored at ``max_steps``."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    cap = int(max_steps if max_steps is not None else 50 * distance ** 2 + 100)
    pos = np.zeros((trials, d))
    times = np.full(trials, cap, dtype=np.int64)
    active = np.arange(trials)
    for t in range(1, cap + 1):
        pos[active] += unit_steps(rng, active.size, d)
        hit = np.einsum("ij,ij->i", pos[active], pos[active]) >= distance ** 2
        times[active[hit]] = t
        active = active[~hit]
        if active.size == 0:
            break
    return times, int(active.size)


def first_passage_experiment(d: int, distances, trials: int, seed: int = 0,
                             max_steps: int | None = None) -> dict[float, PassageStats]:
    """Mean first-passage time per distance, with independent streams per distance."""
    out = {}
    streams = np.random.SeedSequence(seed).spawn(len(distances))
    for D, ss in zip(distances, streams):
        times, censored = first_passage_times(d, D, trials, np.random.default_rng(ss), max_steps)
        est = Estimate(float(times.mean()), float(times.std(ddof=1) / np.sqrt(trials)), trials)
        out[D] = PassageStats(D, est, censored)
    return out


@dataclass(frozen=True)
class SplitCheck:
    segments: int
    split_sum: Estimate
    whole: Estimate

    @property
    def lower(self) -> float:
        return self.whole.mean / self.segments

    @property
    def upper(self) -> float:
        return self.whole.mean

    def within(self, z: float = 1.959963984540054) -> bool:
        """Split sum inside [E[T_D]/n, E[T_D]] allowing both 95% intervals as slack."""
        slack = z * np.hypot(self.split_sum.stderr, self.whole.stderr)
        return self.lower - slack <= self.split_sum.mean <= self.upper + slack


def even_split_check(part: Estimate, whole: Estimate, segments: int) -> SplitCheck:
    """Compare ``segments`` independent sub-walks of length D/segments against one walk of length D."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    total = Estimate(segments * part.mean, float(np.sqrt(segments) * part.stderr), part.n)
    return SplitCheck(segments, total, whole)
