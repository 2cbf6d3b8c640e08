"""Similarity scorers, simulated oracle reward models and the manipulated-pair probe.

The lexical scorer embeds trajectories and instructions as bags of word
counts and compares them with cosine similarity. Because a bag forgets order
and shares words across different outcomes, it reproduces the two ways
embedding rewards go wrong (order blindness and lexical entanglement) as exact
identities rather than tendencies.

A trajectory is a sequence of steps; each step is either a single event
string, a sequence of event strings, or empty.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .env import default_walkthrough, rollout, solve
from .instruction import FulfillmentTracker, Instruction, PointerState, Walkthrough, fulfills, tokenize

FeatureVector = Counter

class EmptyVectorError(ValueError):
    pass


def _step_events(step) -> tuple[str, ...]:
    if not step:
        return ()
    if isinstance(step, str):
        return (step,)
    return tuple(step)


def embed_trajectory(events: Sequence, window: int) -> FeatureVector:
    if window < 1:
        raise ValueError("window must be >= 1")
    bag: FeatureVector = Counter()
    for step in events[-window:]:
        for ev in _step_events(step):
            bag.update(tokenize(ev))
    return bag


def embed_text(text: str) -> FeatureVector:
    return Counter(tokenize(text))


def embed_instruction(instr: Instruction | str) -> FeatureVector:
    if isinstance(instr, str):
        return embed_text(instr)
    return Counter(instr.tokens)


def cosine(u: FeatureVector, v: FeatureVector) -> float:
    # one square root of the product keeps proportional integer bags at exactly 1.0
    nu2 = sum(x * x for x in u.values())
    nv2 = sum(x * x for x in v.values())
    if nu2 == 0 or nv2 == 0:
        raise EmptyVectorError("cosine similarity of an empty feature vector")
    if len(u) > len(v):
        u, v = v, u
    dot = sum(x * v[k] for k, x in u.items() if k in v)
    return min(dot / math.sqrt(nu2 * nv2), 1.0)


def score_markovian(step_events, instr: Instruction | str) -> float:
    """Score only what happened at the current step."""
    bag = embed_trajectory([step_events], 1)
    if not bag:
        return 0.0
    return cosine(bag, embed_instruction(instr))


def score_window(events: Sequence, window: int, instr: Instruction | str) -> float:
    bag = embed_trajectory(events, window)
    if not bag:
        return 0.0
    return cosine(bag, embed_instruction(instr))


def score_pair(trajectory: Sequence, text: str) -> float:
    """Whole-trajectory score used by the probe harness."""
    return score_window(trajectory, max(len(trajectory), 1), text)


# ---------------------------------------------------------------------------
# Simulated ("oracle") reward models with controlled noise


ORACLE_KINDS = ("perfect", "false_positive", "false_negative", "temporal_insensitive")


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "perfect"
    fp_radius: float = 2.0
    fp_cell_fraction: float = 0.1
    fp_bonus: float = 0.1
    fn_drop_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        for name in ("fp_cell_fraction", "fn_drop_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.fp_radius < 0:
            raise ValueError("fp_radius must be >= 0")


class OracleRewardModel:
    """Reward model with access to ground truth, optionally corrupted.

    ``perfect`` pays 1 at the step the active instruction is fulfilled.
    ``false_negative`` is perfect with a seeded subset of instructions never
    paid. ``false_positive`` is perfect plus a one-off bonus on cells within
    ``fp_radius`` of the active target and on a seeded fraction of all free
    cells. ``temporal_insensitive`` pays the first fulfillment of any
    instruction on its own, whatever the pointer says.
    """

    def __init__(self, cfg: OracleConfig, walkthrough: Walkthrough, target_cells: dict[int, tuple[int, int]],
                 free_cells: Sequence[tuple[int, int]]):
        self.cfg = cfg
        self.walkthrough = walkthrough
        self.target_cells = dict(target_cells)
        rng = np.random.default_rng(cfg.seed)
        n = walkthrough.n
        drop = rng.random(n) < cfg.fn_drop_fraction if cfg.kind == "false_negative" else np.zeros(n, bool)
        self.dropped = frozenset(int(k) + 1 for k in np.flatnonzero(drop))
        cells = [tuple(c) for c in free_cells]
        n_bonus = int(round(cfg.fp_cell_fraction * len(cells))) if cfg.kind == "false_positive" else 0
        picks = rng.choice(len(cells), size=n_bonus, replace=False) if n_bonus else []
        self.bonus_cells = frozenset(cells[i] for i in sorted(picks))
        self.reset()

    def reset(self) -> None:
        self.paid_cells: set[tuple[int, int]] = set()
        self.paid_instructions: set[int] = set()
        self._own = [0] * self.walkthrough.n

    def _near_active(self, cell, ptr: PointerState) -> bool:
        target = self.target_cells.get(ptr.m)
        if target is None:
            return False
        return math.dist(cell, target) <= self.cfg.fp_radius

    def score(self, cell, step_events: Sequence[str], ptr: PointerState, completed: Sequence[int]) -> float:
        """Reward for one step.

        ``completed`` lists instructions whose in-order ground truth was
        fulfilled at this step; ``ptr`` is the pointer *before* the step.
        """
        kind = self.cfg.kind
        if kind == "temporal_insensitive":
            reward = 0.0
            for k, ins in enumerate(self.walkthrough, start=1):
                if k in self.paid_instructions:
                    continue
                # incremental subsequence match of this instruction alone
                for ev in step_events:
                    if self._own[k - 1] < len(ins.events) and ev == ins.events[self._own[k - 1]]:
                        self._own[k - 1] += 1
                if self._own[k - 1] == len(ins.events):
                    self.paid_instructions.add(k)
                    reward = 1.0
            return reward
        if ptr.m in completed:
            if kind == "false_negative" and ptr.m in self.dropped:
                return 0.0
            return 1.0
        if kind == "false_positive" and not ptr.exhausted:
            cell = tuple(cell)
            if cell not in self.paid_cells and (cell in self.bonus_cells or self._near_active(cell, ptr)):
                self.paid_cells.add(cell)
                return self.cfg.fp_bonus
        return 0.0


def oracle_score(cfg: OracleConfig, state, ptr: PointerState, walkthrough: Walkthrough,
                 step_events: Sequence[str] = (), target_cells: dict[int, tuple[int, int]] | None = None,
                 free_cells: Sequence[tuple[int, int]] = ()) -> float:
    """Reward for a single step taken at the start of a fresh episode.

    Instruction completion is judged from ``step_events`` alone, so this is
    only a complete account for single-event instructions. Training uses
    :class:`OracleRewardModel`, which keeps per-episode history.
    """
    model = OracleRewardModel(cfg, walkthrough, target_cells or {}, free_cells)
    if cfg.kind == "temporal_insensitive":
        return model.score(state.pos, step_events, ptr, ())
    active = () if ptr.exhausted else (ptr.m,)
    done = [k for k in active if fulfills(step_events, walkthrough[k])]
    return model.score(state.pos, step_events, ptr, done)


# ---------------------------------------------------------------------------
# Manipulated trajectory-instruction pairs

MANIPULATIONS = ("reverse", "negate", "rephrase", "swap_concat", "truncate_traj", "truncate_instr")

SYNONYMS = {
    "touch": "tap",
    "red": "crimson",
    "green": "emerald",
    "blue": "azure",
    "purple": "violet",
    "yellow": "golden",
    "grey": "gray",
    "ball": "sphere",
    "box": "crate",
    "key": "latch",
    "pick": "grab",
    "up": "upward",
    "open": "unlock",
    "door": "gate",
    "climb": "scale",
    "down": "downward",
    "ladder": "steps",
    "ride": "travel",
    "conveyor": "belt",
    "rope": "cord",
}

Pair = tuple[tuple, str]


def manipulate(pair: Pair, kind: str, aux: Pair | None = None) -> Pair:
    traj, text = tuple(pair[0]), pair[1]
    if kind == "reverse":
        return traj[::-1], text
    if kind == "negate":
        return traj, "do not " + text
    if kind == "rephrase":
        return traj, " ".join(SYNONYMS.get(tok, tok) for tok in tokenize(text))
    if kind not in MANIPULATIONS:
        raise ValueError(f"unknown manipulation {kind!r}")
    if aux is None:
        raise ValueError(f"manipulation {kind!r} needs an auxiliary pair")
    traj2, text2 = tuple(aux[0]), aux[1]
    if kind == "swap_concat":
        return traj2 + traj, text + " " + text2
    if kind == "truncate_traj":
        return traj, text + " " + text2
    return traj + traj2, text  # truncate_instr


def concat(pair: Pair, aux: Pair) -> Pair:
    return tuple(pair[0]) + tuple(aux[0]), pair[1] + " " + aux[1]


@dataclass
class ClassStats:
    cls: str
    kind: str
    scores: list[float]

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    def row(self) -> dict:
        return {"class": self.cls, "kind": self.kind, "n": self.n, "mean": self.mean,
                "min": float(np.min(self.scores)), "max": float(np.max(self.scores))}


def noise_probe(scorer: Callable[[Sequence, str], float], pairs: Sequence[Pair], seed: int = 0,
                bins: int = 10) -> dict[str, ClassStats]:
    """Score matched, mismatched and manipulated versions of ``pairs``.

    Mismatched pairs join trajectory i with the instruction of pair j != i;
    concatenation-based manipulations use the same partner j as auxiliary.
    """
    if not pairs:
        raise ValueError("noise_probe needs at least one matched pair")
    rng = np.random.default_rng(seed)
    n = len(pairs)
    if n > 1:
        partner = (np.arange(n) + rng.integers(1, n, size=n)) % n
    else:
        partner = np.zeros(1, dtype=int)
    out: dict[str, ClassStats] = {}

    def add(cls: str, kind: str, value: float) -> None:
        out.setdefault(cls, ClassStats(cls, kind, [])).scores.append(value)

    for i, pair in enumerate(pairs):
        aux = pairs[int(partner[i])]
        add("matched", "none", scorer(*pair))
        if n > 1:
            add("mismatched", "none", scorer(pair[0], aux[1]))
        add("matched_concat", "none", scorer(*concat(pair, aux)))
        for kind in MANIPULATIONS:
            add(f"manipulated:{kind}", kind, scorer(*manipulate(pair, kind, aux)))
    for stats in out.values():
        stats.histogram = np.histogram(stats.scores, bins=bins, range=(0.0, 1.0))[0].tolist()
    return out


def write_probe_report(report: dict[str, ClassStats], out_dir: str | Path, bins: int = 10) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "noise_probe.csv"
    with table.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["class", "kind", "n", "mean", "min", "max"])
        writer.writeheader()
        for stats in report.values():
            writer.writerow(stats.row())
    hist = out_dir / "noise_probe_hist.json"
    edges = np.linspace(0.0, 1.0, bins + 1).tolist()
    hist.write_text(json.dumps(
        {"bin_edges": edges, "classes": {k: v.histogram for k, v in report.items()}}, indent=2) + "\n")
    return table, hist


def matched_pairs_from_solver(envs: Iterable, window: int | None = None) -> list[tuple[int, int, Pair]]:
    """Expert trajectory segments paired with the instruction they fulfil.

    Returns ``(trajectory id, instruction index, (segment, text))`` triples.
    Without ``window`` a segment spans from the previous fulfillment
    (exclusive) to this one (inclusive); with it, the segment is the last
    ``window`` steps up to the fulfillment, i.e. exactly what a windowed scorer
    sees at that moment.
    """
    pairs = []
    for traj_id, env in enumerate(envs):
        actions = solve(env)
        if actions is None:
            continue
        wt = default_walkthrough(env.config)
        tracker = FulfillmentTracker(wt)
        steps: list[tuple[str, ...]] = []
        last = 0
        for t, res in enumerate(rollout(env, actions), start=1):
            steps.append(res.events)
            for k in tracker.update(res.events, t):
                lo = last if window is None else max(0, t - window)
                pairs.append((traj_id, k, (tuple(steps[lo:t]), wt[k].text)))
                last = t
    return pairs
