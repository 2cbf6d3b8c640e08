"""Rollout collection and policy evaluation over tabular environments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bimi import RewardPipeline, combine_rewards
from ..metrics import score_metric
from .model import ObsEncoder, PolicyModel, sample_action
from .ppo import RolloutBuffer, VisitCounter


@dataclass
class EpisodeLog:
    """Per-epoch sink for reward emissions, fulfillments and finished episodes."""

    rewards: list[dict] = field(default_factory=list)
    fulfillments: list[dict] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    frequency_rates: list[dict[int, float]] = field(default_factory=list)


class Worker:
    """One environment stream with its own reward pipeline and random stream."""

    def __init__(self, env, pipeline: RewardPipeline, encoder: ObsEncoder, rng: np.random.Generator):
        self.env = env
        self.pipeline = pipeline
        self.encoder = encoder
        self.rng = rng
        self.episode = -1
        self.state = None

    def start_episode(self, episode_id: int) -> None:
        self.state = self.env.reset()
        self.pipeline.reset()
        self.episode = episode_id
        self.totals = {"r_e": 0.0, "r_v": 0.0, "r_int": 0.0}

    def observe(self) -> np.ndarray:
        return self.encoder.encode(self.state, self.pipeline.pointer)


class EpisodeIds:
    def __init__(self) -> None:
        self.next = 0

    def __call__(self) -> int:
        self.next += 1
        return self.next - 1


def collect_rollouts(workers: list[Worker], policy: PolicyModel, nstep: int, beta: float, gamma: float,
                     counter: VisitCounter, new_episode: EpisodeIds, epoch: int = 0,
                     log: EpisodeLog | None = None) -> tuple[RolloutBuffer, EpisodeLog]:
    """Step every worker ``nstep`` times with a frozen policy.

    Workers keep their episodes across calls; ``beta`` and ``gamma`` set the
    weight of the auxiliary reward in the combined reward.
    """
    log = log if log is not None else EpisodeLog()
    snapshot = policy.snapshot()
    buf = RolloutBuffer(nstep, len(workers), policy.obs_dim)
    for w in workers:
        if w.state is None:
            w.start_episode(new_episode())
    for t in range(nstep):
        obs = np.stack([w.observe() for w in workers])
        probs, values = snapshot.act_info(obs)
        for i, w in enumerate(workers):
            a = sample_action(probs[i], w.rng)
            buf.obs[t, i] = obs[i]
            buf.actions[t, i] = a
            buf.logp[t, i] = np.log(probs[i, a])
            buf.values[t, i] = values[i]
            buf.pointers[t, i] = w.pipeline.pointer

            res = w.env.step(w.state, a)
            w.state = res.state
            step = w.pipeline.step(res.events, res.state.pos)
            r_int = counter.bonus((res.state.pos, res.state.inventory, res.state.flags))
            buf.r_e[t, i] = res.reward
            buf.r_v[t, i] = step.r_v
            buf.r_int[t, i] = r_int
            buf.rewards[t, i] = combine_rewards(res.reward, step.r_v, beta, gamma) + r_int
            buf.dones[t, i] = res.done
            buf.events[t][i] = res.events
            w.totals["r_e"] += res.reward
            w.totals["r_v"] += step.r_v
            w.totals["r_int"] += r_int

            cell = list(res.state.pos)
            if step.r_v:
                log.rewards.append({"epoch": epoch, "episode": w.episode, "t": res.state.t, "cell": cell,
                                    "source": "r_v", "value": step.r_v, "pointer": step.pointer})
            if res.reward:
                log.rewards.append({"epoch": epoch, "episode": w.episode, "t": res.state.t, "cell": cell,
                                    "source": "r_e", "value": res.reward, "pointer": step.pointer})
            for k in step.fulfilled:
                log.fulfillments.append({"epoch": epoch, "episode": w.episode, "k": k, "t": res.state.t})
            if res.done:
                log.episodes.append({"episode": w.episode, "length": res.state.t,
                                     "success": bool(res.reward > 0),
                                     "fulfilled": w.pipeline.tracker.completed, **w.totals})
                log.frequency_rates.append(w.pipeline.finish_episode())
                w.start_episode(new_episode())
    last_obs = np.stack([w.observe() for w in workers])
    buf.last_values = snapshot.act_info(last_obs)[1]
    return buf, log


@dataclass
class EvalResult:
    success_rates: list[float]
    score: float
    success: float
    mean_return: float


def evaluate(env, pipeline: RewardPipeline, encoder: ObsEncoder, policy: PolicyModel, episodes: int,
             greedy: bool = True, rng: np.random.Generator | None = None) -> EvalResult:
    """Per-instruction success rates from fresh episodes, judged by ground truth."""
    n = pipeline.walkthrough.n
    hits = np.zeros(n)
    successes = 0
    total = 0.0
    snapshot = policy.snapshot()
    for _ in range(episodes):
        state = env.reset()
        pipeline.reset()
        done = False
        while not done:
            probs, _ = snapshot.act_info(encoder.encode(state, pipeline.pointer)[None])
            a = int(np.argmax(probs[0])) if greedy else sample_action(probs[0], rng)
            res = env.step(state, a)
            pipeline.step(res.events, res.state.pos)
            state, done = res.state, res.done
            total += res.reward
        hits[: pipeline.tracker.completed] += 1
        successes += env.goal_reached(state)
    rates = (hits / episodes).tolist()
    return EvalResult(rates, score_metric(rates), successes / episodes, total / episodes)
