"""Clipped-surrogate policy optimisation with generalised advantage estimation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .model import PolicyModel


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    gae_lambda: float = 0.65
    clip: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    lr: float = 3e-4
    ppo_epochs: int = 3
    batches: int = 8
    nproc: int = 8
    nstep: int = 512
    epochs: int = 250
    seed: int = 0
    intrinsic_coef: float = 0.0
    normalize_adv: bool = True
    max_grad_norm: float = 0.5
    hidden: int = 64
    eval_every: int = 10
    eval_episodes: int = 10
    eval_greedy: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        for name in ("ppo_epochs", "batches", "nproc", "nstep", "epochs", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.intrinsic_coef < 0:
            raise ValueError("intrinsic_coef must be >= 0")

    @property
    def frames(self) -> int:
        return self.epochs * self.nstep * self.nproc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names - {"profile"}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        profile = d.pop("profile", None)
        return cls.profile(profile, **d) if profile else cls(**d)

    @classmethod
    def profile(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PROFILES:
            raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return replace(PROFILES[name], **overrides)


PROFILES = {
    "gridseq": TrainConfig(),
    "platform": TrainConfig(gamma=0.99, gae_lambda=0.95, clip=0.1, lr=1e-4, ent_coef=0.001,
                            normalize_adv=False),
}


def intrinsic_bonus(count: int, coef: float = 1.0) -> float:
    if count < 0:
        raise ValueError("visit count must be >= 0")
    return coef / math.sqrt(1 + count)


class VisitCounter:
    """Visit counts shared by every rollout worker of one run."""

    def __init__(self, coef: float):
        self.coef = coef
        self.counts: dict = {}

    def bonus(self, key) -> float:
        """Bonus from the count before this visit, then record the visit."""
        if self.coef == 0:
            return 0.0
        n = self.counts.get(key, 0)
        self.counts[key] = n + 1
        return intrinsic_bonus(n, self.coef)


@dataclass
class RolloutBuffer:
    """Fixed-size ``nstep x nproc`` storage, time-major."""

    nstep: int
    nproc: int
    obs_dim: int
    obs: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    logp: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    r_e: np.ndarray = field(init=False)
    r_v: np.ndarray = field(init=False)
    r_int: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    dones: np.ndarray = field(init=False)
    pointers: np.ndarray = field(init=False)
    events: list = field(init=False)
    last_values: np.ndarray = field(init=False)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self) -> None:
        shape = (self.nstep, self.nproc)
        self.obs = np.zeros(shape + (self.obs_dim,), dtype=np.float32)
        self.actions = np.zeros(shape, dtype=np.int64)
        for name in ("logp", "values", "r_e", "r_v", "r_int", "rewards"):
            setattr(self, name, np.zeros(shape))
        self.dones = np.zeros(shape, dtype=bool)
        self.pointers = np.zeros(shape, dtype=np.int64)
        self.events = [[() for _ in range(self.nproc)] for _ in range(self.nstep)]
        self.last_values = np.zeros(self.nproc)

    @property
    def size(self) -> int:
        return self.nstep * self.nproc


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values: np.ndarray,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for time-major arrays.

    ``dones[t]`` marks that the episode ended at step t, so step t does not
    bootstrap from step t+1.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    next_value = np.asarray(last_values, dtype=float)
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def ppo_update(policy: PolicyModel, optimizer: torch.optim.Optimizer, buffer: RolloutBuffer, cfg: TrainConfig,
               rng: np.random.Generator, dump_dir: str | Path | None = None) -> dict[str, float]:
    if buffer.advantages is None:
        raise TrainingError("advantages must be computed before the update")
    n = buffer.size
    obs = torch.as_tensor(buffer.obs.reshape(n, -1))
    actions = torch.as_tensor(buffer.actions.reshape(n))
    old_logp = torch.as_tensor(buffer.logp.reshape(n), dtype=torch.float32)
    adv = buffer.advantages.reshape(n)
    if cfg.normalize_adv:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    adv = torch.as_tensor(adv, dtype=torch.float32)
    returns = torch.as_tensor(buffer.returns.reshape(n), dtype=torch.float32)
    batch = max(n // cfg.batches, 1)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    updates = 0
    for _ in range(cfg.ppo_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = torch.as_tensor(order[start:start + batch])
            logits, value = policy(obs[idx])
            dist = torch.distributions.Categorical(logits=logits)
            logp = dist.log_prob(actions[idx])
            ratio = torch.exp(logp - old_logp[idx])
            a = adv[idx]
            surrogate = torch.min(ratio * a, torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * a)
            policy_loss = -surrogate.mean()
            value_loss = ((value - returns[idx]) ** 2).mean()
            entropy = dist.entropy().mean()
            loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
            if not torch.isfinite(loss):
                _dump(dump_dir, policy, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(),
                                         "entropy": entropy.item()})
                raise TrainingError(f"non-finite loss {loss.item()} (diagnostics in {dump_dir})")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            stats["policy_loss"] += policy_loss.item()
            stats["value_loss"] += value_loss.item()
            stats["entropy"] += entropy.item()
            stats["clip_frac"] += ((ratio - 1).abs() > cfg.clip).float().mean().item()
            updates += 1
    return {k: v / updates for k, v in stats.items()}


def _dump(dump_dir, policy: PolicyModel, losses: dict) -> None:
    if dump_dir is None:
        return
    path = Path(dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(policy.state_dict(), path / "failed_policy.pt")
    (path / "failed_losses.json").write_text(json.dumps(losses, indent=2) + "\n")
