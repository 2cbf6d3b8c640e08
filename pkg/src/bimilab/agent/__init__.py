from __future__ import annotations

from .model import ObsEncoder, PolicyModel, sample_action
from .ppo import (
    PROFILES,
    RolloutBuffer,
    TrainConfig,
    TrainingError,
    VisitCounter,
    compute_gae,
    intrinsic_bonus,
    ppo_update,
)
from .rollout import EpisodeIds, EpisodeLog, EvalResult, Worker, collect_rollouts, evaluate
from .train import RunRecord, Trainer, train

__all__ = [
    "EpisodeIds",
    "EpisodeLog",
    "EvalResult",
    "ObsEncoder",
    "PROFILES",
    "PolicyModel",
    "RolloutBuffer",
    "RunRecord",
    "TrainConfig",
    "Trainer",
    "TrainingError",
    "VisitCounter",
    "Worker",
    "collect_rollouts",
    "compute_gae",
    "evaluate",
    "intrinsic_bonus",
    "ppo_update",
    "sample_action",
    "train",
]
