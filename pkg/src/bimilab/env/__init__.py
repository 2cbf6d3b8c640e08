from __future__ import annotations

import json
from pathlib import Path

from .base import (
    N_ACTIONS,
    Action,
    EnvState,
    EpisodeDoneError,
    GenerationError,
    StepResult,
    goal_reached,
)
from .gridseq import GridSeqConfig, GridSeqEnv, PlacedObject, generate_gridseq
from .platform import PlatformRoomConfig, PlatformRoomEnv, platform_room_from_map
from .solver import rollout, solve

from ..instruction import Walkthrough

__all__ = [
    "Action",
    "EnvState",
    "EpisodeDoneError",
    "GenerationError",
    "GridSeqConfig",
    "GridSeqEnv",
    "N_ACTIONS",
    "PlacedObject",
    "PlatformRoomConfig",
    "PlatformRoomEnv",
    "StepResult",
    "config_from_dict",
    "default_walkthrough",
    "generate_gridseq",
    "goal_reached",
    "load_config",
    "make_env",
    "platform_room_from_map",
    "rollout",
    "solve",
]


def make_env(config):
    if isinstance(config, GridSeqConfig):
        return GridSeqEnv(config)
    if isinstance(config, PlatformRoomConfig):
        return PlatformRoomEnv(config)
    raise TypeError(f"unknown environment config {type(config).__name__}")


def config_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gridseq":
        return GridSeqConfig.from_dict(d)
    if kind == "platform":
        return PlatformRoomConfig.from_dict(d)
    raise ValueError(f"unknown environment kind {kind!r}")


def load_config(path: str | Path):
    return config_from_dict(json.loads(Path(path).read_text()))


def default_walkthrough(config) -> Walkthrough:
    """One instruction per goal event; the instruction text is the event phrase."""
    return Walkthrough.from_records({"text": ev, "events": [ev]} for ev in config.goal_events)
