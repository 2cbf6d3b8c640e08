"""Training loop and the on-disk run record.

A run directory holds::

    manifest.json       every config, the seed and a hash of both
    metrics.csv         one row per epoch
    rewards.jsonl       every nonzero r_v / r_e emission during training
    fulfillments.jsonl  ground-truth instruction completions
    episodes.jsonl      per-episode totals
    policy.pt           final policy weights
    checkpoint.pkl      full trainer state after the last finished epoch
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import pickle
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ..bimi import ConformalThreshold, FrequencyTable, RewardPipeline, RewardPipelineConfig
from ..env import make_env
from ..instruction import Walkthrough
from ..scorer import OracleConfig, OracleRewardModel
from .model import ObsEncoder, PolicyModel
from .ppo import TrainConfig, VisitCounter, compute_gae, ppo_update
from .rollout import EpisodeIds, EpisodeLog, Worker, collect_rollouts, evaluate

LOG_FILES = ("rewards.jsonl", "fulfillments.jsonl", "episodes.jsonl", "metrics.csv")


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def metric_columns(n: int) -> list[str]:
    return ["epoch", "frames", "episodes", "train_success", "mean_r_e", "mean_r_v", "mean_r_int",
            "policy_loss", "value_loss", "entropy", "clip_frac", "p_lk",
            "eval_score", "eval_success", "eval_return"] + [f"eval_s{k}" for k in range(1, n + 1)]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class RunRecord:
    path: Path
    manifest: dict
    metrics: list[dict]

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        with (path / "metrics.csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(path, manifest, rows)

    def _jsonl(self, name: str) -> list[dict]:
        p = self.path / name
        if not p.exists():
            return []
        return [json.loads(line) for line in p.read_text().splitlines() if line]

    def rewards(self) -> list[dict]:
        return self._jsonl("rewards.jsonl")

    def fulfillments(self) -> list[dict]:
        return self._jsonl("fulfillments.jsonl")

    def episodes(self) -> list[dict]:
        return self._jsonl("episodes.jsonl")

    def eval_series(self, column: str = "eval_score") -> list[tuple[int, float]]:
        return [(int(r["epoch"]), float(r[column])) for r in self.metrics if r[column] != ""]

    @property
    def final_score(self) -> float:
        return self.eval_series()[-1][1]

    @property
    def final_success(self) -> float:
        return self.eval_series("eval_success")[-1][1]


class Trainer:
    """Holds all mutable training state so that it can be checkpointed as one object."""

    def __init__(self, env_config, walkthrough: Walkthrough, pipeline_cfg: RewardPipelineConfig,
                 cfg: TrainConfig, threshold: ConformalThreshold | None = None,
                 oracle_cfg: OracleConfig | None = None):
        self.env_config = env_config
        self.walkthrough = walkthrough
        self.pipeline_cfg = pipeline_cfg
        self.cfg = cfg
        self.threshold = threshold
        self.oracle_cfg = oracle_cfg
        if pipeline_cfg.mode == "oracle" and oracle_cfg is None:
            raise ValueError("oracle mode needs an oracle config")

        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.nproc + 3)
        torch.manual_seed(int(seeds[0].generate_state(1)[0]))
        probe = make_env(env_config)
        self.encoder = ObsEncoder.for_env(probe, walkthrough.n)
        self.policy = PolicyModel(self.encoder.dim, hidden=cfg.hidden)
        self.optimizer = torch.optim.Adam(self.policy.parameters(), lr=cfg.lr, eps=1e-5)
        self.update_rng = np.random.default_rng(seeds[1])
        self.eval_rng = np.random.default_rng(seeds[2])
        self.frequencies = FrequencyTable.initial(walkthrough.n)
        self.workers = [
            Worker(make_env(env_config), self._pipeline(probe), self.encoder, np.random.default_rng(s))
            for s in seeds[3:]
        ]
        self.counter = VisitCounter(cfg.intrinsic_coef)
        self.episode_ids = EpisodeIds()
        self.epoch = 0
        self.log_sizes = {name: 0 for name in LOG_FILES}

    def _pipeline(self, env) -> RewardPipeline:
        oracle = None
        if self.oracle_cfg is not None and self.pipeline_cfg.mode == "oracle":
            oracle = OracleRewardModel(self.oracle_cfg, self.walkthrough, env.target_cells(), env.free_cells())
        return RewardPipeline(self.pipeline_cfg, self.walkthrough, self.threshold, self.frequencies, oracle)

    def manifest(self) -> dict:
        payload = {
            "env": self.env_config.to_dict(),
            "walkthrough": self.walkthrough.to_records(),
            "pipeline": asdict(self.pipeline_cfg),
            "train": self.cfg.to_dict(),
            "threshold": self.threshold.to_dict() if self.threshold else None,
            "oracle": asdict(self.oracle_cfg) if self.oracle_cfg else None,
            "seed": self.cfg.seed,
        }
        return {**payload, "config_hash": config_hash(payload)}

    def run_epoch(self) -> tuple[dict, EpisodeLog]:
        cfg = self.cfg
        epoch = self.epoch + 1
        buf, log = collect_rollouts(self.workers, self.policy, cfg.nstep, self.pipeline_cfg.beta,
                                    self.pipeline_cfg.gamma, self.counter, self.episode_ids, epoch)
        buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values,
                                                  cfg.gamma, cfg.gae_lambda)
        losses = ppo_update(self.policy, self.optimizer, buf, cfg, self.update_rng)

        if self.pipeline_cfg.mode == "bimi":
            self.frequencies = self.frequencies.updated(log.frequency_rates)
            for w in self.workers:
                w.pipeline.frequencies = self.frequencies

        row = {
            "epoch": epoch,
            "frames": epoch * buf.size,
            "episodes": len(log.episodes),
            "train_success": float(np.mean([e["success"] for e in log.episodes])) if log.episodes else 0.0,
            "mean_r_e": float(buf.r_e.sum() / cfg.nproc),
            "mean_r_v": float(buf.r_v.sum() / cfg.nproc),
            "mean_r_int": float(buf.r_int.sum() / cfg.nproc),
            **losses,
            "p_lk": ";".join(repr(self.frequencies[k]) for k in range(1, self.walkthrough.n + 1)),
            "eval_score": "", "eval_success": "", "eval_return": "",
        }
        for k in range(1, self.walkthrough.n + 1):
            row[f"eval_s{k}"] = ""
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            env = make_env(self.env_config)
            res = evaluate(env, self._pipeline(env), self.encoder, self.policy, cfg.eval_episodes,
                           cfg.eval_greedy, self.eval_rng)
            row.update(eval_score=res.score, eval_success=res.success, eval_return=res.mean_return)
            for k, s in enumerate(res.success_rates, start=1):
                row[f"eval_s{k}"] = s
        self.epoch = epoch
        return row, log


def _append_lines(path: Path, lines: list[str]) -> None:
    with path.open("a") as fh:
        fh.writelines(lines)


def _truncate_logs(out: Path, sizes: dict[str, int]) -> None:
    for name, size in sizes.items():
        p = out / name
        if p.exists():
            with p.open("r+b") as fh:
                fh.truncate(size)


def save_checkpoint(trainer: Trainer, out: Path) -> None:
    blob = io.BytesIO()
    pickle.dump({"trainer": trainer, "torch_rng": torch.get_rng_state()}, blob)
    data = blob.getvalue()
    tmp = out / "checkpoint.pkl.tmp"
    tmp.write_bytes(data)
    tmp.replace(out / "checkpoint.pkl")
    (out / "checkpoint.sha256").write_text(hashlib.sha256(data).hexdigest() + "\n")


def load_checkpoint(out: Path) -> Trainer | None:
    """Trainer from the last checkpoint, or None if absent or corrupt."""
    ck, digest = out / "checkpoint.pkl", out / "checkpoint.sha256"
    if not ck.exists() or not digest.exists():
        return None
    data = ck.read_bytes()
    if hashlib.sha256(data).hexdigest() != digest.read_text().strip():
        return None
    state = pickle.loads(data)
    torch.set_rng_state(state["torch_rng"])
    return state["trainer"]


def train(env_config, walkthrough: Walkthrough, pipeline_cfg: RewardPipelineConfig, cfg: TrainConfig,
          out_dir: str | Path, threshold: ConformalThreshold | None = None,
          oracle_cfg: OracleConfig | None = None, resume: bool = True, stop_after: int | None = None) -> RunRecord:
    """Train one seed and persist its run record under ``out_dir``.

    With ``resume`` an existing checkpoint whose manifest hash matches is
    continued from its last finished epoch. ``stop_after`` ends the call early
    after that many epochs in total (used to simulate interruptions).
    """
    torch.set_num_threads(1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(env_config, walkthrough, pipeline_cfg, cfg, threshold, oracle_cfg)
    manifest = trainer.manifest()

    restored = load_checkpoint(out) if resume else None
    if restored is not None and restored.manifest()["config_hash"] == manifest["config_hash"]:
        trainer = restored
        _truncate_logs(out, trainer.log_sizes)
    else:
        for name in LOG_FILES:
            (out / name).write_text("")
        for name in ("checkpoint.pkl", "checkpoint.sha256", "policy.pt"):
            (out / name).unlink(missing_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        columns = metric_columns(walkthrough.n)
        (out / "metrics.csv").write_text(",".join(columns) + "\n")
        trainer.log_sizes = {name: (out / name).stat().st_size for name in LOG_FILES}

    columns = metric_columns(walkthrough.n)
    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    while trainer.epoch < last:
        row, log = trainer.run_epoch()
        _append_lines(out / "rewards.jsonl", [json.dumps(r) + "\n" for r in log.rewards])
        _append_lines(out / "fulfillments.jsonl", [json.dumps(f) + "\n" for f in log.fulfillments])
        _append_lines(out / "episodes.jsonl", [json.dumps(e) + "\n" for e in log.episodes])
        _append_lines(out / "metrics.csv", [",".join(_fmt(row[c]) for c in columns) + "\n"])
        trainer.log_sizes = {name: (out / name).stat().st_size for name in LOG_FILES}
        save_checkpoint(trainer, out)

    if trainer.epoch >= cfg.epochs:
        torch.save(trainer.policy.state_dict(), out / "policy.pt")
    return RunRecord.load(out)
