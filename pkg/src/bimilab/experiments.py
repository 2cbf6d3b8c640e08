"""Experiment manifests, variant matrices and run summaries shared by the CLI and tests."""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .agent import RunRecord, TrainConfig, train
from .bimi import (
    CalibrationRecord,
    ConformalThreshold,
    RewardPipelineConfig,
    calibrate_threshold,
    calibration_set,
)
from .env import (
    EnvState,
    GenerationError,
    config_from_dict,
    default_walkthrough,
    generate_gridseq,
    load_config,
    make_env,
    rollout,
    solve,
)
from .instruction import FulfillmentTracker, Walkthrough
from .metrics import auc_total_reward, fp_ratio, relative_change
from .scorer import OracleConfig, score_window


class ManifestError(ValueError):
    """The manifest is malformed or references missing files."""


@dataclass(frozen=True)
class Variant:
    name: str
    pipeline: RewardPipelineConfig
    intrinsic_coef: float = 0.0
    oracle: OracleConfig | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Variant":
        try:
            oracle = OracleConfig(**d["oracle"]) if d.get("oracle") else None
            return cls(d["name"], RewardPipelineConfig(**d.get("pipeline", {})),
                       float(d.get("intrinsic_coef", 0.0)), oracle)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad variant {d!r}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"name": self.name, "pipeline": asdict(self.pipeline), "intrinsic_coef": self.intrinsic_coef,
                "oracle": asdict(self.oracle) if self.oracle else None}


@dataclass(frozen=True)
class CalibrationSpec:
    """Where calibration trajectories come from.

    ``source="generated"`` solves held-out GridSeq layouts drawn from
    ``generator`` with ``task_seeds``; ``source="env"`` solves the experiment
    environment itself from every reachable safe start cell.
    """

    alpha: float = 0.1
    window: int = 5
    source: str = "generated"
    task_seeds: tuple[int, ...] = tuple(range(1000, 1040))
    generator: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSpec":
        d = dict(d)
        if "task_seeds" in d:
            d["task_seeds"] = tuple(d["task_seeds"])
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise ManifestError(f"bad calibration block: {exc}") from exc
        if spec.source not in ("generated", "env"):
            raise ManifestError(f"unknown calibration source {spec.source!r}")
        return spec


@dataclass(frozen=True)
class ExperimentManifest:
    name: str
    env: object
    walkthrough: Walkthrough
    variants: tuple[Variant, ...]
    train: TrainConfig
    seeds: tuple[int, ...]
    output_dir: Path
    calibration: CalibrationSpec = CalibrationSpec()
    baseline: str | None = None
    tool_version: str = __version__

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "ExperimentManifest":
        def resolve(ref):
            p = Path(ref)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ManifestError(f"referenced file does not exist: {p}")
            return p

        try:
            env_ref = raw["env"]
            env = load_config(resolve(env_ref)) if isinstance(env_ref, str) else config_from_dict(env_ref)
            wt_ref = raw.get("walkthrough")
            if wt_ref is None:
                walkthrough = default_walkthrough(env)
            elif isinstance(wt_ref, str):
                walkthrough = Walkthrough.load(resolve(wt_ref))
            else:
                walkthrough = Walkthrough.from_records(wt_ref)
            variants = tuple(Variant.from_dict(v) for v in raw["variants"])
            train_cfg = TrainConfig.from_dict(raw.get("train", {}))
            seeds = tuple(int(s) for s in raw["seeds"])
            calibration = CalibrationSpec.from_dict(raw.get("calibration", {}))
        except KeyError as exc:
            raise ManifestError(f"manifest is missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(str(exc)) from exc
        if not seeds:
            raise ManifestError("seed list must be non-empty")
        if not variants:
            raise ManifestError("at least one variant is required")
        names = [v.name for v in variants]
        if len(set(names)) != len(names):
            raise ManifestError("variant names must be unique")
        baseline = raw.get("baseline")
        if baseline is not None and baseline not in names:
            raise ManifestError(f"baseline {baseline!r} is not a variant")
        out = Path(raw.get("output_dir", f"runs/{raw.get('name', 'experiment')}"))
        return cls(raw.get("name", "experiment"), env, walkthrough, variants, train_cfg, seeds,
                   out if out.is_absolute() else base / out, calibration, baseline)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "env": self.env.to_dict(),
            "walkthrough": self.walkthrough.to_records(),
            "variants": [v.to_dict() for v in self.variants],
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": str(self.output_dir),
            "calibration": {**asdict(self.calibration), "task_seeds": list(self.calibration.task_seeds)},
            "baseline": self.baseline,
            "tool_version": self.tool_version,
        }

    @property
    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "tool_version")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def calibration_envs(spec: CalibrationSpec, env_config) -> list:
    if spec.source == "env":
        return [make_env(env_config)]
    gen = {"rows": 1, "cols": 3, "room_size": 4, "num_targets": 3, "num_distractors": 2, "max_steps": 150,
           **spec.generator}
    envs = []
    for s in spec.task_seeds:
        try:
            envs.append(make_env(generate_gridseq(s, **gen)))
        except GenerationError:
            continue
    return envs


def _starts(env) -> list:
    """Free cells that are neither hazards nor feature cells (which would skip an entry event)."""
    skip = set(getattr(env, "cliffs", ())) | set(getattr(env, "kind_of", {}))
    cells = [c for c in env.free_cells() if c not in skip]
    flags = env.reset().flags
    return [EnvState(pos=c, inventory=(), flags=flags) for c in cells]


def run_calibration(spec: CalibrationSpec, env_config) -> list[CalibrationRecord]:
    envs = calibration_envs(spec, env_config)
    if spec.source == "generated":
        return calibration_set(envs, spec.window)
    env = envs[0]
    wt = default_walkthrough(env.config)
    records = []
    for traj_id, start in enumerate(_starts(env)):
        actions = solve(env, start=start)
        if actions is None:
            continue
        tracker = FulfillmentTracker(wt)
        steps = []
        for t, res in enumerate(rollout(env, actions, start=start), start=1):
            steps.append(res.events)
            for k in tracker.update(res.events, t):
                records.append(CalibrationRecord(traj_id, k, score_window(steps, spec.window, wt[k].text)))
    return records


def threshold_for(spec: CalibrationSpec, env_config) -> tuple[ConformalThreshold, list[CalibrationRecord]]:
    records = run_calibration(spec, env_config)
    if not records:
        raise ValueError("calibration produced no matched pairs")
    return calibrate_threshold([r.score for r in records], spec.alpha), records


def run_dir(root: Path, variant: str, seed: int) -> Path:
    return Path(root) / variant / f"seed_{seed}"


def train_variant(manifest: ExperimentManifest, variant: Variant, seed: int,
                  threshold: ConformalThreshold | None, root: Path | None = None, resume: bool = True) -> RunRecord:
    cfg = replace(manifest.train, seed=seed, intrinsic_coef=variant.intrinsic_coef)
    oracle = replace(variant.oracle, seed=seed) if variant.oracle else None
    pipeline = replace(variant.pipeline, gamma=cfg.gamma)
    return train(manifest.env, manifest.walkthrough, pipeline, cfg,
                 run_dir(root or manifest.output_dir, variant.name, seed),
                 threshold if pipeline.uses_threshold else None, oracle, resume=resume)


@dataclass
class RunSummary:
    variant: str
    seed: int
    score: float
    success: float
    auc: float
    fp_ratio: float


def summarize_run(rec: RunRecord, variant: str | None = None) -> RunSummary:
    series = rec.eval_series("eval_return")
    auc = auc_total_reward(series) if len(series) >= 2 else float(series[-1][1])
    name = variant or rec.path.parent.name
    return RunSummary(name, int(rec.manifest["seed"]), rec.final_score, rec.final_success, auc,
                      fp_ratio(rec.rewards(), rec.fulfillments()))


COMPARISON_COLUMNS = ["variant", "runs", "median_score", "median_auc", "median_fp_ratio", "median_success",
                      "score_vs_baseline_pct"]


def comparison_table(summaries: list[RunSummary], baseline: str | None = None) -> list[dict]:
    groups: dict[str, list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault(s.variant, []).append(s)
    rows = []
    for name, runs in groups.items():
        rows.append({
            "variant": name,
            "runs": len(runs),
            "median_score": statistics.median(r.score for r in runs),
            "median_auc": statistics.median(r.auc for r in runs),
            "median_fp_ratio": statistics.median(r.fp_ratio for r in runs),
            "median_success": statistics.median(r.success for r in runs),
        })
    base = next((r for r in rows if r["variant"] == baseline), None)
    for r in rows:
        r["score_vs_baseline_pct"] = (100 * relative_change(r["median_score"], base["median_score"])
                                      if base else "")
    return rows
