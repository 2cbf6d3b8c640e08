"""Command-line entry point: calibrate, noise-probe, train, eval, theory.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .agent import RunRecord
from .bimi import ConformalThreshold, save_calibration
from .experiments import (
    COMPARISON_COLUMNS,
    ExperimentManifest,
    ManifestError,
    calibration_envs,
    comparison_table,
    summarize_run,
    threshold_for,
    train_variant,
)
from .scorer import matched_pairs_from_solver, noise_probe, score_pair, write_probe_report
from .theory.verify import verification_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VERIFY = 4

log = logging.getLogger("bimilab")


class VerificationFailed(Exception):
    pass


def _out_dir(args, manifest: ExperimentManifest | None) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get("BIMILAB_OUT"):
        return Path(os.environ["BIMILAB_OUT"])
    if manifest is None:
        return Path(".")
    return manifest.output_dir


def _manifest(args) -> ExperimentManifest:
    if not args.manifest:
        raise ManifestError("--manifest is required for this command")
    m = ExperimentManifest.load(args.manifest)
    if args.seed is not None:
        m = replace(m, seeds=(args.seed,))
    return m


def cmd_calibrate(args) -> int:
    m = _manifest(args)
    out = _out_dir(args, m)
    out.mkdir(parents=True, exist_ok=True)
    spec = m.calibration
    if args.alpha is not None:
        spec = replace(spec, alpha=args.alpha)
    thr, records = threshold_for(spec, m.env)
    save_calibration(records, out / "calibration.csv")
    payload = {**thr.to_dict(), "window": spec.window, "source": spec.source, "manifest_hash": m.config_hash}
    (out / "threshold.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"q_hat={thr.q_hat!r} alpha={thr.alpha} n={thr.n} -> {out / 'threshold.json'}")
    return EXIT_OK


def load_threshold(out: Path) -> ConformalThreshold:
    path = out / "threshold.json"
    if not path.exists():
        raise ManifestError(f"no threshold at {path}; run `calibrate` first")
    return ConformalThreshold.from_dict(json.loads(path.read_text()))


def cmd_noise_probe(args) -> int:
    m = _manifest(args)
    out = _out_dir(args, m)
    envs = calibration_envs(m.calibration, m.env)
    pairs = [pair for _, _, pair in matched_pairs_from_solver(envs)]
    if not pairs:
        raise ManifestError("no matched pairs could be generated for the probe")
    report = noise_probe(score_pair, pairs, seed=m.seeds[0])
    table, hist = write_probe_report(report, out)
    for name, stats in report.items():
        print(f"{name:28s} n={stats.n:4d} mean={stats.mean:.4f}")
    print(f"wrote {table} and {hist}")
    return EXIT_OK


def cmd_train(args) -> int:
    m = _manifest(args)
    out = _out_dir(args, m)
    out.mkdir(parents=True, exist_ok=True)
    needs_threshold = any(v.pipeline.uses_threshold for v in m.variants)
    threshold = load_threshold(out) if needs_threshold else None
    (out / "experiment.json").write_text(json.dumps({**m.to_dict(), "config_hash": m.config_hash}, indent=2) + "\n")
    names = set(args.variant or [])
    for variant in m.variants:
        if names and variant.name not in names:
            continue
        for seed in m.seeds:
            rec = train_variant(m, variant, seed, threshold, root=out, resume=not args.fresh)
            print(f"{variant.name} seed={seed} final_score={rec.final_score:.4f} -> {rec.path}")
    return EXIT_OK


def _find_runs(paths: list[Path]) -> list[Path]:
    runs = []
    for p in paths:
        if (p / "manifest.json").exists() and (p / "metrics.csv").exists():
            runs.append(p)
        elif p.is_dir():
            runs.extend(sorted(q.parent for q in p.rglob("metrics.csv") if (q.parent / "manifest.json").exists()))
        else:
            raise FileNotFoundError(f"no run directory at {p}")
    return runs


def cmd_eval(args) -> int:
    m = ExperimentManifest.load(args.manifest) if args.manifest else None
    roots = [Path(r) for r in args.runs] or [_out_dir(args, m)]
    runs = _find_runs(roots)
    if not runs:
        raise FileNotFoundError(f"no runs found under {', '.join(map(str, roots))}")
    summaries = [summarize_run(RunRecord.load(r)) for r in runs]
    baseline = args.baseline or (m.baseline if m else None)
    rows = comparison_table(summaries, baseline)
    dest = Path(args.out) if args.out else roots[0]
    dest.mkdir(parents=True, exist_ok=True)
    with (dest / "comparison.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    with (dest / "runs.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(asdict(summaries[0])))
        writer.writeheader()
        writer.writerows(asdict(s) for s in summaries)
    for r in rows:
        pct = r["score_vs_baseline_pct"]
        pct = f"{pct:+.1f}%" if pct != "" else "-"
        print(f"{r['variant']:24s} runs={r['runs']:2d} score={r['median_score']:.4f} auc={r['median_auc']:.4f} "
              f"fp={r['median_fp_ratio']:.3f} success={r['median_success']:.2f} vs_baseline={pct}")
    return EXIT_OK


def cmd_theory(args) -> int:
    seed = args.seed if args.seed is not None else 0
    report = verification_report(seed=seed, inject_overestimation=args.inject_overestimation)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory_report.json").write_text(json.dumps(report, indent=2) + "\n")
    for c in report["claims"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['claim']}")
    if not report["passed"]:
        raise VerificationFailed("one or more claims failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bimilab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", help="experiment manifest (JSON)")
        p.add_argument("--out", help="output directory (overrides the manifest and $BIMILAB_OUT)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the manifest's list")
        return p

    p = common(sub.add_parser("calibrate", help="compute the conformal threshold from solver trajectories"))
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("noise-probe", help="score matched, mismatched and manipulated pairs"))
    p.set_defaults(func=cmd_noise_probe)

    p = common(sub.add_parser("train", help="train every variant and seed of a manifest"))
    p.add_argument("--variant", action="append", help="only train this variant (repeatable)")
    p.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="compare finished runs"))
    p.add_argument("runs", nargs="*", help="run directories or roots containing them")
    p.add_argument("--baseline", help="variant used for the percentage column")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("theory", help="verify the tabular and random-walk claims"))
    p.add_argument("--inject-overestimation", action="store_true",
                   help="overestimate h at the start state to show the pessimism check failing")
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VerificationFailed as exc:
        log.error("%s", exc)
        return EXIT_VERIFY
    except (ManifestError, ValueError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
