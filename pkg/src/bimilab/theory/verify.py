"""The verification suite behind the ``theory`` subcommand."""

from __future__ import annotations

import numpy as np

from .mdp import (
    bellman_backup,
    bias_bound_terms,
    chain_counterexample,
    check_pessimism,
    gap_decomposition,
    policy_evaluation,
    random_mdp,
    random_policy,
    reshape,
    value_iteration,
)
from .random_walk import even_split_check, exact_msd_1d, first_passage_experiment, random_walk_msd

BETAS = (0.0, 0.3, 0.7, 1.0)


def _claim(claim: str, passed: bool, tolerance, **values) -> dict:
    return {"claim": claim, "passed": bool(passed), "tolerance": tolerance, "values": values}


def mdp_claims(n_mdps: int = 20, seed: int = 0, inject_overestimation: bool = False) -> list[dict]:
    rng = np.random.default_rng(seed)
    residual = backup_gap = bound_excess = 0.0
    pessimism_violations = 0
    b2_max = pessimistic_excess = -np.inf
    for _ in range(n_mdps):
        S, A = int(rng.integers(2, 11)), int(rng.integers(1, 4))
        mdp = random_mdp(rng, S, A, gamma=float(rng.uniform(0.5, 0.95)))
        pi = random_policy(rng, S, A)
        h = rng.uniform(0.0, 2.0, S)
        v_star, _ = value_iteration(mdp)
        h_star = v_star.copy()
        if inject_overestimation:
            h_star[mdp.s0] += 1.0
        pessimism_violations += len(check_pessimism(mdp, h_star))
        h_pess = policy_evaluation(mdp, random_policy(rng, S, A))  # V^pi never overestimates
        for beta in BETAS:
            dec = gap_decomposition(mdp, h, beta, pi)
            residual = max(residual, dec.residual)
            rm = reshape(mdp, h, beta)
            backup_gap = max(backup_gap, float(np.abs(bellman_backup(rm, h) - bellman_backup(mdp, h)).max()))
            b1, b2 = bias_bound_terms(mdp, h, beta, pi)
            bound_excess = max(bound_excess, dec.bias - (1 - beta) * mdp.gamma * (b1 + b2))
            pb1, pb2 = bias_bound_terms(mdp, h_pess, beta, pi)
            b2_max = max(b2_max, pb2)
            pessimistic_excess = max(pessimistic_excess, gap_decomposition(mdp, h_pess, beta, pi).bias - pb1)
    mdp, h = chain_counterexample()
    flagged = check_pessimism(mdp, h)
    backed = float(bellman_backup(mdp, h)[0].max())
    v_star, _ = value_iteration(mdp)
    return [
        _claim("gap_decomposition_identity", residual <= 1e-8, 1e-8, max_residual=residual),
        _claim("reshaped_backup_equivalence", backup_gap <= 1e-12, 1e-12, max_abs_difference=backup_gap),
        _claim("optimal_values_are_pessimistic", pessimism_violations == 0, 0, violations=pessimism_violations),
        _claim("bias_upper_bound", bound_excess <= 1e-9, 1e-9, max_excess=bound_excess),
        _claim("pessimistic_bias_bounded_by_b1", b2_max <= 1e-10 and pessimistic_excess <= 1e-9, 1e-9,
               max_b2=b2_max, max_excess=pessimistic_excess),
        _claim("overestimate_breaks_pessimism", flagged == [0] and abs(backed - 1.0) <= 1e-12
               and h[1] <= v_star[1] + 1e-12, 1e-12, flagged=flagged, backup_at_s=backed,
               v_star=v_star.tolist(), h=h.tolist()),
    ]


def random_walk_claims(seed: int = 0, trials: int = 20000, passage_trials: int = 5000) -> list[dict]:
    out = []
    exact = exact_msd_1d(4)
    out.append(_claim("msd_d1_T4_exact", exact == 4.0, 0, value=exact))
    for d, T in ((3, 100), (10, 400)):
        est = random_walk_msd(d, T, trials, seed=seed + d)
        z = abs(est.mean - T) / est.stderr
        out.append(_claim(f"msd_d{d}_T{T}", z <= 3, "3 standard errors", mean=est.mean, stderr=est.stderr, z=z))
    stats = first_passage_experiment(2, [5, 10, 20], passage_trials, seed=seed)
    t5, t10, t20 = (stats[D].estimate for D in (5, 10, 20))
    ratio = t20.mean / t10.mean
    rel = float(np.hypot(t20.stderr / t20.mean, t10.stderr / t10.mean) * ratio * 1.959963984540054)
    out.append(_claim("first_passage_doubling_ratio", 3 - rel <= ratio <= 5.5 + rel, [3, 5.5],
                      ratio=ratio, ci_halfwidth=rel, censored=sum(s.censored for s in stats.values())))
    split = even_split_check(t5, t10, 2)
    out.append(_claim("first_passage_even_split", split.within(), "95% CI",
                      split_sum=split.split_sum.mean, lower=split.lower, upper=split.upper))
    return out


def verification_report(seed: int = 0, inject_overestimation: bool = False) -> dict:
    claims = mdp_claims(seed=seed, inject_overestimation=inject_overestimation) + random_walk_claims(seed=seed)
    return {"schema": 1, "seed": seed, "passed": all(c["passed"] for c in claims), "claims": claims}
