from __future__ import annotations

from .mdp import (
    GapDecomposition,
    Heuristic,
    ReshapedMDP,
    TabularMDP,
    bellman_backup,
    bias_bound_terms,
    bias_upper_bound,
    chain_counterexample,
    check_pessimism,
    construct_heuristic,
    discounted_state_distribution,
    gap_decomposition,
    greedy_policy,
    policy_evaluation,
    random_mdp,
    random_policy,
    reshape,
    value_iteration,
)
from .random_walk import (
    Estimate,
    PassageStats,
    SplitCheck,
    even_split_check,
    exact_msd_1d,
    first_passage_experiment,
    first_passage_times,
    random_walk_msd,
    unit_steps,
)
