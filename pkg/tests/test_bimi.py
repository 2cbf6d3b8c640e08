from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bimilab.bimi import (
    ConformalThreshold,
    FrequencyTable,
    RewardPipeline,
    RewardPipelineConfig,
    binary_reward,
    bimi_reward,
    calibrate_threshold,
    calibration_set,
    combine_rewards,
    continuous_reward,
    estimate_frequency,
    load_calibration,
    save_calibration,
)
from bimilab.instruction import Walkthrough
from bimilab.scorer import OracleConfig, OracleRewardModel

THR = ConformalThreshold(0.9, 0.1, 10)


def sort_and_index(scores, alpha):
    n = len(scores)
    q_level = math.ceil((n - 1) * (1 - alpha)) / n
    return sorted(scores)[math.floor(q_level * (n - 1))]


def test_calibrate_examples():
    scores = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95]
    thr = calibrate_threshold(scores[::-1], 0.1)
    assert thr.q_hat == 0.90 and thr.n == 10 and thr.alpha == 0.1
    assert calibrate_threshold([0.7], 0.1).q_hat == 0.7
    assert calibrate_threshold([0.5] * 7, 0.2).q_hat == 0.5
    with pytest.raises(ValueError):
        calibrate_threshold([], 0.1)
    with pytest.raises(ValueError):
        calibrate_threshold([0.5], 1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.sampled_from([0.05, 0.1, 0.2, 0.5]))
def test_calibrate_matches_sort_and_index(scores, alpha):
    thr = calibrate_threshold(scores, alpha)
    assert thr.q_hat == sort_and_index(scores, alpha)
    assert thr.q_hat in scores


@given(st.lists(st.floats(0, 1), min_size=2, max_size=100))
def test_threshold_is_monotone_in_alpha(scores):
    assert calibrate_threshold(scores, 0.5).q_hat <= calibrate_threshold(scores, 0.1).q_hat


def test_conformal_bound_for_below_threshold_fraction():
    # the lower-interpolation quantile bounds the fraction of fresh scores at or below it
    rng = np.random.default_rng(0)
    for alpha in (0.05, 0.1, 0.2):
        thr = calibrate_threshold(rng.beta(5, 2, 1000), alpha)
        held_out = rng.beta(5, 2, 10_000)
        assert np.mean(held_out <= thr.q_hat) >= 1 - alpha - 0.03


def test_binary_reward_examples():
    assert binary_reward(0.95, THR, False) == 1
    assert binary_reward(0.95, THR, True) == 0
    assert binary_reward(0.85, THR, False) == 0
    assert binary_reward(0.90, THR, False) == 1


def test_estimate_frequency_examples():
    hits = lambda h, T: ([1.0] * h + [0.0] * (T - h), T)  # noqa: E731
    assert estimate_frequency([hits(3, 10)], THR) == 0.3
    assert estimate_frequency([hits(3, 10), hits(1, 20)], THR) == pytest.approx(0.175, abs=1e-15)
    assert estimate_frequency([hits(0, 10)], THR) == 0.0
    assert estimate_frequency([], THR, initial=0.0) == 0.0
    with pytest.raises(ValueError):
        estimate_frequency([([], 0)], THR)


def test_bimi_reward_examples():
    assert bimi_reward(0.95, THR, 0.3, False) == pytest.approx(0.7)
    assert bimi_reward(0.95, THR, 1.0, False) == 0.0
    assert bimi_reward(0.5, THR, 0.3, False) == 0.0
    with pytest.raises(ValueError):
        bimi_reward(0.95, THR, 1.2, False)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.booleans())
def test_bimi_reward_bounded_and_monotone(score, p1, p2, fired):
    lo, hi = sorted((p1, p2))
    a, b = bimi_reward(score, THR, lo, fired), bimi_reward(score, THR, hi, fired)
    assert 0.0 <= b <= a <= 1.0


def test_continuous_and_combine_examples():
    assert continuous_reward(0.6, 0.0) == 0.6
    assert continuous_reward(0.6, 2.0, 2.0) == 0.0
    assert continuous_reward(0.0, 0.0) == 0.0
    assert combine_rewards(1, 0.5, 0.5, 0.95) == pytest.approx(1.2375, abs=1e-15)
    assert combine_rewards(0.3, 7.0, 1.0, 0.95) == 0.3
    assert combine_rewards(0, 1, 0.0, 0.95) == 0.95


def test_pipeline_config_validation():
    for bad in ({"mode": "vlm"}, {"beta": 1.5}, {"gamma": 1.0}, {"cap": 0}, {"window": 0}, {"scorer": "clip"}):
        with pytest.raises(ValueError):
            RewardPipelineConfig(**bad)
    wt = Walkthrough.from_records([{"text": "a", "events": ["a"]}])
    with pytest.raises(ValueError):
        RewardPipeline(RewardPipelineConfig(mode="bi"), wt)
    with pytest.raises(ValueError):
        RewardPipeline(RewardPipelineConfig(mode="oracle"), wt)


WT = Walkthrough.from_records([{"text": "touch red ball", "events": ["touch red ball"]},
                               {"text": "touch blue key", "events": ["touch blue key"]}])


def run(pipe, steps):
    pipe.reset()
    return [pipe.step(ev, (0, 0)) for ev in steps]


def test_bi_pipeline_fires_once_per_instruction():
    pipe = RewardPipeline(RewardPipelineConfig(mode="bi", window=1), WT, ConformalThreshold(1.0, 0.1, 1))
    out = run(pipe, [("touch red box",), ("touch red ball",), ("touch red ball",), (), ("touch blue key",)])
    assert [s.r_v for s in out] == [0.0, 1.0, 0.0, 0.0, 1.0]
    assert [s.pointer for s in out] == [1, 1, 2, 2, 2]
    assert pipe.pointer == 3 and out[1].advanced


def test_bimi_pipeline_subtracts_frequency():
    freq = FrequencyTable({1: 0.25, 2: 0.0})
    pipe = RewardPipeline(RewardPipelineConfig(mode="bimi", window=1), WT, ConformalThreshold(1.0, 0.1, 1), freq)
    out = run(pipe, [("touch red ball",), (), ("touch blue key",), ()])
    assert [s.r_v for s in out] == [0.75, 0.0, 1.0, 0.0]
    rates = pipe.finish_episode()
    assert rates == {1: 0.25, 2: 0.25}
    assert freq.updated([rates]).values == {1: 0.25, 2: 0.25}
    assert freq.updated([]).values == freq.values


def test_continuous_pipeline_pays_partial_matches_up_to_cap():
    pipe = RewardPipeline(RewardPipelineConfig(mode="continuous_window", window=3, cap=2.0), WT)
    out = run(pipe, [("touch red box",)] * 4)
    r = [s.r_v for s in out]
    assert r[0] == pytest.approx(2 / 3) and sum(r[:3]) == pytest.approx(2.0)
    assert pipe.pointer == 2 and out[2].advanced
    assert out[3].pointer == 2 and out[3].r_v == pytest.approx(1 / 3)  # "touch" still in window, new target


def test_markovian_pipeline_forgets_previous_steps():
    pipe = RewardPipeline(RewardPipelineConfig(mode="continuous_markovian"), WT)
    out = run(pipe, [("touch red ball",), ()])
    assert [s.r_v for s in out] == [1.0, 0.0]


def test_none_and_oracle_pipelines_follow_ground_truth():
    pipe = RewardPipeline(RewardPipelineConfig(mode="none"), WT)
    out = run(pipe, [("touch blue key",), ("touch red ball",), ("touch blue key",)])
    assert all(s.r_v == 0 for s in out) and pipe.pointer == 3
    assert [s.fulfilled for s in out] == [[], [1], [2]]
    oracle = OracleRewardModel(OracleConfig("perfect"), WT, {1: (0, 0), 2: (0, 1)}, [(0, 0), (0, 1)])
    pipe = RewardPipeline(RewardPipelineConfig(mode="oracle"), WT, oracle=oracle)
    out = run(pipe, [("touch blue key",), ("touch red ball",), ("touch blue key",)])
    assert [s.r_v for s in out] == [0.0, 1.0, 1.0]


@given(st.lists(st.sampled_from([(), ("touch red ball",), ("touch blue key",), ("touch red key",)]), max_size=30))
def test_binary_gate_pays_at_most_once_per_instruction(steps):
    pipe = RewardPipeline(RewardPipelineConfig(mode="bi", window=2), WT, ConformalThreshold(0.8, 0.1, 1))
    out = run(pipe, steps)
    per_instruction = {}
    for s in out:
        per_instruction[s.pointer] = per_instruction.get(s.pointer, 0) + s.r_v
    assert all(v <= 1 for v in per_instruction.values())


def test_calibration_set_round_trip(tmp_path, three_rooms):
    records = calibration_set([three_rooms], window=5)
    assert [r.instruction for r in records] == [1, 2, 3]
    save_calibration(records, tmp_path / "cal.csv")
    assert load_calibration(tmp_path / "cal.csv") == records
