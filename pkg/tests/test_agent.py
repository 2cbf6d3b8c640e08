from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bimilab.agent import (
    ObsEncoder,
    PolicyModel,
    RolloutBuffer,
    TrainConfig,
    Trainer,
    TrainingError,
    VisitCounter,
    collect_rollouts,
    compute_gae,
    intrinsic_bonus,
    ppo_update,
    sample_action,
    train,
)
from bimilab.bimi import ConformalThreshold, RewardPipelineConfig, combine_rewards
from bimilab.env import default_walkthrough, generate_gridseq

TINY = TrainConfig(nproc=2, nstep=16, epochs=4, eval_every=2, eval_episodes=2, seed=3)


def tiny_task():
    cfg = generate_gridseq(7, rows=1, cols=1, room_size=3, num_targets=2, max_steps=30)
    return cfg, default_walkthrough(cfg)


def brute_force_gae(rewards, values, dones, last_values, gamma, lam):
    """Direct sum of (gamma*lam)^l * delta_{t+l}, truncated at episode ends."""
    T, N = rewards.shape
    nxt = np.vstack([values[1:], last_values[None]])
    delta = rewards + gamma * nxt * (1 - dones) - values
    adv = np.zeros_like(rewards)
    for i in range(N):
        for t in range(T):
            total, weight = 0.0, 1.0
            for u in range(t, T):
                total += weight * delta[u, i]
                if dones[u, i]:
                    break
                weight *= gamma * lam
            adv[t, i] = total
    return adv


def test_gae_single_step():
    adv, ret = compute_gae(np.array([[1.0]]), np.zeros((1, 1)), np.array([[True]]), np.zeros(1), 0.95, 0.65)
    assert adv[0, 0] == 1.0 and ret[0, 0] == 1.0


def test_gae_two_steps_hand_recursion():
    adv, _ = compute_gae(np.array([[0.0], [1.0]]), np.zeros((2, 1)), np.array([[False], [True]]),
                         np.zeros(1), 0.95, 0.65)
    assert adv[0, 0] == pytest.approx(0.95 * 0.65, abs=1e-15)
    assert adv[1, 0] == 1.0


def test_gae_zero_rewards_and_values():
    adv, ret = compute_gae(np.zeros((5, 3)), np.zeros((5, 3)), np.zeros((5, 3), bool), np.zeros(3), 0.9, 0.5)
    assert not adv.any() and not ret.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_gae_matches_brute_force(seed, gamma, lam):
    rng = np.random.default_rng(seed)
    shape = (20, 3)
    r, v = rng.normal(size=shape), rng.normal(size=shape)
    d = rng.random(shape) < 0.2
    last = rng.normal(size=3)
    adv, ret = compute_gae(r, v, d, last, gamma, lam)
    np.testing.assert_allclose(adv, brute_force_gae(r, v, d, last, gamma, lam), atol=1e-10, rtol=0)
    np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_intrinsic_bonus_examples():
    assert intrinsic_bonus(0) == 1.0
    assert intrinsic_bonus(3) == 0.5
    counter = VisitCounter(0.0)
    assert all(counter.bonus(("s", i)) == 0.0 for i in range(5))
    with pytest.raises(ValueError):
        intrinsic_bonus(-1)


def test_visit_counter_decays_per_state():
    c = VisitCounter(1.0)
    assert [c.bonus("a") for _ in range(4)] == [1.0, 1 / np.sqrt(2), 1 / np.sqrt(3), 0.5]
    assert c.bonus("b") == 1.0


def test_sample_action_inverse_cdf():
    probs = np.array([0.2, 0.0, 0.8])
    draws = [sample_action(probs, np.random.default_rng(s)) for s in range(200)]
    assert 1 not in draws
    assert 0.1 < draws.count(0) / 200 < 0.3


def test_encoder_layout(three_rooms):
    wt = default_walkthrough(three_rooms.config)
    enc = ObsEncoder.for_env(three_rooms, wt.n)
    x = enc.encode(three_rooms.reset(), 1)
    rows, cols = three_rooms.shape
    assert x.shape == (enc.dim,)
    assert enc.dim == rows * cols + len(three_rooms.inventory_vocab) + 2 * wt.n + 1
    assert x.sum() == 2.0  # position and pointer, nothing held, no flags


def test_snapshot_matches_torch_forward():
    torch.manual_seed(0)
    policy = PolicyModel(7, n_actions=4)
    obs = np.random.default_rng(0).random((5, 7)).astype(np.float32)
    probs, values = policy.act_info(obs)
    with torch.no_grad():
        logits, v = policy(torch.as_tensor(obs))
    np.testing.assert_allclose(probs, torch.softmax(logits, -1).numpy(), atol=1e-6)
    np.testing.assert_allclose(values, v.numpy(), atol=1e-6)


def _rollout(mode="none", seed=3, nproc=2, nstep=4, intrinsic=0.0, beta=0.5):
    cfg, wt = tiny_task()
    tc = TrainConfig(nproc=nproc, nstep=nstep, seed=seed, intrinsic_coef=intrinsic)
    thr = ConformalThreshold(0.5, 0.1, 10)
    trainer = Trainer(cfg, wt, RewardPipelineConfig(mode=mode), tc, thr)
    buf, log = collect_rollouts(trainer.workers, trainer.policy, nstep, beta, 0.95, trainer.counter,
                                trainer.episode_ids)
    return buf, log


def test_buffer_capacity():
    buf, _ = _rollout(nproc=2, nstep=4)
    assert buf.size == 8
    assert buf.obs.shape[:2] == (4, 2) and buf.rewards.shape == (4, 2)


def test_rollouts_are_seed_deterministic():
    a, _ = _rollout(seed=11, nstep=40)
    b, _ = _rollout(seed=11, nstep=40)
    for name in ("obs", "actions", "logp", "rewards", "dones", "pointers"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c, _ = _rollout(seed=12, nstep=40)
    assert not np.array_equal(a.actions, c.actions)


def test_bi_rewards_are_binary():
    buf, _ = _rollout(mode="bi", nproc=4, nstep=200)
    assert set(np.unique(buf.r_v)) <= {0.0, 1.0}


@pytest.mark.parametrize("mode", ["bi", "bimi", "continuous_window"])
def test_reward_attribution(mode):
    buf, _ = _rollout(mode=mode, nproc=3, nstep=100, intrinsic=0.2)
    expected = np.vectorize(lambda e, v: combine_rewards(e, v, 0.5, 0.95))(buf.r_e, buf.r_v) + buf.r_int
    np.testing.assert_array_equal(buf.rewards, expected)


def _const_buffer(policy, n=32, seed=0):
    buf = RolloutBuffer(n, 1, 1)
    buf.obs[:] = 1.0
    probs, values = policy.act_info(buf.obs[0])
    rng = np.random.default_rng(seed)
    for t in range(n):
        a = sample_action(probs[0], rng)
        buf.actions[t, 0] = a
        buf.logp[t, 0] = np.log(probs[0, a])
        buf.values[t, 0] = values[0]
    return buf


def _params(policy):
    return [p.detach().clone() for p in policy.parameters()]


def test_zero_advantage_leaves_policy_unchanged():
    torch.manual_seed(0)
    policy = PolicyModel(1, n_actions=2)
    before = _params(policy)
    buf = _const_buffer(policy)
    buf.advantages = np.zeros((buf.nstep, 1))
    buf.returns = buf.values.copy()
    cfg = TrainConfig(ent_coef=0.0, vf_coef=0.0)
    ppo_update(policy, torch.optim.Adam(policy.parameters(), lr=1e-2, eps=1e-5), buf, cfg,
               np.random.default_rng(0))
    for a, b in zip(before, policy.parameters()):
        assert torch.equal(a, b)


def test_ratio_outside_clip_gives_no_gradient():
    torch.manual_seed(0)
    policy = PolicyModel(1, n_actions=2)
    before = _params(policy)
    buf = _const_buffer(policy)
    buf.logp[:] -= 1.0  # ratio e > 1.2 everywhere
    buf.advantages = np.ones((buf.nstep, 1))
    buf.returns = buf.values.copy()
    cfg = TrainConfig(clip=0.2, ent_coef=0.0, vf_coef=0.0, normalize_adv=False)
    stats = ppo_update(policy, torch.optim.Adam(policy.parameters(), lr=1e-2, eps=1e-5), buf, cfg,
                       np.random.default_rng(0))
    assert stats["clip_frac"] == 1.0
    for a, b in zip(before, policy.parameters()):
        assert torch.equal(a, b)


def test_missing_advantages_rejected():
    policy = PolicyModel(1, n_actions=2)
    with pytest.raises(TrainingError):
        ppo_update(policy, torch.optim.Adam(policy.parameters()), RolloutBuffer(2, 1, 1), TrainConfig(),
                   np.random.default_rng(0))


def test_non_finite_loss_dumps_diagnostics(tmp_path):
    policy = PolicyModel(1, n_actions=2)
    buf = _const_buffer(policy, n=4)
    buf.advantages = np.full((4, 1), np.nan)
    buf.returns = buf.values.copy()
    with pytest.raises(TrainingError):
        ppo_update(policy, torch.optim.Adam(policy.parameters()), buf, TrainConfig(normalize_adv=False),
                   np.random.default_rng(0), dump_dir=tmp_path)
    assert (tmp_path / "failed_losses.json").exists()


def test_bandit_greedy_probability_increases():
    """Arm 0 pays 1, arm 1 pays 0; the optimal arm's probability must rise every update."""
    torch.manual_seed(1)
    policy = PolicyModel(1, n_actions=2)
    opt = torch.optim.Adam(policy.parameters(), lr=3e-3, eps=1e-5)
    cfg = TrainConfig(ent_coef=0.0, ppo_epochs=1, batches=1)
    rng = np.random.default_rng(0)
    history = [policy.act_info(np.ones((1, 1), np.float32))[0][0, 0]]
    for i in range(50):
        buf = _const_buffer(policy, n=64, seed=i)
        buf.rewards[:] = (buf.actions == 0).astype(float)
        buf.dones[:] = True
        buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values, 0.95, 0.65)
        ppo_update(policy, opt, buf, cfg, rng)
        history.append(policy.act_info(np.ones((1, 1), np.float32))[0][0, 0])
    assert all(b > a for a, b in zip(history, history[1:]))
    assert history[-1] > 0.7


def test_train_config_profiles_and_frames():
    assert TrainConfig(epochs=250, nstep=512, nproc=8).frames == 1_024_000
    p = TrainConfig.profile("platform", seed=4)
    assert p.gamma == 0.99 and p.seed == 4
    assert TrainConfig.from_dict({"profile": "gridseq", "epochs": 3}).epochs == 3
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochz": 3})
    with pytest.raises(ValueError):
        TrainConfig(gamma=0.0)


def test_train_writes_run_record(tmp_path):
    cfg, wt = tiny_task()
    rec = train(cfg, wt, RewardPipelineConfig(mode="none"), TINY, tmp_path)
    assert [e for e, _ in rec.eval_series()] == [2, 4]
    assert len(rec.metrics) == 4
    for name in ("manifest.json", "metrics.csv", "rewards.jsonl", "fulfillments.jsonl", "episodes.jsonl",
                 "policy.pt"):
        assert (tmp_path / name).exists()
    assert rec.manifest["seed"] == 3
    assert all(r["source"] == "r_e" for r in rec.rewards())


def test_training_is_byte_identical(tmp_path):
    cfg, wt = tiny_task()
    thr = ConformalThreshold(0.5, 0.1, 10)
    pcfg = RewardPipelineConfig(mode="bimi")
    train(cfg, wt, pcfg, TINY, tmp_path / "a", thr)
    train(cfg, wt, pcfg, TINY, tmp_path / "b", thr)
    for name in ("metrics.csv", "rewards.jsonl", "episodes.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_continues_identically(tmp_path):
    cfg, wt = tiny_task()
    thr = ConformalThreshold(0.5, 0.1, 10)
    pcfg = RewardPipelineConfig(mode="bimi")
    train(cfg, wt, pcfg, TINY, tmp_path / "full", thr)
    partial = train(cfg, wt, pcfg, TINY, tmp_path / "cut", thr, stop_after=3)
    assert len(partial.metrics) == 3
    assert not (tmp_path / "cut" / "policy.pt").exists()
    train(cfg, wt, pcfg, TINY, tmp_path / "cut", thr)
    for name in ("metrics.csv", "rewards.jsonl", "fulfillments.jsonl", "episodes.jsonl"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "cut" / name).read_bytes()


def test_changed_config_restarts(tmp_path):
    cfg, wt = tiny_task()
    train(cfg, wt, RewardPipelineConfig(mode="none"), TINY, tmp_path, stop_after=2)
    rec = train(cfg, wt, RewardPipelineConfig(mode="none"), TrainConfig(**{**TINY.to_dict(), "seed": 9}),
                tmp_path, stop_after=1)
    assert len(rec.metrics) == 1 and rec.manifest["seed"] == 9


def test_beta_one_ignores_auxiliary_reward():
    buf, _ = _rollout(mode="bi", nproc=4, nstep=200, beta=1.0)
    assert buf.r_v.any()
    np.testing.assert_array_equal(buf.rewards, buf.r_e)
