from __future__ import annotations

import csv
import json
import math
import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bimilab.env import EnvState, default_walkthrough, generate_gridseq, make_env
from bimilab.instruction import FulfillmentTracker, PointerState, Walkthrough
from bimilab.scorer import (
    MANIPULATIONS,
    SYNONYMS,
    EmptyVectorError,
    OracleConfig,
    OracleRewardModel,
    concat,
    cosine,
    embed_instruction,
    embed_text,
    embed_trajectory,
    manipulate,
    matched_pairs_from_solver,
    noise_probe,
    oracle_score,
    score_markovian,
    score_pair,
    score_window,
    write_probe_report,
)

WORDS = ["touch", "red", "blue", "ball", "box", "key", "open", "door", "pick", "up"]
events_st = st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join), max_size=8)


def test_embed_trajectory_examples():
    assert embed_trajectory(["a", "b"], 10) == Counter({"a": 1, "b": 1})
    assert embed_trajectory(["a", "b"], 10) == embed_trajectory(["b", "a"], 10)
    assert embed_trajectory(["a", "a", "b", "c"], 2) == Counter({"b": 1, "c": 1})
    assert embed_trajectory([("a", "b"), (), "c"], 2) == Counter({"c": 1})
    with pytest.raises(ValueError):
        embed_trajectory(["a"], 0)


def test_embed_instruction_examples():
    assert embed_text("pick up key") == Counter(pick=1, up=1, key=1)
    assert embed_text("do not pick up key") == Counter({"do": 1, "not": 1, "pick": 1, "up": 1, "key": 1})
    assert embed_text("go go left") == Counter(go=2, left=1)


def test_cosine_examples():
    u = embed_text("pick up key")
    assert cosine(u, u) == 1.0
    assert cosine(u, embed_text("open door")) == 0.0
    assert abs(cosine(u, embed_text("do not pick up key")) - 3 / math.sqrt(15)) <= 1e-12
    with pytest.raises(EmptyVectorError):
        cosine(Counter(), u)


def test_markovian_examples():
    assert score_markovian("pick up key", "pick up key") == 1.0
    assert score_markovian((), "pick up key") == 0.0
    assert abs(score_markovian("key", "pick up key") - 1 / math.sqrt(3)) <= 1e-15


def test_window_examples():
    assert score_window(["pick up key"], 5, "pick up key") == 1.0
    assert score_window([(), ()], 5, "pick up key") == 0.0
    a = ["touch red ball", "open door"]
    assert score_window(a, 5, "touch red ball") == score_window(a[::-1], 5, "touch red ball")


@given(events_st, st.randoms(use_true_random=False), st.integers(1, 10))
def test_window_score_is_permutation_invariant_and_bounded(events, rnd, w):
    text = "touch red ball"
    window = events[-w:]
    shuffled = list(window)
    rnd.shuffle(shuffled)
    s = score_window(window, w, text)
    assert 0.0 <= s <= 1.0
    assert s == score_window(shuffled, w, text)


@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=4))
def test_negation_overlap_is_positive(tokens):
    text = " ".join(tokens)
    s = score_window([text], 1, "do not " + text)
    assert s > 0
    assert s == cosine(embed_text(text), embed_text("do not " + text))


def test_manipulations():
    traj = ("a", "b", "c")
    assert manipulate((traj, "x"), "reverse")[0] == ("c", "b", "a")
    assert manipulate((traj, "open door"), "negate")[1] == "do not open door"
    assert manipulate((traj, "open door"), "rephrase")[1] == "unlock gate"
    aux = (("d",), "l2")
    assert manipulate((traj, "l1"), "swap_concat", aux) == (("d", "a", "b", "c"), "l1 l2")
    assert manipulate((traj, "l1"), "truncate_traj", aux) == (traj, "l1 l2")
    assert manipulate((traj, "l1"), "truncate_instr", aux) == (("a", "b", "c", "d"), "l1")
    for kind in ("swap_concat", "truncate_traj", "truncate_instr"):
        with pytest.raises(ValueError):
            manipulate((traj, "l1"), kind)
    with pytest.raises(ValueError):
        manipulate((traj, "l1"), "shuffle", aux)
    assert len(SYNONYMS) == 20


def test_swap_concat_equals_matched_concat():
    rng = random.Random(0)
    vocab = [f"{c} {o}" for c in ("red", "blue", "grey") for o in ("ball", "box", "key")]
    for _ in range(100):
        p1 = (tuple(f"touch {rng.choice(vocab)}" for _ in range(rng.randint(1, 4))), f"touch {rng.choice(vocab)}")
        p2 = (tuple(f"touch {rng.choice(vocab)}" for _ in range(rng.randint(1, 4))), f"touch {rng.choice(vocab)}")
        assert score_pair(*manipulate(p1, "swap_concat", p2)) == score_pair(*concat(p1, p2))


def _model(kind, **kw):
    wt = Walkthrough.from_records([{"text": f"touch t{k}", "events": [f"touch t{k}"]} for k in (1, 2, 3)])
    targets = {1: (1, 1), 2: (1, 5), 3: (5, 5)}
    free = [(r, c) for r in range(1, 6) for c in range(1, 6)]
    return OracleRewardModel(OracleConfig(kind=kind, **kw), wt, targets, free), wt, targets, free


def test_oracle_examples():
    _, wt, targets, free = _model("perfect")
    ptr = PointerState(n=3)
    on_target = EnvState(targets[1], (), (False,) * 3)
    assert oracle_score(OracleConfig("perfect"), on_target, ptr, wt, ("touch t1",), targets, free) == 1.0
    assert oracle_score(OracleConfig("perfect"), on_target, ptr, wt, (), targets, free) == 0.0
    near = EnvState((2, 1), (), (False,) * 3)
    fp = OracleConfig("false_positive", fp_radius=2.0, fp_cell_fraction=0.0)
    assert oracle_score(fp, near, ptr, wt, (), targets, free) == 0.1
    far = EnvState((5, 1), (), (False,) * 3)
    assert oracle_score(fp, far, ptr, wt, (), targets, free) == 0.0
    at3 = EnvState(targets[3], (), (False,) * 3)
    ti = OracleConfig("temporal_insensitive")
    assert oracle_score(ti, at3, ptr, wt, ("touch t3",), targets, free) == 1.0
    assert oracle_score(OracleConfig("perfect"), at3, ptr, wt, ("touch t3",), targets, free) == 0.0


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(kind="noisy")
    with pytest.raises(ValueError):
        OracleConfig(fp_cell_fraction=1.5)
    with pytest.raises(ValueError):
        OracleConfig(fp_radius=-1)


def test_fp_bonus_is_one_off_per_cell():
    model, *_ = _model("false_positive", fp_cell_fraction=0.5, seed=3)
    ptr = PointerState(n=3)
    paid = [model.score((2, 2), (), ptr, []) for _ in range(5)]
    assert sum(paid) <= 0.1
    model.reset()
    assert model.score((2, 2), (), ptr, []) == paid[0]


def test_fn_oracle_drops_seeded_targets():
    model, *_ = _model("false_negative", fn_drop_fraction=1.0)
    assert model.dropped == {1, 2, 3}
    assert model.score((1, 1), ("touch t1",), PointerState(n=3), [1]) == 0.0
    model, *_ = _model("false_negative", fn_drop_fraction=0.0)
    assert model.score((1, 1), ("touch t1",), PointerState(n=3), [1]) == 1.0


def test_temporal_insensitive_pays_each_instruction_once():
    model, *_ = _model("temporal_insensitive")
    ptr = PointerState(n=3)
    assert model.score((5, 5), ("touch t3",), ptr, []) == 1.0
    assert model.score((5, 5), ("touch t3",), ptr, []) == 0.0
    assert model.score((1, 1), ("touch t1",), ptr, [1]) == 1.0


@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5), st.sampled_from(["", "touch t1", "touch t2",
                                                                                    "touch t3", "touch x"])),
                max_size=40))
def test_perfect_oracle_pays_only_on_fulfillment(steps):
    model, wt, *_ = _model("perfect")
    tracker = FulfillmentTracker(wt)
    ptr = PointerState(n=3)
    for t, (r, c, ev) in enumerate(steps, start=1):
        events = (ev,) if ev else ()
        done = tracker.update(events, t)
        reward = model.score((r, c), events, ptr, done)
        assert reward == (1.0 if ptr.m in done else 0.0)
        for _ in done:
            ptr = PointerState(n=3, m=min(ptr.m + 1, 4))


def test_noise_probe_report(tmp_path):
    envs = [make_env(generate_gridseq(s, 1, 3, 4, 3, 2, 150)) for s in range(5)]
    pairs = [p for _, _, p in matched_pairs_from_solver(envs)]
    report = noise_probe(score_pair, pairs, seed=0)
    assert {f"manipulated:{k}" for k in MANIPULATIONS} <= set(report)
    assert report["manipulated:swap_concat"].scores == report["matched_concat"].scores
    assert report["matched"].mean > report["mismatched"].mean
    for stats in report.values():
        assert all(0.0 <= s <= 1.0 for s in stats.scores)
    table, hist = write_probe_report(report, tmp_path)
    rows = list(csv.DictReader(table.open()))
    assert set(rows[0]) == {"class", "kind", "n", "mean", "min", "max"}
    assert set(json.loads(hist.read_text())["classes"]) == set(report)


def test_noise_probe_disjoint_mismatch_and_negation():
    pairs = [(("pick up key",), "pick up key"), (("open door",), "open door")]
    report = noise_probe(score_pair, pairs)
    assert report["mismatched"].mean == 0.0
    negated = report["manipulated:negate"].scores
    assert abs(negated[0] - 3 / math.sqrt(15)) <= 1e-12  # three shared tokens of five
    assert abs(negated[1] - 2 / math.sqrt(8)) <= 1e-12  # two shared tokens of four
    with pytest.raises(ValueError):
        noise_probe(score_pair, [])


def test_matched_pairs_score_one_without_window(three_rooms):
    pairs = matched_pairs_from_solver([three_rooms])
    assert [k for _, k, _ in pairs] == [1, 2, 3]
    assert all(score_pair(*p) == 1.0 for _, _, p in pairs)
    wt = default_walkthrough(three_rooms.config)
    assert [p[1] for _, _, p in pairs] == [ins.text for ins in wt]
    assert embed_instruction(wt[1]) == embed_text(wt[1].text)
