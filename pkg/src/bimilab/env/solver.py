"""Breadth-first search over environment states.

Used both as a solvability oracle for generated layouts and as the expert that
produces calibration trajectories.
"""

from __future__ import annotations

from collections import deque

from .base import N_ACTIONS, EnvState


def _key(state: EnvState):
    return state.pos, state.inventory, state.flags


def solve(env, start: EnvState | None = None, max_steps: int | None = None) -> list[int] | None:
    """Shortest action sequence from ``start`` to a rewarded terminal state.

    Returns ``None`` when no such sequence exists within ``max_steps``.
    Actions are tried in enum order, so ties break deterministically.
    """
    start = env.reset() if start is None else start
    budget = env.config.max_steps if max_steps is None else max_steps
    parents = {_key(start): None}
    frontier = deque([(start, 0)])
    while frontier:
        state, depth = frontier.popleft()
        if depth >= budget:
            continue
        for a in range(N_ACTIONS):
            res = env.step(state, a)
            key = _key(res.state)
            if key in parents:
                continue
            parents[key] = (_key(state), a)
            if res.reward > 0:
                actions = [a]
                k = _key(state)
                while parents[k] is not None:
                    k, prev_a = parents[k]
                    actions.append(prev_a)
                return actions[::-1]
            if not res.done:
                # depth-limited: the step counter is not part of the key
                frontier.append((res.state, depth + 1))
    return None


def rollout(env, actions, start: EnvState | None = None):
    """Replay ``actions``; returns the list of StepResults."""
    state = env.reset() if start is None else start
    out = []
    for a in actions:
        res = env.step(state, a)
        out.append(res)
        state = res.state
        if res.done:
            break
    return out
