"""Exact tabular checks of heuristic-guided reshaping.

Values come from linear solves rather than sampling, so the decomposition of
the performance gap into regret and bias can be verified as an identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TabularMDP:
    """P has shape (S, A, S); r has shape (S, A)."""

    P: np.ndarray
    r: np.ndarray
    gamma: float
    s0: int = 0
    goals: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ValueError("P must be (S, A, S) and r must be (S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1)) > 1e-12:
            raise ValueError("transition rows must be stochastic")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.s0 < P.shape[0]:
            raise ValueError("start state out of range")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


@dataclass(frozen=True)
class Heuristic:
    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=float)
        if not np.all(np.isfinite(h)):
            raise ValueError("heuristic values must be finite")
        object.__setattr__(self, "h", h)


@dataclass(frozen=True)
class ReshapedMDP:
    base: TabularMDP
    h: np.ndarray
    beta: float
    mdp: TabularMDP  # r~ = r + (1 - beta) gamma P h, gamma~ = beta gamma

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    @property
    def r(self) -> np.ndarray:
        return self.mdp.r


def _as_h(h) -> np.ndarray:
    return h.h if isinstance(h, Heuristic) else np.asarray(h, dtype=float)


def bellman_backup(mdp: TabularMDP | ReshapedMDP, h) -> np.ndarray:
    """(B h)(s, a) = r(s, a) + gamma E[h(s')], using the reshaped r and gamma when given one."""
    m = mdp.mdp if isinstance(mdp, ReshapedMDP) else mdp
    return m.r + m.gamma * m.P @ _as_h(h)


def policy_matrix(mdp: TabularMDP, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state transitions and expected rewards under ``pi`` of shape (S, A)."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != mdp.r.shape or np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1)) > 1e-10:
        raise ValueError("policy must be a (S, A) row-stochastic matrix")
    return np.einsum("sa,sat->st", pi, mdp.P), np.einsum("sa,sa->s", pi, mdp.r)


def policy_evaluation(mdp: TabularMDP | ReshapedMDP, pi: np.ndarray) -> np.ndarray:
    m = mdp.mdp if isinstance(mdp, ReshapedMDP) else mdp
    P_pi, r_pi = policy_matrix(m, pi)
    return np.linalg.solve(np.eye(m.n_states) - m.gamma * P_pi, r_pi)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def value_iteration(mdp: TabularMDP | ReshapedMDP, tol: float = 1e-12,
                    max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and a greedy deterministic policy.

    Value iteration runs until the Bellman residual is below ``tol``; policy
    iteration then polishes the result to linear-solve precision.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = mdp.mdp if isinstance(mdp, ReshapedMDP) else mdp
    v = np.zeros(m.n_states)
    for _ in range(max_iter):
        v_new = bellman_backup(m, v).max(axis=1)
        done = np.max(np.abs(v_new - v)) <= tol
        v = v_new
        if done:
            break
    pi = greedy_policy(bellman_backup(m, v))
    for _ in range(m.n_states * m.n_actions + 1):
        v = policy_evaluation(m, pi)
        q = bellman_backup(m, v)
        # keep the current action unless another is strictly better, so the loop terminates
        current = (q * pi).sum(axis=1)
        better = q.max(axis=1) > current + 1e-13 * (1 + np.abs(current))
        if not better.any():
            break
        new_pi = pi.copy()
        new_pi[better] = greedy_policy(q[better])
        pi = new_pi
    return v, pi


def discounted_state_distribution(mdp: TabularMDP, pi: np.ndarray, gamma: float | None = None) -> np.ndarray:
    """d = (1 - gamma) e_{s0}^T (I - gamma P_pi)^{-1}."""
    g = mdp.gamma if gamma is None else gamma
    P_pi, _ = policy_matrix(mdp, pi)
    e0 = np.zeros(mdp.n_states)
    e0[mdp.s0] = 1.0
    return (1 - g) * np.linalg.solve((np.eye(mdp.n_states) - g * P_pi).T, e0)


def reshape(mdp: TabularMDP, h, beta: float) -> ReshapedMDP:
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    h = _as_h(h)
    r_tilde = mdp.r + (1 - beta) * mdp.gamma * (mdp.P @ h)
    # gamma~ = 0 is allowed here even though TabularMDP requires gamma > 0
    inner = object.__new__(TabularMDP)
    for name, value in (("P", mdp.P), ("r", r_tilde), ("gamma", beta * mdp.gamma), ("s0", mdp.s0),
                        ("goals", mdp.goals)):
        object.__setattr__(inner, name, value)
    return ReshapedMDP(mdp, h, beta, inner)


def check_pessimism(mdp: TabularMDP, h, tol: float = 1e-10) -> list[int]:
    """States where max_a (B h)(s, a) < h(s), i.e. where h overestimates."""
    h = _as_h(h)
    backed = bellman_backup(mdp, h).max(axis=1)
    return [int(s) for s in np.flatnonzero(backed < h - tol)]


@dataclass(frozen=True)
class GapDecomposition:
    regret: float
    bias: float
    gap: float

    @property
    def residual(self) -> float:
        return abs(self.regret + self.bias - self.gap)


def gap_decomposition(mdp: TabularMDP, h, beta: float, pi: np.ndarray) -> GapDecomposition:
    h = _as_h(h)
    g = mdp.gamma
    s0 = mdp.s0
    v_star, _ = value_iteration(mdp)
    v_pi = policy_evaluation(mdp, pi)
    rm = reshape(mdp, h, beta)
    vt_star, _ = value_iteration(rm)
    vt_pi = policy_evaluation(rm, pi)
    d = discounted_state_distribution(mdp, pi)
    P_pi, _ = policy_matrix(mdp, pi)

    regret = beta * (vt_star[s0] - vt_pi[s0]) + (1 - beta) / (1 - g) * (d @ (vt_star - vt_pi))
    bias = (v_star[s0] - vt_star[s0]) + g * (1 - beta) / (1 - g) * (d @ P_pi @ (h - vt_star))
    return GapDecomposition(float(regret), float(bias), float(v_star[s0] - v_pi[s0]))


def bias_bound_terms(mdp: TabularMDP, h, beta: float, pi: np.ndarray) -> tuple[float, float]:
    """(B1, B2) of the bias upper bound, summed in closed form.

    B1 = E over optimal-policy trajectories of sum_{t>=1} (beta gamma)^{t-1} (V* - h)(s_t)
    B2 = E over pi trajectories of sum_{t>=1} gamma^{t-1} (h - V~*)(s_t)
    """
    h = _as_h(h)
    n = mdp.n_states
    g = mdp.gamma
    v_star, pi_star = value_iteration(mdp)
    vt_star, _ = value_iteration(reshape(mdp, h, beta))
    P_star, _ = policy_matrix(mdp, pi_star)
    P_pi, _ = policy_matrix(mdp, pi)
    e0 = np.zeros(n)
    e0[mdp.s0] = 1.0
    b1 = e0 @ P_star @ np.linalg.solve(np.eye(n) - beta * g * P_star, v_star - h)
    b2 = e0 @ P_pi @ np.linalg.solve(np.eye(n) - g * P_pi, h - vt_star)
    return float(b1), float(b2)


def bias_upper_bound(mdp: TabularMDP, h, beta: float, pi: np.ndarray) -> float:
    b1, b2 = bias_bound_terms(mdp, h, beta, pi)
    return (1 - beta) * mdp.gamma * (b1 + b2)


def construct_heuristic(states, agent_scores, optimal_scores, v_star, goal_sets) -> np.ndarray:
    """h(s_t) = A(s_t) V*(s_t) on the active goal set, 0 elsewhere.

    A(s_t) is the running product of the agent's similarity scores divided by
    the same product along the optimal trajectory, clamped to [0, 1].
    """
    agent = np.asarray(agent_scores, dtype=float)
    optimal = np.asarray(optimal_scores, dtype=float)
    if not len(states) == len(agent) == len(optimal) == len(goal_sets):
        raise ValueError("states, scores and goal sets must have equal length")
    num = np.cumprod(agent)
    den = np.cumprod(optimal)
    if np.any(den == 0):
        raise ValueError("optimal-trajectory score product is zero")
    a = np.clip(num / den, 0.0, 1.0)
    v_star = np.asarray(v_star, dtype=float)
    return np.array([a[t] * v_star[s] if s in goal_sets[t] else 0.0 for t, s in enumerate(states)])


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float = 0.9) -> TabularMDP:
    """Dense Dirichlet transitions and uniform rewards in [0, 1]."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    return TabularMDP(P, rng.random((n_states, n_actions)), gamma, s0=0)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    return pi / pi.sum(axis=1, keepdims=True)


def chain_counterexample(h_s: float = 1.5) -> tuple[TabularMDP, np.ndarray]:
    """Two states s -> g with r(s) = 1, absorbing g with r = 0, gamma = 0.9.

    V*(s) = 1 and V*(g) = 0; a heuristic with h(s) > 1 overestimates at s
    while its successor g keeps h(g) = V*(g).
    """
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    r = np.array([[1.0], [0.0]])
    return TabularMDP(P, r, 0.9, s0=0, goals=(1,)), np.array([h_s, 0.0])
