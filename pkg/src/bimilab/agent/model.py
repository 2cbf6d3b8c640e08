from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..env import N_ACTIONS, EnvState


class ObsEncoder:
    """Flat tabular features: position one-hot, inventory bits, pointer one-hot, flags."""

    def __init__(self, shape: tuple[int, int], inventory_vocab: tuple[str, ...], n_instructions: int):
        self.shape = tuple(shape)
        self.inventory_vocab = tuple(inventory_vocab)
        self.n = n_instructions
        self._n_cells = self.shape[0] * self.shape[1]
        self.dim = self._n_cells + len(self.inventory_vocab) + (self.n + 1) + self.n

    @classmethod
    def for_env(cls, env, n_instructions: int) -> "ObsEncoder":
        return cls(env.shape, env.inventory_vocab, n_instructions)

    def encode(self, state: EnvState, pointer: int) -> np.ndarray:
        x = np.zeros(self.dim, dtype=np.float32)
        x[state.pos[0] * self.shape[1] + state.pos[1]] = 1.0
        off = self._n_cells
        for i, item in enumerate(self.inventory_vocab):
            if item in state.inventory:
                x[off + i] = 1.0
        off += len(self.inventory_vocab)
        x[off + pointer - 1] = 1.0
        off += self.n + 1
        x[off:off + self.n] = state.flags
        return x


class PolicyModel(nn.Module):
    """Separate two-layer tanh MLPs for the policy logits and the value."""

    def __init__(self, obs_dim: int, n_actions: int = N_ACTIONS, hidden: int = 64):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.pi = nn.Sequential(
            nn.Linear(obs_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, n_actions),
        )
        self.v = nn.Sequential(
            nn.Linear(obs_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, 1),
        )
        for layer in (*self.pi, *self.v):
            if isinstance(layer, nn.Linear):
                nn.init.orthogonal_(layer.weight, gain=np.sqrt(2))
                nn.init.zeros_(layer.bias)
        nn.init.orthogonal_(self.pi[-1].weight, gain=0.01)
        nn.init.orthogonal_(self.v[-1].weight, gain=1.0)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.pi(obs), self.v(obs).squeeze(-1)

    @torch.no_grad()
    def act_info(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Action probabilities and values for a batch of observations."""
        return self.snapshot().act_info(obs)

    @torch.no_grad()
    def snapshot(self) -> "PolicySnapshot":
        return PolicySnapshot(
            [(m.weight.numpy().astype(np.float64).T, m.bias.numpy().astype(np.float64))
             for m in self.pi if isinstance(m, nn.Linear)],
            [(m.weight.numpy().astype(np.float64).T, m.bias.numpy().astype(np.float64))
             for m in self.v if isinstance(m, nn.Linear)],
            self.obs_dim,
        )


class PolicySnapshot:
    """Frozen numpy copy of a policy used during rollouts.

    Rollouts step one observation batch at a time, where the per-call overhead
    of torch modules dominates; a plain numpy forward pass is much cheaper and
    cannot mutate the trained parameters.
    """

    def __init__(self, pi_layers, v_layers, obs_dim: int):
        self.pi_layers = pi_layers
        self.v_layers = v_layers
        self.obs_dim = obs_dim

    @staticmethod
    def _mlp(layers, x: np.ndarray) -> np.ndarray:
        for w, b in layers[:-1]:
            x = np.tanh(x @ w + b)
        w, b = layers[-1]
        return x @ w + b

    def act_info(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(obs, dtype=np.float64)
        logits = self._mlp(self.pi_layers, x)
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=-1, keepdims=True)
        return p, self._mlp(self.v_layers, x)[..., 0]


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sampling, so the draw depends only on ``rng``."""
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))
