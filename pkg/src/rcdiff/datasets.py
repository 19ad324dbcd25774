"""Labeled, preference and pseudo-labeled sample stores."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .rng import as_generator
from .world import SubspaceWorld, sample_latent, true_reward


@dataclass(frozen=True)
class LabeledSet:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels disagree in length")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class PreferenceSet:
    """Pairs ``(first[i], second[i])``; ``winner[i] == 0`` means ``first`` won."""

    first: np.ndarray
    second: np.ndarray
    winner: np.ndarray

    def __post_init__(self) -> None:
        n = self.winner.shape[0]
        if self.first.shape[0] != n or self.second.shape[0] != n:
            raise ValueError("first, second and winner must align")
        if n and not np.all((self.winner == 0) | (self.winner == 1)):
            raise ValueError("winner entries must be 0 or 1")

    def __len__(self) -> int:
        return self.winner.shape[0]

    @property
    def preferred(self) -> np.ndarray:
        """Rows of the preferred instance (``u_i`` in the likelihood)."""
        return np.where(self.winner[:, None] == 0, self.first, self.second)

    @property
    def rejected(self) -> np.ndarray:
        return np.where(self.winner[:, None] == 0, self.second, self.first)

    @classmethod
    def from_preferred(cls, first: np.ndarray, second: np.ndarray, preferred: np.ndarray) -> "PreferenceSet":
        """Build from an explicit copy of the preferred rows."""
        is_first = np.all(preferred == first, axis=1)
        is_second = np.all(preferred == second, axis=1)
        if not np.all(is_first | is_second):
            raise ValueError("every preferred row must equal its first or second row")
        return cls(first, second, np.where(is_first, 0, 1).astype(np.int8))


@dataclass(frozen=True)
class PseudoLabeledSet:
    points: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def slice(self, idx) -> "PseudoLabeledSet":
        return PseudoLabeledSet(self.points[idx], self.labels[idx])


def make_unlabeled(world: SubspaceWorld, n: int, seed=None) -> np.ndarray:
    return sample_latent(world, n, seed).points


def make_labeled(world: SubspaceWorld, n: int, seed=None) -> LabeledSet:
    rng = as_generator(seed)
    x = sample_latent(world, n, rng).points
    y = np.asarray(true_reward(world, x), dtype=float).reshape(n)
    y = y + world.label_noise * rng.standard_normal(n)
    return LabeledSet(x, y)


def bt_choice_prob_from_rewards(r1, r2):
    """``exp(r1) / (exp(r1) + exp(r2))`` evaluated as a logistic of ``r1 - r2``."""
    out = expit(np.asarray(r1, dtype=float) - np.asarray(r2, dtype=float))
    return float(out) if out.ndim == 0 else out


def bt_choice_prob(world: SubspaceWorld, x1: np.ndarray, x2: np.ndarray):
    """Probability that ``x1`` is preferred over ``x2`` under Bradley-Terry."""
    return bt_choice_prob_from_rewards(true_reward(world, x1), true_reward(world, x2))


def make_preferences(world: SubspaceWorld, n: int, seed=None) -> PreferenceSet:
    rng = as_generator(seed)
    x1 = sample_latent(world, n, rng).points
    x2 = sample_latent(world, n, rng).points
    p_first = np.asarray(bt_choice_prob(world, x1, x2)).reshape(n)
    winner = (rng.random(n) >= p_first).astype(np.int8)
    return PreferenceSet(x1, x2, winner)


def preferences_from_pairs(world: SubspaceWorld, x1: np.ndarray, x2: np.ndarray, seed=None) -> PreferenceSet:
    """Label given pairs with Bradley-Terry draws."""
    rng = as_generator(seed)
    p_first = np.atleast_1d(bt_choice_prob(world, x1, x2))
    winner = (rng.random(p_first.shape[0]) >= p_first).astype(np.int8)
    return PreferenceSet(np.asarray(x1, float), np.asarray(x2, float), winner)


def pseudo_label(
    points: np.ndarray,
    reward_fn: Callable[[np.ndarray], np.ndarray],
    nu: float | None = None,
    seed=None,
) -> PseudoLabeledSet:
    """Annotate ``points`` with ``reward_fn(x) + N(0, nu^2)``; ``nu`` defaults to ``1/sqrt(D)``."""
    points = np.asarray(points, dtype=float)
    if nu is None:
        nu = 1.0 / np.sqrt(points.shape[1])
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    rng = as_generator(seed)
    y = np.asarray(reward_fn(points), dtype=float).reshape(points.shape[0])
    return PseudoLabeledSet(points, y + nu * rng.standard_normal(points.shape[0]))
