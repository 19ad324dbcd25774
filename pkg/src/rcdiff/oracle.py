"""Closed-form Gaussian quantities for the Ornstein-Uhlenbeck forward process.

With ``g(t) = 1`` the forward kernel is ``x_t | x_0 ~ N(alpha(t) x_0, h(t) I)``
where ``alpha(t) = exp(-t/2)`` and ``h(t) = 1 - exp(-t)``. Under a Gaussian
latent ``z ~ N(0, Sigma)`` and pseudo-label ``y = beta^T z + N(0, nu^2)``
every conditional below is Gaussian and available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .rng import as_generator
from .world import SubspaceWorld


def alpha(t):
    return np.exp(-0.5 * np.asarray(t, dtype=float))


def h(t):
    return -np.expm1(-np.asarray(t, dtype=float))


def default_t0(D: int, d: int, n1: int) -> float:
    """Early-stopping time ``((D d^2 + D^2 d) / n1)^(1/6)``."""
    if n1 <= 0:
        raise ValueError("n1 must be positive")
    return float(((D * d**2 + D**2 * d) / n1) ** (1.0 / 6.0))


@dataclass(frozen=True)
class DiffusionSchedule:
    """Backward-time grid from ``T`` down to ``t0``.

    The number of steps is ``round((T - t0) / eta)`` (at least one); the step
    actually used is ``(T - t0) / n_steps`` so the grid lands on ``t0``.
    """

    T: float = 10.0
    t0: float = 0.01
    eta: float = 5e-3

    def __post_init__(self) -> None:
        if not (0 < self.t0 < self.T):
            raise ValueError(f"need 0 < t0 < T, got t0={self.t0}, T={self.T}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round((self.T - self.t0) / self.eta)))

    @property
    def step(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def times(self) -> np.ndarray:
        """Forward times ``T - k * step`` at which the score is frozen, k = 0..K-1."""
        return self.T - self.step * np.arange(self.n_steps)

    def contains(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        slack = 1e-12 * self.T
        return bool(np.all((t >= self.t0 - slack) & (t <= self.T + slack)))


def schedule(T: float = 10.0, t0: float = 0.01, eta: float = 5e-3) -> DiffusionSchedule:
    return DiffusionSchedule(float(T), float(t0), float(eta))


@dataclass(frozen=True)
class GaussianLatent:
    mean: np.ndarray
    cov: np.ndarray

    def sample(self, n: int, seed=None) -> np.ndarray:
        rng = as_generator(seed)
        w, U = np.linalg.eigh(self.cov)
        root = U * np.sqrt(np.clip(w, 0.0, None))
        return self.mean + rng.standard_normal((n, self.mean.shape[0])) @ root.T

    @property
    def second_moment(self) -> np.ndarray:
        return self.cov + np.outer(self.mean, self.mean)


@dataclass(frozen=True)
class OracleScore:
    """Exact conditional score of the noised data given the pseudo-label.

    ``theta`` is the ambient reward vector used for pseudo-labeling (the
    estimate or the truth); only ``beta = A^T theta`` enters.
    """

    world: SubspaceWorld
    theta: np.ndarray
    nu: float

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.world.D,):
            raise ValueError("theta must be a D-vector")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_world(cls, world: SubspaceWorld, theta=None, nu: float | None = None) -> "OracleScore":
        return cls(world, world.theta if theta is None else theta, world.pseudo_noise if nu is None else nu)

    @cached_property
    def beta(self) -> np.ndarray:
        return self.world.A.T @ self.theta

    @cached_property
    def _sigma_chol(self):
        return linalg.cho_factor(self.world.Sigma, lower=True)

    @cached_property
    def sigma_inv(self) -> np.ndarray:
        return linalg.cho_solve(self._sigma_chol, np.eye(self.world.d))

    def precision(self, t: float) -> np.ndarray:
        """``B_t^{-1} = alpha^2 I + (h/nu^2) beta beta^T + h Sigma^{-1}``."""
        if self.nu <= 0:
            raise ValueError("score requires nu > 0")
        a, ht = float(alpha(t)), float(h(t))
        d = self.world.d
        return a * a * np.eye(d) + (ht / self.nu**2) * np.outer(self.beta, self.beta) + ht * self.sigma_inv

    def B(self, t: float) -> np.ndarray:
        return linalg.cho_solve(linalg.cho_factor(self.precision(t), lower=True), np.eye(self.world.d))

    def __call__(self, x: np.ndarray, y, t: float) -> np.ndarray:
        return oracle_score(self, x, y, t)

    # conditional laws --------------------------------------------------

    def _gain(self) -> tuple[np.ndarray, float]:
        Sb = self.world.Sigma @ self.beta
        denom = float(self.beta @ Sb + self.nu**2)
        if denom <= 0:
            raise ValueError("degenerate conditioning: nu = 0 and beta = 0")
        return Sb, denom

    def posterior_latent(self, a: float) -> GaussianLatent:
        """Law of ``z`` given ``beta^T z + N(0, nu^2) = a``."""
        Sb, denom = self._gain()
        mean = Sb * (a / denom)
        cov = self.world.Sigma - np.outer(Sb, Sb) / denom
        return GaussianLatent(mean, 0.5 * (cov + cov.T))

    def m_of_a(self, a: float) -> float:
        """Second moment ``E ||z||^2`` of the latent posterior at label ``a``."""
        Sb, denom = self._gain()
        Sigma = self.world.Sigma
        return float((Sb @ Sb) / denom**2 * a * a + np.trace(Sigma) - (Sb @ Sb) / denom)

    def noised_target(self, a: float, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of ``x_t`` given ``y = a`` (``t = 0`` gives the clean law)."""
        post = self.posterior_latent(a)
        A = self.world.A
        at, ht = float(alpha(t)), float(h(t))
        mean = at * (A @ post.mean)
        cov = at * at * (A @ post.cov @ A.T) + ht * np.eye(self.world.D)
        return mean, cov

    def target_samples(self, a: float, n: int, t: float = 0.0, seed=None) -> np.ndarray:
        """Draw ``x_t`` given ``y = a`` exactly: latent posterior, embed, noise to ``t``."""
        rng = as_generator(seed)
        z = self.posterior_latent(a).sample(n, rng)
        x = float(alpha(t)) * (z @ self.world.A.T)
        if t > 0:
            x = x + np.sqrt(float(h(t))) * rng.standard_normal(x.shape)
        return x

    def log_density(self, x: np.ndarray, a: float, t: float) -> np.ndarray:
        """``log p_t(x | y = a)`` as a Gaussian log-density (t > 0)."""
        mean, cov = self.noised_target(a, t)
        c = linalg.cho_factor(cov, lower=True)
        r = np.atleast_2d(x) - mean
        quad = np.sum(r * linalg.cho_solve(c, r.T).T, axis=1)
        logdet = 2 * np.sum(np.log(np.diag(c[0])))
        out = -0.5 * (quad + logdet + self.world.D * np.log(2 * np.pi))
        return out if np.ndim(x) == 2 else out[0]


def oracle_score(os: OracleScore, x: np.ndarray, y, t: float) -> np.ndarray:
    """``(alpha/h) A B_t (alpha A^T x + (h/nu^2) y beta) - x / h``.

    ``x`` is a D-vector or an ``(n, D)`` batch; ``y`` a scalar or length-n
    array; ``t`` a scalar time.
    """
    if not np.isscalar(t) and np.ndim(t) != 0:
        raise ValueError("t must be a scalar")
    t = float(t)
    if t <= 0:
        raise ValueError("score is singular at t <= 0")
    x = np.asarray(x, dtype=float)
    at, ht = float(alpha(t)), float(h(t))
    A = os.world.A
    c = linalg.cho_factor(os.precision(t), lower=True)
    y = np.asarray(y, dtype=float)
    rhs = at * (x @ A) + (ht / os.nu**2) * np.multiply.outer(y, os.beta)
    w = linalg.cho_solve(c, np.atleast_2d(rhs).T).T
    if rhs.ndim == 1:
        w = w[0]
    return (at / ht) * (w @ A.T) - x / ht


def posterior_latent(os: OracleScore, a: float) -> GaussianLatent:
    return os.posterior_latent(a)


def m_of_a(os: OracleScore, a: float) -> float:
    return os.m_of_a(a)
