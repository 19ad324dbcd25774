"""Ground-truth environment: Gaussian latents embedded in a linear subspace.

Points are generated as ``x = A z`` with ``z ~ N(0, Sigma)`` and ``A`` a
``D x d`` matrix with orthonormal columns. The reward splits into a linear
on-support part and a quadratic penalty on the distance to the subspace::

    f*(x) = theta*^T x_par - c * ||x_perp||^2
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class SubspaceWorld:
    D: int
    d: int
    A: np.ndarray
    Sigma: np.ndarray
    theta: np.ndarray
    penalty_coef: float = 5.0
    label_noise: float = 0.1
    pseudo_noise: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float)
        Sigma = np.array(self.Sigma, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if not (1 <= self.d <= self.D):
            raise ValueError(f"need 1 <= d <= D, got D={self.D}, d={self.d}")
        if A.shape != (self.D, self.d):
            raise ValueError(f"A must be {self.D}x{self.d}, got {A.shape}")
        if Sigma.shape != (self.d, self.d):
            raise ValueError(f"Sigma must be {self.d}x{self.d}, got {Sigma.shape}")
        if theta.shape != (self.D,):
            raise ValueError(f"theta must have length {self.D}, got {theta.shape}")
        if self.penalty_coef < 0 or self.label_noise < 0:
            raise ValueError("penalty_coef and label_noise must be nonnegative")
        for arr in (A, Sigma, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "theta", theta)
        _validate(A, Sigma, theta)
        if np.isnan(self.pseudo_noise):
            object.__setattr__(self, "pseudo_noise", 1.0 / np.sqrt(self.D))
        elif self.pseudo_noise < 0:
            raise ValueError("pseudo_noise must be nonnegative")

    @property
    def beta(self) -> np.ndarray:
        """Latent reward direction ``A^T theta*``."""
        return self.A.T @ self.theta

    @property
    def projector(self) -> np.ndarray:
        return self.A @ self.A.T

    def check_invariants(self, atol: float = 1e-10) -> None:
        """Raise ``AssertionError`` if any structural invariant is broken."""
        gram = self.A.T @ self.A
        assert np.allclose(gram, np.eye(self.d), rtol=0, atol=atol), "A^T A != I"
        assert np.allclose(self.Sigma, self.Sigma.T, rtol=0, atol=1e-12), "Sigma not symmetric"
        eig = np.linalg.eigvalsh(self.Sigma)
        assert eig[0] > 0 and eig[-1] <= 1 + 1e-12, f"Sigma eigenvalues out of (0, 1]: {eig}"
        perp = self.theta - self.A @ self.beta
        assert np.abs(perp).max() <= atol, "theta* has an off-support component"


def _validate(A: np.ndarray, Sigma: np.ndarray, theta: np.ndarray, atol: float = 1e-10) -> None:
    if np.abs(A.T @ A - np.eye(A.shape[1])).max() > atol:
        raise ValueError("A must have orthonormal columns")
    if np.abs(Sigma - Sigma.T).max() > 1e-12:
        raise ValueError("Sigma must be symmetric")
    eig = np.linalg.eigvalsh(Sigma)
    if eig[0] <= 0 or eig[-1] > 1 + 1e-12:
        raise ValueError(f"Sigma eigenvalues must lie in (0, 1], got [{eig[0]:.3g}, {eig[-1]:.3g}]")
    if np.abs(theta - A @ (A.T @ theta)).max() > atol:
        raise ValueError("theta* must lie in range(A)")
    if abs(np.linalg.norm(theta) - 1.0) > atol:
        raise ValueError("theta* must have unit norm")


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    latent: np.ndarray | None = None

    def __len__(self) -> int:
        return self.points.shape[0]


def random_orthonormal(D: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Q-factor of a Gaussian ``D x d`` matrix, signs fixed so ``diag(R) > 0``."""
    Q, R = np.linalg.qr(rng.standard_normal((D, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _unit_sphere(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def make_world(
    D: int,
    d: int,
    penalty_coef: float = 5.0,
    noise: float = 0.1,
    seed=0,
    *,
    Sigma: np.ndarray | None = None,
    pseudo_noise: float | None = None,
    mean_zero_reward: bool = False,
) -> SubspaceWorld:
    """Draw a random world.

    ``A`` is Haar-distributed via QR and ``beta*`` is uniform on the unit
    sphere of R^d. With ``mean_zero_reward`` the direction is drawn uniformly
    from the unit sphere of the subspace ``{beta : 1^T A beta = 0}`` so that
    ``theta* = A beta*`` sums to zero, as the preference model requires.
    """
    if d < 1 or d > D:
        raise ValueError(f"need 1 <= d <= D, got D={D}, d={d}")
    rng = as_generator(seed)
    A = random_orthonormal(D, d, rng)
    if mean_zero_reward:
        ones = A.T @ np.ones(D)
        if d == 1 and np.linalg.norm(ones) > 1e-12:
            raise ValueError("d = 1 leaves no mean-zero reward direction in range(A)")
        beta = _unit_sphere(d, rng)
        if np.linalg.norm(ones) > 1e-12:
            u = ones / np.linalg.norm(ones)
            beta = beta - u * (u @ beta)
            beta /= np.linalg.norm(beta)
    else:
        beta = _unit_sphere(d, rng)
    theta = A @ beta
    Sigma = np.eye(d) if Sigma is None else np.asarray(Sigma, dtype=float)
    return SubspaceWorld(
        D=D,
        d=d,
        A=A,
        Sigma=Sigma,
        theta=theta,
        penalty_coef=float(penalty_coef),
        label_noise=float(noise),
        pseudo_noise=float("nan") if pseudo_noise is None else float(pseudo_noise),
    )


def diagonal_sigma(variances) -> np.ndarray:
    """Diagonal latent covariance; every variance must lie in (0, 1]."""
    v = np.asarray(variances, dtype=float)
    if v.ndim != 1 or np.any(v <= 0) or np.any(v > 1):
        raise ValueError("latent variances must lie in (0, 1]")
    return np.diag(v)


def sample_latent(world: SubspaceWorld, n: int, seed=None) -> SampleBatch:
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = as_generator(seed)
    L = np.linalg.cholesky(world.Sigma)
    z = rng.standard_normal((n, world.d)) @ L.T
    return SampleBatch(points=z @ world.A.T, latent=z)


def project(world: SubspaceWorld, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` (a vector or rows of a matrix) into on- and off-support parts."""
    x = np.asarray(x, dtype=float)
    x_par = (x @ world.A) @ world.A.T
    return x_par, x - x_par


def true_reward(world: SubspaceWorld, x: np.ndarray) -> np.ndarray | float:
    x_par, x_perp = project(world, x)
    r = x_par @ world.theta - world.penalty_coef * np.sum(x_perp**2, axis=-1)
    return float(r) if np.ndim(r) == 0 else r


def linear_part(world: SubspaceWorld, x: np.ndarray) -> np.ndarray | float:
    """``g*(x_par) = theta*^T x_par``."""
    x_par, _ = project(world, x)
    r = x_par @ world.theta
    return float(r) if np.ndim(r) == 0 else r


def penalty_part(world: SubspaceWorld, x: np.ndarray) -> np.ndarray | float:
    """``h*(||x_perp||) = -c ||x_perp||^2`` (always nonpositive)."""
    _, x_perp = project(world, x)
    r = -world.penalty_coef * np.sum(x_perp**2, axis=-1)
    return float(r) if np.ndim(r) == 0 else r
