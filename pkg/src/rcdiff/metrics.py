"""Evaluation quantities: sub-optimality and its three-term bound, subspace
fidelity, distribution-shift traces and moment diagnostics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import linalg

from .datasets import LabeledSet, PreferenceSet
from .oracle import OracleScore
from .reward import LinearRewardEstimate
from .rng import as_generator
from .sampler import GenerationRun, off_support_deviation
from .world import SubspaceWorld, linear_part, penalty_part, true_reward

ORTHO_TOL = 1e-8


def _stderr(v: np.ndarray) -> float:
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def suboptimality(run: GenerationRun, world: SubspaceWorld, a: float | None = None) -> float:
    """``a - mean f*(x)`` over generated rows; ``a`` defaults to the run's target."""
    a = run.a if a is None else float(a)
    return a - float(np.mean(true_reward(world, run.output)))


@dataclass(frozen=True)
class Decomposition:
    """Upper-bound terms for the sub-optimality.

    ``E1`` is the reward-model error on the target law, ``E2`` the on-support
    mean-reward gap between target and generated laws, ``E3`` the magnitude
    ``c * E||x_perp||^2`` of the off-support penalty (the penalty itself is
    ``-E3``). Iterating yields ``(E1, E2, E3)``.
    """

    E1: float
    E2: float
    E3: float
    suboptimality: float
    stderr: float

    def __iter__(self):
        return iter((self.E1, self.E2, self.E3))

    @property
    def bound(self) -> float:
        return self.E1 + self.E2 + self.E3


def target_law_samples(world: SubspaceWorld, estimate: LinearRewardEstimate, a: float, n: int, seed=None) -> np.ndarray:
    """Exact on-support draws with ``f_hat(x) = a``: latent conditioned on
    ``beta_hat^T z = a`` without label noise, embedded through ``A``."""
    post = OracleScore(world, estimate.theta, 0.0).posterior_latent(a)
    return post.sample(n, seed) @ world.A.T


def decompose(
    run: GenerationRun,
    world: SubspaceWorld,
    estimate: LinearRewardEstimate,
    n_ref: int = 4096,
    seed=None,
    reference: np.ndarray | None = None,
) -> Decomposition:
    """Split ``SubOpt`` into ``E1 + E2 + E3``, an upper bound.

    ``reference`` overrides the target-law draws from ``target_law_samples``.
    Because ``f_hat = a`` holds on every reference row, the bound holds for
    the sample averages themselves, not only in expectation.
    """
    a = run.a
    X = run.output
    P = target_law_samples(world, estimate, a, n_ref, seed) if reference is None else np.asarray(reference)
    gap = np.abs(P @ estimate.theta - linear_part(world, P))
    g_ref = linear_part(world, P)
    g_run = linear_part(world, X)
    pen = -penalty_part(world, X)
    E1 = float(gap.mean())
    E2 = abs(float(g_ref.mean()) - float(g_run.mean()))
    E3 = float(pen.mean())
    se = _stderr(gap) + np.hypot(_stderr(g_ref), _stderr(g_run)) + _stderr(pen)
    return Decomposition(E1, E2, E3, suboptimality(run, world), float(se))


def _check_orthonormal(M: np.ndarray, name: str) -> None:
    k = M.shape[1]
    if np.abs(M.T @ M - np.eye(k)).max() > ORTHO_TOL:
        raise ValueError(f"{name} does not have orthonormal columns")


def subspace_angle(V: np.ndarray, A: np.ndarray) -> float:
    """``||V V^T - A A^T||_F^2``; ranges over ``[0, 2d]``."""
    V = np.asarray(V, dtype=float)
    A = np.asarray(A, dtype=float)
    if V.shape != A.shape:
        raise ValueError("V and A must have the same shape")
    _check_orthonormal(V, "V")
    _check_orthonormal(A, "A")
    diff = V @ V.T - A @ A.T
    return float(np.sum(diff * diff))


def _trace_solve(G: np.ndarray, C: np.ndarray) -> float:
    c = linalg.cho_factor(G, lower=True)
    return float(np.trace(linalg.cho_solve(c, C)))


def shift_trace_ridge(data: LabeledSet, lam: float, target_cov: np.ndarray) -> float:
    """``Tr(Sigma_hat^{-1} C)`` with ``Sigma_hat = (X^T X + lam I) / n``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    X = data.points
    n, D = X.shape
    return _trace_solve((X.T @ X + lam * np.eye(D)) / max(n, 1), target_cov)


def shift_trace_pref(data: PreferenceSet, lam: float, target_cov: np.ndarray) -> float:
    """Same trace with the pair-difference covariance ``(sum dd^T + lam I) / n``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    Dx = data.first - data.second
    n, D = Dx.shape
    return _trace_solve((Dx.T @ Dx + lam * np.eye(D)) / max(n, 1), target_cov)


def target_second_moment(oracle: OracleScore, a: float) -> np.ndarray:
    """``A (Gamma + mu mu^T) A^T`` for the latent posterior at label ``a``."""
    A = oracle.world.A
    return A @ oracle.posterior_latent(a).second_moment @ A.T


def distro_shift_estimate(a: float, oracle: OracleScore) -> float:
    """``sqrt(M(a) / tr Sigma)``: conditioned over unconditioned latent second moment."""
    return float(np.sqrt(oracle.m_of_a(a) / np.trace(oracle.world.Sigma)))


def moment_discrepancy(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> tuple[float, float]:
    """Euclidean mean error and Frobenius covariance error against a Gaussian target."""
    X = np.asarray(X, dtype=float)
    emp_cov = np.cov(X, rowvar=False).reshape(cov.shape)
    return float(np.linalg.norm(X.mean(axis=0) - mean)), float(np.linalg.norm(emp_cov - cov))


@dataclass(frozen=True)
class EvalReport:
    """One row of results. ``E3_est`` is the nonnegative penalty magnitude."""

    a: float
    mean_reward: float
    suboptimality: float
    E1_est: float
    E2_est: float
    E3_est: float
    subspace_angle: float
    off_support_dev: float
    shift_trace_ridge: float
    shift_trace_pref: float
    m_of_a: float
    n1: int
    n2: int
    seed: int

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(
    run: GenerationRun,
    world: SubspaceWorld,
    estimate: LinearRewardEstimate,
    oracle: OracleScore,
    V: np.ndarray,
    *,
    labeled: LabeledSet | None = None,
    preferences: PreferenceSet | None = None,
    lam: float = 1.0,
    n1: int = 0,
    seed: int = 0,
    n_ref: int = 4096,
    ref_seed=None,
) -> EvalReport:
    """Assemble an ``EvalReport`` for one generated batch.

    ``oracle`` carries the pseudo-label law (estimate and ``nu``) used for the
    shift trace and ``M(a)``. A shift trace is NaN when its dataset is absent.
    Target-law reference draws use ``ref_seed`` (default: ``seed``).
    """
    a = run.a
    mean_reward = float(np.mean(true_reward(world, run.output)))
    dec = decompose(run, world, estimate, n_ref=n_ref, seed=as_generator(seed if ref_seed is None else ref_seed))
    C = target_second_moment(oracle, a)
    n2 = len(labeled) if labeled is not None else len(preferences) if preferences is not None else 0
    return EvalReport(
        a=float(a),
        mean_reward=mean_reward,
        suboptimality=a - mean_reward,
        E1_est=dec.E1,
        E2_est=dec.E2,
        E3_est=dec.E3,
        subspace_angle=subspace_angle(V, world.A),
        off_support_dev=off_support_deviation(run, world),
        shift_trace_ridge=shift_trace_ridge(labeled, lam, C) if labeled is not None else float("nan"),
        shift_trace_pref=shift_trace_pref(preferences, lam, C) if preferences is not None else float("nan"),
        m_of_a=oracle.m_of_a(a),
        n1=int(n1),
        n2=int(n2),
        seed=int(seed),
    )
