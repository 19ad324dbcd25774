"""Linear reward estimation from real-valued labels (ridge) or pairwise
preferences (constrained Bradley-Terry maximum likelihood)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from .datasets import LabeledSet, PreferenceSet
from .world import SubspaceWorld


class IllPosedFit(ValueError):
    """Raised when the normal equations are singular."""


@dataclass(frozen=True)
class LinearRewardEstimate:
    theta: np.ndarray
    mode: str
    lam: float = 0.0
    loss: float = float("nan")
    iterations: int = 0
    converged: bool = True

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.theta

    def beta(self, A: np.ndarray) -> np.ndarray:
        return A.T @ self.theta


def ridge_objective(X: np.ndarray, y: np.ndarray, theta: np.ndarray, lam: float) -> float:
    r = X @ theta - y
    return float(r @ r + lam * theta @ theta)


def fit_ridge(data: LabeledSet, lam: float = 1.0) -> LinearRewardEstimate:
    """``(X^T X + lam I)^{-1} X^T y`` via a Cholesky solve."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X, y = data.points, data.labels
    G = X.T @ X + lam * np.eye(X.shape[1])
    rhs = X.T @ y
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise IllPosedFit("ridge system is singular; use lam > 0") from exc
    theta = linalg.cho_solve(factor, rhs)
    resid = np.linalg.norm(G @ theta - rhs)
    scale = max(np.linalg.norm(rhs), np.linalg.norm(G) * np.linalg.norm(theta), 1e-300)
    if not np.isfinite(resid) or resid > 1e-8 * scale:
        raise IllPosedFit(f"normal-equation residual {resid:.3e} too large; system ill-conditioned")
    return LinearRewardEstimate(
        theta=theta, mode="ridge", lam=float(lam), loss=ridge_objective(X, y, theta, lam), iterations=1
    )


def _pair_scores(data: PreferenceSet, theta: np.ndarray) -> np.ndarray:
    return np.stack([data.first @ theta, data.second @ theta], axis=1)


def bt_neg_log_likelihood(data: PreferenceSet, theta: np.ndarray) -> float:
    """Average negative log-likelihood of the observed winners."""
    if len(data) == 0:
        raise ValueError("empty preference set")
    scores = _pair_scores(data, theta)
    chosen = scores[np.arange(len(data)), data.winner]
    return float(np.mean(logsumexp(scores, axis=1) - chosen))


def bt_gradient(data: PreferenceSet, theta: np.ndarray) -> np.ndarray:
    """Softmax-weighted form: mean over pairs of ``sum_k w_k (x_k - u)``."""
    w = softmax(_pair_scores(data, theta), axis=1)
    u = data.preferred
    g = w[:, :1] * (data.first - u) + w[:, 1:] * (data.second - u)
    return g.mean(axis=0)


def project_constraint(theta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{sum(theta) = 0, ||theta|| <= 1}``."""
    p = theta - theta.mean()
    nrm = np.linalg.norm(p)
    return p / nrm if nrm > 1.0 else p


def fit_bt_mle(
    data: PreferenceSet,
    max_iters: int = 10_000,
    step: float = 1.0,
    tol: float = 1e-8,
    theta0: np.ndarray | None = None,
    trace: list | None = None,
) -> LinearRewardEstimate:
    """Projected gradient descent with backtracking on the BT likelihood.

    A step is accepted when the quadratic upper model holds,
    ``l(new) <= l(old) + g^T(new - old) + ||new - old||^2 / (2 * step)``,
    which forces monotone descent. Stops once the gradient-mapping norm
    ``||new - old|| / step`` drops to ``tol``.
    """
    if len(data) == 0:
        raise ValueError("empty preference set")
    D = data.first.shape[1]
    theta = project_constraint(np.zeros(D) if theta0 is None else np.asarray(theta0, dtype=float))
    loss = bt_neg_log_likelihood(data, theta)
    if trace is not None:
        trace.append(loss)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = bt_gradient(data, theta)
        eta = step
        while True:
            cand = project_constraint(theta - eta * g)
            delta = cand - theta
            new_loss = bt_neg_log_likelihood(data, cand)
            if new_loss <= loss + g @ delta + (delta @ delta) / (2 * eta) + 1e-15:
                break
            eta *= 0.5
            if eta < 1e-20:
                cand, delta, new_loss = theta, np.zeros_like(theta), loss
                break
        theta, loss = cand, new_loss
        if trace is not None:
            trace.append(loss)
        if np.linalg.norm(delta) / eta <= tol:
            converged = True
            break
    return LinearRewardEstimate(
        theta=theta, mode="bt_mle", lam=0.0, loss=loss, iterations=it, converged=converged
    )


def bandit_regret_estimate(
    estimate: LinearRewardEstimate, target_samples: np.ndarray, world: SubspaceWorld
) -> float:
    """Monte-Carlo ``E|theta_hat^T x - theta*^T x|`` over on-support samples."""
    x = np.asarray(target_samples, dtype=float)
    if x.shape[0] == 0:
        return 0.0
    return float(np.mean(np.abs(x @ (estimate.theta - world.theta))))
