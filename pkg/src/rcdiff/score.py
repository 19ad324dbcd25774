"""Conditional score model in the encoder-decoder class and its training.

A model evaluates ``s(x, y, t) = (V psi(V^T x, y, t) - x) / h(t)`` where
``V`` has orthonormal columns and ``psi`` is the Gaussian posterior-mean head

    psi(u, y, t) = alpha B_t (alpha u + (h / nu^2) y b),
    B_t = (alpha^2 I + (h / nu^2) b b^T + h S^{-1})^{-1},

with learnable latent covariance ``S = L L^T + eps I``, latent reward
direction ``b`` and noise scale ``nu``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import kernels
from .datasets import PseudoLabeledSet
from .oracle import DiffusionSchedule, OracleScore, alpha, h
from .rng import as_generator
from .world import random_orthonormal

log = logging.getLogger(__name__)

SPD_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreModel:
    V: np.ndarray
    L: np.ndarray
    b: np.ndarray
    log_nu: float
    schedule: DiffusionSchedule
    eps: float = SPD_EPS
    loss_trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def D(self) -> int:
        return self.V.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def nu(self) -> float:
        return float(np.exp(self.log_nu))

    @property
    def S(self) -> np.ndarray:
        return self.L @ self.L.T + self.eps * np.eye(self.d)

    def S_inv(self) -> np.ndarray:
        return linalg.cho_solve(linalg.cho_factor(self.S, lower=True), np.eye(self.d))

    def psi(self, u: np.ndarray, y, t) -> np.ndarray:
        return psi_eval(self, u, y, t)

    def __call__(self, x: np.ndarray, y, t) -> np.ndarray:
        """Score at ``x`` (vector or rows); ``t`` scalar or one time per row."""
        x = np.asarray(x, dtype=float)
        ht = h(t)
        psi = psi_eval(self, x @ self.V, y, t)
        if np.ndim(ht) == 0:
            return (psi @ self.V.T - x) / float(ht)
        return (psi @ self.V.T - x) / ht[:, None]

    def rotated(self, Q: np.ndarray) -> "ScoreModel":
        """Same score with encoder ``V Q`` and head conjugated by ``Q``."""
        Lq = Q.T @ self.L
        return replace(self, V=self.V @ Q, L=Lq, b=Q.T @ self.b)

    @classmethod
    def from_oracle(cls, os: OracleScore, schedule: DiffusionSchedule, V: np.ndarray | None = None) -> "ScoreModel":
        """Model whose head reproduces the oracle exactly when ``V = A``."""
        Sigma = os.world.Sigma
        L = np.linalg.cholesky(Sigma - SPD_EPS * np.eye(os.world.d))
        return cls(
            V=os.world.A.copy() if V is None else np.asarray(V, dtype=float),
            L=L,
            b=os.beta.copy(),
            log_nu=float(np.log(os.nu)),
            schedule=schedule,
        )


def init_model(D: int, d: int, schedule: DiffusionSchedule, nu: float, seed=None) -> ScoreModel:
    """Random orthonormal ``V``, ``S = I``, ``b = 0``, ``nu`` as given."""
    rng = as_generator(seed)
    return ScoreModel(
        V=random_orthonormal(D, d, rng),
        L=np.linalg.cholesky((1.0 - SPD_EPS) * np.eye(d)),
        b=np.zeros(d),
        log_nu=float(np.log(nu)),
        schedule=schedule,
    )


def psi_eval(model: ScoreModel, u: np.ndarray, y, t) -> np.ndarray:
    """Gaussian-form head; ``u`` is a d-vector or ``(n, d)`` batch."""
    if not model.schedule.contains(t):
        raise ValueError(f"t outside [{model.schedule.t0}, {model.schedule.T}]")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    d = model.d
    inv_nu2 = np.exp(-2.0 * model.log_nu)
    P = model.S_inv()
    b = model.b
    if np.ndim(t) == 0:
        at, ht = float(alpha(t)), float(h(t))
        M = at * at * np.eye(d) + ht * inv_nu2 * np.outer(b, b) + ht * P
        rhs = at * u + ht * inv_nu2 * np.multiply.outer(y, b)
        c = linalg.cho_factor(M, lower=True)
        w = linalg.cho_solve(c, np.atleast_2d(rhs).T).T
        w = w[0] if rhs.ndim == 1 else w
        return at * w
    at, ht = alpha(t), h(t)
    k = ht * inv_nu2
    M = (at * at)[:, None, None] * np.eye(d) + k[:, None, None] * np.outer(b, b) + ht[:, None, None] * P
    rhs = at[:, None] * u + (k * np.broadcast_to(y, at.shape))[:, None] * b
    return at[:, None] * np.linalg.solve(M, rhs[..., None])[..., 0]


@dataclass(frozen=True)
class DSMLossReport:
    loss: float
    batch_size: int
    t_samples: int
    stderr: float = float("nan")


def _draw_noising(n_rows: int, D: int, schedule: DiffusionSchedule, rng: np.random.Generator):
    t = rng.uniform(schedule.t0, schedule.T, n_rows)
    eps = rng.standard_normal((n_rows, D))
    return t, eps


def dsm_loss(model: ScoreModel, batch: PseudoLabeledSet, t_samples: int = 4, seed=None) -> DSMLossReport:
    """Monte-Carlo denoising score-matching loss, time-averaged over ``[t0, T]``."""
    if len(batch) == 0 or t_samples < 1:
        raise ValueError("need a nonempty batch and t_samples >= 1")
    rng = as_generator(seed)
    X = np.repeat(batch.points, t_samples, axis=0)
    Y = np.repeat(batch.labels, t_samples)
    t, eps = _draw_noising(X.shape[0], model.D, model.schedule, rng)
    per_row = dsm_rowwise(model, X, Y, t, eps)
    se = float(per_row.std(ddof=1) / np.sqrt(per_row.size)) if per_row.size > 1 else float("nan")
    return DSMLossReport(float(per_row.mean()), len(batch), t_samples, se)


def dsm_rowwise(model: ScoreModel, X, Y, t, eps) -> np.ndarray:
    """Per-row squared error against the transition-kernel score."""
    at, ht = alpha(t), h(t)
    Xp = at[:, None] * X + np.sqrt(ht)[:, None] * eps
    target = -eps / np.sqrt(ht)[:, None]
    r = model(Xp, Y, t) - target
    return np.sum(r * r, axis=1)


def loss_and_grad(model: ScoreModel, X, Y, t, eps, want_grad: bool = True, backend: str | None = None):
    """Loss and gradients w.r.t. ``(V, L, b, log_nu)`` for fixed noise draws."""
    P = model.S_inv()
    inv_nu2 = float(np.exp(-2.0 * model.log_nu))
    fn = kernels.get(backend)
    loss, gV, gP, gb, g_inv = fn(X, Y, t, eps, model.V, P, model.b, inv_nu2, want_grad)
    if not want_grad:
        return loss, None
    gS = -P @ gP @ P
    gL = 2.0 * gS @ model.L
    g_log_nu = -2.0 * inv_nu2 * g_inv
    return loss, (gV, gL, gb, g_log_nu)


def stiefel_step(V: np.ndarray, G: np.ndarray, lr: float) -> np.ndarray:
    """Tangent projection ``G - V sym(V^T G)`` followed by a QR retraction."""
    VtG = V.T @ G
    xi = G - V @ (0.5 * (VtG + VtG.T))
    Q, R = np.linalg.qr(V - lr * xi)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


@dataclass
class TrainOptions:
    batch: int = 128
    lr: float = 0.2
    iters: int = 20_000
    t_samples: int = 4
    seed: int = 0
    # lr is multiplied by gamma at each milestone (fractions of iters)
    milestones: tuple = (0.6, 0.85)
    gamma: float = 0.1
    learn_nu: bool = True
    log_every: int = 0
    backend: str | None = None
    # when set, overrides iters with ceil(epochs * n / batch)
    epochs: float | None = None

    def resolved_iters(self, n: int) -> int:
        if self.epochs is None:
            return self.iters
        return max(1, int(np.ceil(self.epochs * n / self.batch)))

    def lr_at(self, it: int, total: int | None = None) -> float:
        total = self.iters if total is None else total
        passed = sum(it >= int(m * total) for m in self.milestones)
        return self.lr * self.gamma**passed


def train(
    data: PseudoLabeledSet,
    schedule: DiffusionSchedule,
    opts: TrainOptions | None = None,
    d: int | None = None,
    init: ScoreModel | None = None,
    nu0: float | None = None,
) -> ScoreModel:
    """Minibatch SGD on the denoising loss; ``V`` stays on the Stiefel manifold.

    Starts from ``init`` when given, otherwise from ``init_model`` with latent
    dimension ``d`` and noise scale ``nu0`` (default ``1/sqrt(D)``).
    """
    opts = opts or TrainOptions()
    n, D = data.points.shape
    if n == 0:
        raise ValueError("empty training set")
    rng = as_generator(opts.seed)
    if init is None:
        if d is None:
            raise ValueError("pass the latent dimension d or an initial model")
        init = init_model(D, d, schedule, 1.0 / np.sqrt(D) if nu0 is None else nu0, rng)
    V, L, b, log_nu = init.V.copy(), init.L.copy(), init.b.copy(), float(init.log_nu)
    iters = opts.resolved_iters(n)
    trace = np.empty(iters)
    for it in range(iters):
        idx = rng.integers(0, n, opts.batch)
        X = np.repeat(data.points[idx], opts.t_samples, axis=0)
        Y = np.repeat(data.labels[idx], opts.t_samples)
        t, eps = _draw_noising(X.shape[0], D, schedule, rng)
        cur = ScoreModel(V, L, b, log_nu, schedule)
        loss, (gV, gL, gb, g_nu) = loss_and_grad(cur, X, Y, t, eps, backend=opts.backend)
        if not np.isfinite(loss) or loss > 1e6:
            raise TrainingDiverged(f"loss {loss!r} at iteration {it}")
        trace[it] = loss
        lr = opts.lr_at(it, iters)
        V = stiefel_step(V, gV, lr)
        L = L - lr * gL
        b = b - lr * gb
        if opts.learn_nu:
            log_nu -= lr * g_nu
        if opts.log_every and it % opts.log_every == 0:
            log.info("iter %d loss %.5f", it, loss)
    return ScoreModel(V, L, b, log_nu, schedule, loss_trace=tuple(trace))
