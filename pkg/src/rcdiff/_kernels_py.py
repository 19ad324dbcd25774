"""Pure-numpy denoising score-matching kernel (reference and fallback).

The model is the Gaussian-form head wrapped in the encoder-decoder shape::

    M      = alpha^2 I + h * inv_nu2 * b b^T + h * P          (P = S^{-1})
    w      = M^{-1} (alpha V^T x' + h * inv_nu2 * y * b)
    s      = (alpha V w - x') / h

with ``x' = alpha x + sqrt(h) eps``. The regression target is
``-(x' - alpha x) / h = -eps / sqrt(h)`` and the loss is the row mean of
``||s - target||^2``.
"""
from __future__ import annotations

import numpy as np


def dsm_loss_grad(X, Y, T, E, V, P, b, inv_nu2, want_grad=True):
    """Loss and gradients w.r.t. ``(V, P, b, inv_nu2)``.

    Returns ``(loss, gV, gP, gb, g_inv_nu2)``; the gradients are ``None``
    when ``want_grad`` is false. ``gP`` is symmetric.
    """
    n, D = X.shape
    d = V.shape[1]
    a = np.exp(-0.5 * T)
    hh = -np.expm1(-T)
    sq = np.sqrt(hh)
    Xp = a[:, None] * X + sq[:, None] * E
    U = Xp @ V
    k = hh * inv_nu2
    M = (a * a)[:, None, None] * np.eye(d) + (k[:, None, None] * np.outer(b, b)) + hh[:, None, None] * P
    R = a[:, None] * U + (k * Y)[:, None] * b
    W = np.linalg.solve(M, R[..., None])[..., 0]
    Psi = a[:, None] * W
    Err = (Psi @ V.T - Xp) / hh[:, None] + E / sq[:, None]
    loss = float(np.sum(Err * Err) / n)
    if not want_grad:
        return loss, None, None, None, None

    Gs = (2.0 / n) * Err / hh[:, None]
    gV = Gs.T @ Psi
    Q = Gs @ V
    Lam = np.linalg.solve(M, (a[:, None] * Q)[..., None])[..., 0]
    gV += (a[:, None] * Xp).T @ Lam
    lb = Lam @ b
    wb = W @ b
    gb = (k * Y) @ Lam - (k * wb) @ Lam - (k * lb) @ W
    g_inv = float(np.sum(hh * Y * lb) - np.sum(hh * lb * wb))
    S = (hh[:, None] * Lam).T @ W
    gP = -0.5 * (S + S.T)
    return loss, gV, gP, gb, g_inv

