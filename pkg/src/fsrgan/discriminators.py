"""Objectives of the four discriminator families with hand-derived gradients.

Every function works on all patches of a layer at once. Per-channel losses
depend on other channels only through dictionary crosstalk, and gradients
are returned for each channel's *own* parameters (the gradient of its own
loss), which is what the parallel per-channel training loops need.

Array conventions: real and fake patches ``X`` are ``(n, P, d)``, hidden
codes ``S`` are ``(n, P, m)``, dictionaries are ``(P, d, m)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .numerics import (
    DEFAULT_SMOOTHING,
    SmoothingParams,
    smooth_abs,
    smooth_abs_d1,
    smooth_leaky_relu,
    smooth_leaky_relu_d1,
    smooth_relu,
    smooth_relu_d1,
    smooth_relu_d2,
)
from .target import patch_matmul

__all__ = [
    "D1State", "d1_moment_vectors", "d1_generator_loss_and_grad", "d1_reg_weight",
    "d1_minmax_value_and_grads", "d1_best_response", "d1_fixed_point",
    "D4State", "d4_rho", "d4_all_losses_and_grads", "d4_loss_and_grads", "d4_dual_value",
    "D5State", "d5_pair_weights", "d5_loss_and_grad", "tangent_project",
    "D2State", "d2_discriminator_loss_and_grad", "d2_generator_loss_and_grad", "d2_regression_target",
    "decode",
]


def decode(X: np.ndarray, WD: np.ndarray) -> np.ndarray:
    """``[WD_j^T X_j]`` for every patch: (n, P, d) x (P, d, m) -> (n, P, m)."""
    return patch_matmul(X, WD.transpose(0, 2, 1))


def _mean_outer(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-patch ``mean_n A[n,p]^T B[n,p]``: (n,P,a), (n,P,b) -> (P,a,b)."""
    return np.matmul(A.transpose(1, 2, 0), B.transpose(1, 0, 2)) / A.shape[0]


# ---------------------------------------------------------------------------
# output layer


@dataclass
class D1State:
    WD: np.ndarray
    bb: float
    c_exp: float = 1.0
    sp: SmoothingParams = DEFAULT_SMOOTHING

    def __post_init__(self):
        if not self.c_exp > 0:
            raise ValueError("c_exp must be positive")
        if not self.bb > 0:
            raise ValueError("threshold must be positive")


def d1_moment_vectors(state: D1State, X_real: np.ndarray, X_fake: np.ndarray):
    """Truncated first moments ``R*_r`` and ``R_r``, each (P, m, d)."""
    out = []
    for X in (X_real, X_fake):
        g = smooth_relu_d1(decode(X, state.WD) - state.bb, state.sp)
        out.append(_mean_outer(g, X))
    return out[0], out[1]


def _d1_backprop(state: D1State, G: np.ndarray, S: np.ndarray, X: np.ndarray) -> np.ndarray:
    # gradient wrt W of -sum_r <G_r, R_r> with X = W S
    s = decode(X, state.WD) - state.bb
    f1 = smooth_relu_d1(s, state.sp)
    f2 = smooth_relu_d2(s, state.sp)
    GX = patch_matmul(X, G)
    a = patch_matmul(f2 * GX, state.WD) + patch_matmul(f1, G.transpose(0, 2, 1))
    return -_mean_outer(a, S)


def d1_generator_loss_and_grad(state: D1State, W: np.ndarray, S_fake: np.ndarray, X_real: np.ndarray):
    """Closed-form D1 loss ``sum_r ||R*_r - R_r||^(1 + 1/c)`` and its gradient in ``W``.

    Returns ``(loss_per_patch (P,), grad (P, d, m))``.
    """
    X_fake = patch_matmul(S_fake, W)
    R_star, R = d1_moment_vectors(state, X_real, X_fake)
    p = 1.0 + 1.0 / state.c_exp
    D = R_star - R
    nrm = np.linalg.norm(D, axis=-1)
    loss = np.sum(nrm ** p, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(nrm > 0, p * nrm ** (p - 2.0), 0.0)
    G = coef[..., None] * D
    return loss, _d1_backprop(state, G, S_fake, X_fake)


def d1_fixed_point(state: D1State, W: np.ndarray, S_fake: np.ndarray, X_real: np.ndarray, ridge: float = 1e-3):
    """Dictionary that zeroes ``R*_r - R_r`` with the truncation weights frozen at ``W``.

    The fake moment is linear in ``W`` once the weights ``g_r`` are fixed,
    ``R = M W^T`` with ``M_rq = E[g_r S_q]``, so the root is
    ``W^T = M^{-1} R*``. The solve is damped toward the current ``W`` by
    ``ridge`` times the mean diagonal of ``M``, which keeps rarely active
    channels in place and leaves the root unchanged.
    Returns ``(W_star (P, d, m), residual (P,))``.
    """
    X_fake = patch_matmul(S_fake, W)
    R_star = _mean_outer(smooth_relu_d1(decode(X_real, state.WD) - state.bb, state.sp), X_real)
    M = _mean_outer(smooth_relu_d1(decode(X_fake, state.WD) - state.bb, state.sp), S_fake)
    Wt = W.transpose(0, 2, 1)
    resid = np.sum((R_star - np.matmul(M, Wt)) ** 2, axis=(1, 2))
    lam = ridge * np.trace(M, axis1=1, axis2=2)[:, None, None] / M.shape[-1] + 1e-12
    eye = np.eye(M.shape[-1])
    W_star = np.linalg.solve(M + lam * eye, R_star + lam * Wt).transpose(0, 2, 1)
    return W_star, resid


def d1_reg_weight(c_exp: float) -> float:
    """Regularizer weight making the inner maximum equal ``||Delta||^(1+1/c)``."""
    return (c_exp / (1.0 + c_exp)) ** c_exp / (1.0 + c_exp)


def d1_best_response(state: D1State, R_star: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Maximizer of ``<v, Delta> - lam ||v||^(1+c)`` for every channel."""
    D = R_star - R
    nrm = np.linalg.norm(D, axis=-1, keepdims=True)
    lam = d1_reg_weight(state.c_exp)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > 0, (nrm / (lam * (1 + state.c_exp))) ** (1.0 / state.c_exp) / nrm, 0.0)
    return scale * D


def d1_minmax_value_and_grads(state: D1State, VD: np.ndarray, W: np.ndarray, S_fake: np.ndarray, X_real: np.ndarray):
    """Raw min-max form ``sum_r <VD_r, R*_r - R_r> - lam ||VD_r||^(1+c)``.

    Returns ``(value, grad_VD, grad_W)``; the discriminator ascends, the
    generator descends.
    """
    X_fake = patch_matmul(S_fake, W)
    R_star, R = d1_moment_vectors(state, X_real, X_fake)
    lam = d1_reg_weight(state.c_exp)
    c = state.c_exp
    nv = np.linalg.norm(VD, axis=-1, keepdims=True)
    value = float(np.sum(VD * (R_star - R)) - lam * np.sum(nv ** (1 + c)))
    with np.errstate(divide="ignore", invalid="ignore"):
        reg = np.where(nv > 0, lam * (1 + c) * nv ** (c - 1.0), 0.0) * VD
    grad_VD = (R_star - R) - reg
    grad_W = _d1_backprop(state, VD, S_fake, X_fake)
    return value, grad_VD, grad_W


# ---------------------------------------------------------------------------
# first layer, single neuron statistics


@dataclass
class D4State:
    """``sp`` is the learner's activation smoothing. ``stat_zeta``, when set,
    widens the window of the smoothed ReLU and step inside the statistics;
    the gradient of the step statistic is a Monte Carlo average of a spike
    of height ``4 / zeta``."""

    WD: np.ndarray
    b_thresh: float
    K_asym: float
    sp: SmoothingParams = DEFAULT_SMOOTHING
    stat_zeta: float | None = None

    @property
    def stat_sp(self) -> SmoothingParams:
        return self.sp if self.stat_zeta is None else SmoothingParams(zeta=self.stat_zeta, leak=self.sp.leak)


def d4_rho(t, K):
    t = np.asarray(t, dtype=float)
    return np.where(t < 0, K * t * t, t * t)


def _d4_rho_d1(t, K):
    return np.where(t < 0, 2 * K * t, 2 * t)


def d4_dual_value(v, delta, K):
    """``max_v v*delta - R_K(v)`` evaluated at a given ``v``; maximizing over
    ``v`` recovers ``rho(delta)``."""
    v = np.asarray(v, dtype=float)
    reg = np.where(v >= 0, v * v / 4.0, v * v / (4.0 * K))
    return v * delta - reg


def _real_single_stats(state, X_real):
    s = decode(X_real, state.WD) - state.b_thresh
    return smooth_relu(s, state.stat_sp).mean(axis=0), smooth_relu_d1(s, state.stat_sp).mean(axis=0)


def d4_all_losses_and_grads(state: D4State, learner, z: np.ndarray, X_real: np.ndarray = None, real_stats=None):
    """Per-neuron D4 losses (d1, m1) and own gradients in ``alpha1`` and ``b[0]``.

    ``real_stats`` may carry precomputed real-side means.
    """
    sp = state.sp
    if real_stats is None:
        real_stats = _real_single_stats(state, X_real)
    mv_star, md_star = real_stats
    d1, m1 = learner.shape.d_l[0], learner.shape.m_l[0]
    u = (z @ learner.V1_dir.reshape(d1 * m1, -1).T).reshape(-1, d1, m1)
    pre = u * learner.alpha1 - learner.b[0]
    S = smooth_leaky_relu(pre, sp)
    M = np.matmul(state.WD.transpose(0, 2, 1), learner.W[0])
    s = patch_matmul(S, M) - state.b_thresh
    ssp = state.stat_sp
    g0, g1, g2 = smooth_relu(s, ssp), smooth_relu_d1(s, ssp), smooth_relu_d2(s, ssp)
    d_val = g0.mean(axis=0) - mv_star
    d_der = g1.mean(axis=0) - md_star
    loss = d4_rho(d_val, state.K_asym) + d4_rho(d_der, state.K_asym)
    ds_dpre = np.diagonal(M, axis1=1, axis2=2) * smooth_leaky_relu_d1(pre, sp)
    w = _d4_rho_d1(d_val, state.K_asym) * g1 + _d4_rho_d1(d_der, state.K_asym) * g2
    dl_dpre = (w * ds_dpre).mean(axis=0)
    grad_b = -dl_dpre
    grad_alpha = (w * ds_dpre * u).mean(axis=0)
    return loss, grad_alpha, grad_b, (d_val, d_der)


def d4_loss_and_grads(state: D4State, learner, X_real: np.ndarray, z: np.ndarray, j: int, r: int):
    """D4 objective of neuron ``(j, r)`` and its gradient in ``(alpha, b)`` of that neuron."""
    loss, ga, gb, _ = d4_all_losses_and_grads(state, learner, z, X_real)
    return float(loss[j, r]), float(ga[j, r]), float(gb[j, r])


# ---------------------------------------------------------------------------
# first layer, cross-neuron moments


@dataclass
class D5State:
    WD: np.ndarray
    b_thresh: float
    Cw_same: float
    Cw_cross: float
    tau: float = 0.2
    temp: float = 1.0
    softness: float = 0.01
    sp: SmoothingParams = DEFAULT_SMOOTHING


def d5_pair_weights(state: D5State, d1: int, m1: int) -> np.ndarray:
    patch = np.repeat(np.arange(d1), m1)
    C = np.where(patch[:, None] == patch[None, :], state.Cw_same, state.Cw_cross)
    np.fill_diagonal(C, 0.0)
    return C


def tangent_project(G: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Remove from each row of ``G`` its component along the unit row of ``D``."""
    return G - np.sum(G * D, axis=-1, keepdims=True) * D


def _d5_features(state, X):
    return smooth_relu(decode(X, state.WD) - state.b_thresh, state.sp)


def d5_real_moments(state: D5State, X_real: np.ndarray) -> np.ndarray:
    F = _d5_features(state, X_real).reshape(X_real.shape[0], -1)
    return F.T @ F / F.shape[0]


def d5_loss_and_grad(state: D5State, learner, z: np.ndarray, X_real: np.ndarray = None, T_real=None,
                     V1_dir: np.ndarray = None):
    """Log-partition moment objective plus correlation barrier.

    Returns ``(loss, tangent gradient over V1_dir (d1, m1, m0'), info)``.
    ``V1_dir`` overrides the learner's directions (rows must be unit).
    """
    sp = state.sp
    D = learner.V1_dir if V1_dir is None else V1_dir
    d1, m1, m0p = D.shape
    norms = np.linalg.norm(D, axis=-1)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise ValueError("first-layer directions must have unit norm")
    if T_real is None:
        T_real = d5_real_moments(state, X_real)
    n = z.shape[0]
    u = (z @ D.reshape(d1 * m1, -1).T).reshape(n, d1, m1)
    pre = u * learner.alpha1 - learner.b[0]
    S = smooth_leaky_relu(pre, sp)
    M = np.matmul(state.WD.transpose(0, 2, 1), learner.W[0])
    s = patch_matmul(S, M) - state.b_thresh
    F = smooth_relu(s, sp).reshape(n, -1)
    T_fake = F.T @ F / n
    C = d5_pair_weights(state, d1, m1)
    iu = np.triu_indices(d1 * m1, 1)
    gap = (T_real - T_fake)[iu]
    x = state.temp * C[iu] * gap
    lse = logsumexp(np.concatenate([x, -x]))
    moment_loss = lse / state.temp
    # d loss / d gap = 2 C sinh(beta C gap) / Z
    w = C[iu] * (np.exp(x - lse) - np.exp(-x - lse))
    Omega = np.zeros((d1 * m1, d1 * m1))
    Omega[iu] = w
    Omega = Omega + Omega.T
    dF = -(F @ Omega) / n
    ds = dF.reshape(n, d1, m1) * smooth_relu_d1(s, sp)
    dS = patch_matmul(ds, M.transpose(0, 2, 1))
    dpre = dS * smooth_leaky_relu_d1(pre, sp) * learner.alpha1
    grad = np.matmul(dpre.reshape(n, -1).T, z).reshape(d1, m1, m0p)

    flat = D.reshape(d1 * m1, m0p)
    Gram = flat @ flat.T
    E = np.exp((np.abs(Gram) - (1.0 - state.tau)) / state.softness)
    np.fill_diagonal(E, 0.0)
    barrier = 0.5 * float(E.sum())
    B = E * np.sign(Gram) / state.softness
    grad = grad + (B @ flat).reshape(d1, m1, m0p)
    info = {"moment_loss": float(moment_loss), "barrier": barrier, "max_abs_gap": float(np.abs(gap).max())}
    return float(moment_loss + barrier), tangent_project(grad, D), info


# ---------------------------------------------------------------------------
# deeper layers, super-resolution


@dataclass
class D2State:
    WD_l: np.ndarray
    WD_lm1: np.ndarray
    parents: np.ndarray
    VD: np.ndarray
    bD: np.ndarray
    lambda_D: float = 1e-4
    lambda_G: float = 1e-4
    sp: SmoothingParams = DEFAULT_SMOOTHING


def _parent_decode(state: D2State, X_lm1: np.ndarray) -> np.ndarray:
    # decoded parent codes, one block per parent slot: (n, P, n_par, m_{l-1})
    dec = decode(X_lm1, state.WD_lm1)
    return np.stack([dec[:, state.parents[:, p], :] for p in range(state.parents.shape[1])], axis=2)


def _super_res(state: D2State, VD, bD, parent_dec):
    return np.einsum("njpq,jprq->njr", parent_dec, VD) - bD


def d2_discriminator_loss_and_grad(state: D2State, X_l_real: np.ndarray, X_lm1_real: np.ndarray,
                                   VD: np.ndarray = None, bD: np.ndarray = None):
    """Regression of the real super-resolution map.

    Returns ``(loss (P, m), grad_VD (P, n_par, m, m_{l-1}), grad_bD (P, m))``;
    each channel's loss involves only its own row of ``VD`` and entry of ``bD``.
    """
    VD = state.VD if VD is None else VD
    bD = state.bD if bD is None else bD
    sp = state.sp
    s_star = decode(X_l_real, state.WD_l)
    pdec = _parent_decode(state, X_lm1_real)
    ss = _super_res(state, VD, bD, pdec)
    resid = s_star - smooth_leaky_relu(ss, sp)
    loss = smooth_abs(resid, sp).mean(axis=0) + state.lambda_D * np.sum(VD ** 2, axis=(1, 3))
    g = -smooth_abs_d1(resid, sp) * smooth_leaky_relu_d1(ss, sp)
    n = g.shape[0]
    grad_VD = np.einsum("njr,njpq->jprq", g, pdec) / n + 2 * state.lambda_D * VD
    grad_bD = -g.mean(axis=0)
    return loss, grad_VD, grad_bD


def d2_regression_target(state: D2State, X_l_real: np.ndarray, X_lm1_real: np.ndarray, tau: float):
    """Ridge least-squares fit of the real super-resolution map on its active set.

    For each channel ``(j, r)`` regresses the decoded code ``s*_r`` on the
    decoded parent codes over the samples with ``s*_r > tau``, with ridge
    weight ``lambda_D``. In the zero-leak limit this is the minimizer of the
    discriminator regression restricted to samples where the real channel
    fires. Channels with fewer active samples than unknowns keep their
    current ``VD`` row and ``bD``.

    Returns ``(VD_star like VD, bD_star (P, m))``.
    """
    s_star = decode(X_l_real, state.WD_l)
    pdec = _parent_decode(state, X_lm1_real)
    n, P, n_par, mp = pdec.shape
    m = s_star.shape[-1]
    VD = np.array(state.VD, dtype=float, copy=True)
    bD = np.array(state.bD, dtype=float, copy=True)
    reg = state.lambda_D * np.eye(n_par * mp + 1)
    for j in range(P):
        A = np.concatenate([pdec[:, j].reshape(n, -1), -np.ones((n, 1))], axis=1)
        for r in range(m):
            sel = s_star[:, j, r] > tau
            cnt = int(sel.sum())
            if cnt <= A.shape[1]:
                continue
            As = A[sel]
            x = np.linalg.solve(As.T @ As / cnt + reg, As.T @ s_star[sel, j, r] / cnt)
            VD[j, :, r] = x[:-1].reshape(n_par, mp)
            bD[j, r] = x[-1]
    return VD, bD


def d2_generator_loss_and_grad(state: D2State, learner, l: int, S_lm1: np.ndarray,
                               V: np.ndarray = None, b: np.ndarray = None):
    """Distillation of the generator's layer ``l`` against the frozen discriminator.

    ``S_lm1`` holds the generator's own layer ``l-1`` codes (n, d_{l-1}, m_{l-1}).
    Returns ``(loss (P, m), grad_V like V[l], grad_b (P, m))`` with each
    channel's gradient taken over its own row and bias.
    """
    sp = state.sp
    V = learner.V[l] if V is None else V
    b = learner.b[l] if b is None else b
    parents = learner.parents[l]
    par = np.stack([S_lm1[:, parents[:, p], :] for p in range(parents.shape[1])], axis=2)
    pre = np.einsum("njpq,jprq->njr", par, V) - b
    S = smooth_leaky_relu(pre, sp)
    M = np.matmul(state.WD_l.transpose(0, 2, 1), learner.W[l])
    s = patch_matmul(S, M)
    X_lm1 = patch_matmul(S_lm1, learner.W[l - 1])
    fs = _super_res(state, state.VD, state.bD, _parent_decode(state, X_lm1))
    resid = s - smooth_leaky_relu(fs, sp)
    loss = smooth_abs(resid, sp).mean(axis=0) + state.lambda_G * np.sum(V ** 2, axis=(1, 3))
    g = smooth_abs_d1(resid, sp) * np.diagonal(M, axis1=1, axis2=2) * smooth_leaky_relu_d1(pre, sp)
    n = g.shape[0]
    grad_V = np.einsum("njr,njpq->jprq", g, par) / n + 2 * state.lambda_G * V
    grad_b = -g.mean(axis=0)
    return loss, grad_V, grad_b
