"""Monte Carlo verification of a trained learner against the hidden target.

Learner channels are matched to target channels per patch by
:func:`~fsrgan.numerics.match_columns` on the output dictionaries, so every
metric is invariant to a relabeling of the learner's channels. Latents are
coupled through the first-layer Procrustes alignment ``U``: the learner sees
``z`` and the target sees ``U z``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .discriminators import decode
from .learner import LearnerNetwork, first_layer_weights, forward
from .numerics import (
    DEFAULT_SMOOTHING, SmoothingParams, make_stream, match_columns, procrustes, smooth_relu, smooth_relu_d1,
)
from .target import TargetNetwork, patch_matmul, sample_patches, sample_real, target_forward

__all__ = [
    "MetricsReport", "channel_matching", "w_col_errors", "estimate_U", "eval_theorem",
    "single_stats", "gram_gaps", "hidden_errors", "moment_gaps", "eval_lemma_metrics", "column_error_se",
]

MOMENT_ORDERS = (1, 2, 3)


@dataclass
class MetricsReport:
    """Every verification metric. Lists are indexed ``[layer][patch]...``."""

    w_col_err: list = field(default_factory=list)
    hidden_err: list = field(default_factory=list)
    hidden_tail: list = field(default_factory=list)
    single_stats_gap: dict = field(default_factory=dict)
    pair_moment_gap: dict = field(default_factory=dict)
    e2e_eps: dict = field(default_factory=dict)
    moment_traj: dict = field(default_factory=dict)
    U_residual: float = float("nan")
    context: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def channel_matching(target: TargetNetwork, learner: LearnerNetwork, l: int) -> np.ndarray:
    """``perm[j, p]`` is the learner channel matched to target channel ``p`` of patch ``j``."""
    return np.stack([match_columns(target.W[l][j], learner.W[l][j])[0] for j in range(target.shape.d_l[l])])


def w_col_errors(target: TargetNetwork, learner: LearnerNetwork, l: int) -> list:
    """Matched max column error of every patch dictionary of layer ``l``."""
    return [match_columns(target.W[l][j], learner.W[l][j])[1] for j in range(target.shape.d_l[l])]


def estimate_U(target: TargetNetwork, learner: LearnerNetwork):
    """Row-orthonormal coupling ``U`` (m0 x m0') from the first-layer rows.

    Solves ``min_U sum_j ||V*_1j - V_1j U^T||_F^2`` over matched rows.
    Returns ``(U, residual, rank_ok)``; ``rank_ok`` is False when the
    stacked learner rows span fewer than m0 directions, in which case the
    returned ``U`` is one of many minimizers.
    """
    perm = channel_matching(target, learner, 0)
    V = first_layer_weights(learner)
    A = target.V1.reshape(-1, target.shape.m0)
    B = np.concatenate([V[j, perm[j]] for j in range(target.shape.d_l[0])])
    U = procrustes(A, B)
    residual = float(np.linalg.norm(A - B @ U.T))
    rank_ok = bool(np.linalg.matrix_rank(B) >= target.shape.m0)
    return U, residual, rank_ok


def _coupled(target, learner, U, n, rng, sp):
    z = rng.standard_normal((n, target.shape.m0_prime))
    return forward(learner, z, sp), target_forward(target, z @ U.T)


def eval_theorem(target: TargetNetwork, learner: LearnerNetwork, U: np.ndarray, n: int, seed: int,
                 sp: SmoothingParams = DEFAULT_SMOOTHING) -> dict:
    """Distance ``max_{l,j} ||X_lj(z) - X*_lj(U z)||`` over coupled latents.

    Returns the mean, its standard error, the 99th percentile and the
    per-layer means of the per-layer maxima.
    """
    U = np.asarray(U, dtype=float)
    if np.max(np.abs(U @ U.T - np.eye(U.shape[0]))) > 1e-6:
        raise ValueError("U must be row-orthonormal")
    fake, real = _coupled(target, learner, U, n, make_stream(seed, "eval_theorem"), sp)
    per_layer = np.stack([np.linalg.norm(f - r, axis=-1).max(axis=1) for f, r in zip(fake.X, real.X)], axis=1)
    worst = per_layer.max(axis=1)
    return {
        "mean": float(worst.mean()),
        "se": float(worst.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        "p99": float(np.quantile(worst, 0.99)),
        "per_layer_mean": per_layer.mean(axis=0).tolist(),
    }


def single_stats(target, learner, b: float, n: int, seed: int, sp=DEFAULT_SMOOTHING) -> dict:
    """First-layer per-neuron activation probability and truncated mean gaps.

    Probabilities compare learner hidden codes with the matched target
    codes. Truncated means compare ``smooth_relu(s - b)`` of the patches
    decoded by the learner's own dictionary. Standard errors are of the
    difference of two independent means.
    """
    rng = make_stream(seed, "single_stats")
    perm = channel_matching(target, learner, 0)
    fake = forward(learner, rng.standard_normal((n, target.shape.m0_prime)), sp, keep_pre=False)
    real = sample_real(target, n, rng, upto=0)
    P = target.shape.d_l[0]
    Sf = np.stack([fake.S[0][:, j, perm[j]] for j in range(P)], axis=1)
    pf, pr = (Sf > 0).mean(0), (real.S[0] > 0).mean(0)
    se_p = np.sqrt(pf * (1 - pf) / n + pr * (1 - pr) / n)
    gf = smooth_relu(decode(fake.X[0], learner.W[0]) - b, sp)
    gr = smooth_relu(decode(real.X[0], learner.W[0]) - b, sp)
    se_e = np.sqrt(gf.var(0, ddof=1) / n + gr.var(0, ddof=1) / n)
    return {
        "prob_gap": np.abs(pf - pr), "prob_se": se_p,
        "mean_gap": np.abs(gf.mean(0) - gr.mean(0)), "mean_se": se_e,
    }


def gram_gaps(target: TargetNetwork, learner: LearnerNetwork) -> dict:
    """Largest within-patch and cross-patch gaps between matched first-layer Gram entries."""
    perm = channel_matching(target, learner, 0)
    P, m = target.shape.d_l[0], target.shape.m_l[0]
    V = first_layer_weights(learner)
    Vl = np.concatenate([V[j, perm[j]] for j in range(P)])
    Vs = target.V1.reshape(P * m, -1)
    G = np.abs(Vs @ Vs.T - Vl @ Vl.T)
    patch = np.repeat(np.arange(P), m)
    same = patch[:, None] == patch[None, :]
    off = ~np.eye(P * m, dtype=bool)
    return {
        "within": float(G[same & off].max()) if m > 1 else 0.0,
        "cross": float(G[~same].max()) if P > 1 else 0.0,
        "diag": float(np.diag(G).max()),
    }


def hidden_errors(target, learner, U, l: int, thresh: float, n: int, seed: int, sp=DEFAULT_SMOOTHING) -> dict:
    """Per-channel recovery of layer-``l`` hidden codes under the coupling.

    ``mean_abs[j][r]`` is ``E|S_ljr(z) - S*_ljr(U z)|`` and ``tail[j][r]`` is
    ``Pr[|S_ljr(z) - S*_ljr(U z)| > thresh]``, with ``r`` indexing target channels.
    """
    perm = channel_matching(target, learner, l)
    fake, real = _coupled(target, learner, U, n, make_stream(seed, "hidden", l), sp)
    P = target.shape.d_l[l]
    Sf = np.stack([fake.S[l][:, j, perm[j]] for j in range(P)], axis=1)
    diff = np.abs(Sf - real.S[l])
    return {"mean_abs": diff.mean(0), "tail": (diff > thresh).mean(0)}


def moment_gaps(target, learner, l: int, n: int, seed: int, sp=DEFAULT_SMOOTHING) -> dict:
    """Squared gaps of per-pixel raw moments of orders 1-3, per patch of layer ``l``.

    ``gaps[k][j] = sum_i (E[X_lji^k] - E[X*_lji^k])^2``.
    """
    rng = make_stream(seed, "moments", l)
    Xf = forward(learner, rng.standard_normal((n, target.shape.m0_prime)), sp).X[l]
    Xr = sample_real(target, n, rng, upto=l).X[l]
    return {k: ((Xf ** k).mean(0) - (Xr ** k).mean(0)).__pow__(2).sum(-1) for k in MOMENT_ORDERS}


def column_error_se(target, learner, l: int, bb: float, n: int, reps: int, seed: int, sp=DEFAULT_SMOOTHING,
                    chunk: int = 16_384) -> np.ndarray:
    """Monte Carlo standard error of the matched column error of a D1 estimate.

    Each repetition solves the frozen-weight D1 moment equations (decoder
    and generator both at the learner's dictionary, threshold ``bb``) on
    ``n`` fresh fake codes and real patches, normalizes the columns and
    records the matched max column error per patch. Returns the per-patch
    standard deviation over ``reps`` repetitions.
    """
    sh = target.shape
    W = learner.W[l]
    errs = []
    for rep in range(reps):
        rng = make_stream(seed, "column_se", l, rep)
        R_star = M = 0.0
        for lo in range(0, n, chunk):
            c = min(chunk, n - lo)
            S = forward(learner, rng.standard_normal((c, sh.m0_prime)), sp, keep_pre=False).S[l]
            X = sample_patches(target, c, rng, l)
            g_real = smooth_relu_d1(decode(X, W) - bb, sp)
            g_fake = smooth_relu_d1(decode(patch_matmul(S, W), W) - bb, sp)
            R_star = R_star + np.matmul(g_real.transpose(1, 2, 0), X.transpose(1, 0, 2))
            M = M + np.matmul(g_fake.transpose(1, 2, 0), S.transpose(1, 0, 2))
        W_hat = np.linalg.solve(M + 1e-12 * np.eye(M.shape[-1]), R_star).transpose(0, 2, 1)
        W_hat = W_hat / np.linalg.norm(W_hat, axis=1, keepdims=True)
        errs.append([match_columns(target.W[l][j], W_hat[j])[1] for j in range(sh.d_l[l])])
    return np.std(np.asarray(errs), axis=0, ddof=1)


def eval_lemma_metrics(target: TargetNetwork, learner: LearnerNetwork, U, stage_context: dict, n: int, seed: int,
                       sp: SmoothingParams = DEFAULT_SMOOTHING, U_residual: float = float("nan"),
                       moment_traj: dict | None = None) -> MetricsReport:
    """Fill a :class:`MetricsReport` by Monte Carlo with ``n`` samples.

    ``stage_context`` carries at least ``b`` (the final threshold); the
    hidden-code tail threshold is ``5 b``.
    """
    b = float(stage_context["b"])
    sh = target.shape
    rep = MetricsReport(context=dict(stage_context), U_residual=U_residual, moment_traj=moment_traj or {})
    rep.w_col_err = [w_col_errors(target, learner, l) for l in range(sh.L)]
    for l in range(sh.L):
        h = hidden_errors(target, learner, U, l, 5 * b, n, seed, sp)
        rep.hidden_err.append(h["mean_abs"])
        rep.hidden_tail.append(h["tail"])
    rep.single_stats_gap = single_stats(target, learner, b, n, seed, sp)
    rep.pair_moment_gap = gram_gaps(target, learner)
    rep.e2e_eps = eval_theorem(target, learner, U, n, seed, sp)
    return rep
