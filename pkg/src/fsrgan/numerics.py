"""Scalar and matrix primitives shared by the rest of the package.

The smoothed activations are built from a triangular-hat second derivative
supported on ``[-zeta/4, zeta/4]`` with peak ``4/zeta`` and unit mass.
Integrating twice gives a C^2 convex function that coincides with ReLU
outside the window and deviates from it by at most ``zeta/24``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SmoothingParams",
    "smooth_relu",
    "smooth_relu_d1",
    "smooth_relu_d2",
    "smooth_leaky_relu",
    "smooth_leaky_relu_d1",
    "smooth_leaky_relu_d2",
    "smooth_abs",
    "smooth_abs_d1",
    "top_eig_sym",
    "procrustes",
    "match_columns",
    "make_stream",
]


@dataclass(frozen=True)
class SmoothingParams:
    """Smoothing half-window scale and negative-side slope of the leaky unit."""

    zeta: float = 1e-3
    leak: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.zeta) and self.zeta > 0):
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not (0.0 < self.leak < 0.5):
            raise ValueError(f"leak must lie in (0, 0.5), got {self.leak}")

    @property
    def half_width(self) -> float:
        return self.zeta / 4.0


DEFAULT_SMOOTHING = SmoothingParams()


def _checked(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("smoothed activations require finite input")
    return z


def _out(z_in, value):
    return float(value) if np.ndim(z_in) == 0 else value


def smooth_relu(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    """C^2 convex approximation of ``max(z, 0)``; exact outside ``|z| < zeta/4``."""
    x = _checked(z)
    a = sp.half_width
    c = np.clip(x, -a, a)
    left = (c + a) ** 3 / (6 * a * a)
    right = c + (a - c) ** 3 / (6 * a * a)
    out = np.where(x <= -a, 0.0, np.where(x >= a, x, np.where(x < 0, left, right)))
    return _out(z, out)


def smooth_relu_d1(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    a = sp.half_width
    c = np.clip(x, -a, a)
    left = (c + a) ** 2 / (2 * a * a)
    right = 1.0 - (a - c) ** 2 / (2 * a * a)
    out = np.where(x <= -a, 0.0, np.where(x >= a, 1.0, np.where(x < 0, left, right)))
    return _out(z, out)


def smooth_relu_d2(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    a = sp.half_width
    out = np.maximum(a - np.abs(x), 0.0) / (a * a)
    return _out(z, out)


def smooth_leaky_relu(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    out = (1.0 - sp.leak) * np.asarray(smooth_relu(x, sp)) + sp.leak * x
    return _out(z, out)


def smooth_leaky_relu_d1(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    out = (1.0 - sp.leak) * np.asarray(smooth_relu_d1(x, sp)) + sp.leak
    return _out(z, out)


def smooth_leaky_relu_d2(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    out = (1.0 - sp.leak) * np.asarray(smooth_relu_d2(x, sp))
    return _out(z, out)


def smooth_abs(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    """Even convex surrogate of ``|z|`` with minimum ``zeta/12`` at the origin."""
    x = _checked(z)
    out = np.asarray(smooth_relu(x, sp)) + np.asarray(smooth_relu(-x, sp))
    return _out(z, out)


def smooth_abs_d1(z, sp: SmoothingParams = DEFAULT_SMOOTHING):
    x = _checked(z)
    out = np.asarray(smooth_relu_d1(x, sp)) - np.asarray(smooth_relu_d1(-x, sp))
    return _out(z, out)


def top_eig_sym(H) -> tuple[float, np.ndarray, float]:
    """Largest eigenpair of a symmetric matrix and the gap to the second eigenvalue.

    The eigenvector's largest-magnitude coordinate is made positive. For a
    1x1 input the gap is reported as ``inf``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] == 0:
        raise ValueError(f"expected a non-empty square matrix, got shape {H.shape}")
    scale = max(np.linalg.norm(H), np.finfo(float).tiny)
    if np.linalg.norm(H - H.T) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
    lam = float(evals[-1])
    v = evecs[:, -1].copy()
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    gap = float(evals[-1] - evals[-2]) if len(evals) > 1 else float("inf")
    return lam, v, gap


def procrustes(A, B) -> np.ndarray:
    """Row-orthonormal ``U`` (p x q) minimizing ``||A - B U^T||_F``.

    Parameters
    ----------
    A : (n, p) array_like
    B : (n, q) array_like, with ``q >= p``

    Returns
    -------
    U : (p, q) ndarray with ``U U^T = I_p``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0] or A.shape[0] < 1:
        raise ValueError(f"incompatible shapes {A.shape} and {B.shape}")
    p, q = A.shape[1], B.shape[1]
    if p > q:
        raise ValueError(f"need p <= q, got p={p}, q={q}")
    # B^T A = P S Q^T  ->  U^T = P Q^T
    P, _, Qt = np.linalg.svd(B.T @ A, full_matrices=False)
    return (P @ Qt).T


def match_columns(W_star, W) -> tuple[np.ndarray, float]:
    """Greedy one-to-one matching of target columns to learner columns.

    Pairs are taken in descending order of inner product. Returns ``perm``
    with target column ``p`` matched to learner column ``perm[p]``, and the
    largest matched column distance.
    """
    W_star = np.asarray(W_star, dtype=float)
    W = np.asarray(W, dtype=float)
    if W_star.shape != W.shape or W.ndim != 2:
        raise ValueError(f"shape mismatch: {W_star.shape} vs {W.shape}")
    m = W.shape[1]
    G = W_star.T @ W
    order = np.argsort(-G, axis=None, kind="stable")
    perm = np.full(m, -1, dtype=int)
    used = np.zeros(m, dtype=bool)
    n_done = 0
    for flat in order:
        p, q = divmod(int(flat), m)
        if perm[p] >= 0 or used[q]:
            continue
        perm[p] = q
        used[q] = True
        n_done += 1
        if n_done == m:
            break
    err = float(np.max(np.linalg.norm(W_star - W[:, perm], axis=0))) if m else 0.0
    return perm, err


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def make_stream(seed: int, *key) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and a path of sub-keys.

    Streams with different key paths are statistically independent, and the
    same ``(seed, key)`` always reproduces the same draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
