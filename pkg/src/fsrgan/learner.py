"""Trainable generator with the same layout as the target."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .numerics import DEFAULT_SMOOTHING, SmoothingParams, smooth_leaky_relu
from .target import NetworkShape, Sample, deep_preactivation, default_parents, patch_matmul

__all__ = ["LearnerNetwork", "init_learner", "forward", "first_layer_weights"]


@dataclass
class LearnerNetwork:
    """Learner parameters.

    The first layer is stored as unit directions ``V1_dir`` (d_1, m_1, m0')
    times per-row norms ``alpha1`` (d_1, m_1). Other arrays follow the
    layout of :class:`~fsrgan.target.TargetNetwork`.
    """

    shape: NetworkShape
    W: list
    V1_dir: np.ndarray
    alpha1: np.ndarray
    V: list
    b: list
    parents: list
    meta: dict = field(default_factory=dict)

    def copy(self) -> "LearnerNetwork":
        return copy.deepcopy(self)


def first_layer_weights(net: LearnerNetwork) -> np.ndarray:
    return net.alpha1[..., None] * net.V1_dir


def init_learner(shape: NetworkShape, W_init, C_alpha: float | None = None) -> LearnerNetwork:
    """Initial learner: basis-vector first-layer directions, identity deep blocks.

    Every first-layer neuron gets its own latent coordinate, norm
    ``alpha = C_alpha`` (default ``k_1**2``) and bias
    ``alpha * sqrt(2 ln(m_1 C_alpha))``, so it fires with probability about
    ``1 / (m_1 C_alpha)``.
    """
    d1, m1 = shape.d_l[0], shape.m_l[0]
    if shape.m0_prime < 2 * d1 * m1:
        raise ValueError("m0_prime must be >= 2*d_1*m_1")
    W = [np.array(w, dtype=float, copy=True) for w in W_init]
    for l, w in enumerate(W):
        if w.shape != (shape.d_l[l], shape.d, shape.m_l[l]):
            raise ValueError(f"W_init[{l}] has shape {w.shape}")
        if not np.allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-8):
            raise ValueError(f"W_init[{l}] columns must have unit norm")
    alpha = float(C_alpha if C_alpha is not None else shape.k_l[0] ** 2)
    V1_dir = np.zeros((d1, m1, shape.m0_prime))
    idx = np.arange(d1 * m1).reshape(d1, m1)
    V1_dir[np.arange(d1)[:, None], np.arange(m1)[None, :], idx] = 1.0
    alpha1 = np.full((d1, m1), alpha)
    b = [alpha1 * np.sqrt(2.0 * np.log(m1 * alpha))]
    V, parents = [None], [None]
    for l in range(1, shape.L):
        ml, mp = shape.m_l[l], shape.m_l[l - 1]
        if ml != mp:
            raise ValueError("identity deep initialization needs m_l == m_{l-1}")
        V.append(np.tile(np.eye(ml), (shape.d_l[l], 1, 1, 1)))
        parents.append(default_parents(shape, l))
        b.append(np.zeros((shape.d_l[l], ml)))
    return LearnerNetwork(shape=shape, W=W, V1_dir=V1_dir, alpha1=alpha1, V=V, b=b, parents=parents)


def forward(net: LearnerNetwork, z, sp: SmoothingParams = DEFAULT_SMOOTHING, keep_pre: bool = False) -> Sample:
    """Run the learner on a batch of latents ``z`` of shape (n, m0')."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != net.shape.m0_prime:
        raise ValueError(f"latent must have length m0_prime={net.shape.m0_prime}")
    d1, m1 = net.shape.d_l[0], net.shape.m_l[0]
    pre = (z @ net.V1_dir.reshape(d1 * m1, -1).T).reshape(-1, d1, m1) * net.alpha1 - net.b[0]
    pres, S, X = [], [], []
    for l in range(net.shape.L):
        if l > 0:
            pre = deep_preactivation(S[l - 1], net.V[l], net.parents[l], net.b[l])
        s = smooth_leaky_relu(pre, sp)
        pres.append(pre)
        S.append(s)
        X.append(patch_matmul(s, net.W[l]))
    return Sample(z=z, S=S, X=X, pre=pres if keep_pre else None)
