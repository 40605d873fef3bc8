"""Central-difference checks of every hand-derived discriminator gradient.

Each suite draws small random instances and compares the analytic gradient
with central differences. Per-channel objectives are checked against the
channel's own loss, matching how the training loops use them.

The instances use a wide smoothing window (``zeta = 0.2``). The gradient
formulas do not depend on ``zeta``, and a wide window keeps the third
derivative of the activations, and with it the truncation error of the
difference quotient, small.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminators import (
    D1State, D2State, D4State, D5State,
    d1_generator_loss_and_grad, d1_minmax_value_and_grads,
    d2_discriminator_loss_and_grad, d2_generator_loss_and_grad,
    d4_all_losses_and_grads, d5_loss_and_grad, d5_real_moments,
)
from .learner import forward, init_learner
from .numerics import SmoothingParams, make_stream
from .target import NetworkShape, patch_matmul

__all__ = ["GradCheckResult", "relative_error", "run_gradcheck", "SUITES"]

_SP = SmoothingParams(zeta=0.2, leak=0.05)
_SHAPE = NetworkShape(L=2, d=6, d_l=(2, 2), m_l=(3, 3), m0=4, m0_prime=12, k_l=(2, 2))


@dataclass
class GradCheckResult:
    name: str
    errors: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.errors <= self.tol))

    @property
    def worst(self) -> float:
        return float(np.max(self.errors))


def relative_error(g, g_fd, atol: float = 1e-8) -> float:
    g, g_fd = np.ravel(g), np.ravel(g_fd)
    return float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g), np.linalg.norm(g_fd), atol))


def _central(f, x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def _unit_cols(rng, P, d, m):
    W = rng.standard_normal((P, d, m))
    return W / np.linalg.norm(W, axis=1, keepdims=True)


def _random_learner(rng):
    sh = _SHAPE
    net = init_learner(sh, [_unit_cols(rng, sh.d_l[l], sh.d, sh.m_l[l]) for l in range(sh.L)], C_alpha=1.0)
    D = rng.standard_normal(net.V1_dir.shape)
    net.V1_dir = D / np.linalg.norm(D, axis=-1, keepdims=True)
    net.alpha1 = rng.uniform(0.5, 1.5, net.alpha1.shape)
    net.b[0] = rng.uniform(-0.2, 0.5, net.b[0].shape)
    net.V[1] = rng.uniform(0.0, 1.0, net.V[1].shape)
    net.b[1] = rng.uniform(-0.2, 0.3, net.b[1].shape)
    return net


def _real_patches(rng, n, l):
    sh = _SHAPE
    S = np.maximum(rng.standard_normal((n, sh.d_l[l], sh.m_l[l])), 0.0)
    return patch_matmul(S, _unit_cols(rng, sh.d_l[l], sh.d, sh.m_l[l]))


def _check_d1(rng, n, h):
    net = _random_learner(rng)
    st = D1State(WD=_unit_cols(rng, 2, 6, 3), bb=0.2, c_exp=float(rng.choice([1.0, 0.5])), sp=_SP)
    S = forward(net, rng.standard_normal((n, 12)), _SP).S[0]
    Xr = _real_patches(rng, n, 0)
    _, g = d1_generator_loss_and_grad(st, net.W[0], S, Xr)
    fd = _central(lambda W: d1_generator_loss_and_grad(st, W, S, Xr)[0].sum(), net.W[0], h)
    return relative_error(g, fd)


def _check_d1_minmax(rng, n, h):
    net = _random_learner(rng)
    st = D1State(WD=_unit_cols(rng, 2, 6, 3), bb=0.2, c_exp=1.0, sp=_SP)
    S = forward(net, rng.standard_normal((n, 12)), _SP).S[0]
    Xr = _real_patches(rng, n, 0)
    VD = rng.standard_normal((2, 3, 6))
    _, gV, gW = d1_minmax_value_and_grads(st, VD, net.W[0], S, Xr)
    fV = _central(lambda v: d1_minmax_value_and_grads(st, v, net.W[0], S, Xr)[0], VD, h)
    fW = _central(lambda W: d1_minmax_value_and_grads(st, VD, W, S, Xr)[0], net.W[0], h)
    return max(relative_error(gV, fV), relative_error(gW, fW))


def _own_fd(loss_of, x, h, owner_index):
    """Derivative of loss[owner] w.r.t. each entry, with owner given per entry."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        own = owner_index(i)
        old = x[i]
        x[i] = old + h
        fp = loss_of(x)[own]
        x[i] = old - h
        fm = loss_of(x)[own]
        x[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def _check_d4(rng, n, h):
    net = _random_learner(rng)
    st = D4State(WD=_unit_cols(rng, 2, 6, 3), b_thresh=0.1, K_asym=float(rng.uniform(1, 10)), sp=_SP)
    z = rng.standard_normal((n, 12))
    Xr = _real_patches(rng, n, 0)

    def with_params(alpha, b):
        trial = net.copy()
        trial.alpha1, trial.b[0] = alpha, b
        return d4_all_losses_and_grads(st, trial, z, Xr)

    _, ga, gb, _ = with_params(net.alpha1, net.b[0])
    fa = _own_fd(lambda a: with_params(a, net.b[0])[0], net.alpha1, h, lambda i: i)
    fb = _own_fd(lambda b: with_params(net.alpha1, b)[0], net.b[0], h, lambda i: i)
    return max(relative_error(ga, fa), relative_error(gb, fb))


def _check_d5(rng, n, h):
    net = _random_learner(rng)
    st = D5State(WD=_unit_cols(rng, 2, 6, 3), b_thresh=0.1, Cw_same=float(rng.uniform(1, 5)),
                 Cw_cross=float(rng.uniform(0.5, 2)), tau=0.2, temp=float(rng.uniform(0.5, 3)), sp=_SP)
    z = rng.standard_normal((n, 12))
    Tr = d5_real_moments(st, _real_patches(rng, n, 0))
    # push one pair of directions close together so the barrier is active
    D = net.V1_dir.copy()
    D[1, 0] = D[0, 0] + 0.25 * rng.standard_normal(12) / np.sqrt(12)
    D /= np.linalg.norm(D, axis=-1, keepdims=True)
    _, g, _ = d5_loss_and_grad(st, net, z, T_real=Tr, V1_dir=D)

    def retracted(x):
        return d5_loss_and_grad(st, net, z, T_real=Tr, V1_dir=x / np.linalg.norm(x, axis=-1, keepdims=True))[0]

    return relative_error(g, _central(retracted, D, h))


def _d2_state(rng, net):
    VD = rng.uniform(0.0, 1.0, net.V[1].shape)
    return D2State(WD_l=_unit_cols(rng, 2, 6, 3), WD_lm1=_unit_cols(rng, 2, 6, 3), parents=net.parents[1],
                   VD=VD, bD=rng.uniform(-0.2, 0.3, (2, 3)), lambda_D=float(rng.uniform(0, 0.1)),
                   lambda_G=float(rng.uniform(0, 0.1)), sp=_SP)


def _check_d2_disc(rng, n, h):
    net = _random_learner(rng)
    st = _d2_state(rng, net)
    Xl, Xlm1 = _real_patches(rng, n, 1), _real_patches(rng, n, 0)
    _, gV, gb = d2_discriminator_loss_and_grad(st, Xl, Xlm1)
    fV = _own_fd(lambda v: d2_discriminator_loss_and_grad(st, Xl, Xlm1, VD=v)[0], st.VD, h, lambda i: (i[0], i[2]))
    fb = _own_fd(lambda b: d2_discriminator_loss_and_grad(st, Xl, Xlm1, bD=b)[0], st.bD, h, lambda i: i)
    return max(relative_error(gV, fV), relative_error(gb, fb))


def _check_d2_gen(rng, n, h):
    net = _random_learner(rng)
    st = _d2_state(rng, net)
    S0 = forward(net, rng.standard_normal((n, 12)), _SP).S[0]
    _, gV, gb = d2_generator_loss_and_grad(st, net, 1, S0)
    fV = _own_fd(lambda v: d2_generator_loss_and_grad(st, net, 1, S0, V=v)[0], net.V[1], h, lambda i: (i[0], i[2]))
    fb = _own_fd(lambda b: d2_generator_loss_and_grad(st, net, 1, S0, b=b)[0], net.b[1], h, lambda i: i)
    return max(relative_error(gV, fV), relative_error(gb, fb))


SUITES = {
    "d1_generator": _check_d1,
    "d1_minmax": _check_d1_minmax,
    "d4": _check_d4,
    "d5": _check_d5,
    "d2_discriminator": _check_d2_disc,
    "d2_generator": _check_d2_gen,
}


def run_gradcheck(points: int = 50, seed: int = 0, n: int = 64, h: float = 1e-5, tol: float = 1e-4,
                  suites=None) -> list[GradCheckResult]:
    results = []
    for name in suites or SUITES:
        fn = SUITES[name]
        errs = np.array([fn(make_stream(seed, "gradcheck", name, i), n, h) for i in range(points)])
        results.append(GradCheckResult(name=name, errors=errs, tol=tol))
    return results
