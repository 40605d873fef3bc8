"""Shared builders for the test suite."""
import numpy as np

from fsrgan.learner import LearnerNetwork


def clone_learner(target, U0=None, W=None):
    """Learner equal to ``target`` under the coupling ``z -> U0 z``.

    ``U0`` is (m0, m0') row-orthonormal; the default pads with zeros.
    """
    sh = target.shape
    if U0 is None:
        U0 = np.eye(sh.m0, sh.m0_prime)
    V1 = target.V1 @ U0
    alpha = np.linalg.norm(V1, axis=-1)
    return LearnerNetwork(
        shape=sh,
        W=[np.array(w, copy=True) for w in (target.W if W is None else W)],
        V1_dir=V1 / alpha[..., None],
        alpha1=alpha,
        V=[None if v is None else np.array(v, copy=True) for v in target.V],
        b=[np.array(b, copy=True) for b in target.b],
        parents=[None if p is None else np.array(p, copy=True) for p in target.parents],
    )


def random_row_orthonormal(rng, p, q):
    return np.linalg.qr(rng.standard_normal((q, p)))[0].T
