import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from fsrgan.numerics import make_stream
from fsrgan.target import (
    AssumptionConfig, ConstructionError, NetworkShape, construct_generic, default_parents, patch_matmul,
    sample_at, sample_patches, sample_real, target_forward, verify_assumptions,
)


def test_shape_validation():
    with pytest.raises(ValueError):
        NetworkShape(L=1, d=8, d_l=(2,), m_l=(4,), m0=4, m0_prime=15, k_l=(2,))
    with pytest.raises(ValueError):
        NetworkShape(L=2, d=8, d_l=(2,), m_l=(4, 4), m0=4, m0_prime=16, k_l=(2, 2))
    with pytest.raises(ValueError):
        NetworkShape(L=1, d=3, d_l=(1,), m_l=(4,), m0=4, m0_prime=8, k_l=(2,))


def test_shape_dict_round_trip(tiny_shape):
    assert NetworkShape.from_dict(tiny_shape.to_dict()) == tiny_shape


def test_default_parents(tiny_shape):
    np.testing.assert_array_equal(default_parents(tiny_shape, 1).ravel(), [0, 0, 1, 1])


def test_generic_structure(tiny_target):
    net, sh = tiny_target, tiny_target.shape
    for l in range(sh.L):
        for j in range(sh.d_l[l]):
            np.testing.assert_allclose(net.W[l][j].T @ net.W[l][j], np.eye(sh.m_l[l]), atol=1e-12)
    for j in range(sh.d_l[0]):
        G = net.V1[j] @ net.V1[j].T
        np.testing.assert_allclose(G, 4.0 * np.eye(sh.m_l[0]), atol=1e-12)
    flat = net.V1.reshape(-1, sh.m0) / 2.0
    G = np.abs(flat @ flat.T)
    np.fill_diagonal(G, 0)
    assert G.max() <= 0.5
    rows = net.V[1].reshape(sh.d_l[1], sh.m_l[1], -1)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=-1), 1.5)
    # disjoint supports within a patch
    supp = (rows > 0).sum(axis=1)
    assert supp.max() <= 1


def test_first_layer_bias_is_gaussian_quantile(tiny_target):
    # Pr[2 <z, u> > b] = q  <=>  b = 2 * isf(q)
    np.testing.assert_allclose(tiny_target.b[0], 2.0 * norm.isf(0.1))


def test_forward_consistency(tiny_target):
    s = sample_real(tiny_target, 200, make_stream(0, "t"))
    for S, X, W in zip(s.S, s.X, tiny_target.W):
        assert np.all(S >= 0)
        np.testing.assert_allclose(X, np.einsum("jdm,njm->njd", W, S), atol=1e-12)
    one = sample_at(tiny_target, s.z[3])
    np.testing.assert_allclose(one.X[1][0], s.X[1][3])
    np.testing.assert_allclose(sample_patches(tiny_target, 200, make_stream(0, "t"), 1), s.X[1])


def test_forward_rejects_bad_latent(tiny_target):
    with pytest.raises(ValueError):
        target_forward(tiny_target, np.zeros(3))
    with pytest.raises(ValueError):
        sample_real(tiny_target, 0, make_stream(0))


def test_activation_probability_within_se(tiny_target):
    n = 100_000
    s = sample_real(tiny_target, n, make_stream(5, "prob"))
    se = np.sqrt(0.1 * 0.9 / n)
    assert np.abs((s.S[0] > 0).mean(0) - 0.1).max() <= 4 * se


@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(1, 6))
def test_patch_matmul_matches_einsum(P, q, r, n):
    g = np.random.default_rng(P * 100 + q * 10 + r)
    S, M = g.standard_normal((n, P, q)), g.standard_normal((P, r, q))
    np.testing.assert_allclose(patch_matmul(S, M), np.einsum("prq,npq->npr", M, S), atol=1e-12)


def test_construction_errors(tiny_shape):
    bad = NetworkShape(L=1, d=16, d_l=(2,), m_l=(8,), m0=4, m0_prime=32, k_l=(2,))
    with pytest.raises(ConstructionError):
        construct_generic(bad, 0.1, make_stream(0))
    with pytest.raises(ValueError):
        construct_generic(tiny_shape, 0.001, make_stream(0))


def test_construction_deterministic(tiny_shape):
    a = construct_generic(tiny_shape, 0.1, make_stream(2, "x"), calib_samples=5000)
    b = construct_generic(tiny_shape, 0.1, make_stream(2, "x"), calib_samples=5000)
    np.testing.assert_array_equal(a.V1, b.V1)
    np.testing.assert_array_equal(a.b[1], b.b[1])


def test_verify_assumptions_flags_violations(tiny_target):
    rep = verify_assumptions(tiny_target, 20_000, make_stream(0, "v"),
                             AssumptionConfig(prob_const=1.0, eps1=1e-9))
    assert not rep.ok
    assert any("co-activation" in f for f in rep.flags)
    assert rep.to_dict()["sample_count"] == 20_000
    with pytest.raises(ValueError):
        verify_assumptions(tiny_target, 10, make_stream(0))
