import numpy as np
import pytest

from fsrgan.evaluation import (
    channel_matching, column_error_se, estimate_U, eval_lemma_metrics, eval_theorem, gram_gaps, hidden_errors, moment_gaps,
    single_stats, w_col_errors,
)
from fsrgan.learner import init_learner
from fsrgan.numerics import SmoothingParams, make_stream

from helpers import clone_learner, random_row_orthonormal

SP = SmoothingParams(zeta=1e-6, leak=1e-6)


@pytest.fixture(scope="module")
def planted(tiny_target):
    U0 = random_row_orthonormal(make_stream(9, "U0"), 16, 16)
    return U0, clone_learner(tiny_target, U0)


def _permuted(L, rng):
    """Relabel every channel of every patch consistently."""
    P = L.copy()
    sh = L.shape
    perms = [[rng.permutation(sh.m_l[l]) for _ in range(sh.d_l[l])] for l in range(sh.L)]
    for j, p in enumerate(perms[0]):
        P.W[0][j] = L.W[0][j][:, p]
        P.V1_dir[j], P.alpha1[j], P.b[0][j] = L.V1_dir[j][p], L.alpha1[j][p], L.b[0][j][p]
    for j, p in enumerate(perms[1]):
        q = perms[0][L.parents[1][j, 0]]
        P.W[1][j] = L.W[1][j][:, p]
        P.V[1][j, 0] = L.V[1][j, 0][np.ix_(p, q)]
        P.b[1][j] = L.b[1][j][p]
    return P


def _flat(x):
    if isinstance(x, dict):
        return [v for k in sorted(x) for v in _flat(x[k])]
    if isinstance(x, (list, tuple)):
        return [v for y in x for v in _flat(y)]
    return [x]


def test_estimate_U_recovers_planted(tiny_target, planted):
    U0, L = planted
    U, resid, ok = estimate_U(tiny_target, L)
    # 8 stacked rows cannot pin down a 16 x 16 coupling, only its action on them
    assert not ok and resid <= 1e-8
    B = tiny_target.V1.reshape(-1, 16)
    np.testing.assert_allclose(B @ U, B @ U0, atol=1e-8)


def test_identity_embedding(tiny_target):
    U, resid, _ = estimate_U(tiny_target, clone_learner(tiny_target))
    B = tiny_target.V1.reshape(-1, 16)
    assert resid <= 1e-10
    np.testing.assert_allclose(B @ U, B, atol=1e-10)


def test_estimate_U_row_orthonormal_for_untrained(tiny_target):
    L = init_learner(tiny_target.shape, tiny_target.W)
    U, resid, ok = estimate_U(tiny_target, L)
    np.testing.assert_allclose(U @ U.T, np.eye(16), atol=1e-8)
    assert resid > 0.5 * np.linalg.norm(tiny_target.V1)


def test_perfect_coupling(tiny_target, planted):
    U0, L = planted
    e = eval_theorem(tiny_target, L, U0, 2000, 0, SP)
    assert e["mean"] <= 1e-4 and e["p99"] <= 1e-4
    g = gram_gaps(tiny_target, L)
    assert max(g.values()) <= 1e-10
    h = hidden_errors(tiny_target, L, U0, 1, 0.1, 2000, 0, SP)
    assert h["tail"].max() == 0.0


def test_perfect_learner_gaps_within_noise(tiny_target, planted):
    _, L = planted
    n = 20_000
    s = single_stats(tiny_target, L, 0.2, n, 0, SP)
    assert np.all(s["prob_gap"] <= 4 * s["prob_se"] + 1e-12)
    assert np.all(s["mean_gap"] <= 4 * s["mean_se"] + 1e-12)
    mg = moment_gaps(tiny_target, L, 1, n, 0, SP)
    assert set(mg) == {1, 2, 3}
    assert max(v.max() for v in mg.values()) < 0.05


def test_theorem_rejects_non_orthonormal(tiny_target, planted):
    with pytest.raises(ValueError):
        eval_theorem(tiny_target, planted[1], 2 * np.eye(16), 10, 0)


def test_column_perturbation_is_reported_exactly(tiny_target, planted):
    L = planted[1].copy()
    u = np.zeros(16)
    u[3] = 1.0
    u -= L.W[0][1] @ (L.W[0][1].T @ u)
    u /= np.linalg.norm(u)
    L.W[0][1][:, 2] += 0.1 * u
    errs = w_col_errors(tiny_target, L, 0)
    assert errs[1] == pytest.approx(0.1, abs=1e-10)
    assert errs[0] <= 1e-12


def test_metrics_permutation_consistent(tiny_target, planted):
    U0, L = planted
    L = L.copy()
    L.W[0] = L.W[0] + 0.02 * make_stream(3).standard_normal(L.W[0].shape)
    L.alpha1 = L.alpha1 * 1.1
    P = _permuted(L, make_stream(4))
    perm = channel_matching(tiny_target, P, 0)
    assert not np.array_equal(perm, channel_matching(tiny_target, L, 0))
    ctx = {"b": 0.2}
    a = eval_lemma_metrics(tiny_target, L, U0, ctx, 2000, 0, SP).to_dict()
    b = eval_lemma_metrics(tiny_target, P, U0, ctx, 2000, 0, SP).to_dict()
    for key in ("w_col_err", "hidden_err", "hidden_tail", "pair_moment_gap", "e2e_eps"):
        assert _flat(a[key]) == pytest.approx(_flat(b[key]), rel=1e-9, abs=1e-12), key


def test_procrustes_U_beats_random_couplings(tiny_target):
    L = clone_learner(tiny_target, random_row_orthonormal(make_stream(5), 16, 16))
    L.alpha1 = L.alpha1 * 0.9
    U, _, _ = estimate_U(tiny_target, L)
    best = eval_theorem(tiny_target, L, U, 2000, 0, SP)["mean"]
    rng = make_stream(6)
    for _ in range(20):
        R = random_row_orthonormal(rng, 16, 16)
        assert eval_theorem(tiny_target, L, R, 2000, 0, SP)["mean"] >= best


def test_report_is_json_plain(tiny_target, planted):
    rep = eval_lemma_metrics(tiny_target, planted[1], planted[0], {"b": 0.2}, 500, 0, SP)
    import json
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["context"]["b"] == 0.2
    assert all(v >= 0 for row in d["w_col_err"] for v in row)


def test_column_se_shrinks_with_sample_size(tiny_target):
    L = clone_learner(tiny_target)
    small = column_error_se(tiny_target, L, 0, 0.1, 2000, 10, 0, SP)
    big = column_error_se(tiny_target, L, 0, 0.1, 8000, 10, 0, SP, chunk=3000)
    assert small.shape == (2,)
    # a fourfold sample increase should roughly halve the spread
    assert 1.3 < small.mean() / big.mean() < 3.5
