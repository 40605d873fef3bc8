"""Acceptance criteria 1-11 on the shipped desk-scale configuration.

Every criterion prints one ``CRITERION n: PASS|FAIL`` line. The full
pipeline runs once through the CLI (warm start, train, eval) and a second
time from scratch for the determinism check, so the module takes roughly
three quarters of an hour on one core.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from fsrgan.cli import main
from fsrgan.config import desk_config
from fsrgan.discriminators import decode
from fsrgan.evaluation import column_error_se, w_col_errors
from fsrgan.numerics import (
    smooth_abs, smooth_abs_d1, smooth_leaky_relu, smooth_leaky_relu_d1, smooth_relu,
    smooth_relu_d1, smooth_relu_d2,
)
from fsrgan.pipeline import _resolve_bb, stage_thresholds
from fsrgan.serialization import load_network
from fsrgan.target import sample_patches

pytestmark = pytest.mark.acceptance

CFG = desk_config()
SHAPE = CFG.shape
B_FINAL = stage_thresholds(SHAPE.m_l[0], CFG.schedule, CFG.schedule.T_stages)


def report(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def cli(out: Path, *args) -> tuple[int, float]:
    t = time.perf_counter()
    code = main([args[0], "--out", str(out), *args[1:]])
    return code, time.perf_counter() - t


def _pipeline(out: Path) -> dict:
    times = {}
    for cmd in ("gen-target", "warm-start", "train", "eval"):
        extra = ("--learner", str(out / "initial.net.json")) if cmd == "train" else ()
        code, times[cmd] = cli(out, cmd, *extra)
        if code != 0:
            raise RuntimeError(f"{cmd} exited with {code}")
    return times


@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    return out, _pipeline(out)


@pytest.fixture(scope="module")
def metrics(run_a):
    return json.loads((run_a[0] / "metrics.json").read_text())


@pytest.fixture(scope="module")
def target(run_a):
    return load_network(run_a[0] / "target.net.json")


def _stage_records(out: Path, layer: int) -> list:
    recs = [json.loads(p.read_text()) for p in (out / "stages").glob(f"layer{layer + 1}_stage*.stage.json")]
    return sorted(recs, key=lambda r: r["stage"])


# ---------------------------------------------------------------------------


def test_criterion_01_activations(capsys):
    t0 = time.perf_counter()
    sp = CFG.smoothing
    zeta, leak = sp.zeta, sp.leak
    z = np.linspace(-1.0, 1.0, 100_001)
    f, f1, f2 = smooth_relu(z, sp), smooth_relu_d1(z, sp), smooth_relu_d2(z, sp)
    out = np.abs(z) >= zeta / 4
    checks = {
        "relu nonneg": f.min() >= 0,
        "relu sup dev": np.max(np.abs(f - np.maximum(z, 0))) <= zeta / 24 + 1e-12,
        "relu outside window": np.array_equal(f[out], np.maximum(z[out], 0)),
        "relu monotone": np.all(np.diff(f) >= 0) and f1.min() >= 0 and f1.max() <= 1,
        "relu convex": f2.min() >= 0 and f2.max() <= 4 / zeta + 1e-9,
        "relu at 0": math.isclose(float(smooth_relu(0.0, sp)), zeta / 24, rel_tol=1e-12),
    }
    g, g1 = smooth_leaky_relu(z, sp), smooth_leaky_relu_d1(z, sp)
    checks["leaky form"] = np.allclose(g, (1 - leak) * f + leak * z, rtol=0, atol=1e-15)
    checks["leaky increasing"] = np.all(np.diff(g) > 0) and g1.min() >= leak
    a = smooth_abs(z, sp)
    checks["abs even"] = np.allclose(a, a[::-1], rtol=0, atol=1e-15)
    checks["abs outside window"] = np.array_equal(a[out], np.abs(z[out]))
    checks["abs min"] = math.isclose(float(a.min()), zeta / 12, rel_tol=1e-12) and a.argmin() == 50_000
    checks["abs convex"] = np.all(np.diff(a, 2) >= -1e-12)
    eta = np.linspace(0, 1, 21)[:, None]
    t = z[::100][None]
    checks["abs through 0"] = np.all(smooth_abs((1 - eta) * t, sp)
                                     <= (1 - eta) * smooth_abs(t, sp) + eta * smooth_abs(0.0, sp) + 1e-15)
    # derivative checks on 1e4 random points spread over the window and beyond
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.uniform(-zeta, zeta, 5000), rng.uniform(-1, 1, 5000)])
    worst = 0.0
    for fn, dfn, h in [(smooth_relu, smooth_relu_d1, 1e-7), (smooth_relu_d1, smooth_relu_d2, 1e-9),
                       (smooth_leaky_relu, smooth_leaky_relu_d1, 1e-7), (smooth_abs, smooth_abs_d1, 1e-7)]:
        fd = (fn(x + h, sp) - fn(x - h, sp)) / (2 * h)
        an = dfn(x, sp)
        scale = np.maximum(np.abs(an), np.max(np.abs(an)) * 1e-3)
        worst = max(worst, float(np.max(np.abs(fd - an) / scale)))
    checks["derivatives"] = worst <= 1e-4
    elapsed = time.perf_counter() - t0
    checks["runtime"] = elapsed < 5
    bad = [k for k, v in checks.items() if not v]
    ok = not bad
    report(capsys, 1, ok, f"worst derivative rel err {worst:.2e}, {elapsed:.2f}s, failed: {bad or 'none'}")
    assert ok, bad


def test_criterion_02_gradients(capsys, tmp_path):
    code, elapsed = cli(tmp_path, "grad-check", "--points", "50")
    res = json.loads((tmp_path / "gradcheck.json").read_text())
    worst = max(r["worst"] for r in res.values())
    ok = code == 0 and all(r["passed"] for r in res.values()) and worst <= 1e-4 and len(res) >= 6 and elapsed < 120
    report(capsys, 2, ok, f"{len(res)} gradients, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_assumptions(capsys, tmp_path):
    assert cli(tmp_path, "gen-target")[0] == 0
    code, elapsed = cli(tmp_path, "verify-assumptions", "--n", "100000")
    rep = json.loads((tmp_path / "assumptions.json").read_text())
    smin = min(min(v) for v in rep["mu_min_singular"])
    sparsity = max(max(v) for v in rep["mean_sparsity"])
    ok = (code == 0 and not rep["flags"] and rep["sample_count"] >= 100_000
          and smin >= 32 ** -1.15 and sparsity <= 3 and elapsed < 60)
    report(capsys, 3, ok, f"{len(rep['flags'])} flags, sigma_min {smin:.4f}, mean sparsity {sparsity:.3f}, "
                          f"{elapsed:.1f}s")
    assert ok, rep["flags"]


def test_criterion_04_warm_start(capsys, run_a, target):
    out, times = run_a
    L0 = load_network(out / "initial.net.json")
    errs = [max(w_col_errors(target, L0, l)) for l in range(SHAPE.L)]
    ok = max(errs) <= 0.30 and times["warm-start"] < 180
    report(capsys, 4, ok, f"max column error per layer {np.round(errs, 4).tolist()}, {times['warm-start']:.0f}s")
    assert ok


def test_criterion_05_output_layers(capsys, run_a, target):
    out, times = run_a
    learner = load_network(out / "learner.net.json")
    sgd = CFG.sgda_d1
    window = sgd.batch_n * min(sgd.T_outer, math.ceil(1 / sgd.eta)) if sgd.eta > 0 else sgd.batch_n
    lines, ok = [], True
    for l in range(SHAPE.L):
        recs = _stage_records(out, l)
        errs = np.array([r["metrics"]["w_col_err"] for r in recs])
        final = errs[-1].max()
        # MC standard error of a D1 estimate, measured at the final learner
        last = decode(sample_patches(target, sgd.batch_n, np.random.default_rng(l), l), learner.W[l])
        bb = _resolve_bb(B_FINAL, SHAPE.m_l[l], CFG.schedule, last)
        se = column_error_se(target, learner, l, bb, window, 5, CFG.seed, CFG.smoothing)
        rises = np.diff(errs, axis=0) - 2 * se[None]
        monotone = bool(np.all(rises <= 0))
        start = (out / "stages" / f"layer{l + 1}_stage0.stage.json").stat().st_mtime
        end = (out / "stages" / f"layer{l + 1}_stage{CFG.schedule.T_stages}.stage.json").stat().st_mtime
        ok &= final <= 0.05 and monotone and end - start < 600
        lines.append(f"layer {l + 1}: final {final:.4f}, worst rise beyond 2SE {rises.max():+.4f}, "
                     f"{end - start:.0f}s")
    report(capsys, 5, ok, "; ".join(lines))
    assert ok


def test_criterion_06_single_neuron_stats(capsys, metrics):
    s = metrics["single_stats_gap"]
    m1 = SHAPE.m_l[0]
    pslack = np.array(s["prob_gap"]) - 3 * np.array(s["prob_se"]) - 0.1 * B_FINAL
    mslack = np.array(s["mean_gap"]) - 3 * np.array(s["mean_se"]) - 0.1 * B_FINAL / m1
    ok = pslack.max() <= 0 and mslack.max() <= 0
    report(capsys, 6, ok, f"prob excess {pslack.max():+.4g} ({int((pslack > 0).sum())} neurons), "
                          f"mean excess {mslack.max():+.3g} ({int((mslack > 0).sum())} neurons)")
    assert ok


def test_criterion_07_pairwise(capsys, metrics):
    g = metrics["pair_moment_gap"]
    ok = g["within"] <= 0.1 and g["cross"] <= 0.3
    report(capsys, 7, ok, f"within {g['within']:.4f} (<= 0.1), cross {g['cross']:.4f} (<= 0.3)")
    assert ok


def test_criterion_08_deep_codes(capsys, metrics):
    assert metrics["context"]["b"] == pytest.approx(B_FINAL)
    tail = np.array(metrics["hidden_tail"][1])
    ok = tail.max() <= 0.01
    report(capsys, 8, ok, f"worst Pr[|S - S*| > 5b] over layer-2 channels {tail.max():.4f} "
                          f"({int((tail > 0.01).sum())} of {tail.size} above 1%)")
    assert ok


def test_criterion_09_end_to_end(capsys, run_a, metrics):
    e = metrics["e2e_eps"]
    total = sum(run_a[1].values())
    ratio = e["mean"] / e["baseline_mean"]
    ok = e["mean"] <= 0.1 and ratio <= 0.05 and total < 1800
    report(capsys, 9, ok, f"e2e mean {e['mean']:.4f}, baseline {e['baseline_mean']:.4f}, ratio {ratio:.3f}, "
                          f"pipeline {total:.0f}s")
    assert ok


def test_criterion_10_moment_trajectory(capsys, metrics):
    lines, ok = [], True
    for layer, traj in sorted(metrics["moment_traj"].items()):
        first, last = traj[0], traj[-1]
        assert first["stage"] == 0 and last["stage"] == CFG.schedule.T_stages
        for k in sorted(first["gaps"], key=int):
            r = np.array(last["gaps"][k]) / np.array(first["gaps"][k])
            ok &= bool(np.all(r <= 0.1))
            lines.append(f"L{int(layer) + 1} order {k} worst ratio {r.max():.3f}")
    report(capsys, 10, ok, ", ".join(lines))
    assert ok


def test_criterion_11_determinism(capsys, run_a, tmp_path):
    _pipeline(tmp_path)
    a = (run_a[0] / "metrics.json").read_bytes()
    b = (tmp_path / "metrics.json").read_bytes()
    ok = a == b
    report(capsys, 11, ok, f"metrics.json {'identical' if ok else 'differs'} across two runs ({len(a)} bytes)")
    assert ok
