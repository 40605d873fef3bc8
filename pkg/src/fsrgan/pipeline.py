"""Layer-wise min-max training loop: warm start, staged thresholds, per-stage objectives."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .discriminators import (
    D1State, D2State, D4State, D5State,
    d1_fixed_point, d1_generator_loss_and_grad, d2_discriminator_loss_and_grad, d2_regression_target,
    d4_all_losses_and_grads, d5_loss_and_grad, decode,
)
from .learner import LearnerNetwork, forward, init_learner
from .numerics import make_stream
from .sgda import SgdaAbort, SgdaConfig, run_sgda
from .target import TargetNetwork, sample_patches, sample_real
from .warm_start import warm_start_layer

__all__ = [
    "StageContext", "StageRecord", "TrainingError",
    "stage_thresholds", "stage_invariants", "warm_start_all", "train_layer", "train",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """An SGDA abort annotated with layer and stage."""

    def __init__(self, layer: int, stage: int, phase: str, cause: Exception):
        super().__init__(f"layer {layer + 1}, stage {stage}, {phase}: {cause}")
        self.layer, self.stage, self.phase = layer, stage, phase


@dataclass
class StageContext:
    layer: int
    stage: int
    b: float
    bb: float | None = None


@dataclass
class StageRecord:
    context: StageContext
    losses: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)


def stage_thresholds(m: int, sched, t: int) -> float:
    """Threshold ``b`` in force during stage ``t`` (1-based)."""
    b = m ** (-sched.b0_exp) * m ** (-sched.shrink_exp * t)
    return max(b, sched.b_min)


def _resolve_bb(b: float, m: int, sched, real_decoded: np.ndarray) -> float:
    bb = b * m ** sched.bb_exp
    pos = real_decoded[real_decoded > b]
    if pos.size:
        bb = min(bb, sched.bb_clip_frac * float(np.median(pos)))
    return bb


# ---------------------------------------------------------------------------
# SGDA problems


class _D4Problem:
    def __init__(self, state: D4State, learner: LearnerNetwork):
        self.state, self.learner = state, learner

    def inner_grad(self, outer, inner, batch):
        return {}

    def outer_loss_grad(self, outer, inner, batch):
        z, X_real = batch
        self.learner.alpha1, self.learner.b[0] = outer["alpha"], outer["b"]
        loss, ga, gb, _ = d4_all_losses_and_grads(self.state, self.learner, z, X_real)
        return float(loss.sum()), {"alpha": ga, "b": gb}

    def best_response(self, outer, batch):
        return {}

    def project(self, outer):
        outer["alpha"] = np.maximum(outer["alpha"], 1e-3)
        return outer


class _D5Problem:
    def __init__(self, state: D5State, learner: LearnerNetwork):
        self.state, self.learner = state, learner

    def inner_grad(self, outer, inner, batch):
        return {}

    def outer_loss_grad(self, outer, inner, batch):
        z, X_real = batch
        loss, g, _ = d5_loss_and_grad(self.state, self.learner, z, X_real=X_real, V1_dir=outer["dir"])
        return loss, {"dir": g}

    def best_response(self, outer, batch):
        return {}

    def project(self, outer):
        D = outer["dir"]
        outer["dir"] = D / np.linalg.norm(D, axis=-1, keepdims=True)
        return outer


class _D1Problem:
    """``fixed_point`` replaces the gradient by ``W - W_star``, so a step of
    size ``eta`` averages ``W`` toward the moment-matching root."""

    def __init__(self, state: D1State, update: str = "gradient"):
        self.state, self.update = state, update

    def inner_grad(self, outer, inner, batch):
        return {}

    def outer_loss_grad(self, outer, inner, batch):
        S_fake, X_real = batch
        if self.update == "fixed_point":
            W_star, resid = d1_fixed_point(self.state, outer["W"], S_fake, X_real)
            return float(resid.sum()), {"W": outer["W"] - W_star}
        loss, g = d1_generator_loss_and_grad(self.state, outer["W"], S_fake, X_real)
        return float(loss.sum()), {"W": g}

    def best_response(self, outer, batch):
        return {}


class _D2Problem:
    """Averaging updates toward the regression solution.

    The discriminator moves toward the active-set fit of the real map and
    the generator rows move toward the discriminator rows, i.e. plain
    gradient steps on ``||VD - v*||^2 / 2`` and ``||V - VD||^2 / 2``.
    The generator is the inner (faster) player.
    """

    def __init__(self, state: D2State, tau: float):
        self.state, self.tau = state, tau

    def inner_grad(self, outer, inner, batch):
        return {"V": inner["V"] - outer["VD"], "b": inner["b"] - outer["bD"]}

    def outer_loss_grad(self, outer, inner, batch):
        X_l, X_lm1 = batch
        self.state.VD, self.state.bD = outer["VD"], outer["bD"]
        loss, _, _ = d2_discriminator_loss_and_grad(self.state, X_l, X_lm1)
        VD_star, bD_star = d2_regression_target(self.state, X_l, X_lm1, self.tau)
        return float(loss.sum()), {"VD": outer["VD"] - VD_star, "bD": outer["bD"] - bD_star}


def _run(problem, outer, inner, cfg: SgdaConfig, sampler, rng, ctx: StageContext, phase: str, sp=None):
    try:
        return run_sgda(problem, outer, inner, cfg, sampler, rng)
    except SgdaAbort as exc:
        raise TrainingError(ctx.layer, ctx.stage, phase, exc) from exc


# ---------------------------------------------------------------------------


def warm_start_all(target: TargetNetwork, cfg: ExperimentConfig, seed: int, layers=None):
    """Warm-started dictionaries for every layer (or the listed ones)."""
    sh = target.shape
    out = {}
    for l in (range(sh.L) if layers is None else layers):
        W, stats = warm_start_layer(
            lambda n, rng, l=l: sample_patches(target, n, rng, l),
            sh.m_l[l], sh.k_l[l], cfg.warm_start, make_stream(seed, "warm_start", l),
        )
        out[l] = (W if W.ndim == 3 else W[None], stats)
    return out


def _first_layer_states(cfg: ExperimentConfig, learner, WD, b, bb):
    sh = learner.shape
    k, m = sh.k_l[0], sh.m_l[0]
    c = cfg.constants
    K = c.K_asym if c.K_asym is not None else k ** 3
    Cs = c.Cw_same if c.Cw_same is not None else m ** 2 / (b * k ** 3)
    Cx = c.Cw_cross if c.Cw_cross is not None else 1.0 / m ** 3
    d4 = D4State(WD=WD, b_thresh=b, K_asym=K, sp=cfg.smoothing, stat_zeta=c.d4_stat_zeta)
    d5 = D5State(WD=WD, b_thresh=b, Cw_same=Cs, Cw_cross=Cx, tau=c.tau, temp=c.beta, sp=cfg.smoothing)
    return d4, d5


def stage_invariants(learner: LearnerNetwork, l: int, cfg: ExperimentConfig, n: int, rng, VD=None) -> dict:
    """Empirical training invariants of layer ``l`` on ``n`` fresh fake samples.

    First layer: every activation probability lies in ``[1/(C m), C k^3/m]``
    and every bias in ``(1/k^3, k^3)``. Deeper layers: at most ``C k``
    active channels per patch on at least 99% of samples and, when ``VD``
    is given, ``||VD row||^2 <= C k / lambda_D``. ``C`` is ``C_prob``
    (default ``k^2``). Returns the measured values and an ``ok`` flag.
    """
    sh = learner.shape
    m, k = sh.m_l[l], sh.k_l[l]
    C = cfg.constants.C_prob if cfg.constants.C_prob is not None else k ** 2
    S = forward(learner, rng.standard_normal((n, sh.m0_prime)), cfg.smoothing).S[l]
    if l == 0:
        p = (S > 0).mean(axis=0)
        b = learner.b[0]
        out = {"prob_min": float(p.min()), "prob_max": float(p.max()),
               "bias_min": float(b.min()), "bias_max": float(b.max())}
        out["ok"] = bool(p.min() >= 1 / (C * m) and p.max() <= C * k ** 3 / m
                         and b.min() > k ** -3 and b.max() < k ** 3)
        return out
    frac = float(((S > 0).sum(axis=-1) <= C * k).mean())
    out = {"sparse_frac": frac}
    ok = frac >= 0.99
    if VD is not None:
        row = float(np.max(np.sum(np.asarray(VD) ** 2, axis=(1, 3))))
        out["vd_row_sq_max"] = row
        ok = ok and row <= C * k / cfg.constants.lambda_D
    out["ok"] = bool(ok)
    return out


def train_layer(l: int, target: TargetNetwork, learner: LearnerNetwork, cfg: ExperimentConfig, seed: int,
                callback=None, start_stage: int = 0) -> tuple[LearnerNetwork, list]:
    """Run the stages of layer ``l`` (0-based) and return the updated learner.

    ``callback(record, learner)`` runs at the end of each stage (and once
    before the first, with ``stage = 0``) and may fill ``record.metrics``.
    With ``start_stage = t`` the learner is taken to be the checkpoint after
    stage ``t`` and training resumes at stage ``t + 1``. Every stage draws
    from its own random streams, so a resumed run reproduces an
    uninterrupted one.
    """
    sh = target.shape
    sched = cfg.schedule
    sp = cfg.smoothing
    m, k = sh.m_l[l], sh.k_l[l]
    learner = learner.copy()
    records = []
    if start_stage == 0:
        rec0 = StageRecord(StageContext(layer=l, stage=0, b=m ** (-sched.b0_exp)))
        if callback is not None:
            callback(rec0, learner)
        records.append(rec0)
    bump_mult = sched.d2_bias_bump_mult if sched.d2_bias_bump_mult is not None else k ** 2
    for t in range(start_stage + 1, sched.T_stages + 1):
        b = stage_thresholds(m, sched, t)
        WD = learner.W[l].copy()
        rng_cal = make_stream(seed, "stage", l, t, "calibrate")
        real_dec = decode(sample_patches(target, cfg.sgda_d1.batch_n, rng_cal, l), WD)
        bb = _resolve_bb(b, m, sched, real_dec)
        ctx = StageContext(layer=l, stage=t, b=b, bb=bb)
        rec = StageRecord(ctx)

        vd_final = None
        if l == 0:
            d4, d5 = _first_layer_states(cfg, learner, WD, b, bb)

            def first_sampler(n):
                def draw(rng):
                    return rng.standard_normal((n, sh.m0_prime)), sample_patches(target, n, rng, 0)
                return draw

            res = _run(_D4Problem(d4, learner), {"alpha": learner.alpha1, "b": learner.b[0]}, {},
                       cfg.sgda_d4, first_sampler(cfg.sgda_d4.batch_n), make_stream(seed, "d4", l, t), ctx, "D4")
            learner.alpha1, learner.b[0] = res.outer["alpha"], res.outer["b"]
            rec.losses["d4"] = res.trace
            res = _run(_D5Problem(d5, learner), {"dir": learner.V1_dir}, {}, cfg.sgda_d5,
                       first_sampler(cfg.sgda_d5.batch_n), make_stream(seed, "d5", l, t), ctx, "D5")
            learner.V1_dir = res.outer["dir"]
            rec.losses["d5"] = res.trace
            if t == sched.T_stages:
                learner.b[0] = learner.b[0] + sched.final_d5_bias_bump
        else:
            st = D2State(WD_l=WD, WD_lm1=learner.W[l - 1].copy(), parents=learner.parents[l],
                         VD=learner.V[l].copy(), bD=learner.b[l].copy(),
                         lambda_D=cfg.constants.lambda_D, lambda_G=cfg.constants.lambda_G, sp=sp)
            n2 = cfg.sgda_d2.batch_n

            def d2_sampler(rng):
                real = sample_real(target, n2, rng, upto=l)
                return real.X[l], real.X[l - 1]

            res = _run(_D2Problem(st, b), {"VD": st.VD, "bD": st.bD}, {"V": learner.V[l], "b": learner.b[l]},
                       cfg.sgda_d2, d2_sampler, make_stream(seed, "d2", l, t), ctx, "D2")
            vd_final = res.outer["VD"]
            learner.V[l] = res.inner["V"]
            learner.b[l] = res.inner["b"] + bump_mult * b
            rec.losses["d2"] = res.trace

        d1 = D1State(WD=WD, bb=bb, c_exp=cfg.constants.c_exp, sp=sp)
        n1 = cfg.sgda_d1.batch_n

        def d1_sampler(rng):
            S = forward(learner, rng.standard_normal((n1, sh.m0_prime)), sp).S[l]
            return S, sample_patches(target, n1, rng, l)

        res = _run(_D1Problem(d1, sched.d1_update), {"W": learner.W[l]}, {}, cfg.sgda_d1, d1_sampler,
                   make_stream(seed, "d1", l, t), ctx, "D1")
        W = res.outer["W"]
        learner.W[l] = W / np.linalg.norm(W, axis=1, keepdims=True)
        rec.losses["d1"] = res.trace
        inv = stage_invariants(learner, l, cfg, 10_000, make_stream(seed, "stage", l, t, "invariants"),
                               VD=vd_final)
        rec.metrics["invariants"] = inv
        if not inv["ok"]:
            log.warning("layer %d stage %d: invariant violated %s", l + 1, t, inv)
        if callback is not None:
            callback(rec, learner)
        records.append(rec)
        log.info("layer %d stage %d: b=%.4g bb=%.4g", l + 1, t, b, bb)
    return learner, records


def train(target: TargetNetwork, cfg: ExperimentConfig, seed: int | None = None, layers=None,
          learner: LearnerNetwork | None = None, callback=None, resume: tuple[int, int] | None = None):
    """Warm start every layer, then train the layers in order.

    A given ``learner`` skips the warm start. ``resume = (layer, stage)``
    skips the layers below ``layer`` and restarts that layer after
    ``stage``. Returns ``(learner, records)`` where ``records`` maps layer
    index to the list of stage records.
    """
    seed = cfg.seed if seed is None else seed
    sh = target.shape
    layers = list(range(sh.L)) if layers is None else sorted(layers)
    if learner is None:
        ws = warm_start_all(target, cfg, seed)
        learner = init_learner(sh, [ws[l][0] for l in range(sh.L)], cfg.constants.C_alpha)
        learner.meta["warm_start_iterations"] = [int(ws[l][1].iterations) for l in range(sh.L)]
    records = {}
    for l in layers:
        start = 0
        if resume is not None:
            if l < resume[0]:
                continue
            start = resume[1] if l == resume[0] else 0
        learner, records[l] = train_layer(l, target, learner, cfg, seed, callback, start)
    return learner, records
