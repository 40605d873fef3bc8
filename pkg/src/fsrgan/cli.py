"""Command-line front end: ``python -m fsrgan <command> [options]``.

Exit codes: 0 success, 2 validation failure (bad config, missing file,
flagged assumption, failed gradient check), 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, desk_config, load_config
from .evaluation import estimate_U, eval_lemma_metrics, eval_theorem, moment_gaps, w_col_errors
from .gradcheck import run_gradcheck
from .learner import LearnerNetwork, init_learner
from .numerics import make_stream
from .pipeline import TrainingError, stage_thresholds, train, warm_start_all
from .serialization import SerializationError, dumps, load_network, load_stage, save_network, save_stage
from .sgda import write_trace
from .target import AssumptionConfig, TargetNetwork, construct_generic, verify_assumptions
from .warm_start import IncompleteRecoveryError

__all__ = ["main", "build_target"]

log = logging.getLogger("fsrgan")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

TARGET_FILE = "target.net.json"
INITIAL_FILE = "initial.net.json"
LEARNER_FILE = "learner.net.json"
STAGE_DIR = "stages"


class _Invalid(Exception):
    pass


def build_target(cfg: ExperimentConfig, seed: int) -> TargetNetwork:
    t = cfg.target
    return construct_generic(
        cfg.shape, t.activation_prob, make_stream(seed, "target"), row_norm=t.row_norm,
        frob_bound=t.frob_bound, prob_band_const=cfg.constants.C_prob,
        max_first_layer_coherence=t.max_first_layer_coherence, calib_samples=t.calib_samples,
    )


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output folder (default: the config's output_dir)")
    common.add_argument("--workers", type=int, default=1, help="worker count (results do not depend on it)")
    common.add_argument("--target", help=f"target checkpoint (default: OUT/{TARGET_FILE}, else built from the seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="python -m fsrgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-target", parents=[common], help="build the generic target network")
    va = sub.add_parser("verify-assumptions", parents=[common], help="check the sparse-coding assumptions")
    va.add_argument("--n", type=int, help="sample count (default: eval.n_verify)")
    sub.add_parser("warm-start", parents=[common], help="warm-start the output dictionaries")
    tr = sub.add_parser("train", parents=[common], help="run the layer-wise training loop")
    tr.add_argument("--layer", type=int, action="append", help="1-based layer to train (repeatable)")
    tr.add_argument("--learner", help="start from this learner checkpoint instead of a warm start")
    tr.add_argument("--resume", help="resume after the stage recorded in this stage.json")
    ev = sub.add_parser("eval", parents=[common], help="verify a trained learner")
    ev.add_argument("--learner", help=f"learner checkpoint (default: OUT/{LEARNER_FILE})")
    ev.add_argument("--baseline", help=f"untrained learner for the e2e ratio (default: OUT/{INITIAL_FILE} if present)")
    ev.add_argument("--n", type=int, help="Monte Carlo samples (default: eval.n_eval)")
    gc = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every gradient")
    gc.add_argument("--points", type=int, default=50)
    mo = sub.add_parser("moments", parents=[common], help="moment-gap trajectory over the stage checkpoints")
    mo.add_argument("--n", type=int, help="Monte Carlo samples (default: eval.n_eval)")
    return p


def _setup(args) -> tuple[ExperimentConfig, int, Path]:
    cfg = load_config(args.config) if args.config else desk_config()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.replace(output_dir=str(out))
    (out / "config.txt").write_text(cfg.to_text())
    return cfg, cfg.seed, out


def _load(path: Path, kind):
    if not path.exists():
        raise _Invalid(f"missing file {path}")
    net = load_network(path)
    if not isinstance(net, kind):
        raise _Invalid(f"{path} does not hold a {kind.__name__}")
    return net


def _target(args, cfg, seed, out) -> TargetNetwork:
    if args.target:
        return _load(Path(args.target), TargetNetwork)
    if (out / TARGET_FILE).exists():
        return _load(out / TARGET_FILE, TargetNetwork)
    net = build_target(cfg, seed)
    save_network(net, out / TARGET_FILE)
    return net


def _warm_learner(target, cfg, seed) -> LearnerNetwork:
    ws = warm_start_all(target, cfg, seed)
    L = init_learner(target.shape, [ws[l][0] for l in range(target.shape.L)], cfg.constants.C_alpha)
    L.meta["warm_start_iterations"] = [int(ws[l][1].iterations) for l in range(target.shape.L)]
    return L


# ---------------------------------------------------------------------------
# commands


def cmd_gen_target(args, cfg, seed, out):
    net = build_target(cfg, seed)
    save_network(net, out / TARGET_FILE)
    print(out / TARGET_FILE)
    return EXIT_OK


def cmd_verify(args, cfg, seed, out):
    target = _target(args, cfg, seed, out)
    n = args.n or cfg.eval.n_verify
    acfg = AssumptionConfig(prob_const=cfg.constants.C_prob, eps1=cfg.constants.epsilon1, eps2=cfg.constants.epsilon2)
    rep = verify_assumptions(target, n, make_stream(seed, "verify"), acfg)
    (out / "assumptions.json").write_text(dumps(rep.to_dict()))
    for f in rep.flags:
        print("FLAG", f)
    print("assumptions", "ok" if rep.ok else f"violated ({len(rep.flags)} flags)")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_warm_start(args, cfg, seed, out):
    target = _target(args, cfg, seed, out)
    L = _warm_learner(target, cfg, seed)
    save_network(L, out / INITIAL_FILE)
    errs = [max(w_col_errors(target, L, l)) for l in range(target.shape.L)]
    for l, e in enumerate(errs):
        print(f"layer {l + 1}: max matched column error {e:.4f}")
    return EXIT_OK


def _stage_metrics(target, learner, l, n, seed, sp) -> dict:
    mg = moment_gaps(target, learner, l, n, seed, sp)
    return {"w_col_err": w_col_errors(target, learner, l), "moment_gaps": {str(k): v for k, v in mg.items()}}


def cmd_train(args, cfg, seed, out):
    target = _target(args, cfg, seed, out)
    L_count = target.shape.L
    layers = None
    if args.layer:
        if any(not 1 <= x <= L_count for x in args.layer):
            raise _Invalid(f"--layer must lie in 1..{L_count}")
        layers = sorted({x - 1 for x in args.layer})
    resume = None
    if args.resume:
        rec, learner = load_stage(args.resume)
        resume = (int(rec["layer"]), int(rec["stage"]))
    elif args.learner:
        learner = _load(Path(args.learner), LearnerNetwork)
    else:
        learner = _warm_learner(target, cfg, seed)
        save_network(learner, out / INITIAL_FILE)
    stage_dir = out / STAGE_DIR
    stage_dir.mkdir(exist_ok=True)
    trace, moments = out / "trace.csv", out / "moments.csv"
    if resume is None:
        for f in (trace, moments):
            f.unlink(missing_ok=True)
    n_eval = cfg.eval.n_eval

    def callback(record, net):
        ctx = record.context
        name = f"layer{ctx.layer + 1}_stage{ctx.stage}"
        save_network(net, stage_dir / f"{name}.net.json")
        record.metrics.update(_stage_metrics(target, net, ctx.layer, n_eval, seed, cfg.smoothing))
        save_stage(stage_dir / f"{name}.stage.json", layer=ctx.layer, stage=ctx.stage, b=ctx.b, bb=ctx.bb,
                   checkpoint=f"{name}.net.json", metrics=record.metrics)
        for phase, rows in record.losses.items():
            write_trace(trace, rows, {"layer": ctx.layer + 1, "stage": ctx.stage, "phase": phase})
        _append_moments(moments, ctx.layer, ctx.stage, ctx.b, record.metrics["moment_gaps"])
        log.info("layer %d stage %d: max column error %.4f", ctx.layer + 1, ctx.stage,
                 max(record.metrics["w_col_err"]))

    learner, _ = train(target, cfg, seed, layers=layers, learner=learner, callback=callback, resume=resume)
    save_network(learner, out / LEARNER_FILE)
    print(out / LEARNER_FILE)
    return EXIT_OK


def _append_moments(path: Path, layer: int, stage: int, b: float, gaps: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["layer", "stage", "b", "metric", "patch", "value"])
        for k in sorted(gaps, key=int):
            for j, v in enumerate(np.asarray(gaps[k])):
                w.writerow([layer + 1, stage, f"{b:.17g}", f"moment_gap_{k}", j, f"{float(v):.17g}"])


def _stage_files(out: Path) -> list:
    recs = []
    for p in (out / STAGE_DIR).glob("*.stage.json"):
        rec = json.loads(p.read_text())
        recs.append((rec["layer"], rec["stage"], p, rec))
    return sorted(recs, key=lambda r: (r[0], r[1]))


def _moment_traj(out: Path) -> dict:
    traj: dict = {}
    for layer, stage, _, rec in _stage_files(out):
        gaps = rec.get("metrics", {}).get("moment_gaps")
        if gaps is not None:
            traj.setdefault(str(layer), []).append({"stage": stage, "b": rec["b"], "gaps": gaps})
    return traj


def cmd_eval(args, cfg, seed, out):
    target = _target(args, cfg, seed, out)
    learner = _load(Path(args.learner) if args.learner else out / LEARNER_FILE, LearnerNetwork)
    n = args.n or cfg.eval.n_eval
    sh, sched = target.shape, cfg.schedule
    b_final = stage_thresholds(sh.m_l[0], sched, sched.T_stages)
    U, resid, rank_ok = estimate_U(target, learner)
    rep = eval_lemma_metrics(target, learner, U, {"b": b_final, "rank_ok": rank_ok}, n, seed, cfg.smoothing,
                             U_residual=resid, moment_traj=_moment_traj(out))
    base_path = Path(args.baseline) if args.baseline else out / INITIAL_FILE
    if cfg.eval.baseline and base_path.exists():
        base = _load(base_path, LearnerNetwork)
        Ub, _, _ = estimate_U(target, base)
        rep.e2e_eps["baseline_mean"] = eval_theorem(target, base, Ub, n, seed, cfg.smoothing)["mean"]
    (out / "metrics.json").write_text(dumps(rep.to_dict()))
    print(f"e2e mean {rep.e2e_eps['mean']:.4g} (baseline {rep.e2e_eps.get('baseline_mean', float('nan')):.4g}), "
          f"U residual {resid:.4g}")
    return EXIT_OK


def cmd_grad_check(args, cfg, seed, out):
    results = run_gradcheck(points=args.points, seed=seed)
    ok = True
    for r in results:
        print(f"{r.name:<14} worst rel err {r.worst:.3e}  {'PASS' if r.passed else 'FAIL'}")
        ok &= r.passed
    (out / "gradcheck.json").write_text(dumps({r.name: {"worst": r.worst, "passed": r.passed} for r in results}))
    return EXIT_OK if ok else EXIT_INVALID


def cmd_moments(args, cfg, seed, out):
    target = _target(args, cfg, seed, out)
    files = _stage_files(out)
    if not files:
        raise _Invalid(f"no stage records under {out / STAGE_DIR}")
    n = args.n or cfg.eval.n_eval
    path = out / "moments.csv"
    path.unlink(missing_ok=True)
    for layer, stage, p, rec in files:
        _, net = load_stage(p)
        _append_moments(path, layer, stage, rec["b"], moment_gaps(target, net, layer, n, seed, cfg.smoothing))
    print(path)
    return EXIT_OK


COMMANDS = {
    "gen-target": cmd_gen_target, "verify-assumptions": cmd_verify, "warm-start": cmd_warm_start,
    "train": cmd_train, "eval": cmd_eval, "grad-check": cmd_grad_check, "moments": cmd_moments,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg, seed, out = _setup(args)
        return COMMANDS[args.command](args, cfg, seed, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (_Invalid, SerializationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, IncompleteRecoveryError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
