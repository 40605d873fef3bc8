"""Spectral warm start of the output dictionaries from truncated third moments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import top_eig_sym

__all__ = [
    "WarmStartConfig",
    "IncompleteRecoveryError",
    "WarmStartStats",
    "project_out",
    "estimate_H",
    "warm_start_layer",
]


@dataclass(frozen=True)
class WarmStartConfig:
    """``None`` fields take their shape-dependent defaults: ``b_init = 1/k^2``,
    ``eig_gap_min = 1/m``, ``max_iters = k^3 m^3``, ``b_refine = b_init``.

    ``b_refine`` is the threshold of the refinement average. At small ``m`` a
    threshold well above ``b_init`` keeps samples driven by other channels
    out of that average. ``refine_steps`` repeats the refinement on the same
    batch, each time averaging the samples selected by the previous
    estimate; one step is the plain procedure.
    """

    b_init: float | None = None
    b_refine: float | None = None
    eig_gap_min: float | None = None
    overlap_max: float = 0.5
    batch_n: int = 50_000
    max_iters: int | None = None
    refine_steps: int = 1

    def __post_init__(self):
        for name in ("b_init", "b_refine", "eig_gap_min", "max_iters"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.overlap_max < 1):
            raise ValueError("overlap_max must lie in (0, 1)")
        if self.batch_n < 1:
            raise ValueError("batch_n must be positive")
        if self.refine_steps < 1:
            raise ValueError("refine_steps must be >= 1")

    def resolved(self, m: int, k: float) -> "WarmStartConfig":
        b_init = self.b_init if self.b_init is not None else 1.0 / k ** 2
        return WarmStartConfig(
            b_init=b_init,
            b_refine=self.b_refine if self.b_refine is not None else b_init,
            eig_gap_min=self.eig_gap_min if self.eig_gap_min is not None else 1.0 / m,
            overlap_max=self.overlap_max,
            batch_n=self.batch_n,
            max_iters=self.max_iters if self.max_iters is not None else int(round(k ** 3 * m ** 3)),
            refine_steps=self.refine_steps,
        )


class IncompleteRecoveryError(RuntimeError):
    """Raised when the iteration budget runs out; ``partial`` holds what was found."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass
class WarmStartStats:
    iterations: int
    accepted: np.ndarray


def _active_mask(X: np.ndarray, Wset: np.ndarray, b: float) -> np.ndarray:
    # indicators are evaluated on the original patch, not the partially projected one
    return (X @ Wset.T) >= b


def project_out(X, Wset, b: float) -> np.ndarray:
    """Remove the component along each ``w`` whose indicator ``<w, X> >= b`` fires.

    Factors are applied in the order of ``Wset``. ``X`` may be a single
    vector or a batch of shape (n, d).
    """
    X = np.asarray(X, dtype=float)
    Wset = np.asarray(Wset, dtype=float).reshape(-1, X.shape[-1])
    out = np.array(X, copy=True)
    if Wset.shape[0] == 0:
        return out
    single = out.ndim == 1
    out = np.atleast_2d(out)
    act = _active_mask(np.atleast_2d(X), Wset, b)
    for i, w in enumerate(Wset):
        rows = act[:, i]
        if rows.any():
            out[rows] -= np.outer(out[rows] @ w, w)
    return out[0] if single else out


def estimate_H(samples, x_probe, Wset, b: float) -> np.ndarray:
    """Empirical ``E[<x, X> P(X) P(X)^T]`` with ``P`` the thresholded projection."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    n = X.shape[0]
    wts = X @ np.asarray(x_probe, dtype=float)
    keep = wts != 0
    P = project_out(X[keep], Wset, b)
    H = (P * wts[keep, None]).T @ P / n
    return 0.5 * (H + H.T)


def warm_start_layer(
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    m: int,
    k: float,
    cfg: WarmStartConfig,
    rng: np.random.Generator,
    log: Callable | None = None,
) -> tuple[np.ndarray, WarmStartStats]:
    """Recover ``m`` dictionary columns for one patch, or several in lockstep.

    ``sampler(n, rng)`` returns fresh patches of shape (n, d), or (n, P, d)
    to run P independent patches on shared draws. Each outer iteration uses
    up to three fresh draws: the probe pair, the batch for ``H`` and, when
    some candidate passes the gates, the batch for the refinement step.

    Returns the (d, m) or (P, d, m) columns and per-patch statistics.
    ``log(iteration, patch, gap, v, v_refined)`` is called for every
    candidate that passes the eigen-gap gate.
    """
    cfg = cfg.resolved(m, k)
    probe = sampler(2, rng)
    single = probe.ndim == 2
    n_patch = 1 if single else probe.shape[1]
    d = probe.shape[-1]
    found = [np.zeros((0, d)) for _ in range(n_patch)]
    accepted = np.zeros(n_patch, dtype=int)
    it = 0
    while it < cfg.max_iters and min(len(f) for f in found) < m:
        it += 1
        if it > 1:
            probe = sampler(2, rng)
        H_batch = sampler(cfg.batch_n, rng)
        if single:
            probe, H_batch = probe[:, None], H_batch[:, None]
        cand = {}
        for p in range(n_patch):
            if len(found[p]) >= m:
                continue
            x = probe[0, p] + probe[1, p]
            H = estimate_H(H_batch[:, p], x, found[p], cfg.b_init)
            _, v, gap = top_eig_sym(H)
            if gap <= cfg.eig_gap_min:
                continue
            # a positive top eigenvalue comes from a column with <x, w> > 0
            if x @ v < 0:
                v = -v
            if len(found[p]) and np.max(np.abs(found[p] @ v)) > cfg.overlap_max:
                continue
            cand[p] = (v, gap)
        if not cand:
            continue
        v_batch = sampler(cfg.batch_n, rng)
        if single:
            v_batch = v_batch[:, None]
        for p, (v, gap) in cand.items():
            Xv = v_batch[:, p]
            vp = v
            for _ in range(cfg.refine_steps):
                sel = (Xv @ vp) >= cfg.b_refine
                if not sel.any():
                    break
                vp = Xv[sel].sum(axis=0)
                vp /= np.linalg.norm(vp)
            else:
                if log is not None:
                    log(it, p, gap, v, vp)
                if len(found[p]) and np.max(np.abs(found[p] @ vp)) > cfg.overlap_max:
                    continue
                found[p] = np.vstack([found[p], vp])
                accepted[p] += 1
    stats = WarmStartStats(iterations=it, accepted=accepted)
    cols = np.stack([f.T for f in found]) if all(len(f) == m for f in found) else None
    if cols is None:
        raise IncompleteRecoveryError(
            f"recovered {[len(f) for f in found]} of {m} columns after {it} iterations",
            [f.T for f in found],
        )
    return (cols[0] if single else cols), stats
