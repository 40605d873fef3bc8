"""Stochastic gradient descent-ascent with a fast inner player and a noisy outer step."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

__all__ = ["SgdaConfig", "SgdaAbort", "SgdaProblem", "SgdaResult", "run_sgda", "write_trace"]

Params = dict


@dataclass(frozen=True)
class SgdaConfig:
    """Step sizes and loop lengths.

    ``eta_inner`` defaults to ``eta``. ``guard_floor`` keeps the divergence
    guard from firing on Monte Carlo noise when the initial loss is already
    near zero.
    """

    eta: float = 1e-2
    T_outer: int = 100
    T_inner: int = 1
    batch_n: int = 4096
    sigma_xi: float = 1e-6
    inner_role: str = "discriminator"
    eta_inner: float | None = None
    exact_inner: bool = True
    guard_factor: float = 10.0
    guard_floor: float = 0.0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if self.T_inner < 1 or self.T_outer < 0:
            raise ValueError("need T_inner >= 1 and T_outer >= 0")
        if self.sigma_xi < 0:
            raise ValueError("sigma_xi must be non-negative")
        if self.inner_role not in ("discriminator", "generator"):
            raise ValueError("inner_role must be 'discriminator' or 'generator'")
        if self.batch_n < 1:
            raise ValueError("batch_n must be positive")


class SgdaAbort(RuntimeError):
    """Numerical failure inside the loop; ``step`` is the outer step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class SgdaProblem(Protocol):
    """Two-player objective. Each player minimizes its own loss, so a
    maximizing player reports the gradient of the negated objective.

    Optional methods: ``best_response(outer, batch)`` returning the exact
    inner solution, and ``project(outer)`` applied after every outer step.
    """

    def inner_grad(self, outer: Params, inner: Params, batch: Any) -> Params: ...

    def outer_loss_grad(self, outer: Params, inner: Params, batch: Any) -> tuple[float, Params]: ...


@dataclass
class SgdaResult:
    outer: Params
    inner: Params
    trace: list


def _norm(g: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(v))) for v in g.values()))) if g else 0.0


def _finite(g: Params) -> bool:
    return all(np.all(np.isfinite(v)) for v in g.values())


def run_sgda(
    problem: SgdaProblem,
    outer: Params,
    inner: Params,
    cfg: SgdaConfig,
    sampler: Callable[[np.random.Generator], Any],
    rng: np.random.Generator,
) -> SgdaResult:
    """Run ``T_outer`` rounds of: fresh batch, inner block, noisy outer step.

    The inner block is either ``T_inner`` gradient steps or, when the
    problem supplies ``best_response`` and ``cfg.exact_inner`` is set, its
    exact solution. Parameter dicts are copied, never mutated in place.
    Trace rows are ``(step, outer_loss, grad_norm_outer, grad_norm_inner)``.
    """
    outer = {k: np.array(v, dtype=float, copy=True) for k, v in outer.items()}
    inner = {k: np.array(v, dtype=float, copy=True) for k, v in inner.items()}
    eta_in = cfg.eta if cfg.eta_inner is None else cfg.eta_inner
    exact = cfg.exact_inner and hasattr(problem, "best_response")
    project = getattr(problem, "project", None)
    trace = []
    loss0 = None
    for step in range(cfg.T_outer):
        batch = sampler(rng)
        g_in_norm = 0.0
        if exact:
            inner = problem.best_response(outer, batch)
        elif inner:
            for _ in range(cfg.T_inner):
                g_in = problem.inner_grad(outer, inner, batch)
                if not _finite(g_in):
                    raise SgdaAbort("non-finite inner gradient", step)
                inner = {k: inner[k] - eta_in * g_in[k] for k in inner}
                g_in_norm = _norm(g_in)
        loss, g_out = problem.outer_loss_grad(outer, inner, batch)
        if not np.isfinite(loss) or not _finite(g_out):
            raise SgdaAbort("non-finite outer loss or gradient", step)
        if loss0 is None:
            loss0 = loss
        elif loss > cfg.guard_factor * max(abs(loss0), cfg.guard_floor):
            raise SgdaAbort(f"loss {loss:.6g} exceeds {cfg.guard_factor}x initial {loss0:.6g}", step)
        new = {}
        for k in outer:
            upd = outer[k] - cfg.eta * g_out[k]
            if cfg.sigma_xi > 0:
                upd = upd + cfg.sigma_xi * rng.standard_normal(upd.shape)
            new[k] = upd
        outer = project(new) if project is not None else new
        trace.append((step, float(loss), _norm(g_out), g_in_norm))
    return SgdaResult(outer=outer, inner=inner, trace=trace)


def write_trace(path, rows, extra: dict | None = None) -> None:
    """Append trace rows to a CSV file, writing the header on first use.

    ``extra`` adds constant leading columns (e.g. layer and stage).
    """
    extra = extra or {}
    path = str(path)
    try:
        new_file = open(path).read(1) == ""
    except FileNotFoundError:
        new_file = True
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow([*extra.keys(), "step", "outer_loss", "grad_norm_outer", "grad_norm_inner"])
        for row in rows:
            w.writerow([*extra.values(), row[0], *(f"{x:.17g}" for x in row[1:])])
