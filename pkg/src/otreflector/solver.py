"""Damped explicit iteration driving the discrete operator to steady state.

The update is

    u_{n+1} = u_n + k (F(u_n) - sqrt(spacing) * u_n)

starting from u = 0. The damping term pins the additive constant of the
otherwise translation-invariant problem: the fixed point satisfies
F(u) = sqrt(spacing) * u, and since F vanishes on the exact solution up to
discretization error, the pinned constant is O(sqrt(spacing)) small. The
converged iterate is afterwards shifted to exact area-weighted mean zero.

The step starts at the parabolic stability scale k0 = spacing^2 and adapts
online: grow by 1.1 after a step that lowered the residual, shrink by 0.5
and reject a step that signals instability. The residual is
max |F - sqrt(spacing) u|, which equals the k-normalized update size.

A step is accepted when it does not increase the residual, or when the
residual stays below ceiling times the best residual over the last
`window` steps (accepted or rejected: rejections age the window too, so a
stale best cannot pin the ceiling forever). The operator evaluates the
target density through a nearest-grid-point lookup, so the residual is
piecewise in u with genuine jumps where a mapped direction crosses a
lookup-cell boundary; problems whose source density has a dead zone
additionally spend a long transient with the sup residual pinned at the
dead zone's fill rate. Rejecting every increase dead-locks there (the step
collapses to nothing), and a window fed only by accepts dead-locks one
stage later, once the sup residual settles on lookup jumps larger than an
old best allows. A stable step size keeps the residual bounded near its
running level, so only a clear departure from the recent level indicates
a step above the nonlinear CFL range; genuine blow-up keeps the residual
growing past any aged ceiling and bottoms out at the step-size floor.
Growth still requires strict improvement, which keeps the probing gentle.
A fixed-step mode (k = spacing^2 / 2, no adaptation) is available for
reference runs.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import monge_ampere, stencil
from .errors import BlowUpError
from .monge_ampere import OperatorContext

logger = logging.getLogger(__name__)

STEP_FLOOR_FACTOR = 1e-12
LIP_LOG_EVERY = 50


@dataclass
class SolverParams:
    k0: float | None = None      # default spacing^2
    tol: float = 1e-6
    max_iter: int = 50000
    growth: float = 1.1
    shrink: float = 0.5
    window: int = 50             # residual memory for the ceiling
    ceiling: float = 3.0         # reject when residual > ceiling * recent best
    fixed_step: bool = False

    def validate(self) -> None:
        checks = [
            (self.k0 is None or self.k0 > 0, "k0 must be positive"),
            (self.tol > 0, "tol must be positive"),
            (self.max_iter >= 1, "max_iter must be at least 1"),
            (self.growth > 1.0, "growth factor must exceed 1"),
            (0.0 < self.shrink < 1.0, "shrink factor must be in (0, 1)"),
            (self.window >= 1, "window must be at least 1"),
            (self.ceiling > 1.0, "ceiling must exceed 1"),
        ]
        bad = [msg for okay, msg in checks if not okay]
        if bad:
            from .errors import ConfigError
            raise ConfigError(bad)


@dataclass
class SolveReport:
    iterations: int
    accepted: int
    rejected: int
    residual: float
    converged: bool
    lipschitz: float
    k_first: float
    k_final: float
    k_min: float
    k_max: float
    history: list = field(default_factory=list)  # (iter, k, residual, lipschitz)

    def history_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("iter,k,residual,lipschitz\n")
            for it, k, res, lip in self.history:
                fh.write(f"{it},{k!r},{res!r},{lip!r}\n")


def normalize_mean_zero(u: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Shift a grid function to zero area-weighted mean."""
    u = np.asarray(u, dtype=float)
    return u - np.dot(u, areas) / areas.sum()


def lipschitz_check(u: np.ndarray, table) -> float:
    """Largest |u(x) - u(y)| / d(x, y) over all stencil edges."""
    return stencil.edge_lipschitz(table, u)


def solve(ctx: OperatorContext, params: SolverParams | None = None,
          callback=None) -> tuple[np.ndarray, SolveReport]:
    """Iterate to steady state; returns the mean-zero potential and a report.

    Non-convergence within max_iter yields converged=False (no exception);
    NaN/Inf states are rejected by shrinking the step, and only an
    unrecoverable collapse of the step size raises BlowUpError with the last
    finite iterate attached.
    """
    params = params or SolverParams()
    params.validate()
    table = ctx.table
    h = table.spacing
    sqh = float(np.sqrt(h))
    if params.fixed_step:
        k = h * h / 2.0
    else:
        k = params.k0 if params.k0 is not None else h * h
    k_first = k_min = k_max = k

    u = np.zeros(ctx.grid.n)
    values = monge_ampere.evaluate_all(u, ctx)
    res = float(np.max(np.abs(values - sqh * u)))
    lip = 0.0
    history = [(0, k, res, lip)]
    recent = deque([res], maxlen=params.window)
    accepted = rejected = 0
    converged = False

    for it in range(1, params.max_iter + 1):
        trial = u + k * (values - sqh * u)
        if np.isfinite(trial).all():
            trial_values = monge_ampere.evaluate_all(trial, ctx)
            trial_res = float(np.max(np.abs(trial_values - sqh * trial)))
        else:
            trial_values, trial_res = values, np.nan
        finite = bool(np.isfinite(trial_res))
        if params.fixed_step:
            if not finite:
                raise BlowUpError(it, u)
            u, values, res = trial, trial_values, trial_res
            accepted += 1
        elif finite and (trial_res <= res
                         or trial_res <= params.ceiling * min(recent)):
            if trial_res < res:
                k *= params.growth
            u, values, res = trial, trial_values, trial_res
            recent.append(res)
            accepted += 1
        else:
            k *= params.shrink
            rejected += 1
            # age the window so a stale best cannot pin the ceiling below
            # the level the iteration can actually sustain
            recent.append(res)
            if k < STEP_FLOOR_FACTOR * k_first:
                raise BlowUpError(it, u)
        k_min, k_max = min(k_min, k), max(k_max, k)
        if it % LIP_LOG_EVERY == 0 or res <= params.tol:
            lip = lipschitz_check(u, table)
        history.append((it, k, res, lip))
        if callback is not None:
            callback(it, k, res)
        if res <= params.tol:
            converged = True
            break

    u = normalize_mean_zero(u, ctx.grid.areas)
    lip = lipschitz_check(u, table)
    report = SolveReport(
        iterations=len(history) - 1, accepted=accepted, rejected=rejected,
        residual=res, converged=converged, lipschitz=lip,
        k_first=k_first, k_final=k, k_min=k_min, k_max=k_max, history=history)
    if converged:
        logger.info("converged in %d iterations, residual %.3e", report.iterations, res)
    else:
        logger.warning("not converged after %d iterations, residual %.3e",
                       report.iterations, res)
    return u, report
