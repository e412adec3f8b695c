"""Monotone discretization of the reflector Monge-Ampere operator.

The continuum equation, written against source density f1 and smoothed
target density f2, is reformulated as a pointwise min over orthogonal
tangent direction pairs:

    F(x, u) = min_{(v, v_perp)} prod_j max(D_vjvj u + g1(grad u; vj), 0)
              - f1(x) * g2(grad u)

where g1 is the directional second derivative of the transport cost toward
the current image point y = T(x, grad u), and g2 collects the map Jacobian
against the target density, g2(p) = (|p|^2 + 1)^2 / (4 f2(T(x, p))).

Monotonicity in the neighbor values requires shifting the gradient-dependent
terms by a small multiple of the discrete Laplacian: g1 gains
+eps * lap(u) and g2 loses eps' * lap(u), with eps = L_g * max|b_j/a_j|
built from each point's frame-axis stencil weight ratios and a sampled
Lipschitz estimate L_g of the function's dependence on the gradient. The
ratios scale like sqrt(spacing), so the shift vanishes under refinement.

A zero of F (after sqrt(spacing)-damping, see the solver) yields the
potential whose reflector exp(-u) sends f1 to f2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import backend, optics, stencil
from .errors import SingularCostError
from .sphere_grid import SphereGrid
from .stencil import StencilTable

LIP_SAMPLE_POINTS = 32
LIP_SAMPLE_GRADS = 24
LIP_SEED = 1815
GRAD_NORM_FLOOR = 2.0


@dataclass
class OperatorContext:
    """Everything fixed across operator evaluations for one problem."""

    grid: SphereGrid
    table: StencilTable
    f1: np.ndarray          # raw source density values
    f2: np.ndarray          # preprocessed (positive, smoothed) target values
    lip1: np.ndarray        # (n_directions,) Lipschitz estimates of g1 in p
    lip2: float             # Lipschitz estimate of g2 in p
    ratio: np.ndarray       # (n,) max |b_j / a_j| over frame-axis stencils
    eps1: np.ndarray        # (n, n_directions) Laplacian shift for g1
    eps2: np.ndarray        # (n,) Laplacian shift for g2
    p_max: float
    workers: int = 1
    nn_idx: np.ndarray | None = None  # warm start for the nearest lookup


def weight_ratio(table: StencilTable) -> np.ndarray:
    """Per point: max_j |w1_j / w2_j| over both frame-axis stencils.

    Slots with w2_j = 0 (axis-aligned neighbors on relaxed stencils, where
    w1_j vanishes too) are skipped.
    """
    k0, k1 = table.axis_dirs
    w1 = np.concatenate([table.w1[:, k0, :], table.w1[:, k1, :]], axis=1)
    w2 = np.concatenate([table.w2[:, k0, :], table.w2[:, k1, :]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.abs(w2) > 0.0, np.abs(w1) / np.abs(w2), 0.0)
    return r.max(axis=1)


def _sample_gradients(p_max: float, rng: np.random.Generator) -> np.ndarray:
    rad = p_max * np.sqrt(rng.random(LIP_SAMPLE_GRADS))
    ang = 2.0 * np.pi * rng.random(LIP_SAMPLE_GRADS)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _g1_at(grid: SphereGrid, table: StencilTable, i: int, k: int,
           grad2: np.ndarray) -> float:
    grad3 = optics.ambient_gradient(grad2, grid.e1[i], grid.e2[i])
    y = optics.optical_map(grid.points[i], grad3)
    c = _cost_rows(grid.points[table.nbr[i, k]], y)
    c0 = _cost_rows(grid.points[i], y)
    return float(np.dot(table.w2[i, k], c - c0))


def _g2_at(grid: SphereGrid, f2: np.ndarray, i: int, grad2: np.ndarray
           ) -> float:
    grad3 = optics.ambient_gradient(grad2, grid.e1[i], grid.e2[i])
    y = optics.optical_map(grid.points[i], grad3)
    p2 = float(np.dot(grad2, grad2))
    return (p2 + 1.0) ** 2 / (4.0 * f2[grid.nearest(y)])


def _cost_rows(x, y):
    val = 2.0 - 2.0 * np.sum(np.asarray(x) * y, axis=-1)
    return -np.log(np.maximum(val, optics.COST_FLOOR))


def estimate_lipschitz(grid: SphereGrid, table: StencilTable, f2: np.ndarray,
                       p_max: float, seed: int | None = None
                       ) -> tuple[np.ndarray, float]:
    """Sampled Lipschitz constants of g1 (per direction) and g2 in p.

    Central finite differences of each function over random gradients of
    norm up to p_max at a random subset of grid points; returns twice the
    largest observed gradient norm as a safety margin. Deterministic for a
    fixed seed (defaults to an internal constant).
    """
    rng = np.random.default_rng(LIP_SEED if seed is None else seed)
    n = grid.n
    pts = rng.choice(n, size=min(LIP_SAMPLE_POINTS, n), replace=False)
    grads = _sample_gradients(p_max, rng)
    step = table.spacing
    nd = table.n_directions
    lip1 = np.zeros(nd)
    lip2 = 0.0
    eye = np.eye(2)
    for i in pts:
        for p in grads:
            for comp in range(2):
                dp = step * eye[comp]
                d2 = (_g2_at(grid, f2, i, p + dp)
                      - _g2_at(grid, f2, i, p - dp)) / (2.0 * step)
                lip2 = max(lip2, abs(d2))
                for k in range(nd):
                    d1 = (_g1_at(grid, table, i, k, p + dp)
                          - _g1_at(grid, table, i, k, p - dp)) / (2.0 * step)
                    lip1[k] = max(lip1[k], abs(d1))
    return 2.0 * lip1, 2.0 * lip2


def build_context(grid: SphereGrid, table: StencilTable, f1: np.ndarray,
                  f2: np.ndarray, u: np.ndarray | None = None,
                  workers: int = 1, seed: int | None = None
                  ) -> OperatorContext:
    """Assemble the operator context for densities f1 (raw) and f2 (smoothed).

    When a current iterate u is given, the gradient-sampling radius adapts
    to max(2, max |grad u|); rebuild the context when restarting a solve
    from a very different state.
    """
    if u is not None:
        g = stencil.gradient(table, u)
        p_max = max(GRAD_NORM_FLOOR, float(np.sqrt((g * g).sum(axis=1)).max()))
    else:
        p_max = GRAD_NORM_FLOOR
    lip1, lip2 = estimate_lipschitz(grid, table, f2, p_max, seed=seed)
    ratio = weight_ratio(table)
    return OperatorContext(
        grid=grid, table=table, f1=np.asarray(f1, dtype=float),
        f2=np.asarray(f2, dtype=float), lip1=lip1, lip2=lip2, ratio=ratio,
        eps1=ratio[:, None] * lip1[None, :], eps2=ratio * lip2,
        p_max=p_max, workers=workers)


def evaluate_all(u: np.ndarray, ctx: OperatorContext) -> np.ndarray:
    """Operator values at every grid point for the iterate u.

    Caches the nearest-lookup result on the context as a warm start for the
    next evaluation; the greedy Delaunay walk it seeds returns the exact
    nearest point, so results are identical to a cold lookup.
    """
    grid, table = ctx.grid, ctx.table
    grad2, lap = stencil.gradient_and_laplacian(table, u)
    grad3 = optics.ambient_gradient(grad2, grid.e1, grid.e2)
    y = optics.optical_map(grid.points, grad3)
    if ctx.nn_idx is None:
        start = np.asarray(grid.nearest(y), dtype=np.int64)
    else:
        start = ctx.nn_idx
    idx = grid.nearest_walk(y, start)
    ctx.nn_idx = idx
    f2_at_y = ctx.f2[idx]
    p2 = np.einsum("ij,ij->i", grad2, grad2)
    g2 = (p2 + 1.0) ** 2 / (4.0 * f2_at_y)
    rhs = ctx.f1 * (g2 - ctx.eps2 * lap)
    values, sing, example = backend.kernels().evaluate_operator(
        grid.points, y, u, table.nbr, table.w2, ctx.eps1, lap, rhs,
        table.n_pairs, ctx.workers)
    if sing:
        raise SingularCostError(sing, [example])
    return values


def evaluate_point(u: np.ndarray, ctx: OperatorContext, i: int) -> float:
    """Reference single-point evaluation (independent of the kernels).

    Same contract as evaluate_all restricted to point i; used for
    monotonicity probes and for cross-checking the batched kernels.
    """
    grid, table = ctx.grid, ctx.table
    grad2 = stencil.gradient(table, u, points=i)[0]
    grad3 = optics.ambient_gradient(grad2, grid.e1[i], grid.e2[i])
    lap = float(stencil.laplacian(table, u, points=i)[0])
    y = optics.optical_map(grid.points[i], grad3)
    p2 = float(np.dot(grad2, grad2))
    g2 = (p2 + 1.0) ** 2 / (4.0 * ctx.f2[grid.nearest(y)])
    rhs = ctx.f1[i] * (g2 - ctx.eps2[i] * lap)

    nbr = table.nbr[i]
    c_n = _cost_rows(grid.points[nbr], y)
    c_0 = _cost_rows(grid.points[i], y)
    g1 = np.einsum("dj,dj->d", table.w2[i], c_n - c_0)
    d2 = np.einsum("dj,dj->d", table.w2[i], u[nbr] - u[i])
    s = np.maximum(d2 + g1 + ctx.eps1[i] * lap, 0.0)
    m = table.n_pairs
    return float((s[1:m + 1] * s[m + 1:2 * m + 1]).min() - rhs)


def dump_residuals(path: str, values: np.ndarray) -> None:
    """Write per-point operator values as CSV point_id,residual."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "residual"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])
