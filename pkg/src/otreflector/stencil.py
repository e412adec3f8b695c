"""Wide finite-difference stencils on tangent planes of a sphere grid.

Each grid point gets one four-point stencil per discrete direction. The
stencil approximates first and second directional derivatives of a grid
function after geodesic projection onto the local tangent plane:

    D2[u] = sum_j w2_j (u(x_j) - u(x0))   ~  d^2 u / d nu^2
    D1[u] = sum_j w1_j (u(x_j) - u(x0))   ~  d u / d nu

Neighbors are chosen one per tangent-plane quadrant (relative to the
direction nu), minimizing the angular offset |sin theta| subject to floors
that keep the weights bounded and positive. The weights solve a 4x4
interpolation system with a closed-form solution; positivity of the
second-derivative weights follows from the quadrant sign structure, which is
what makes the assembled operator monotone.

Directions are the discrete set {k * dtheta : k = 0..2M} in each point's
tangent frame, where dtheta = pi / (2 * floor(pi / (2 * sqrt(spacing)))) and
M = pi / (2 * dtheta) exactly. Orthogonal pairs are (k, k + M) for
k = 1..M; indices 0 and M are the frame axes used for gradients and the
discrete Laplacian.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ResolutionError, StencilError
from .sphere_grid import SphereGrid

logger = logging.getLogger(__name__)

CACHE_VERSION = 2
DET_GUARD = 1e-14


@dataclass(frozen=True)
class DirectionSet:
    """Discrete tangent directions shared by every grid point."""

    dtheta: float
    n_pairs: int

    @property
    def n_directions(self) -> int:
        # angles k*dtheta for k = 0..2M inclusive
        return 2 * self.n_pairs + 1

    def angle(self, k: int) -> float:
        return k * self.dtheta

    def direction(self, k: int) -> np.ndarray:
        """Unit 2-vector of direction k in the local tangent frame."""
        a = self.angle(k)
        return np.array([np.cos(a), np.sin(a)])

    def pairs(self) -> list[tuple[int, int]]:
        """Orthogonal direction index pairs (k, k + M), k = 1..M."""
        return [(j, j + self.n_pairs) for j in range(1, self.n_pairs + 1)]


def direction_set(spacing: float) -> DirectionSet:
    """Direction set for a grid of the given covering radius.

    dtheta = pi / (2 * floor(pi / (2 * sqrt(spacing)))), so that M * dtheta
    is exactly pi/2.
    """
    if not (0.0 < spacing):
        raise ResolutionError(f"spacing must be positive, got {spacing}")
    m = int(np.floor(np.pi / (2.0 * np.sqrt(spacing))))
    if m < 1:
        raise ResolutionError(
            f"grid too coarse for any direction pair (spacing {spacing:.4f})")
    return DirectionSet(dtheta=np.pi / (2.0 * m), n_pairs=m)


def fd_weights(r: np.ndarray, sin_t: np.ndarray, cos_t: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form stencil weights from neighbor polar coordinates.

    Parameters
    ----------
    r, sin_t, cos_t : (..., 4) arrays
        Tangent-plane polar coordinates of the four neighbors, ordered by
        quadrant Q1..Q4 relative to the direction axis.

    Returns
    -------
    w2, w1 : (..., 4) second- and first-derivative weights.
    det : (...,) determinant of the underlying 4x4 system (nonzero for
        admissible quadrant configurations).
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(sin_t, dtype=float)
    c = np.asarray(cos_t, dtype=float)
    r1, r2, r3, r4 = (r[..., j] for j in range(4))
    s1, s2, s3, s4 = (s[..., j] for j in range(4))
    c1, c2, c3, c4 = (c[..., j] for j in range(4))

    det = (c3 * s2 - c2 * s3) * (r1 * c1 * c1 * s4 - r4 * c4 * c4 * s1) \
        - (c1 * s4 - c4 * s1) * (r3 * c3 * c3 * s2 - r2 * c2 * c2 * s3)

    w2 = np.stack([
        2.0 * s4 * (c3 * s2 - c2 * s3) / (r1 * det),
        2.0 * s3 * (c1 * s4 - c4 * s1) / (r2 * det),
        -2.0 * s2 * (c1 * s4 - c4 * s1) / (r3 * det),
        -2.0 * s1 * (c3 * s2 - c2 * s3) / (r4 * det),
    ], axis=-1)
    w1 = np.stack([
        s4 * (r2 * s3 * c2 * c2 - r3 * s2 * c3 * c3) / (r1 * det),
        -s3 * (r1 * s4 * c1 * c1 - r4 * s1 * c4 * c4) / (r2 * det),
        s2 * (r1 * s4 * c1 * c1 - r4 * s1 * c4 * c4) / (r3 * det),
        -s1 * (r2 * s3 * c2 * c2 - r3 * s2 * c3 * c3) / (r4 * det),
    ], axis=-1)
    return w2, w1, det


def select_neighbors(r: np.ndarray, theta: np.ndarray, *, dtheta: float,
                     spacing: float, ids: np.ndarray | None = None
                     ) -> tuple[np.ndarray, int]:
    """Reference neighbor selection for one point and one direction.

    Picks one candidate per tangent quadrant minimizing |sin theta| subject
    to |sin theta| >= dtheta and r >= sqrt(spacing) - 2*spacing, with ties
    broken by smaller r then smaller id. If a quadrant is empty the
    constraints relax in order: drop the r floor, drop the angular floor,
    widen the cap from sqrt(spacing) to 2*sqrt(spacing).

    Parameters
    ----------
    r, theta : (m,) candidate polar coordinates on the tangent plane.
    dtheta : angular resolution of the direction set.
    spacing : grid covering radius.
    ids : (m,) candidate ids for tie-breaking (defaults to positions).

    Returns
    -------
    sel : (4,) positions into the candidate arrays, ordered Q1..Q4.
    rung : relaxation rung used (0 = fully constrained .. 3 = widened cap).

    Raises
    ------
    StencilError (point/direction set to -1) if a quadrant stays empty.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ids = np.arange(len(r)) if ids is None else np.asarray(ids)
    st, ct = np.sin(theta), np.cos(theta)
    sq = np.sqrt(spacing)
    for rung in range(4):
        sel = _select_once(r, st, ct, ids, *_rung_params(rung, dtheta, spacing, sq))
        if sel is None:
            continue
        w2, _, det = fd_weights(r[sel], st[sel], ct[sel])
        if _weights_ok(w2, det, r[sel]):
            return sel, rung
    raise StencilError(-1, -1, "no admissible neighbor set")


def _rung_params(rung: int, dtheta: float, spacing: float, sq: float
                 ) -> tuple[float, float, float]:
    """(r_floor, sin_floor, r_cap) of a relaxation rung."""
    if rung == 0:
        return max(sq - 2.0 * spacing, 0.0), dtheta, sq
    if rung == 1:
        return 0.0, dtheta, sq
    if rung == 2:
        return 0.0, 0.0, sq
    return 0.0, 0.0, 2.0 * sq


def _weights_ok(w2: np.ndarray, det: float | np.ndarray, r_sel: np.ndarray) -> bool:
    guard = DET_GUARD * float(np.max(r_sel)) ** 4
    return bool(np.isfinite(det) and abs(det) > guard
                and np.all(np.isfinite(w2)) and np.all(w2 >= -1e-12 * np.max(np.abs(w2))))


def _select_once(r, st, ct, ids, r_floor, sin_floor, r_cap):
    abs_st = np.abs(st)
    base = (r >= r_floor) & (r <= r_cap) & (abs_st >= sin_floor)
    sel = np.empty(4, dtype=np.int64)
    for quad, (cpos, spos) in enumerate([(True, True), (False, True),
                                         (False, False), (True, False)]):
        mask = base & ((ct >= 0.0) == cpos) & ((st >= 0.0) == spos)
        if not mask.any():
            return None
        cand = np.nonzero(mask)[0]
        order = np.lexsort((ids[cand], r[cand], abs_st[cand]))
        sel[quad] = cand[order[0]]
    return sel


@dataclass
class StencilTable:
    """Per-point, per-direction stencil data for a whole grid.

    Arrays are indexed [point, direction, neighbor-slot]; direction k has
    tangent angle k*dtheta; neighbor slots are quadrants Q1..Q4.
    """

    dtheta: float
    n_pairs: int
    spacing: float
    nbr: np.ndarray      # (n, d, 4) int32 grid indices
    w2: np.ndarray       # (n, d, 4) second-derivative weights
    w1: np.ndarray       # (n, d, 4) first-derivative weights
    rad: np.ndarray      # (n, d, 4) geodesic distance to each neighbor
    relax: np.ndarray    # (n, d) int8 relaxation rung used

    @property
    def n_points(self) -> int:
        return self.nbr.shape[0]

    @property
    def n_directions(self) -> int:
        return self.nbr.shape[1]

    @property
    def axis_dirs(self) -> tuple[int, int]:
        """Direction indices of the tangent frame axes (angles 0 and pi/2)."""
        return 0, self.n_pairs

    def directions(self) -> DirectionSet:
        return DirectionSet(dtheta=self.dtheta, n_pairs=self.n_pairs)

    def relaxed_fraction(self) -> float:
        return float(np.mean(self.relax > 0))


def build_stencil_table(grid: SphereGrid, workers: int = 1) -> StencilTable:
    """Construct stencils for every point and direction of a grid.

    Candidates come from geodesic caps of radius sqrt(spacing); stencils that
    exhaust the in-cap relaxation rungs are retried with caps widened to
    2*sqrt(spacing). A grid/direction pair with an empty quadrant after all
    relaxation raises StencilError.
    """
    ds = direction_set(grid.spacing)
    sq = float(np.sqrt(grid.spacing))
    cap_flat, cap_off = grid.cap_neighbors_all(sq)
    nbr, w2, w1, rad, relax, ok = backend.kernels().build_stencils(
        grid.points, grid.e1, grid.e2, cap_flat, cap_off,
        grid.spacing, ds.dtheta, ds.n_pairs, 0, 2, workers)

    if not ok.all():
        bad_pts = np.unique(np.nonzero(~ok)[0])
        logger.info("widening caps for %d points", len(bad_pts))
        wide_flat, wide_off = _caps_for_subset(grid, bad_pts, 2.0 * sq)
        nw, w2w, w1w, rw, rxw, okw = backend.kernels().build_stencils(
            grid.points, grid.e1, grid.e2, wide_flat, wide_off,
            grid.spacing, ds.dtheta, ds.n_pairs, 3, 3, workers,
            subset=bad_pts)
        fix = ~ok[bad_pts]
        for dst, src in ((nbr, nw), (w2, w2w), (w1, w1w), (rad, rw),
                         (relax, rxw), (ok, okw)):
            sub = dst[bad_pts]
            sub[fix] = src[fix]
            dst[bad_pts] = sub
        if not ok.all():
            i, k = np.argwhere(~ok)[0]
            raise StencilError(int(i), int(k))

    table = StencilTable(dtheta=ds.dtheta, n_pairs=ds.n_pairs, spacing=grid.spacing,
                         nbr=nbr, w2=w2, w1=w1, rad=rad, relax=relax)
    frac = table.relaxed_fraction()
    if frac > 0:
        logger.info("relaxed stencils: %.4f%%", 100.0 * frac)
    return table


def _caps_for_subset(grid: SphereGrid, subset: np.ndarray, radius: float
                     ) -> tuple[np.ndarray, np.ndarray]:
    chord = 2.0 * np.sin(min(radius, np.pi) / 2.0)
    lists = grid.tree.query_ball_point(grid.points[subset], chord)
    flat, offsets = [], np.zeros(len(subset) + 1, dtype=np.int64)
    for row, (i, lst) in enumerate(zip(subset, lists)):
        arr = np.asarray(lst, dtype=np.int64)
        arr = np.sort(arr[arr != i])
        flat.append(arr)
        offsets[row + 1] = offsets[row] + len(arr)
    return np.concatenate(flat), offsets


# ---------------------------------------------------------------------------
# applying stencils


def _as_points(table: StencilTable, points) -> np.ndarray:
    if points is None:
        return np.arange(table.n_points)
    return np.atleast_1d(np.asarray(points, dtype=np.int64))


def second_derivative(table: StencilTable, u: np.ndarray, direction: int,
                      points=None) -> np.ndarray:
    """Discrete second directional derivative of grid function u."""
    pts = _as_points(table, points)
    diff = u[table.nbr[pts, direction, :]] - u[pts, None]
    return np.einsum("ij,ij->i", table.w2[pts, direction, :], diff)


def first_derivative(table: StencilTable, u: np.ndarray, direction: int,
                     points=None) -> np.ndarray:
    """Discrete first directional derivative of grid function u."""
    pts = _as_points(table, points)
    diff = u[table.nbr[pts, direction, :]] - u[pts, None]
    return np.einsum("ij,ij->i", table.w1[pts, direction, :], diff)


def gradient(table: StencilTable, u: np.ndarray, points=None) -> np.ndarray:
    """Discrete tangent-frame gradient (components along angles 0 and pi/2)."""
    k0, k1 = table.axis_dirs
    return np.stack([first_derivative(table, u, k0, points),
                     first_derivative(table, u, k1, points)], axis=-1)


def laplacian(table: StencilTable, u: np.ndarray, points=None) -> np.ndarray:
    """Discrete Laplacian: sum of the two frame-axis second derivatives."""
    k0, k1 = table.axis_dirs
    return second_derivative(table, u, k0, points) + second_derivative(table, u, k1, points)


def gradient_and_laplacian(table: StencilTable, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Laplacian in one pass over a shared neighbor gather."""
    axes = list(table.axis_dirs)
    diff = u[table.nbr[:, axes, :]] - u[:, None, None]
    grad = np.einsum("ikj,ikj->ik", table.w1[:, axes, :], diff)
    lap = np.einsum("ikj,ikj->i", table.w2[:, axes, :], diff)
    return grad, lap


def laplacian_row_sums(table: StencilTable) -> np.ndarray:
    """sum_j w2_j over both frame-axis stencils, per point.

    The reciprocal of the maximum row sum is the stable explicit step for
    heat flow under this Laplacian.
    """
    k0, k1 = table.axis_dirs
    return table.w2[:, k0, :].sum(axis=1) + table.w2[:, k1, :].sum(axis=1)


def edge_lipschitz(table: StencilTable, u: np.ndarray) -> float:
    """max |u(x_j) - u(x0)| / d(x_j, x0) over every stencil edge."""
    diff = np.abs(u[table.nbr] - u[:, None, None])
    return float(np.max(diff / table.rad))


# ---------------------------------------------------------------------------
# cache

def cache_dir() -> str:
    env = os.environ.get("OTREFLECTOR_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "otreflector")


def cache_path(grid_digest: str) -> str:
    return os.path.join(cache_dir(), f"stencils_{grid_digest}_v{CACHE_VERSION}.npz")


def save_cache(table: StencilTable, grid_digest: str, path: str | None = None) -> str:
    path = path or cache_path(grid_digest)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    np.savez_compressed(
        path, version=np.int64(CACHE_VERSION), digest=np.bytes_(grid_digest.encode()),
        dtheta=table.dtheta, n_pairs=np.int64(table.n_pairs), spacing=table.spacing,
        nbr=table.nbr, w2=table.w2, w1=table.w1, rad=table.rad, relax=table.relax)
    return path


def load_cache(grid_digest: str, path: str | None = None) -> StencilTable | None:
    path = path or cache_path(grid_digest)
    if not os.path.exists(path):
        return None
    try:
        with np.load(path) as z:
            if int(z["version"]) != CACHE_VERSION:
                return None
            if bytes(z["digest"]).decode() != grid_digest:
                return None
            return StencilTable(
                dtheta=float(z["dtheta"]), n_pairs=int(z["n_pairs"]),
                spacing=float(z["spacing"]), nbr=z["nbr"], w2=z["w2"],
                w1=z["w1"], rad=z["rad"], relax=z["relax"])
    except Exception:
        logger.warning("ignoring unreadable stencil cache at %s", path)
        return None
