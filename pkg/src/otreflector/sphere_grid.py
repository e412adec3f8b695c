"""Point grids on the unit sphere.

Provides quasi-uniform grid generation (Fibonacci spiral lattice), geodesic
geometry helpers, tangent-plane projection, per-point orthonormal tangent
frames, Voronoi cell areas, and a spatial index for cap queries.

The characteristic grid spacing is the covering radius

    spacing = sup_{x in S^2} min_i d(x, x_i),

i.e. the radius of the largest empty geodesic cap. For the Fibonacci lattice
used here, spacing * sqrt(N) ~ 2.73 over the whole range of interest.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, SphericalVoronoi, cKDTree

from .errors import GeometryError

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-9
# tolerance accepted when reading user-supplied grid files
FILE_UNIT_TOL = 1e-6


def _check_unit(x: np.ndarray, tol: float = UNIT_TOL) -> None:
    norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        worst = float(np.abs(norms - 1.0).max())
        raise GeometryError(f"input not on the unit sphere (max deviation {worst:.3e})")


def geodesic_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
    """Great-circle distance between unit vectors.

    Uses atan2 of the cross/dot pair, which stays accurate for nearly
    parallel and nearly antipodal arguments.

    Parameters
    ----------
    x, y : (..., 3) arrays of unit vectors (broadcastable).

    Returns
    -------
    Distance in radians, in [0, pi].
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_unit(x)
    _check_unit(y)
    cross = np.cross(x, y)
    sin_d = np.linalg.norm(cross, axis=-1)
    cos_d = np.sum(x * y, axis=-1)
    d = np.arctan2(sin_d, cos_d)
    return float(d) if d.ndim == 0 else d


def project_to_tangent(x0: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Geodesic normal projection of sphere points onto the plane tangent at x0.

    The projection preserves geodesic distance to x0 (the image of x lies at
    Euclidean distance d(x0, x) from x0 along the initial direction of the
    connecting geodesic):

        proj(x) = x0 * (1 - d*cot(d)) + x * (d*csc(d)).

    Parameters
    ----------
    x0 : (3,) base point (unit).
    x : (..., 3) points to project (unit).

    Returns
    -------
    (..., 3) points on the tangent plane at x0.
    """
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_unit(x0)
    _check_unit(x)
    d = geodesic_distance(x0, x)
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    if np.any(d_arr > np.pi - 1e-6):
        raise GeometryError("projection undefined near the antipode of the base point")
    # series for t*cot(t), t*csc(t) below 1e-5 to avoid 0/0
    small = d_arr < 1e-5
    safe = np.where(small, 1.0, d_arr)
    cot_term = np.where(small, 1.0 - d_arr**2 / 3.0, safe / np.tan(safe))
    csc_term = np.where(small, 1.0 + d_arr**2 / 6.0, safe / np.sin(safe))
    out = x0 * (1.0 - cot_term)[..., None] + np.atleast_2d(x) * csc_term[..., None]
    return out.reshape(np.shape(x))


def tangent_frames(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent frame (e1, e2) at each point.

    e1 = normalize(ref x point) with ref = z-axis away from the poles and
    x-axis near them; e2 = point x e1. Then (e1, e2, point) is right-handed.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ref = np.where(np.abs(points[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(ref, points)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(points, e1)
    return e1, e2


def fibonacci_points(n: int) -> np.ndarray:
    """Offset Fibonacci spiral lattice with n points.

    z_i = 1 - (2i+1)/n with golden-angle longitudes. The offset keeps points
    away from the exact poles, which keeps Voronoi cell areas within ~12% of
    each other.
    """
    if n < 1:
        raise GeometryError("grid size must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    lon = np.pi * (3.0 - np.sqrt(5.0)) * i
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.stack([s * np.cos(lon), s * np.sin(lon), z], axis=1)
    # exact renormalization guards against rounding in the construction
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


def voronoi_areas(points: np.ndarray) -> np.ndarray:
    """Spherical Voronoi cell area of each point.

    Built by convex-hull duality (hull of the unit points gives the Delaunay
    triangulation; circumcenters give the Voronoi vertices; cell areas come
    from spherical polygon excess). Degenerate/cospherical inputs are retried
    once with a deterministic 1e-12 jitter.

    Returns
    -------
    (n,) areas in steradians, summing to 4*pi.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_unit(points, FILE_UNIT_TOL)
    try:
        sv = SphericalVoronoi(points, radius=1.0)
        return sv.calculate_areas()
    except Exception:
        logger.warning("spherical Voronoi failed; retrying with 1e-12 jitter")
        rng = np.random.default_rng(0)
        jittered = points + 1e-12 * rng.standard_normal(points.shape)
        jittered /= np.linalg.norm(jittered, axis=1, keepdims=True)
        try:
            sv = SphericalVoronoi(jittered, radius=1.0)
            return sv.calculate_areas()
        except Exception as exc:
            raise GeometryError(f"could not build a Voronoi diagram: {exc}") from exc


def estimate_spacing(points: np.ndarray, sample_factor: int = 10) -> float:
    """Estimate the covering radius sup_x min_i d(x, x_i).

    The supremum is attained at a spherical Voronoi vertex, so for grids that
    admit a Voronoi diagram the estimate includes all Voronoi vertices and is
    exact up to floating point. A quasi-random covering sample of
    max(sample_factor * n, 2000) points is always included as well; when the
    Voronoi construction is unavailable (fewer than 4 points, degenerate
    rank) the sampled maximum is inflated by 5% to stay upper-biased.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    tree = cKDTree(points)

    def _geodesic_max(queries: np.ndarray) -> float:
        chord, _ = tree.query(queries)
        return float(np.max(2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))))

    n_sample = max(sample_factor * n, 2000)
    sample = fibonacci_points(n_sample)
    # deterministic rotation decorrelates the sample from a Fibonacci grid
    rot = _fixed_rotation()
    best = _geodesic_max(sample @ rot.T)

    if n >= 4:
        try:
            sv = SphericalVoronoi(points, radius=1.0)
            return max(best, _geodesic_max(sv.vertices))
        except Exception:
            logger.warning("spacing estimate falling back to sampling only")
    return 1.05 * best


def _fixed_rotation() -> np.ndarray:
    """A fixed, generic rotation matrix (no symmetry axis of common grids)."""
    a, b = 0.7363827128429843, 0.3918265096724526
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]])
    return rz @ rx


@dataclass
class SphereGrid:
    """Quasi-uniform point set on the unit sphere with derived geometry.

    Attributes
    ----------
    points : (n, 3) unit vectors.
    areas : (n,) Voronoi cell areas, summing to 4*pi.
    spacing : covering radius of the point set (radians).
    e1, e2 : (n, 3) orthonormal tangent frames.
    """

    points: np.ndarray
    areas: np.ndarray
    spacing: float
    e1: np.ndarray
    e2: np.ndarray
    _tree: cKDTree = field(repr=False)
    _walk_pad: np.ndarray | None = field(default=None, repr=False, init=False,
                                         compare=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def tree(self) -> cKDTree:
        return self._tree

    def digest(self) -> str:
        """Stable content hash of the point set (used as cache key)."""
        return hashlib.sha256(np.ascontiguousarray(self.points).tobytes()).hexdigest()[:16]

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        """Index of the nearest grid point for each query unit vector.

        Scalar for a single vector, array for a batch.
        """
        _, idx = self._tree.query(np.asarray(queries, dtype=float))
        return idx

    def walk_table(self) -> np.ndarray:
        """Padded hull-edge adjacency used by nearest_walk, built lazily.

        Row i holds i itself in column 0 followed by the convex-hull
        (spherical Delaunay) neighbors of point i, padded with i.
        """
        if self._walk_pad is None:
            hull = ConvexHull(self.points)
            s = hull.simplices
            edges = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [2, 0]],
                                    s[:, [1, 0]], s[:, [2, 1]], s[:, [0, 2]]])
            edges = np.unique(edges, axis=0)
            src, dst = edges[:, 0], edges[:, 1]
            deg = np.bincount(src, minlength=self.n)
            width = int(deg.max()) + 1
            pad = np.repeat(np.arange(self.n, dtype=np.int64)[:, None], width, axis=1)
            cols = np.concatenate([np.arange(d) for d in deg]) + 1
            pad[src, cols] = dst
            self._walk_pad = pad
        return self._walk_pad

    def nearest_walk(self, queries: np.ndarray, start: np.ndarray) -> np.ndarray:
        """Exact nearest grid point via greedy descent on the Delaunay graph.

        Equivalent to nearest() but much faster when ``start`` is already
        close (warm start from a previous lookup of slowly moving queries).
        The dot product against grid points has no non-global local maxima
        on the hull adjacency graph, so the walk terminates at the true
        nearest point from any start; unfinished rows (never observed in
        practice) fall back to the tree query.
        """
        q = np.asarray(queries, dtype=float)
        cur = np.array(start, dtype=np.int64, copy=True)
        if self.n < 16:
            return np.asarray(self.nearest(q), dtype=np.int64)
        pad = self.walk_table()
        active = np.arange(len(cur))
        for _ in range(64):
            if active.size == 0:
                break
            cand = pad[cur[active]]
            dots = np.einsum('mkj,mj->mk', self.points[cand], q[active])
            new = cand[np.arange(active.size), dots.argmax(axis=1)]
            moved = new != cur[active]
            cur[active] = new
            active = active[moved]
        if active.size:
            cur[active] = self._tree.query(q[active])[1]
        # a query equidistant from several grid points (tied dot products)
        # ends at an arbitrary one of them depending on the start; tied
        # points share a Voronoi facet, hence are hull neighbors of each
        # other, so one adjacency pass normalizes the result to the
        # smallest tied index, making the lookup start-independent
        cand = pad[cur]
        dots = np.einsum('mkj,mj->mk', self.points[cand], q)
        tied = dots == dots.max(axis=1, keepdims=True)
        return np.where(tied, cand, self.n).min(axis=1)

    def cap_neighbors(self, center: np.ndarray | int, radius: float,
                      exclude_self: bool = False) -> np.ndarray:
        """Indices of grid points within geodesic ``radius`` of ``center``.

        ``center`` may be a unit vector or a grid point index.
        """
        if isinstance(center, (int, np.integer)):
            idx = int(center)
            c = self.points[idx]
        else:
            c = np.asarray(center, dtype=float)
            _check_unit(c)
            idx = None
        if radius >= np.pi:
            out = np.arange(self.n)
        else:
            chord = 2.0 * np.sin(radius / 2.0)
            out = np.asarray(self._tree.query_ball_point(c, chord), dtype=np.int64)
        if exclude_self and idx is not None:
            out = out[out != idx]
        return np.sort(out)

    def cap_neighbors_all(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Cap membership for every grid point at once, in CSR-like layout.

        Returns (flat, offsets) with flat[offsets[i]:offsets[i+1]] the sorted
        neighbor indices of point i (self excluded).
        """
        chord = 2.0 * np.sin(min(radius, np.pi) / 2.0)
        lists = self._tree.query_ball_point(self.points, chord)
        flat = []
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        for i, lst in enumerate(lists):
            arr = np.asarray(lst, dtype=np.int64)
            arr = np.sort(arr[arr != i])
            flat.append(arr)
            offsets[i + 1] = offsets[i] + len(arr)
        return np.concatenate(flat) if flat else np.zeros(0, np.int64), offsets


def build_grid(points: np.ndarray) -> SphereGrid:
    """Assemble a SphereGrid (areas, spacing, frames, index) from unit points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _check_unit(points, FILE_UNIT_TOL)
    points = points / np.linalg.norm(points, axis=1, keepdims=True)
    areas = voronoi_areas(points)
    spacing = estimate_spacing(points)
    e1, e2 = tangent_frames(points)
    return SphereGrid(points=points, areas=areas, spacing=spacing,
                      e1=e1, e2=e2, _tree=cKDTree(points))


def fibonacci_grid(n: int) -> SphereGrid:
    """Fibonacci spiral lattice grid with all derived geometry attached."""
    return build_grid(fibonacci_points(n))


def load_grid_file(path: str) -> SphereGrid:
    """Read a grid from a text file with one ``x y z`` unit vector per line.

    Blank lines and ``#`` comments are ignored. Vectors must be unit to 1e-6;
    they are renormalized exactly after validation.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise GeometryError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise GeometryError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise GeometryError(f"{path}: no points found")
    pts = np.asarray(rows, dtype=float)
    norms = np.linalg.norm(pts, axis=1)
    bad = np.abs(norms - 1.0) > FILE_UNIT_TOL
    if np.any(bad):
        first = int(np.nonzero(bad)[0][0])
        raise GeometryError(
            f"{path}: point {first} is not a unit vector (|x| = {norms[first]:.9f})")
    return build_grid(pts)


def save_grid_file(path: str, points: np.ndarray, comment: str = "") -> None:
    """Write points in the ``x y z`` text format read by load_grid_file."""
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for p in np.atleast_2d(points):
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
