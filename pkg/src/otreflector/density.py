"""Source and target intensities on a sphere grid.

A density is a plain 1-D float array of per-point intensities
(1/steradian), paired with the grid's Voronoi areas for quadrature: the
mass of f is sum(f * areas). The pipeline stages are

    raw values -> normalize -> positivity_mix (target, and source when
    floor_both is requested) -> heat_smooth (target only) -> solve

and every stage preserves unit mass up to quadrature roundoff. Only the
target density must be strictly positive and Lipschitz-smoothed: it appears
in a denominator of the discretized operator, evaluated by nearest-point
lookup at mapped directions. The source density may stay raw and
discontinuous.

Builtin test intensities: a uniform sphere, a donut-shaped band in the
northern hemisphere with its mirror image as target, a geodesic triangle
indicator, and a smoothed northern-hemisphere ramp tanh(a z). The donut
target is the reflection of the source across the equator; the triangle and
ramp pair reproduces a hemispheric source reshaped onto a small triangle.
"""

from __future__ import annotations

import numpy as np

from . import stencil
from .errors import ConfigError, DensityError, StencilError
from .sphere_grid import SphereGrid
from .stencil import StencilTable

FOUR_PI = 4.0 * np.pi
DONUT_Z_MAX = np.sqrt(2.0) / 2.0
DONUT_NORM = (4.0 * np.pi / 15.0) * (np.sqrt(2.0) + 2.0)


def total_mass(values: np.ndarray, areas: np.ndarray) -> float:
    return float(np.dot(values, areas))


def normalize(values: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Scale a nonnegative intensity to unit total mass."""
    values = np.asarray(values, dtype=float)
    if values.min(initial=0.0) < 0.0:
        raise DensityError("density has negative values")
    mass = total_mass(values, areas)
    if not mass > 0.0:
        raise DensityError("density has zero total mass")
    return values / mass


def positivity_mix(values: np.ndarray, eps: float) -> np.ndarray:
    """Convex mix (1 - eps) f + eps/(4 pi) with the uniform density.

    Keeps unit mass and bounds the result below by eps/(4 pi).
    """
    if not 0.0 < eps < 1.0:
        raise ConfigError([f"positivity mix epsilon must be in (0, 1), got {eps}"])
    return (1.0 - eps) * np.asarray(values, dtype=float) + eps / FOUR_PI


def heat_smooth(values: np.ndarray, table: StencilTable, areas: np.ndarray,
                stop_time: float | None = None) -> np.ndarray:
    """Forward-Euler heat evolution to t = stop_time (default sqrt(spacing)).

    The step size is the largest stable one shared by all points,
    k = 1 / max_i sum_j w2_ij over both frame-axis stencils, so every update
    is a convex combination of neighbor values (discrete maximum principle).
    The final step is shortened to land exactly on stop_time; the result is
    renormalized to unit mass.
    """
    v = np.asarray(values, dtype=float).copy()
    if stop_time is None:
        stop_time = float(np.sqrt(table.spacing))
    if stop_time <= 0.0:
        return normalize(v, areas)
    rows = stencil.laplacian_row_sums(table)
    if rows.min() <= 0.0:
        raise StencilError(int(rows.argmin()), -1, "nonpositive heat step bound")
    k = 1.0 / float(rows.max())
    t = 0.0
    while t < stop_time:
        step = min(k, stop_time - t)
        v = v + step * stencil.laplacian(table, v)
        t += step
    return normalize(np.maximum(v, 0.0), areas)


# ---------------------------------------------------------------------------
# builtin intensities


def _donut_profile(z: np.ndarray) -> np.ndarray:
    # -4 sqrt(1-z^2) z^3 + 4 (1-z^2)^(3/2) z on the unit sphere
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    return (-4.0 * s * z ** 3 + 4.0 * s ** 3 * z) / DONUT_NORM


def donut_source(points: np.ndarray) -> np.ndarray:
    z = points[:, 2]
    band = (z >= 0.0) & (z <= DONUT_Z_MAX)
    return np.where(band, _donut_profile(z), 0.0)


def donut_target(points: np.ndarray) -> np.ndarray:
    """Mirror image of the donut source across the equator."""
    z = points[:, 2]
    band = (z <= 0.0) & (z >= -DONUT_Z_MAX)
    return np.where(band, _donut_profile(-z), 0.0)


def triangle_vertices(theta: float) -> np.ndarray:
    j = np.arange(3)
    return np.stack([np.sin(theta) * np.cos(2.0 * np.pi * j / 3.0),
                     np.sin(theta) * np.sin(2.0 * np.pi * j / 3.0),
                     np.full(3, np.cos(theta))], axis=1)


def triangle_area(vertices: np.ndarray) -> float:
    """Solid angle of the geodesic triangle spanned by three unit vectors."""
    t0, t1, t2 = vertices
    num = abs(float(np.dot(t0, np.cross(t1, t2))))
    den = 1.0 + float(np.dot(t0, t1) + np.dot(t1, t2) + np.dot(t0, t2))
    return 2.0 * np.arctan2(num, den)


def triangle_indicator(points: np.ndarray, theta: float) -> np.ndarray:
    """Uniform density 1/area on the small geodesic triangle around the pole
    opposite the vertices' hemisphere (vertex colatitude theta in [pi/2, pi))."""
    if not np.pi / 2.0 <= theta < np.pi:
        raise ConfigError([f"triangle theta must be in [pi/2, pi), got {theta}"])
    t = triangle_vertices(theta)
    edges = [np.cross(t[1], t[2]), np.cross(t[2], t[0]), np.cross(t[0], t[1])]
    inside = np.ones(len(points), dtype=bool)
    for e in edges:
        inside &= points @ e <= 0.0
    return np.where(inside, 1.0 / triangle_area(t), 0.0)


def hemisphere_ramp(points: np.ndarray, a: float) -> np.ndarray:
    """tanh(a z) on the northern hemisphere, zero below the equator.

    The nominal prefactor 2 pi log(cosh a) / a is kept for reference but the
    result is renormalized numerically downstream, so only the shape enters.
    """
    if a <= 0.0:
        raise ConfigError([f"hemisphere ramp steepness must be positive, got {a}"])
    log_cosh = np.logaddexp(a, -a) - np.log(2.0)
    pref = 2.0 * np.pi * log_cosh / a
    z = points[:, 2]
    return np.where(z >= 0.0, pref * np.tanh(a * z), 0.0)


def builtin(name: str, grid: SphereGrid, **params) -> np.ndarray:
    """Evaluate a named builtin intensity on a grid and normalize it.

    Names: uniform, donut_f1, donut_f2, triangle (theta=2.1),
    hemisphere_tanh (a=10).
    """
    pts = grid.points
    if name == "uniform":
        values = np.ones(grid.n)
        extra = set(params)
    elif name == "donut_f1":
        values = donut_source(pts)
        extra = set(params)
    elif name == "donut_f2":
        values = donut_target(pts)
        extra = set(params)
    elif name == "triangle":
        values = triangle_indicator(pts, float(params.pop("theta", 2.1)))
        extra = set(params)
    elif name == "hemisphere_tanh":
        values = hemisphere_ramp(pts, float(params.pop("a", 10.0)))
        extra = set(params)
    else:
        raise ConfigError([f"unknown builtin density {name!r}"])
    if extra:
        raise ConfigError([f"unknown parameters for density {name!r}: {sorted(extra)}"])
    return normalize(values, grid.areas)


# ---------------------------------------------------------------------------
# image and file ingestion


def from_equirect_image(raster: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """Bilinear sample of an equirectangular grayscale raster, normalized.

    Row 0 is latitude +pi/2 (north), column 0 is longitude -pi; longitude
    wraps, latitude clamps at the poles.
    """
    raster = np.asarray(raster, dtype=float)
    if raster.ndim != 2 or raster.size == 0:
        raise DensityError("raster must be a nonempty 2-D array")
    if raster.min() < 0.0:
        raise DensityError("raster has negative pixels")
    h, w = raster.shape
    lon = np.arctan2(grid.points[:, 1], grid.points[:, 0])
    lat = np.arcsin(np.clip(grid.points[:, 2], -1.0, 1.0))
    col = (lon + np.pi) / (2.0 * np.pi) * w - 0.5
    row = (np.pi / 2.0 - lat) / np.pi * h - 0.5
    c0 = np.floor(col).astype(int)
    r0 = np.floor(row).astype(int)
    fc = col - c0
    fr = row - r0
    c0m, c1m = c0 % w, (c0 + 1) % w
    r0m = np.clip(r0, 0, h - 1)
    r1m = np.clip(r0 + 1, 0, h - 1)
    values = ((1 - fr) * (1 - fc) * raster[r0m, c0m]
              + (1 - fr) * fc * raster[r0m, c1m]
              + fr * (1 - fc) * raster[r1m, c0m]
              + fr * fc * raster[r1m, c1m])
    if not values.max() > 0.0:
        raise DensityError("raster sampled to all zeros on the grid")
    return normalize(values, grid.areas)


def load_pgm(path: str) -> np.ndarray:
    """Read a PGM grayscale image (ASCII P2 or binary P5) as floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with # comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DensityError(f"truncated PGM header in {path}")
        tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise DensityError(f"bad PGM header in {path}") from exc
    if maxval <= 0 or w <= 0 or h <= 0:
        raise DensityError(f"bad PGM dimensions in {path}")
    if magic == b"P2":
        pix = np.array(data[pos:].split(), dtype=float)
    elif magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        pix = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(float)
    else:
        raise DensityError(f"unsupported PGM magic {magic!r} in {path}")
    if pix.size != w * h:
        raise DensityError(f"PGM pixel count mismatch in {path}")
    return pix.reshape(h, w) / maxval


def load_density_csv(path: str, n: int) -> np.ndarray:
    """Read per-point values from CSV point_id,value (missing ids are 0)."""
    values = np.zeros(n)
    seen = np.zeros(n, dtype=bool)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if lineno == 1 and not parts[0].strip().lstrip("-").isdigit():
                continue  # header row
            if len(parts) != 2:
                raise DensityError(f"{path}:{lineno}: expected point_id,value")
            try:
                i, v = int(parts[0]), float(parts[1])
            except ValueError as exc:
                raise DensityError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= i < n:
                raise DensityError(f"{path}:{lineno}: point id {i} out of range")
            if seen[i]:
                raise DensityError(f"{path}:{lineno}: duplicate point id {i}")
            seen[i] = True
            values[i] = v
    return values


def save_density_csv(path: str, values: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("point_id,value\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{float(v)!r}\n")


# ---------------------------------------------------------------------------
# pipeline


def preprocess_pair(f1_raw: np.ndarray, f2_raw: np.ndarray, grid: SphereGrid,
                    table: StencilTable, eps: float = 0.3,
                    floor_both: bool = False,
                    stop_time: float | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Normalize both densities and regularize the target.

    The target is mixed with the uniform density (weight eps) and heat
    smoothed; the source stays raw unless floor_both is set, in which case
    it receives the same positivity mix (but no smoothing).
    """
    f1 = normalize(f1_raw, grid.areas)
    f2 = normalize(f2_raw, grid.areas)
    if floor_both:
        f1 = positivity_mix(f1, eps)
    f2 = positivity_mix(f2, eps)
    f2 = heat_smooth(f2, table, grid.areas, stop_time)
    return f1, f2
