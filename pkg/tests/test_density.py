"""Tests for densities: builtins, smoothing, image sampling, file formats."""

from __future__ import annotations

import numpy as np
import pytest

from otreflector import density, sphere_grid, stencil
from otreflector.errors import ConfigError, DensityError

FOUR_PI = 4.0 * np.pi


# ------------------------------------------------------- normalization


def test_normalize_unit_mass(grid2000):
    rng = np.random.default_rng(21)
    v = rng.uniform(0.0, 7.0, grid2000.n)
    out = density.normalize(v, grid2000.areas)
    assert abs(density.total_mass(out, grid2000.areas) - 1.0) < 1e-12
    with pytest.raises(DensityError):
        density.normalize(v - 1.0, grid2000.areas)
    with pytest.raises(DensityError):
        density.normalize(np.zeros(grid2000.n), grid2000.areas)


def test_positivity_mix_mass_and_floor(grid2000, uniform_density):
    rng = np.random.default_rng(22)
    v = density.normalize(rng.uniform(0.0, 3.0, grid2000.n), grid2000.areas)
    for eps in (0.1, 0.3, 0.9):
        out = density.positivity_mix(v, eps)
        assert abs(density.total_mass(out, grid2000.areas) - 1.0) < 1e-12
        assert out.min() >= eps / FOUR_PI - 1e-15
    for eps in (0.0, 1.0, -0.2, 2.0):
        with pytest.raises(ConfigError):
            density.positivity_mix(v, eps)


# ------------------------------------------------------- heat smoothing


def test_heat_smooth_uniform_fixed_point(grid2000, table2000, uniform_density):
    out = density.heat_smooth(uniform_density, table2000, grid2000.areas)
    assert np.abs(out - uniform_density).max() < 1e-12


def test_heat_smooth_single_step_max_principle(grid2000, table2000):
    # the advertised step bound makes each update a convex combination of
    # neighbor values: one step can create no new extrema
    rng = np.random.default_rng(23)
    rows = stencil.laplacian_row_sums(table2000)
    k = 1.0 / rows.max()
    for _ in range(10):
        v = rng.uniform(0.0, 1.0, grid2000.n)
        w = v + k * stencil.laplacian(table2000, v)
        assert w.max() <= v.max() + 1e-12
        assert w.min() >= v.min() - 1e-12


def test_heat_smooth_max_principle_scale_free(grid2000, table2000):
    # output is renormalized, so compare contrast ratios: smoothing must not
    # widen max/min
    rng = np.random.default_rng(24)
    for _ in range(10):
        v = density.normalize(rng.uniform(0.05, 5.0, grid2000.n), grid2000.areas)
        out = density.heat_smooth(v, table2000, grid2000.areas)
        assert abs(density.total_mass(out, grid2000.areas) - 1.0) < 1e-12
        assert out.min() > 0.0
        assert out.max() * v.min() <= out.min() * v.max() + 1e-12


def test_heat_smooth_contracts_lipschitz(grid2000, table2000):
    rng = np.random.default_rng(25)
    v = density.normalize(rng.uniform(0.1, 5.0, grid2000.n), grid2000.areas)
    lip_in = stencil.edge_lipschitz(table2000, v)
    out = density.heat_smooth(v, table2000, grid2000.areas)
    assert stencil.edge_lipschitz(table2000, out) < lip_in / 10.0


def test_heat_smooth_zero_time_is_identity(grid2000, table2000):
    rng = np.random.default_rng(26)
    v = density.normalize(rng.uniform(0.1, 2.0, grid2000.n), grid2000.areas)
    out = density.heat_smooth(v, table2000, grid2000.areas, stop_time=0.0)
    assert np.abs(out - v).max() < 1e-14


# ------------------------------------------------------------- builtins


def test_donut_band_and_mirror(grid2000):
    pts = grid2000.points
    f1 = density.donut_source(pts)
    f2 = density.donut_target(pts)
    z = pts[:, 2]
    assert (f1[(z < 0) | (z > density.DONUT_Z_MAX)] == 0).all()
    assert (f2[(z > 0) | (z < -density.DONUT_Z_MAX)] == 0).all()
    assert (f1 >= 0).all() and (f2 >= 0).all()
    mirrored = pts * np.array([1.0, 1.0, -1.0])
    assert np.abs(f2 - density.donut_source(mirrored)).max() == 0.0


def test_donut_profile_vanishes_at_band_edges():
    edges = np.array([[1.0, 0.0, 0.0],
                      [np.sqrt(1.0 - density.DONUT_Z_MAX ** 2), 0.0,
                       density.DONUT_Z_MAX]])
    assert np.abs(density.donut_source(edges)).max() < 1e-15


def test_donut_analytic_normalization(grid2000):
    # the closed-form prefactor already gives unit mass; the quadrature
    # error of the grid is all that remains
    m = density.total_mass(density.donut_source(grid2000.points), grid2000.areas)
    assert abs(m - 1.0) < 1e-3


def test_triangle_area_matches_angle_excess():
    # independent oracle: spherical excess from the interior angles
    rng = np.random.default_rng(27)
    for _ in range(10):
        theta = float(rng.uniform(np.pi / 2 + 0.1, np.pi - 0.3))
        t = density.triangle_vertices(theta)
        angles = []
        for j in range(3):
            a, b, c = t[j], t[(j + 1) % 3], t[(j + 2) % 3]
            tb = b - (b @ a) * a
            tc = c - (c @ a) * a
            angles.append(np.arccos(np.clip(
                tb @ tc / np.linalg.norm(tb) / np.linalg.norm(tc), -1, 1)))
        excess = sum(angles) - np.pi
        assert abs(density.triangle_area(t) - excess) < 1e-12


def test_triangle_indicator_membership(grid2000):
    theta = 2.1
    vals = density.triangle_indicator(grid2000.points, theta)
    area = density.triangle_area(density.triangle_vertices(theta))
    inside = vals > 0
    assert np.abs(vals[inside] - 1.0 / area).max() < 1e-15
    # quadrature mass close to one for the analytically scaled indicator
    assert abs(density.total_mass(vals, grid2000.areas) - 1.0) < 2e-2
    # all triangle points sit in the southern cap opposite the vertices
    assert grid2000.points[inside, 2].max() < np.cos(np.pi - theta) + 1e-12
    for bad in (0.5, np.pi, 4.0):
        with pytest.raises(ConfigError):
            density.triangle_indicator(grid2000.points, bad)


def test_hemisphere_ramp_shape(grid2000):
    vals = density.hemisphere_ramp(grid2000.points, 10.0)
    z = grid2000.points[:, 2]
    assert (vals[z < 0] == 0).all()
    north = np.argsort(z[z >= 0])
    assert (np.diff(vals[z >= 0][north]) >= 0).all()
    with pytest.raises(ConfigError):
        density.hemisphere_ramp(grid2000.points, 0.0)


def test_builtin_dispatch(grid2000):
    for name in ("uniform", "donut_f1", "donut_f2", "triangle", "hemisphere_tanh"):
        vals = density.builtin(name, grid2000)
        assert abs(density.total_mass(vals, grid2000.areas) - 1.0) < 1e-12
        assert vals.min() >= 0.0
    u = density.builtin("uniform", grid2000)
    assert np.abs(u - 1.0 / FOUR_PI).max() < 1e-12
    custom = density.builtin("triangle", grid2000, theta=2.5)
    assert not np.array_equal(custom, density.builtin("triangle", grid2000))
    with pytest.raises(ConfigError):
        density.builtin("vortex", grid2000)
    with pytest.raises(ConfigError):
        density.builtin("uniform", grid2000, theta=2.0)


# ---------------------------------------------------------------- image


def test_equirect_constant_raster_is_uniform(grid2000):
    out = density.from_equirect_image(np.full((16, 32), 7.0), grid2000)
    assert np.abs(out - 1.0 / FOUR_PI).max() < 1e-12


def test_equirect_raster_validation(grid2000):
    with pytest.raises(DensityError):
        density.from_equirect_image(np.zeros((4, 0)), grid2000)
    with pytest.raises(DensityError):
        density.from_equirect_image(-np.ones((4, 4)), grid2000)
    with pytest.raises(DensityError):
        density.from_equirect_image(np.ones(16), grid2000)
    with pytest.raises(DensityError):
        density.from_equirect_image(np.zeros((4, 4)), grid2000)


def test_equirect_latitude_bands(grid2000):
    # a raster varying only with row lands close to the same function of
    # latitude on the grid
    h, w = 64, 128
    raster = np.repeat(np.linspace(2.0, 1.0, h)[:, None], w, axis=1)
    out = density.from_equirect_image(raster, grid2000)
    lat = np.arcsin(grid2000.points[:, 2])
    row = (np.pi / 2 - lat) / np.pi * h - 0.5
    want = 2.0 - np.clip(row, 0, h - 1) / (h - 1)
    want = want / density.total_mass(want, grid2000.areas)
    assert np.abs(out - want).max() < 1e-3 * out.max()


def test_equirect_longitude_wrap(grid2000):
    # two-column raster: sampled value must be continuous across the seam
    raster = np.array([[1.0, 3.0], [1.0, 3.0]])
    out = density.from_equirect_image(raster, grid2000)
    assert out.min() > 0
    lon = np.arctan2(grid2000.points[:, 1], grid2000.points[:, 0])
    near_seam = np.abs(np.abs(lon) - np.pi) < 0.02
    spread = out[near_seam].max() - out[near_seam].min()
    assert spread < 0.05 * out.max()


# ----------------------------------------------------------- PGM / CSV


PGM_PIXELS = np.array([[0, 100, 200], [255, 50, 25]], dtype=np.uint8)


def test_load_pgm_ascii_and_binary(tmp_path):
    p2 = tmp_path / "a.pgm"
    p2.write_bytes(b"P2\n# comment\n3 2\n255\n0 100 200\n255 50 25\n")
    a = density.load_pgm(str(p2))
    p5 = tmp_path / "b.pgm"
    p5.write_bytes(b"P5\n3 2\n255\n" + PGM_PIXELS.tobytes())
    b = density.load_pgm(str(p5))
    assert np.array_equal(a, b)
    assert np.array_equal(a, PGM_PIXELS / 255.0)
    wide = tmp_path / "c.pgm"
    wide.write_bytes(b"P5 3 2 65535\n" + PGM_PIXELS.astype(">u2").tobytes())
    c = density.load_pgm(str(wide))
    assert np.array_equal(c, PGM_PIXELS / 65535.0)


def test_load_pgm_errors(tmp_path):
    cases = {
        "magic.pgm": b"P7\n3 2\n255\n" + bytes(6),
        "trunc.pgm": b"P5\n3 2\n",
        "count.pgm": b"P2\n3 2\n255\n0 1 2 3\n",
        "dims.pgm": b"P2\n0 2\n255\n",
    }
    for name, body in cases.items():
        path = tmp_path / name
        path.write_bytes(body)
        with pytest.raises(DensityError):
            density.load_pgm(str(path))


def test_density_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(28)
    v = rng.uniform(0.0, 3.0, 50)
    v[7] = 0.0
    path = str(tmp_path / "d.csv")
    density.save_density_csv(path, v)
    out = density.load_density_csv(path, 50)
    assert np.array_equal(out, v)


def test_density_csv_parsing(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("point_id,value\n# note\n\n2,1.5\n0,0.25\n")
    out = density.load_density_csv(str(path), 4)
    assert np.array_equal(out, [0.25, 0.0, 1.5, 0.0])
    for body in ("0,1\n0,2\n", "9,1\n", "1\n", "1,x\n"):
        path.write_text(body)
        with pytest.raises(DensityError):
            density.load_density_csv(str(path), 4)


# ------------------------------------------------------------- pipeline


def test_preprocess_pair_masses_and_floor(grid2000, table2000):
    f1r = density.donut_source(grid2000.points)
    f2r = density.donut_target(grid2000.points)
    f1, f2 = density.preprocess_pair(f1r, f2r, grid2000, table2000, eps=0.3)
    for f in (f1, f2):
        assert abs(density.total_mass(f, grid2000.areas) - 1.0) < 1e-12
    # source untouched beyond normalization; target floored and smoothed
    assert np.array_equal(f1, density.normalize(f1r, grid2000.areas))
    assert f2.min() > 0.9 * 0.3 / FOUR_PI
    assert (f1.min() == 0.0) and (f2.min() > 0.0)


def test_preprocess_pair_floor_both(grid2000, table2000):
    f1r = density.triangle_indicator(grid2000.points, 2.1)
    f2r = density.hemisphere_ramp(grid2000.points, 10.0)
    f1, f2 = density.preprocess_pair(f2r, f1r, grid2000, table2000,
                                     eps=0.3, floor_both=True)
    assert f1.min() >= 0.3 / FOUR_PI - 1e-15
    assert f2.min() > 0.0
    assert abs(density.total_mass(f1, grid2000.areas) - 1.0) < 1e-12
    assert abs(density.total_mass(f2, grid2000.areas) - 1.0) < 1e-12
