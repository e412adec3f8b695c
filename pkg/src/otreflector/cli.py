"""Command-line pipeline: config file in, reflector and validation out.

    otreflector run config.json [--workers N] [--no-cache] [--log-level L]

The config is a single JSON document (duplicate and unknown keys rejected):

    {
      "grid":      {"type": "fibonacci", "n": 20000}    or {"type": "file", "path": "grid.txt"},
      "source":    {"builtin": "donut_f1"}              or {"file": "f.csv"} or {"image": "f.pgm"},
      "target":    {"builtin": "donut_f2"},
      "epsilon":   0.3,
      "floor_both": false,
      "smooth_time": null,
      "solver":    {"tol": 1e-6, "max_iter": 50000, "k0": null,
                    "growth": 1.1, "shrink": 0.5, "fixed_step": false},
      "trace":     "forward",
      "output_dir": "out",
      "seed":      0,
      "workers":   1
    }

Artifacts written to output_dir: solution.csv (potential), reflector.ply and
reflector.csv (surface point cloud), reconstruction.csv (ray-traced
intensity), convergence.csv (iteration log), report.json (metrics; the
"timings", "created" and "environment" entries vary run to run, everything
else is deterministic for a given config).

Exit codes: 0 success, 2 invalid config, 3 solver did not converge,
4 geometry or stencil failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, backend, density, monge_ampere, raytrace, solver, sphere_grid, stencil
from .errors import BlowUpError, ConfigError, GeometryError, OTReflectorError, SingularCostError, StencilError

logger = logging.getLogger(__name__)

GRID_N_MIN = 100
GRID_N_MAX = 2_000_000
_DENSITY_KEYS = {
    "builtin": {"builtin", "theta", "a"},
    "file": {"file"},
    "image": {"image"},
}


@dataclass
class RunConfig:
    grid_type: str
    grid_n: int | None
    grid_path: str | None
    source: dict
    target: dict
    epsilon: float
    floor_both: bool
    smooth_time: float | None
    solver: solver.SolverParams
    trace: str
    output_dir: str
    seed: int
    workers: int
    raw: dict = field(default_factory=dict)


def _no_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen.add(key)
    return dict(pairs)


def validate_config(text: str, base_dir: str = ".") -> RunConfig:
    """Parse and validate a config document; raises ConfigError on problems."""
    errors: list[str] = []
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except ValueError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be an object"])

    known = {"grid", "source", "target", "epsilon", "floor_both", "smooth_time",
             "solver", "trace", "output_dir", "seed", "workers"}
    for key in raw:
        if key not in known:
            errors.append(f"unknown key {key!r}")

    grid = raw.get("grid")
    grid_type, grid_n, grid_path = "fibonacci", None, None
    if not isinstance(grid, dict):
        errors.append("missing or invalid 'grid' block")
    else:
        grid_type = grid.get("type", "fibonacci")
        if grid_type == "fibonacci":
            grid_n = grid.get("n")
            if not isinstance(grid_n, int) or not GRID_N_MIN <= grid_n <= GRID_N_MAX:
                errors.append(f"grid.n must be an integer in [{GRID_N_MIN}, {GRID_N_MAX}]")
            extra = set(grid) - {"type", "n"}
        elif grid_type == "file":
            grid_path = grid.get("path")
            if not isinstance(grid_path, str) or not grid_path:
                errors.append("grid.path must be a nonempty string")
            else:
                grid_path = os.path.join(base_dir, grid_path)
            extra = set(grid) - {"type", "path"}
        else:
            errors.append(f"grid.type must be 'fibonacci' or 'file', got {grid_type!r}")
            extra = set()
        if extra:
            errors.append(f"unknown grid keys: {sorted(extra)}")

    def check_density(name):
        spec = raw.get(name)
        if not isinstance(spec, dict):
            errors.append(f"missing or invalid '{name}' block")
            return {}
        kinds = [k for k in _DENSITY_KEYS if k in spec]
        if len(kinds) != 1:
            errors.append(f"{name} must contain exactly one of 'builtin', 'file', 'image'")
            return dict(spec)
        extra = set(spec) - _DENSITY_KEYS[kinds[0]]
        if extra:
            errors.append(f"unknown {name} keys: {sorted(extra)}")
        for pathkey in ("file", "image"):
            if pathkey in spec:
                if not isinstance(spec[pathkey], str) or not spec[pathkey]:
                    errors.append(f"{name}.{pathkey} must be a nonempty string")
                else:
                    spec = dict(spec)
                    spec[pathkey] = os.path.join(base_dir, spec[pathkey])
        return dict(spec)

    source = check_density("source")
    target = check_density("target")

    epsilon = raw.get("epsilon", 0.3)
    if not isinstance(epsilon, (int, float)) or not 0.0 < epsilon < 1.0:
        errors.append(f"epsilon must be in (0, 1), got {epsilon!r}")
    floor_both = raw.get("floor_both", False)
    if not isinstance(floor_both, bool):
        errors.append("floor_both must be a boolean")
    smooth_time = raw.get("smooth_time")
    if smooth_time is not None and (not isinstance(smooth_time, (int, float)) or smooth_time < 0):
        errors.append("smooth_time must be null or a nonnegative number")

    sol_raw = raw.get("solver", {})
    params = solver.SolverParams()
    if not isinstance(sol_raw, dict):
        errors.append("solver block must be an object")
    else:
        allowed = {"tol", "max_iter", "k0", "growth", "shrink", "fixed_step"}
        extra = set(sol_raw) - allowed
        if extra:
            errors.append(f"unknown solver keys: {sorted(extra)}")
        params = solver.SolverParams(
            k0=sol_raw.get("k0"), tol=sol_raw.get("tol", 1e-6),
            max_iter=sol_raw.get("max_iter", 50000),
            growth=sol_raw.get("growth", 1.1), shrink=sol_raw.get("shrink", 0.5),
            fixed_step=sol_raw.get("fixed_step", False))
        try:
            params.validate()
        except ConfigError as exc:
            errors.extend(f"solver: {msg}" for msg in exc.errors)

    trace = raw.get("trace", "forward")
    if trace not in ("forward", "inverse"):
        errors.append(f"trace must be 'forward' or 'inverse', got {trace!r}")
    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir must be a nonempty string")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append("seed must be a nonnegative integer")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        errors.append("workers must be a positive integer")

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        grid_type=grid_type, grid_n=grid_n, grid_path=grid_path,
        source=source, target=target, epsilon=float(epsilon),
        floor_both=floor_both,
        smooth_time=None if smooth_time is None else float(smooth_time),
        solver=params, trace=trace,
        output_dir=os.path.join(base_dir, output_dir), seed=seed,
        workers=workers, raw=raw)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return validate_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def _load_density(spec: dict, grid: sphere_grid.SphereGrid) -> np.ndarray:
    if "builtin" in spec:
        params = {k: v for k, v in spec.items() if k != "builtin"}
        return density.builtin(spec["builtin"], grid, **params)
    if "file" in spec:
        return density.normalize(
            density.load_density_csv(spec["file"], grid.n), grid.areas)
    raster = density.load_pgm(spec["image"])
    return density.from_equirect_image(raster, grid)


def _write_ply(path: str, vertices: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write("comment radial reflector surface point cloud\n")
        fh.write(f"element vertex {len(vertices)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write("end_header\n")
        for v in vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")


def run(cfg: RunConfig, use_cache: bool = True) -> dict:
    """Execute the full pipeline; returns the report dictionary."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    if cfg.grid_type == "file":
        grid = sphere_grid.load_grid_file(cfg.grid_path)
    else:
        grid = sphere_grid.fibonacci_grid(cfg.grid_n)
    timings["grid_s"] = time.perf_counter() - t0
    logger.info("grid: %d points, spacing %.5f", grid.n, grid.spacing)

    t0 = time.perf_counter()
    digest = grid.digest()
    table = stencil.load_cache(digest) if use_cache else None
    cached = table is not None
    if table is None:
        table = stencil.build_stencil_table(grid, workers=cfg.workers)
        if use_cache:
            try:
                stencil.save_cache(table, digest)
            except OSError as exc:
                logger.warning("could not write stencil cache: %s", exc)
    timings["stencils_s"] = time.perf_counter() - t0
    logger.info("stencils: %d directions, %.4f%% relaxed%s",
                table.n_directions, 100 * table.relaxed_fraction(),
                " (cached)" if cached else "")

    t0 = time.perf_counter()
    a_raw = _load_density(cfg.source, grid)
    b_raw = _load_density(cfg.target, grid)
    if cfg.trace == "inverse":
        a_raw, b_raw = b_raw, a_raw
    f1, f2 = density.preprocess_pair(a_raw, b_raw, grid, table,
                                     eps=cfg.epsilon, floor_both=cfg.floor_both,
                                     stop_time=cfg.smooth_time)
    reference = density.normalize(b_raw, grid.areas)
    timings["densities_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ctx = monge_ampere.build_context(grid, table, f1, f2, workers=cfg.workers,
                                     seed=cfg.seed)
    u, report = solver.solve(ctx, cfg.solver)
    timings["solve_s"] = time.perf_counter() - t0
    logger.info("solve: %d iterations, residual %.3e, converged=%s",
                report.iterations, report.residual, report.converged)

    t0 = time.perf_counter()
    tr = raytrace.validate(u, grid, table, f1, reference, mode=cfg.trace)
    tr_smooth = raytrace.error_report(f2, tr.reconstruction, grid.areas)
    timings["trace_s"] = time.perf_counter() - t0
    logger.info("trace: avg_abs %.4f (%.1f%% of max)", tr.avg_abs,
                100 * tr.pct_of_max)

    os.makedirs(cfg.output_dir, exist_ok=True)
    density.save_density_csv(os.path.join(cfg.output_dir, "solution.csv"), u)
    rho = np.exp(-u)
    _write_ply(os.path.join(cfg.output_dir, "reflector.ply"),
               rho[:, None] * grid.points)
    with open(os.path.join(cfg.output_dir, "reflector.csv"), "w") as fh:
        fh.write("point_id,x,y,z,rho\n")
        for i, (p, r) in enumerate(zip(grid.points, rho)):
            fh.write(f"{i},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{float(r)!r}\n")
    density.save_density_csv(os.path.join(cfg.output_dir, "reconstruction.csv"),
                             tr.reconstruction)
    report.history_csv(os.path.join(cfg.output_dir, "convergence.csv"))

    doc = {
        "config": cfg.raw,
        "grid": {"n": grid.n, "spacing": grid.spacing, "digest": digest,
                 "relaxed_stencils": table.relaxed_fraction(),
                 "directions": table.n_directions},
        "preprocess": {
            "epsilon": cfg.epsilon, "floor_both": cfg.floor_both,
            "smooth_time": cfg.smooth_time if cfg.smooth_time is not None
                           else float(np.sqrt(table.spacing)),
            "source_mass": density.total_mass(f1, grid.areas),
            "target_mass": density.total_mass(f2, grid.areas),
        },
        "solver": {
            "iterations": report.iterations, "accepted": report.accepted,
            "rejected": report.rejected, "residual": report.residual,
            "converged": report.converged, "lipschitz": report.lipschitz,
            "k_first": report.k_first, "k_final": report.k_final,
            "k_min": report.k_min, "k_max": report.k_max,
        },
        "trace": {**tr.metrics(),
                  "vs_preprocessed": {k: tr_smooth[k] for k in
                                      ("avg_abs", "pct_of_max", "max_abs")}},
        "environment": {"backend": backend.backend_name(),
                        "package_version": __version__,
                        "stencil_cache": cached},
        "timings": timings,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(cfg.output_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otreflector",
        description="Reflector design by optimal transport on the sphere.")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a pipeline config")
    runp.add_argument("config", help="path to a JSON run config")
    runp.add_argument("--workers", type=int, default=None,
                      help="override the config worker count")
    runp.add_argument("--no-cache", action="store_true",
                      help="ignore and do not write the stencil cache")
    runp.add_argument("--log-level", default="INFO",
                      choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    args = parser.parse_args(argv)

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.workers is not None:
        if args.workers < 1:
            print("config error: --workers must be positive", file=sys.stderr)
            return 2
        cfg.workers = args.workers

    try:
        doc = run(cfg, use_cache=not args.no_cache)
    except BlowUpError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (GeometryError, StencilError, SingularCostError) as exc:
        print(f"geometry failure: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OTReflectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    if not doc["solver"]["converged"]:
        print("solver did not converge within max_iter", file=sys.stderr)
        return 3
    print(json.dumps({"avg_abs_error": doc["trace"]["avg_abs_error"],
                      "pct_of_max_error": doc["trace"]["pct_of_max_error"],
                      "iterations": doc["solver"]["iterations"],
                      "output_dir": cfg.output_dir}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
