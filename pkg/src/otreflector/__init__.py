"""Freeform reflector design by optimal transport on the unit sphere.

Solves the far-field reflector problem: given a source intensity f1 of
light leaving the origin and a desired far-field intensity f2, find a
mirror surface rho(x) x whose reflections rearrange f1 into f2. The
potential u with rho = exp(-u) satisfies a Monge-Ampere type equation on
the sphere, discretized here with monotone wide stencils on a Fibonacci
lattice and driven to steady state by a damped explicit iteration. Ray
tracing the constructed surface validates the result.

Typical use:

    from otreflector import density, monge_ampere, raytrace, solver, sphere_grid, stencil

    grid = sphere_grid.fibonacci_grid(5000)
    table = stencil.build_stencil_table(grid)
    f1 = density.builtin("donut_f1", grid)
    f2 = density.builtin("donut_f2", grid)
    f1p, f2p = density.preprocess_pair(f1, f2, grid, table)
    ctx = monge_ampere.build_context(grid, table, f1p, f2p)
    u, report = solver.solve(ctx)
    check = raytrace.validate(u, grid, table, f1p, f2, mode="forward")

or from the command line: ``otreflector run config.json``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BlowUpError,
    ConfigError,
    DegenerateStencilError,
    DensityError,
    GeometryError,
    OTReflectorError,
    ResolutionError,
    SingularCostError,
    StencilError,
)
