"""Exception types shared across the package."""

from __future__ import annotations


class OTReflectorError(Exception):
    """Base class for all package errors."""


class GeometryError(OTReflectorError):
    """Invalid geometric input (non-unit vectors, antipodal projection, ...)."""


class ResolutionError(GeometryError):
    """Grid too coarse for the requested construction."""


class StencilError(OTReflectorError):
    """Stencil construction failed at a specific point and direction."""

    def __init__(self, point: int, direction: int, message: str = ""):
        self.point = int(point)
        self.direction = int(direction)
        detail = message or "empty quadrant after relaxation ladder"
        super().__init__(f"stencil failure at point {self.point}, direction {self.direction}: {detail}")


class DegenerateStencilError(StencilError):
    """Selected neighbor set produced a near-singular coefficient system."""


class SingularCostError(OTReflectorError):
    """Mapped point collided with a stencil point, making the cost singular."""

    def __init__(self, count: int, example_points: list[int]):
        self.count = int(count)
        self.example_points = [int(i) for i in example_points]
        super().__init__(
            f"singular cost at {self.count} points (e.g. {self.example_points[:5]})"
        )


class DensityError(OTReflectorError):
    """Invalid density data (zero mass, negative values, empty raster)."""


class BlowUpError(OTReflectorError):
    """Solver produced NaN/Inf and could not recover by shrinking the step."""

    def __init__(self, iteration: int, last_state):
        self.iteration = int(iteration)
        self.last_state = last_state
        super().__init__(f"numerical blow-up at iteration {self.iteration}")


class ConfigError(OTReflectorError):
    """Run configuration failed validation; carries a list of messages."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
