"""Geometric optics of the far-field reflector construction.

A reflector is the radial graph rho(x) * x over source directions x on the
unit sphere, with rho = exp(-u) for a scalar potential u. Light leaves the
origin along x, hits the surface, and reflects to the far-field direction

    T(x, p) = (-2 p + (|p|^2 - 1) x) / (|p|^2 + 1),      p = grad u,

where the gradient is tangential (a 3-vector orthogonal to x). T is exactly
unit and equals the mirror reflection of x in the surface normal of the
radial graph, so ray tracing the built surface and evaluating T are two
routes to the same map. With p = 0 the map sends x to its antipode, and in
general the deflection angle between x and T(x, p) is 2*arccot(|p|).

The transport cost whose optimal map is T is c(x, y) = -log(2 - 2 x.y)
(= -2 log |x - y| for unit vectors).
"""

from __future__ import annotations

import numpy as np

from .errors import SingularCostError

COST_FLOOR = 1e-30


def cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Logarithmic transport cost -log(2 - 2 x.y), broadcast over rows.

    Raises SingularCostError when a pair coincides (squared chord below
    COST_FLOOR), since the cost diverges there.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    val = 2.0 - 2.0 * np.sum(x * y, axis=-1)
    bad = val < COST_FLOOR
    if np.any(bad):
        where = np.flatnonzero(np.atleast_1d(bad))
        raise SingularCostError(int(np.sum(bad)), list(where[:3]))
    return -np.log(val)


def ambient_gradient(grad2: np.ndarray, e1: np.ndarray, e2: np.ndarray
                     ) -> np.ndarray:
    """Tangent-frame gradient components to ambient 3-vectors."""
    grad2 = np.asarray(grad2, dtype=float)
    return grad2[..., :1] * e1 + grad2[..., 1:] * e2


def optical_map(x: np.ndarray, grad3: np.ndarray) -> np.ndarray:
    """Far-field direction T(x, p) for tangential gradient p = grad3."""
    x = np.asarray(x, dtype=float)
    grad3 = np.asarray(grad3, dtype=float)
    p2 = np.sum(grad3 * grad3, axis=-1, keepdims=True)
    return (-2.0 * grad3 + (p2 - 1.0) * x) / (p2 + 1.0)


def mixed_determinant(grad3: np.ndarray) -> np.ndarray:
    """Jacobian factor (|p|^2 + 1)^2 / 4 of the map T at gradient p."""
    p2 = np.sum(np.asarray(grad3, dtype=float) ** 2, axis=-1)
    return (p2 + 1.0) ** 2 / 4.0


def reflector_radius(u: np.ndarray) -> np.ndarray:
    """Radial profile rho = exp(-u) of the reflector for potential u."""
    return np.exp(-np.asarray(u, dtype=float))


def surface_normal(x: np.ndarray, rho: np.ndarray, grad_rho3: np.ndarray
                   ) -> np.ndarray:
    """Unit normal of the radial graph rho(x) x.

    grad_rho3 is the tangential gradient of rho as ambient 3-vectors.
    """
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)[..., None]
    grad_rho3 = np.asarray(grad_rho3, dtype=float)
    nvec = grad_rho3 - x * rho
    norm = np.sqrt(rho[..., 0] ** 2 + np.sum(grad_rho3 ** 2, axis=-1))
    return nvec / norm[..., None]


def reflect(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Mirror reflection of a ray direction in a unit normal."""
    direction = np.asarray(direction, dtype=float)
    normal = np.asarray(normal, dtype=float)
    d = np.sum(direction * normal, axis=-1, keepdims=True)
    return direction - 2.0 * d * normal


def deflection_angle(grad_norm: np.ndarray) -> np.ndarray:
    """Geodesic angle between x and T(x, p) from |p|: 2 * arccot(|p|)."""
    g = np.asarray(grad_norm, dtype=float)
    return 2.0 * np.arctan2(1.0, g)


def gradient_norm_for_angle(angle: np.ndarray) -> np.ndarray:
    """Inverse of deflection_angle: |p| = cot(angle / 2), angle in (0, pi]."""
    a = np.asarray(angle, dtype=float)
    return 1.0 / np.tan(a / 2.0)
