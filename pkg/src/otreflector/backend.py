"""Kernel backend selection.

Two interchangeable kernel modules implement the hot loops: ``_kernels`` is
a compiled extension and ``_kernels_py`` is a pure NumPy twin with identical
arithmetic. The active one is chosen at first use from the environment
variable OTREFLECTOR_BACKEND:

    auto      use the compiled extension if importable, else NumPy (default)
    compiled  require the extension, fail if missing
    python    force the NumPy implementation

Both modules expose the same two functions:

    build_stencils(points, e1, e2, cap_flat, cap_off, spacing, dtheta,
                   n_pairs, rung_lo, rung_hi, workers, subset=None)
    evaluate_operator(points, y, u, nbr, w2, eps1, lap, rhs, n_pairs,
                      workers=1)
"""

from __future__ import annotations

import logging
import os

from .errors import OTReflectorError

logger = logging.getLogger(__name__)

_cached = None


def kernels(name: str | None = None):
    """Return the active kernel module (or a specific one by name)."""
    global _cached
    if name is not None:
        return _load(name)
    if _cached is None:
        choice = os.environ.get("OTREFLECTOR_BACKEND", "auto").strip().lower()
        _cached = _load(choice or "auto")
        logger.debug("kernel backend: %s", backend_name(_cached))
    return _cached


def _load(choice: str):
    if choice not in ("auto", "compiled", "python"):
        raise OTReflectorError(
            f"unknown backend {choice!r}; expected auto, compiled, or python")
    if choice in ("auto", "compiled"):
        try:
            from . import _kernels
            return _kernels
        except ImportError as exc:
            if choice == "compiled":
                raise OTReflectorError(
                    "compiled backend requested but the extension module "
                    "is not importable; rebuild the package or set "
                    "OTREFLECTOR_BACKEND=python") from exc
            logger.info("compiled kernels unavailable, using NumPy backend")
    from . import _kernels_py
    return _kernels_py


def backend_name(mod=None) -> str:
    mod = mod if mod is not None else kernels()
    return "compiled" if mod.__name__.endswith("._kernels") else "python"


def reset() -> None:
    """Forget the cached choice so the next call re-reads the environment."""
    global _cached
    _cached = None
