"""Spatial kernels with a compiled core and a numpy fallback.

The compiled extension (`hyperfake.kernels._spatial`, built from Cython) is
preferred when importable; otherwise the numpy fallback in `pybackend` is
used. Set HYPERFAKE_BACKEND=python or =compiled to force a choice; forcing
"compiled" raises if the extension is missing. `use_backend` temporarily
swaps the active backend (used by the benchmark CLI and the parity tests).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from ..errors import ConfigError
from . import pybackend

try:
    from . import _spatial as _compiled
except ImportError:
    _compiled = None

_KERNEL_NAMES = (
    "im2col",
    "col2im",
    "resize_bilinear",
    "resize_bilinear_adjoint",
    "pool_mean",
    "pool_mean_adjoint",
    "adaptive_pool",
    "adaptive_pool_adjoint",
)


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if _compiled is not None else ("python",)


def _module_for(name: str):
    if name == "python":
        return pybackend
    if name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled kernel backend requested but extension is not built")
        return _compiled
    raise ConfigError(f"unknown kernel backend {name!r} (use 'python' or 'compiled')")


def _initial_backend() -> str:
    choice = os.environ.get("HYPERFAKE_BACKEND", "auto").lower()
    if choice == "auto":
        return "compiled" if _compiled is not None else "python"
    _module_for(choice)
    return choice


_active_name = _initial_backend()
_active = _module_for(_active_name)


def active_backend() -> str:
    return _active_name


def set_backend(name: str) -> None:
    global _active, _active_name
    _active = _module_for(name)
    _active_name = name


@contextmanager
def use_backend(name: str):
    previous = _active_name
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def __getattr__(name: str):
    if name in _KERNEL_NAMES:
        return getattr(_active, name)
    raise AttributeError(name)


def get_backend_module(name: str):
    """Direct access to one backend's kernel module (for parity tests)."""
    return _module_for(name)
