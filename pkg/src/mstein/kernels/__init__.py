"""Backend dispatch for the pairwise squared-W2 kernel.

The compiled Cython extension is preferred when it imported cleanly;
otherwise (or when ``WDM_PURE_PYTHON=1``) the numpy fallback is used.
Both backends produce bitwise-identical forward values.
"""

import os

import numpy as np

from . import _w2_numpy

try:
    from . import _w2_cy
except ImportError:  # extension not built on this install
    _w2_cy = None

_BACKENDS = {"numpy": _w2_numpy}
if _w2_cy is not None:
    _BACKENDS["cython"] = _w2_cy

if os.environ.get("WDM_PURE_PYTHON") == "1" or _w2_cy is None:
    _impl = _w2_numpy
    BACKEND = "numpy"
else:
    _impl = _w2_cy
    BACKEND = "cython"


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Switch the active kernel backend (used by tests and benchmarks)."""
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _impl = _BACKENDS[name]
    BACKEND = name


def _as_c3d(arr, name):
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"{name} must be 3-dimensional (batch, rows, dim), got shape {a.shape}")
    return a


def w2sq_cross(mu_a, sd_a, mu_b, sd_b):
    """Pairwise squared W2, (N,Q,D) x (N,K,D) -> (N,Q,K), std parameterization."""
    mu_a = _as_c3d(mu_a, "mu_a")
    sd_a = _as_c3d(sd_a, "sd_a")
    mu_b = _as_c3d(mu_b, "mu_b")
    sd_b = _as_c3d(sd_b, "sd_b")
    if mu_a.shape[2] != mu_b.shape[2]:
        raise ValueError(f"dimension mismatch: {mu_a.shape[2]} vs {mu_b.shape[2]}")
    return _impl.w2sq_cross(mu_a, sd_a, mu_b, sd_b)


def w2sq_cross_backward(grad_out, mu_a, sd_a, mu_b, sd_b):
    """Gradients of w2sq_cross w.r.t. (mu_a, var_a, mu_b, var_b)."""
    grad_out = _as_c3d(grad_out, "grad_out")
    mu_a = _as_c3d(mu_a, "mu_a")
    sd_a = _as_c3d(sd_a, "sd_a")
    mu_b = _as_c3d(mu_b, "mu_b")
    sd_b = _as_c3d(sd_b, "sd_b")
    return _impl.w2sq_cross_backward(grad_out, mu_a, sd_a, mu_b, sd_b)
