import numpy as np
import pytest

from mstein import kernels


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    """Run kernel-touching tests under every available backend."""
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def numeric_grad(f, arr, eps=1e-5):
    """Central finite differences of scalar f() w.r.t. an array edited in place."""
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_error(analytic, numeric, abs_floor=1e-4):
    """Relative error where gradients are sizeable, absolute where tiny.

    Central differences at step 1e-5 on an O(1) loss carry ~1e-10 of
    truncation/rounding noise, so entries below `abs_floor` are held to
    a 1e-9 absolute agreement instead of a meaningless relative one.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    big = denom > abs_floor
    worst_rel = (diff[big] / denom[big]).max() if big.any() else 0.0
    worst_abs = diff[~big].max() if (~big).any() else 0.0
    # absolute disagreement below the floor counts only if it beats FD noise
    return max(worst_rel, 0.0 if worst_abs < 1e-9 else worst_abs)
