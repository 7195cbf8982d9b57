"""Closed-form squared 2-Wasserstein distance between diagonal Gaussians.

A diagonal Gaussian is a (mean, variance) vector pair. Its squared W2
distance to another one is

    sum_d (mu1_d - mu2_d)^2  +  sum_d (sqrt(var1_d) - sqrt(var2_d))^2

i.e. the squared Euclidean distance in the concatenated (mean, std)
space. Batched distance matrices go through the kernel backend
(compiled extension or numpy fallback); scalar calls reuse the same
kernel so scalar and batched values agree bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianState:
    """A diagonal Gaussian: mean vector plus strictly positive variance vector."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        variance = np.asarray(self.variance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)
        if mean.shape != variance.shape:
            raise ValueError(f"mean/variance shape mismatch: {mean.shape} vs {variance.shape}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if not np.all(variance > 0.0):
            raise ValueError("variance must be strictly positive")

    @property
    def dim(self):
        return self.mean.shape[-1]


def elu_plus_one(x, floor=VAR_FLOOR):
    """ELU(x)+1 with a positive floor: x+1 for x>0, exp(x) otherwise."""
    x = np.asarray(x, dtype=np.float64)
    raw = np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    return np.maximum(raw, floor)


def w2_sq(g1: GaussianState, g2: GaussianState) -> float:
    """Squared 2-Wasserstein distance between two diagonal Gaussians."""
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    out = kernels.w2sq_cross(
        g1.mean[None, None, :], np.sqrt(g1.variance)[None, None, :],
        g2.mean[None, None, :], np.sqrt(g2.variance)[None, None, :],
    )
    return float(out[0, 0, 0])


def w2_sq_matrix(mu_a, var_a, mu_b, var_b):
    """Distance matrix between two stacks of Gaussians, (Q,D) x (K,D) -> (Q,K)."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    var_a = np.asarray(var_a, dtype=np.float64)
    var_b = np.asarray(var_b, dtype=np.float64)
    if mu_a.shape[-1] != mu_b.shape[-1]:
        raise ValueError(f"dimension mismatch: {mu_a.shape[-1]} vs {mu_b.shape[-1]}")
    out = kernels.w2sq_cross(
        mu_a[None], np.sqrt(var_a)[None], mu_b[None], np.sqrt(var_b)[None]
    )
    return out[0]


def w2_sq_batch(queries, keys):
    """Distance matrix between two lists of GaussianState, entrywise w2_sq."""
    mu_a = np.stack([q.mean for q in queries])
    var_a = np.stack([q.variance for q in queries])
    mu_b = np.stack([k.mean for k in keys])
    var_b = np.stack([k.variance for k in keys])
    return w2_sq_matrix(mu_a, var_a, mu_b, var_b)


def w2_sq_grad(g1: GaussianState, g2: GaussianState):
    """Analytic gradients of w2_sq w.r.t. (mean1, var1, mean2, var2)."""
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    s1 = np.sqrt(g1.variance)
    s2 = np.sqrt(g2.variance)
    dmean1 = 2.0 * (g1.mean - g2.mean)
    dvar1 = (s1 - s2) / s1
    dvar2 = (s2 - s1) / s2
    return dmean1, dvar1, -dmean1, dvar2
