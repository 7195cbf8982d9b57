"""Pure numpy fallback for the pairwise squared-W2 kernel.

The forward pass accumulates over the feature axis one coordinate at a
time (mean block first, then std block, summed afterwards) so that the
rounding matches the compiled backend and a scalar left-to-right
reference loop bit for bit.
"""

import numpy as np


def w2sq_cross(mu_a, sd_a, mu_b, sd_b):
    n_batch, n_q, dim = mu_a.shape
    n_k = mu_b.shape[1]
    macc = np.zeros((n_batch, n_q, n_k))
    sacc = np.zeros((n_batch, n_q, n_k))
    for t in range(dim):
        d = mu_a[:, :, None, t] - mu_b[:, None, :, t]
        macc += d * d
        d = sd_a[:, :, None, t] - sd_b[:, None, :, t]
        sacc += d * d
    return macc + sacc


def w2sq_cross_backward(grad_out, mu_a, sd_a, mu_b, sd_b):
    # Row/column sums turn the pairwise gradient into matmuls:
    #   dmu_a = 2*(mu_a * rowsum(g) - g @ mu_b)
    #   dvar_a = rowsum(g) - (g @ sd_b) / sd_a      (chain rule through sqrt)
    # and mirrored expressions for the b side.
    g_row = grad_out.sum(axis=2)[:, :, None]
    g_col = grad_out.sum(axis=1)[:, :, None]
    gt = np.swapaxes(grad_out, 1, 2)
    dmu_a = 2.0 * (mu_a * g_row - grad_out @ mu_b)
    dmu_b = 2.0 * (mu_b * g_col - gt @ mu_a)
    dvar_a = g_row - (grad_out @ sd_b) / sd_a
    dvar_b = g_col - (gt @ sd_a) / sd_b
    return dmu_a, dvar_a, dmu_b, dvar_b
