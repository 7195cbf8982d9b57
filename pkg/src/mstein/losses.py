"""Training losses and contrastive diagnostics.

The ranking loss is a pairwise sigmoid loss on squared-W2 distances to
the positive and a sampled negative item. The contrastive loss is an
InfoNCE over 2N augmented views whose similarity kernel is the negative
squared W2 distance (no temperature); a cosine-similarity variant over
concatenated (mean, variance) embeddings serves as the ablation
baseline. All log-partition terms go through a stabilized log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericalError


@dataclass
class LossBreakdown:
    rec_loss: float
    pvn_loss: float
    cl_loss: float
    total: float
    alignment_diag: float = float("nan")
    uniformity_diag: float = float("nan")
    uniformity_defined: bool = False


@dataclass
class ContrastiveBatch:
    """2N sequence-level Gaussian views, interleaved (a_1, b_1, a_2, b_2, ...)."""

    mean: Tensor  # (2N, d)
    var: Tensor  # (2N, d)

    def __post_init__(self):
        if self.mean.data.shape[0] % 2 != 0:
            raise ValueError("contrastive batch must hold an even number of views")

    @property
    def n_pairs(self):
        return self.mean.data.shape[0] // 2

    @property
    def partner_index(self):
        idx = np.arange(2 * self.n_pairs)
        return idx ^ 1


def _masked_mean(per_position, valid):
    w = valid.astype(np.float64)
    return ad.mul(ad.tsum(ad.mul(per_position, w)), 1.0 / w.sum())


def rec_loss(enc_mean, enc_var, pos_mean, pos_var, neg_mean, neg_var, valid):
    """Mean over valid positions of -log sigmoid(W2(h, neg) - W2(h, pos))."""
    d_pos = ad.w2sq_elementwise(enc_mean, enc_var, pos_mean, pos_var)
    d_neg = ad.w2sq_elementwise(enc_mean, enc_var, neg_mean, neg_var)
    per_pos = ad.mul(ad.logsigmoid(ad.sub(d_neg, d_pos)), -1.0)
    return _masked_mean(per_pos, valid)


def pvn_loss(enc_mean, enc_var, pos_mean, pos_var, neg_mean, neg_var, valid, margin):
    """Hinge pushing the sampled negative farther from the positive item
    than the sequence state is: max(0, W2(h,pos) - W2(pos,neg) + margin)."""
    d_state_pos = ad.w2sq_elementwise(enc_mean, enc_var, pos_mean, pos_var)
    d_pos_neg = ad.w2sq_elementwise(pos_mean, pos_var, neg_mean, neg_var)
    hinge = ad.relu(ad.add(ad.sub(d_state_pos, d_pos_neg), margin))
    return _masked_mean(hinge, valid)


def _infonce_terms(logits_offdiag, pos_logit):
    # per-anchor term: -pos_logit + logsumexp over the 2N-1 other views
    return ad.sub(ad.logsumexp(logits_offdiag, axis=-1), pos_logit)


def w2_infonce_loss(batch: ContrastiveBatch):
    """InfoNCE over 2N views with similarity -W2^2; mean over all anchors."""
    n_views = batch.mean.data.shape[0]
    if batch.n_pairs == 1:
        # the negative set is empty; the softmax is trivially exact
        return ad.mul(ad.tsum(batch.mean), 0.0)
    dist = ad.w2sq_pairwise(
        ad.reshape(batch.mean, (1,) + batch.mean.data.shape),
        ad.reshape(batch.var, (1,) + batch.var.data.shape),
        ad.reshape(batch.mean, (1,) + batch.mean.data.shape),
        ad.reshape(batch.var, (1,) + batch.var.data.shape),
    )
    dist = ad.reshape(dist, (n_views, n_views))
    logits = ad.mul(dist, -1.0)
    self_mask = np.eye(n_views, dtype=bool)
    logits = ad.masked_fill(logits, self_mask, -np.inf)
    anchors = np.arange(n_views)
    pos_logit = ad.gather_pairs(logits, anchors, batch.partner_index)
    return ad.tmean(_infonce_terms(logits, pos_logit))


def cosine_infonce_loss(batch: ContrastiveBatch, temperature=1.0):
    """Cosine-similarity InfoNCE over concatenated (mean, variance) views."""
    if batch.n_pairs == 1:
        return ad.mul(ad.tsum(batch.mean), 0.0)
    n_views = batch.mean.data.shape[0]
    emb = ad.concat([batch.mean, batch.var], axis=-1)
    norms_sq = ad.tsum(ad.square(emb), axis=-1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise NumericalError("zero-norm view embedding in cosine contrastive loss")
    unit = ad.div(emb, ad.sqrt(norms_sq))
    sims = ad.matmul(unit, ad.transpose(unit, (1, 0)))
    logits = ad.mul(sims, 1.0 / temperature)
    self_mask = np.eye(n_views, dtype=bool)
    logits = ad.masked_fill(logits, self_mask, -np.inf)
    anchors = np.arange(n_views)
    pos_logit = ad.gather_pairs(logits, anchors, batch.partner_index)
    return ad.tmean(_infonce_terms(logits, pos_logit))


def alignment_diag(mean, var, partner_index=None):
    """Mean squared W2 between positive view pairs (numpy, no gradients)."""
    from .wasserstein import w2_sq_matrix

    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if partner_index is None:
        partner_index = np.arange(mean.shape[0]) ^ 1
    a_idx = np.arange(mean.shape[0])
    keep = a_idx < partner_index  # each pair once
    d = w2_sq_matrix(mean[keep], var[keep], mean[partner_index[keep]], var[partner_index[keep]])
    return float(np.mean(np.diagonal(d)))


def uniformity_diag(mean, var, partner_index=None):
    """Mean per-anchor log-partition over negatives only: log sum exp(-W2).

    Undefined for a single pair (empty negative set): returns (nan, False).
    """
    from .wasserstein import w2_sq_matrix

    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    n_views = mean.shape[0]
    if n_views <= 2:
        return float("nan"), False
    if partner_index is None:
        partner_index = np.arange(n_views) ^ 1
    dist = w2_sq_matrix(mean, var, mean, var)
    logits = -dist
    anchors = np.arange(n_views)
    logits[anchors, anchors] = -np.inf
    logits[anchors, partner_index] = -np.inf
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    return float(lse.mean()), True


def total_loss(rec: Tensor, pvn, cl, pvn_weight, cl_weight):
    """total = rec + pvn_weight * pvn + cl_weight * cl; zero-weight parts may be None."""
    total = rec
    if pvn is not None and pvn_weight != 0.0:
        total = ad.add(total, ad.mul(pvn, pvn_weight))
    if cl is not None and cl_weight != 0.0:
        total = ad.add(total, ad.mul(cl, cl_weight))
    return total


def breakdown(rec, pvn, cl, pvn_weight, cl_weight, align=float("nan"), uniform=float("nan"), uniform_defined=False):
    rec_v = float(rec.data)
    pvn_v = float(pvn.data) if pvn is not None else 0.0
    cl_v = float(cl.data) if cl is not None else 0.0
    return LossBreakdown(
        rec_loss=rec_v,
        pvn_loss=pvn_v,
        cl_loss=cl_v,
        total=rec_v + pvn_weight * pvn_v + cl_weight * cl_v,
        alignment_diag=align,
        uniformity_diag=uniform,
        uniformity_defined=uniform_defined,
    )
