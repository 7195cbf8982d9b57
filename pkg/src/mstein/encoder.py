"""Stochastic self-attention sequence encoder.

Items and positions carry Gaussian embeddings (mean plus pre-activation
covariance). Attention scores are negative squared W2 distances between
the projected query/key Gaussians; value means aggregate with the
attention weights and value variances with the squared weights. Mean and
covariance flow through mirrored post-norm Transformer blocks, with the
positivity activation re-applied after every covariance transform.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig

NEG_INF = -np.inf


def init_params(cfg: TrainConfig, item_count: int, rng) -> dict[str, Tensor]:
    """Fresh parameter set: all weights N(0, 0.02^2), LN scale 1 / shift 0."""
    d, dff = cfg.dim, cfg.hidden_dim
    n_rows = item_count + 2  # 0 = padding, item_count+1 = mask token

    def w(*shape):
        return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    params = {
        "item_mean": w(n_rows, d),
        "item_cov": w(n_rows, d),
        "pos_mean": w(cfg.max_len, d),
        "pos_cov": w(cfg.max_len, d),
    }
    for i in range(cfg.layers):
        p = f"layers.{i}"
        for path in ("mean", "cov"):
            params[f"{p}.attn.wq_{path}"] = w(d, d)
            params[f"{p}.attn.wk_{path}"] = w(d, d)
            params[f"{p}.attn.wv_{path}"] = w(d, d)
            params[f"{p}.attn.ln_{path}.scale"] = ones(d)
            params[f"{p}.attn.ln_{path}.shift"] = zeros(d)
            params[f"{p}.ffn.w1_{path}"] = w(d, dff)
            params[f"{p}.ffn.b1_{path}"] = zeros(dff)
            params[f"{p}.ffn.w2_{path}"] = w(dff, d)
            params[f"{p}.ffn.b2_{path}"] = zeros(d)
            params[f"{p}.ffn.ln_{path}.scale"] = ones(d)
            params[f"{p}.ffn.ln_{path}.shift"] = zeros(d)
    return params


def is_decayable(name: str) -> bool:
    """Weight decay applies to embeddings and linear maps, not LN parameters."""
    return ".ln_" not in name


def pad_batch(sequences, max_len):
    """Left-pad (or keep the most recent max_len items of) each sequence.

    Returns (items, valid, positions): items is (B, T) with 0 padding,
    positions is the 0-based rank of each kept item within its own
    sequence window, so extra padding never shifts position embeddings.
    """
    batch = len(sequences)
    items = np.zeros((batch, max_len), dtype=np.int64)
    positions = np.zeros((batch, max_len), dtype=np.int64)
    for b, seq in enumerate(sequences):
        kept = seq[-max_len:]
        n = len(kept)
        items[b, max_len - n :] = kept
        positions[b, max_len - n :] = np.arange(n)
    valid = items != 0
    return items, valid, positions


def last_valid_index(valid):
    """Index of the last valid position per row; -1 for all-padding rows."""
    any_valid = valid.any(axis=1)
    idx = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    return np.where(any_valid, idx, -1)


def embed_sequence(params, items, positions):
    """Gaussian states per position: additive item+position embeddings."""
    n_rows = params["item_mean"].data.shape[0]
    if items.min() < 0 or items.max() >= n_rows:
        raise ValueError(f"item index out of range [0, {n_rows})")
    mean = ad.add(ad.embedding(params["item_mean"], items), ad.embedding(params["pos_mean"], positions))
    cov_pre = ad.add(ad.embedding(params["item_cov"], items), ad.embedding(params["pos_cov"], positions))
    return mean, ad.elu_plus_one(cov_pre)


def _split_heads(x, batch, seq_len, heads, head_dim):
    x = ad.reshape(x, (batch, seq_len, heads, head_dim))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (batch * heads, seq_len, head_dim))


def _merge_heads(x, batch, seq_len, heads, head_dim):
    x = ad.reshape(x, (batch, heads, seq_len, head_dim))
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (batch, seq_len, heads * head_dim))


def attention_mask(valid):
    """(B, T, T) key-allowed mask: causal and non-padding keys only.

    Rows left with zero allowed keys (padding queries) fall back to
    attending to themselves so softmax stays finite.
    """
    batch, seq_len = valid.shape
    causal = np.tril(np.ones((seq_len, seq_len), dtype=bool))
    allowed = causal[None, :, :] & valid[:, None, :]
    empty_rows = ~allowed.any(axis=2)
    b_idx, i_idx = np.nonzero(empty_rows)
    allowed[b_idx, i_idx, i_idx] = True
    return allowed


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(np.float64)
    return ad.mul(x, keep / (1.0 - rate))


def wasserstein_attention(params, prefix, cfg, mean, var, allowed, dropout_rng=None,
                          return_weights=False):
    """Multi-head attention with negative squared-W2 scores."""
    batch, seq_len, d = mean.data.shape
    heads = cfg.heads
    head_dim = d // heads

    def proj(x, name):
        return _split_heads(ad.matmul(x, params[f"{prefix}.attn.{name}"]), batch, seq_len, heads, head_dim)

    q_mean = proj(mean, "wq_mean")
    k_mean = proj(mean, "wk_mean")
    v_mean = proj(mean, "wv_mean")
    q_var = ad.elu_plus_one(proj(var, "wq_cov"))
    k_var = ad.elu_plus_one(proj(var, "wk_cov"))
    v_var = ad.elu_plus_one(proj(var, "wv_cov"))

    logits = ad.mul(ad.w2sq_pairwise(q_mean, q_var, k_mean, k_var), -1.0)
    head_mask = np.repeat(allowed, heads, axis=0)
    logits = ad.masked_fill(logits, ~head_mask, NEG_INF)
    weights = ad.softmax(logits, axis=-1)
    raw_weights = weights.data.copy() if return_weights else None
    weights = _dropout(weights, cfg.dropout, dropout_rng)

    out_mean = ad.matmul(weights, v_mean)
    if cfg.variance_weights == "squared":
        out_var = ad.matmul(ad.square(weights), v_var)
    else:
        out_var = ad.matmul(weights, v_var)
    out_mean = _merge_heads(out_mean, batch, seq_len, heads, head_dim)
    out_var = _merge_heads(out_var, batch, seq_len, heads, head_dim)
    if return_weights:
        return out_mean, out_var, raw_weights
    return out_mean, out_var


def _ffn(params, prefix, path, x):
    h = ad.gelu(ad.add(ad.matmul(x, params[f"{prefix}.ffn.w1_{path}"]), params[f"{prefix}.ffn.b1_{path}"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.ffn.w2_{path}"]), params[f"{prefix}.ffn.b2_{path}"])


def encoder_block(params, prefix, cfg, mean, var, allowed, dropout_rng=None):
    """Post-norm block; the covariance path mirrors the mean path with
    the positivity activation restored after each sublayer."""
    attn_mean, attn_var = wasserstein_attention(params, prefix, cfg, mean, var, allowed, dropout_rng)
    mean = ad.layer_norm(
        ad.add(mean, _dropout(attn_mean, cfg.dropout, dropout_rng)),
        params[f"{prefix}.attn.ln_mean.scale"], params[f"{prefix}.attn.ln_mean.shift"],
    )
    var = ad.elu_plus_one(ad.layer_norm(
        ad.add(var, _dropout(attn_var, cfg.dropout, dropout_rng)),
        params[f"{prefix}.attn.ln_cov.scale"], params[f"{prefix}.attn.ln_cov.shift"],
    ))
    ffn_mean = _ffn(params, prefix, "mean", mean)
    ffn_var = _ffn(params, prefix, "cov", var)
    mean = ad.layer_norm(
        ad.add(mean, _dropout(ffn_mean, cfg.dropout, dropout_rng)),
        params[f"{prefix}.ffn.ln_mean.scale"], params[f"{prefix}.ffn.ln_mean.shift"],
    )
    var = ad.elu_plus_one(ad.layer_norm(
        ad.add(var, _dropout(ffn_var, cfg.dropout, dropout_rng)),
        params[f"{prefix}.ffn.ln_cov.scale"], params[f"{prefix}.ffn.ln_cov.shift"],
    ))
    return mean, var


def encode(params, cfg: TrainConfig, items, positions, valid, dropout_rng=None):
    """Stack the embedding layer and all encoder blocks.

    Position t's Gaussian is the next-item representation for step t+1.
    Dropout is active only when a dropout_rng is supplied.
    """
    mean, var = embed_sequence(params, items, positions)
    allowed = attention_mask(valid)
    for i in range(cfg.layers):
        mean, var = encoder_block(params, f"layers.{i}", cfg, mean, var, allowed, dropout_rng)
    return mean, var


def item_gaussians(params, indices):
    """Target-side item embeddings (no positional terms)."""
    mean = ad.embedding(params["item_mean"], indices)
    var = ad.elu_plus_one(ad.embedding(params["item_cov"], indices))
    return mean, var


def encode_sequences(params, cfg, sequences, dropout_rng=None):
    """Convenience wrapper: pad, encode, and return arrays plus validity."""
    items, valid, positions = pad_batch(sequences, cfg.max_len)
    mean, var = encode(params, cfg, items, positions, valid, dropout_rng)
    return mean, var, valid
