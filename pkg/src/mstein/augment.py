"""Stochastic sequence augmentations for contrastive view generation.

Five ops: crop, mask, reorder (random perturbations) plus substitute and
insert (correlation-informed). A pair of views is built by sampling one
enabled op per view; sequences shorter than the short-sequence threshold
only receive length-preserving ops (mask, substitute) because structural
edits on very short histories tend to destroy the transition signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALL_OPS = ("crop", "mask", "reorder", "substitute", "insert")
LENGTH_PRESERVING_OPS = ("mask", "substitute")


@dataclass(frozen=True)
class AugmentationPolicy:
    ops: tuple[str, ...] = ("crop", "mask", "reorder")
    crop_ratio: float = 0.6
    mask_ratio: float = 0.3
    reorder_ratio: float = 0.3
    substitute_rate: float = 0.2
    insert_rate: float = 0.2
    short_seq_threshold: int = 5
    correlation_top_k: int = 10

    def __post_init__(self):
        if not self.ops:
            raise ValueError("at least one augmentation op must be enabled")
        unknown = set(self.ops) - set(ALL_OPS)
        if unknown:
            raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")
        if not 0.0 < self.crop_ratio <= 1.0:
            raise ValueError("crop_ratio must be in (0, 1]")
        for name in ("mask_ratio", "reorder_ratio", "substitute_rate", "insert_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")


@dataclass(frozen=True)
class AugmentedPair:
    user_index: int
    view_a: list[int]
    view_b: list[int]


@dataclass
class ItemCorrelation:
    """Per-item top-K correlated items with non-increasing scores."""

    top: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def correlates(self, item):
        return self.top.get(item, [])


def crop(items, ratio, rng):
    """Contiguous subsequence of length max(1, floor(ratio*len)), random start."""
    n = len(items)
    length = max(1, int(ratio * n))
    start = int(rng.integers(0, n - length + 1))
    return list(items[start : start + length])


def mask(items, ratio, rng, mask_token):
    """Replace floor(ratio*len) uniformly chosen positions with the mask token."""
    n = len(items)
    out = list(items)
    n_mask = int(ratio * n)
    if n_mask:
        for pos in rng.choice(n, size=n_mask, replace=False):
            out[pos] = mask_token
    return out


def reorder(items, ratio, rng):
    """Shuffle a contiguous segment of length max(1, floor(ratio*len))."""
    n = len(items)
    length = max(1, int(ratio * n))
    start = int(rng.integers(0, n - length + 1))
    out = list(items)
    segment = out[start : start + length]
    perm = rng.permutation(length)
    out[start : start + length] = [segment[i] for i in perm]
    return out


def build_item_correlation(train_sequences, top_k=10, window=5) -> ItemCorrelation:
    """Windowed co-occurrence counts normalized by geometric mean frequency.

    Score(i, j) = cooc(i, j) / sqrt(freq(i) * freq(j)) over all pairs at
    distance < window inside training prefixes; the top_k highest-scored
    partners are kept per item (ties broken by item index).
    """
    if not train_sequences:
        raise ValueError("cannot build correlations from an empty corpus")
    freq = {}
    cooc = {}
    for items in train_sequences:
        for i, a in enumerate(items):
            freq[a] = freq.get(a, 0) + 1
            for j in range(i + 1, min(i + window, len(items))):
                b = items[j]
                if a == b:
                    continue
                key = (a, b) if a < b else (b, a)
                cooc[key] = cooc.get(key, 0) + 1
    partners = {}
    for (a, b), count in cooc.items():
        score = count / np.sqrt(freq[a] * freq[b])
        partners.setdefault(a, []).append((b, score))
        partners.setdefault(b, []).append((a, score))
    top = {}
    for item, scored in partners.items():
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        top[item] = scored[:top_k]
    return ItemCorrelation(top)


def substitute(items, rate, corr: ItemCorrelation, rng):
    """Swap floor(rate*len) random positions for a top-K correlate of the item.

    Positions whose item has no correlates are left unchanged.
    """
    n = len(items)
    out = list(items)
    n_sub = int(rate * n)
    if n_sub:
        for pos in rng.choice(n, size=n_sub, replace=False):
            cands = corr.correlates(out[pos])
            if cands:
                out[pos] = cands[int(rng.integers(0, len(cands)))][0]
    return out


def insert(items, rate, corr: ItemCorrelation, rng):
    """Insert a correlate of the item after each of floor(rate*len) positions.

    Items without correlates insert a copy of themselves so the length
    contract (growth by exactly floor(rate*len)) always holds.
    """
    n = len(items)
    n_ins = int(rate * n)
    if not n_ins:
        return list(items)
    positions = sorted(rng.choice(n, size=n_ins, replace=False), reverse=True)
    out = list(items)
    for pos in positions:
        cands = corr.correlates(out[pos])
        if cands:
            new_item = cands[int(rng.integers(0, len(cands)))][0]
        else:
            new_item = out[pos]
        out.insert(pos + 1, new_item)
    return out


def _apply_op(op, items, policy, rng, mask_token, corr):
    if op == "crop":
        return crop(items, policy.crop_ratio, rng)
    if op == "mask":
        return mask(items, policy.mask_ratio, rng, mask_token)
    if op == "reorder":
        return reorder(items, policy.reorder_ratio, rng)
    if op == "substitute":
        return substitute(items, policy.substitute_rate, corr, rng)
    if op == "insert":
        return insert(items, policy.insert_rate, corr, rng)
    raise ValueError(f"unknown augmentation op {op!r}")


def eligible_ops(policy: AugmentationPolicy, seq_len: int):
    """Enabled ops, restricted to length-preserving ones for short sequences."""
    if seq_len < policy.short_seq_threshold:
        safe = tuple(op for op in policy.ops if op in LENGTH_PRESERVING_OPS)
        if safe:
            return safe
    return policy.ops


def augment_pair(user_index, items, policy, rng, mask_token, corr=None) -> AugmentedPair:
    """Two independently perturbed views of one sequence."""
    if not items:
        raise ValueError("cannot augment an empty sequence")
    needs_corr = {"substitute", "insert"} & set(policy.ops)
    if needs_corr and corr is None:
        raise ValueError("substitute/insert ops require an ItemCorrelation")
    ops = eligible_ops(policy, len(items))
    views = []
    for _ in range(2):
        op = ops[int(rng.integers(0, len(ops)))]
        views.append(_apply_op(op, items, policy, rng, mask_token, corr))
    return AugmentedPair(user_index=user_index, view_a=views[0], view_b=views[1])
