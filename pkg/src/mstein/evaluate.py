"""Full-catalog ranking by ascending squared-W2 distance and top-N metrics.

Every real item is scored for every test user (no candidate sampling);
ties break by item index so ranks are deterministic. Group reports
bucket users by training-prefix length or test items by training
popularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import kernels
from .autodiff import Tensor
from .config import TrainConfig
from .data import SequenceCorpus, split_leave_one_out
from .wasserstein import elu_plus_one


@dataclass
class UserRecord:
    user_index: int
    rank: int
    prefix_len: int
    target_item: int


@dataclass
class RankingMetrics:
    recall1: float
    recall5: float
    recall10: float
    ndcg5: float
    ndcg10: float
    mrr: float
    n_users: int
    records: list[UserRecord]

    def as_dict(self, split):
        return {
            "split": split,
            "recall@1": self.recall1,
            "recall@5": self.recall5,
            "ndcg@5": self.ndcg5,
            "recall@10": self.recall10,
            "ndcg@10": self.ndcg10,
            "mrr": self.mrr,
            "n_users": self.n_users,
        }


@dataclass
class GroupReport:
    key: str
    buckets: list[tuple[str, int, float | None]]


def recall_at(rank, k):
    return 1.0 if rank <= k else 0.0


def ndcg_at(rank, k):
    return 1.0 / np.log2(rank + 1.0) if rank <= k else 0.0


def mrr_metric(rank):
    return 1.0 / rank


def rank_of_target(distances, target, exclude=()):
    """1-based rank of `target` under (distance, item index) ordering.

    `distances[i]` scores item i+1; excluded items never count as
    competitors. The target itself must not be excluded.
    """
    n_items = distances.shape[0]
    if not 1 <= target <= n_items:
        raise ValueError(f"target {target} outside item range 1..{n_items}")
    if target in exclude:
        raise ValueError("target item cannot be excluded from ranking")
    idx = np.arange(1, n_items + 1)
    d_t = distances[target - 1]
    better = (distances < d_t) | ((distances == d_t) & (idx < target))
    if exclude:
        keep = np.ones(n_items, dtype=bool)
        keep[np.asarray(sorted(exclude), dtype=np.int64) - 1] = False
        better &= keep
    return 1 + int(np.count_nonzero(better))


def rank_target(state, item_means, item_vars, target, exclude=()):
    """Rank one GaussianState against the full item catalog."""
    d = kernels.w2sq_cross(
        state.mean[None, None, :], np.sqrt(state.variance)[None, None, :],
        item_means[None], np.sqrt(item_vars)[None],
    )[0, 0]
    return rank_of_target(d, target, exclude)


def _eval_contexts(corpus: SequenceCorpus, split, data=None):
    """(user, context items, target, prefix_len, full_set) tuples per user."""
    out = []
    if data is not None:
        users = data.user_indices
        for u in users:
            train = data.train_items[u]
            if split == "valid":
                ctx, target = train, data.valid_target[u]
            else:
                ctx, target = train + [data.valid_target[u]], data.test_target[u]
            out.append((u, ctx, target, len(train), data.full_sets[u]))
        return out
    for seq in corpus.sequences:
        s = split_leave_one_out(seq)
        if split == "valid":
            ctx, target = s.train_items, s.valid_target
        else:
            ctx, target = s.train_items + [s.valid_target], s.test_target
        out.append((seq.user_index, ctx, target, len(s.train_items), set(seq.items)))
    return out


def evaluate(params, cfg: TrainConfig, corpus: SequenceCorpus, split="test",
             data=None, batch_size=256) -> RankingMetrics:
    """Rank each user's held-out target against the whole catalog."""
    if split not in ("valid", "test"):
        raise ValueError("split must be 'valid' or 'test'")
    frozen = {k: Tensor(v.data) for k, v in params.items()}  # no graph retention
    n_items = frozen["item_mean"].data.shape[0] - 2
    item_means = frozen["item_mean"].data[1 : n_items + 1]
    item_vars = elu_plus_one(frozen["item_cov"].data[1 : n_items + 1])
    item_sds = np.sqrt(item_vars)

    contexts = _eval_contexts(corpus, split, data)
    records = []
    for start in range(0, len(contexts), batch_size):
        chunk = contexts[start : start + batch_size]
        mean, var, valid = enc.encode_sequences(frozen, cfg, [c[1] for c in chunk])
        last = enc.last_valid_index(valid)
        rows = np.arange(len(chunk))
        st_mean = mean.data[rows, last]
        st_var = var.data[rows, last]
        dist = kernels.w2sq_cross(st_mean[None], np.sqrt(st_var)[None], item_means[None], item_sds[None])[0]
        for i, (user, ctx, target, prefix_len, full_set) in enumerate(chunk):
            exclude = set()
            if cfg.exclude_seen:
                exclude = set(ctx) - {target}
                exclude.discard(0)
                exclude = {e for e in exclude if e <= n_items}
            rank = rank_of_target(dist[i], target, exclude)
            records.append(UserRecord(user, rank, prefix_len, target))

    n = len(records)
    agg = {
        "recall1": np.mean([recall_at(r.rank, 1) for r in records]),
        "recall5": np.mean([recall_at(r.rank, 5) for r in records]),
        "recall10": np.mean([recall_at(r.rank, 10) for r in records]),
        "ndcg5": np.mean([ndcg_at(r.rank, 5) for r in records]),
        "ndcg10": np.mean([ndcg_at(r.rank, 10) for r in records]),
        "mrr": np.mean([mrr_metric(r.rank) for r in records]),
    }
    return RankingMetrics(n_users=n, records=records, **{k: float(v) for k, v in agg.items()})


def _bucket_label(lo, hi):
    return f"[{lo},{hi})" if hi is not None else f"[{lo},inf)"


def _bucketize(value, edges):
    """Index of the bucket for `value` under [0,e0),[e0,e1),...,[ek,inf)."""
    for i, edge in enumerate(edges):
        if value < edge:
            return i
    return len(edges)


def group_report(metrics: RankingMetrics, key, edges=None, corpus=None, data=None) -> GroupReport:
    """Per-bucket mean NDCG@5: users grouped by training-prefix length, or
    test items grouped by their popularity inside training prefixes."""
    if key == "seq_length":
        edges = list(edges) if edges else [5, 8, 12, 20]
        bounds = [0] + edges
        labels = [_bucket_label(lo, hi) for lo, hi in zip(bounds, edges + [None])]
        sums = np.zeros(len(labels))
        counts = np.zeros(len(labels), dtype=np.int64)
        for rec in metrics.records:
            b = _bucketize(rec.prefix_len, edges)
            sums[b] += ndcg_at(rec.rank, 5)
            counts[b] += 1
        buckets = [
            (labels[i], int(counts[i]), float(sums[i] / counts[i]) if counts[i] else None)
            for i in range(len(labels))
        ]
        return GroupReport("seq_length", buckets)

    if key == "item_popularity":
        popularity = {}
        if data is not None:
            prefixes = data.train_items.values()
        elif corpus is not None:
            prefixes = (split_leave_one_out(s).train_items for s in corpus.sequences)
        else:
            raise ValueError("item_popularity grouping needs corpus or prepared data")
        for items in prefixes:
            for it in items:
                popularity[it] = popularity.get(it, 0) + 1
        per_item: dict[int, list[float]] = {}
        for rec in metrics.records:
            per_item.setdefault(rec.target_item, []).append(ndcg_at(rec.rank, 5))
        item_pop = {it: popularity.get(it, 0) for it in per_item}
        if edges:
            edges = list(edges)
        else:
            pops = sorted(item_pop.values())
            qs = np.percentile(pops, [25, 50, 75]) if pops else [0, 0, 0]
            edges = sorted(set(int(np.ceil(q)) for q in qs if q > 0)) or [1]
        bounds = [0] + edges
        labels = [_bucket_label(lo, hi) for lo, hi in zip(bounds, edges + [None])]
        sums = np.zeros(len(labels))
        counts = np.zeros(len(labels), dtype=np.int64)
        for it, vals in per_item.items():
            b = _bucketize(item_pop[it], edges)
            sums[b] += float(np.mean(vals))
            counts[b] += 1
        buckets = [
            (labels[i], int(counts[i]), float(sums[i] / counts[i]) if counts[i] else None)
            for i in range(len(labels))
        ]
        return GroupReport("item_popularity", buckets)

    raise ValueError(f"unknown grouping key {key!r}")


def group_report_csv(report: GroupReport) -> str:
    lines = ["bucket,count,ndcg5"]
    for label, count, value in report.buckets:
        lines.append(f"{label},{count},{'' if value is None else repr(value)}")
    return "\n".join(lines) + "\n"
