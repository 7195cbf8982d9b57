"""Interaction-log ingestion, k-core filtering, sequence building and splits.

Item indices are dense and 1-based: index 0 is reserved for padding and
index item_count+1 for the mask token used by sequence augmentation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

CORPUS_MAGIC = "wdm-corpus v1"

# fraction of malformed rows tolerated before we refuse the file
MALFORMED_LIMIT = 0.01


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int

    def __post_init__(self):
        if not self.user or not self.item:
            raise ValueError("user and item ids must be non-empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")


@dataclass
class UserSequence:
    user_index: int
    items: list[int]


@dataclass
class SplitSequences:
    train_items: list[int]
    valid_target: int
    test_target: int


@dataclass
class Vocabulary:
    user_count: int
    item_count: int
    user_to_index: dict[str, int] = field(default_factory=dict)
    index_to_user: dict[int, str] = field(default_factory=dict)
    item_to_index: dict[str, int] = field(default_factory=dict)
    index_to_item: dict[int, str] = field(default_factory=dict)

    @property
    def mask_token(self) -> int:
        return self.item_count + 1


@dataclass
class SequenceCorpus:
    """Dense-index sequences plus the counts needed to size embedding tables."""

    user_count: int
    item_count: int
    sequences: list[UserSequence]

    @property
    def mask_token(self) -> int:
        return self.item_count + 1


def _parse_tsv_row(line):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise ValueError("expected 3 tab-separated fields")
    user, item, ts = parts
    return Interaction(user, item, int(ts))


def _parse_amazon_row(line):
    obj = json.loads(line)
    return Interaction(str(obj["reviewerID"]), str(obj["asin"]), int(obj["unixReviewTime"]))


_PARSERS = {"tsv": _parse_tsv_row, "amazon-jsonl": _parse_amazon_row}


def load_interactions(path, format="tsv"):
    """Read one Interaction per line; refuses files with >1% malformed rows."""
    if format not in _PARSERS:
        raise InputError(f"unknown input format {format!r}; expected one of {sorted(_PARSERS)}")
    parse = _PARSERS[format]
    interactions = []
    bad_rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    interactions.append(parse(line))
                except (ValueError, KeyError, TypeError):
                    bad_rows.append(lineno)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    total = len(interactions) + len(bad_rows)
    if total == 0:
        log.warning("input file %s is empty", path)
        return []
    if len(bad_rows) > MALFORMED_LIMIT * total:
        shown = ", ".join(map(str, bad_rows[:20]))
        raise InputError(
            f"{len(bad_rows)}/{total} malformed rows in {path} (rows: {shown}"
            + (", ..." if len(bad_rows) > 20 else ")")
        )
    if bad_rows:
        log.warning("skipped %d malformed rows in %s", len(bad_rows), path)
    return interactions


def apply_k_core(interactions, k):
    """Drop users with fewer than k interactions (single pass, users only)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = {}
    for it in interactions:
        counts[it.user] = counts.get(it.user, 0) + 1
    kept = [it for it in interactions if counts[it.user] >= k]
    if not kept:
        raise InputError(f"no users remain after {k}-core filtering")
    if len(kept) < len(interactions):
        log.info("k-core(%d) kept %d of %d interactions", k, len(kept), len(interactions))
    return kept


def build_sequences(interactions):
    """Group by user, sort by timestamp (stable), assign dense first-appearance indices."""
    user_to_index = {}
    item_to_index = {}
    per_user = {}
    for it in interactions:
        if it.user not in user_to_index:
            user_to_index[it.user] = len(user_to_index)
            per_user[it.user] = []
        if it.item not in item_to_index:
            item_to_index[it.item] = len(item_to_index) + 1  # 0 is padding
        per_user[it.user].append(it)
    sequences = []
    for user, events in per_user.items():
        events = sorted(events, key=lambda e: e.timestamp)
        sequences.append(UserSequence(user_to_index[user], [item_to_index[e.item] for e in events]))
    vocab = Vocabulary(
        user_count=len(user_to_index),
        item_count=len(item_to_index),
        user_to_index=user_to_index,
        index_to_user={v: k for k, v in user_to_index.items()},
        item_to_index=item_to_index,
        index_to_item={v: k for k, v in item_to_index.items()},
    )
    return vocab, sequences


def split_leave_one_out(seq: UserSequence) -> SplitSequences:
    """Last item for test, second-to-last for validation, rest for training."""
    if len(seq.items) < 5:
        raise InputError(
            f"user {seq.user_index} has only {len(seq.items)} items; 5-core input required"
        )
    return SplitSequences(
        train_items=list(seq.items[:-2]),
        valid_target=seq.items[-2],
        test_target=seq.items[-1],
    )


def inject_noise(seq: UserSequence, ratio, item_count, rng) -> UserSequence:
    """Insert floor(ratio * prefix_len) random items into the training prefix.

    The validation and test targets (the last two items) are left
    untouched so degradation reflects training-data corruption only.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("noise ratio must be in [0, 1]")
    prefix = list(seq.items[:-2])
    tail = list(seq.items[-2:])
    n_insert = int(ratio * len(prefix))
    for _ in range(n_insert):
        pos = int(rng.integers(0, len(prefix) + 1))
        item = int(rng.integers(1, item_count + 1))
        prefix.insert(pos, item)
    return UserSequence(seq.user_index, prefix + tail)


def subsample_training(sequences, portion, rng):
    """Keep ceil(portion * user_count) whole users, sampled without replacement."""
    if not 0.0 < portion <= 1.0:
        raise ValueError("portion must be in (0, 1]")
    if portion == 1.0:
        return list(sequences)
    n_keep = int(np.ceil(portion * len(sequences)))
    chosen = rng.choice(len(sequences), size=n_keep, replace=False)
    chosen = np.sort(chosen)
    return [sequences[i] for i in chosen]


def write_corpus(path, corpus: SequenceCorpus):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CORPUS_MAGIC} {corpus.user_count} {corpus.item_count}\n")
        for seq in corpus.sequences:
            fh.write(f"{seq.user_index} {' '.join(map(str, seq.items))}\n")


def read_corpus(path) -> SequenceCorpus:
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 4 or " ".join(header[:2]) != CORPUS_MAGIC:
                raise InputError(f"{path} is not a '{CORPUS_MAGIC}' corpus file")
            user_count, item_count = int(header[2]), int(header[3])
            sequences = []
            for line in fh:
                fields = line.split()
                if not fields:
                    continue
                sequences.append(UserSequence(int(fields[0]), [int(x) for x in fields[1:]]))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return SequenceCorpus(user_count, item_count, sequences)


def corpus_stats(corpus: SequenceCorpus):
    """Summary counts in the style of a dataset-statistics table."""
    n_inter = sum(len(s.items) for s in corpus.sequences)
    density = n_inter / (corpus.user_count * corpus.item_count) if corpus.user_count else 0.0
    avg = n_inter / corpus.user_count if corpus.user_count else 0.0
    return {
        "users": corpus.user_count,
        "items": corpus.item_count,
        "interactions": n_inter,
        "density": density,
        "avg_per_user": avg,
    }
