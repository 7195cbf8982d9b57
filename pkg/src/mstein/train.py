"""Mini-batch training: negative sampling, AdamW, early stopping on
validation MRR, and resumable checkpoints.

All randomness is derived statelessly from the master seed via
SeedSequence keys (purpose, epoch, user/step), so a run is reproducible
bit for bit and resuming from a checkpoint continues the exact stream.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import encoder as enc
from . import losses
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .config import TrainConfig, model_fingerprint
from .data import SequenceCorpus, inject_noise, split_leave_one_out, subsample_training
from .errors import InputError, NumericalError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# rng stream salts (stateless derivation from the master seed)
_INIT, _SHUFFLE, _AUG, _NEG, _DROPOUT, _NOISE, _PORTION = range(7)


def stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key))))


@dataclass
class TrainState:
    cfg: TrainConfig
    item_count: int
    params: dict[str, Tensor]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    opt_step: int = 0
    epoch: int = 0
    best_mrr: float = float("-inf")
    epochs_since_improvement: int = 0

    @classmethod
    def fresh(cls, cfg: TrainConfig, item_count: int):
        params = enc.init_params(cfg, item_count, stream(cfg.seed, _INIT))
        return cls(cfg, item_count, params,
                   {k: np.zeros_like(v.data) for k, v in params.items()},
                   {k: np.zeros_like(v.data) for k, v in params.items()},
                   {k: v.data.copy() for k, v in params.items()})


@dataclass
class TrainData:
    """Split, optionally subsampled/noised sequences ready for batching."""

    item_count: int
    user_indices: list[int]
    train_items: dict[int, list[int]]
    valid_target: dict[int, int]
    test_target: dict[int, int]
    full_sets: dict[int, set[int]]
    correlation: aug.ItemCorrelation | None = None


def prepare_training_data(corpus: SequenceCorpus, cfg: TrainConfig) -> TrainData:
    sequences = corpus.sequences
    if cfg.portion < 1.0:
        sequences = subsample_training(sequences, cfg.portion, stream(cfg.seed, _PORTION))
    train_items, valid_t, test_t, full_sets = {}, {}, {}, {}
    users = []
    for seq in sequences:
        if cfg.noise_ratio > 0.0:
            seq = inject_noise(seq, cfg.noise_ratio, corpus.item_count,
                               stream(cfg.seed, _NOISE, seq.user_index))
        split = split_leave_one_out(seq)
        users.append(seq.user_index)
        train_items[seq.user_index] = split.train_items
        valid_t[seq.user_index] = split.valid_target
        test_t[seq.user_index] = split.test_target
        full_sets[seq.user_index] = set(seq.items)
    policy = cfg.policy()
    correlation = None
    if {"substitute", "insert"} & set(policy.ops):
        correlation = aug.build_item_correlation(
            [train_items[u] for u in users], top_k=policy.correlation_top_k
        )
    return TrainData(corpus.item_count, users, train_items, valid_t, test_t, full_sets, correlation)


def sample_negatives(user_set, n, item_count, rng):
    """n uniform item draws, rejected until outside the user's interactions."""
    if len(user_set) >= item_count:
        raise InputError("user interacted with every item; cannot sample negatives")
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        while True:
            cand = int(rng.integers(1, item_count + 1))
            if cand not in user_set:
                out[i] = cand
                break
    return out


def _rec_batch(data: TrainData, users, cfg, epoch):
    """Padded inputs, per-position positives and sampled negatives."""
    max_len = cfg.max_len
    batch = len(users)
    items = np.zeros((batch, max_len), dtype=np.int64)
    positions = np.zeros((batch, max_len), dtype=np.int64)
    positives = np.zeros((batch, max_len), dtype=np.int64)
    negatives = np.zeros((batch, max_len), dtype=np.int64)
    for b, user in enumerate(users):
        seq = data.train_items[user]
        inputs = seq[:-1][-max_len:]
        targets = seq[1:][-max_len:]
        n = len(inputs)
        items[b, max_len - n :] = inputs
        positions[b, max_len - n :] = np.arange(n)
        positives[b, max_len - n :] = targets
        rng = stream(cfg.seed, _NEG, epoch, user)
        negatives[b, max_len - n :] = sample_negatives(data.full_sets[user], n, data.item_count, rng)
    valid = items != 0
    return items, positions, valid, positives, negatives


def _contrastive_views(data: TrainData, users, cfg, epoch):
    policy = cfg.policy()
    mask_token = data.item_count + 1
    views = []
    for user in users:
        rng = stream(cfg.seed, _AUG, epoch, user)
        pair = aug.augment_pair(user, data.train_items[user], policy, rng, mask_token, data.correlation)
        views.append(pair.view_a)
        views.append(pair.view_b)
    return views


def global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return np.sqrt(total)


def adamw_update(state: TrainState):
    """One decoupled-weight-decay Adam step over all parameter gradients."""
    cfg = state.cfg
    if cfg.grad_clip > 0.0:
        norm = global_grad_norm(state.params)
        scale = cfg.grad_clip / norm if norm > cfg.grad_clip else 1.0
    else:
        scale = 1.0
    state.opt_step += 1
    t = state.opt_step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name in sorted(state.params):
        p = state.params[name]
        if p.grad is None:
            continue
        g = p.grad * scale
        m = state.opt_m[name]
        v = state.opt_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        if cfg.weight_decay > 0.0 and enc.is_decayable(name):
            update = update + cfg.weight_decay * p.data
        p.data -= cfg.learning_rate * update


def train_step(state: TrainState, data: TrainData, users, epoch, step_index):
    """Forward/backward on one user batch plus one optimizer update."""
    cfg = state.cfg
    drop_rng = stream(cfg.seed, _DROPOUT, epoch, step_index) if cfg.dropout > 0.0 else None

    items, positions, valid, positives, negatives = _rec_batch(data, users, cfg, epoch)
    enc_mean, enc_var = enc.encode(state.params, cfg, items, positions, valid, drop_rng)
    pos_mean, pos_var = enc.item_gaussians(state.params, positives)
    neg_mean, neg_var = enc.item_gaussians(state.params, negatives)

    rec = losses.rec_loss(enc_mean, enc_var, pos_mean, pos_var, neg_mean, neg_var, valid)
    pvn = None
    if cfg.pvn_weight > 0.0:
        pvn = losses.pvn_loss(enc_mean, enc_var, pos_mean, pos_var, neg_mean, neg_var,
                              valid, cfg.pvn_margin)

    cl = None
    align = float("nan")
    uniform = float("nan")
    uniform_defined = False
    if cfg.cl_loss != "none" and cfg.cl_weight > 0.0:
        view_seqs = _contrastive_views(data, users, cfg, epoch)
        v_mean, v_var, v_valid = enc.encode_sequences(state.params, cfg, view_seqs, drop_rng)
        last = enc.last_valid_index(v_valid)
        rows = np.arange(len(view_seqs))
        cbatch = losses.ContrastiveBatch(
            mean=ad.gather_rows(v_mean, rows, last),
            var=ad.gather_rows(v_var, rows, last),
        )
        if cfg.cl_loss == "wdm":
            cl = losses.w2_infonce_loss(cbatch)
        else:
            cl = losses.cosine_infonce_loss(cbatch, cfg.temperature)
        align = losses.alignment_diag(cbatch.mean.data, cbatch.var.data)
        uniform, uniform_defined = losses.uniformity_diag(cbatch.mean.data, cbatch.var.data)

    total = losses.total_loss(rec, pvn, cl, cfg.pvn_weight, cfg.cl_weight)
    if not np.isfinite(total.data):
        parts = {
            "rec": float(rec.data),
            "pvn": float(pvn.data) if pvn is not None else None,
            "cl": float(cl.data) if cl is not None else None,
        }
        raise NumericalError(
            f"non-finite loss at epoch {epoch} step {step_index}: {parts}; "
            f"batch users {list(map(int, users))[:8]}"
        )
    for p in state.params.values():
        p.zero_grad()
    total.backward()
    adamw_update(state)
    return losses.breakdown(rec, pvn, cl, cfg.pvn_weight, cfg.cl_weight,
                            align, uniform, uniform_defined)


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def fit(cfg: TrainConfig, corpus: SequenceCorpus, log_file=None, state: TrainState | None = None):
    """Train until max_epochs or patience exhaustion; returns
    (best_params, history, final_state). Pass a loaded state to resume."""
    from .evaluate import evaluate

    data = prepare_training_data(corpus, cfg)
    if state is None:
        state = TrainState.fresh(cfg, corpus.item_count)
    history = []
    users = np.asarray(data.user_indices)

    while state.epoch < cfg.max_epochs:
        epoch = state.epoch + 1
        t0 = time.perf_counter()
        order = stream(cfg.seed, _SHUFFLE, epoch).permutation(len(users))
        sums = {"rec_loss": 0.0, "pvn_loss": 0.0, "cl_loss": 0.0, "total": 0.0}
        n_steps = 0
        for step_index, chunk in enumerate(_batches(order, cfg.batch_size)):
            bd = train_step(state, data, users[chunk], epoch, step_index)
            for key in sums:
                sums[key] += getattr(bd, key)
            n_steps += 1
        valid_metrics = evaluate(state.params, cfg, corpus, "valid", data=data)
        elapsed = time.perf_counter() - t0
        record = {
            "epoch": epoch,
            "rec_loss": sums["rec_loss"] / n_steps,
            "pvn_loss": sums["pvn_loss"] / n_steps,
            "cl_loss": sums["cl_loss"] / n_steps,
            "total": sums["total"] / n_steps,
            "valid_mrr": valid_metrics.mrr,
            "elapsed_s": elapsed,
        }
        history.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        state.epoch = epoch
        if valid_metrics.mrr > state.best_mrr:
            state.best_mrr = valid_metrics.mrr
            state.epochs_since_improvement = 0
            state.best_params = {k: v.data.copy() for k, v in state.params.items()}
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= cfg.patience:
                break
    return state.best_params, history, state


def save_checkpoint(state: TrainState, path):
    arrays = {f"param.{k}": v.data for k, v in state.params.items()}
    arrays.update({f"opt.m.{k}": v for k, v in state.opt_m.items()})
    arrays.update({f"opt.v.{k}": v for k, v in state.opt_v.items()})
    arrays.update({f"best.{k}": v for k, v in state.best_params.items()})
    arrays["meta.counters"] = np.array(
        [state.opt_step, state.epoch, state.epochs_since_improvement, state.cfg.seed], dtype=np.int64
    )
    arrays["meta.best_mrr"] = np.array([state.best_mrr], dtype=np.float64)
    save_arrays(path, model_fingerprint(state.cfg, state.item_count), arrays)


def load_checkpoint(path, cfg: TrainConfig, item_count: int) -> TrainState:
    fingerprint, arrays = load_arrays(path)
    expected = model_fingerprint(cfg, item_count)
    if fingerprint != expected:
        raise InputError(
            f"checkpoint fingerprint mismatch for {path}: file {fingerprint[:12]}..., "
            f"config {expected[:12]}... (architecture fields differ)"
        )
    params = {}
    opt_m, opt_v, best_params = {}, {}, {}
    for name, arr in arrays.items():
        if name.startswith("param."):
            params[name[len("param.") :]] = Tensor(arr, requires_grad=True)
        elif name.startswith("opt.m."):
            opt_m[name[len("opt.m.") :]] = arr
        elif name.startswith("opt.v."):
            opt_v[name[len("opt.v.") :]] = arr
        elif name.startswith("best."):
            best_params[name[len("best.") :]] = arr
    counters = arrays["meta.counters"]
    return TrainState(
        cfg=cfg,
        item_count=item_count,
        params=params,
        opt_m=opt_m,
        opt_v=opt_v,
        best_params=best_params,
        opt_step=int(counters[0]),
        epoch=int(counters[1]),
        epochs_since_improvement=int(counters[2]),
        best_mrr=float(arrays["meta.best_mrr"][0]),
    )


def save_model(params: dict[str, Tensor], cfg: TrainConfig, item_count: int, path):
    save_arrays(path, model_fingerprint(cfg, item_count), {k: v.data for k, v in params.items()})


def load_model(path, cfg: TrainConfig, item_count: int) -> dict[str, Tensor]:
    fingerprint, arrays = load_arrays(path)
    expected = model_fingerprint(cfg, item_count)
    if fingerprint != expected:
        raise InputError(f"model fingerprint mismatch for {path}")
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
