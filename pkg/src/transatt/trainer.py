"""Margin-ranking training loop with corrupted attributes and Adadelta."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import logging
import math
import time

import numba
import numpy as np

from .encoder import encode_paths, encode_paths_backward
from .model import ModelConfig, batch_margin_loss, init_model, rank_attributes_for_entity
from .numerics import Param, Rng

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    negatives_per_positive: int = 1
    shuffle: bool = True
    early_stop_patience: int = 10
    validation_fraction: float = 0.1
    allow_gold_negatives: bool = False
    grad_shards: int = 1
    workers: int = 1
    seed: int = 0

    def validate(self):
        for name in ("epochs", "batch_size", "negatives_per_positive", "grad_shards", "workers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if not 0.0 < self.adadelta_rho < 1.0:
            raise ValueError(f"adadelta_rho must lie in (0, 1), got {self.adadelta_rho!r}")
        if not self.adadelta_eps > 0.0:
            raise ValueError(f"adadelta_eps must be > 0, got {self.adadelta_eps!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction!r}")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        return self


@dataclass
class TrainState:
    params: dict
    rng: Rng
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_metric: tuple = (-math.inf, -math.inf)
    best_epoch: int = 0


def sample_corrupted(tup, attributes, gold, rng, allow_gold=False):
    """Draw a corrupted attribute uniformly from ``attributes`` minus ``gold``.

    ``attributes`` is a sequence with a fixed order.  With ``allow_gold`` the
    draw is over all attributes other than the tuple's own.
    """
    banned = {tup.attribute} if allow_gold else set(gold) | {tup.attribute}
    n = len(attributes)
    if sum(1 for a in attributes if a not in banned) == 0:
        raise ValueError(f"no corrupted attribute available for entity {tup.entity!r}")
    for _ in range(32):
        a = attributes[rng.integer(n)]
        if a not in banned:
            return a
    return rng.choice([a for a in attributes if a not in banned])


@numba.njit(cache=True)
def _adadelta_kernel(value, grad, eg, ed, rho, eps):
    for i in range(value.size):
        g = grad[i]
        a = rho * eg[i] + (1.0 - rho) * g * g
        eg[i] = a
        step = -(np.sqrt(ed[i] + eps) / np.sqrt(a + eps)) * g
        ed[i] = rho * ed[i] + (1.0 - rho) * step * step
        value[i] += step
        grad[i] = 0.0


def adadelta_step(param, rho=0.95, eps=1e-6):
    """In-place Adadelta update; the gradient is zeroed afterwards.

    Per scalar: ``Eg2 = rho*Eg2 + (1-rho)*g^2``,
    ``dx = -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g``,
    ``Edx2 = rho*Edx2 + (1-rho)*dx^2``, ``x += dx``.
    """
    if not np.isfinite(param.grad.sum()) and not np.all(np.isfinite(param.grad)):
        raise DivergenceError(f"non-finite gradient in parameter {param.name!r}")
    _adadelta_kernel(param.value.reshape(-1), param.grad.reshape(-1), param.acc_grad_sq.reshape(-1),
                     param.acc_delta_sq.reshape(-1), float(rho), float(eps))
    return param


class _Indexer:
    """Assigns dense ids to unique class-paths and entities of a dataset."""

    def __init__(self, dataset):
        self.paths = []
        self.path_id = {}
        for t in dataset:
            for p in t.path_set:
                if p not in self.path_id:
                    self.path_id[p] = len(self.paths)
                    self.paths.append(p)


def _split_entities(entities, fraction, rng):
    if fraction <= 0 or len(entities) < 2:
        return list(entities), []
    order = rng.shuffle(list(entities))
    n_val = min(len(order) - 1, max(1, round(fraction * len(order))))
    return sorted(order[n_val:]), sorted(order[:n_val])


def _shard_grads(model, paths_of, instances, tcfg_margin, cfg):
    """Loss and gradient for one shard of ``(path ids, pos, neg)`` instances."""
    used = sorted({pid for inst in instances for pid in inst[0]})
    local = {pid: i for i, pid in enumerate(used)}
    P, cache = encode_paths([paths_of[pid] for pid in used], model.encoder)
    seg_paths = np.fromiter((local[pid] for inst in instances for pid in inst[0]), dtype=np.int64)
    seg_starts = np.zeros(len(instances) + 1, dtype=np.int64)
    np.cumsum([len(inst[0]) for inst in instances], out=seg_starts[1:])
    pos = np.array([inst[1] for inst in instances], dtype=np.int64)
    neg = np.array([inst[2] for inst in instances], dtype=np.int64)
    loss, _, g = batch_margin_loss(P, seg_paths, seg_starts, pos, neg, model.space,
                                   model.attention.bilinear, tcfg_margin, cfg.norm,
                                   cfg.shared_attention_neg)
    enc = encode_paths_backward(cache, model.encoder, g["paths"])
    out = {"lstm.W": enc["W"], "lstm.U": enc["U"], "lstm.b": enc["b"],
           "attr.emb": g["emb"], "attr.M": g["M"], "attention.A": g["A"]}
    if "P" in enc:
        out["lstm.P"] = enc["P"]
    if "embeddings" in enc:
        out["words"] = enc["embeddings"]
    return loss, out


def validation_metrics(model, val_items):
    """``(Hits@1, R-precision)`` over ``(path_set, gold)`` validation items.

    R-precision is the share of gold attributes among the top ``|gold|`` and
    breaks ties once Hits@1 saturates.
    """
    if not val_items:
        return float("nan"), float("nan")
    hits, rprec = 0, 0.0
    n_attr = len(model.space)
    for ps, gold in val_items:
        ranked, _ = rank_attributes_for_entity(ps, model, n_attr)
        names = [a for a, _ in ranked]
        hits += names[0] in gold
        rprec += sum(1 for a in names[:len(gold)] if a in gold) / len(gold)
    return hits / len(val_items), rprec / len(val_items)


def train(dataset, model_config=None, train_config=None, table=None, callback=None):
    """Fit a model to training tuples.

    Returns ``(model, state)``.  With a validation split the returned model is
    the snapshot with the best validation Hits@1 (ties keep the earlier
    epoch); otherwise it is the final one.  ``callback(record, model)`` is
    called after every epoch.
    """
    mcfg = (model_config or ModelConfig()).validate()
    tcfg = (train_config or TrainConfig()).validate()
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty training set")

    words = {w for t in dataset for p in t.path_set for w in p}
    attributes = sorted({t.attribute for t in dataset})
    if len(attributes) < 2:
        raise ValueError("need at least two attributes to draw corrupted tuples")
    model = init_model(mcfg, words, attributes, Rng(mcfg.seed), table=table)
    a_idx = model.space.index

    rng = Rng(tcfg.seed)
    gold = {}
    for t in dataset:
        gold.setdefault(t.entity, set()).add(t.attribute)
    train_ents, val_ents = _split_entities(sorted(gold), tcfg.validation_fraction, rng)
    val_set = set(val_ents)
    train_tuples = [t for t in dataset if t.entity not in val_set]
    if not train_tuples:
        raise ValueError("validation split left no training tuples")
    path_sets = {t.entity: t.path_set for t in dataset}
    val_items = [(path_sets[e], gold[e]) for e in val_ents]

    ix = _Indexer(train_tuples)
    tuple_paths = [tuple(ix.path_id[p] for p in t.path_set) for t in train_tuples]

    params = {name: Param(name, arr) for name, arr in model.parameters().items()}
    state = TrainState(params=params, rng=rng)
    best = None
    pool = ThreadPoolExecutor(tcfg.workers) if tcfg.workers > 1 else None
    try:
        for epoch in range(1, tcfg.epochs + 1):
            t0 = time.perf_counter()
            order = list(range(len(train_tuples)))
            if tcfg.shuffle:
                rng.shuffle(order)
            total, count = 0.0, 0
            for start in range(0, len(order), tcfg.batch_size):
                instances = []
                for ti in order[start:start + tcfg.batch_size]:
                    t = train_tuples[ti]
                    for _ in range(tcfg.negatives_per_positive):
                        neg = sample_corrupted(t, attributes, gold[t.entity], rng, tcfg.allow_gold_negatives)
                        instances.append((tuple_paths[ti], a_idx[t.attribute], a_idx[neg]))
                n_sh = min(tcfg.grad_shards, len(instances))
                bounds = np.linspace(0, len(instances), n_sh + 1).astype(int)
                shards = [instances[bounds[s]:bounds[s + 1]] for s in range(n_sh)]
                job = lambda sh: _shard_grads(model, ix.paths, sh, mcfg.margin, mcfg)  # noqa: E731
                results = list(pool.map(job, shards)) if pool else [job(sh) for sh in shards]
                for loss, grads in results:
                    total += loss
                    for name, g in grads.items():
                        params[name].grad += g
                count += len(instances)
                for p in params.values():
                    adadelta_step(p, tcfg.adadelta_rho, tcfg.adadelta_eps)
                if mcfg.renormalize_attrs:
                    model.space.renormalize()
            mean_loss = total / count
            if not math.isfinite(mean_loss):
                raise DivergenceError(f"mean loss is {mean_loss} at epoch {epoch}")
            state.epoch = epoch
            state.loss_history.append(mean_loss)
            val, val_rprec = validation_metrics(model, val_items) if val_items else (None, None)
            state.val_history.append(val)
            record = {"epoch": epoch, "mean_loss": mean_loss, "val_hits1": val,
                      "val_rprec": val_rprec, "seconds": round(time.perf_counter() - t0, 3)}
            log.info("epoch %d loss %.6f val_hits1 %s", epoch, mean_loss, val)
            if callback is not None:
                callback(record, model)
            if val is not None:
                if (val, val_rprec) > state.best_metric:
                    state.best_metric, state.best_epoch = (val, val_rprec), epoch
                    best = {k: v.copy() for k, v in model.parameters().items()}
                elif epoch - state.best_epoch >= tcfg.early_stop_patience:
                    break
    finally:
        if pool:
            pool.shutdown()

    if best is not None:
        for k, v in model.parameters().items():
            v[...] = best[k]
    else:
        state.best_epoch = state.epoch
    model.metadata = {
        "epochs_run": state.epoch,
        "best_epoch": state.best_epoch,
        "final_loss": state.loss_history[-1],
        "loss_history": list(state.loss_history),
        "val_hits1_history": list(state.val_history),
        "train_config": asdict(tcfg),
        "validation_entities": list(val_ents),
    }
    return model, state
