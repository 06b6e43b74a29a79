"""Selective attention over class-paths and per-attribute translation scoring.

A path set ``P`` (one encoded row per class-path) is scored against attribute
``a`` by attending over the rows with bilinear scores ``p_i A a``, pooling the
rows with the softmax weights, mapping the pooled vector through ``M_a`` and
measuring its distance to ``a``.  Lower scores mean a better match.
"""

import csv
from dataclasses import asdict, dataclass, field, fields
import json
import math

import numpy as np

from .encoder import EncoderParams, WordEmbeddingTable, encode_path, encode_paths
from .numerics import L1, L2, NORMS, LstmWeights, distance, distance_grad, softmax

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    word_dim: int = 100
    path_dim: int = 100
    attr_dim: int = 100
    margin: float = 1.0
    norm: str = L2
    renormalize_attrs: bool = True
    peepholes: bool = False
    shared_attention_neg: bool = False
    trainable_embeddings: bool = True
    seed: int = 0

    def validate(self):
        for name in ("word_dim", "path_dim", "attr_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (isinstance(self.margin, (int, float)) and math.isfinite(self.margin) and self.margin > 0):
            raise ValueError(f"margin must be a positive finite number, got {self.margin!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        return self


@dataclass
class AttributeSpace:
    """Attribute embeddings (rows) and one ``(path_dim, attr_dim)`` mapping per attribute."""

    attributes: list
    embeddings: np.ndarray
    mappings: np.ndarray

    def __post_init__(self):
        self.attributes = list(self.attributes)
        self.index = {a: i for i, a in enumerate(self.attributes)}
        n = len(self.attributes)
        if self.embeddings.shape[0] != n or self.mappings.shape[0] != n:
            raise ValueError("need one embedding row and one mapping per attribute")
        if self.mappings.shape[2] != self.embeddings.shape[1]:
            raise ValueError("mapping output dim must equal attribute dim")

    def __len__(self):
        return len(self.attributes)

    def idx(self, attr):
        if isinstance(attr, (int, np.integer)):
            if not 0 <= attr < len(self.attributes):
                raise KeyError(f"attribute index {attr} out of range")
            return int(attr)
        try:
            return self.index[attr]
        except KeyError:
            raise KeyError(f"unknown attribute {attr!r}") from None

    def renormalize(self):
        norms = np.sqrt(np.einsum("ij,ij->i", self.embeddings, self.embeddings))
        self.embeddings /= np.where(norms > 0, norms, 1.0)[:, None]


@dataclass
class AttentionParams:
    bilinear: np.ndarray  # (path_dim, attr_dim)


# -- forward pieces ------------------------------------------------------

def attention_weights(path_vecs, a, attention):
    """Softmax over ``s_i = p_i . (A a)``."""
    P = np.atleast_2d(np.asarray(path_vecs, dtype=np.float64))
    A = attention.bilinear if isinstance(attention, AttentionParams) else attention
    if P.shape[0] < 1:
        raise ValueError("need at least one path vector")
    if P.shape[1] != A.shape[0] or np.shape(a) != (A.shape[1],):
        raise ValueError(f"dimension mismatch: paths {P.shape}, A {A.shape}, a {np.shape(a)}")
    return softmax(P @ (A @ a))


def aggregate(path_vecs, alpha):
    P = np.atleast_2d(np.asarray(path_vecs, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (P.shape[0],):
        raise ValueError(f"{alpha.shape[0]} weights for {P.shape[0]} paths")
    if abs(alpha.sum() - 1.0) > 1e-9:
        raise ValueError("attention weights must sum to 1")
    return alpha @ P


def score(p, attr, space, norm=L2):
    """Energy ``d(p M_a, a)`` of vector ``p`` against one attribute."""
    k = space.idx(attr)
    M = space.mappings[k]
    if np.shape(p) != (M.shape[0],):
        raise ValueError(f"path vector has shape {np.shape(p)}, mapping expects ({M.shape[0]},)")
    return distance(p @ M, space.embeddings[k], norm)


def score_entity(path_vecs, attr, space, attention, norm=L2):
    """Return ``(score, alpha)`` with attention conditioned on ``attr``."""
    k = space.idx(attr)
    alpha = attention_weights(path_vecs, space.embeddings[k], attention)
    p_e = aggregate(path_vecs, alpha)
    return score(p_e, k, space, norm), alpha


# -- loss ----------------------------------------------------------------

def _branch(P, att_k, map_k, weight, space, A, norm, g):
    """Forward one energy term and, if ``weight`` != 0, accumulate its gradient."""
    a_att = space.embeddings[att_k]
    Aa = A @ a_att
    alpha = softmax(P @ Aa)
    p_e = alpha @ P
    M = space.mappings[map_k]
    d, gq = distance_grad(p_e @ M, space.embeddings[map_k], norm)
    if weight:
        dq = weight * gq
        g["emb"][map_k] = g["emb"].get(map_k, 0.0) - dq
        g["M"][map_k] = g["M"].get(map_k, 0.0) + np.outer(p_e, dq)
        dp_e = M @ dq
        dalpha = P @ dp_e
        ds = alpha * (dalpha - alpha @ dalpha)
        g["paths"] += np.outer(alpha, dp_e) + np.outer(ds, Aa)
        dAa = P.T @ ds
        g["A"] += np.outer(dAa, a_att)
        g["emb"][att_k] = g["emb"].get(att_k, 0.0) + A.T @ dAa
    return d


def margin_loss(path_vecs, pos, neg, space, attention, margin, norm=L2, shared_attention_neg=False,
                need_grad=True):
    """Hinge ``max(0, margin + d_pos - d_neg)`` and its exact gradient.

    By default the negative term recomputes attention toward the corrupted
    attribute; ``shared_attention_neg`` reuses the positive attribute's
    attention instead.  Gradients are returned as a dict: ``paths`` (one row
    per path vector), ``A``, and sparse ``emb`` / ``M`` dicts keyed by
    attribute index.  With ``need_grad=False`` the gradient dict is ``None``.
    """
    kp, kn = space.idx(pos), space.idx(neg)
    if kp == kn:
        raise ValueError("positive and corrupted attribute must differ")
    P = np.atleast_2d(np.asarray(path_vecs, dtype=np.float64))
    A = attention.bilinear
    zero = {"paths": np.zeros_like(P), "A": np.zeros_like(A), "emb": {}, "M": {}}
    att_neg = kp if shared_attention_neg else kn
    d_pos = _branch(P, kp, kp, 0.0, space, A, norm, zero)
    d_neg = _branch(P, att_neg, kn, 0.0, space, A, norm, zero)
    loss = margin + d_pos - d_neg
    if not need_grad:
        return max(0.0, loss), None
    if loss <= 0.0:
        return 0.0, zero
    _branch(P, kp, kp, 1.0, space, A, norm, zero)
    _branch(P, att_neg, kn, -1.0, space, A, norm, zero)
    return loss, zero


def _segment_sum(x, starts):
    return np.add.reduceat(x, starts, axis=0)


def batch_margin_loss(path_matrix, seg_paths, seg_starts, pos, neg, space, A, margin, norm=L2,
                      shared_attention_neg=False):
    """Vectorized sum of :func:`margin_loss` over a batch of instances.

    ``path_matrix`` holds unique encoded paths; instance ``b`` uses rows
    ``seg_paths[seg_starts[b]:seg_starts[b+1]]``.  Returns ``(loss_sum,
    losses, grads)`` with dense gradients ``paths``, ``A``, ``emb`` and ``M``.
    """
    B = len(pos)
    starts = np.asarray(seg_starts[:-1])
    lengths = np.diff(seg_starts)
    inst = np.repeat(np.arange(B), lengths)
    Pf = path_matrix[seg_paths]
    E = space.embeddings
    Ms = space.mappings

    def forward(att, mp):
        Aa = E[att] @ A.T
        s = np.einsum("th,th->t", Pf, Aa[inst])
        smax = np.maximum.reduceat(s, starts)
        e = np.exp(s - smax[inst])
        alpha = e / _segment_sum(e, starts)[inst]
        p_e = _segment_sum(alpha[:, None] * Pf, starts)
        q = np.empty((B, E.shape[1]))
        for k in np.unique(mp):
            rows = np.flatnonzero(mp == k)
            q[rows] = p_e[rows] @ Ms[k]
        diff = q - E[mp]
        if norm == L1:
            d = np.abs(diff).sum(axis=1)
            gq = np.sign(diff)
        else:
            d = np.sqrt(np.einsum("bd,bd->b", diff, diff))
            gq = np.divide(diff, d[:, None], out=np.zeros_like(diff), where=d[:, None] > 0)
        return dict(att=att, mp=mp, Aa=Aa, alpha=alpha, p_e=p_e, d=d, gq=gq)

    def backward(f, w, g):
        dq = w[:, None] * f["gq"]
        np.add.at(g["emb"], f["mp"], -dq)
        dp_e = np.empty_like(f["p_e"])
        for k in np.unique(f["mp"]):
            rows = np.flatnonzero(f["mp"] == k)
            g["M"][k] += f["p_e"][rows].T @ dq[rows]
            dp_e[rows] = dq[rows] @ Ms[k].T
        alpha = f["alpha"]
        dalpha = np.einsum("th,th->t", Pf, dp_e[inst])
        ds = alpha * (dalpha - _segment_sum(alpha * dalpha, starts)[inst])
        np.add.at(g["paths"], seg_paths, alpha[:, None] * dp_e[inst] + ds[:, None] * f["Aa"][inst])
        dAa = _segment_sum(ds[:, None] * Pf, starts)
        g["A"] += dAa.T @ E[f["att"]]
        np.add.at(g["emb"], f["att"], dAa @ A)

    pos = np.asarray(pos)
    neg = np.asarray(neg)
    fp = forward(pos, pos)
    fn = forward(pos if shared_attention_neg else neg, neg)
    losses = np.maximum(0.0, margin + fp["d"] - fn["d"])
    active = (losses > 0).astype(np.float64)
    g = {
        "paths": np.zeros_like(path_matrix),
        "A": np.zeros_like(A),
        "emb": np.zeros_like(E),
        "M": np.zeros_like(Ms),
    }
    if active.any():
        backward(fp, active, g)
        backward(fn, -active, g)
    return float(losses.sum()), losses, g


# -- the trained model ---------------------------------------------------

@dataclass
class TransAttModel:
    """Everything needed to score attributes; doubles as the checkpoint."""

    config: ModelConfig
    encoder: EncoderParams
    space: AttributeSpace
    attention: AttentionParams
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        H = self.encoder.path_dim
        D = self.space.embeddings.shape[1]
        if self.space.mappings.shape[1] != H:
            raise ValueError("mapping input dim must equal path dim")
        if self.attention.bilinear.shape != (H, D):
            raise ValueError(f"bilinear matrix must be ({H}, {D})")

    @property
    def attributes(self):
        return self.space.attributes

    def parameters(self):
        """Named trainable arrays (views into the model, updated in place)."""
        out = {
            "lstm.W": self.encoder.lstm.W,
            "lstm.U": self.encoder.lstm.U,
            "lstm.b": self.encoder.lstm.b,
        }
        if self.encoder.lstm.P is not None:
            out["lstm.P"] = self.encoder.lstm.P
        if self.encoder.table.trainable:
            out["words"] = self.encoder.table.vectors
        out["attr.emb"] = self.space.embeddings
        out["attr.M"] = self.space.mappings
        out["attention.A"] = self.attention.bilinear
        return out

    def encode(self, path):
        return encode_path(path, self.encoder)

    def encode_many(self, paths):
        return encode_paths(list(paths), self.encoder)[0]

    def copy(self):
        return load_checkpoint_dict(checkpoint_dict(self))


def init_model(config, words, attributes, rng, table=None):
    """Fresh model; draws happen in a fixed order so the seed fixes every value."""
    config.validate()
    H, D = config.path_dim, config.attr_dim
    if table is None:
        table = WordEmbeddingTable.random(sorted(words), config.word_dim, rng,
                                          trainable=config.trainable_embeddings)
    else:
        table.trainable = config.trainable_embeddings
        if table.dim != config.word_dim:
            raise ValueError(f"embedding file dim {table.dim} != word_dim {config.word_dim}")
    r = 1.0 / math.sqrt(H)
    W = rng.uniform(-r, r, (4 * H, table.dim))
    U = rng.uniform(-r, r, (4 * H, H))
    b = np.zeros(4 * H)
    P = rng.uniform(-r, r, (3, H)) if config.peepholes else None
    lstm = LstmWeights(W, U, b, P)
    bound = math.sqrt(6.0 / (H + D))
    A = rng.uniform(-bound, bound, (H, D))
    attributes = sorted(attributes)
    M = rng.uniform(-bound, bound, (len(attributes), H, D))
    E = rng.normal((len(attributes), D))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    return TransAttModel(config, EncoderParams(lstm, table),
                         AttributeSpace(attributes, E, M), AttentionParams(A))


# -- ranking -------------------------------------------------------------

def _order(scores):
    """Indices sorted by (score, index)."""
    return sorted(range(len(scores)), key=lambda j: (scores[j], j))


def rank_attributes_for_path(path, model, k):
    """Top-``k`` ``(attribute, score)`` for a single class-path (no attention)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    p = model.encode(path)
    scores = [score(p, j, model.space, model.config.norm) for j in range(len(model.space))]
    return [(model.space.attributes[j], scores[j]) for j in _order(scores)[:k]]


def rank_attributes_for_entity(path_set, model, k, common_attr_filter=()):
    """Top-``k`` attributes for an entity plus its attention matrix.

    Matrix rows follow the returned ranking, columns follow the entity's paths.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    paths = list(path_set)
    if not paths:
        raise ValueError("entity has no class-paths")
    P = model.encode_many(paths)
    banned = set(common_attr_filter)
    cand = [j for j, a in enumerate(model.space.attributes) if a not in banned]
    if not cand:
        raise ValueError("no candidate attributes left after filtering")
    results = {}
    for j in cand:
        results[j] = score_entity(P, j, model.space, model.attention, model.config.norm)
    cand.sort(key=lambda j: (results[j][0], j))
    top = cand[:k]
    ranked = [(model.space.attributes[j], results[j][0]) for j in top]
    matrix = np.array([results[j][1] for j in top])
    return ranked, matrix


def write_attention_csv(target, paths, ranked, matrix):
    """Attention matrix as CSV: header of slash-joined paths, one row per attribute.

    ``target`` is a file path or an open text stream.
    """
    if hasattr(target, "write"):
        _attention_rows(target, paths, ranked, matrix)
        return
    with open(target, "w", encoding="utf-8", newline="") as fh:
        _attention_rows(fh, paths, ranked, matrix)


def _attention_rows(fh, paths, ranked, matrix):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["attribute"] + [str(p) for p in paths])
    for (attr, _), row in zip(ranked, matrix):
        w.writerow([attr] + [f"{x:.6f}" for x in row])


# -- checkpoint I/O ------------------------------------------------------

def _arr(a):
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def _unarr(d):
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def checkpoint_dict(model):
    lstm = model.encoder.lstm
    params = {"lstm.W": _arr(lstm.W), "lstm.U": _arr(lstm.U), "lstm.b": _arr(lstm.b),
              "words": _arr(model.encoder.table.vectors),
              "oov": _arr(model.encoder.table.oov_vector),
              "attr.emb": _arr(model.space.embeddings), "attr.M": _arr(model.space.mappings),
              "attention.A": _arr(model.attention.bilinear)}
    if lstm.P is not None:
        params["lstm.P"] = _arr(lstm.P)
    return {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "vocab": list(model.encoder.table.words),
        "attributes": list(model.space.attributes),
        "params": params,
        "metadata": model.metadata,
    }


def load_checkpoint_dict(d):
    if d.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {d.get('format_version')!r}")
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in d["config"].items() if k in known}).validate()
    p = d["params"]
    lstm = LstmWeights(_unarr(p["lstm.W"]), _unarr(p["lstm.U"]), _unarr(p["lstm.b"]),
                       _unarr(p["lstm.P"]) if "lstm.P" in p else None)
    table = WordEmbeddingTable(list(d["vocab"]), _unarr(p["words"]).reshape(len(d["vocab"]), -1),
                               oov_vector=_unarr(p["oov"]), trainable=cfg.trainable_embeddings)
    space = AttributeSpace(d["attributes"], _unarr(p["attr.emb"]), _unarr(p["attr.M"]))
    try:
        return TransAttModel(cfg, EncoderParams(lstm, table), space,
                             AttentionParams(_unarr(p["attention.A"])), dict(d.get("metadata", {})))
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from exc


def save_checkpoint(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(checkpoint_dict(model), fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return load_checkpoint_dict(json.load(fh))
