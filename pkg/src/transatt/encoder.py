"""Class-path encoder: class-word embeddings fed root-first through an LSTM.

The representation of a path is the hidden state after its last class word.
"""

from collections import defaultdict
from dataclasses import dataclass
import logging
import math

import numpy as np

from .numerics import LstmWeights, lstm_cell_backward, lstm_cell_forward

log = logging.getLogger(__name__)


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class WordEmbeddingTable:
    words: list
    vectors: np.ndarray
    oov_vector: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise ValueError("vectors must be (len(words), dim)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite values")
        self.vocab = {w: i for i, w in enumerate(self.words)}
        if len(self.vocab) != len(self.words):
            raise ValueError("duplicate words in embedding table")
        if self.oov_vector is None:
            self.oov_vector = (self.vectors.mean(axis=0) if len(self.words)
                               else np.zeros(self.vectors.shape[1]))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def index(self, word):
        """Row index of ``word``, or -1 when out of vocabulary."""
        return self.vocab.get(word, -1)

    def lookup(self, word):
        i = self.vocab.get(word, -1)
        return self.oov_vector if i < 0 else self.vectors[i]

    @classmethod
    def random(cls, words, dim, rng, trainable=True):
        """word2vec-style init: uniform in [-0.5/dim, 0.5/dim]."""
        words = list(words)
        vecs = rng.uniform(-0.5 / dim, 0.5 / dim, (len(words), dim))
        return cls(words, vecs, trainable=trainable)


def load_embeddings(path, trainable=True):
    """Read a word2vec text file (``vocab_size dim`` header, then one word per line)."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingFormatError(f"{path}:1: header must be 'vocab_size dim'")
        try:
            vocab_size, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: header must hold two integers") from None
        if vocab_size < 0 or dim < 1:
            raise EmbeddingFormatError(f"{path}:1: invalid header values {vocab_size} {dim}")
        count = 0
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            toks = line.rstrip("\n").split(" ")
            toks = [t for t in toks if t != ""]
            if len(toks) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values after the word, got {len(toks) - 1}"
                )
            try:
                vec = [float(t) for t in toks[1:]]
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vec):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            word = toks[0]
            if word in rows:
                log.warning("%s:%d: duplicate word %r, keeping the last vector", path, lineno, word)
                del rows[word]
            rows[word] = vec
            count += 1
    if count != vocab_size:
        raise EmbeddingFormatError(f"{path}: header announces {vocab_size} rows, found {count}")
    words = list(rows)
    vecs = np.array([rows[w] for w in words], dtype=np.float64).reshape(len(words), dim)
    return WordEmbeddingTable(words, vecs, trainable=trainable)


def save_embeddings(table, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for w, v in zip(table.words, table.vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


@dataclass
class EncoderParams:
    lstm: LstmWeights
    table: WordEmbeddingTable

    def __post_init__(self):
        if self.lstm.input_dim != self.table.dim:
            raise ValueError(
                f"LSTM input_dim {self.lstm.input_dim} != embedding dim {self.table.dim}"
            )

    @property
    def path_dim(self):
        return self.lstm.hidden_dim


@dataclass
class PathCache:
    indices: np.ndarray  # (B, n) word rows, -1 for OOV
    steps: list  # one LstmCache per time step


def _inputs(table, idx):
    x = table.vectors[np.maximum(idx, 0)]
    oov = idx < 0
    if oov.any():
        x = x.copy()
        x[oov] = table.oov_vector
    return x


def _unroll(idx, enc):
    """Run a (B, n) block of word indices; returns (h_n, caches)."""
    B, n = idx.shape
    H = enc.path_dim
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    caches = []
    for t in range(n):
        h, c, cache = lstm_cell_forward(_inputs(enc.table, idx[:, t]), h, c, enc.lstm)
        caches.append(cache)
    return h, caches


def encode_path(path, enc, return_cache=False):
    """Final LSTM hidden state for ``path``; optionally also the BPTT cache."""
    idx = np.array([[enc.table.index(w) for w in path]], dtype=np.int64)
    if idx.shape[1] < 1:
        raise ValueError("cannot encode an empty path")
    h, caches = _unroll(idx, enc)
    if return_cache:
        return h[0], PathCache(idx, caches)
    return h[0]


def _bptt(cache, enc, dP):
    lstm = enc.lstm
    grads = {"W": np.zeros_like(lstm.W), "U": np.zeros_like(lstm.U), "b": np.zeros_like(lstm.b)}
    if lstm.P is not None:
        grads["P"] = np.zeros_like(lstm.P)
    dh = np.atleast_2d(dP)
    dc = np.zeros_like(dh)
    dx = [None] * len(cache.steps)
    for t in range(len(cache.steps) - 1, -1, -1):
        g = lstm_cell_backward(dh, dc, cache.steps[t], lstm)
        for k in grads:
            grads[k] += g[k]
        dx[t] = g["x"]
        dh, dc = g["h_prev"], g["c_prev"]
    return grads, dx


def encode_path_backward(cache, enc, dP):
    """Gradients of ``dP . encode_path(...)`` with respect to the encoder.

    Returns the LSTM weight gradients plus, for a trainable table,
    ``"embeddings"``: a dict of row index to gradient covering only rows used by
    the path.  OOV positions feed a fixed vector and get no gradient.
    """
    if cache is None:
        raise ValueError("encode_path_backward needs the cache from encode_path(..., return_cache=True)")
    grads, dx = _bptt(cache, enc, dP)
    if enc.table.trainable:
        rows = defaultdict(lambda: np.zeros(enc.table.dim))
        for t, i in enumerate(cache.indices[0]):
            if i >= 0:
                rows[int(i)] += dx[t][0]
        grads["embeddings"] = dict(rows)
    return grads


@dataclass
class BatchPathCache:
    indices: np.ndarray  # (B, n_max) word rows, -1 OOV, padded past each length
    masks: list  # per step: (B, 1) 1.0 where the path is still running
    steps: list


def encode_paths(paths, enc):
    """Encode many paths at once; rows of the result follow ``paths``.

    Paths are left-aligned and unrolled together; a row's state is frozen once
    its path has ended, so its output is the hidden state after its own last
    class word.
    """
    lengths = np.array([len(p) for p in paths], dtype=np.int64)
    if lengths.size == 0:
        return np.zeros((0, enc.path_dim)), BatchPathCache(np.zeros((0, 0), np.int64), [], [])
    if lengths.min() < 1:
        raise ValueError("cannot encode an empty path")
    n = int(lengths.max())
    idx = np.zeros((len(paths), n), dtype=np.int64)
    for r, p in enumerate(paths):
        idx[r, :len(p)] = [enc.table.index(w) for w in p]
    H = enc.path_dim
    h = np.zeros((len(paths), H))
    c = np.zeros((len(paths), H))
    masks, steps = [], []
    for t in range(n):
        m = (lengths > t).astype(np.float64)[:, None]
        h_new, c_new, cache = lstm_cell_forward(_inputs(enc.table, idx[:, t]), h, c, enc.lstm)
        if t == 0 or m.all():
            h, c = h_new, c_new
        else:
            h = np.where(m > 0, h_new, h)
            c = np.where(m > 0, c_new, c)
        masks.append(m)
        steps.append(cache)
    return h, BatchPathCache(idx, masks, steps)


def encode_paths_backward(cache, enc, dP):
    """Batched BPTT; embedding gradient is a dense ``(vocab, dim)`` array."""
    lstm = enc.lstm
    grads = {"W": np.zeros_like(lstm.W), "U": np.zeros_like(lstm.U), "b": np.zeros_like(lstm.b)}
    if lstm.P is not None:
        grads["P"] = np.zeros_like(lstm.P)
    emb = np.zeros_like(enc.table.vectors) if enc.table.trainable else None
    dh = np.asarray(dP, dtype=np.float64)
    dc = np.zeros_like(dh)
    for t in range(len(cache.steps) - 1, -1, -1):
        m = cache.masks[t]
        g = lstm_cell_backward(dh * m, dc * m, cache.steps[t], lstm)
        for k in grads:
            grads[k] += g[k]
        if emb is not None:
            col = cache.indices[:, t]
            keep = (col >= 0) & (m[:, 0] > 0)
            np.add.at(emb, col[keep], g["x"][keep])
        dh = g["h_prev"] + dh * (1.0 - m)
        dc = g["c_prev"] + dc * (1.0 - m)
    if emb is not None:
        grads["embeddings"] = emb
    return grads
