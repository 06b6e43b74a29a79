"""Dense numerical substrate: activations, distances, the LSTM cell, gradient
checking, optimizer parameter slots and a portable PRNG.

Vectors and matrices are plain float64 numpy arrays.  The LSTM cell works on
single vectors or on row-batches ``(B, dim)`` with the same code.
"""

from dataclasses import dataclass, field
import math

import numpy as np

__all__ = [
    "L1",
    "L2",
    "Param",
    "Rng",
    "LstmWeights",
    "LstmCache",
    "softmax",
    "sigmoid",
    "distance",
    "distance_grad",
    "lstm_cell_forward",
    "lstm_cell_backward",
    "grad_check",
]

L1 = "L1"
L2 = "L2"
NORMS = (L1, L2)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Rng:
    """splitmix64 generator.

    The stream is counter based: output ``i`` (0-based) is
    ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``, which is exactly the
    reference sequential splitmix64 stream, so bulk draws can be vectorized
    without changing a single value.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    # -- raw stream -------------------------------------------------------
    def _raw(self, n):
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def next_u64(self):
        self.counter += 1
        z = (self.seed + self.counter * _GOLDEN) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def u64_array(self, n):
        return self._raw(int(n))

    # -- derived draws ----------------------------------------------------
    def random(self, size=None):
        """Uniform doubles in [0, 1) from the top 53 bits."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        out = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(size)

    def uniform(self, low, high, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, size):
        """Standard normals by Box-Muller (two uniforms per draw)."""
        n = int(np.prod(size))
        u1 = 1.0 - self.random(n)  # (0, 1]
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(size)

    def integer(self, n):
        """Uniform integer in [0, n)."""
        if n < 1:
            raise ValueError("integer() needs n >= 1")
        return min(int(self.random() * n), n - 1)

    def choice(self, seq):
        return seq[self.integer(len(seq))]

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def getstate(self):
        return {"seed": self.seed, "counter": self.counter}

    def setstate(self, state):
        self.seed = int(state["seed"])
        self.counter = int(state["counter"])


@dataclass
class Param:
    """A trainable array together with its gradient and Adadelta accumulators."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None
    acc_grad_sq: np.ndarray = None
    acc_delta_sq: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.acc_grad_sq is None:
            self.acc_grad_sq = np.zeros_like(self.value)
        if self.acc_delta_sq is None:
            self.acc_delta_sq = np.zeros_like(self.value)
        shapes = {a.shape for a in (self.value, self.grad, self.acc_grad_sq, self.acc_delta_sq)}
        if len(shapes) != 1:
            raise ValueError(f"param {self.name!r}: value/grad/accumulator shapes differ: {shapes}")

    def zero_grad(self):
        self.grad[...] = 0.0


def softmax(scores):
    """Softmax of a 1-D score vector, computed after subtracting the max."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("softmax expects a non-empty 1-D vector")
    e = np.exp(s - s.max())
    return e / e.sum()


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_norm(norm):
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def distance(x, y, norm=L2):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    _check_norm(norm)
    diff = x - y
    if norm == L1:
        return float(np.abs(diff).sum())
    return float(math.sqrt(diff @ diff))


def distance_grad(x, y, norm=L2):
    """Return ``(d, dd/dx)``; the gradient with respect to ``y`` is the negation.

    Where the distance is not differentiable the zero subgradient is used:
    ``sign(0) = 0`` for L1 and the zero vector at ``x == y`` for L2.
    """
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    _check_norm(norm)
    if norm == L1:
        return float(np.abs(diff).sum()), np.sign(diff)
    d = math.sqrt(diff @ diff)
    if d == 0.0:
        return 0.0, np.zeros_like(diff)
    return d, diff / d


@dataclass
class LstmWeights:
    """Stacked gate weights in the order input, forget, output, candidate.

    ``W`` is ``(4H, I)``, ``U`` is ``(4H, H)``, ``b`` is ``(4H,)``.  With
    peepholes, ``P`` is ``(3, H)`` holding the diagonal cell-to-gate weights of
    the input, forget and output gates.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    P: np.ndarray = None

    def __post_init__(self):
        h4, i = self.W.shape
        if h4 % 4:
            raise ValueError("W must have 4*hidden_dim rows")
        h = h4 // 4
        if self.U.shape != (h4, h) or self.b.shape != (h4,):
            raise ValueError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")
        if self.P is not None and self.P.shape != (3, h):
            raise ValueError(f"peephole weights must be (3, {h}), got {self.P.shape}")

    @property
    def hidden_dim(self):
        return self.U.shape[1]

    @property
    def input_dim(self):
        return self.W.shape[1]

    @property
    def peepholes(self):
        return self.P is not None

    def gate(self, name):
        """Return ``(W_g, U_g, b_g)`` for gate ``name`` in {i, f, o, g}."""
        k = "ifog".index(name)
        h = self.hidden_dim
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]

    @classmethod
    def zeros(cls, input_dim, hidden_dim, peepholes=False):
        h4 = 4 * hidden_dim
        return cls(
            np.zeros((h4, input_dim)),
            np.zeros((h4, hidden_dim)),
            np.zeros(h4),
            np.zeros((3, hidden_dim)) if peepholes else None,
        )


@dataclass
class LstmCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    squeeze: bool = field(default=False)


def lstm_cell_forward(x, h_prev, c_prev, w):
    """One LSTM step; returns ``(h, c, cache)``.

    Inputs may be single vectors or row batches; outputs follow the input rank.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2, h2, c2 = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, h_prev, c_prev))
    H = w.hidden_dim
    if x2.shape[1] != w.input_dim or h2.shape[1] != H or c2.shape[1] != H:
        raise ValueError(
            f"LSTM shape mismatch: x{x2.shape} h{h2.shape} c{c2.shape} "
            f"for input_dim={w.input_dim} hidden_dim={H}"
        )
    z = x2 @ w.W.T + h2 @ w.U.T + w.b
    zi, zf, zo, zg = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
    if w.P is not None:
        zi = zi + w.P[0] * c2
        zf = zf + w.P[1] * c2
    i = sigmoid(zi)
    f = sigmoid(zf)
    g = np.tanh(zg)
    c = f * c2 + i * g
    if w.P is not None:
        zo = zo + w.P[2] * c
    o = sigmoid(zo)
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = LstmCache(x2, h2, c2, i, f, o, g, c, tanh_c, squeeze)
    if squeeze:
        return h[0], c[0], cache
    return h, c, cache


def lstm_cell_backward(dh, dc, cache, w):
    """Backpropagate through one LSTM step.

    ``dh`` and ``dc`` are the upstream gradients on the step's outputs.  Returns
    a dict with ``x``, ``h_prev``, ``c_prev``, ``W``, ``U``, ``b`` (and ``P``
    with peepholes).
    """
    if cache is None:
        raise ValueError("lstm_cell_backward needs the cache of a matching forward call")
    dh = np.atleast_2d(np.asarray(dh, dtype=np.float64))
    dc = np.atleast_2d(np.asarray(dc, dtype=np.float64))
    if dh.shape != cache.c.shape or dc.shape != cache.c.shape:
        raise ValueError(f"upstream gradient shape {dh.shape}/{dc.shape} does not match cache {cache.c.shape}")
    i, f, o, g = cache.i, cache.f, cache.o, cache.g
    tc = cache.tanh_c
    d_o = dh * tc
    dzo = d_o * o * (1.0 - o)
    dct = dc + dh * o * (1.0 - tc * tc)
    if w.P is not None:
        dct = dct + dzo * w.P[2]
    dzi = dct * g * i * (1.0 - i)
    dzf = dct * cache.c_prev * f * (1.0 - f)
    dzg = dct * i * (1.0 - g * g)
    dc_prev = dct * f
    if w.P is not None:
        dc_prev = dc_prev + dzi * w.P[0] + dzf * w.P[1]
    dz = np.concatenate([dzi, dzf, dzo, dzg], axis=1)
    grads = {
        "W": dz.T @ cache.x,
        "U": dz.T @ cache.h_prev,
        "b": dz.sum(axis=0),
        "x": dz @ w.W,
        "h_prev": dz @ w.U,
        "c_prev": dc_prev,
    }
    if w.P is not None:
        grads["P"] = np.stack([
            (dzi * cache.c_prev).sum(axis=0),
            (dzf * cache.c_prev).sum(axis=0),
            (dzo * cache.c).sum(axis=0),
        ])
    if cache.squeeze:
        for k in ("x", "h_prev", "c_prev"):
            grads[k] = grads[k][0]
    return grads


def grad_check(loss_fn, params, grads, fd_step=1e-5):
    """Compare analytic gradients against central finite differences.

    ``params`` are arrays perturbed in place (and restored); ``loss_fn()`` must
    read them.  Returns the max over all scalars of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    worst = 0.0
    for value, grad in zip(params, grads):
        if value.shape != np.shape(grad):
            raise ValueError(f"gradient shape {np.shape(grad)} does not match parameter {value.shape}")
        flat = value.reshape(-1)
        gflat = np.asarray(grad, dtype=np.float64).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_step
            up = loss_fn()
            flat[j] = orig - fd_step
            down = loss_fn()
            flat[j] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing entry {j}")
            numeric = (up - down) / (2.0 * fd_step)
            analytic = gflat[j]
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst
