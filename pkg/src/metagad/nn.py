"""Small float64 neural-network kernel with hand-written backward passes.

Only the layers the model needs live here: GCN propagation, two-layer
perceptrons, the cost-weighted sigmoid cross-entropy, plus SGD/Adam and a
JSON parameter container. Every ``*_backward`` takes the cache returned by
its forward twin.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, DomainError, MissingGradientError, NumericError

CHECKPOINT_FORMAT = "metagad-paramset"
CHECKPOINT_VERSION = 1


class ParamSet(Mapping):
    """Immutable, ordered mapping ``name -> float64 array``.

    Arrays are copied on construction and marked read-only, so updates
    always build a new set.
    """

    def __init__(self, entries=None, **kwargs):
        data = {}
        for name, value in {**dict(entries or {}), **kwargs}.items():
            arr = np.array(value, dtype=np.float64)
            arr.flags.writeable = False
            data[str(name)] = arr
        self._data = data

    def __getitem__(self, name):
        return self._data[name]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._data.items())
        return f"{type(self).__name__}({shapes})"

    @property
    def shapes(self):
        return {k: v.shape for k, v in self._data.items()}

    def check_congruent(self, other):
        if list(self) != list(other) or any(self[k].shape != other[k].shape for k in self):
            raise DimensionError(f"parameter sets differ: {self.shapes} vs {dict(other.shapes)}")

    def check_finite(self, what="parameters"):
        for k, v in self._data.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite {what} in {k!r}")

    def axpy(self, other, scale):
        """Return ``self + scale * other`` (same class as ``self``)."""
        self.check_congruent(other)
        return type(self)({k: self[k] + scale * other[k] for k in self})

    def scale(self, factor):
        return type(self)({k: factor * v for k, v in self._data.items()})

    def dot(self, other):
        self.check_congruent(other)
        return float(sum(np.sum(self[k] * other[k]) for k in self))

    def norm(self):
        return float(np.sqrt(sum(np.sum(v * v) for v in self._data.values())))

    def zeros_like(self):
        return type(self)({k: np.zeros_like(v) for k, v in self._data.items()})

    def select(self, prefix):
        return type(self)({k: v for k, v in self._data.items() if k.startswith(prefix)})

    def merge(self, other):
        clash = set(self) & set(other)
        if clash:
            raise DimensionError(f"duplicate parameter names: {sorted(clash)}")
        return type(self)({**self._data, **dict(other)})

    def flat(self):
        if not self._data:
            return np.empty(0)
        return np.concatenate([v.ravel() for v in self._data.values()])

    def unflat(self, vector):
        out, pos = {}, 0
        for k, v in self._data.items():
            out[k] = np.asarray(vector[pos:pos + v.size]).reshape(v.shape)
            pos += v.size
        if pos != len(vector):
            raise DimensionError(f"vector of length {len(vector)} does not match {pos} entries")
        return type(self)(out)

    def equal(self, other):
        return list(self) == list(other) and all(np.array_equal(self[k], other[k]) for k in self)


class GradSet(ParamSet):
    """Partial derivatives of a scalar loss, keyed like its ParamSet."""


def require_grads(params, grads):
    missing = [k for k in params if k not in grads]
    if missing:
        raise MissingGradientError(f"no gradient recorded for {missing}")
    return GradSet({k: grads[k] for k in params})


class Activation(enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def __call__(self, x):
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        if self is Activation.SIGMOID:
            return sigmoid(x)
        return x

    def backward(self, dout, pre, out):
        if self is Activation.RELU:
            return dout * (pre > 0)
        if self is Activation.SIGMOID:
            return dout * out * (1.0 - out)
        return dout


def as_activation(act):
    return act if isinstance(act, Activation) else Activation(act)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _propagate(adj, h):
    if hasattr(adj, "matrix"):
        adj = adj.matrix
    if adj.shape[1] != h.shape[0]:
        raise DimensionError(f"adjacency {adj.shape} cannot propagate {h.shape}")
    out = adj @ h
    return np.asarray(out.toarray() if sp.issparse(out) else out)


# --------------------------------------------------------------------- layers

def gcn_layer(h_prev, norm_adj, w, act=Activation.IDENTITY):
    """``act(A_norm @ h_prev @ w)`` with the cache needed for backward."""
    act = as_activation(act)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if h_prev.ndim != 2 or w.ndim != 2 or h_prev.shape[1] != w.shape[0]:
        raise DimensionError(f"cannot multiply features {h_prev.shape} by weights {w.shape}")
    ah = _propagate(norm_adj, h_prev)
    pre = ah @ w
    out = act(pre)
    return out, (norm_adj, ah, w, pre, out, act)


def gcn_layer_forward(h_prev, norm_adj, w, act=Activation.IDENTITY):
    return gcn_layer(h_prev, norm_adj, w, act)[0]


def gcn_layer_backward(dout, cache, need_input_grad=True):
    """Return ``(d h_prev, d w)``; the adjacency is symmetric."""
    norm_adj, ah, w, pre, out, act = cache
    dpre = act.backward(dout, pre, out)
    dw = ah.T @ dpre
    dh = _propagate(norm_adj, dpre @ w.T) if need_input_grad else None
    return dh, dw


def linear(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[-1]:
        raise DimensionError(f"linear layer shapes x{x.shape} W{w.shape} b{b.shape}")
    return x @ w + b


def mlp2(z, params, prefix="", act=Activation.RELU):
    """Two-layer perceptron ``W2 act(W1 z + b1) + b2`` applied row-wise.

    Weight matrices are stored input-major (``W1`` is ``d_in x hidden``), so
    a batch of rows ``Z`` maps to ``act(Z @ W1 + b1) @ W2 + b2``. The output
    layer has no activation.
    """
    act = as_activation(act)
    w1, b1 = params[prefix + "W1"], params[prefix + "b1"]
    w2, b2 = params[prefix + "W2"], params[prefix + "b2"]
    pre = linear(z, w1, b1)
    hidden = act(pre)
    out = linear(hidden, w2, b2)
    return hidden, out, (np.asarray(z, dtype=np.float64), pre, hidden, w1, w2, act, prefix)


def mlp2_forward(z, params, prefix="", act=Activation.RELU):
    hidden, out, _ = mlp2(z, params, prefix, act)
    return hidden, out


def mlp2_backward(dout, cache, need_input_grad=True):
    """Return ``(d z, GradSet)`` for a batch-shaped ``dout``."""
    z, pre, hidden, w1, w2, act, prefix = cache
    z2 = np.atleast_2d(z)
    dout2 = np.atleast_2d(dout)
    hidden2 = np.atleast_2d(hidden)
    dpre = act.backward(dout2 @ w2.T, np.atleast_2d(pre), hidden2)
    grads = GradSet({
        prefix + "W1": z2.T @ dpre,
        prefix + "b1": dpre.sum(axis=0),
        prefix + "W2": hidden2.T @ dout2,
        prefix + "b2": dout2.sum(axis=0),
    })
    dz = (dpre @ w1.T).reshape(np.shape(z)) if need_input_grad else None
    return dz, grads


# --------------------------------------------------------------------- losses

def weighted_bce(scores, labels, w=1.0):
    """Cost-weighted sigmoid cross-entropy on raw scores.

    ``-(1/n) sum_i [w y_i log s(x_i) + (1 - y_i) log(1 - s(x_i))]``,
    evaluated via softplus so large scores do not overflow.
    """
    return weighted_bce_grad(scores, labels, w)[0]


def weighted_bce_grad(scores, labels, w=1.0):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.size == 0:
        raise DomainError("cross-entropy of an empty batch is undefined")
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores vs {y.size} labels")
    if np.any((y != 0) & (y != 1)):
        raise DomainError("labels must be 0 or 1")
    n = s.size
    loss = (w * np.sum(y * softplus(-s)) + np.sum((1 - y) * softplus(s))) / n
    ds = (-w * y * sigmoid(-s) + (1 - y) * sigmoid(s)) / n
    return float(loss), ds


# ----------------------------------------------------------------- optimisers

def sgd_step(p: ParamSet, g: ParamSet, lr) -> ParamSet:
    """Functional SGD update ``p - lr * g``."""
    if lr < 0:
        raise DomainError(f"learning rate must be >= 0, got {lr}")
    p.check_congruent(g)
    g.check_finite("gradient")
    return ParamSet({k: p[k] - lr * g[k] for k in p})


class Adam:
    """Adam with bias correction; returns new ParamSets, keeps its moments."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, p: ParamSet, g: ParamSet) -> ParamSet:
        p.check_congruent(g)
        g.check_finite("gradient")
        if self.m is None:
            self.m = {k: np.zeros_like(v) for k, v in p.items()}
            self.v = {k: np.zeros_like(v) for k, v in p.items()}
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        out = {}
        for k in p:
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g[k] ** 2
            out[k] = p[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return ParamSet(out)


# ---------------------------------------------------------------------- init

def glorot(rng, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_mlp2(rng, prefix, d_in, hidden, d_out):
    return ParamSet({
        prefix + "W1": glorot(rng, d_in, hidden),
        prefix + "b1": np.zeros(hidden),
        prefix + "W2": glorot(rng, hidden, d_out),
        prefix + "b2": np.zeros(d_out),
    })


# ---------------------------------------------------------------- checkpoint

def save_params(path, params: ParamSet, metadata=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": metadata or {},
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path):
    """Return ``(ParamSet, metadata)`` from a checkpoint written by save_params."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = ParamSet({k: np.array(e["data"], dtype=np.float64).reshape(e["shape"])
                       for k, e in doc["params"].items()})
    params.check_finite()
    return params, doc.get("metadata", {})
