"""Self-supervised GCN autoencoder that produces the raw node embeddings.

A stack of GCN layers encodes the graph into ``Z``. Two decoders read it
back: a GCN layer reconstructing the attributes, and a ReLU GCN layer
``H = relu(A_norm Z W_s)`` followed by ``sigmoid(H H^T)`` reconstructing the
structure. The loss is

    alpha * ||A_hat - sigmoid(H H^T)||_F^2 / n + (1 - alpha) * ||X - X_rec||_F^2 / n

where ``A_hat`` is the adjacency with self-loops. Training is full batch.
Setting ``structure_layer=False`` takes the inner product of ``Z`` itself.

By default the returned embedding is standardized per column over all
nodes. This uses no labels; without it the embedding entries are small
enough that the downstream learning rates barely move the detector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FeatureValidationError,
    NumericError,
)
from .graph import AttributedGraph, NormalizedAdjacency, normalize_adjacency
from .nn import (
    Activation,
    Adam,
    GradSet,
    ParamSet,
    gcn_layer,
    gcn_layer_backward,
    glorot,
    sgd_step,
    sigmoid,
)


@dataclass(frozen=True)
class PretrainConfig:
    hidden_dims: tuple = (128, 64)
    epochs: int = 100
    lr: float = 5e-3
    alpha_recon: float = 0.8
    seed: int = 0
    optimizer: str = "adam"
    embedding_activation: str = "relu"
    structure_layer: bool = True
    standardize: bool = True  # zero-mean, unit-variance embedding columns

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigError("hidden_dims must be a non-empty list of positive sizes")
        if not 0.0 <= self.alpha_recon <= 1.0:
            raise ConfigError(f"alpha_recon must lie in [0, 1], got {self.alpha_recon}")
        if self.epochs < 0 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0 and lr > 0")
        Activation(self.embedding_activation)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @property
    def layers(self):
        return len(self.hidden_dims)

    @property
    def embedding_dim(self):
        return self.hidden_dims[-1]


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    z: np.ndarray
    source: str = "pretrained"
    loss_trace: tuple = field(default=())

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        if z.ndim != 2:
            raise DimensionError(f"embedding must be 2-D, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise FeatureValidationError("embedding contains non-finite entries")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    @property
    def shape(self):
        return self.z.shape

    def __array__(self, dtype=None, copy=None):
        return self.z if dtype is None else self.z.astype(dtype)


def init_encoder(d_in, cfg: PretrainConfig, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dims = (d_in,) + cfg.hidden_dims
    params = {f"enc{i}": glorot(rng, dims[i], dims[i + 1]) for i in range(cfg.layers)}
    params["dec_attr"] = glorot(rng, cfg.embedding_dim, d_in)
    if cfg.structure_layer:
        params["dec_struct"] = glorot(rng, cfg.embedding_dim, cfg.embedding_dim)
    return ParamSet(params)


def encode(x, adj, params, layers, out_act=Activation.RELU):
    """Hidden GCN layers use ReLU; the embedding layer uses ``out_act``."""
    h, caches = x, []
    for i in range(layers):
        act = out_act if i == layers - 1 else Activation.RELU
        h, c = gcn_layer(h, adj, params[f"enc{i}"], act)
        caches.append(c)
    return h, caches


def reconstruction_loss(params, x, adj: NormalizedAdjacency, target_adj, alpha, layers,
                        out_act=Activation.RELU):
    """Loss and gradient of the weighted structure/attribute reconstruction.

    Uses the structure decoder layer iff ``params`` has a ``dec_struct`` entry.
    """
    n = x.shape[0]
    z, caches = encode(x, adj, params, layers, out_act)
    x_rec, dec_cache = gcn_layer(z, adj, params["dec_attr"], Activation.IDENTITY)
    if "dec_struct" in params:
        h, struct_cache = gcn_layer(z, adj, params["dec_struct"], Activation.RELU)
    else:
        h = z
    a_rec = sigmoid(h @ h.T)
    r_struct = a_rec - target_adj
    r_attr = x_rec - x
    loss = (alpha * np.sum(r_struct ** 2) + (1 - alpha) * np.sum(r_attr ** 2)) / n

    grads = {}
    d_xrec = 2 * (1 - alpha) * r_attr / n
    dz, grads["dec_attr"] = gcn_layer_backward(d_xrec, dec_cache)
    ds = 2 * alpha * r_struct * a_rec * (1 - a_rec) / n
    dh = (ds + ds.T) @ h
    if "dec_struct" in params:
        dh, grads["dec_struct"] = gcn_layer_backward(dh, struct_cache)
    dz = dz + dh
    for i in reversed(range(layers)):
        dz, grads[f"enc{i}"] = gcn_layer_backward(dz, caches[i], need_input_grad=i > 0)
    return float(loss), GradSet({k: grads[k] for k in params})


def standardize_columns(z):
    """Zero mean and unit variance per column; constant columns become 0."""
    z = np.asarray(z, dtype=np.float64)
    sd = z.std(axis=0)
    return (z - z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _structure_target(g: AttributedGraph):
    a = g.adjacency().toarray()
    np.fill_diagonal(a, 1.0)
    return a


def pretrain_encoder(g: AttributedGraph, adj: NormalizedAdjacency | None = None,
                     cfg: PretrainConfig = PretrainConfig()) -> EmbeddingMatrix:
    """Train the autoencoder and return the final encoder output ``Z``.

    ``loss_trace[e]`` is the loss before update ``e``; the last entry is the
    loss of the returned embedding.
    """
    adj = normalize_adjacency(g) if adj is None else adj
    x = g.features
    target = _structure_target(g)
    params = init_encoder(g.d, cfg)
    act = Activation(cfg.embedding_activation)
    opt = Adam(cfg.lr) if cfg.optimizer == "adam" else None
    trace = []
    for epoch in range(cfg.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = reconstruction_loss(params, x, adj, target, cfg.alpha_recon,
                                              cfg.layers, act)
        if not np.isfinite(loss):
            raise DivergenceError(f"pretraining loss became {loss}; lower the learning rate",
                                  epoch)
        trace.append(loss)
        try:
            params = opt.step(params, grads) if opt else sgd_step(params, grads, cfg.lr)
        except NumericError as exc:
            raise DivergenceError(f"pretraining diverged ({exc}); lower the learning rate",
                                  epoch) from None
    z, _ = encode(x, adj, params, cfg.layers, act)
    if cfg.epochs:
        final = reconstruction_loss(params, x, adj, target, cfg.alpha_recon, cfg.layers,
                                    act)[0]
        if not np.isfinite(final):
            raise DivergenceError(f"pretraining loss became {final}; lower the learning rate",
                                  cfg.epochs)
        trace.append(final)
    if cfg.standardize:
        z = standardize_columns(z)
    return EmbeddingMatrix(z, "pretrained", tuple(trace))


# ------------------------------------------------------------------------ I/O

def save_embedding(path, emb):
    z = np.asarray(emb)
    np.savetxt(path, z, delimiter=",", fmt="%.17g")


def load_embedding(path, expected_n=None, expected_dim=None) -> EmbeddingMatrix:
    try:
        z = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise FeatureValidationError(f"cannot parse embedding: {exc}", path) from None
    if expected_n is not None and z.shape[0] != expected_n:
        raise DimensionError(f"{path}: expected {expected_n} rows, found {z.shape[0]}")
    if expected_dim is not None and z.shape[1] != expected_dim:
        raise DimensionError(f"{path}: expected {expected_dim} columns, found {z.shape[1]}")
    if not np.all(np.isfinite(z)):
        raise FeatureValidationError("embedding contains non-finite entries", path)
    return EmbeddingMatrix(z, "loaded")


def save_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(trace):
            w.writerow([e, repr(float(v))])
