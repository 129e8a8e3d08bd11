"""Representation adaptation network, anomaly detector and their trainers.

The RAN maps raw embeddings ``Z`` to ``Z' = g_phi(Z)``; the detector scores
``s = f_theta(Z')``. ``train_metagad`` alternates

    theta' = theta - alpha * grad_theta L_train(theta, phi)
    phi'   = phi   - beta  * d/dphi L_val(theta - alpha * grad_theta L_train, phi)

with the mixed second-order term of the outer gradient replaced by a
central difference of first-order gradients. ``train_finetuning`` and
``train_no_ran`` are the two ablations.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, NumericError
from .inject import LabelState
from .nn import (
    Activation,
    GradSet,
    ParamSet,
    init_mlp2,
    mlp2,
    mlp2_backward,
    sgd_step,
    weighted_bce_grad,
)

log = logging.getLogger(__name__)

RAN = "ran."
DET = "det."


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 2.0
    beta: float = 0.5
    epsilon: float = 0.01
    cost_weight: float = 1.0
    max_steps: int = 500
    patience: int = 30
    seed: int = 0
    h_ran: int = 64
    h_det: int = 64
    activation: str = "relu"
    bias_init: str = "prior"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("learning rates alpha and beta must be >= 0")
        if self.epsilon <= 0 or self.cost_weight <= 0:
            raise ConfigError("epsilon and cost_weight must be > 0")
        if self.max_steps < 0 or self.patience < 1:
            raise ConfigError("max_steps must be >= 0 and patience >= 1")
        Activation(self.activation)
        if self.bias_init not in ("prior", "zero"):
            raise ConfigError(f"bias_init must be 'prior' or 'zero', got {self.bias_init!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PUData:
    """Embeddings restricted to a node subset plus their PU labels."""

    z: np.ndarray
    labels: np.ndarray
    cost_weight: float = 1.0

    def __post_init__(self):
        if self.z.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"{self.z.shape[0]} embedding rows vs {self.labels.size} labels")

    @classmethod
    def from_nodes(cls, z, nodes, positives, cost_weight=1.0):
        z = np.asarray(z, dtype=np.float64)
        nodes = np.asarray(nodes, dtype=np.int64)
        return cls(z[nodes], np.isin(nodes, positives).astype(np.float64), cost_weight)


# ------------------------------------------------------------------- forward

def ran_forward(z, phi: ParamSet):
    return mlp2(z, phi, RAN, Activation.RELU)[1]


def detector_forward(z_adapted, theta: ParamSet, act=Activation.RELU):
    """Raw (pre-sigmoid) abnormality score per row."""
    return mlp2(z_adapted, theta, DET, act)[1][..., 0]


def score_nodes(z, theta, phi=None, act=Activation.RELU):
    z = np.asarray(z, dtype=np.float64)
    return detector_forward(z if phi is None else ran_forward(z, phi), theta, act)


def prior_logit(labels, cost_weight=1.0):
    """Constant score minimising the weighted loss on ``labels`` (0 if degenerate)."""
    p = float(np.mean(labels))
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(np.log(cost_weight * p / (1.0 - p)))


def init_params(d_emb, cfg: MetaConfig, rng=None, output_bias=0.0):
    """Random ``(theta, phi)``; RAN maps ``d_emb -> d_emb``.

    Weights are Glorot-uniform, biases zero except the detector's output
    bias, which is set to ``output_bias``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    phi = init_mlp2(rng, RAN, d_emb, cfg.h_ran, d_emb)
    theta = init_mlp2(rng, DET, d_emb, cfg.h_det, 1)
    theta = ParamSet({**theta, DET + "b2": np.array([output_bias])})
    return theta, phi


def objective(theta, phi, data: PUData, act=Activation.RELU, need_phi=True):
    """Weighted PU loss with gradients for theta and (optionally) phi.

    ``phi=None`` feeds the embeddings straight to the detector.
    """
    if phi is not None:
        _, zp, ran_cache = mlp2(data.z, phi, RAN, Activation.RELU)
    else:
        zp = data.z
    _, s, det_cache = mlp2(zp, theta, DET, act)
    loss, ds = weighted_bce_grad(s[:, 0], data.labels, data.cost_weight)
    need_dz = phi is not None and need_phi
    dzp, g_theta = mlp2_backward(ds[:, None], det_cache, need_input_grad=need_dz)
    g_phi = None
    if need_dz:
        _, g_phi = mlp2_backward(dzp, ran_cache, need_input_grad=False)
    return loss, g_theta, g_phi


def _model_objective(data, act):
    def f(theta, phi):
        return objective(theta, phi, data, act)
    return f


# ------------------------------------------------------------- bi-level steps

def inner_update(theta, phi, train_data, alpha, act=Activation.RELU, objective_fn=None):
    """One SGD step on theta against the training loss (phi fixed)."""
    f = objective_fn or _model_objective(train_data, act)
    loss, g_theta, _ = f(theta, phi)
    if not np.isfinite(loss):
        raise NumericError(f"training loss is {loss}")
    return sgd_step(theta, g_theta, alpha)


def finite_difference_step(epsilon, direction_norm):
    """Relative step ``epsilon / ||v||``; 1e-6 when that is not usable."""
    if direction_norm > 0:
        step = epsilon / direction_norm
        if np.isfinite(step):
            return step
    return 1e-6


def hypergradient(theta, phi, train_fn, val_fn, alpha, epsilon):
    """Approximate outer gradient for arbitrary objectives.

    ``train_fn``/``val_fn`` map ``(theta, phi)`` to ``(loss, g_theta, g_phi)``.
    Returns ``(GradSet over phi, info)``, where ``info`` holds the unrolled
    parameters, the validation loss there and the finite-difference step.
    """
    loss_tr, g_theta, _ = train_fn(theta, phi)
    theta_prime = sgd_step(theta, g_theta, alpha)
    loss_val, v, direct = val_fn(theta_prime, phi)
    if not (np.isfinite(loss_tr) and np.isfinite(loss_val)):
        raise NumericError(f"non-finite loss (train {loss_tr}, val {loss_val})")
    direct = GradSet(direct)
    eps_hat = finite_difference_step(epsilon, v.norm())
    _, _, g_plus = train_fn(theta.axpy(v, eps_hat), phi)
    _, _, g_minus = train_fn(theta.axpy(v, -eps_hat), phi)
    mixed = {k: (g_plus[k] - g_minus[k]) / (2 * eps_hat) for k in direct}
    out = GradSet({k: direct[k] - alpha * mixed[k] for k in direct})
    out.check_finite("hypergradient")
    info = {"theta_prime": theta_prime, "train_loss": loss_tr, "val_loss": loss_val,
            "eps_hat": eps_hat}
    return out, info


def meta_gradient(theta, phi, train_data, val_data, alpha, epsilon, act=Activation.RELU):
    """Finite-difference hypergradient of the validation loss w.r.t. phi."""
    g, _ = hypergradient(theta, phi, _model_objective(train_data, act),
                         _model_objective(val_data, act), alpha, epsilon)
    return g


def outer_update(phi, meta_grad, beta):
    return sgd_step(phi, meta_grad, beta)


# ------------------------------------------------------------------- trainers

@dataclass
class TrainResult:
    theta: ParamSet
    phi: ParamSet | None
    history: list = field(default_factory=list)  # (step, L_train, L_val)
    best_step: int | None = None
    mode: str = "meta"

    def scores(self, z, act=Activation.RELU):
        return score_nodes(z, self.theta, self.phi, act)


def pu_datasets(z, labels: LabelState, cost_weight):
    pos = labels.positives
    train = PUData.from_nodes(z, labels.split.train, pos, cost_weight)
    val = PUData.from_nodes(z, labels.split.val, pos, cost_weight)
    return train, val


class _EarlyStopper:
    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_step = None
        self.best_params = None
        self.bad = 0

    def update(self, step, val_loss, params):
        if val_loss < self.best:
            self.best, self.best_step, self.best_params, self.bad = val_loss, step, params, 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def _check(loss, step, what):
    if not np.isfinite(loss):
        raise DivergenceError(f"{what} loss became {loss}", step)


def _sgd(p, g, lr, step):
    try:
        return sgd_step(p, g, lr)
    except NumericError as exc:
        raise DivergenceError(f"training diverged: {exc}", step) from None


def _embedding_array(z):
    return np.asarray(getattr(z, "z", z), dtype=np.float64)


def _start(z, cfg, train, theta0, phi0):
    # starting at the prior log-odds skips the phase where every score is
    # pushed down, which would rank high-activation nodes last
    bias = prior_logit(train.labels, train.cost_weight) if cfg.bias_init == "prior" else 0.0
    theta, phi = init_params(z.shape[1], cfg, output_bias=bias)
    return (theta if theta0 is None else theta0), (phi if phi0 is None else phi0)


def train_metagad(z, labels: LabelState, cfg: MetaConfig = MetaConfig(), theta0=None,
                  phi0=None) -> TrainResult:
    """Bi-level meta-transfer training with early stopping on L_val.

    Each step updates theta on the training loss and phi with the
    finite-difference hypergradient of the validation loss. History rows
    are ``(step, L_train(theta, phi), L_val(theta', phi'))``; the returned
    parameters are those with the lowest recorded validation loss.
    """
    z = _embedding_array(z)
    act = Activation(cfg.activation)
    train, val = pu_datasets(z, labels, cfg.cost_weight)
    train_fn, val_fn = _model_objective(train, act), _model_objective(val, act)
    theta, phi = _start(z, cfg, train, theta0, phi0)
    result = TrainResult(theta, phi, mode="meta")
    stop = _EarlyStopper(cfg.patience)
    for step in range(cfg.max_steps):
        try:
            mg, info = hypergradient(theta, phi, train_fn, val_fn, cfg.alpha, cfg.epsilon)
        except NumericError as exc:
            raise DivergenceError(f"meta-transfer diverged: {exc}", step) from None
        theta = info["theta_prime"]
        phi = _sgd(phi, mg, cfg.beta, step)
        val_loss = val_fn(theta, phi)[0]
        _check(val_loss, step, "validation")
        result.history.append((step, info["train_loss"], val_loss))
        if stop.update(step, val_loss, (theta, phi)):
            break
    if stop.best_params is not None:
        result.theta, result.phi = stop.best_params
        result.best_step = stop.best_step
    return result


def train_finetuning(z, labels: LabelState, cfg: MetaConfig = MetaConfig(), theta0=None,
                     phi0=None) -> TrainResult:
    """Joint gradient descent on L_train over (theta, phi).

    The validation loss only picks the returned step; it never enters a
    gradient. theta moves with rate ``alpha`` and phi with ``beta``.
    """
    z = _embedding_array(z)
    act = Activation(cfg.activation)
    train, val = pu_datasets(z, labels, cfg.cost_weight)
    theta, phi = _start(z, cfg, train, theta0, phi0)
    result = TrainResult(theta, phi, mode="finetune")
    stop = _EarlyStopper(cfg.patience)
    for step in range(cfg.max_steps):
        loss, g_theta, g_phi = objective(theta, phi, train, act)
        _check(loss, step, "training")
        theta = _sgd(theta, g_theta, cfg.alpha, step)
        phi = _sgd(phi, g_phi, cfg.beta, step)
        val_loss = objective(theta, phi, val, act, need_phi=False)[0]
        _check(val_loss, step, "validation")
        result.history.append((step, loss, val_loss))
        if stop.update(step, val_loss, (theta, phi)):
            break
    if stop.best_params is not None:
        result.theta, result.phi = stop.best_params
        result.best_step = stop.best_step
    return result


def train_no_ran(z, labels: LabelState, cfg: MetaConfig = MetaConfig(),
                 theta0=None) -> TrainResult:
    """Detector trained directly on the raw embeddings (no adaptation)."""
    z = _embedding_array(z)
    act = Activation(cfg.activation)
    train, val = pu_datasets(z, labels, cfg.cost_weight)
    theta, _ = _start(z, cfg, train, theta0, None)
    result = TrainResult(theta, None, mode="no_ran")
    stop = _EarlyStopper(cfg.patience)
    for step in range(cfg.max_steps):
        loss, g_theta, _ = objective(theta, None, train, act)
        _check(loss, step, "training")
        theta = _sgd(theta, g_theta, cfg.alpha, step)
        val_loss = objective(theta, None, val, act)[0]
        _check(val_loss, step, "validation")
        result.history.append((step, loss, val_loss))
        if stop.update(step, val_loss, theta):
            break
    if stop.best_params is not None:
        result.theta = stop.best_params
        result.best_step = stop.best_step
    return result


TRAINERS = {"meta": train_metagad, "finetune": train_finetuning, "no_ran": train_no_ran}


def train(mode, z, labels, cfg=MetaConfig()):
    try:
        fn = TRAINERS[mode]
    except KeyError:
        raise ConfigError(f"unknown training mode {mode!r}; expected one of {sorted(TRAINERS)}")
    return fn(z, labels, cfg)


def identity_ran(d):
    """RAN parameters computing ``relu(z) - relu(-z) = z`` exactly."""
    eye = np.eye(d)
    return ParamSet({RAN + "W1": np.hstack([eye, -eye]), RAN + "b1": np.zeros(2 * d),
                     RAN + "W2": np.vstack([eye, -eye]), RAN + "b2": np.zeros(d)})


def save_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_train", "L_val"])
        for step, lt, lv in history:
            w.writerow([step, repr(float(lt)), repr(float(lv))])


def load_history(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["L_train"]), float(r["L_val"])) for r in rows]
