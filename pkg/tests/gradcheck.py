"""Random gradient-check instances shared by the unit and acceptance suites.

Each ``check_*`` draws one small instance from ``rng`` and returns the
worst relative error between the analytic gradient and a central
difference over every differentiated input.
"""

import numpy as np

from metagad.graph import normalize_adjacency
from metagad.meta import DET, RAN, objective, PUData
from metagad.nn import Activation, ParamSet, gcn_layer, gcn_layer_backward, init_mlp2, mlp2
from metagad.nn import mlp2_backward, weighted_bce_grad
from metagad.pretrain import PretrainConfig, init_encoder, reconstruction_loss, _structure_target
from metagad.synthetic import random_graph

from oracles import numeric_grad, rel_error

ACTS = (Activation.RELU, Activation.SIGMOID, Activation.IDENTITY)


def _params_error(f, params, grads):
    """``f`` maps a ParamSet to a scalar loss."""
    worst = 0.0
    for k in params:
        def fk(v, k=k):
            return f(ParamSet({**params, k: v}))
        worst = max(worst, rel_error(grads[k], numeric_grad(fk, params[k])))
    return worst


def check_gcn(rng):
    n, d_in, d_out = rng.integers(2, 9), rng.integers(1, 5), rng.integers(1, 5)
    g = random_graph(int(n), 1, p=0.4, seed=int(rng.integers(1 << 30)))
    adj = normalize_adjacency(g)
    act = ACTS[rng.integers(3)]
    h = rng.normal(size=(n, d_in))
    w = rng.normal(size=(d_in, d_out))
    probe = rng.normal(size=(n, d_out))
    out, cache = gcn_layer(h, adj, w, act)
    dh, dw = gcn_layer_backward(probe, cache)
    e1 = rel_error(dh, numeric_grad(lambda v: np.sum(probe * gcn_layer(v, adj, w, act)[0]), h))
    e2 = rel_error(dw, numeric_grad(lambda v: np.sum(probe * gcn_layer(h, adj, v, act)[0]), w))
    return max(e1, e2)


def _jitter(rng, params):
    # zero biases put ReLU inputs exactly on the kink for dead rows
    return ParamSet({k: v + 0.1 * rng.normal(size=v.shape) for k, v in params.items()})


def _check_mlp(rng, prefix, d_out_same):
    b, d, hid = rng.integers(1, 7), rng.integers(1, 6), rng.integers(1, 6)
    d_out = d if d_out_same else 1
    params = _jitter(rng, init_mlp2(rng, prefix, int(d), int(hid), int(d_out)))
    act = Activation.RELU if prefix == RAN else ACTS[rng.integers(3)]
    z = rng.normal(size=(b, d))
    probe = rng.normal(size=(b, d_out))
    _, out, cache = mlp2(z, params, prefix, act)
    dz, grads = mlp2_backward(probe, cache)

    def loss(p, zz=z):
        return np.sum(probe * mlp2(zz, p, prefix, act)[1])

    e = _params_error(loss, params, grads)
    return max(e, rel_error(dz, numeric_grad(lambda v: loss(params, v), z)))


def check_ran(rng):
    return _check_mlp(rng, RAN, True)


def check_detector(rng):
    return _check_mlp(rng, DET, False)


def check_bce(rng):
    n = int(rng.integers(1, 30))
    s = rng.normal(scale=3.0, size=n)
    y = (rng.random(n) < 0.3).astype(float)
    w = float(rng.uniform(0.1, 10.0))
    _, ds = weighted_bce_grad(s, y, w)
    return rel_error(ds, numeric_grad(lambda v: weighted_bce_grad(v, y, w)[0], s))


def check_reconstruction(rng):
    n, d = int(rng.integers(3, 9)), int(rng.integers(2, 6))
    g = random_graph(n, d, p=0.4, seed=int(rng.integers(1 << 30)))
    adj = normalize_adjacency(g)
    dims = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    struct = bool(rng.integers(2))
    act = Activation.RELU if rng.integers(2) else Activation.IDENTITY
    cfg = PretrainConfig(hidden_dims=dims, structure_layer=struct, seed=int(rng.integers(1000)))
    params = init_encoder(d, cfg, rng)
    alpha = float(rng.uniform(0, 1))
    target = _structure_target(g)
    _, grads = reconstruction_loss(params, g.features, adj, target, alpha, 2, act)
    return _params_error(
        lambda p: reconstruction_loss(p, g.features, adj, target, alpha, 2, act)[0],
        params, grads)


def check_objective(rng):
    """Detector on top of the RAN under the PU loss, both parameter sets."""
    n, d = int(rng.integers(2, 10)), int(rng.integers(1, 5))
    z = rng.normal(size=(n, d))
    y = np.zeros(n)
    y[rng.integers(n)] = 1.0
    data = PUData(z, y, float(rng.uniform(0.5, 5)))
    phi = _jitter(rng, init_mlp2(rng, RAN, d, int(rng.integers(1, 5)), d))
    theta = _jitter(rng, init_mlp2(rng, DET, d, int(rng.integers(1, 5)), 1))
    _, gt, gp = objective(theta, phi, data)
    e1 = _params_error(lambda p: objective(p, phi, data)[0], theta, gt)
    e2 = _params_error(lambda p: objective(theta, p, data)[0], phi, gp)
    return max(e1, e2)


CHECKS = {
    "gcn_layer": check_gcn,
    "ran": check_ran,
    "detector": check_detector,
    "weighted_bce": check_bce,
    "reconstruction": check_reconstruction,
    "pu_objective": check_objective,
}
