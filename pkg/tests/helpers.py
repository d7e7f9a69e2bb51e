"""Independent oracles shared by the test modules.

Apart from building test networks, nothing here calls into the graph engine: forward passes are written out
with plain numpy and gradients come from central finite differences.
"""

import numpy as np

from otcycle import nn

SLOPE = 0.2


def leaky(h):
    return np.where(h >= 0, h, SLOPE * h)


def straight_line_mlp(weights, biases, h):
    """``h -> W_k(... leaky(W_1 h + b_1) ...) + b_k`` written out directly."""
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W.T + b
        if i < last:
            h = leaky(h)
    return h


def net_arrays(net):
    return [l.weight for l in net.layers], [l.bias for l in net.layers]


def central_diff(f, params: dict, step=1e-5) -> dict:
    """Central differences of scalar ``f(params)`` for every entry of every array."""
    out = {}
    for k, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = f(params)
            flat[i] = old - step
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        out[k] = g
    return out


def rel_err(a: dict, b: dict) -> float:
    num = np.sqrt(sum(np.sum((a[k] - b[k]) ** 2) for k in a))
    den = max(np.sqrt(sum(np.sum(a[k] ** 2) for k in a)), np.sqrt(sum(np.sum(b[k] ** 2) for k in b)), 1e-30)
    return float(num / den)


def min_preactivation_gap(weights, biases, h):
    """Smallest |pre-activation| feeding a leaky unit; guards finite differences at kinks."""
    gap = np.inf
    for W, b in zip(weights[:-1], biases[:-1]):
        pre = h @ W.T + b
        gap = min(gap, np.abs(pre).min())
        h = leaky(pre)
    return gap


def identity_generator(d):
    """``G(x, z) = x`` through the usual three-layer wiring.

    The hidden layers carry ``x`` and ``-x``; after two leaky layers
    ``a(x) - a(-x) = 1.04 x`` for slope 0.2, which the output layer undoes.
    """
    eye = np.eye(d)
    W1 = np.vstack([np.hstack([eye, np.zeros((d, d))]), np.hstack([-eye, np.zeros((d, d))])])
    W2 = np.eye(2 * d)
    W3 = np.hstack([eye, -eye]) / 1.04
    layers = [nn.LinearLayer(W1, np.zeros(2 * d)), nn.LinearLayer(W2, np.zeros(2 * d)),
              nn.LinearLayer(W3, np.zeros(d))]
    return nn.GeneratorNet(layers, d_in=d, d_z=d)
