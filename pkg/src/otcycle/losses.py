"""Transport cost, WGAN terms, gradient penalty and cycle-consistency as graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .nn import CriticNet, GeneratorNet, critic_graph, generator_graph

# A cost maps two (m, d) batch nodes to an (m,) node of per-pair costs.
CostFn = Callable[[ad.Node, ad.Node], ad.Node]


def _squared_euclidean(x: ad.Node, y: ad.Node) -> ad.Node:
    diff = ad.sub(x, y)
    return ad.reshape(ad.matmul(ad.square(diff), ad.const(np.ones((x.shape[1], 1)))), (x.shape[0],))


def _euclidean(x: ad.Node, y: ad.Node) -> ad.Node:
    return ad.l2_norm_rows(ad.sub(x, y))


COSTS: dict[str, CostFn] = {
    "squared_euclidean": _squared_euclidean,
    "euclidean": _euclidean,
}

# user-registered pairwise forms for cost matrices
PAIRWISE: dict[str, Callable] = {}


def register_cost(name: str, graph_fn: CostFn, pairwise_fn=None):
    """Add a user cost.  ``graph_fn`` must return a nonnegative (m,) node."""
    COSTS[name] = graph_fn
    if pairwise_fn is not None:
        PAIRWISE[name] = pairwise_fn


def get_cost(name: str) -> CostFn:
    try:
        return COSTS[name]
    except KeyError:
        raise ValueError(f"unknown cost {name!r}; known: {sorted(COSTS)}") from None


def cost_matrix(name: str, X, Y) -> np.ndarray:
    """Pairwise ``C[i, j] = c(X[i], Y[j])`` computed exactly (no expansion tricks)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = X[:, None, :] - Y[None, :, :]
    if name == "squared_euclidean":
        return (diff * diff).sum(-1)
    if name == "euclidean":
        return np.sqrt((diff * diff).sum(-1))
    if name in PAIRWISE:
        return PAIRWISE[name](X, Y)
    raise ValueError(f"no pairwise form for cost {name!r}")


def paired_cost(name: str, X, Y) -> np.ndarray:
    """Row-wise ``c(X[i], Y[i])``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"paired_cost: shapes differ {X.shape} vs {Y.shape}")
    diff = X - Y
    if name == "squared_euclidean":
        return (diff * diff).sum(-1)
    if name == "euclidean":
        return np.sqrt((diff * diff).sum(-1))
    if name in PAIRWISE:
        return np.array([PAIRWISE[name](X[i : i + 1], Y[i : i + 1])[0, 0] for i in range(len(X))])
    raise ValueError(f"no pairwise form for cost {name!r}")


@dataclass
class LossWeights:
    gan_xy: float = 1.0
    gan_yx: float = 1.0
    gp_xy: float = 0.1
    gp_yx: float = 0.1
    cycle_mu: float = 1.0
    cycle_nu: float = 1.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")

    def for_mode(self, mode: str) -> "LossWeights":
        """Zero the cycle weights a mode does not use."""
        if mode == "kantorovich":
            return LossWeights(self.gan_xy, 0.0, self.gp_xy, 0.0, 0.0, 0.0)
        if mode == "monge":
            return LossWeights(self.gan_xy, self.gan_yx, self.gp_xy, self.gp_yx, 0.0, self.cycle_nu)
        if mode == "bijection":
            return LossWeights(**vars(self))
        raise ValueError(f"unknown mode {mode!r}")


def _check_pair(kind, a: ad.Node, b: ad.Node):
    if a.shape != b.shape:
        raise ValueError(f"{kind}: batch shapes differ {a.shape} vs {b.shape}")


def transport_cost(cost: str | CostFn, x: ad.Node, y: ad.Node) -> ad.Node:
    _check_pair("transport_cost", x, y)
    fn = get_cost(cost) if isinstance(cost, str) else cost
    return ad.mean(fn(x, y))


def wgan_terms(D: CriticNet, prefix: str, real: ad.Node, fake: ad.Node, nodes=None):
    """``(critic_term, generator_term)``; the critic minimises the first.

    Real and fake rows go through the critic as one stacked batch.
    """
    if len(real.shape) != 2 or real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"wgan_terms: widths differ {real.shape} vs {fake.shape}")
    n_fake, n_real = fake.shape[0], real.shape[0]
    scores = critic_graph(D, prefix, ad.concat_rows([fake, real]), nodes)
    signs = np.concatenate([np.full(n_fake, 1.0 / n_fake), np.full(n_real, -1.0 / n_real)])
    critic_term = ad.sum(ad.mul(scores, ad.const(signs.reshape(-1, 1))))
    generator_term = ad.scale(ad.mean(ad.slice_rows(scores, 0, n_fake)), -1.0)
    return critic_term, generator_term


def generator_term(D: CriticNet, prefix: str, fake: ad.Node, nodes=None) -> ad.Node:
    """``-mean D(fake)`` without evaluating the critic on real samples."""
    return ad.scale(ad.mean(critic_graph(D, prefix, fake, nodes)), -1.0)


def interpolate(real: ad.Node, fake: ad.Node, eps) -> ad.Node:
    """Rows ``eps_i * real_i + (1 - eps_i) * fake_i``; ``eps`` is an array or an (m, 1) node."""
    if isinstance(eps, ad.Node):
        if eps.shape != (real.shape[0], 1):
            raise ValueError(f"eps node must have shape {(real.shape[0], 1)}, got {eps.shape}")
        return ad.add(ad.mul(eps, real), ad.mul(ad.sub(ad.const(1.0), eps), fake))
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    if eps.shape[0] != real.shape[0]:
        raise ValueError(f"need one interpolation weight per row, got {eps.shape[0]} for {real.shape[0]}")
    if np.any(eps < 0) or np.any(eps > 1):
        raise ValueError("interpolation weights must lie in [0, 1]")
    return ad.add(ad.mul(ad.const(eps), real), ad.mul(ad.const(1.0 - eps), fake))


def gradient_penalty(D: CriticNet, prefix: str, real: ad.Node, fake: ad.Node, eps, nodes=None) -> ad.Node:
    """Mean of ``(||grad_y D(y)|| - 1)^2`` at random interpolates.

    The input-gradient is a graph node, so the result stays differentiable in
    the critic parameters.
    """
    _check_pair("gradient_penalty", real, fake)
    y_tilde = interpolate(real, fake, eps)
    scores = critic_graph(D, prefix, y_tilde, nodes)
    # rows are independent, so the gradient of the batch sum is the per-row gradient
    (g,) = ad.grad(ad.sum(scores), [y_tilde])
    return ad.mean(ad.square(ad.sub(ad.l2_norm_rows(g), ad.const(1.0))))


def cycle_loss(
    G_fwd: GeneratorNet,
    fwd_prefix: str,
    G_bwd: GeneratorNet,
    bwd_prefix: str,
    samples: ad.Node,
    z_fwd: ad.Node,
    z_bwd: ad.Node,
    fwd_nodes=None,
    bwd_nodes=None,
    there: ad.Node | None = None,
) -> ad.Node:
    """Mean row norm of ``G_fwd(G_bwd(s, z_bwd), z_fwd) - s`` (unsquared).

    ``there`` may pass an already-built ``G_bwd(s, z_bwd)`` node so a training
    step can share it with the adversarial term.
    """
    if not samples.shape[0] == z_fwd.shape[0] == z_bwd.shape[0]:
        raise ValueError("cycle_loss: batch sizes of samples and noise differ")
    if there is None:
        there = generator_graph(G_bwd, bwd_prefix, samples, z_bwd, bwd_nodes)
    back = generator_graph(G_fwd, fwd_prefix, there, z_fwd, fwd_nodes)
    return ad.mean(ad.l2_norm_rows(ad.sub(back, samples)))
