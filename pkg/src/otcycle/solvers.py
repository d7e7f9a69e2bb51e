"""Alternating critic/generator training for the K-, M- and B-solvers.

The three modes share one loop and differ only in which networks exist and
which cycle terms carry weight:

* ``kantorovich``: ``G_xy`` and ``D_y`` only, no cycle term.
* ``monge``: adds ``G_yx``/``D_x`` and the target-side cycle term.
* ``bijection``: both cycle terms.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .losses import (
    LossWeights,
    cycle_loss,
    generator_term,
    gradient_penalty,
    transport_cost,
    wgan_terms,
)

log = logging.getLogger(__name__)

MODES = ("kantorovich", "monge", "bijection")
MODE_ALIASES = {"k": "kantorovich", "m": "monge", "b": "bijection"}

# sampler(n, rng) -> (n, d) array
Sampler = Callable[[int, np.random.Generator], np.ndarray]

LOG_FIELDS = ("step", "L_opt", "critic_loss_y", "critic_loss_x", "cycle_mu", "cycle_nu", "wall_ms")


def resolve_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown solver mode {mode!r}")
    return mode


@dataclass
class SolverConfig:
    mode: str = "kantorovich"
    weights: LossWeights = field(default_factory=LossWeights)
    cost: str = "squared_euclidean"
    d_in: int = 2
    noise_dim: int | None = None  # defaults to d_in
    hidden: int = nn.HIDDEN
    n_critic: int = 5
    batch_size: int = 100
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    max_steps: int = 20_000
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        self.mode = resolve_mode(self.mode)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.weights = self.weights.for_mode(self.mode)
        if self.noise_dim is None:
            self.noise_dim = self.d_in
        if self.n_critic < 1 or self.batch_size < 1 or self.max_steps < 0 or self.log_every < 1:
            raise ValueError("n_critic, batch_size and log_every must be >= 1 and max_steps >= 0")

    @property
    def two_sided(self) -> bool:
        return self.mode != "kantorovich"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainState:
    config: SolverConfig
    nets: dict[str, nn.MLP]
    adams: dict[str, nn.AdamState]
    rng: np.random.Generator
    step: int = 0
    log: list[dict] = field(default_factory=list)
    _graphs: object = field(default=None, repr=False, compare=False)

    @property
    def generators(self):
        return [k for k in ("G_xy", "G_yx") if k in self.nets]

    @property
    def critics(self):
        return [k for k in ("D_y", "D_x") if k in self.nets]


def init_state(config: SolverConfig) -> TrainState:
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    c = config
    nets: dict[str, nn.MLP] = {
        "G_xy": nn.init_generator(c.d_in, c.noise_dim, seeds[0], c.hidden),
        "D_y": nn.init_critic(c.d_in, seeds[1], c.hidden),
    }
    if c.two_sided:
        nets["G_yx"] = nn.init_generator(c.d_in, c.noise_dim, seeds[2], c.hidden)
        nets["D_x"] = nn.init_critic(c.d_in, seeds[3], c.hidden)
    adams = {k: nn.AdamState(lr=c.lr, beta1=c.beta1, beta2=c.beta2) for k in nets}
    return TrainState(c, nets, adams, np.random.default_rng(seeds[4]))


def _noise(state: TrainState, m: int) -> np.ndarray:
    return state.rng.uniform(-1.0, 1.0, size=(m, state.config.noise_dim))


def _bind(state: TrainState) -> dict[str, np.ndarray]:
    out = {}
    for name, net in state.nets.items():
        out.update(nn.bindings(net, name))
    return out


def _update(state: TrainState, name: str, grads: dict[str, np.ndarray]):
    net = state.nets[name]
    params = {k: v for k, v in net.named_params()}
    grads = {k: grads[f"{name}.{k}"] for k in params}
    new, _ = nn.adam_step(state.adams[name], params, grads)
    net.set_params(new)


def _run(program: ad.Program, bind, what, state):
    try:
        return program.run(bind)
    except ad.GraphError as exc:
        raise TrainingAborted(f"{what} at generator step {state.step}: {exc}") from exc


def _check_batch(state, x, y):
    m, d = state.config.batch_size, state.config.d_in
    if np.shape(x) != (m, d) or np.shape(y) != (m, d):
        raise ValueError(f"expected batches of shape {(m, d)}, got {np.shape(x)} and {np.shape(y)}")


class _StepGraphs:
    """Critic and generator step graphs for one state.

    Batches, noise and interpolation weights enter through slots, so the
    graphs are built and differentiated once and re-run every step.
    """

    def __init__(self, state: TrainState):
        c, w = state.config, state.config.weights
        m, d, dz = c.batch_size, c.d_in, c.noise_dim
        nets = state.nets
        slot = lambda name, width: ad.param(name, (m, width))  # noqa: E731
        x, y, z_x, z_y = slot("x", d), slot("y", d), slot("z_x", dz), slot("z_y", dz)

        fakes = [nn.generator_graph(nets["G_xy"], "G_xy", x, z_x)]
        if c.two_sided:
            fakes.append(nn.generator_graph(nets["G_yx"], "G_yx", y, z_y))
        self.fakes = ad.Program(fakes)

        # critic objective
        pairs = [("D_y", y, slot("fake_y", d), slot("eps_y", 1), w.gp_xy)]
        if c.two_sided:
            pairs.append(("D_x", x, slot("fake_x", d), slot("eps_x", 1), w.gp_yx))
        total, wrt, self.critic_names = None, {}, []
        critic_losses = []
        for name, real, fake, eps, gp_w in pairs:
            D = nets[name]
            nodes = nn.param_nodes(D, name)
            term, _ = wgan_terms(D, name, real, fake, nodes)
            if gp_w > 0:
                term = ad.add(term, ad.scale(gradient_penalty(D, name, real, fake, eps, nodes), gp_w))
            critic_losses.append(term)
            self.critic_names.append(name)
            wrt.update(nodes)
            total = term if total is None else ad.add(total, term)
        self.critic_keys = list(wrt)
        grads = ad.grad(total, [wrt[k] for k in self.critic_keys])
        self.critic = ad.Program(grads + critic_losses)

        # generator objective
        G_xy = nets["G_xy"]
        gxy = nn.param_nodes(G_xy, "G_xy")
        wrt = dict(gxy)
        y_fake = nn.generator_graph(G_xy, "G_xy", x, z_x, gxy)
        l_opt = transport_cost(c.cost, x, y_fake)
        parts = {"L_opt": l_opt}
        total = l_opt
        if w.gan_xy > 0:
            total = ad.add(total, ad.scale(generator_term(nets["D_y"], "D_y", y_fake), w.gan_xy))
        if c.two_sided:
            G_yx = nets["G_yx"]
            gyx = nn.param_nodes(G_yx, "G_yx")
            wrt.update(gyx)
            x_fake = nn.generator_graph(G_yx, "G_yx", y, z_y, gyx)
            if w.gan_yx > 0:
                total = ad.add(total, ad.scale(generator_term(nets["D_x"], "D_x", x_fake), w.gan_yx))
            if w.cycle_nu > 0:
                cyc = cycle_loss(G_xy, "G_xy", G_yx, "G_yx", y, z_x, z_y, gxy, gyx, there=x_fake)
                parts["cycle_nu"] = cyc
                total = ad.add(total, ad.scale(cyc, w.cycle_nu))
            if w.cycle_mu > 0:
                cyc = cycle_loss(G_yx, "G_yx", G_xy, "G_xy", x, z_y, z_x, gyx, gxy, there=y_fake)
                parts["cycle_mu"] = cyc
                total = ad.add(total, ad.scale(cyc, w.cycle_mu))
        self.gen_keys = list(wrt)
        self.gen_parts = list(parts)
        grads = ad.grad(total, [wrt[k] for k in self.gen_keys])
        self.generator = ad.Program(grads + list(parts.values()))
        self.graph_weights = w


def _graphs(state: TrainState) -> _StepGraphs:
    if state._graphs is None:
        state._graphs = _StepGraphs(state)
    return state._graphs


def critic_step(state: TrainState, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """One Adam step on the critic(s); generator parameters are not touched."""
    _check_batch(state, x, y)
    c = state.config
    m = c.batch_size
    z_x, z_y = _noise(state, m), _noise(state, m)
    eps_y = state.rng.uniform(size=(m, 1))
    eps_x = state.rng.uniform(size=(m, 1)) if c.two_sided else None

    graphs = _graphs(state)
    bind = _bind(state)
    bind.update(x=x, y=y, z_x=z_x, z_y=z_y)
    fakes = _run(graphs.fakes, bind, "generator forward", state)
    bind.update(fake_y=fakes[0], eps_y=eps_y)
    if c.two_sided:
        bind.update(fake_x=fakes[1], eps_x=eps_x)
    vals = _run(graphs.critic, bind, "critic loss", state)
    n = len(graphs.critic_keys)
    grad_map = dict(zip(graphs.critic_keys, vals[:n]))
    for name in graphs.critic_names:
        _update(state, name, grad_map)
    return {f"critic_loss_{name[-1]}": float(v) for name, v in zip(graphs.critic_names, vals[n:])}


def generator_step(state: TrainState, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """One Adam step on the generator(s); critic parameters are not touched."""
    _check_batch(state, x, y)
    m = state.config.batch_size
    z_x, z_y = _noise(state, m), _noise(state, m)
    graphs = _graphs(state)
    bind = _bind(state)
    bind.update(x=x, y=y, z_x=z_x, z_y=z_y)
    vals = _run(graphs.generator, bind, "generator loss", state)
    n = len(graphs.gen_keys)
    grad_map = dict(zip(graphs.gen_keys, vals[:n]))
    for name in state.generators:
        _update(state, name, grad_map)
    return {k: float(v) for k, v in zip(graphs.gen_parts, vals[n:])}


def train(
    config: SolverConfig,
    source: Sampler,
    target: Sampler,
    state: TrainState | None = None,
    log_path=None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    stop: Callable[[TrainState], bool] | None = None,
) -> TrainState:
    """Run until ``config.max_steps`` generator iterations (resuming ``state`` if given).

    ``stop`` is polled after every logged step and may end training early.
    """
    state = state if state is not None else init_state(config)
    m = config.batch_size
    writer = _LogWriter(log_path) if log_path else None
    t0 = time.perf_counter()
    try:
        while state.step < config.max_steps:
            for _ in range(config.n_critic):
                x, y = source(m, state.rng), target(m, state.rng)
                c_losses = critic_step(state, x, y)
            x, y = source(m, state.rng), target(m, state.rng)
            g_losses = generator_step(state, x, y)
            state.step += 1
            if state.step % config.log_every == 0 or state.step == config.max_steps:
                row = {"step": state.step, **g_losses, **c_losses}
                row["wall_ms"] = round(1000 * (time.perf_counter() - t0), 1)
                row = {k: row.get(k, "") for k in LOG_FIELDS}
                state.log.append(row)
                if writer:
                    writer.write(row)
                log.debug("step %d %s", state.step, row)
                if stop is not None and stop(state):
                    break
            if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
                checkpoint_save(state, checkpoint_path)
    except (TrainingAborted, nn.NonFiniteGradient) as exc:
        if checkpoint_path:
            checkpoint_save(state, checkpoint_path)
        raise TrainingAborted(f"training aborted at generator step {state.step}: {exc}") from exc
    finally:
        if writer:
            writer.close()
    return state


class _LogWriter:
    def __init__(self, path):
        path = Path(path)
        fresh = not path.exists() or path.stat().st_size == 0
        self._fh = open(path, "a", newline="")
        self._csv = csv.DictWriter(self._fh, fieldnames=LOG_FIELDS)
        if fresh:
            self._csv.writeheader()

    def write(self, row):
        self._csv.writerow(row)
        self._fh.flush()

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_save(state: TrainState, path):
    blocks = []
    adam_meta = {}
    for name, net in state.nets.items():
        blocks += [(f"{name}/{k}", v) for k, v in net.named_params()]
    for name, adam in state.adams.items():
        adam_meta[name] = {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
        for k in sorted(adam.m):
            blocks.append((f"adam/{name}/m/{k}", adam.m[k]))
            blocks.append((f"adam/{name}/v/{k}", adam.v[k]))
    meta = {
        "config": state.config.to_dict(),
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "adam": adam_meta,
        "log": state.log,
    }
    c = state.config
    summary = {"mode": c.mode, "d_in": c.d_in, "noise_dim": c.noise_dim, "hidden": c.hidden,
               "seed": c.seed, "step": state.step}
    nn.write_blocks(path, meta, blocks, summary)


def checkpoint_load(path) -> TrainState:
    meta, blocks = nn.read_blocks(path)
    config = SolverConfig.from_dict(meta["config"])
    state = init_state(config)
    for name, net in state.nets.items():
        net.set_params({k: blocks[f"{name}/{k}"] for k, _ in net.named_params()})
    for name, adam in state.adams.items():
        for attr, value in meta["adam"][name].items():
            setattr(adam, attr, value)
        prefix = f"adam/{name}/"
        for key, arr in blocks.items():
            if key.startswith(prefix):
                kind, pname = key[len(prefix):].split("/", 1)
                getattr(adam, kind)[pname] = arr
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    state.rng = rng
    state.step = meta["step"]
    state.log = meta["log"]
    return state
