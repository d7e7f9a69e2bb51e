"""MLP generators/critics, Glorot init, Adam, and the checkpoint file format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

HIDDEN = 1024


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"inconsistent layer: weight {self.weight.shape}, bias {self.bias.shape}"
            )


@dataclass
class MLP:
    """Three linear layers with LeakyReLU between them and no output activation."""

    layers: list[LinearLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            yield f"{i}.weight", layer.weight
            yield f"{i}.bias", layer.bias

    def set_params(self, values: dict[str, np.ndarray]):
        for i, layer in enumerate(self.layers):
            layer.weight = values[f"{i}.weight"]
            layer.bias = values[f"{i}.bias"]

    def copy(self):
        return type(self)(
            [LinearLayer(l.weight.copy(), l.bias.copy()) for l in self.layers],
            **self._extra(),
        )

    def _extra(self):
        return {}


@dataclass
class GeneratorNet(MLP):
    d_in: int = 2
    d_z: int = 2

    def _extra(self):
        return {"d_in": self.d_in, "d_z": self.d_z}


@dataclass
class CriticNet(MLP):
    d_in: int = 2

    def _extra(self):
        return {"d_in": self.d_in}


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _init_layers(widths, rng):
    return [
        LinearLayer(_glorot(rng, n_out, n_in), np.zeros(n_out))
        for n_in, n_out in zip(widths[:-1], widths[1:])
    ]


def init_generator(d_in: int, d_z: int, seed, hidden: int = HIDDEN) -> GeneratorNet:
    if d_in < 1 or d_z < 1 or hidden < 1:
        raise ValueError(f"dimensions must be positive, got d_in={d_in} d_z={d_z} hidden={hidden}")
    rng = np.random.default_rng(seed)
    return GeneratorNet(_init_layers([d_in + d_z, hidden, hidden, d_in], rng), d_in=d_in, d_z=d_z)


def init_critic(d_in: int, seed, hidden: int = HIDDEN) -> CriticNet:
    if d_in < 1 or hidden < 1:
        raise ValueError(f"dimensions must be positive, got d_in={d_in} hidden={hidden}")
    rng = np.random.default_rng(seed)
    return CriticNet(_init_layers([d_in, hidden, hidden, 1], rng), d_in=d_in)


# ---------------------------------------------------------------------------
# graph builders

def param_nodes(net: MLP, prefix: str) -> dict[str, ad.Node]:
    """One parameter leaf per tensor, keyed by slot name ``prefix.i.weight``."""
    return {f"{prefix}.{k}": ad.param(f"{prefix}.{k}", v.shape) for k, v in net.named_params()}


def bindings(net: MLP, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in net.named_params()}


def mlp_graph(net: MLP, prefix: str, h: ad.Node, nodes: dict[str, ad.Node] | None = None) -> ad.Node:
    nodes = nodes if nodes is not None else param_nodes(net, prefix)
    last = len(net.layers) - 1
    for i in range(len(net.layers)):
        w, b = nodes[f"{prefix}.{i}.weight"], nodes[f"{prefix}.{i}.bias"]
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        if i < last:
            h = ad.leaky_relu(h)
    return h


def generator_graph(G: GeneratorNet, prefix: str, x: ad.Node, z: ad.Node, nodes=None) -> ad.Node:
    if x.shape[0] != z.shape[0]:
        raise ValueError(f"batch mismatch: x has {x.shape[0]} rows, z has {z.shape[0]}")
    if x.shape[1] != G.d_in or z.shape[1] != G.d_z:
        raise ValueError(f"expected x width {G.d_in} and z width {G.d_z}, got {x.shape} and {z.shape}")
    return mlp_graph(G, prefix, ad.concat_last_axis([x, z]), nodes)


def critic_graph(D: CriticNet, prefix: str, y: ad.Node, nodes=None) -> ad.Node:
    if len(y.shape) != 2 or y.shape[1] != D.d_in:
        raise ValueError(f"critic expects width {D.d_in}, got shape {y.shape}")
    return mlp_graph(D, prefix, y, nodes)


def generator_forward(G: GeneratorNet, x, z) -> np.ndarray:
    out = generator_graph(G, "G", ad.const(x), ad.const(z))
    return ad.evaluate(out, bindings(G, "G"))


def critic_forward(D: CriticNet, y) -> np.ndarray:
    return ad.evaluate(critic_graph(D, "D", ad.const(y)), bindings(D, "D"))


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update.

    Returns fresh parameter arrays; the inputs are never written to, so callers
    can hold snapshots of the previous values.
    """
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k} at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * (g * g) if v is None else b2 * v + (1.0 - b2) * (g * g)
        state.m[k], state.v[k] = m, v
        out[k] = p - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return out, state


# ---------------------------------------------------------------------------
# checkpoint format
#
# b"OTCKPT" | u16 version | u32 header length | JSON header | f64 LE blocks
# The header lists every block as [name, shape] in write order and carries
# all non-array state.  A sidecar ``<path>.txt`` holds a human-readable summary.

MAGIC = b"OTCKPT"
VERSION = 1
_PREFIX = struct.Struct("<6sHI")


class CheckpointError(ValueError):
    pass


def write_blocks(path, meta: dict, blocks: list[tuple[str, np.ndarray]], summary: dict | None = None):
    header = dict(meta)
    header["blocks"] = [[name, list(arr.shape)] for name, arr in blocks]
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if summary is not None:
        lines = [f"{k} = {summary[k]}" for k in sorted(summary)]
        path.with_name(path.name + ".txt").write_text("\n".join(lines) + "\n")


def read_blocks(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[start : start + hlen])
    offset = start + hlen
    specs = header.pop("blocks")
    expected = offset + 8 * int(np.sum([np.prod(s, dtype=np.int64) for _, s in specs]))
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")
    blocks = {}
    for name, shape in specs:
        n = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    return header, blocks


def save_net(net: MLP, path, seed=None, step=0):
    kind = "generator" if isinstance(net, GeneratorNet) else "critic"
    meta = {"kind": kind, **net._extra(), "seed": seed, "step": step}
    dims = [list(l.weight.shape) for l in net.layers]
    write_blocks(path, meta, list(net.named_params()), summary={**meta, "layer_shapes": dims})


def load_net(path) -> MLP:
    meta, blocks = read_blocks(path)
    n_layers = len(blocks) // 2
    layers = [LinearLayer(blocks[f"{i}.weight"], blocks[f"{i}.bias"]) for i in range(n_layers)]
    if meta["kind"] == "generator":
        return GeneratorNet(layers, d_in=meta["d_in"], d_z=meta["d_z"])
    return CriticNet(layers, d_in=meta["d_in"])
