"""Synthetic 2-D laws, run-level metrics and SVG/CSV reports for the toy tasks.

Mixture geometry for the Gaussian and checkerboard laws is a reconstruction
(the reference figures give no numbers) and is recorded as such in every
report header.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .losses import paired_cost
from .oracle import empirical_costs, energy_distance
from .solvers import TrainState

SIGMA = 0.4
GAUSS4_SRC_RADIUS = 2.0
GAUSS4_TGT_RADIUS = 6.0
GAUSS8_RADIUS = 6.0
CELL = 2.0

GEOMETRY_NOTE = (
    f"mixture geometry reconstructed: gauss4 radii {GAUSS4_SRC_RADIUS}/{GAUSS4_TGT_RADIUS}, "
    f"gauss8 radius {GAUSS8_RADIUS}, sigma {SIGMA}, checkerboard cell {CELL} on a 3x3 lattice"
)

FOUR_POINTS = np.array([[-3.0, -3.0], [-3.0, 3.0], [3.0, -3.0], [3.0, 3.0]])
_DIAG = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]) / math.sqrt(2.0)
_ANGLES = np.arange(8) * (math.pi / 4)
GAUSS8_CENTERS = GAUSS8_RADIUS * np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1)
_LATTICE = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=np.float64) * CELL
BLACK_CELLS = _LATTICE[(_LATTICE.sum(1) / CELL) % 2 == 0]  # 4 corners + centre
WHITE_CELLS = _LATTICE[(_LATTICE.sum(1) / CELL) % 2 != 0]


def _mixture(centers, sigma):
    def draw(n, rng):
        k = rng.integers(0, len(centers), n)
        return centers[k] + sigma * rng.standard_normal((n, centers.shape[1]))
    return draw


def _squares(cells):
    def draw(n, rng):
        k = rng.integers(0, len(cells), n)
        return cells[k] + rng.uniform(-CELL / 2, CELL / 2, (n, 2))
    return draw


def _four_points(n, rng):
    return FOUR_POINTS[rng.integers(0, 4, n)]


def _std_gaussian(n, rng):
    return rng.standard_normal((n, 2))


LAWS: dict[str, Callable[[int, np.random.Generator], np.ndarray]] = {
    "four_point_discrete": _four_points,
    "std_gaussian_2d": _std_gaussian,
    "gauss4_src": _mixture(GAUSS4_SRC_RADIUS * _DIAG, SIGMA),
    "gauss4_tgt": _mixture(GAUSS4_TGT_RADIUS * _DIAG, SIGMA),
    "eight_gaussian_mix": _mixture(GAUSS8_CENTERS, SIGMA),
    "checkerboard_src": _squares(BLACK_CELLS),
    "checkerboard_tgt": _squares(WHITE_CELLS),
}

# task -> (source law, target law)
TASKS = {
    "discrete4": ("four_point_discrete", "std_gaussian_2d"),
    "gauss4": ("gauss4_src", "gauss4_tgt"),
    "gauss8": ("std_gaussian_2d", "eight_gaussian_mix"),
    "checkerboard": ("checkerboard_src", "checkerboard_tgt"),
}


def law(name: str):
    try:
        return LAWS[name]
    except KeyError:
        raise ValueError(f"unknown law {name!r}; known: {sorted(LAWS)}") from None


def task_laws(task: str):
    try:
        src, tgt = TASKS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; known: {sorted(TASKS)}") from None
    return LAWS[src], LAWS[tgt]


def sample(name: str, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return law(name)(n, np.random.default_rng(seed))


def determinism_score(G: nn.GeneratorNet, sources, k: int = 32, seed=0) -> float:
    """Mean over sources of the trace of the output covariance across ``k`` noise draws."""
    if k < 2:
        raise ValueError("determinism_score needs k >= 2 noise draws")
    sources = np.asarray(sources, dtype=np.float64)
    rng = np.random.default_rng(seed)
    # one pass per draw over the same batch layout: BLAS rounding depends on a
    # row's position, and a z-blind generator must score exactly zero
    out = np.stack([
        nn.generator_forward(G, sources, rng.uniform(-1.0, 1.0, (len(sources), G.d_z)))
        for _ in range(k)
    ])
    # centring on the first draw keeps identical outputs at exactly zero
    return float((out - out[0]).var(axis=0, ddof=1).sum(-1).mean())


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsRecord:
    est_transport_cost: float
    oracle_cost: float
    independent_cost: float
    energy_distance_to_target: float
    determinism_score: float
    cycle_rmse_fwd: float
    cycle_rmse_bwd: float
    step: int
    wall_ms: float


RECORD_FIELDS = tuple(f.name for f in fields(MetricsRecord))

EVAL_SEED = 20_231
ORACLE_N = 1000
ED_N = 2000


def map_points(G: nn.GeneratorNet, x, rng) -> np.ndarray:
    return nn.generator_forward(G, x, rng.uniform(-1.0, 1.0, (len(x), G.d_z)))


def cycle_rmse(G_there, G_back, pts, rng) -> float:
    back = map_points(G_back, map_points(G_there, pts, rng), rng)
    return float(np.sqrt(((back - pts) ** 2).sum(1).mean()))


def evaluate(state: TrainState, source, target, seed=EVAL_SEED) -> MetricsRecord:
    """Metrics on fixed-seed evaluation batches; ``source``/``target`` are samplers.

    Cycle errors are NaN for a Kantorovich state, which has no reverse map.
    ``wall_ms`` is the training time logged so far.
    """
    rng = np.random.default_rng(seed)
    G = state.nets["G_xy"]
    cost = state.config.cost

    x, y = source(ORACLE_N, rng), target(ORACLE_N, rng)
    mapped = map_points(G, x, rng)
    est = float(paired_cost(cost, x, mapped).mean())
    oracle, indep = empirical_costs(x, y, cost)

    x_ed, y_ed = source(ED_N, rng), target(ED_N, rng)
    ed = energy_distance(map_points(G, x_ed, rng), y_ed)
    det = determinism_score(G, source(200, rng), k=32, seed=rng.integers(2**32))

    fwd = bwd = math.nan
    if "G_yx" in state.nets:
        fwd = cycle_rmse(G, state.nets["G_yx"], source(ORACLE_N, rng), rng)
        bwd = cycle_rmse(state.nets["G_yx"], G, target(ORACLE_N, rng), rng)
    wall = float(state.log[-1]["wall_ms"]) if state.log else 0.0
    return MetricsRecord(est, oracle, indep, ed, det, fwd, bwd, state.step, wall)


# ---------------------------------------------------------------------------
# reports

def _num(v) -> str:
    # shortest round-tripping text; numpy scalars would otherwise repr with their type
    return repr(float(v))


def write_records(records, path):
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: _num(v) if isinstance(v, float) else v for k, v in asdict(r).items()})


def read_records(path) -> list[MetricsRecord]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MetricsRecord(**{k: int(v) if k == "step" else float(v) for k, v in row.items()})
        for row in rows
    ]


_COLORS = {"source": "#1f77b4", "target": "#d62728", "mapped": "#ff7f0e", "segment": "#2ca02c"}


def render_svg(samples: dict[str, np.ndarray], mapping=None, title: str = "") -> str:
    """Scatter of source/target/mapped clouds plus source->mapped segments.

    Coordinates are written in data units inside a y-flipped group, so the
    file can be parsed back into the exact input values.
    """
    clouds = [np.asarray(v, dtype=np.float64) for v in samples.values()]
    if mapping is not None:
        clouds += [np.asarray(m, dtype=np.float64) for m in mapping]
    pts = np.concatenate([c[:, :2] for c in clouds]) if clouds else np.zeros((1, 2))
    lo, hi = pts.min(0) - 0.5, pts.max(0) + 0.5
    w, h = hi - lo
    r = 0.006 * max(w, h)
    out = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{_num(lo[0])} {_num(-hi[1])} {_num(w)} {_num(h)}" width="600" height="{600 * h / w:.0f}">',
        f"<title>{title}</title>",
        '<g transform="scale(1,-1)">',
    ]
    if mapping is not None:
        src, dst = mapping
        out.append(f'<g class="segments" stroke="{_COLORS["segment"]}" stroke-width="{_num(r / 2)}" stroke-opacity="0.4">')
        out += [f'<line x1="{_num(a[0])}" y1="{_num(a[1])}" x2="{_num(b[0])}" y2="{_num(b[1])}"/>' for a, b in zip(src, dst)]
        out.append("</g>")
    layers = list(samples.items()) + ([("mapped", mapping[1])] if mapping is not None else [])
    for name, cloud in layers:
        out.append(f'<g class="{name}" fill="{_COLORS.get(name, "#000000")}" fill-opacity="0.6">')
        out += [f'<circle cx="{_num(p[0])}" cy="{_num(p[1])}" r="{_num(r)}"/>' for p in cloud]
        out.append("</g>")
    out += ["</g>", "</svg>", ""]
    return "\n".join(out)


def render_report(records, samples, mapping, out_dir, task="task", mode="k") -> list[Path]:
    """Write ``metrics.csv`` and, when there is anything to draw, ``<task>_<mode>_<step>.svg``.

    ``samples`` maps ``"source"``/``"target"`` to clouds; ``mapping`` is a
    ``(sources, mapped)`` pair or None.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "metrics.csv"]
    write_records(records, written[0])
    if samples or mapping is not None:
        step = records[-1].step if records else 0
        path = out_dir / f"{task}_{mode}_{step}.svg"
        path.write_text(render_svg(samples, mapping, f"{task} {mode} step {step}; {GEOMETRY_NOTE}"))
        written.append(path)
    return written
