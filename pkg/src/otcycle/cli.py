"""``otcycle`` command line: toy and colour training runs, proposition checks, exact OT.

Every command writes ``manifest.json`` into ``--out-dir`` before doing any
work and rewrites it with the final status when done.  Exit codes:
0 success, 1 I/O or runtime failure, 2 usage error, 3 counterexample found.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import colortransfer as ct
from . import experiments as ex
from . import nn, propositions
from .kernels import BACKEND
from .losses import LossWeights, cost_matrix
from .oracle import exact_ot, independent_coupling_cost, uniform
from .solvers import SolverConfig, TrainingAborted, checkpoint_load, checkpoint_save, train

log = logging.getLogger("otcycle")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_COUNTEREXAMPLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# Training flags shared by train-toy and train-color, with their defaults.
TRAIN_DEFAULTS = {
    "mode": "k",
    "seed": 0,
    "steps": 20_000,
    "hidden": nn.HIDDEN,
    "batch_size": 100,
    "n_critic": 5,
    "lr": 1e-4,
    "beta1": 0.5,
    "beta2": 0.9,
    "lambda_gan": 1.0,
    "lambda_gp": 0.1,
    "lambda_cycle": 1.0,
    "cost": "squared_euclidean",
    "log_every": 100,
    "checkpoint_every": 1000,
}
TOY_DEFAULTS = {**TRAIN_DEFAULTS, "task": "discrete4", "plot_points": 500}
COLOR_DEFAULTS = {
    **TRAIN_DEFAULTS,
    "source": str(ct.FIXTURE_SOURCE),
    "target": str(ct.FIXTURE_TARGET),
    "z_policy": "fixed",
}
_CASTS = {k: type(v) for k, v in {**TOY_DEFAULTS, **COLOR_DEFAULTS}.items()}


def version() -> str:
    try:
        return metadata.version("otcycle")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use ``_`` or ``-``."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args, defaults: dict) -> dict:
    """Defaults, then ``--config``/``--manifest`` values, then explicit flags."""
    values = dict(defaults)
    if getattr(args, "manifest", None):
        values.update(json.loads(Path(args.manifest).read_text())["config"])
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in defaults:
                raise UsageError(f"unknown config key {key!r}; known: {sorted(defaults)}")
            try:
                values[key] = _CASTS[key](raw)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def solver_config(v: dict, d_in: int) -> SolverConfig:
    try:
        return _solver_config(v, d_in)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _solver_config(v, d_in):
    weights = LossWeights(
        gan_xy=v["lambda_gan"], gan_yx=v["lambda_gan"], gp_xy=v["lambda_gp"], gp_yx=v["lambda_gp"],
        cycle_mu=v["lambda_cycle"], cycle_nu=v["lambda_cycle"],
    )
    return SolverConfig(
        mode=v["mode"], weights=weights, cost=v["cost"], d_in=d_in, hidden=v["hidden"],
        n_critic=v["n_critic"], batch_size=v["batch_size"], lr=v["lr"], beta1=v["beta1"],
        beta2=v["beta2"], max_steps=v["steps"], seed=v["seed"], log_every=v["log_every"],
    )


class Manifest:
    """The run record, rewritten in place as the run progresses."""

    current: "Manifest | None" = None

    def __init__(self, out_dir: Path, command: str, argv, config: dict, inputs=None):
        self.path = out_dir / "manifest.json"
        self.data = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seeds": {"seed": config.get("seed")},
            "version": version(),
            "backend": BACKEND,
            # a missing input is recorded as null so failed runs still leave a manifest
            "inputs": {str(p): sha256(p) if Path(p).is_file() else None for p in (inputs or [])},
            "outputs": {},
            "started": _now(),
            "finished": None,
            "status": "running",
        }
        Manifest.current = self
        self.write()

    def output(self, name: str, path):
        self.data["outputs"][name] = str(path)

    def finish(self, status: str, **extra):
        self.data.update(extra, status=status, finished=_now())
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _train_with_checkpoints(cfg, src, tgt, out_dir: Path, every: int, manifest: Manifest, resume=None):
    ckpt = out_dir / "checkpoint.otc"
    log_csv = out_dir / "train_log.csv"
    manifest.output("checkpoint", ckpt)
    manifest.output("train_log", log_csv)
    state = checkpoint_load(resume) if resume else None
    if state is not None:
        state.config.max_steps = cfg.max_steps
    state = train(cfg, src, tgt, state=state, log_path=log_csv, checkpoint_path=ckpt, checkpoint_every=every)
    checkpoint_save(state, ckpt)
    return state


# ---------------------------------------------------------------------------
# commands

def cmd_train_toy(args) -> int:
    v = resolve(args, TOY_DEFAULTS)
    if v["task"] not in ex.TASKS:
        raise UsageError(f"unknown task {v['task']!r}; choose from {sorted(ex.TASKS)}")
    cfg = solver_config(v, d_in=2)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out_dir, "train-toy", args.argv, v)
    src, tgt = ex.task_laws(v["task"])
    try:
        state = _train_with_checkpoints(cfg, src, tgt, out_dir, v["checkpoint_every"], manifest, args.resume)
    except TrainingAborted as exc:
        manifest.finish("aborted", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    record = ex.evaluate(state, src, tgt)
    rng = np.random.default_rng(ex.EVAL_SEED + 1)
    n = v["plot_points"]
    x, y = src(n, rng), tgt(n, rng)
    mapped = ex.map_points(state.nets["G_xy"], x, rng)
    for p in ex.render_report([record], {"source": x, "target": y}, (x, mapped), out_dir, v["task"], v["mode"]):
        manifest.output(p.suffix.lstrip("."), p)
    manifest.finish("ok", metrics={k: _jsonable(val) for k, val in vars(record).items()})
    print(_format_record(record))
    return EXIT_OK


def cmd_train_color(args) -> int:
    v = resolve(args, COLOR_DEFAULTS)
    cfg = solver_config(v, d_in=3)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [v["source"], v["target"]]
    manifest = Manifest(out_dir, "train-color", args.argv, v, inputs=paths)
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"image not found: {p}")
    src_img, tgt_img = ct.load_image(v["source"]), ct.load_image(v["target"])
    src_cloud, tgt_cloud = ct.image_to_cloud(src_img), ct.image_to_cloud(tgt_img)
    try:
        state = _train_with_checkpoints(
            cfg, ct.pixel_sampler(src_cloud), ct.pixel_sampler(tgt_cloud), out_dir,
            v["checkpoint_every"], manifest, args.resume,
        )
    except TrainingAborted as exc:
        manifest.finish("aborted", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    out_img = ct.transfer(state, src_img, v["z_policy"], seed=v["seed"])
    out_path = out_dir / "transferred.ppm"
    ct.save_image(out_img, out_path)
    manifest.output("transferred", out_path)

    scores = {
        "baseline_score": ct.histogram_match_score(src_img, tgt_img),
        "transferred_score": ct.histogram_match_score(out_img, tgt_img),
        "determinism_score": ex.determinism_score(
            state.nets["G_xy"], ct._subsample(src_img, 500, ct.SCORE_SEED), k=32, seed=v["seed"]
        ),
    }
    score_path = out_dir / "scores.csv"
    with open(score_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(scores))
        w.writerow([repr(float(s)) for s in scores.values()])
    manifest.output("scores", score_path)

    rng = np.random.default_rng(v["seed"])
    pick = lambda c: c[rng.choice(len(c), min(len(c), 1000), replace=False)]
    clouds = {"source": pick(src_cloud), "target": pick(tgt_cloud), "mapped": pick(ct.image_to_cloud(out_img))}
    for a, b, name in ((0, 1, "rg"), (0, 2, "rb"), (1, 2, "gb")):
        path = out_dir / f"colors_{name}.svg"
        path.write_text(ex.render_svg({k: c[:, [a, b]] for k, c in clouds.items()}, title=f"{name} projection"))
        manifest.output(f"projection_{name}", path)
    manifest.finish("ok", metrics=scores)
    for k, s in scores.items():
        print(f"{k} {float(s)!r}")
    return EXIT_OK


def cmd_verify_props(args) -> int:
    if not 0.0 < args.step <= 1.0:
        raise UsageError(f"--step must lie in (0, 1], got {args.step}")
    if not 1 <= args.max_support <= 4:
        raise UsageError(f"--max-support must lie in 1..4, got {args.max_support}")
    if args.tol < 0:
        raise UsageError(f"--tol must be nonnegative, got {args.tol}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {"step": args.step, "max_support": args.max_support, "tol": args.tol}
    manifest = Manifest(out_dir, "verify-props", args.argv, config)
    t0 = time.perf_counter()
    result = propositions.search(args.max_support, args.step, args.tol)
    elapsed = time.perf_counter() - t0
    csv_path = out_dir / "violations.csv"
    propositions.write_violations(result.violations, csv_path)
    report = (
        f"pairs enumerated: {result.pairs_checked}\n"
        f"premise-satisfying pairs: {result.premise_pairs}\n"
        f"counterexamples: {len(result.violations)}\n"
        f"seconds: {elapsed:.2f}\n"
    )
    (out_dir / "report.txt").write_text(report)
    manifest.output("violations", csv_path)
    manifest.output("report", out_dir / "report.txt")
    manifest.finish("counterexample" if result.violations else "ok", counterexamples=len(result.violations))
    print(report, end="")
    return EXIT_COUNTEREXAMPLE if result.violations else EXIT_OK


def read_points(path) -> np.ndarray:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(t) for t in line.split()])
        except ValueError:
            raise ValueError(f"{path}:{n}: cannot parse {line!r} as numbers") from None
        if len(rows[-1]) != len(rows[0]):
            raise ValueError(f"{path}:{n}: ragged row with {len(rows[-1])} columns, expected {len(rows[0])}")
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.array(rows)


def cmd_oracle(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out_dir, "oracle", args.argv, {"cost": args.cost}, inputs=[args.source, args.target])
    X, Y = read_points(args.source), read_points(args.target)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    C = cost_matrix(args.cost, X, Y)
    a, b = uniform(len(X)), uniform(len(Y))
    cost, coupling = exact_ot(a, b, C)
    indep = independent_coupling_cost(a, b, C)
    plan_path = out_dir / "plan.csv"
    with open(plan_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "mass"])
        for i, j in zip(*np.nonzero(coupling.plan > 0)):
            w.writerow([i, j, repr(float(coupling.plan[i, j]))])
    manifest.output("plan", plan_path)
    manifest.finish("ok", exact_cost=cost, independent_cost=indep)
    print(f"exact_cost {float(cost)!r}")
    print(f"independent_cost {float(indep)!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _jsonable(v):
    return None if isinstance(v, float) and not np.isfinite(v) else v


def _format_record(r) -> str:
    return "\n".join(f"{k} {float(v) if isinstance(v, float) else v!r}" for k, v in vars(r).items())


def _training_flags(p: argparse.ArgumentParser, defaults: dict):
    # defaults are None so that resolve() can tell explicit flags from omitted ones
    add = lambda flag, typ, help: p.add_argument(flag, type=typ, default=None, help=f"{help} (default {defaults[flag[2:].replace('-', '_')]})")
    p.add_argument("--mode", choices=["k", "m", "b"], default=None, help="k: Kantorovich, m: Monge, b: bijection (default k)")
    add("--seed", int, "random seed")
    add("--steps", int, "generator iterations")
    add("--hidden", int, "hidden width of every network")
    add("--batch-size", int, "batch size")
    add("--n-critic", int, "critic iterations per generator iteration")
    add("--lr", float, "Adam step size")
    add("--beta1", float, "Adam beta1")
    add("--beta2", float, "Adam beta2")
    add("--lambda-gan", float, "adversarial weight")
    add("--lambda-gp", float, "gradient-penalty weight")
    add("--lambda-cycle", float, "cycle-consistency weight")
    p.add_argument("--cost", choices=["squared_euclidean", "euclidean"], default=None, help="ground cost (default squared_euclidean)")
    add("--log-every", int, "generator steps between log rows")
    add("--checkpoint-every", int, "generator steps between checkpoints, 0 disables")
    p.add_argument("--config", help="key = value file overriding defaults; flags override it")
    p.add_argument("--manifest", help="reuse the resolved config of an earlier run")
    p.add_argument("--resume", help="continue from a checkpoint file")
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otcycle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {version()} ({BACKEND} kernels)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train on a synthetic 2-D task and write a report")
    p.add_argument("--task", default=None, help=f"one of {', '.join(ex.TASKS)} (default discrete4)")
    p.add_argument("--plot-points", type=int, default=None, help="points per cloud in the plot (default 500)")
    _training_flags(p, TOY_DEFAULTS)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("train-color", help="learn a colour map between two PPM images")
    p.add_argument("--source", default=None, help="source image (default: bundled fixture)")
    p.add_argument("--target", default=None, help="target image (default: bundled fixture)")
    p.add_argument("--z-policy", choices=["fixed", "per-pixel"], default=None, help="noise when applying the map (default fixed)")
    _training_flags(p, COLOR_DEFAULTS)
    p.set_defaults(func=cmd_train_color)

    p = sub.add_parser("verify-props", help="exhaustive finite check of the cycle-consistency propositions")
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--max-support", type=int, default=3)
    p.add_argument("--tol", type=float, default=propositions.DEFAULT_TOL)
    p.add_argument("--out-dir", default="verify-props")
    p.set_defaults(func=cmd_verify_props)

    p = sub.add_parser("oracle", help="exact OT cost between two whitespace-separated point files")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--cost", choices=["squared_euclidean", "euclidean"], default="squared_euclidean")
    p.add_argument("--out-dir", default="oracle")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (OSError, ValueError, ct.ImageError, nn.CheckpointError) as exc:
        m = Manifest.current
        if m is not None and m.data["status"] == "running":
            m.finish("failed", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        Manifest.current = None


if __name__ == "__main__":
    sys.exit(main())
