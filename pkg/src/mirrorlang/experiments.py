"""Experiment configuration and drivers.

Every driver returns a :class:`ResultBundle`; writing it produces CSV files
plus ``metadata.json``.  CSV contents depend only on the effective config, so
reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy
from scipy import optimize

from . import __version__
from .diagnostics import (
    AllDivergedError,
    beta_marginal_edges,
    final_window_tv,
    grid_search,
    histogram_build,
    log_checkpoints,
    rate_slope,
    tv_distance,
    uniform_edges,
)
from .mirror_core import BlockMap, block_map_apply, burg_calculus
from .samplers import (
    CHAIN_BLOCK,
    CIR,
    NOISE,
    ORACLE,
    CirParams,
    block_generator,
    cir_run,
    oracle_first_coordinate,
    run_ensemble,
    sample_dirichlet_exact,
)
from .targets import DirichletModel, synthetic_benchmark_model, product_simplex_target

EXPERIMENTS = ("synthetic-dirichlet", "cir-demo", "burg-demo", "product-simplex", "grid-search")
SAMPLERS = ("mld", "smld", "sgrld")

DEFAULT_BETA = {"mld": 3e-3, "smld": 3e-3, "sgrld": 1e-2}
DEFAULT_GRID = {
    "mld": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
    "smld": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
    "sgrld": [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1],
}
DEFAULT_KEEP = {"mld": 3, "smld": 3, "sgrld": 5}
CIR_DEFAULT_GRID = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class DivergenceFailure(RuntimeError):
    """Every requested run produced non-finite states."""


@dataclass
class ExperimentConfig:
    experiment: str = "synthetic-dirichlet"
    model: dict | None = None
    sampler: str = "mld"
    trials: int = 100_000
    iters: int = 1000
    batch_size: int | None = None
    beta: float | None = None
    beta_grid: list[float] | None = None
    keep: int | None = None
    seed: int = 0
    bins: int = 50
    binning: str = "posterior"
    checkpoints: int = 40
    init: str = "center"
    exp_mode: str = "exact"
    workers: int = 1
    output_dir: str = "results"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}

_EXPERIMENT_DEFAULTS = {
    "cir-demo": {"iters": 1_000_000, "beta": 1e-3, "model": {"a": 2.0, "b": 1.0, "c": 1.0}},
    "product-simplex": {
        "trials": 20_000,
        "model": {
            "blocks": [
                {"counts": [50, 5, 0, 0], "alphas": [0.5, 0.5, 0.5, 0.5]},
                {"counts": [3, 30, 3], "alphas": [1.0, 1.0, 1.0]},
            ]
        },
    },
}


def _require(cond: bool, field_name: str, msg: str):
    if not cond:
        raise ConfigError(f"{field_name}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check invariants; raise :class:`ConfigError` naming the offending field."""
    _require(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
    _require(cfg.sampler in SAMPLERS, "sampler", f"must be one of {SAMPLERS}")
    for name in ("trials", "iters", "bins", "checkpoints", "workers"):
        v = getattr(cfg, name)
        _require(_is_int(v) and v >= 1, name, f"must be a positive integer, got {v!r}")
    _require(cfg.bins >= 2, "bins", "need at least two bins")
    _require(_is_int(cfg.seed) and 0 <= cfg.seed < 2**64, "seed", "must be a 64-bit non-negative integer")
    _require(cfg.exp_mode in ("exact", "linearized"), "exp_mode", "must be 'exact' or 'linearized'")
    _require(cfg.binning in ("posterior", "uniform"), "binning", "must be 'posterior' or 'uniform'")
    _require(cfg.init in ("center", "oracle"), "init", "must be 'center' or 'oracle'")
    if cfg.beta is not None:
        _require(_is_num(cfg.beta) and cfg.beta > 0, "beta", "must be a positive number")
    if cfg.beta_grid is not None:
        _require(
            isinstance(cfg.beta_grid, list) and cfg.beta_grid
            and all(_is_num(b) and b > 0 for b in cfg.beta_grid),
            "beta_grid", "must be a non-empty list of positive numbers",
        )
    if cfg.keep is not None:
        _require(_is_int(cfg.keep) and cfg.keep >= 1, "keep", "must be a positive integer")
        if cfg.beta_grid is not None:
            _require(cfg.keep <= len(cfg.beta_grid), "keep", "must not exceed the grid size")
    if cfg.batch_size is not None:
        _require(_is_int(cfg.batch_size) and cfg.batch_size >= 1, "batch_size",
                 "must be a positive integer")
    if cfg.sampler == "smld" and cfg.experiment in ("synthetic-dirichlet", "grid-search"):
        _require(cfg.batch_size is not None, "batch_size", "required for the smld sampler")
    try:
        if cfg.experiment == "cir-demo":
            cir_params(cfg)
        elif cfg.experiment == "product-simplex":
            product_blocks(cfg)
        elif cfg.experiment != "burg-demo":
            model = dirichlet_model(cfg)
            if cfg.batch_size is not None and cfg.sampler == "smld":
                _require(cfg.batch_size <= model.N, "batch_size", f"must not exceed N={model.N}")
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg


def dirichlet_model(cfg: ExperimentConfig) -> DirichletModel:
    if cfg.model is None:
        return synthetic_benchmark_model()
    _require(isinstance(cfg.model, dict), "model", "must be an object")
    return DirichletModel.from_dict(cfg.model)


def cir_params(cfg: ExperimentConfig) -> CirParams:
    m = cfg.model
    _require(isinstance(m, dict) and set(m) == {"a", "b", "c"}, "model",
             "cir-demo model needs exactly keys a, b, c")
    return CirParams(float(m["a"]), float(m["b"]), float(m["c"]))


def product_blocks(cfg: ExperimentConfig) -> list[DirichletModel]:
    m = cfg.model
    _require(isinstance(m, dict) and set(m) == {"blocks"} and isinstance(m["blocks"], list)
             and m["blocks"], "model", "product-simplex model needs a non-empty 'blocks' list")
    return [DirichletModel.from_dict(b) for b in m["blocks"]]


def parse_config(path: str | Path | None = None, overrides: dict | None = None,
                 experiment: str | None = None) -> ExperimentConfig:
    """Merge a JSON config file with overrides (overrides win) and validate.

    The file may also be a ``metadata.json`` written by a previous run, in
    which case its ``config`` entry is used.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        if "config" in data and "versions" in data:
            data = data["config"]
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    if experiment is not None:
        data["experiment"] = experiment
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    exp = data.get("experiment", ExperimentConfig.experiment)
    for k, v in _EXPERIMENT_DEFAULTS.get(exp, {}).items():
        data.setdefault(k, v)
    return validate(ExperimentConfig(**data))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class ResultBundle:
    config: ExperimentConfig
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    diverged: bool = False

    def curve(self, name: str = "curve") -> list[tuple[int, float]]:
        header, rows = self.tables[name]
        assert header == ["iter", "tv"]
        return [(int(r[0]), float(r[1])) for r in rows]

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summary": self.summary,
            "diverged": self.diverged,
            "wall_time_s": self.wall_time,
            "versions": {
                "mirrorlang": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        }

    def write(self, out_dir: str | Path | None = None) -> Path:
        out = Path(out_dir if out_dir is not None else self.config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in self.tables.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([_fmt(v) for v in row] for row in rows)
        (out / "metadata.json").write_text(
            json.dumps(_jsonable(self.metadata()), indent=2, sort_keys=True) + "\n"
        )
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(float(obj)) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# synthetic Dirichlet
# ---------------------------------------------------------------------------


def _edges(cfg: ExperimentConfig, model: DirichletModel) -> np.ndarray:
    if cfg.binning == "uniform":
        return uniform_edges(cfg.bins)
    c = model.concentration
    return beta_marginal_edges(c[0], model.L - c[0], cfg.bins)


def tv_curve(cfg: ExperimentConfig, model: DirichletModel, beta: float):
    """TV of the first coordinate against an exact-oracle histogram at each checkpoint."""
    edges = _edges(cfg, model)
    checkpoints = log_checkpoints(cfg.iters, cfg.checkpoints)
    oracle = histogram_build(oracle_first_coordinate(model, cfg.trials, cfg.seed, 0), edges=edges)
    res = run_ensemble(model, cfg.sampler, beta, cfg.iters, cfg.trials, cfg.seed, checkpoints,
                       batch_size=cfg.batch_size, exp_mode=cfg.exp_mode, workers=cfg.workers,
                       init=cfg.init)
    if res.diverged:
        return None
    curve = []
    for t, xs in zip(res.checkpoints, res.samples):
        curve.append((int(t), tv_distance(histogram_build(np.clip(xs, 0.0, 1.0), edges=edges),
                                          oracle)))
    return curve


def null_tv(cfg: ExperimentConfig, model: DirichletModel) -> float:
    """TV between two independent exact-oracle histograms of ``trials`` draws."""
    edges = _edges(cfg, model)
    a = histogram_build(oracle_first_coordinate(model, cfg.trials, cfg.seed, 0), edges=edges)
    b = histogram_build(oracle_first_coordinate(model, cfg.trials, cfg.seed, 1), edges=edges)
    return tv_distance(a, b)


def run_synthetic_dirichlet(cfg: ExperimentConfig) -> ResultBundle:
    start = time.perf_counter()
    model = dirichlet_model(cfg)
    beta = cfg.beta if cfg.beta is not None else DEFAULT_BETA[cfg.sampler]
    curve = tv_curve(cfg, model, beta)
    bundle = ResultBundle(cfg)
    summary = {"beta": beta, "N_plus_Gamma": model.L, "null_tv": null_tv(cfg, model)}
    if curve is None:
        bundle.diverged = True
    else:
        bundle.tables["curve"] = (["iter", "tv"], [list(p) for p in curve])
        summary["final_tv"] = final_window_tv(curve)
        try:
            summary["slope"] = rate_slope(curve, "auto").slope
        except ValueError:
            summary["slope"] = None
    bundle.summary = summary
    bundle.wall_time = time.perf_counter() - start
    return bundle


def run_grid_search(cfg: ExperimentConfig) -> ResultBundle:
    start = time.perf_counter()
    model = dirichlet_model(cfg)
    grid = cfg.beta_grid or DEFAULT_GRID[cfg.sampler]
    keep = cfg.keep if cfg.keep is not None else min(DEFAULT_KEEP[cfg.sampler], len(grid))
    if keep > len(grid):
        raise ConfigError(f"keep: must not exceed the grid size {len(grid)}")
    bundle = ResultBundle(cfg)
    try:
        result = grid_search(lambda b: tv_curve(cfg, model, b), grid, keep)
    except AllDivergedError as exc:
        bundle.diverged = True
        bundle.summary = {"error": str(exc), "grid": grid}
        bundle.wall_time = time.perf_counter() - start
        return bundle
    rows = [[e.beta, e.final_tv, e.slope if e.slope is not None else "nan"] for e in result.ranked]
    rows += [[e.beta, "nan", "nan"] for e in result.diverged]
    bundle.tables["ranked"] = (["beta", "final_tv", "slope"], rows)
    for e in result.best:
        bundle.tables[f"curve_beta_{_fmt(e.beta)}"] = (["iter", "tv"], [list(p) for p in e.curve])
    bundle.summary = {
        "sampler": cfg.sampler,
        "grid": grid,
        "keep": keep,
        "best_beta": [e.beta for e in result.best],
        "diverged_beta": [e.beta for e in result.diverged],
        "null_tv": null_tv(cfg, model),
    }
    bundle.wall_time = time.perf_counter() - start
    return bundle


# ---------------------------------------------------------------------------
# demos
# ---------------------------------------------------------------------------


def run_cir_demo(cfg: ExperimentConfig) -> ResultBundle:
    """Long-run moments of the reflected Euler scheme against the Gamma law."""
    start = time.perf_counter()
    params = cir_params(cfg)
    betas = cfg.beta_grid or sorted(set(CIR_DEFAULT_GRID) | {cfg.beta}, reverse=True)
    rows = []
    for i, beta in enumerate(betas):
        mean, var = cir_run(params, beta, cfg.iters, block_generator(cfg.seed, i, CIR))
        rows.append([beta, mean, var])
    bundle = ResultBundle(cfg)
    bundle.tables["cir"] = (["beta", "mean", "var"], rows)
    bundle.summary = {
        "target_mean": params.stationary_mean,
        "target_var": params.stationary_var,
        "steps": cfg.iters,
    }
    bundle.wall_time = time.perf_counter() - start
    return bundle


def burg_table(y_grid, target: str = "exponential", c: float = 1.0, h: float = 1e-4):
    """Closed-form and central-difference ``W''`` with the closed-form sign."""
    y = np.asarray(y_grid, dtype=float)
    w = lambda v: burg_calculus(v, target, c)[0]  # noqa: E731
    closed = burg_calculus(y, target, c)[2]
    fd = (w(y + h) - 2 * w(y) + w(y - h)) / h**2
    return [[yi, ci, fi, int(np.sign(ci))] for yi, ci, fi in zip(y, closed, fd)]


def burg_sign_change(target: str = "exponential", c: float = 1.0, lo: float = -10.0,
                     hi: float = -0.05) -> float:
    """Root of the closed-form ``W''`` inside ``(lo, hi)`` by bisection."""
    f = lambda v: float(burg_calculus(v, target, c)[2])  # noqa: E731
    return optimize.bisect(f, lo, hi, xtol=1e-12)


def run_burg_demo(cfg: ExperimentConfig, y_min: float = -10.0, y_max: float = -0.05,
                  points: int = 100, gaussian_c: float = 1.0 / 3.0) -> ResultBundle:
    start = time.perf_counter()
    grid = np.linspace(y_min, y_max, points)
    bundle = ResultBundle(cfg)
    header = ["y", "w2_closed", "w2_fd", "sign"]
    bundle.tables["burg_exponential"] = (header, burg_table(grid, "exponential"))
    bundle.tables["burg_gaussian"] = (header, burg_table(grid, "gaussian", gaussian_c))
    bundle.summary = {
        "sign_change_exponential": burg_sign_change("exponential", 1.0, y_min, y_max),
        "sign_change_gaussian": burg_sign_change("gaussian", gaussian_c, y_min, y_max),
        "gaussian_c": gaussian_c,
    }
    bundle.wall_time = time.perf_counter() - start
    return bundle


def run_product_simplex(cfg: ExperimentConfig) -> ResultBundle:
    """MLD on a product of simplices; per-block first-coordinate TV curves."""
    start = time.perf_counter()
    blocks = product_blocks(cfg)
    target = product_simplex_target(blocks)
    beta = cfg.beta if cfg.beta is not None else 0.5 / max(target.smoothness)
    checkpoints = log_checkpoints(cfg.iters, cfg.checkpoints)
    ck = {int(t): i for i, t in enumerate(checkpoints)}
    n_blocks = -(-cfg.trials // CHAIN_BLOCK)
    gens = [block_generator(cfg.seed, k, NOISE) for k in range(n_blocks)]
    y = np.zeros((n_blocks * CHAIN_BLOCK, target.dimension))
    xi = np.empty_like(y)
    firsts = [s.start for s in target.slices]
    records = np.empty((len(blocks), len(checkpoints), y.shape[0]))
    for t in range(1, cfg.iters + 1):
        for j, g in enumerate(gens):
            g.standard_normal(out=xi[j * CHAIN_BLOCK:(j + 1) * CHAIN_BLOCK])
        y = y - beta * target.grad(y, cfg.exp_mode) + math.sqrt(2 * beta) * xi
        if t in ck:
            if not np.all(np.isfinite(y)):
                raise DivergenceFailure("product-simplex chains diverged")
            x = target_primal(target, y)
            for k, s in enumerate(firsts):
                records[k, ck[t]] = x[:, s]
    bundle = ResultBundle(cfg)
    for k, model in enumerate(blocks):
        c = model.concentration
        edges = (uniform_edges(cfg.bins) if cfg.binning == "uniform"
                 else beta_marginal_edges(c[0], model.L - c[0], cfg.bins))
        oracle = sample_dirichlet_exact(model, block_generator(cfg.seed, 100 + k, ORACLE),
                                        cfg.trials)[:, 0]
        oh = histogram_build(oracle, edges=edges)
        rows = [[int(t), tv_distance(histogram_build(records[k, i, :cfg.trials], edges=edges), oh)]
                for i, t in enumerate(checkpoints)]
        bundle.tables[f"curve_block{k}"] = (["iter", "tv"], rows)
    bundle.summary = {"beta": beta, "block_dims": list(target.block_dims)}
    bundle.wall_time = time.perf_counter() - start
    return bundle


def target_primal(target, y):
    return block_map_apply(BlockMap(target.block_dims), "inverse", y)


DRIVERS = {
    "synthetic-dirichlet": run_synthetic_dirichlet,
    "grid-search": run_grid_search,
    "cir-demo": run_cir_demo,
    "burg-demo": run_burg_demo,
    "product-simplex": run_product_simplex,
}


def run(cfg: ExperimentConfig) -> ResultBundle:
    return DRIVERS[cfg.experiment](cfg)
