"""Histogram total variation, rate fitting, gradient checks and grid search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

log = logging.getLogger(__name__)

DEFAULT_BINS = 50


class HistogramError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Histogram:
    """Bin counts over ``[0, 1]``; edges are strictly increasing from 0 to 1."""

    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or edges.size < 2 or counts.shape != (edges.size - 1,):
            raise HistogramError("need len(edges) == len(counts) + 1")
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise HistogramError("edges must increase strictly from 0 to 1")
        if np.any(counts < 0):
            raise HistogramError("counts must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        if self.total == 0:
            raise HistogramError("empty histogram has no frequencies")
        return self.counts / self.total


def uniform_edges(bins: int = DEFAULT_BINS) -> np.ndarray:
    if bins < 2:
        raise HistogramError("need at least two bins")
    return np.linspace(0.0, 1.0, bins + 1)


def beta_marginal_edges(a: float, b: float, bins: int = DEFAULT_BINS,
                        tail: float = 1e-6) -> np.ndarray:
    """``bins`` equal-width bins over the central ``1 - 2 tail`` mass of Beta(a, b).

    Two extra bins ``[0, lo)`` and ``[hi, 1]`` catch everything outside, so the
    edges still span the unit interval.  Use this when the marginal is too
    concentrated for uniform bins to resolve it.
    """
    if bins < 2:
        raise HistogramError("need at least two bins")
    dist = stats.beta(a, b)
    lo, hi = dist.ppf(tail), dist.ppf(1.0 - tail)
    inner = np.linspace(lo, hi, bins + 1)
    edges = inner
    if lo > 0.0:
        edges = np.concatenate([[0.0], edges])
    if hi < 1.0:
        edges = np.concatenate([edges, [1.0]])
    return edges


def histogram_build(samples, bins: int = DEFAULT_BINS, edges=None) -> Histogram:
    """Bin samples in ``[0, 1]``; the value 1 lands in the last bin."""
    edges = uniform_edges(bins) if edges is None else np.asarray(edges, dtype=float)
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size and (np.any(~np.isfinite(samples)) or samples.min() < 0 or samples.max() > 1):
        raise HistogramError("samples must lie in [0, 1]")
    idx = np.searchsorted(edges, samples, side="right") - 1
    idx = np.minimum(idx, edges.size - 2)
    return Histogram(edges, np.bincount(idx, minlength=edges.size - 1))


def tv_distance(p: Histogram, q: Histogram) -> float:
    """Half the L1 distance between the normalized histograms."""
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise HistogramError("histograms have different edges")
    return 0.5 * float(np.abs(p.frequencies - q.frequencies).sum())


def wasserstein1d(samples_a, samples_b) -> float:
    """Squared 2-Wasserstein distance between equal-size 1-d samples.

    Uses the monotone (sorted) coupling, which is optimal in one dimension.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or a.size != b.size:
        raise ValueError("need two non-empty samples of equal length")
    return float(np.mean((a - b) ** 2))


def log_checkpoints(iters: int, count: int = 40) -> np.ndarray:
    """Distinct ceil'd points of a geometric grid from 1 to ``iters``."""
    grid = np.ceil(np.geomspace(1, iters, count) - 1e-9).astype(int)
    return np.unique(np.clip(grid, 1, iters))


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    window: tuple[int, int]
    floor: float = 0.0


def _ls(t, v):
    slope, intercept = np.polyfit(np.log(t), np.log(v), 1)
    return float(slope), float(intercept)


def _fit_floor(t, v) -> float:
    """Saturation level ``F`` of ``v ~ A t^s + F`` (least squares in log space)."""
    lv = np.log(v)
    s0, i0 = _ls(t, v)

    def resid(p):
        log_a, s, f = p
        return np.log(np.exp(log_a) * t**s + f) - lv

    fmax = float(v.min())
    res = optimize.least_squares(
        resid,
        x0=[i0, min(s0, -1e-3), 0.1 * fmax],
        bounds=([-np.inf, -10.0, 0.0], [np.inf, 0.0, fmax]),
    )
    return float(res.x[2])


def rate_slope(curve: Sequence[tuple[float, float]], window=None,
               floor_factor: float = 3.0) -> RateFit:
    """Least-squares slope of ``log tv`` against ``log iter``.

    Parameters
    ----------
    curve : sequence of (iter, tv)
    window : (lo, hi), "auto" or None
        ``None`` fits every point; ``(lo, hi)`` fits ``lo <= iter <= hi``.
        ``"auto"`` fits the pre-saturation decay: the leading transient (until
        the curve first falls to half its peak, then up to its largest later
        value) is dropped, the trailing run of local slopes above -0.1 is
        dropped, and so are points below ``floor_factor`` times the saturation
        level estimated from a ``A t^s + F`` fit.
    """
    arr = np.asarray(curve, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("curve must be a sequence of (iter, tv) pairs")
    t, v = arr[:, 0], arr[:, 1]
    floor = 0.0
    if window is None:
        mask = np.ones(t.size, bool)
    elif isinstance(window, str):
        if window != "auto":
            raise ValueError(f"unknown window {window!r}")
        mask, floor = _auto_window(t, v, floor_factor)
    else:
        lo, hi = window
        mask = (t >= lo) & (t <= hi)
    if mask.sum() < 3:
        raise ValueError(f"degenerate window: {int(mask.sum())} points (need 3)")
    if np.any(v[mask] <= 0) or np.any(t[mask] <= 0):
        raise ValueError("iterations and tv must be positive inside the window")
    slope, intercept = _ls(t[mask], v[mask])
    idx = np.flatnonzero(mask)
    return RateFit(slope, intercept, (int(t[idx[0]]), int(t[idx[-1]])), floor)


def _auto_window(t, v, floor_factor):
    n = t.size
    if n < 3 or np.any(v <= 0):
        raise ValueError("auto window needs >= 3 points with positive tv")
    arrival = int(np.argmax(v <= 0.5 * v.max()))
    start = arrival + int(np.argmax(v[arrival:]))
    local = np.diff(np.log(v)) / np.diff(np.log(t))
    end = n - 1
    while end > start and local[end - 1] > -0.1:
        end -= 1
    mask = np.zeros(n, bool)
    mask[start:end + 1] = True
    floor = 0.0
    if mask.sum() >= 4:
        floor = _fit_floor(t[start:], v[start:])
        mask &= v >= floor_factor * floor
    return mask, floor


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def gradient_check(f: Callable, g: Callable, point, h_step: float = 1e-5) -> float:
    """Worst relative mismatch between ``g`` and central differences of ``f``.

    Each coordinate's error is ``|g_i - fd_i| / max(|g_i|, |fd_i|, 1)`` so
    near-zero components are compared absolutely.
    """
    if not h_step > 0:
        raise ValueError("h_step must be positive")
    x = np.asarray(point, dtype=float)
    grad = np.asarray(g(x), dtype=float)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h_step
        hi, lo = float(f(x + e)), float(f(x - e))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"non-finite value near coordinate {i}")
        fd.flat[i] = (hi - lo) / (2 * h_step)
    scale = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1.0)
    return float(np.max(np.abs(grad - fd) / scale))


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------


@dataclass
class GridEntry:
    beta: float
    curve: list[tuple[int, float]]
    final_tv: float
    slope: float | None = None
    diverged: bool = False


@dataclass
class GridResult:
    ranked: list[GridEntry]
    best: list[GridEntry]
    diverged: list[GridEntry] = field(default_factory=list)


class AllDivergedError(RuntimeError):
    pass


def final_window_tv(curve, fraction: float = 0.1) -> float:
    """Mean TV over the last ``fraction`` of checkpoints (at least one)."""
    v = np.asarray([tv for _, tv in curve], dtype=float)
    k = max(1, math.ceil(fraction * v.size))
    return float(v[-k:].mean())


def grid_search(runner: Callable[[float], Sequence[tuple[int, float]] | None],
                step_grid: Sequence[float], keep: int) -> GridResult:
    """Run ``runner(beta)`` for each step size and rank by final-window TV.

    ``runner`` returns the ``(iter, tv)`` curve, or ``None`` / non-finite
    values on divergence.  Ties keep grid order.
    """
    grid = [float(b) for b in step_grid]
    if not grid:
        raise ValueError("step grid is empty")
    if not 1 <= keep <= len(grid):
        raise ValueError(f"keep must be in 1..{len(grid)}")
    ok, bad = [], []
    for beta in grid:
        curve = runner(beta)
        if curve is None or not np.all(np.isfinite([tv for _, tv in curve])):
            log.warning("beta=%g diverged", beta)
            bad.append(GridEntry(beta, [] if curve is None else list(curve), math.nan,
                                 None, True))
            continue
        curve = [(int(i), float(tv)) for i, tv in curve]
        entry = GridEntry(beta, curve, final_window_tv(curve))
        try:
            entry.slope = rate_slope(curve, "auto").slope
        except ValueError:
            entry.slope = None
        ok.append(entry)
    if not ok:
        raise AllDivergedError(f"all runs diverged for grid {grid}")
    ranked = sorted(ok, key=lambda e: e.final_tv)
    return GridResult(ranked, ranked[:keep], bad)
