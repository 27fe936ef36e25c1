"""Langevin iterations in mirror coordinates, baselines, and chain runners.

Randomness
----------
Every random draw comes from a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=(purpose, block))``.  Chains are grouped in
fixed blocks of :data:`CHAIN_BLOCK`; at each iteration a block's generator
emits one row per chain of the block.  A chain's draws therefore depend only
on ``(seed, chain index)``: not on how many chains run, how they are split
between workers, or whether a single chain is run through
:class:`NoiseStream`.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mirror_core import DomainError, EntropicMap, entropic_grad_h_star
from .targets import (
    DirichletModel,
    ObservationList,
    dirichlet_grad_W,
    dirichlet_potential,
    dirichlet_stochastic_grad_W,
    dual_softmax,
    exp_mode_transform,  # noqa: F401  re-exported
    generic_dual_drift,
    sample_batch,
    stochastic_grad_W_from_tallies,
)

CHAIN_BLOCK = 1024

# spawn-key purposes; fixed forever, changing them changes every result
NOISE, BATCH, ORACLE, CIR, INIT = 0, 1, 2, 3, 4


class DivergenceError(RuntimeError):
    """A chain produced a non-finite state."""


def block_generator(seed: int, block: int, purpose: int = NOISE) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


class NoiseStream:
    """Standard Gaussian draws for one chain.

    Shares its generator layout with :func:`run_ensemble`, so chain ``k`` here
    sees exactly the draws row ``k`` gets inside an ensemble run.
    """

    def __init__(self, seed: int, chain: int, dim: int):
        if chain < 0 or dim < 1:
            raise ValueError("chain index must be >= 0 and dim >= 1")
        self.seed = int(seed)
        self.chain = int(chain)
        self.dim = int(dim)
        block, self._row = divmod(self.chain, CHAIN_BLOCK)
        self._gen = block_generator(self.seed, block, NOISE)
        self._batch_gen = block_generator(self.seed, block, BATCH)

    def normal(self) -> np.ndarray:
        return self._gen.standard_normal((CHAIN_BLOCK, self.dim))[self._row]

    @property
    def batch_rng(self) -> np.random.Generator:
        """Generator reserved for mini-batch selection."""
        return self._batch_gen


@dataclass
class ChainState:
    """Dual iterate ``y``; the primal point is computed on first access."""

    y: np.ndarray
    step_count: int = 0
    _x: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)

    @property
    def x(self) -> np.ndarray:
        if self._x is None:
            self._x = entropic_grad_h_star(self.y)
        return self._x

    @property
    def x_cache(self) -> np.ndarray | None:
        return self._x


@dataclass(frozen=True)
class StepSchedule:
    """Constant step size, or an explicit per-iteration sequence."""

    steps: tuple[float, ...]
    constant: bool = True

    def __post_init__(self):
        arr = np.asarray(self.steps, dtype=float)
        if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("step sizes must be positive and finite")

    @classmethod
    def const(cls, beta: float) -> "StepSchedule":
        return cls((float(beta),), True)

    @classmethod
    def sequence(cls, betas: Sequence[float]) -> "StepSchedule":
        return cls(tuple(float(b) for b in betas), False)

    def at(self, t: int) -> float:
        if self.constant:
            return self.steps[0]
        if t >= len(self.steps):
            raise IndexError(f"schedule has {len(self.steps)} steps, asked for step {t}")
        return self.steps[t]


def _as_schedule(schedule) -> StepSchedule:
    if isinstance(schedule, StepSchedule):
        return schedule
    if np.ndim(schedule) == 0:
        return StepSchedule.const(float(schedule))
    return StepSchedule.sequence(schedule)


# ---------------------------------------------------------------------------
# single-chain kernels
# ---------------------------------------------------------------------------


def mld_step_dual(state: ChainState, grad_W, beta: float, xi) -> ChainState:
    """``y' = y - beta grad_W + sqrt(2 beta) xi``."""
    if not beta > 0:
        raise ValueError("step size must be positive")
    grad_W = np.asarray(grad_W, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not (np.all(np.isfinite(grad_W)) and np.all(np.isfinite(xi))):
        raise DivergenceError("non-finite gradient or noise")
    y = state.y - beta * grad_W + math.sqrt(2.0 * beta) * xi
    return ChainState(y, state.step_count + 1)


def mld_step_primal(state: ChainState, target, beta: float, xi, mirror=None) -> ChainState:
    """Same step with the drift computed from the primal potential.

    ``target`` is a :class:`DirichletModel` or a generic :class:`Potential`.
    """
    if isinstance(target, DirichletModel):
        mirror = mirror or EntropicMap(target.d)
        target = dirichlet_potential(target)
    elif mirror is None:
        mirror = EntropicMap(state.y.shape[-1])
    x = state.x
    if np.any(x <= 0) or np.any(x.sum(axis=-1) >= 1):
        raise DomainError("primal iterate reached the simplex boundary numerically")
    drift = generic_dual_drift(target, mirror, x)
    return mld_step_dual(state, drift, beta, xi)


def mld_run(model: DirichletModel, schedule, T: int, noise: NoiseStream, y0=None,
            exp_mode: str = "exact", record: bool = False):
    """Deterministic-gradient MLD; returns ``(state, trace)``."""
    schedule = _as_schedule(schedule)
    state = ChainState(np.zeros(model.d) if y0 is None else np.array(y0, dtype=float))
    trace = [state.y.copy()] if record else None
    for t in range(T):
        g = dirichlet_grad_W(model, state.y, exp_mode)
        state = mld_step_dual(state, g, schedule.at(t), noise.normal())
        if record:
            trace.append(state.y.copy())
    return state, (np.array(trace) if record else None)


def smld_run(model: DirichletModel, obs: ObservationList, b: int, schedule, T: int,
             noise: NoiseStream, exp_mode: str = "exact", y0=None, record: bool = False,
             batch_rng: np.random.Generator | None = None, replace: bool = False):
    """Mini-batch MLD.

    ``(N / b) sum_{i in B} grad W_i`` is evaluated in closed form from the
    batch tallies.  The primal point is never formed during the run; read
    ``state.x`` when needed.

    Returns
    -------
    state : ChainState
    trace : ndarray of shape (T + 1, d) or None
        Dual iterates including ``y0`` when ``record`` is set.
    """
    if T < 1:
        raise ValueError("need at least one iteration")
    if not 1 <= b <= len(obs):
        raise ValueError(f"batch size must be in 1..{len(obs)}, got {b}")
    schedule = _as_schedule(schedule)
    rng = noise.batch_rng if batch_rng is None else batch_rng
    state = ChainState(np.zeros(model.d) if y0 is None else np.array(y0, dtype=float))
    trace = [state.y.copy()] if record else None
    for t in range(T):
        batch = sample_batch(rng, len(obs), b, replace=replace)
        if replace:
            g = stochastic_grad_W_from_tallies(
                model, np.bincount(obs.labels[batch], minlength=model.d + 1), b, state.y, exp_mode
            )
        else:
            g = dirichlet_stochastic_grad_W(model, obs, batch, state.y, exp_mode)
        state = mld_step_dual(state, g, schedule.at(t), noise.normal())
        if record:
            trace.append(state.y.copy())
    return state, (np.array(trace) if record else None)


def smld_step_size_bound(T: float, R0_sq: float, L: float, d: float, sigma_sq: float) -> float:
    """Largest constant step covered by the mini-batch rate guarantee.

    ``min{ (2 T R0^2 (L d + sigma^2))^(-1/2), 1 / L }``
    """
    for name, v in (("T", T), ("R0_sq", R0_sq), ("L", L), ("d", d)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if not sigma_sq >= 0:
        raise ValueError(f"sigma_sq must be non-negative, got {sigma_sq}")
    return min(1.0 / math.sqrt(2.0 * T * R0_sq * (L * d + sigma_sq)), 1.0 / L)


def dual_mode(model: DirichletModel) -> np.ndarray:
    """Minimizer of the Dirichlet dual potential."""
    c = model.concentration
    return np.log(c[:-1]) - np.log(c[-1])


def default_R0_sq(model: DirichletModel, y0=None) -> float:
    """Heuristic ``|y0 - mode|^2 + d / (N + Gamma)``."""
    y0 = np.zeros(model.d) if y0 is None else np.asarray(y0, dtype=float)
    return float(np.sum((y0 - dual_mode(model)) ** 2) + model.d / model.L)


def estimate_sigma_sq(model: DirichletModel, obs: ObservationList, b: int, y0,
                      rng: np.random.Generator, n_batches: int = 1000) -> float:
    """Mean squared deviation of the mini-batch dual gradient at ``y0``."""
    exact = dirichlet_grad_W(model, y0)
    total = 0.0
    for _ in range(n_batches):
        g = dirichlet_stochastic_grad_W(model, obs, sample_batch(rng, len(obs), b), y0)
        total += float(np.sum((g - exact) ** 2))
    return total / n_batches


# ---------------------------------------------------------------------------
# baseline and oracle
# ---------------------------------------------------------------------------


def sgrld_step(model: DirichletModel, theta, eps: float, xi):
    """One expanded-mean SGRLD step with full-data gradients.

    ``theta' = |theta + eps (n + alpha - theta) + sqrt(2 eps theta) xi|``; the
    sample is ``theta'[:d] / sum(theta')``.  Leading axes index chains.
    """
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not eps >= 0:
        raise ValueError("step size must be non-negative")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(xi))):
        raise DivergenceError("non-finite SGRLD input")
    if np.any(theta <= 0):
        raise DomainError("SGRLD parameters must be strictly positive")
    return np.abs(theta + eps * (model.concentration - theta) + np.sqrt(2.0 * eps * theta) * xi)


def sgrld_sample(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta[..., :-1] / theta.sum(axis=-1, keepdims=True)


def sample_dirichlet_exact(model: DirichletModel, rng: np.random.Generator, size=None):
    """Exact posterior draws via normalized Gamma variables; first ``d`` coordinates."""
    shape = () if size is None else (size,) if np.ndim(size) == 0 else tuple(size)
    g = rng.standard_gamma(model.concentration, size=shape + (model.d + 1,))
    return g[..., :-1] / g.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# CIR demo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CirParams:
    """``dX = a (b - X) dt + c sqrt(X) dB`` in the regime ``2ab >= c^2``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError("CIR parameters a, b, c must be positive")
        if 2 * self.a * self.b < self.c**2:
            raise ValueError(
                f"CIR parameters violate 2ab >= c^2 ({2 * self.a * self.b} < {self.c ** 2})"
            )

    @property
    def stationary_mean(self) -> float:
        return self.b

    @property
    def stationary_var(self) -> float:
        return self.b * self.c**2 / (2 * self.a)


def cir_smld_step(params: CirParams, X: float, beta: float, xi: float) -> float:
    """Euler-Maruyama step, reflected at zero."""
    if not X > 0 or not beta > 0:
        raise ValueError("need X > 0 and beta > 0")
    x = X + beta * params.a * (params.b - X) + params.c * math.sqrt(X * beta) * xi
    return abs(x)


def cir_run(params: CirParams, beta: float, steps: int, rng: np.random.Generator,
            x0: float | None = None, burn_in: int = 0, chunk: int = 65536):
    """Run the reflected scheme; return ``(mean, var)`` of the iterates after burn-in."""
    a, b, c = params.a, params.b, params.c
    x = b if x0 is None else float(x0)
    sb = math.sqrt(beta)
    total = total_sq = 0.0
    count = 0
    t = 0
    while t < steps:
        xis = rng.standard_normal(min(chunk, steps - t)).tolist()
        for xi in xis:
            x = x + beta * a * (b - x) + c * math.sqrt(x) * sb * xi
            if x < 0:
                x = -x
            t += 1
            if t > burn_in:
                total += x
                total_sq += x * x
                count += 1
    mean = total / count
    return mean, total_sq / count - mean * mean


# ---------------------------------------------------------------------------
# vectorized ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """First-coordinate samples of ``trials`` chains at each checkpoint."""

    checkpoints: np.ndarray
    samples: np.ndarray  # (len(checkpoints), trials)
    diverged: bool = False


def _simulate_blocks(args):
    # overflow is reported through the divergence flag, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _simulate(args)


def _simulate(args):
    (model, sampler, beta, iters, blocks, seed, checkpoints, batch_size, exp_mode, coord,
     init) = args
    nb = len(blocks)
    rows = nb * CHAIN_BLOCK
    noise_gens = [block_generator(seed, k, NOISE) for k in blocks]
    batch_gens = [block_generator(seed, k, BATCH) for k in blocks] if sampler == "smld" else None
    c = model.concentration
    dim = model.d + 1 if sampler == "sgrld" else model.d
    if init == "oracle":
        # exact posterior draws: a stationary start
        gammas = np.concatenate([
            block_generator(seed, k, INIT).standard_gamma(c, size=(CHAIN_BLOCK, c.size))
            for k in blocks
        ])
        if sampler == "sgrld":
            state = gammas
        else:
            state = np.log(gammas[:, :-1]) - np.log(gammas[:, -1:])
    elif sampler == "sgrld":
        state = np.tile(c, (rows, 1))
    else:
        state = np.zeros((rows, dim))
    xi = np.empty((rows, dim))
    tallies = np.empty((rows, model.d + 1)) if sampler == "smld" else None
    out = np.empty((len(checkpoints), rows))
    ck = {int(t): i for i, t in enumerate(checkpoints)}
    scale = math.sqrt(2.0 * beta)
    for t in range(1, iters + 1):
        for j, g in enumerate(noise_gens):
            g.standard_normal(out=xi[j * CHAIN_BLOCK:(j + 1) * CHAIN_BLOCK])
        if sampler == "sgrld":
            state += beta * (c - state) + np.sqrt((2.0 * beta) * state) * xi
            np.abs(state, out=state)
        else:
            if sampler == "smld":
                for j, g in enumerate(batch_gens):
                    tallies[j * CHAIN_BLOCK:(j + 1) * CHAIN_BLOCK] = g.multivariate_hypergeometric(
                        model.counts, batch_size, size=CHAIN_BLOCK
                    )
                grad = stochastic_grad_W_from_tallies(model, tallies, batch_size, state, exp_mode)
            else:
                grad = model.L * dual_softmax(state, exp_mode)
                grad -= c[:-1]
            state -= beta * grad
            xi *= scale
            state += xi
        if t in ck:
            if not np.all(np.isfinite(state)):
                return out, True
            if sampler == "sgrld":
                x = state[:, coord] / state.sum(axis=1)
            else:
                x = dual_softmax(state, exp_mode)[:, coord]
            out[ck[t]] = x
    return out, False


def run_ensemble(model: DirichletModel, sampler: str, beta: float, iters: int, trials: int,
                 seed: int, checkpoints: Sequence[int], batch_size: int | None = None,
                 exp_mode: str = "exact", workers: int = 1, coord: int = 0,
                 init: str = "center") -> EnsembleResult:
    """Run ``trials`` independent chains and record coordinate ``coord`` at checkpoints.

    With ``init="center"`` dual samplers (``mld``, ``smld``) start at ``y = 0``
    and ``sgrld`` at ``theta = n + alpha``; ``init="oracle"`` starts every
    chain at an exact posterior draw.  The ``smld`` ensemble draws each chain's
    batch tallies from a multivariate hypergeometric law, which is the law of
    the tallies of a uniform batch drawn without replacement.  With
    ``workers > 1`` chain blocks are split across processes; results are
    identical to the serial run.
    """
    if sampler not in ("mld", "smld", "sgrld"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if sampler == "smld" and not (batch_size and 1 <= batch_size <= model.N):
        raise ValueError("smld needs 1 <= batch_size <= N")
    if init not in ("center", "oracle"):
        raise ValueError(f"unknown init {init!r}")
    if trials < 1 or iters < 1 or not beta > 0:
        raise ValueError("need trials >= 1, iters >= 1, beta > 0")
    checkpoints = np.asarray(sorted(set(int(t) for t in checkpoints)), dtype=int)
    if checkpoints.size == 0 or checkpoints[0] < 1 or checkpoints[-1] > iters:
        raise ValueError("checkpoints must lie in 1..iters")
    n_blocks = -(-trials // CHAIN_BLOCK)
    workers = max(1, min(int(workers), n_blocks))
    groups = [list(g) for g in np.array_split(np.arange(n_blocks), workers)]
    jobs = [
        (model, sampler, float(beta), int(iters), g, int(seed), checkpoints,
         batch_size, exp_mode, coord, init)
        for g in groups
    ]
    if workers == 1:
        results = [_simulate_blocks(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_blocks, jobs))
    diverged = any(div for _, div in results)
    samples = np.concatenate([r for r, _ in results], axis=1)[:, :trials]
    return EnsembleResult(checkpoints, samples, diverged)


def oracle_first_coordinate(model: DirichletModel, size: int, seed: int, stream: int = 0,
                            coord: int = 0) -> np.ndarray:
    """Exact draws of one coordinate from a reserved oracle substream."""
    rng = block_generator(seed, stream, ORACLE)
    return sample_dirichlet_exact(model, rng, size)[:, coord]

