"""Primal potentials on the simplex and their duals under the entropic map.

A Dirichlet posterior ``p(x) ∝ prod x_l^(n_l + a_l - 1)`` is neither convex
nor concave in ``x``, but its push-forward under ``grad h`` has the potential

    W(y) = -sum_{l<=d} (n_l + a_l) y_l + (N + Gamma) h*(y),

which is strictly convex with ``(N + Gamma)``-Lipschitz gradient.  Additive
normalization constants are dropped everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mirror_core import (
    DomainError,
    EntropicMap,
    _interior,
    entropic_grad_h_star,
    entropic_grad_log_det_hess_h,
    entropic_h_star,
    entropic_hess_h_solve,
    entropic_log_det_hess_h,
    softmax_jacobian_apply,
)


class BatchError(ValueError):
    """Mini-batch indices are out of range or repeated."""


@dataclass(frozen=True, eq=False)
class DirichletModel:
    """Category counts and prior parameters over ``d + 1`` categories."""

    counts: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        alphas = np.asarray(self.alphas, dtype=float)
        if counts.ndim != 1 or alphas.ndim != 1:
            raise ValueError("counts and alphas must be 1-d sequences")
        if counts.shape != alphas.shape:
            raise ValueError(
                f"counts ({counts.size}) and alphas ({alphas.size}) differ in length"
            )
        if counts.size < 2:
            raise ValueError("need at least two categories (d >= 1)")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0) or np.any(
            counts != np.round(counts)
        ):
            raise ValueError("counts must be non-negative integers")
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0):
            raise ValueError("alphas must be positive")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        alphas = alphas.copy()
        alphas.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def from_dict(cls, data: dict) -> "DirichletModel":
        unknown = set(data) - {"counts", "alphas"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        try:
            return cls(data["counts"], data["alphas"])
        except KeyError as exc:
            raise ValueError(f"model is missing {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "alphas": self.alphas.tolist()}

    @property
    def d(self) -> int:
        return self.counts.size - 1

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def Gamma(self) -> float:
        return float(self.alphas.sum())

    @property
    def L(self) -> float:
        """``N + Gamma``; also the smoothness constant of the dual potential."""
        return float(self.counts.sum() + self.alphas.sum())

    @property
    def concentration(self) -> np.ndarray:
        """Posterior Dirichlet parameters ``n + alpha``."""
        return self.counts + self.alphas

    def __eq__(self, other):
        if not isinstance(other, DirichletModel):
            return NotImplemented
        return np.array_equal(self.counts, other.counts) and np.array_equal(
            self.alphas, other.alphas
        )

    def __hash__(self):
        return hash((self.counts.tobytes(), self.alphas.tobytes()))


def synthetic_benchmark_model() -> DirichletModel:
    """Sparse 11-category posterior: counts (10000, 10, 10, 0, ..., 0), alpha 0.1."""
    counts = [10000, 10, 10] + [0] * 8
    return DirichletModel(counts, [0.1] * 11)


@dataclass(frozen=True, eq=False)
class ObservationList:
    """Category label (0-based) of each of the ``N`` observations."""

    labels: np.ndarray
    n_categories: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-d sequence")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_categories):
            raise ValueError(f"labels must lie in 0..{self.n_categories - 1}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "ObservationList":
        """Canonical order: all of category 0, then category 1, and so on."""
        counts = np.asarray(counts, dtype=np.int64)
        return cls(np.repeat(np.arange(counts.size), counts), counts.size)

    def __len__(self) -> int:
        return self.labels.size

    def tallies(self, batch=None) -> np.ndarray:
        labels = self.labels if batch is None else self.labels[check_batch(batch, len(self))]
        return np.bincount(labels, minlength=self.n_categories)


def check_batch(batch, n: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.int64).ravel()
    if batch.size < 1 or batch.size > n:
        raise BatchError(f"batch size must be in 1..{n}, got {batch.size}")
    if batch.min() < 0 or batch.max() >= n:
        raise BatchError(f"batch index out of range 0..{n - 1}")
    if np.unique(batch).size != batch.size:
        raise BatchError("batch contains duplicate indices")
    return batch


def sample_batch(rng: np.random.Generator, n: int, b: int, replace: bool = False) -> np.ndarray:
    """Draw ``b`` observation indices uniformly, without replacement by default."""
    if not 1 <= b <= n:
        raise BatchError(f"batch size must be in 1..{n}, got {b}")
    return rng.choice(n, size=b, replace=replace)


# ---------------------------------------------------------------------------
# closed-form Dirichlet potentials
# ---------------------------------------------------------------------------


def dirichlet_V(model: DirichletModel, x):
    full = np.concatenate(_split_full(x), axis=-1)
    return -np.sum((model.concentration - 1.0) * np.log(full), axis=-1)


def dirichlet_grad_V(model: DirichletModel, x):
    x, last = _interior(x)
    w = model.concentration - 1.0
    return -w[:-1] / x + (w[-1] / last)[..., None]


def dirichlet_W(model: DirichletModel, y):
    y = np.asarray(y, dtype=float)
    return -y @ model.concentration[:-1] + model.L * entropic_h_star(y)


def dirichlet_grad_W(model: DirichletModel, y, exp_mode: str = "exact"):
    p = dual_softmax(y, exp_mode)
    return -model.concentration[:-1] + model.L * p


def dirichlet_stochastic_grad_W(
    model: DirichletModel, obs: ObservationList, batch, y, exp_mode: str = "exact"
):
    """Mini-batch estimate ``-(N m_l / b + a_l) + (N + Gamma) softmax(y)_l``."""
    batch = check_batch(batch, len(obs))
    m = obs.tallies(batch)
    return stochastic_grad_W_from_tallies(model, m, batch.size, y, exp_mode)


def stochastic_grad_W_from_tallies(model: DirichletModel, tallies, b: int, y, exp_mode="exact"):
    """Same estimator as :func:`dirichlet_stochastic_grad_W` from batch tallies.

    ``tallies`` may carry leading axes (one row per chain).
    """
    tallies = np.asarray(tallies, dtype=float)
    p = dual_softmax(y, exp_mode)
    return -(model.N * tallies[..., :-1] / b + model.alphas[:-1]) + model.L * p


def dirichlet_hess_W_apply(model: DirichletModel, y, v):
    return model.L * softmax_jacobian_apply(entropic_grad_h_star(y), v)


def dual_softmax(y, exp_mode: str = "exact"):
    """Softmax with implicit zero logit, exact or with ``exp(y) ~ max(0, 1 + y)``."""
    if exp_mode == "exact":
        return entropic_grad_h_star(y)
    if exp_mode == "linearized":
        t = exp_mode_transform(y, "linearized")
        return t / (1.0 + np.sum(t, axis=-1, keepdims=True))
    raise ValueError(f"exp_mode must be 'exact' or 'linearized', got {exp_mode!r}")


def exp_mode_transform(y, mode: str = "exact"):
    """``exp(y)`` or its clipped linearization ``max(0, 1 + y)``."""
    y = np.asarray(y, dtype=float)
    if mode == "exact":
        return np.exp(y)
    if mode == "linearized":
        return np.maximum(0.0, 1.0 + y)
    raise ValueError(f"exp_mode must be 'exact' or 'linearized', got {mode!r}")


# per-observation components (closed form)


def dirichlet_dual_component(model: DirichletModel, label: int, y):
    """Dual of one observation's potential, ``W_i``, with its gradient.

    ``W_i(y) = -sum_l (1{l = c_i} + a_l / N) y_l + (1 + Gamma / N) h*(y)``.
    The ``N``-fold sum of these over the data is ``W``.
    """
    y = np.asarray(y, dtype=float)
    N = model.N
    coef = model.alphas[:-1] / N
    coef = coef + (np.arange(model.d) == label)
    scale = 1.0 + model.Gamma / N
    value = -y @ coef + scale * entropic_h_star(y)
    grad = -coef + scale * entropic_grad_h_star(y)
    return value, grad


def dirichlet_primal_component_grad(model: DirichletModel, label: int, x):
    """Gradient of ``V_i(x) = -log x_{c_i} - (1/N) sum_l (a_l - 1) log x_l``."""
    x, last = _interior(x)
    w = (model.alphas - 1.0) / model.N
    w = w + (np.arange(model.d + 1) == label)
    return -w[:-1] / x + (w[-1] / last)[..., None]


def _split_full(x):
    x, last = _interior(x)
    return x, last[..., None]


# ---------------------------------------------------------------------------
# generic construction through the Monge-Ampere relation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """A primal potential given by callbacks.

    ``value(x)`` and ``grad(x)`` take a point with ``d`` explicit simplex
    coordinates; ``contains(x)`` reports domain membership.
    """

    value: Callable
    grad: Callable
    contains: Callable = field(default=lambda x: True)


def dirichlet_potential(model: DirichletModel) -> Potential:
    return Potential(
        value=lambda x: dirichlet_V(model, x),
        grad=lambda x: dirichlet_grad_V(model, x),
        contains=_in_simplex,
    )


def _in_simplex(x) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(x > 0) and np.all(x.sum(axis=-1) < 1))


def _check_entropic(mirror, x):
    if not isinstance(mirror, EntropicMap):
        raise TypeError("generic dual construction supports the entropic map only")
    if np.shape(x)[-1] != mirror.dim:
        raise ValueError(f"point has {np.shape(x)[-1]} coordinates, map expects {mirror.dim}")


def generic_dual_drift(potential: Potential, mirror: EntropicMap, x):
    """``(grad W o grad h)(x) = (hess h(x))^-1 (grad V(x) + grad log det hess h(x))``."""
    _check_entropic(mirror, x)
    if not potential.contains(x):
        raise DomainError("point is outside the potential's domain")
    rhs = np.asarray(potential.grad(x), dtype=float) + entropic_grad_log_det_hess_h(x)
    return entropic_hess_h_solve(x, rhs)


def generic_dual_component(potential: Potential, mirror: EntropicMap, n_terms: int, y):
    """Dual of one of ``n_terms`` additive pieces of a primal potential.

    Returns ``W_i(y) = V_i(x) + log det hess h(x) / n_terms`` at ``x = grad h*(y)``
    (up to a constant) and its gradient
    ``hess h*(y) (grad V_i(x) + grad log det hess h(x) / n_terms)``.
    """
    y = np.asarray(y, dtype=float)
    x = entropic_grad_h_star(y)
    _check_entropic(mirror, x)
    if not potential.contains(x):
        raise DomainError("mapped point is outside the potential's domain")
    value = potential.value(x) + entropic_log_det_hess_h(x) / n_terms
    rhs = np.asarray(potential.grad(x), dtype=float) + entropic_grad_log_det_hess_h(x) / n_terms
    return value, softmax_jacobian_apply(x, rhs)


# ---------------------------------------------------------------------------
# products of simplices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductDirichletDual:
    """Dual potential of independent Dirichlet blocks, one entropic map per block."""

    blocks: tuple[DirichletModel, ...]

    @property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(m.d for m in self.blocks)

    @property
    def dimension(self) -> int:
        return sum(self.block_dims)

    @property
    def slices(self) -> list[slice]:
        bounds = np.cumsum((0,) + self.block_dims)
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    @property
    def smoothness(self) -> tuple[float, ...]:
        """Per-block Hessian bound ``N_k + Gamma_k``."""
        return tuple(m.L for m in self.blocks)

    def _split(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 0 or y.shape[-1] != self.dimension:
            raise ValueError(f"dual point must have {self.dimension} coordinates")
        return [y[..., s] for s in self.slices]

    def value(self, y):
        return sum(dirichlet_W(m, part) for m, part in zip(self.blocks, self._split(y)))

    def grad(self, y, exp_mode: str = "exact"):
        parts = self._split(y)
        return np.concatenate(
            [dirichlet_grad_W(m, part, exp_mode) for m, part in zip(self.blocks, parts)],
            axis=-1,
        )

    def hess_apply(self, y, v):
        v_parts = self._split(v)
        return np.concatenate(
            [
                dirichlet_hess_W_apply(m, part, vp)
                for m, part, vp in zip(self.blocks, self._split(y), v_parts)
            ],
            axis=-1,
        )


def product_simplex_target(blocks: Sequence[DirichletModel]) -> ProductDirichletDual:
    blocks = tuple(blocks)
    if not blocks:
        raise ValueError("product target needs at least one block")
    return ProductDirichletDual(blocks)
