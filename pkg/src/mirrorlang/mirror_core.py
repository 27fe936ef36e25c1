"""Mirror-map calculus for the probability simplex.

The entropic map ``h(x) = sum_l x_l log x_l + x_{d+1} log x_{d+1}`` acts on
the first ``d`` coordinates of a point in the open simplex, with the implicit
last coordinate ``x_{d+1} = 1 - sum(x)``.  Its gradient ``log(x_l / x_{d+1})``
maps the simplex interior onto all of ``R^d``, and the inverse is a softmax
with an implicit zero logit.

All functions act on the last axis and broadcast over leading axes, so a
``(chains, d)`` array is handled in a single call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """A point lies outside the domain of a mirror map."""


class BlockShapeError(ValueError):
    """A point does not partition into the declared blocks."""


class SimplexPoint(np.ndarray):
    """Read-only array of explicit coordinates that also stores the implicit one.

    When ``x_{d+1}`` is tiny, ``1 - sum(x)`` keeps only a few correct digits,
    so the inverse map records the value it computed directly.  Any array
    derived from a ``SimplexPoint`` (slices, arithmetic) loses the stored
    value and falls back to ``1 - sum(x)``.
    """

    implicit: np.ndarray | None

    def __new__(cls, explicit, implicit):
        obj = np.asarray(explicit, dtype=float).view(cls)
        obj.implicit = np.asarray(implicit, dtype=float)
        obj.setflags(write=False)
        return obj

    def __array_finalize__(self, obj):
        self.implicit = None

    def __reduce__(self):
        return np.asarray(self).__reduce__()


def _interior(x) -> tuple[np.ndarray, np.ndarray]:
    """Validate ``x`` as interior simplex point(s); return ``(x, x_last)``."""
    stored = getattr(x, "implicit", None)
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DomainError("simplex point needs at least one coordinate")
    last = 1.0 - x.sum(axis=-1) if stored is None else stored
    if not (np.all(np.isfinite(x)) and np.all(x > 0) and np.all(last > 0)):
        raise DomainError(
            "point is not in the open simplex: coordinates must be positive "
            "and sum to less than 1"
        )
    return x, last


def as_simplex_point(x) -> np.ndarray:
    """Return ``x`` as a float array after checking it is strictly interior."""
    return _interior(x)[0]


def as_dual_point(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or not np.all(np.isfinite(y)):
        raise DomainError("dual point must be a finite vector")
    return y


def full_simplex(x) -> np.ndarray:
    """Append the implicit category: ``(..., d) -> (..., d+1)``."""
    x, last = _interior(x)
    return np.concatenate([x, last[..., None]], axis=-1)


# ---------------------------------------------------------------------------
# entropic map
# ---------------------------------------------------------------------------


def entropic_h(x):
    """Negative entropy of the full probability vector ``(x, 1 - sum x)``."""
    x, last = _interior(x)
    return np.sum(x * np.log(x), axis=-1) + last * np.log(last)


def entropic_grad_h(x):
    """``log(x_l / x_{d+1})`` for each of the ``d`` explicit coordinates."""
    x, last = _interior(x)
    return np.log(x) - np.log(last)[..., None]


def entropic_h_star(y):
    """Fenchel conjugate ``log(1 + sum exp(y))``, evaluated without overflow."""
    y = np.asarray(y, dtype=float)
    shift = np.maximum(0.0, np.max(y, axis=-1))
    total = np.exp(-shift) + np.sum(np.exp(y - shift[..., None]), axis=-1)
    return shift + np.log(total)


def entropic_grad_h_star(y) -> SimplexPoint:
    """Softmax with an implicit zero logit; the inverse of :func:`entropic_grad_h`."""
    y = np.asarray(y, dtype=float)
    shift = np.maximum(0.0, np.max(y, axis=-1, keepdims=True))
    e = np.exp(y - shift)
    e0 = np.exp(-shift)
    total = e0 + np.sum(e, axis=-1, keepdims=True)
    return SimplexPoint(e / total, (e0 / total)[..., 0])


def entropic_log_det_hess_h(x):
    """``log det`` of ``diag(1/x) + (1/x_{d+1}) 11^T``, i.e. ``-sum_{l<=d+1} log x_l``."""
    x, last = _interior(x)
    return -np.sum(np.log(x), axis=-1) - np.log(last)


def entropic_grad_log_det_hess_h(x):
    x, last = _interior(x)
    return -1.0 / x + (1.0 / last)[..., None]


def entropic_hess_h_solve(x, v):
    """Apply the inverse Hessian ``diag(x) - x x^T`` to ``v``.

    This is the Sherman-Morrison inverse of ``diag(1/x) + (1/x_{d+1}) 11^T``
    and costs ``O(d)``.
    """
    x, _ = _interior(x)
    v = np.asarray(v, dtype=float)
    return x * v - x * np.sum(x * v, axis=-1, keepdims=True)


def entropic_hess_h_apply(x, v):
    """Apply ``diag(1/x) + (1/x_{d+1}) 11^T`` to ``v``."""
    x, last = _interior(x)
    v = np.asarray(v, dtype=float)
    return v / x + (np.sum(v, axis=-1) / last)[..., None]


def softmax_jacobian_apply(p, v):
    """Apply ``diag(p) - p p^T`` (the Hessian of ``h*`` at ``y`` with ``p = grad h*(y)``)."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return p * v - p * np.sum(p * v, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropicMap:
    """Entropic mirror map on the ``dim``-dimensional simplex."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    @property
    def dimension(self) -> int:
        return self.dim

    def grad(self, x):
        return entropic_grad_h(x)

    def grad_star(self, y):
        return entropic_grad_h_star(y)


@dataclass(frozen=True)
class BlockMap:
    """Product of entropic maps acting on consecutive, disjoint blocks."""

    block_dims: tuple[int, ...]

    def __init__(self, block_dims: Sequence[int]):
        dims = tuple(int(d) for d in block_dims)
        if not dims:
            raise ValueError("block map needs at least one block")
        if any(d < 1 for d in dims):
            raise ValueError("block dimensions must be positive")
        object.__setattr__(self, "block_dims", dims)

    @property
    def dimension(self) -> int:
        return sum(self.block_dims)

    @property
    def slices(self) -> list[slice]:
        bounds = np.cumsum((0,) + self.block_dims)
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def grad(self, x):
        return block_map_apply(self, "forward", x)

    def grad_star(self, y):
        return block_map_apply(self, "inverse", y)


@dataclass(frozen=True)
class BurgMap:
    """Burg entropy ``h(x) = -log x`` on ``(0, inf)``; dual domain ``(-inf, 0)``."""

    @property
    def dimension(self) -> int:
        return 1

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("Burg map is defined on (0, inf)")
        return -1.0 / x

    def grad_star(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y >= 0):
            raise DomainError("Burg dual is defined on (-inf, 0)")
        return -1.0 / y


def block_map_apply(mirror: BlockMap, direction: str, point):
    """Apply the entropic gradient (``forward``) or its inverse blockwise."""
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    point = np.asarray(point, dtype=float)
    if point.ndim == 0 or point.shape[-1] != mirror.dimension:
        raise BlockShapeError(
            f"point has {point.shape[-1] if point.ndim else 0} coordinates, "
            f"blocks {mirror.block_dims} need {mirror.dimension}"
        )
    fn = entropic_grad_h if direction == "forward" else entropic_grad_h_star
    return np.concatenate([fn(point[..., s]) for s in mirror.slices], axis=-1)


# ---------------------------------------------------------------------------
# Burg counterexample
# ---------------------------------------------------------------------------


def burg_calculus(y, target: str = "exponential", c: float = 1.0):
    """Dual potential of a 1-d target under the Burg map, with derivatives.

    Parameters
    ----------
    y : float or array
        Dual coordinate(s), all strictly negative.
    target : {"exponential", "gaussian"}
        ``V(x) = x`` or ``V(x) = c x^2`` on ``x > 0``.
    c : float
        Quadratic coefficient of the Gaussian target.

    Returns
    -------
    (W, dW, d2W)
        Values up to an additive constant. For the exponential target
        ``W'' = (-2 - 2y) / y^3``, negative for ``y < -1``; for the Gaussian
        target ``W'' = (6c - 2y^2) / y^4``, negative for ``y < -sqrt(3c)``.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y >= 0):
        raise DomainError("Burg dual potential is defined for y < 0")
    if target == "exponential":
        w = -1.0 / y + 2.0 * np.log(-y)
        dw = 1.0 / y**2 + 2.0 / y
        d2w = (-2.0 - 2.0 * y) / y**3
    elif target == "gaussian":
        if c <= 0:
            raise ValueError("Gaussian coefficient must be positive")
        w = c / y**2 + 2.0 * np.log(-y)
        dw = -2.0 * c / y**3 + 2.0 / y
        d2w = (6.0 * c - 2.0 * y**2) / y**4
    else:
        raise ValueError(f"unknown Burg target {target!r}")
    return w, dw, d2w
