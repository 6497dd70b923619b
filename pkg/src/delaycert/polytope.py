"""Uncertainty polytopes and the vertex tuples the LMI tests run over."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import prod
from typing import Iterator, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, SizeGuardError
from .model import DeltaMatrix, DelayedLfrModel, delta_of_theta

MAX_BOX_DIMENSION = 20
MAX_TUPLES = 10**6


def canonical_key(values) -> tuple:
    """Hashable key after rounding to 12 significant digits."""
    flat = np.asarray(values, dtype=float).ravel()
    return tuple(float(f"{v:.11e}") + 0.0 for v in flat)


class UncertaintyPolytope:
    """V-representation of the parameter set ``Theta``.

    Parameters
    ----------
    vertices : array_like, shape (k, m)
    box : (lower, upper), optional
        Set by :meth:`from_box`; kept so box-shaped signals can be checked
        cheaply and the model file round-trips.
    """

    def __init__(self, vertices, box=None):
        verts = np.atleast_2d(np.asarray(vertices, dtype=float))
        if verts.size == 0:
            raise DimensionError("a polytope needs at least one vertex")
        unique, seen = [], set()
        for v in verts:
            key = tuple(v.tolist())
            if key not in seen:
                seen.add(key)
                unique.append(v)
        self.vertices = np.array(unique)
        self.box = None if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
        self._origin_flag = None

    @classmethod
    def from_box(cls, lower, upper) -> "UncertaintyPolytope":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise DimensionError("box bounds differ in length")
        if np.any(lower > upper):
            raise DimensionError("box lower bound exceeds upper bound")
        m = lower.shape[0]
        if m > MAX_BOX_DIMENSION:
            raise SizeGuardError(f"box of dimension {m} has more than 2^{MAX_BOX_DIMENSION} corners")
        corners = [np.where(bits, upper, lower) for bits in itertools.product((0, 1), repeat=m)]
        return cls(np.array(corners), box=(lower, upper))

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @property
    def origin_flag(self) -> bool:
        if self._origin_flag is None:
            self._origin_flag = self.contains(np.zeros(self.dimension))
        return self._origin_flag

    def contains(self, point, tol: float = 1e-9) -> bool:
        """Convex-hull membership (LP feasibility for the combination weights)."""
        point = np.asarray(point, dtype=float).ravel()
        if point.shape[0] != self.dimension:
            raise DimensionError("point dimension does not match the polytope")
        if self.box is not None:
            lo, hi = self.box
            return bool(np.all(point >= lo - tol) and np.all(point <= hi + tol))
        return convex_weights(self.vertices, point, tol) is not None

    def __eq__(self, other):
        if not isinstance(other, UncertaintyPolytope):
            return NotImplemented
        return {canonical_key(v) for v in self.vertices} == {canonical_key(v) for v in other.vertices}

    def __repr__(self):
        return f"UncertaintyPolytope(m={self.dimension}, vertices={len(self.vertices)})"


def convex_weights(vertices, point, tol: float = 1e-9) -> Optional[np.ndarray]:
    """Weights ``lam >= 0, sum lam = 1`` with ``vertices.T @ lam = point``, or None."""
    V = np.atleast_2d(vertices)
    k = V.shape[0]
    A_eq = np.vstack([V.T, np.ones((1, k))])
    b_eq = np.concatenate([np.asarray(point, float), [1.0]])
    # minimize the L1 residual so near-boundary points are judged with a tolerance
    m1 = A_eq.shape[0]
    c = np.concatenate([np.zeros(k), np.ones(2 * m1)])
    A = np.hstack([A_eq, np.eye(m1), -np.eye(m1)])
    res = linprog(c, A_eq=A, b_eq=b_eq, bounds=[(0, None)] * (k + 2 * m1), method="highs")
    if res.status != 0 or res.fun > tol * (1 + np.abs(b_eq).sum()):
        return None
    return res.x[:k]


def theta_vertices(theta: UncertaintyPolytope) -> list:
    return [v.copy() for v in theta.vertices]


def scale_polytope(theta: UncertaintyPolytope, sigma: float) -> UncertaintyPolytope:
    """``sigma * Theta``; vertices scaled and exact duplicates merged."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    box = None if theta.box is None else (sigma * theta.box[0], sigma * theta.box[1])
    return UncertaintyPolytope(sigma * theta.vertices, box=box)


def sample_theta(theta: UncertaintyPolytope, count: int, seed: int = 0) -> np.ndarray:
    """Sub-convex combinations ``sum lam_k v_k`` with ``lam >= 0, sum lam <= 1``.

    A slack weight on the origin makes ``sum lam <= 1``; points are therefore
    inside ``Theta`` whenever ``Theta`` contains the origin.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    k = len(theta.vertices)
    lam = rng.dirichlet(np.ones(k + 1), size=count)[:, :k]
    return lam @ theta.vertices


# --------------------------------------------------------------------------
# Delta vertices and vertex tuples
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VertexTuple:
    """One choice ``(k_0, ..., k_r)`` of per-block Delta vertices (1-based)."""

    indices: tuple
    deltas: tuple

    def __len__(self):
        return len(self.indices)


def delta_vertex_sets(model: DelayedLfrModel, dedup: bool = True) -> list:
    """Per block, the Delta matrices obtained at the vertices of Theta."""
    out = []
    verts = model.theta.vertices
    for i, block in enumerate(model.blocks):
        deltas, seen = [], set()
        for v in verts:
            delta = delta_of_theta(block, v, i)
            key = canonical_key(np.diag(delta.values))
            if dedup and key in seen:
                continue
            seen.add(key)
            deltas.append(delta)
        out.append(deltas)
    return out


def vertex_counts(model: DelayedLfrModel, dedup: bool = True) -> tuple:
    """``(per-block counts, v, v_bar)``.

    ``v_bar`` is the raw product over blocks of the number of Theta vertices
    mapped through each block; ``v`` is the number of tuples actually
    enumerated (equal to ``v_bar`` when ``dedup`` is off).
    """
    sets = delta_vertex_sets(model, dedup)
    raw = len(model.theta.vertices)
    counts = [len(s) for s in sets]
    return counts, prod(counts), raw ** len(model.blocks)


def vertex_tuples(model: DelayedLfrModel, dedup: bool = True,
                  max_tuples: int = MAX_TUPLES) -> Iterator[VertexTuple]:
    """All tuples of the Cartesian product of the per-block vertex sets.

    Order is lexicographic in ``(k_0, ..., k_r)``.
    """
    sets = delta_vertex_sets(model, dedup)
    total = prod(len(s) for s in sets)
    if total > max_tuples:
        raise SizeGuardError(f"{total} vertex tuples exceed the limit of {max_tuples}")
    ranges = [range(len(s)) for s in sets]
    for combo in itertools.product(*ranges):
        yield VertexTuple(tuple(k + 1 for k in combo),
                          tuple(sets[i][k] for i, k in enumerate(combo)))


def zero_deltas(model: DelayedLfrModel) -> tuple:
    """The Delta tuple realized at ``theta = 0``."""
    return tuple(DeltaMatrix(np.zeros((b.d, b.d)), i) for i, b in enumerate(model.blocks))
