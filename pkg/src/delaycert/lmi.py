"""Dense assembly of the vertex LMIs.

Every ``assemble_*`` function returns the symmetric matrix whose negative
definiteness is the stability test at one realization of the uncertainty.
All of them are affine in the decision variables held by
:class:`DecisionVars`.

Block layouts (``x`` = current state, ``x{i}`` = ``x(t - h_i)``, ``w{i}`` =
loop signal ``p_i`` of block ``i``, ``z{i},{j}`` = integrand ``x(s - h_j)``
over ``[t - h_i, t]``)::

    cor2, cor1           x | x1..xr
    thm1, cor3, cor4     x | x1..xr | w0..wr
    thm2, cor5           x | z1,0..z1,r .. zr,0..zr,r | w0..wr
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, HypothesisError
from .model import DelayedLfrModel, lfr_value

DELAY_INDEPENDENT = ("cor1", "cor2", "cor3", "cor4", "thm1")
DELAY_DEPENDENT = ("thm2", "cor5")
TESTS = DELAY_INDEPENDENT + DELAY_DEPENDENT


@dataclass
class DecisionVars:
    """Decision matrices of one LMI instance.

    ``S`` is a list of ``r`` matrices for the delay-independent tests and a
    list of ``r`` lists of ``r + 1`` matrices (``S[i-1][j]``) for ``thm2`` and
    ``cor5``. ``M``, ``G``, ``H`` hold one entry per LFR block; ``G[i]`` is
    ``n x d_i`` and ``H[i]``/``M[i]`` are ``d_i x d_i``. Each test reads only
    the slots it needs.
    """

    P: np.ndarray
    S: list = field(default_factory=list)
    M: list = field(default_factory=list)
    G: list = field(default_factory=list)
    H: list = field(default_factory=list)

    def map(self, fn, *others) -> "DecisionVars":
        """Apply ``fn`` leafwise across this and ``others`` (same structure)."""

        def walk(a, *bs):
            if isinstance(a, list):
                return [walk(x, *(b[k] for b in bs)) for k, x in enumerate(a)]
            return fn(a, *bs)

        return DecisionVars(*(walk(getattr(self, f), *(getattr(o, f) for o in others))
                              for f in ("P", "S", "M", "G", "H")))


@dataclass
class AssembledLmi:
    matrix: np.ndarray
    layout: dict
    test_id: str
    vertex_tuple: Optional[tuple] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def block(self, row: str, col: str) -> np.ndarray:
        return self.matrix[self.layout[row], self.layout[col]]


class _Blocks:
    """Symmetric block matrix filled by named row/column groups."""

    def __init__(self, groups):
        self.layout = {}
        start = 0
        for name, size in groups:
            self.layout[name] = slice(start, start + size)
            start += size
        self.Q = np.zeros((start, start))

    def diag(self, name, block):
        sl = self.layout[name]
        self.Q[sl, sl] += 0.5 * (block + block.T)

    def off(self, row, col, block):
        rs, cs = self.layout[row], self.layout[col]
        self.Q[rs, cs] += block
        self.Q[cs, rs] += block.T

    def result(self, test_id, vertex_tuple=None):
        return AssembledLmi(self.Q, self.layout, test_id, vertex_tuple)


def empty_vars(model: DelayedLfrModel, test_id: str) -> DecisionVars:
    """Zero-valued variables shaped for ``test_id``."""
    n, r = model.n, model.r
    sizes = model.block_sizes
    if test_id in DELAY_DEPENDENT:
        S = [[np.zeros((n, n)) for _ in range(r + 1)] for _ in range(r)]
    else:
        S = [np.zeros((n, n)) for _ in range(r)]
    return DecisionVars(
        P=np.zeros((n, n)), S=S,
        M=[np.zeros((d, d)) for d in sizes],
        G=[np.zeros((n, d)) for d in sizes],
        H=[np.zeros((d, d)) for d in sizes])


def _check(model, vars, deltas=None):
    n = model.n
    if vars.P.shape != (n, n):
        raise DimensionError(f"P must be {n}x{n}")
    if deltas is not None:
        if len(deltas) != model.r + 1:
            raise DimensionError(f"need {model.r + 1} Delta matrices, got {len(deltas)}")
        for b, dlt in zip(model.blocks, deltas):
            vals = getattr(dlt, "values", dlt)
            if np.shape(vals) != (b.d, b.d):
                raise DimensionError(f"Delta of shape {np.shape(vals)} for a block with d={b.d}")
    # multiplier lists may be left empty; missing entries are zero
    sizes = model.block_sizes

    def fill(items, shape_of):
        items = list(items)
        return items + [np.zeros(shape_of(d)) for d in sizes[len(items):]]

    return DecisionVars(vars.P, vars.S, fill(vars.M, lambda d: (d, d)),
                        fill(vars.G, lambda d: (n, d)), fill(vars.H, lambda d: (d, d)))


def _dvals(delta):
    return np.asarray(getattr(delta, "values", delta), dtype=float)


def _lyap(A, P):
    return A.T @ P + P @ A


def _x_groups(model):
    return [("x", model.n)] + [(f"x{i}", model.n) for i in range(1, model.r + 1)]


def _w_groups(model):
    return [(f"w{i}", b.d) for i, b in enumerate(model.blocks)]


def _finsler(block, G, H, delta):
    """Multiplier blocks for ``Cp y + (Dpq Delta - I) w = 0`` scaled by ``[G; H]``.

    Returns ``(yy, yw, ww)``: the contributions to the ``(y, y)``, ``(y, w)``
    and ``(w, w)`` blocks.
    """
    DD = block.Dpq @ delta
    yy = G @ block.Cp + block.Cp.T @ G.T
    yw = G @ DD - G + block.Cp.T @ H.T
    ww = H @ DD + DD.T @ H.T - H - H.T
    return yy, yw, ww


def assemble_cor2(model: DelayedLfrModel, vars: DecisionVars) -> AssembledLmi:
    """Nominal delay-independent test at ``theta = 0`` (size ``n (r + 1)``)."""
    vars = _check(model, vars)
    A = model.nominal_matrices()
    P = vars.P
    Q = _Blocks(_x_groups(model))
    Q.diag("x", _lyap(A[0], P) + sum(vars.S, np.zeros_like(P)))
    for i in range(1, model.r + 1):
        Q.off("x", f"x{i}", P @ A[i])
        Q.diag(f"x{i}", -vars.S[i - 1])
    return Q.result("cor2")


def assemble_thm1(model: DelayedLfrModel, vars: DecisionVars, deltas,
                  vertex_tuple=None) -> AssembledLmi:
    """Delay-independent test with multipliers (size ``n (r + 1) + d``)."""
    vars = _check(model, vars, deltas)
    A = model.nominal_matrices()
    P = vars.P
    Q = _Blocks(_x_groups(model) + _w_groups(model))
    b0 = model.blocks[0]
    D0 = _dvals(deltas[0])
    yy, yw, ww = _finsler(b0, vars.G[0], vars.H[0], D0)
    Q.diag("x", _lyap(A[0], P) + sum(vars.S, np.zeros_like(P)) + yy)
    Q.off("x", "w0", P @ b0.Bq @ D0 + yw)
    Q.diag("w0", ww)
    for i in range(1, model.r + 1):
        bi = model.blocks[i]
        Di = _dvals(deltas[i])
        yy, yw, ww = _finsler(bi, vars.G[i], vars.H[i], Di)
        Q.off("x", f"x{i}", P @ A[i])
        Q.off("x", f"w{i}", P @ bi.Bq @ Di)
        Q.diag(f"x{i}", yy - vars.S[i - 1])
        Q.off(f"x{i}", f"w{i}", yw)
        Q.diag(f"w{i}", ww)
    return Q.result("thm1", vertex_tuple)


def assemble_cor1(model: DelayedLfrModel, vars: DecisionVars, deltas,
                  threshold: float = 1e-8, vertex_tuple=None) -> AssembledLmi:
    """Loop-resolved form of :func:`assemble_thm1` (size ``n (r + 1)``).

    The loop signal is eliminated through ``w_i = (I - Dpq_i Delta_i)^{-1} Cp_i y_i``.
    Raises :class:`~delaycert.errors.WellPosednessError` when the loop is singular.
    """
    vars = _check(model, vars, deltas)
    A = model.nominal_matrices()
    P = vars.P
    Q = _Blocks(_x_groups(model))
    resolved = []
    for i, b in enumerate(model.blocks):
        Di = _dvals(deltas[i])
        # raises on ill-posedness; the returned matrix is not needed here
        lfr_value(b, Di, threshold)
        W = np.linalg.solve(np.eye(b.d) - b.Dpq @ Di, b.Cp) if b.d else np.zeros((0, model.n))
        yy, yw, ww = _finsler(b, vars.G[i], vars.H[i], Di)
        resolved.append((Di, W, yy + yw @ W + W.T @ yw.T + W.T @ ww @ W))
    D0, W0, t11 = resolved[0]
    b0 = model.blocks[0]
    t11 = t11 + P @ b0.Bq @ D0 @ W0 + (P @ b0.Bq @ D0 @ W0).T
    Q.diag("x", _lyap(A[0], P) + sum(vars.S, np.zeros_like(P)) + t11)
    for i in range(1, model.r + 1):
        bi = model.blocks[i]
        Di, Wi, t22 = resolved[i]
        Q.off("x", f"x{i}", P @ A[i] + P @ bi.Bq @ Di @ Wi)
        Q.diag(f"x{i}", -vars.S[i - 1] + t22)
    return Q.result("cor1", vertex_tuple)


def check_unit_degrees(model: DelayedLfrModel) -> None:
    """Per-vertex scalings need every parameter to enter each block at most once."""
    for i, b in enumerate(model.blocks):
        if any(s > 1 for s in b.degrees):
            raise HypothesisError(
                f"per-vertex scalings need LFR degrees <= 1; block {i} has {list(b.degrees)}")


def assemble_cor3(model: DelayedLfrModel, vars: DecisionVars, deltas,
                  mode: str = "common", vertex_tuple=None) -> AssembledLmi:
    """Scaled vertex test (size ``n (r + 1) + d``).

    ``vars.M[i]`` must already be the scaling for this tuple. ``mode`` is
    ``"common"`` (one ``M_i`` for all vertices) or ``"per-vertex"``, which
    only adds the unit-degree hypothesis check.
    """
    if mode not in ("common", "per-vertex"):
        raise ValueError(f"unknown scaling mode {mode!r}")
    if mode == "per-vertex":
        check_unit_degrees(model)
    vars = _check(model, vars, deltas)
    A = model.nominal_matrices()
    P = vars.P
    test_id = "cor3" if mode == "common" else "cor4"
    Q = _Blocks(_x_groups(model) + _w_groups(model))
    b0 = model.blocks[0]
    M0 = vars.M[0]
    DD0 = b0.Dpq @ _dvals(deltas[0])
    Q.diag("x", _lyap(A[0], P) + sum(vars.S, np.zeros_like(P)) + b0.Cp.T @ M0 @ b0.Cp)
    Q.off("x", "w0", P @ b0.Bq @ _dvals(deltas[0]) + b0.Cp.T @ M0 @ DD0)
    Q.diag("w0", -M0 + DD0.T @ M0 @ DD0)
    for i in range(1, model.r + 1):
        bi = model.blocks[i]
        Mi = vars.M[i]
        Di = _dvals(deltas[i])
        DDi = bi.Dpq @ Di
        Q.off("x", f"x{i}", P @ A[i])
        Q.off("x", f"w{i}", P @ bi.Bq @ Di)
        Q.diag(f"x{i}", bi.Cp.T @ Mi @ bi.Cp - vars.S[i - 1])
        Q.off(f"x{i}", f"w{i}", bi.Cp.T @ Mi @ DDi)
        Q.diag(f"w{i}", -Mi + DDi.T @ Mi @ DDi)
    return Q.result(test_id, vertex_tuple)


def _check_hbar(model, hbar):
    hbar = [float(h) for h in hbar]
    if len(hbar) != model.r:
        raise DimensionError(f"need {model.r} delay bounds, got {len(hbar)}")
    if any(h < 0 for h in hbar):
        raise ValueError("delay bounds must be nonnegative")
    return hbar


def _z_groups(model):
    return [(f"z{i},{j}", model.n) for i in range(1, model.r + 1) for j in range(model.r + 1)]


def _delay_dependent_core(model, vars, deltas, hbar, integrand_deltas, threshold):
    """Shared ``x`` row and ``z`` blocks of thm2 / cor5.

    ``integrand_deltas[i-1]`` is the Delta tuple used for the integrand of
    delay ``i``; it defaults to ``deltas``.
    """
    r = model.r
    hbar = _check_hbar(model, hbar)
    if integrand_deltas is None:
        integrand_deltas = [deltas] * r
    if len(integrand_deltas) != r:
        raise DimensionError(f"need {r} integrand Delta tuples")
    P = vars.P
    A_now = [lfr_value(b, _dvals(dl), threshold) for b, dl in zip(model.blocks, deltas)]
    A_sum = sum(model.nominal_matrices())
    Q11 = _lyap(A_sum, P)
    offdiag, zdiag = {}, {}
    for i in range(1, r + 1):
        A_int = [lfr_value(b, _dvals(dl), threshold) for b, dl in zip(model.blocks, integrand_deltas[i - 1])]
        left = hbar[i - 1] * P @ A_now[i]
        for j in range(r + 1):
            Sij = vars.S[i - 1][j]
            Q11 = Q11 + hbar[i - 1] * Sij
            offdiag[f"z{i},{j}"] = left @ A_int[j]
            zdiag[f"z{i},{j}"] = -hbar[i - 1] * Sij
    return Q11, offdiag, zdiag


def assemble_thm2(model: DelayedLfrModel, vars: DecisionVars, deltas, hbar,
                  integrand_deltas=None, threshold: float = 1e-8,
                  vertex_tuple=None) -> AssembledLmi:
    """Delay-dependent test for ``h_i in [0, hbar_i]`` (size ``n + n (r + 1) r + d``).

    Every loop signal ``w_i`` is driven by the current state, so the
    multipliers ``G[i]``, ``H[i]`` all couple ``x`` with ``w_i``. The integral
    coupling uses the realized products ``A_i(Delta) A_j(Delta')``; at
    ``Delta = 0`` it is the nominal ``hbar_i P A0_i A0_j``.
    """
    if model.r == 0:
        raise HypothesisError("delay-dependent tests need at least one delay")
    vars = _check(model, vars, deltas)
    Q11, offdiag, zdiag = _delay_dependent_core(model, vars, deltas, hbar, integrand_deltas, threshold)
    P = vars.P
    Q = _Blocks([("x", model.n)] + _z_groups(model) + _w_groups(model))
    for i, b in enumerate(model.blocks):
        Di = _dvals(deltas[i])
        yy, yw, ww = _finsler(b, vars.G[i], vars.H[i], Di)
        Q11 = Q11 + yy
        Q.off("x", f"w{i}", P @ b.Bq @ Di + yw)
        Q.diag(f"w{i}", ww)
    Q.diag("x", Q11)
    for name, blk in offdiag.items():
        Q.off("x", name, blk)
        Q.diag(name, zdiag[name])
    return Q.result("thm2", vertex_tuple)


def assemble_cor5(model: DelayedLfrModel, vars: DecisionVars, deltas, hbar,
                  integrand_deltas=None, threshold: float = 1e-8,
                  vertex_tuple=None) -> AssembledLmi:
    """Scaled delay-dependent vertex test (layout of :func:`assemble_thm2`)."""
    if model.r == 0:
        raise HypothesisError("delay-dependent tests need at least one delay")
    vars = _check(model, vars, deltas)
    Q11, offdiag, zdiag = _delay_dependent_core(model, vars, deltas, hbar, integrand_deltas, threshold)
    P = vars.P
    Q = _Blocks([("x", model.n)] + _z_groups(model) + _w_groups(model))
    for i, b in enumerate(model.blocks):
        Mi = vars.M[i]
        Di = _dvals(deltas[i])
        DD = b.Dpq @ Di
        Q11 = Q11 + b.Cp.T @ Mi @ b.Cp
        Q.off("x", f"w{i}", P @ b.Bq @ Di + b.Cp.T @ Mi @ DD)
        Q.diag(f"w{i}", -Mi + DD.T @ Mi @ DD)
    Q.diag("x", Q11)
    for name, blk in offdiag.items():
        Q.off("x", name, blk)
        Q.diag(name, zdiag[name])
    return Q.result("cor5", vertex_tuple)


def expected_size(model: DelayedLfrModel, test_id: str) -> int:
    n, r, d = model.n, model.r, model.d
    return {
        "cor1": n * (r + 1), "cor2": n * (r + 1),
        "cor3": n * (r + 1) + d, "cor4": n * (r + 1) + d, "thm1": n * (r + 1) + d,
        "thm2": n + n * (r + 1) * r + d, "cor5": n + n * (r + 1) * r + d,
    }[test_id]
