"""Delayed LFR system description and pointwise evaluation.

Each delay channel ``i = 0..r`` (``h_0 = 0``) carries a matrix function

    A_i(theta) = A0_i + Bq_i Delta_i(theta) (I - Dpq_i Delta_i(theta))^{-1} Cp_i,
    Delta_i(theta) = diag(theta_1 I_{s_1i}, ..., theta_m I_{s_mi}),

and the unforced system is ``x'(t) = sum_i A_i(theta(t)) x(t - h_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, WellPosednessError

WELL_POSED_THRESHOLD = 1e-8


def _as_matrix(value, rows, cols, name):
    arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        arr = np.zeros((rows, cols))
    if arr.ndim != 2 or arr.shape != (rows, cols):
        raise DimensionError(f"{name} must be {rows}x{cols}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LfrBlock:
    """LFR data ``(A0, Bq, Cp, Dpq)`` of one delay channel.

    ``degrees[j]`` is the multiplicity of ``theta_j`` in ``Delta_i``; the loop
    size is ``d = sum(degrees)``. ``d = 0`` gives a parameter-free channel.
    Empty ``Bq``/``Cp``/``Dpq`` are accepted and reshaped from the degrees.
    """

    A0: np.ndarray
    Bq: np.ndarray
    Cp: np.ndarray
    Dpq: np.ndarray
    degrees: tuple

    def __post_init__(self):
        A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        degrees = tuple(int(s) for s in self.degrees)
        n = A0.shape[0]
        d = sum(degrees)

        def reshape(value, rows, cols):
            arr = np.asarray(value, dtype=float)
            if arr.size == 0:
                return np.zeros((rows, cols))
            return arr.reshape(rows, cols) if arr.ndim < 2 and arr.size == rows * cols else arr

        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "Bq", reshape(self.Bq, n, d))
        object.__setattr__(self, "Cp", reshape(self.Cp, d, n))
        object.__setattr__(self, "Dpq", reshape(self.Dpq, d, d))

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def d(self) -> int:
        return sum(self.degrees)

    def check(self, n: Optional[int] = None, m: Optional[int] = None) -> None:
        """Raise :class:`DimensionError` unless all shapes agree."""
        n = self.n if n is None else n
        d = self.d
        if any(s < 0 for s in self.degrees):
            raise DimensionError(f"negative LFR degree in {self.degrees}")
        if m is not None and len(self.degrees) != m:
            raise DimensionError(f"expected {m} degrees, got {len(self.degrees)}")
        _as_matrix(self.A0, n, n, "A0")
        _as_matrix(self.Bq, n, d, "Bq")
        _as_matrix(self.Cp, d, n, "Cp")
        _as_matrix(self.Dpq, d, d, "Dpq")


@dataclass(frozen=True)
class DeltaMatrix:
    """Realized ``Delta_i`` for one block: a repeated-scalar diagonal matrix."""

    values: np.ndarray
    block_index: int = 0

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)

    def matches(self, degrees: Sequence[int]) -> bool:
        """True when the diagonal follows the ``theta_j I_{s_j}`` pattern."""
        vals = self.values
        d = sum(degrees)
        if vals.shape != (d, d) or np.any(vals != np.diag(np.diag(vals))):
            return False
        diag = np.diag(vals)
        start = 0
        for s in degrees:
            chunk = diag[start:start + s]
            if s and np.any(chunk != chunk[0]):
                return False
            start += s
        return True


@dataclass(frozen=True)
class DelayedLfrModel:
    """Point-delay system with one LFR block per delay channel.

    ``blocks[0]`` is the delay-free channel; ``blocks[i]`` multiplies
    ``x(t - delays[i-1])``. ``theta`` is an :class:`UncertaintyPolytope`
    (kept duck-typed here to avoid an import cycle). ``forced`` may hold the
    ``B``, ``C``, ``D`` matrices of the forced system; they are carried along
    but never analyzed.
    """

    n: int
    m: int
    r: int
    delays: tuple
    blocks: tuple
    theta: object
    forced: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(float(h) for h in self.delays))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def h(self) -> float:
        """Largest delay (0 for a delay-free model)."""
        return max(self.delays, default=0.0)

    @property
    def d(self) -> int:
        return sum(b.d for b in self.blocks)

    @property
    def block_sizes(self) -> list:
        return [b.d for b in self.blocks]

    def nominal_matrices(self) -> list:
        return [b.A0 for b in self.blocks]

    def with_theta(self, theta) -> "DelayedLfrModel":
        return DelayedLfrModel(self.n, self.m, self.r, self.delays, self.blocks, theta, self.forced)

    def with_delays(self, delays) -> "DelayedLfrModel":
        return DelayedLfrModel(self.n, self.m, self.r, tuple(delays), self.blocks, self.theta, self.forced)


def delta_of_theta(block: LfrBlock, theta, block_index: int = 0) -> DeltaMatrix:
    """Build ``Delta_i(theta) = diag(theta_1 I_{s_1}, ..., theta_m I_{s_m})``."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != len(block.degrees):
        raise DimensionError(
            f"theta has length {theta.shape[0]}, block expects {len(block.degrees)}")
    diag = np.repeat(theta, block.degrees)
    return DeltaMatrix(np.diag(diag), block_index)


def _delta_values(block: LfrBlock, delta) -> np.ndarray:
    values = delta.values if isinstance(delta, DeltaMatrix) else np.asarray(delta, dtype=float)
    values = np.atleast_2d(values) if values.size else np.zeros((0, 0))
    if values.shape != (block.d, block.d):
        raise DimensionError(f"Delta must be {block.d}x{block.d}, got {values.shape}")
    return values


def well_posedness_margin(block: LfrBlock, delta) -> float:
    """Smallest singular value of ``I - Dpq @ Delta`` (1.0 for ``d = 0``)."""
    values = _delta_values(block, delta)
    if block.d == 0:
        return 1.0
    loop = np.eye(block.d) - block.Dpq @ values
    return float(np.linalg.svd(loop, compute_uv=False)[-1])


def lfr_value(block: LfrBlock, delta, threshold: float = 0.0) -> np.ndarray:
    """Evaluate the block at a realized ``Delta`` (not necessarily from a theta).

    Raises
    ------
    WellPosednessError
        If the smallest singular value of ``I - Dpq Delta`` is ``<= threshold``
        or the solve fails.
    """
    values = _delta_values(block, delta)
    if block.d == 0:
        return block.A0.copy()
    loop = np.eye(block.d) - block.Dpq @ values
    sigma_min = np.linalg.svd(loop, compute_uv=False)[-1]
    if not sigma_min > threshold:
        raise WellPosednessError(
            f"I - Dpq*Delta is singular (sigma_min={sigma_min:.3e})",
            determinant=abs(np.linalg.det(loop)),
            block_index=getattr(delta, "block_index", None))
    return block.A0 + block.Bq @ values @ np.linalg.solve(loop, block.Cp)


def eval_lfr_block(block: LfrBlock, theta, threshold: float = 0.0) -> np.ndarray:
    """``A_i(theta)`` for one block."""
    return lfr_value(block, delta_of_theta(block, theta), threshold)


def eval_model(model: DelayedLfrModel, theta, threshold: float = 0.0) -> list:
    """All ``A_i(theta)``, ``i = 0..r``."""
    return [eval_lfr_block(b, theta, threshold) for b in model.blocks]


# --------------------------------------------------------------------------
# second LFR (one shared loop) <-> first LFR (one loop per delay channel)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SharedLoopLfr:
    """An LFR in which all delay channels share a single uncertainty loop.

    ``form="simo"``: ``x' = sum A0_i x_i + Bq q``, ``p = sum Cp_i x_i + Dpq q``.
    ``form="miso"``: ``x' = sum (A0_i x_i + Bq_i q(t - h_i))``, ``p = Cp x + Dpq q``.

    In both, ``q = Delta(theta) p`` with ``Delta = diag(theta_j I_{s_j})``.
    For ``simo`` pass one ``Bq`` and a list ``Cp``; for ``miso`` a list
    ``Bq`` and one ``Cp``.
    """

    form: str
    A0: tuple
    Bq: object
    Cp: object
    Dpq: np.ndarray
    degrees: tuple

    @property
    def r(self) -> int:
        return len(self.A0) - 1

    @property
    def d(self) -> int:
        return sum(self.degrees)


def _check_shared(lfr: SharedLoopLfr):
    if lfr.form not in ("simo", "miso"):
        raise DimensionError(f"unknown LFR form {lfr.form!r}")
    A0 = [np.atleast_2d(np.asarray(a, dtype=float)) for a in lfr.A0]
    n = A0[0].shape[0]
    d = lfr.d
    for a in A0:
        _as_matrix(a, n, n, "A0")
    Dpq = _as_matrix(lfr.Dpq, d, d, "Dpq")
    if lfr.form == "simo":
        Bq = [_as_matrix(lfr.Bq, n, d, "Bq")] * len(A0)
        if len(lfr.Cp) != len(A0):
            raise DimensionError("simo form needs one Cp per delay channel")
        Cp = [_as_matrix(c, d, n, "Cp") for c in lfr.Cp]
    else:
        if len(lfr.Bq) != len(A0):
            raise DimensionError("miso form needs one Bq per delay channel")
        Bq = [_as_matrix(b, n, d, "Bq") for b in lfr.Bq]
        Cp = [_as_matrix(lfr.Cp, d, n, "Cp")] * len(A0)
    return A0, Bq, Cp, Dpq


def second_to_first_lfr(lfr: SharedLoopLfr, delays, theta) -> DelayedLfrModel:
    """Rewrite a shared-loop LFR as one LFR block per delay channel.

    Every channel inherits the full shared loop: in ``simo`` form channel
    ``i`` gets ``(Bq, Cp_i, Dpq)``, in ``miso`` form ``(Bq_i, Cp, Dpq)``.
    """
    A0, Bq, Cp, Dpq = _check_shared(lfr)
    if len(delays) != lfr.r:
        raise DimensionError(f"expected {lfr.r} delays, got {len(delays)}")
    blocks = tuple(LfrBlock(a, b, c, Dpq.copy(), lfr.degrees) for a, b, c in zip(A0, Bq, Cp))
    return DelayedLfrModel(A0[0].shape[0], len(lfr.degrees), lfr.r, tuple(delays), blocks, theta)


def first_to_second_lfr(model: DelayedLfrModel, form: str = "simo") -> SharedLoopLfr:
    """Stack per-channel blocks into one shared loop.

    ``Bq = [Bq_0, ..., Bq_r]``, ``Cp`` column-stacked, ``Dpq`` and ``Delta``
    block diagonal. The stacked loop is then permuted so that ``Delta`` reads
    ``diag(theta_1 I, ..., theta_m I)`` again.
    """
    n, m = model.n, model.m
    sizes = model.block_sizes
    d = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    Dpq = np.zeros((d, d))
    param = np.zeros(d, dtype=int)
    Bq_list, Cp_list = [], []
    for i, b in enumerate(model.blocks):
        sl = slice(offsets[i], offsets[i + 1])
        Dpq[sl, sl] = b.Dpq
        param[sl] = np.repeat(np.arange(m), b.degrees)
        Bi = np.zeros((n, d))
        Bi[:, sl] = b.Bq
        Ci = np.zeros((d, n))
        Ci[sl, :] = b.Cp
        Bq_list.append(Bi)
        Cp_list.append(Ci)
    perm = np.argsort(param, kind="stable")
    degrees = tuple(int(np.sum(param == j)) for j in range(m))
    Dpq = Dpq[np.ix_(perm, perm)]
    Bq_list = [B[:, perm] for B in Bq_list]
    Cp_list = [C[perm, :] for C in Cp_list]
    A0 = tuple(b.A0.copy() for b in model.blocks)
    if form == "simo":
        return SharedLoopLfr("simo", A0, sum(Bq_list), tuple(Cp_list), Dpq, degrees)
    if form == "miso":
        # channel-i outputs live on disjoint rows, so one stacked Cp feeds every Bq_i
        return SharedLoopLfr("miso", A0, tuple(Bq_list), sum(Cp_list), Dpq, degrees)
    raise DimensionError(f"unknown LFR form {form!r}")


def eval_shared_loop(lfr: SharedLoopLfr, theta) -> list:
    """Per-channel matrices ``A_i(theta)`` of a shared-loop LFR."""
    A0, Bq, Cp, Dpq = _check_shared(lfr)
    theta = np.asarray(theta, dtype=float).ravel()
    delta = np.diag(np.repeat(theta, lfr.degrees))
    if lfr.d == 0:
        return [a.copy() for a in A0]
    gain = delta @ np.linalg.solve(np.eye(lfr.d) - Dpq @ delta, np.eye(lfr.d))
    return [a + b @ gain @ c for a, b, c in zip(A0, Bq, Cp)]


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def to_dict(self):
        return {"code": self.code, "message": self.message}


def validate_model(model: DelayedLfrModel, threshold: float = WELL_POSED_THRESHOLD,
                   interior_samples: int = 0, seed: int = 0) -> list:
    """Return the list of invariant violations (empty when the model is usable)."""
    diags = []

    def add(code, message):
        diags.append(Diagnostic(code, message))

    if model.n < 1:
        add("bad-dimension", f"state dimension n={model.n} must be positive")
    if model.r < 0 or len(model.delays) != model.r:
        add("delay-count", f"r={model.r} but {len(model.delays)} delays given")
    for k, h in enumerate(model.delays, start=1):
        if not np.isfinite(h):
            add("nonfinite-delay", f"delay h{k}={h} is not finite")
        elif h <= 0:
            add("nonpositive-delay", f"nonpositive delay h{k}={h}")
    if len(model.blocks) != model.r + 1:
        add("block-count", f"expected {model.r + 1} blocks, got {len(model.blocks)}")
    shapes_ok = True
    for i, b in enumerate(model.blocks):
        try:
            b.check(model.n, model.m)
        except DimensionError as exc:
            shapes_ok = False
            add("block-dimension", f"block {i}: {exc}")
            continue
        mats = (b.A0, b.Bq, b.Cp, b.Dpq)
        if not all(np.all(np.isfinite(a)) for a in mats):
            add("nonfinite-entry", f"block {i} has non-finite entries")
    theta = model.theta
    if theta is None:
        add("missing-theta", "no uncertainty polytope")
        return diags
    if theta.dimension != model.m:
        add("theta-dimension", f"polytope dimension {theta.dimension} != m={model.m}")
        return diags
    if not np.all(np.isfinite(theta.vertices)):
        add("nonfinite-vertex", "polytope has non-finite vertices")
        return diags
    if not theta.contains(np.zeros(model.m)):
        add("origin-not-in-polytope", "origin not in polytope")
    if shapes_ok and len(model.blocks) == model.r + 1:
        points = list(theta.vertices)
        if interior_samples:
            from .polytope import sample_theta

            points.extend(sample_theta(theta, interior_samples, seed))
        for i, b in enumerate(model.blocks):
            worst = min(well_posedness_margin(b, delta_of_theta(b, p)) for p in points)
            if not worst > threshold:
                add("ill-posed", f"block {i}: well-posedness margin {worst:.3e} <= {threshold:g}")
    return diags
