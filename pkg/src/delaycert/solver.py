"""Feasibility search over vertex LMI families, certificates and bisections.

The decision variables of a test are packed into one vector ``x``. Every
vertex constraint is stored as an explicit affine map
``Q_c(x) = F0_c + sum_k x_k F_ck``, extracted once by evaluating the
assembly functions on coordinate vectors. The search then minimizes the
convex function

    phi(x) = max_c [lambda_max(Q_c(x)) + tol * (1 + max|Q_c(x)|)]

by projected subgradient steps. ``phi(x) <= 0`` on a projected point
is a certificate. Failure to get there within the budget means "not
certified", never "unstable".
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import lmi
from .errors import (DimensionError, HypothesisError, MarginUndefinedError,
                     NumericalError, SizeGuardError)
from .lmi import DELAY_DEPENDENT, TESTS, DecisionVars
from .model import DelayedLfrModel, Diagnostic
from .polytope import MAX_TUPLES, scale_polytope, vertex_counts, vertex_tuples, zero_deltas

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 5000
DEFAULT_RESTARTS = 3
STALL_WINDOW = 250
SPREAD = 0.1
_SQRT2 = math.sqrt(2.0)


def verify_nd(matrix) -> float:
    """Largest eigenvalue of the symmetric part of ``matrix``."""
    A = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries")
    if A.size == 0:
        return -math.inf
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


def strictness(matrix, tol: float = DEFAULT_TOL) -> float:
    """Required gap below zero for ``matrix < 0``: ``tol * (1 + max|matrix|)``."""
    return tol * (1.0 + float(np.max(np.abs(matrix), initial=0.0)))


# --------------------------------------------------------------------------
# problem data
# --------------------------------------------------------------------------

@dataclass
class Slot:
    """One named matrix unknown inside the packed vector."""

    name: str
    shape: tuple
    symmetric: bool
    psd: bool
    offset: int = 0

    @property
    def size(self) -> int:
        rows, cols = self.shape
        return rows * (rows + 1) // 2 if self.symmetric else rows * cols

    def unpack(self, x) -> np.ndarray:
        seg = x[self.offset:self.offset + self.size]
        rows, cols = self.shape
        if not self.symmetric:
            return seg.reshape(rows, cols).copy()
        iu = np.triu_indices(rows)
        out = np.zeros((rows, rows))
        scale = np.where(iu[0] == iu[1], 1.0, 1.0 / _SQRT2)
        out[iu] = seg * scale
        return out + np.triu(out, 1).T

    def pack(self, value, x) -> None:
        value = np.asarray(value, dtype=float).reshape(self.shape)
        if not self.symmetric:
            x[self.offset:self.offset + self.size] = value.ravel()
            return
        iu = np.triu_indices(self.shape[0])
        sym = 0.5 * (value + value.T)
        scale = np.where(iu[0] == iu[1], 1.0, _SQRT2)
        x[self.offset:self.offset + self.size] = sym[iu] * scale


@dataclass
class Constraint:
    """``Q(x) = offset + sum_k x[index[k]] * basis[k]`` required ``< 0``."""

    label: str
    vertex_tuple: tuple
    offset: np.ndarray
    index: np.ndarray
    basis: np.ndarray
    keep: Optional[np.ndarray] = None

    def matrix(self, x) -> np.ndarray:
        if self.index.size == 0:
            return self.offset.copy()
        return self.offset + np.tensordot(x[self.index], self.basis, axes=1)


@dataclass
class LmiProblem:
    model: DelayedLfrModel
    test_id: str
    slots: list
    constraints: list
    tol: float = DEFAULT_TOL
    side_floor: float = DEFAULT_TOL
    hbar: Optional[list] = None
    dedup: bool = True
    multipliers: str = "per-vertex"
    vertex_info: dict = field(default_factory=dict)
    _builders: list = field(default_factory=list, repr=False)

    @property
    def n_unknowns(self) -> int:
        return sum(s.size for s in self.slots)

    def slot(self, name) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def unpack(self, x) -> dict:
        return {s.name: s.unpack(x) for s in self.slots}

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.n_unknowns)
        for s in self.slots:
            if s.name in values:
                s.pack(values[s.name], x)
        return x

    def matrices(self, x) -> list:
        return [c.matrix(x) for c in self.constraints]

    def assembled(self, values: dict) -> list:
        """Re-assemble every constraint from named values (independent of the affine maps)."""
        out = []
        for c, build in zip(self.constraints, self._builders):
            Q = build(values).matrix
            if c.keep is not None:
                Q = Q[np.ix_(c.keep, c.keep)]
            out.append(Q)
        return out

    def project(self, x) -> np.ndarray:
        """Clip the spectrum of every positive-definite slot at ``side_floor``."""
        y = x.copy()
        for s in self.slots:
            if s.psd:
                val = s.unpack(y)
                w, V = np.linalg.eigh(val)
                if w[0] < self.side_floor:
                    s.pack((V * np.maximum(w, self.side_floor)) @ V.T, y)
        return y

    def objective(self, x) -> float:
        """``max_c lambda_max(Q_c(x))``; convex in ``x``."""
        return max(verify_nd(Q) for Q in self.matrices(x))

    def side_margin(self, x) -> float:
        vals = [np.linalg.eigvalsh(s.unpack(x))[0] for s in self.slots if s.psd]
        return min(vals, default=math.inf)


def _sym_slot(name, n, psd=True):
    return Slot(name, (n, n), True, psd)


def _full_slot(name, rows, cols):
    return Slot(name, (rows, cols), False, False)


def _tuple_label(indices):
    return "(" + ",".join(str(k) for k in indices) + ")"


def build_problem(model: DelayedLfrModel, test_id: str, hbar=None, dedup: bool = True,
                  multipliers: str = "per-vertex", tol: float = DEFAULT_TOL,
                  threshold: float = 1e-8, max_tuples: int = MAX_TUPLES) -> LmiProblem:
    """Collect every vertex constraint of ``test_id`` for ``model``.

    Parameters
    ----------
    hbar : sequence of float, optional
        Delay bounds for ``thm2``/``cor5``; defaults to the model's delays.
        Rows that vanish identically because some bound is zero are dropped.
    multipliers : {"per-vertex", "shared"}
        Whether ``thm1``/``cor1``/``thm2`` use one ``(G, H)`` per vertex tuple
        or one set for all tuples.
    """
    if test_id not in TESTS:
        raise ValueError(f"unknown test {test_id!r}; choose from {', '.join(TESTS)}")
    if multipliers not in ("per-vertex", "shared"):
        raise ValueError(f"unknown multiplier mode {multipliers!r}")
    if test_id == "cor4":
        lmi.check_unit_degrees(model)
    n, r = model.n, model.r
    slots = [_sym_slot("P", n)]
    if test_id in DELAY_DEPENDENT:
        if r == 0:
            raise HypothesisError("delay-dependent tests need at least one delay")
        hbar = list(model.delays) if hbar is None else [float(h) for h in hbar]
        if len(hbar) != r:
            raise DimensionError(f"need {r} delay bounds, got {len(hbar)}")
        if any(h < 0 for h in hbar):
            raise ValueError("delay bounds must be nonnegative")
        s_names = [[f"S{i},{j}" for j in range(r + 1)] for i in range(1, r + 1)]
        slots += [_sym_slot(nm, n) for row in s_names for nm in row]
    else:
        hbar = None
        s_names = [f"S{i}" for i in range(1, r + 1)]
        slots += [_sym_slot(nm, n) for nm in s_names]

    tuples = [zero_deltas(model)] if test_id == "cor2" else None
    index_tuples = [(1,) * (r + 1)] if test_id == "cor2" else None
    if tuples is None:
        vts = list(vertex_tuples(model, dedup, max_tuples))
        tuples = [vt.deltas for vt in vts]
        index_tuples = [vt.indices for vt in vts]
    counts, v, vbar = vertex_counts(model, dedup)
    sizes = model.block_sizes

    def n_of(values, name, shape):
        return values.get(name, np.zeros(shape))

    def s_vals(values):
        if test_id in DELAY_DEPENDENT:
            return [[values[nm] for nm in row] for row in s_names]
        return [values[nm] for nm in s_names]

    def slot_once(slot):
        if all(s.name != slot.name for s in slots):
            slots.append(slot)

    entries = []  # (label, indices, builder, slot names)
    if test_id in ("cor1", "thm1", "thm2"):
        for t_idx, (idx, deltas) in enumerate(zip(index_tuples, tuples)):
            tag = "" if multipliers == "shared" else "@" + _tuple_label(idx)
            g_names = [f"G{i}{tag}" for i in range(r + 1)]
            h_names = [f"H{i}{tag}" for i in range(r + 1)]
            for i, d in enumerate(sizes):
                if d:
                    slot_once(_full_slot(g_names[i], n, d))
                    slot_once(_full_slot(h_names[i], d, d))
            if test_id == "thm2":
                combos = itertools.product(range(len(tuples)), repeat=r)
            else:
                combos = [()]
            for combo in combos:
                def build(values, deltas=deltas, combo=combo, g_names=g_names, h_names=h_names, idx=idx):
                    vars = DecisionVars(
                        P=values["P"], S=s_vals(values),
                        G=[n_of(values, g_names[i], (n, d)) for i, d in enumerate(sizes)],
                        H=[n_of(values, h_names[i], (d, d)) for i, d in enumerate(sizes)])
                    if test_id == "thm1":
                        return lmi.assemble_thm1(model, vars, deltas, vertex_tuple=idx)
                    if test_id == "cor1":
                        return lmi.assemble_cor1(model, vars, deltas, threshold, vertex_tuple=idx)
                    return lmi.assemble_thm2(model, vars, deltas, hbar,
                                             [tuples[c] for c in combo], threshold, vertex_tuple=idx)
                label = _tuple_label(idx) + "".join("|" + _tuple_label(index_tuples[c]) for c in combo)
                entries.append((label, idx, build, ["P"] + _flat(s_names) + g_names + h_names))
    elif test_id in ("cor3", "cor4", "cor5"):
        for idx, deltas in zip(index_tuples, tuples):
            if test_id == "cor4":
                m_names = [f"M{i}@k{idx[i]}" for i in range(r + 1)]
            else:
                m_names = [f"M{i}" for i in range(r + 1)]
            for i, d in enumerate(sizes):
                if d:
                    slot_once(_sym_slot(m_names[i], d))
            combos = itertools.product(range(len(tuples)), repeat=r) if test_id == "cor5" else [()]
            for combo in combos:
                def build(values, deltas=deltas, combo=combo, m_names=m_names, idx=idx):
                    vars = DecisionVars(
                        P=values["P"], S=s_vals(values),
                        M=[n_of(values, m_names[i], (d, d)) for i, d in enumerate(sizes)])
                    if test_id == "cor5":
                        return lmi.assemble_cor5(model, vars, deltas, hbar,
                                                 [tuples[c] for c in combo], threshold, vertex_tuple=idx)
                    mode = "common" if test_id == "cor3" else "per-vertex"
                    return lmi.assemble_cor3(model, vars, deltas, mode, vertex_tuple=idx)
                label = _tuple_label(idx) + "".join("|" + _tuple_label(index_tuples[c]) for c in combo)
                entries.append((label, idx, build, ["P"] + _flat(s_names) + m_names))
    else:
        def build(values):
            return lmi.assemble_cor2(model, DecisionVars(P=values["P"], S=s_vals(values)))
        entries.append(("nominal", index_tuples[0], build, ["P"] + s_names))

    if len(entries) > max_tuples:
        raise SizeGuardError(f"{len(entries)} constraints exceed the limit of {max_tuples}")

    offset = 0
    for s in slots:
        s.offset = offset
        offset += s.size
    problem = LmiProblem(model, test_id, slots, [], tol, tol, hbar, dedup, multipliers,
                         {"per_block": counts, "v": v, "v_bar": vbar})
    drop_null = hbar is not None and any(h == 0 for h in hbar)
    names = {s.name: s for s in slots}
    for label, idx, build, used in entries:
        cons, _ = _extract(problem, build, [names[u] for u in used if u in names], drop_null)
        cons.label, cons.vertex_tuple = label, idx
        problem.constraints.append(cons)
        problem._builders.append(build)
    _check_affine(problem)
    return problem


def _check_affine(problem, seed=0):
    """Midpoint check: the stored affine maps reproduce a fresh assembly.

    A random pair ``x1, x2`` is drawn; the map at ``(x1 + x2)/2`` must equal
    both the mean of the maps at ``x1``, ``x2`` and the direct assembly.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, problem.n_unknowns))
    mid = 0.5 * (x1 + x2)
    direct = problem.assembled(problem.unpack(mid))
    for c, Q in zip(problem.constraints, direct):
        Qm = c.matrix(mid)
        scale = 1.0 + np.max(np.abs(Qm), initial=0.0)
        if (np.max(np.abs(Qm - 0.5 * (c.matrix(x1) + c.matrix(x2))), initial=0.0) > 1e-9 * scale
                or np.max(np.abs(Qm - Q), initial=0.0) > 1e-9 * scale):
            raise NumericalError(f"constraint {c.label} is not affine in the unknowns")


def _flat(names):
    out = []
    for item in names:
        out.extend(item if isinstance(item, list) else [item])
    return out


def _extract(problem, build, used_slots, drop_null):
    """Affine map of one constraint, read off by evaluating on coordinate vectors."""
    N = problem.n_unknowns
    x = np.zeros(N)
    F0 = build(problem.unpack(x)).matrix
    idx, basis = [], []
    for s in used_slots:
        for k in range(s.offset, s.offset + s.size):
            x[k] = 1.0
            Fk = build(problem.unpack(x)).matrix - F0
            x[k] = 0.0
            if np.max(np.abs(Fk), initial=0.0) > 1e-13 * (1.0 + np.max(np.abs(F0), initial=0.0)):
                idx.append(k)
                basis.append(Fk)
    basis = np.array(basis) if basis else np.zeros((0,) + F0.shape)
    keep = None
    if drop_null:
        active = np.any(F0 != 0, axis=1)
        if basis.size:
            active |= np.any(basis != 0, axis=(0, 2))
        if not np.all(active):
            keep = np.flatnonzero(active)
            F0 = F0[np.ix_(keep, keep)]
            basis = basis[:, keep][:, :, keep]
    return Constraint("", (), F0, np.array(idx, dtype=int), basis, keep), build


# --------------------------------------------------------------------------
# search
# --------------------------------------------------------------------------

@dataclass
class Certificate:
    test_id: str
    variables: dict
    margin: float
    iterations: int
    tolerance: float
    hbar: Optional[list] = None
    dedup: bool = True
    multipliers: str = "per-vertex"
    start: int = 0

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "tolerance": self.tolerance,
            "margin": self.margin,
            "iterations": self.iterations,
            "hbar": self.hbar,
            "dedup": self.dedup,
            "multipliers": self.multipliers,
            "start": self.start,
            "variables": {k: np.asarray(v).tolist() for k, v in self.variables.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        return cls(
            test_id=data["test_id"],
            variables={k: np.array(v, dtype=float) for k, v in data["variables"].items()},
            margin=float(data["margin"]), iterations=int(data.get("iterations", 0)),
            tolerance=float(data["tolerance"]), hbar=data.get("hbar"),
            dedup=bool(data.get("dedup", True)), multipliers=data.get("multipliers", "per-vertex"),
            start=int(data.get("start", 0)))


@dataclass
class FailureReport:
    """The budget ran out before a certificate appeared (not an infeasibility proof)."""

    test_id: str
    best_value: float
    iterations: int
    tolerance: float
    reason: str = "budget exhausted"

    def to_dict(self) -> dict:
        return {"test_id": self.test_id, "best_value": self.best_value,
                "iterations": self.iterations, "tolerance": self.tolerance, "reason": self.reason}


def _initial_points(problem: LmiProblem, restarts: int, seed: int) -> list:
    """Seeded starts: identity, random SPD, Lyapunov-based ``P``."""
    model = problem.model
    n = model.n
    rng = np.random.default_rng(seed)
    starts = []
    for k in range(restarts):
        values = {}
        if k % 3 == 2:
            P = _lyapunov_seed(model, problem.test_id)
        elif k % 3 == 1:
            P = _random_spd(rng, n)
        else:
            P = np.eye(n)
        values["P"] = P
        for s in problem.slots[1:]:
            if not s.psd:
                continue
            if k % 3 == 1:
                values[s.name] = _random_spd(rng, s.shape[0]) * 0.5
            elif s.name.startswith("S"):
                values[s.name] = 0.5 * np.linalg.eigvalsh(P)[-1] * np.eye(s.shape[0])
            else:
                values[s.name] = np.eye(s.shape[0])
        starts.append(problem.project(problem.pack(values)))
    return starts


def _random_spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T / n + 0.5 * np.eye(n)


def _lyapunov_seed(model, test_id):
    A = model.blocks[0].A0
    if test_id in DELAY_DEPENDENT or np.max(np.linalg.eigvals(A).real, initial=-1) >= 0:
        A = sum(model.nominal_matrices())
    try:
        if np.max(np.linalg.eigvals(A).real) >= 0:
            raise ValueError
        P = solve_continuous_lyapunov(A.T, -np.eye(model.n))
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError
        return P / np.max(np.abs(P))
    except (ValueError, np.linalg.LinAlgError):
        return np.eye(model.n)


def _evaluate(problem, x, spread: float = 0.0):
    """Shifted objective and a subgradient.

    With ``spread > 0`` the subgradient averages every eigenpair whose shifted
    value lies within ``spread * |phi|`` of the maximum (an epsilon-subgradient
    that damps zigzagging between nearly active blocks).
    """
    tol = problem.tol
    values, pairs = [], []
    for c, Q in enumerate(problem.matrices(x)):
        if not np.all(np.isfinite(Q)):
            raise NumericalError("non-finite constraint matrix during the search")
        w, V = np.linalg.eigh(Q)
        a, b = np.unravel_index(np.argmax(np.abs(Q)), Q.shape)
        shift = tol * (1.0 + abs(Q[a, b]))
        values.append(w[-1] + shift)
        pairs.append((w + shift, V, a, b, np.sign(Q[a, b])))
    phi = max(values)
    cut = phi - spread * abs(phi)
    g = np.zeros(problem.n_unknowns)
    total = 0
    for cons, (w, V, a, b, sgn) in zip(problem.constraints, pairs):
        if not cons.index.size:
            continue
        sel = np.flatnonzero(w >= cut) if spread > 0 else (
            [len(w) - 1] if w[-1] == phi else [])
        for k in sel:
            v = V[:, k]
            g[cons.index] += np.einsum("kab,a,b->k", cons.basis, v, v) + tol * sgn * cons.basis[:, a, b]
            total += 1
        if spread == 0 and total:
            break
    if total:
        g /= total
    return float(phi), g


def certified(problem, x) -> tuple:
    """``(ok, worst lambda_max)``: every constraint beyond its strictness gap."""
    Qs = problem.matrices(x)
    lams = [verify_nd(Q) for Q in Qs]
    ok = all(l <= -strictness(Q, problem.tol) for l, Q in zip(lams, Qs))
    ok = ok and problem.side_margin(x) >= 0.5 * problem.side_floor
    return bool(ok), float(max(lams))


def solve_feasibility(problem: LmiProblem, max_iters: int = DEFAULT_MAX_ITERS,
                      restarts: int = DEFAULT_RESTARTS, seed: int = 0):
    """Projected Polyak-subgradient search for a certificate.

    Returns
    -------
    Certificate or FailureReport
    """
    best_value = math.inf
    total = 0
    for start_no, x in enumerate(_initial_points(problem, restarts, seed)):
        value, g = _evaluate(problem, x, SPREAD)
        start_best, mark, still = math.inf, math.inf, 0
        for it in range(max_iters + 1):
            if value <= 0.0:
                ok, worst = certified(problem, x)
                if ok:
                    return Certificate(problem.test_id, problem.unpack(x), worst, total + it,
                                       problem.tol, problem.hbar, problem.dedup,
                                       problem.multipliers, start_no)
            best_value = min(best_value, value)
            # the constraints are homogeneous, so progress is judged on value / |x|
            start_best = min(start_best, value / (1.0 + np.max(np.abs(x))))
            if it == max_iters:
                break
            if it % STALL_WINDOW == 0:
                # give up on this start when a whole window brought < 1% progress
                if it and mark - start_best <= 0.01 * abs(start_best) + 1e-12:
                    break
                mark = start_best
            gnorm2 = float(g @ g)
            if gnorm2 == 0.0:
                break
            # level just past the strictness gap, plus half of the current violation
            target = -problem.tol * (1.0 + _scale(problem, x)) - 0.5 * max(value, 0.0)
            x_new = problem.project(x - (value - target) / gnorm2 * g)
            if not np.all(np.isfinite(x_new)):
                raise NumericalError("non-finite iterate")
            # a projection that undoes the step means the floor is the best this start can do
            still = still + 1 if np.max(np.abs(x_new - x)) <= 1e-12 * (1.0 + np.max(np.abs(x))) else 0
            x = x_new
            if still >= 20:
                break
            value, g = _evaluate(problem, x, SPREAD)
        total += it
    return FailureReport(problem.test_id, best_value, total, problem.tol)


def _scale(problem, x):
    return float(np.max(np.abs(problem.slot("P").unpack(x))))


def verify_certificate(model: DelayedLfrModel, cert: Certificate) -> tuple:
    """Rebuild the problem and re-check the stored variables.

    Returns ``(ok, worst lambda_max)``; ``ok`` requires every constraint below
    ``-strictness/2`` and every positive-definite slot above half the floor.
    """
    problem = build_problem(model, cert.test_id, hbar=cert.hbar, dedup=cert.dedup,
                            multipliers=cert.multipliers, tol=cert.tolerance)
    values = {s.name: cert.variables.get(s.name, np.zeros(s.shape)) for s in problem.slots}
    Qs = problem.assembled(values)
    lams = [verify_nd(Q) for Q in Qs]
    x = problem.pack(values)
    ok = all(l <= -0.5 * strictness(Q, cert.tolerance) for l, Q in zip(lams, Qs))
    ok = ok and problem.side_margin(x) >= 0.5 * problem.side_floor
    return bool(ok), float(max(lams))


# --------------------------------------------------------------------------
# prechecks and bisections
# --------------------------------------------------------------------------

def necessary_precheck(model: DelayedLfrModel, delay_dependent: bool = False) -> list:
    """Nominal matrices that must be Hurwitz for the tests to have a chance.

    Delay-independent stability needs both ``A0_0`` and ``sum_i A0_i`` stable;
    delay-dependent tests only need the sum (delay-free limit).
    """
    diags = []
    checks = [("sum", sum(model.nominal_matrices()))]
    if not delay_dependent:
        checks.insert(0, ("A00", model.blocks[0].A0))
    for name, A in checks:
        eig = np.linalg.eigvals(A)
        worst = eig[np.argmax(eig.real)]
        if worst.real >= 0:
            label = "A00" if name == "A00" else "sum of A0i"
            diags.append(Diagnostic(
                f"unstable-{name}",
                f"{label} has eigenvalue {worst.real:+.6g}{worst.imag:+.6g}j with nonnegative "
                f"real part; {'delay-dependent' if delay_dependent else 'delay-independent'} "
                "stability is impossible for the nominal system"))
    return diags


@dataclass
class SearchResult:
    """Outcome of a bisection: the certified value and every probe made."""

    value: float
    probes: list
    certificate: Optional[Certificate] = None


def _run(model, test_id, hbar=None, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS,
         restarts=DEFAULT_RESTARTS, seed=0, dedup=True, multipliers="per-vertex"):
    problem = build_problem(model, test_id, hbar=hbar, dedup=dedup, multipliers=multipliers, tol=tol)
    return solve_feasibility(problem, max_iters, restarts, seed)


def stability_margin(model: DelayedLfrModel, test_id: str, sigma_max: float,
                     bisect_tol: float = 0.05, **solver_kw) -> SearchResult:
    """Largest ``sigma <= sigma_max`` with a certificate over ``sigma * Theta``.

    The certified set is assumed to be an interval ``[0, sigma_m]``; only the
    probed points are actually certified.
    """
    if not sigma_max > 0:
        raise ValueError("sigma_max must be positive")
    probes = []

    def probe(sigma):
        res = _run(model.with_theta(scale_polytope(model.theta, sigma)), test_id, **solver_kw)
        ok = isinstance(res, Certificate)
        probes.append({"sigma": sigma, "certified": ok})
        log.info("sigma=%.6g certified=%s", sigma, ok)
        return res if ok else None

    if probe(0.0) is None:
        raise MarginUndefinedError("margin undefined: the nominal system is not certified")
    best = probe(sigma_max)
    if best is not None:
        return SearchResult(sigma_max, probes, best)
    lo, hi = 0.0, sigma_max
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        cert = probe(mid)
        if cert is not None:
            lo, best = mid, cert
        else:
            hi = mid
    return SearchResult(lo, probes, best)


def max_certified_delay(model: DelayedLfrModel, test_id: str = "thm2", ratio=None,
                        h_max: float = 10.0, bisect_tol: float = 0.01,
                        **solver_kw) -> SearchResult:
    """Largest common scaling ``beta`` with a certificate at ``hbar = beta * ratio``.

    ``beta = 0`` is probed first (the delay-free limit); failure there raises
    :class:`MarginUndefinedError`.
    """
    if test_id not in DELAY_DEPENDENT:
        raise HypothesisError(f"{test_id} is not a delay-dependent test")
    ratio = np.ones(model.r) if ratio is None else np.asarray(ratio, dtype=float)
    if ratio.shape != (model.r,):
        raise DimensionError(f"ratio must have {model.r} entries")
    if np.any(ratio < 0) or not np.any(ratio > 0):
        raise ValueError("ratio entries must be nonnegative and not all zero")
    if not h_max > 0:
        raise ValueError("h_max must be positive")
    beta_max = h_max / float(np.max(ratio))
    probes = []

    def probe(beta):
        res = _run(model, test_id, hbar=list(beta * ratio), **solver_kw)
        ok = isinstance(res, Certificate)
        probes.append({"beta": beta, "certified": ok})
        log.info("beta=%.6g certified=%s", beta, ok)
        return res if ok else None

    if probe(0.0) is None:
        raise MarginUndefinedError("delay-free system is not certified (beta = 0)")
    best = probe(beta_max)
    if best is not None:
        return SearchResult(beta_max, probes, best)
    lo, hi, best = 0.0, beta_max, None
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        cert = probe(mid)
        if cert is not None:
            lo, best = mid, cert
        else:
            hi = mid
    return SearchResult(lo, probes, best)


@dataclass
class Analysis:
    """Verdict of :func:`analyze`: the search result plus precheck findings."""

    test_id: str
    result: object
    diagnostics: list
    skipped: bool = False

    @property
    def certified(self) -> bool:
        return isinstance(self.result, Certificate)


def analyze(model: DelayedLfrModel, test_id: str = "cor3", hbar=None, force: bool = False,
            tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
            restarts: int = DEFAULT_RESTARTS, seed: int = 0, dedup: bool = True,
            multipliers: str = "per-vertex") -> Analysis:
    """Precheck, then search; a failed precheck skips the search unless ``force``."""
    diags = necessary_precheck(model, delay_dependent=test_id in DELAY_DEPENDENT)
    if diags and not force:
        report = FailureReport(test_id, math.inf, 0, tol, reason="necessary condition violated")
        return Analysis(test_id, report, diags, skipped=True)
    problem = build_problem(model, test_id, hbar=hbar, dedup=dedup, multipliers=multipliers, tol=tol)
    return Analysis(test_id, solve_feasibility(problem, max_iters, restarts, seed), diags)
