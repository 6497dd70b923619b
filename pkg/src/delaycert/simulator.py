"""Time-domain simulation and characteristic roots of the delayed system.

These are independent checks on the LMI verdicts: trajectories of
``x'(t) = sum_i A_i(theta(t)) x(t - h_i)`` under admissible parameter
signals, and the rightmost zeros of ``det(sI - sum_i A_i e^{-s h_i})`` for
frozen parameters.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DimensionError
from .model import WELL_POSED_THRESHOLD, DelayedLfrModel, eval_model
from .polytope import UncertaintyPolytope, canonical_key

log = logging.getLogger(__name__)

SIGNAL_KINDS = ("constant", "vertex_switch", "sinusoid")
CLASSES = ("decaying", "bounded", "diverging", "inconclusive")
_BLOWUP = 1e150


# --------------------------------------------------------------------------
# parameter signals
# --------------------------------------------------------------------------

@dataclass
class ThetaSignal:
    """Deterministic parameter trajectory ``theta(t)`` inside ``Theta``.

    ``constant`` holds ``value``; ``vertex_switch`` holds a seeded random
    vertex for each ``dwell`` interval; ``sinusoid`` is
    ``amplitude * sin(2 pi frequency t)``.
    """

    kind: str
    theta: UncertaintyPolytope
    value: Optional[np.ndarray] = None
    dwell: float = 1.0
    seed: int = 0
    amplitude: Optional[np.ndarray] = None
    frequency: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def piecewise_constant(self) -> bool:
        return self.kind in ("constant", "vertex_switch")

    def vertex_index(self, k: int) -> int:
        """Vertex held on ``[k dwell, (k + 1) dwell)``; drawn from ``rng([seed, k])``."""
        if k not in self._cache:
            rng = np.random.default_rng([self.seed, k])
            self._cache[k] = int(rng.integers(len(self.theta.vertices)))
        return self._cache[k]

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.value
        if self.kind == "vertex_switch":
            k = max(int(math.floor(t / self.dwell)), 0)
            return self.theta.vertices[self.vertex_index(k)]
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)


def make_signal(kind: str, params: Optional[dict], theta: UncertaintyPolytope, seed: int = 0) -> ThetaSignal:
    """Validate ``params`` for ``kind`` and build the signal.

    Parameters
    ----------
    kind : {"constant", "vertex_switch", "sinusoid"}
    params : dict
        ``constant``: ``value`` (defaults to the origin). ``vertex_switch``:
        ``dwell``. ``sinusoid``: ``amplitude`` (vector) and ``frequency``.
    """
    params = dict(params or {})
    m = theta.dimension
    if kind == "constant":
        value = np.asarray(params.get("value", np.zeros(m)), dtype=float).ravel()
        if value.shape != (m,):
            raise DimensionError(f"constant theta needs {m} entries, got {value.size}")
        if not theta.contains(value):
            raise ValueError(f"constant theta {value.tolist()} is outside the polytope")
        return ThetaSignal("constant", theta, value=value, seed=seed)
    if kind == "vertex_switch":
        dwell = float(params.get("dwell", 1.0))
        if not dwell > 0:
            raise ValueError("dwell must be positive")
        if len(theta.vertices) < 1:
            raise ValueError("vertex switching needs at least one vertex")
        return ThetaSignal("vertex_switch", theta, dwell=dwell, seed=int(seed))
    if kind == "sinusoid":
        if "amplitude" not in params:
            raise ValueError("sinusoid needs an amplitude vector")
        amp = np.asarray(params["amplitude"], dtype=float).ravel()
        if amp.shape != (m,):
            raise DimensionError(f"sinusoid amplitude needs {m} entries, got {amp.size}")
        freq = float(params.get("frequency", 1.0))
        if not freq > 0:
            raise ValueError("frequency must be positive")
        # the trajectory sweeps the segment [-amp, amp]; convexity makes the ends sufficient
        if not (theta.contains(amp) and theta.contains(-amp)):
            raise ValueError("sinusoid amplitude exceeds the polytope")
        return ThetaSignal("sinusoid", theta, amplitude=amp, frequency=freq, seed=seed)
    raise ValueError(f"unknown signal kind {kind!r}; choose from {', '.join(SIGNAL_KINDS)}")


# --------------------------------------------------------------------------
# initial functions
# --------------------------------------------------------------------------

class History:
    """Initial function ``phi`` on ``[-h, 0]``.

    Either a constant vector or a sampled table interpolated by a cubic
    spline; tables must cover ``[-h, 0]``.
    """

    def __init__(self, value=None, times=None, samples=None):
        if (value is None) == (times is None):
            raise ValueError("give either a constant value or a sampled table")
        if value is not None:
            self.value = np.atleast_1d(np.asarray(value, dtype=float))
            self.spline = None
            self.start = -math.inf
        else:
            times = np.asarray(times, dtype=float)
            samples = np.asarray(samples, dtype=float)
            if samples.ndim == 1:
                samples = samples[:, None]
            if times.ndim != 1 or len(times) < 2 or samples.shape[0] != len(times):
                raise DimensionError("history table needs >= 2 rows of (t, x)")
            if np.any(np.diff(times) <= 0):
                raise ValueError("history times must be strictly increasing")
            self.value = None
            self.spline = CubicSpline(times, samples, axis=0)
            self.start = times[0]
            self.end = times[-1]
            self.dim = samples.shape[1]

    @classmethod
    def constant(cls, value) -> "History":
        return cls(value=value)

    @classmethod
    def table(cls, times, samples) -> "History":
        return cls(times=times, samples=samples)

    @property
    def n(self) -> int:
        return self.value.shape[0] if self.value is not None else self.dim

    def check(self, n: int, h: float) -> None:
        if self.n != n:
            raise DimensionError(f"initial function has dimension {self.n}, model has n={n}")
        if self.spline is not None and (self.start > -h + 1e-12 or self.end < -1e-12):
            raise ValueError(f"history table covers [{self.start}, {self.end}], need [{-h}, 0]")

    def __call__(self, t: float) -> np.ndarray:
        if self.value is not None:
            return self.value
        return self.spline(t)

    def derivative(self, t: float) -> np.ndarray:
        if self.value is not None:
            return np.zeros_like(self.value)
        return self.spline(t, 1)


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    envelope: np.ndarray
    initial_norm: float
    classification: str
    meta: dict

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def to_csv(self, path) -> None:
        write_csv(self, path)


def segment_envelope(t, norms, h: float, initial: float = 0.0) -> np.ndarray:
    """``max ||x(s)||`` over ``s in [t - h, t]`` (the norm of the state segment).

    Before ``t = h`` the window reaches into the initial function, whose
    supremum is ``initial``.
    """
    norms = np.asarray(norms, dtype=float)
    if h <= 0:
        return norms.copy()
    out = np.empty_like(norms)
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    w = max(int(round(h / dt)), 0)
    from collections import deque

    q = deque()
    for k, v in enumerate(norms):
        while q and norms[q[-1]] <= v:
            q.pop()
        q.append(k)
        while q[0] < k - w:
            q.popleft()
        out[k] = norms[q[0]]
        if t[k] < h - 1e-12:
            out[k] = max(out[k], initial)
    return out


def simulate(model: DelayedLfrModel, signal: ThetaSignal, history, horizon: float, dt: float,
             threshold: float = WELL_POSED_THRESHOLD, contraction: float = 0.1,
             divergence: float = 1e3) -> SimResult:
    """Fixed-step RK4 with cubic Hermite interpolation of the stored trajectory.

    Parameters
    ----------
    history : History or array_like
        Initial function; a plain vector means a constant ``phi``.
    horizon, dt : float
        Requires ``dt <= min(h_i)/20`` and ``dt <= horizon/100``.

    Notes
    -----
    Delayed values inside ``[0, t]`` use the Hermite cubic on the enclosing
    step built from the stored states and the stage-one slopes, so the
    interpolant matches RK4's order. For piecewise-constant signals the
    parameter is frozen over each step at its mid-step value, which places
    every switch on a grid point when ``dwell`` is a multiple of ``dt``.
    """
    if not isinstance(history, History):
        history = History.constant(history)
    n, r = model.n, model.r
    delays = np.asarray(model.delays, dtype=float)
    h = model.h
    if not (horizon > 0 and dt > 0):
        raise ValueError("horizon and dt must be positive")
    if dt > horizon / 100 + 1e-15:
        raise ValueError(f"dt={dt} exceeds horizon/100={horizon / 100}")
    if r and dt > delays.min() / 20 + 1e-15:
        raise ValueError(f"dt={dt} exceeds min(h)/20={delays.min() / 20}")
    history.check(n, h)
    # the last step may overshoot the horizon by less than dt
    steps = int(math.ceil(horizon / dt - 1e-9))
    horizon = steps * dt

    cache = {}

    def matrices(theta):
        key = canonical_key(theta)
        if key not in cache:
            if len(cache) > 4096:
                cache.clear()
            cache[key] = eval_model(model, theta, threshold)
        return cache[key]

    X = np.zeros((steps + 1, n))
    F = np.zeros((steps + 1, n))
    X[0] = history(0.0)

    def past(s):
        """State at time ``s <= t`` from history or the stored steps."""
        if s <= 0.0:
            return history(s)
        k = min(int(s / dt), steps - 1)
        tau = (s - k * dt) / dt
        if tau > 1.0:
            k, tau = k + 1, tau - 1.0
        x0, x1, f0, f1 = X[k], X[k + 1], F[k], F[k + 1]
        t2, t3 = tau * tau, tau * tau * tau
        return ((2 * t3 - 3 * t2 + 1) * x0 + (t3 - 2 * t2 + tau) * dt * f0
                + (-2 * t3 + 3 * t2) * x1 + (t3 - t2) * dt * f1)

    def rhs(t, x, A):
        out = A[0] @ x
        for i in range(r):
            out = out + A[i + 1] @ past(t - delays[i])
        return out

    stopped = None
    for k in range(steps):
        t = k * dt
        if signal.piecewise_constant:
            A = matrices(signal(t + 0.5 * dt))
            A1 = A2 = A3 = A
        else:
            A = matrices(signal(t))
            A2 = matrices(signal(t + 0.5 * dt))
            A1, A3 = A2, matrices(signal(t + dt))
        x = X[k]
        k1 = rhs(t, x, A)
        F[k] = k1
        k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1, A1)
        k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2, A2)
        k4 = rhs(t + dt, x + dt * k3, A3)
        X[k + 1] = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X[k + 1])) or np.max(np.abs(X[k + 1])) > _BLOWUP:
            stopped = k + 1
            break
    if stopped is None and steps:
        A = matrices(signal(horizon - 0.5 * dt) if signal.piecewise_constant else signal(horizon))
        F[steps] = rhs(horizon, X[steps], A)
    last = steps if stopped is None else stopped
    tgrid = dt * np.arange(last + 1)
    X = X[:last + 1]
    initial = _history_sup(history, h, dt)
    env = segment_envelope(tgrid, np.linalg.norm(X, axis=1), h, initial)
    meta = {"method": "rk4", "order": 4, "dt": dt, "horizon": horizon,
            "history": "cubic-hermite", "signal": signal.kind,
            "stopped_early": stopped is not None}
    result = SimResult(tgrid, X, env, initial, "inconclusive", meta)
    result.classification = classify(result, contraction=contraction, divergence=divergence,
                                     diverged=stopped is not None)
    return result


def _history_sup(history, h, dt):
    if h <= 0 or history.value is not None:
        return float(np.linalg.norm(history(0.0)))
    grid = np.linspace(-h, 0.0, max(int(round(h / dt)), 1) + 1)
    return float(max(np.linalg.norm(history(s)) for s in grid))


def classify(result: SimResult, contraction: float = 0.1, divergence: float = 1e3,
             band=(0.5, 2.0), diverged: bool = False) -> str:
    """Finite-horizon verdict from the segment-norm envelope.

    ``diverging`` when the run blew up or the final envelope exceeds
    ``divergence`` times the initial norm; ``decaying`` when the last quarter
    peaks below ``contraction`` times the second-quarter peak and the final
    envelope is below the initial norm; ``bounded`` when the final/initial
    ratio lies in ``band``; otherwise ``inconclusive``. The zero trajectory
    counts as decaying.
    """
    env = result.envelope
    if diverged or not np.all(np.isfinite(env)):
        return "diverging"
    init = result.initial_norm
    final = env[-1]
    if init == 0.0:
        return "decaying" if np.max(env) == 0.0 else "diverging"
    if final > divergence * init:
        return "diverging"
    N = len(env) - 1
    q2 = env[N // 4:N // 2 + 1]
    q4 = env[3 * N // 4:]
    if q2.size and q4.size and np.max(q4) <= contraction * np.max(q2) and final < init:
        return "decaying"
    if band[0] * init <= final <= band[1] * init:
        return "bounded"
    return "inconclusive"


def write_csv(result: SimResult, path) -> None:
    """Trajectory table with header ``t, x1..xn, norm``."""
    n = result.x.shape[1]
    norms = result.norm
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{k}" for k in range(1, n + 1)] + ["norm"])
        for t, x, nv in zip(result.t, result.x, norms):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(nv))])


# --------------------------------------------------------------------------
# characteristic roots
# --------------------------------------------------------------------------

@dataclass
class RootReport:
    roots: list
    dropped: int

    @property
    def rightmost(self) -> Optional[complex]:
        return self.roots[0] if self.roots else None

    @property
    def abscissa(self) -> float:
        return self.roots[0].real if self.roots else -math.inf


def characteristic_matrix(model: DelayedLfrModel, theta, threshold: float = WELL_POSED_THRESHOLD):
    """Functions ``M(s)`` and ``M'(s)`` of ``M(s) = sI - sum_i A_i e^{-s h_i}``."""
    A = eval_model(model, theta, threshold)
    hs = (0.0,) + tuple(model.delays)
    eye = np.eye(model.n)

    def M(s):
        return s * eye - sum(Ai * np.exp(-s * hi) for Ai, hi in zip(A, hs))

    def dM(s):
        return eye + sum(hi * Ai * np.exp(-s * hi) for Ai, hi in zip(A, hs))

    return M, dM


def characteristic_roots(model: DelayedLfrModel, theta=None, rect=(-3.0, 1.0, -0.5, 12.0),
                         grid=(81, 201), refine_tol: float = 1e-9, max_newton: int = 60,
                         threshold: float = WELL_POSED_THRESHOLD) -> RootReport:
    """Zeros of ``det M(s)`` in ``rect = (re_min, re_max, im_min, im_max)``.

    A grid scan of ``log|det M|`` finds local minima, each refined by damped
    Newton on ``det M`` (``(det)' = det * tr(M^-1 M')``). Converged points
    with ``|det M| < refine_tol * (1 + |s|)^n`` inside the rectangle are kept
    (conjugates are added for real systems); failed refinements are counted
    in ``dropped``. Roots are sorted by decreasing real part.
    """
    theta = np.zeros(model.m) if theta is None else np.asarray(theta, dtype=float)
    re0, re1, im0, im1 = rect
    if not all(np.isfinite(v) for v in rect) or re0 >= re1 or im0 >= im1:
        raise ValueError("search rectangle must be finite and non-empty")
    M, dM = characteristic_matrix(model, theta, threshold)
    n = model.n
    xs = np.linspace(re0, re1, grid[0])
    ys = np.linspace(im0, im1, grid[1])
    mag = np.empty((len(ys), len(xs)))
    for a, y in enumerate(ys):
        for b, xv in enumerate(xs):
            with np.errstate(all="ignore"):
                mag[a, b] = np.log(abs(np.linalg.det(M(complex(xv, y)))) + 1e-300)
    cands = []
    for a in range(len(ys)):
        for b in range(len(xs)):
            win = mag[max(a - 1, 0):a + 2, max(b - 1, 0):b + 2]
            if mag[a, b] <= win.min():
                cands.append(complex(xs[b], ys[a]))
    found, dropped = [], 0
    span = max(re1 - re0, im1 - im0)
    for s0 in cands:
        s = _newton(M, dM, s0, refine_tol, max_newton)
        if s is None:
            dropped += 1
            continue
        if not (re0 - 1e-6 <= s.real <= re1 + 1e-6 and im0 - 1e-6 <= s.imag <= im1 + 1e-6):
            continue
        if abs(np.linalg.det(M(s))) >= refine_tol * (1 + abs(s)) ** n:
            dropped += 1
            continue
        found.append(s)
    roots = []
    real_system = True
    for s in found + ([s.conjugate() for s in found] if real_system else []):
        if not (im0 - 1e-6 <= s.imag <= im1 + 1e-6):
            continue
        if all(abs(s - q) > 1e-6 * (1 + span) for q in roots):
            roots.append(complex(s.real, 0.0) if abs(s.imag) < 1e-10 else s)
    roots.sort(key=lambda z: (-z.real, z.imag))
    if dropped:
        log.warning("%d root candidates dropped after failed Newton refinement", dropped)
    return RootReport(roots, dropped)


def _newton(M, dM, s, tol, max_iter):
    def det_and_step(z):
        Mz = M(z)
        d = np.linalg.det(Mz)
        try:
            ratio = np.trace(np.linalg.solve(Mz, dM(z)))
        except np.linalg.LinAlgError:
            return d, 0.0
        return d, (1.0 / ratio if ratio != 0 else 0.0)

    d, step = det_and_step(s)
    for _ in range(max_iter):
        if not np.isfinite(d):
            return None
        if abs(d) == 0.0 or step == 0.0:
            return s
        lam = 1.0
        while lam > 1e-6:
            z = s - lam * step
            dz, stz = det_and_step(z)
            if np.isfinite(dz) and abs(dz) < abs(d):
                break
            lam *= 0.5
        else:
            return s if abs(step) < 1e-10 * (1 + abs(s)) else None
        s, d, step = z, dz, stz
        if abs(lam * step) < 1e-14 * (1 + abs(s)) or abs(step) < 1e-13 * (1 + abs(s)):
            return s
    return s if abs(step) < 1e-8 * (1 + abs(s)) else None
