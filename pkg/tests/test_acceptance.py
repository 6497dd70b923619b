"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from delaycert import fileio, lmi, simulator as sim, solver
from delaycert.cli import main
from delaycert.lmi import DecisionVars, TESTS
from delaycert.model import eval_model, eval_shared_loop, first_to_second_lfr, second_to_first_lfr
from delaycert.polytope import sample_theta, vertex_counts, vertex_tuples, zero_deltas

from conftest import FIXTURES, delay_free, random_model

PI_2 = 1.5708


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out


def fx(name):
    return FIXTURES / f"{name}.json"


def test_criterion_01_scalar_boundary(report, capsys):
    start = time.perf_counter()
    codes = {b: cli(capsys, "analyze", fx(name), "--test", "cor2")[0]
             for b, name in ((0.5, "scalar_b05"), (0.9, "scalar_b09"), (1.1, "scalar_b11"), (1.5, "scalar_b15"))}
    # the search itself, without the precheck, must fail as well
    forced = {b: cli(capsys, "analyze", fx(name), "--test", "cor2", "--force")[0]
              for b, name in ((1.1, "scalar_b11"), (1.5, "scalar_b15"))}
    elapsed = time.perf_counter() - start
    ok = (codes == {0.5: 0, 0.9: 0, 1.1: 1, 1.5: 1} and forced == {1.1: 1, 1.5: 1} and elapsed < 5.0)
    report(1, ok, f"exit codes {codes}, forced {forced}, {elapsed:.2f}s (< 5 s)")


def test_criterion_02_lyapunov_reduction(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    disagreements, stable = 0, 0
    for _ in range(20):
        while True:
            A = rng.standard_normal((3, 3)) + rng.uniform(-2.0, 1.0) * np.eye(3)
            alpha = np.max(np.linalg.eigvals(A).real)
            if abs(alpha) >= 0.1:
                break
        stable += alpha < 0
        verdict = solver.analyze(delay_free(A), "cor2").certified
        disagreements += verdict != (alpha < 0)
    elapsed = time.perf_counter() - start
    report(2, disagreements == 0 and elapsed < 10.0,
           f"{disagreements} disagreements on 20 models ({stable} Hurwitz), {elapsed:.2f}s (< 10 s)")


def test_criterion_03_delay_dependent_bound(report, capsys):
    start = time.perf_counter()
    code, out = cli(capsys, "max-delay", fx("pure_delay_h1"), "--test", "thm2")
    beta = json.loads(out)["beta"]
    _, out1 = cli(capsys, "simulate", fx("pure_delay_h1"), "--phi", "const:1", "--horizon", 20)
    # growth rate at h = 1.6 is about 0.0082, so 10^3 growth needs T of roughly 850
    _, out2 = cli(capsys, "simulate", fx("pure_delay_h16"), "--phi", "const:1", "--horizon", 1200,
                  "--step", 0.08)
    c1, c2 = json.loads(out1)["classification"], json.loads(out2)["classification"]
    elapsed = time.perf_counter() - start
    ok = code == 0 and 0 < beta <= PI_2 and c1 == "decaying" and c2 == "diverging" and elapsed < 30
    report(3, ok, f"beta={beta:.4f} in (0, {PI_2}], h=1.0 {c1}, h=1.6 {c2}, {elapsed:.1f}s (< 30 s)")


def test_criterion_04_lfr_round_trip(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10):
        model = random_model(rng, n=int(rng.integers(1, 4)), r=int(rng.integers(0, 3)), dmax=2, scale=0.2)
        shared = first_to_second_lfr(model, "simo" if rng.random() < 0.5 else "miso")
        back = second_to_first_lfr(shared, model.delays, model.theta)
        for th in sample_theta(model.theta, 100, seed=int(rng.integers(1 << 30))):
            a = eval_shared_loop(shared, th)
            for ref, x, y in zip(eval_model(model, th), a, eval_model(back, th)):
                scale = np.abs(ref).max() + 1e-300
                worst = max(worst, np.abs(ref - x).max() / scale, np.abs(ref - y).max() / scale)
    report(4, worst <= 1e-10, f"max relative error {worst:.2e} over 10 models x 100 samples (<= 1e-10)")


def _random_vars(rng, model, test_id):
    n, r = model.n, model.r
    sym = lambda k: (lambda B: B + B.T)(rng.standard_normal((k, k)))
    S = ([[sym(n) for _ in range(r + 1)] for _ in range(r)] if test_id in lmi.DELAY_DEPENDENT
         else [sym(n) for _ in range(r)])
    return DecisionVars(P=sym(n), S=S, M=[sym(d) for d in model.block_sizes],
                        G=[rng.standard_normal((n, d)) for d in model.block_sizes],
                        H=[rng.standard_normal((d, d)) for d in model.block_sizes])


def test_criterion_05_reduction_chain(report):
    rng = np.random.default_rng(5)
    mismatches, asym = 0, 0.0
    for _ in range(200):
        model = random_model(rng, r=int(rng.integers(0, 3)), dmax=1)
        vars = _random_vars(rng, model, "cor2")
        ref = lmi.assemble_cor2(model, vars).matrix
        k = ref.shape[0]
        zero = zero_deltas(model)
        stripped = DecisionVars(vars.P, vars.S, M=[0 * m for m in vars.M], G=[0 * g for g in vars.G],
                                H=[0 * h for h in vars.H])
        for Q in (lmi.assemble_thm1(model, stripped, zero).matrix, lmi.assemble_cor3(model, stripped, zero).matrix):
            if not (np.array_equal(Q[:k, :k], ref) and not Q[k:].any() and not Q[:, k:].any()):
                mismatches += 1
        tup = next(vertex_tuples(model))
        for test_id in TESTS:
            v = _random_vars(rng, model, test_id)
            if test_id == "cor2":
                Q = lmi.assemble_cor2(model, v).matrix
            elif test_id == "thm1":
                Q = lmi.assemble_thm1(model, v, tup.deltas).matrix
            elif test_id == "cor1":
                Q = lmi.assemble_cor1(model, v, tup.deltas).matrix
            elif test_id in ("cor3", "cor4"):
                Q = lmi.assemble_cor3(model, v, tup.deltas, "common" if test_id == "cor3" else "per-vertex").matrix
            elif model.r:
                fn = lmi.assemble_thm2 if test_id == "thm2" else lmi.assemble_cor5
                Q = fn(model, v, tup.deltas, list(model.delays)).matrix
            else:
                continue
            asym = max(asym, np.abs(Q - Q.T).max() / (1 + np.abs(Q).max()))
    report(5, mismatches == 0 and asym <= 1e-12,
           f"{mismatches} block mismatches in 200 instances, max asymmetry {asym:.1e} (<= 1e-12)")


def test_criterion_06_convexity(report):
    rng = np.random.default_rng(6)
    model = random_model(rng, n=2, r=1, m=2, dmax=1)
    worst = -np.inf
    for test_id in TESTS:
        problem = solver.build_problem(model, test_id)
        for _ in range(100):
            x1, x2 = rng.standard_normal((2, problem.n_unknowns))
            f = problem.objective
            worst = max(worst, f(0.5 * (x1 + x2)) - max(f(x1), f(x2)))
    report(6, worst <= 1e-9, f"max f(mid) - max(f1, f2) = {worst:.2e} over 100 pairs x {len(TESTS)} families")


SOUNDNESS = [  # fixture, test, horizon, dwell
    ("scalar_b05", "cor2", 40.0, 0.5),
    ("scalar_affine", "cor3", 60.0, 0.5),
    ("two_state_lfr", "cor4", 30.0, 0.35),
    ("two_delay_dedup", "cor3", 30.0, 0.5),
    ("uncertain_delay", "thm2", 60.0, 0.4),
    ("delayed_damping", "cor5", 80.0, 0.3),
]


def test_criterion_07_soundness(report):
    counterexamples, certified = [], []
    for name, test_id, horizon, dwell in SOUNDNESS:
        model = fileio.read_model(fx(name))
        res = solver.analyze(model, test_id)
        if not res.certified:
            counterexamples.append(f"{name}:{test_id} not certified")
            continue
        certified.append(f"{name}:{test_id}")
        dt = min(min(model.delays) / 20, horizon / 100)
        for seed in range(50):
            sig = sim.make_signal("vertex_switch", {"dwell": dwell}, model.theta, seed)
            cls = sim.simulate(model, sig, np.ones(model.n), horizon, dt).classification
            if cls != "decaying":
                counterexamples.append(f"{name} seed {seed}: {cls}")
    report(7, not counterexamples and len(certified) >= 5,
           f"{len(certified)} certified fixtures x 50 switching runs, counterexamples: {counterexamples or 'none'}")


def test_criterion_08_margin(report, capsys):
    code, out = cli(capsys, "margin", fx("scalar_affine"), "--test", "cor3", "--sigma-max", 3.0,
                    "--bisect-tol", 0.05)
    data = json.loads(out)
    sigma_m = data["sigma_m"]
    exact = 2 * (1.0 - 0.2)
    probes = sorted(data["probes"], key=lambda p: p["sigma"])
    verdicts = [p["certified"] for p in probes]
    monotone = verdicts == sorted(verdicts, reverse=True)
    ok = code == 0 and abs(sigma_m - exact) <= 0.05 and monotone
    report(8, ok, f"sigma_m={sigma_m:.4f} vs analytic {exact} (tol 0.05), probe log monotone={monotone}")


def test_criterion_09_integrator_order(report):
    model = fileio.read_model(fx("pure_delay_h1"))
    sig = sim.make_signal("constant", {}, model.theta)
    finals = [sim.simulate(model, sig, [1.0], 20.0, dt).x[-1, 0] for dt in (0.05, 0.025, 0.0125)]
    ratio = (finals[0] - finals[1]) / (finals[1] - finals[2])
    report(9, 8 <= ratio <= 32, f"error ratio under dt halving = {ratio:.2f} (in [8, 32])")


def test_criterion_10_vertex_bookkeeping(report):
    model = fileio.read_model(fx("two_delay_dedup"))
    raw_counts, v_raw, vbar = vertex_counts(model, dedup=False)
    counts, v, _ = vertex_counts(model, dedup=True)
    product = int(np.prod(raw_counts))
    verdicts = {dedup: solver.analyze(model, "cor3", dedup=dedup).certified for dedup in (True, False)}
    verdicts_thm1 = {dedup: solver.analyze(model, "thm1", dedup=dedup).certified for dedup in (True, False)}
    ok = (model.m == 2 and model.r == 2 and vbar == product == v_raw and v < vbar
          and verdicts[True] == verdicts[False] and verdicts_thm1[True] == verdicts_thm1[False])
    report(10, ok, f"v_bar={vbar} = prod{tuple(raw_counts)}, dedup v={v} {tuple(counts)}, "
                   f"cor3 verdicts {verdicts}, thm1 verdicts {verdicts_thm1}")
