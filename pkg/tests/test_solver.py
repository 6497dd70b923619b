import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from delaycert import solver
from delaycert.errors import HypothesisError, MarginUndefinedError, NumericalError
from delaycert.lmi import TESTS
from delaycert.model import DelayedLfrModel, LfrBlock
from delaycert.polytope import UncertaintyPolytope

from conftest import delay_free, pure_delay, random_model, scalar_model

FAST = {"max_iters": 1500, "restarts": 2}


def test_verify_nd_examples():
    assert solver.verify_nd(np.diag([-1.0, -2.0])) == pytest.approx(-1.0)
    assert solver.verify_nd(np.zeros((2, 2))) == 0.0
    assert solver.verify_nd([[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(1.0)
    # only the symmetric part counts
    assert solver.verify_nd([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(1.0)
    with pytest.raises(NumericalError):
        solver.verify_nd([[np.nan]])


def test_slot_packing_round_trip():
    rng = np.random.default_rng(0)
    s = solver.Slot("P", (3, 3), True, True)
    B = rng.standard_normal((3, 3))
    B = B + B.T
    x = np.zeros(s.size)
    s.pack(B, x)
    np.testing.assert_allclose(s.unpack(x), B)
    # sqrt(2) packing: the Euclidean norm of x equals the Frobenius norm
    assert np.linalg.norm(x) == pytest.approx(np.linalg.norm(B))


def test_cor2_two_state_example():
    A00, A01 = -2 * np.eye(2), 0.5 * np.eye(2)
    model = DelayedLfrModel(2, 1, 1, (1.0,), (LfrBlock(A00, [], [], [], (0,)), LfrBlock(A01, [], [], [], (0,))),
                            UncertaintyPolytope.from_box([0.0], [0.0]))
    res = solver.solve_feasibility(solver.build_problem(model, "cor2"))
    assert isinstance(res, solver.Certificate)
    assert res.margin <= -1e-6


@pytest.mark.parametrize("b,ok", [(0.5, True), (0.9, True), (-0.9, True), (1.1, False), (1.5, False)])
def test_scalar_boundary(b, ok):
    res = solver.solve_feasibility(solver.build_problem(scalar_model(1.0, b), "cor2"), **FAST)
    assert isinstance(res, solver.Certificate) == ok


def test_failure_is_a_report_not_an_exception():
    res = solver.solve_feasibility(solver.build_problem(scalar_model(1.0, 1.1), "cor2"), **FAST)
    assert isinstance(res, solver.FailureReport)
    assert res.best_value > 0 and res.reason == "budget exhausted"


def test_delay_free_lyapunov():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 3))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(3)
    assert isinstance(solver.solve_feasibility(solver.build_problem(delay_free(A), "cor2")), solver.Certificate)
    unstable = np.diag([-1.0, -2.0, 0.5])
    res = solver.solve_feasibility(solver.build_problem(delay_free(unstable), "cor2"), **FAST)
    assert isinstance(res, solver.FailureReport)


def test_precheck_examples():
    ok = DelayedLfrModel(1, 1, 1, (1.0,), (LfrBlock([[-1.0]], [], [], [], (0,)), LfrBlock([[0.5]], [], [], [], (0,))),
                         UncertaintyPolytope.from_box([0.0], [0.0]))
    assert solver.necessary_precheck(ok) == []
    bad = delay_free([[1.0]])
    diags = solver.necessary_precheck(bad)
    assert diags and "+1" in diags[0].message
    sum_bad = scalar_model(1.0, 2.0)
    diags = solver.necessary_precheck(sum_bad)
    assert [d.code for d in diags] == ["unstable-sum"]
    # delay-dependent tests only need the delay-free sum
    assert solver.necessary_precheck(pure_delay(), delay_dependent=True) == []
    assert [d.code for d in solver.necessary_precheck(pure_delay())] == ["unstable-A00"]


def test_analyze_skips_after_failed_precheck():
    res = solver.analyze(scalar_model(1.0, 1.5), "cor2")
    assert res.skipped and not res.certified
    forced = solver.analyze(scalar_model(1.0, 1.5), "cor2", force=True, **FAST)
    assert not forced.skipped and not forced.certified


@pytest.mark.parametrize("test_id", TESTS)
def test_every_family_certifies_an_easy_model(test_id):
    # x' = -2x + (0.3 + theta) x(t - 0.2) with theta in [-0.2, 0.2]
    model = scalar_model(a=2.0, b=0.3, h=0.2, unc=0.2)
    res = solver.analyze(model, test_id, hbar=[0.2] if test_id in ("thm2", "cor5") else None)
    assert res.certified, test_id
    ok, worst = solver.verify_certificate(model, res.result)
    assert ok and abs(worst - res.result.margin) <= 1e-9


@given(st.integers(0, 10_000))
def test_objective_is_midpoint_convex(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n=2, r=1, m=int(rng.integers(1, 3)), dmax=1)
    for test_id in TESTS:
        problem = solver.build_problem(model, test_id)
        x1, x2 = rng.standard_normal((2, problem.n_unknowns))
        f = problem.objective
        assert f(0.5 * (x1 + x2)) <= max(f(x1), f(x2)) + 1e-9


def test_certificate_is_deterministic_and_round_trips(tmp_path):
    model = scalar_model(a=1.0, b=0.3, unc=0.4)
    bytes_ = []
    for _ in range(2):
        cert = solver.solve_feasibility(solver.build_problem(model, "thm1"), seed=7)
        bytes_.append(json.dumps(cert.to_dict(), sort_keys=True))
    assert bytes_[0] == bytes_[1]
    back = solver.Certificate.from_dict(json.loads(bytes_[0]))
    ok, worst = solver.verify_certificate(model, back)
    assert ok and abs(worst - back.margin) <= 1e-9
    # a tampered certificate is rejected
    back.variables["P"] = -back.variables["P"]
    assert not solver.verify_certificate(model, back)[0]


def test_shared_multipliers_certify_easy_case():
    model = scalar_model(a=1.0, b=0.3, unc=0.4)
    problem = solver.build_problem(model, "thm1", multipliers="shared")
    assert sum(s.name.startswith("G") for s in problem.slots) == 1
    assert isinstance(solver.solve_feasibility(problem), solver.Certificate)


def test_per_vertex_scalings_need_unit_degrees():
    model = DelayedLfrModel(1, 1, 1, (1.0,), (LfrBlock([[-1.0]], [[1.0, 0.0]], [[0.0], [1.0]],
                                                          [[0.0, 1.0], [0.0, 0.0]], (2,)),
                                                LfrBlock([[0.2]], [], [], [], (0,))),
                            UncertaintyPolytope.from_box([-0.1], [0.1]))
    with pytest.raises(HypothesisError):
        solver.build_problem(model, "cor4")
    assert isinstance(solver.solve_feasibility(solver.build_problem(model, "cor3")), solver.Certificate)


def test_margin_without_uncertainty_is_sigma_max():
    res = solver.stability_margin(scalar_model(1.0, 0.5), "cor3", sigma_max=2.0)
    assert res.value == 2.0


def test_margin_bisection_contract():
    # everything feasible up to sigma_max = 1
    res = solver.stability_margin(scalar_model(1.0, 0.0, unc=0.5), "cor3", sigma_max=1.0, bisect_tol=0.1)
    assert res.value >= 0.9


def test_margin_undefined_when_nominal_fails():
    with pytest.raises(MarginUndefinedError):
        solver.stability_margin(scalar_model(1.0, 1.2, unc=0.5), "cor3", 1.0, **FAST)
    with pytest.raises(ValueError):
        solver.stability_margin(scalar_model(1.0, 0.2, unc=0.5), "cor3", 0.0)


def test_max_delay_reaches_h_max_when_delay_independent():
    # x' = -x - 0.1 x(t - h) passes cor2, so the delay bound should hit h_max
    res = solver.max_certified_delay(scalar_model(1.0, -0.1), "thm2", h_max=3.0, bisect_tol=0.1)
    assert res.value == pytest.approx(3.0)


def test_max_delay_errors():
    with pytest.raises(HypothesisError):
        solver.max_certified_delay(pure_delay(), "cor2")
    with pytest.raises(MarginUndefinedError):
        solver.max_certified_delay(scalar_model(-0.5, 0.0), "thm2", **FAST)
    with pytest.raises(ValueError):
        solver.max_certified_delay(pure_delay(), "thm2", ratio=[1.0, 2.0])


def test_zero_bound_drops_null_rows():
    problem = solver.build_problem(pure_delay(), "thm2", hbar=[0.0])
    assert all(c.offset.shape == (1, 1) for c in problem.constraints)
