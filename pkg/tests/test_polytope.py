import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from delaycert.errors import DimensionError, SizeGuardError
from delaycert.model import DelayedLfrModel, LfrBlock
from delaycert.polytope import (UncertaintyPolytope, canonical_key, convex_weights, delta_vertex_sets,
                                sample_theta, scale_polytope, vertex_counts, vertex_tuples)


def test_box_corners_and_origin():
    P = UncertaintyPolytope.from_box([-1, -2], [1, 2])
    assert len(P.vertices) == 4 and P.dimension == 2
    assert P.origin_flag
    assert not UncertaintyPolytope.from_box([0.1], [1.0]).origin_flag


def test_degenerate_box_collapses():
    P = UncertaintyPolytope.from_box([0.0, -1.0], [0.0, 1.0])
    assert len(P.vertices) == 2


def test_box_guard():
    with pytest.raises(SizeGuardError):
        UncertaintyPolytope.from_box(-np.ones(21), np.ones(21))
    with pytest.raises(DimensionError):
        UncertaintyPolytope.from_box([1.0], [0.0])


def test_vertex_membership_by_lp():
    tri = UncertaintyPolytope([[-1, -1], [2, -1], [-1, 2]])
    assert tri.contains([0, 0])
    assert tri.contains([0.5, 0.5])
    assert not tri.contains([1.0, 1.0])
    w = convex_weights(tri.vertices, [0.0, 0.0])
    assert w is not None and w.sum() == pytest.approx(1.0) and np.all(w >= -1e-12)


def test_equality_ignores_order_and_rounding():
    a = UncertaintyPolytope([[0, 1], [1, 0]])
    b = UncertaintyPolytope([[1, 0], [0, 1 + 1e-15]])
    assert a == b
    assert canonical_key([0.1 + 0.2]) == canonical_key([0.3])


def test_scaling():
    P = UncertaintyPolytope.from_box([-1], [2])
    Q = scale_polytope(P, 0.5)
    assert sorted(Q.vertices.ravel()) == [-0.5, 1.0]
    assert len(scale_polytope(P, 0.0).vertices) == 1
    with pytest.raises(ValueError):
        scale_polytope(P, -1.0)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_samples_stay_inside(seed, m):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-1, 1, size=(m + 2, m))
    verts = np.vstack([verts, -verts])  # symmetric, so the origin is inside
    P = UncertaintyPolytope(verts)
    for pt in sample_theta(P, 20, seed):
        assert P.contains(pt, tol=1e-7)


def _model_with_degrees(degrees, m=2):
    blocks = [LfrBlock(np.eye(1), np.zeros((1, sum(d))), np.zeros((sum(d), 1)),
                       np.zeros((sum(d), sum(d))), d) for d in degrees]
    return DelayedLfrModel(1, m, len(degrees) - 1, tuple(1.0 for _ in degrees[1:]), tuple(blocks),
                           UncertaintyPolytope.from_box(-np.ones(m), np.ones(m)))


def test_vertex_product_and_dedup():
    model = _model_with_degrees([(1, 1), (1, 0), (0, 1)])
    counts, v, vbar = vertex_counts(model, dedup=False)
    assert counts == [4, 4, 4] and v == vbar == 64
    counts, v, vbar = vertex_counts(model, dedup=True)
    assert counts == [4, 2, 2] and v == 16 and vbar == 64
    tuples = list(vertex_tuples(model))
    assert len(tuples) == 16
    assert tuples[0].indices == (1, 1, 1) and tuples[-1].indices == (4, 2, 2)
    assert [t.indices for t in tuples] == sorted(t.indices for t in tuples)


def test_delta_free_block_has_single_vertex():
    model = _model_with_degrees([(0, 0), (1, 0)])
    sets = delta_vertex_sets(model)
    assert len(sets[0]) == 1 and sets[0][0].values.shape == (0, 0)


def test_tuple_guard():
    model = _model_with_degrees([(1, 1), (1, 1), (1, 1)])
    with pytest.raises(SizeGuardError):
        list(vertex_tuples(model, max_tuples=10))
