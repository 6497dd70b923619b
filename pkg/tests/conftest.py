from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from delaycert.model import DelayedLfrModel, LfrBlock
from delaycert.polytope import UncertaintyPolytope

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def scalar_model(a=1.0, b=0.5, h=1.0, unc=0.0):
    """``x' = -a x + (b + theta) x(t - h)`` with ``theta`` in ``[-unc, unc]``."""
    b0 = LfrBlock([[-a]], [], [], [], (0,))
    if unc:
        b1 = LfrBlock([[b]], [[1.0]], [[1.0]], [[0.0]], (1,))
    else:
        b1 = LfrBlock([[b]], [], [], [], (0,))
    return DelayedLfrModel(1, 1, 1, (h,), (b0, b1), UncertaintyPolytope.from_box([-unc], [unc]))


def pure_delay(h=1.0):
    """``x' = -x(t - h)``."""
    b0 = LfrBlock([[0.0]], [], [], [], (0,))
    b1 = LfrBlock([[-1.0]], [], [], [], (0,))
    return DelayedLfrModel(1, 1, 1, (h,), (b0, b1), UncertaintyPolytope.from_box([0.0], [0.0]))


def delay_free(A):
    A = np.atleast_2d(A)
    n = A.shape[0]
    return DelayedLfrModel(n, 1, 0, (), (LfrBlock(A, [], [], [], (0,)),),
                           UncertaintyPolytope.from_box([0.0], [0.0]))


def random_model(rng, n=None, r=None, m=None, dmax=2, scale=0.3, box=0.5):
    """Seeded random LFR model with small, well-posed loops."""
    n = int(rng.integers(1, 4)) if n is None else n
    r = int(rng.integers(0, 3)) if r is None else r
    m = int(rng.integers(1, 3)) if m is None else m
    blocks = []
    for _ in range(r + 1):
        degrees = tuple(int(s) for s in rng.integers(0, dmax + 1, size=m))
        while sum(degrees) > dmax:
            degrees = tuple(int(s) for s in rng.integers(0, dmax + 1, size=m))
        d = sum(degrees)
        blocks.append(LfrBlock(rng.standard_normal((n, n)), rng.standard_normal((n, d)),
                               rng.standard_normal((d, n)), scale * rng.standard_normal((d, d)),
                               degrees))
    theta = UncertaintyPolytope.from_box(-box * np.ones(m), box * np.ones(m))
    delays = tuple(float(h) for h in rng.uniform(0.2, 2.0, size=r))
    return DelayedLfrModel(n, m, r, delays, tuple(blocks), theta)


@pytest.fixture
def fixtures_dir():
    return FIXTURES
