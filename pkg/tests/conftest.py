import numpy as np
import pytest

from pkmkit import fixtures
from pkmkit.errors import NoConvergence, SingularIteration
from pkmkit.kinematics import project
from pkmkit.mechanism import inequality
from pkmkit.singularity import default_box

FIXTURES = fixtures.NAMES


def random_admissible(mech, count, seed=0, feasible=False):
    """Project uniform random points of the default box onto V."""
    rng = np.random.default_rng(seed)
    box = default_box(mech)
    out = []
    for _ in range(50 * count):
        guess = rng.uniform(box[:, 0], box[:, 1])
        try:
            q = project(mech, guess)
        except (NoConvergence, SingularIteration):
            continue
        if feasible:
            g = inequality(mech, q)
            if g.size and g.min() < 0:
                continue
        out.append(q)
        if len(out) == count:
            break
    assert len(out) == count, f"only {len(out)} admissible points found"
    return out


def two_circle(p, r1, c, r2, sign):
    """Intersection of circle (p, r1) with circle (c, r2); sign picks the side of p->c."""
    d = np.linalg.norm(c - p)
    a = (r1**2 - r2**2 + d**2) / (2 * d)
    h = np.sqrt(max(r1**2 - a**2, 0.0))
    u = (c - p) / d
    return p + a * u + sign * h * np.array([-u[1], u[0]])


@pytest.fixture(params=FIXTURES)
def mech(request):
    return fixtures.load(request.param)


@pytest.fixture
def five_bar():
    return fixtures.load("five_bar")


@pytest.fixture
def rr():
    return fixtures.load("rr_2rrr")


@pytest.fixture
def four_bar():
    return fixtures.load("parallelogram_4bar")


@pytest.fixture
def serial():
    return fixtures.load("serial_2r")
