import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkmkit import fixtures
from pkmkit.errors import (
    DisconnectedGraph,
    DuplicateId,
    NoGroundLink,
    ParseError,
    UnsupportedJointKind,
    ZeroLengthLink,
)
from pkmkit.kinematics import jacobians
from pkmkit.mechanism import (
    build_mechanism,
    constraint_bias,
    constraint_jacobian,
    constraints,
    load_description,
    load_mechanism,
    to_description,
    tree_state,
    wrap_angle,
)

from conftest import FIXTURES, random_admissible


def _desc(name="five_bar"):
    return copy.deepcopy(load_description(fixtures.path(name)))


@pytest.mark.parametrize("name,n,m,r,grubler", [
    ("five_bar", 5, 2, 3, 2),
    ("rr_2rrr", 8, 3, 6, 2),
    ("parallelogram_4bar", 4, 2, 3, 1),
    ("serial_2r", 2, 2, 0, 2),
])
def test_fixture_counts(name, n, m, r, grubler):
    mech = fixtures.load(name)
    assert (mech.n, mech.m, mech.r, mech.grubler) == (n, m, r, grubler)


@pytest.mark.parametrize("name", FIXTURES)
def test_named_configurations_are_admissible(name):
    mech = fixtures.load(name)
    for key in mech.configurations:
        assert np.linalg.norm(constraints(mech, mech.config(key))) < 1e-12


def test_description_round_trip(mech):
    again = build_mechanism(json.loads(json.dumps(to_description(mech))))
    assert to_description(again) == to_description(mech)
    q = mech.config(next(iter(mech.configurations)))
    assert np.allclose(constraints(again, q), constraints(mech, q))


def test_toml_description(tmp_path):
    p = tmp_path / "serial.toml"
    p.write_text("""
name = "s"
ground = "g"
[[links]]
id = "g"
length = 1.0
[[links]]
id = "a"
length = 1.0
[[joints]]
id = "j"
parent = "g"
child = "a"
actuated = true
[ee]
link = "a"
point = [1.0, 0.0]
""")
    mech = load_mechanism(p)
    assert (mech.n, mech.m, mech.r) == (1, 1, 0)


@pytest.mark.parametrize("mutate,error", [
    (lambda d: d["links"].append({"id": "L1", "length": 1.0}), DuplicateId),
    (lambda d: d["joints"].append(dict(d["joints"][0])), DuplicateId),
    (lambda d: d.update(ground="nowhere"), NoGroundLink),
    (lambda d: d["links"].append({"id": "float", "length": 1.0}), DisconnectedGraph),
    (lambda d: d["joints"][2].update(kind="spherical"), UnsupportedJointKind),
    (lambda d: d["links"][1].update(length=0.0), ZeroLengthLink),
    (lambda d: d.pop("joints"), ParseError),
    (lambda d: d["joints"][0].update(limits=[1.0]), ParseError),
])
def test_malformed_descriptions(mutate, error):
    d = _desc()
    mutate(d)
    with pytest.raises(error):
        build_mechanism(d)


def test_unreadable_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_mechanism(bad)
    with pytest.raises(ParseError):
        load_mechanism(tmp_path / "missing.json")


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_angle_range_and_identity(a):
    w = float(wrap_angle(a))
    assert -np.pi < w <= np.pi
    assert abs(np.sin(w) - np.sin(a)) < 1e-9 and abs(np.cos(w) - np.cos(a)) < 1e-9


def test_five_bar_closure_matches_geometry(five_bar):
    """At an admissible q both chains end at the same point: the EE."""
    q = five_bar.config("home")
    st_ = tree_state(five_bar, q)
    L3, L4 = five_bar.link_index["L3"], five_bar.link_index["L4"]
    th1, th2 = q[0], q[1]
    left = np.array([np.cos(th1), np.sin(th1)]) + 1.5 * np.array([np.cos(st_.theta[L3]), np.sin(st_.theta[L3])])
    right = np.array([2 + np.cos(th2), np.sin(th2)]) + 1.5 * np.array([np.cos(st_.theta[L4]), np.sin(st_.theta[L4])])
    assert np.allclose(left, right, atol=1e-12)


def _central_jacobian(mech, q, h=1e-6):
    cols = []
    for i in range(mech.n):
        e = np.zeros(mech.n)
        e[i] = h
        d = constraints(mech, q + e) - constraints(mech, q - e)
        d[2::3] = wrap_angle(d[2::3])
        cols.append(d / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("name", [n for n in FIXTURES if n != "serial_2r"])
def test_jacobian_matches_central_differences(name):
    mech = fixtures.load(name)
    for q in random_admissible(mech, 100, seed=1):
        J = constraint_jacobian(mech, q)
        Jd = _central_jacobian(mech, q)
        assert np.linalg.norm(J - Jd) <= 1e-6 * max(1.0, np.linalg.norm(J))


@pytest.mark.parametrize("name", [n for n in FIXTURES if n != "serial_2r"])
def test_bias_is_second_derivative_along_a_line(name):
    """Jdot qd = d^2/ds^2 h(q + s qd) at s = 0."""
    mech = fixtures.load(name)
    rng = np.random.default_rng(2)
    for q in random_admissible(mech, 10, seed=3):
        qd = rng.normal(size=mech.n)
        h = 1e-4
        d2 = (constraints(mech, q + h * qd) - 2 * constraints(mech, q) + constraints(mech, q - h * qd)) / h**2
        assert np.allclose(constraint_bias(mech, q, qd), d2, atol=1e-5)


@pytest.mark.parametrize("name", ["five_bar", "rr_2rrr", "parallelogram_4bar"])
def test_ranks_do_not_depend_on_loop_basis(name):
    a = fixtures.load(name)
    b = a.with_tie_break("reverse")
    for q in random_admissible(a, 10, seed=4) + [a.config(k) for k in a.configurations]:
        ra, rb = jacobians(a, q), jacobians(b, q)
        assert ra.ranks == rb.ranks


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=5, max_size=5))
def test_constraints_periodic_in_revolute_joints(q):
    mech = fixtures.load("five_bar")
    q = np.array(q)
    shift = 2 * np.pi * np.array([1, -1, 2, 0, -3])
    assert np.allclose(constraints(mech, q), constraints(mech, q + shift), atol=1e-9)
