import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from pkmkit import fixtures
from pkmkit.atlas import (
    _components,
    dof_report,
    label_modes,
    redundancy_measures,
    sample_cspace,
    self_motion,
    trace_section,
)
from pkmkit.errors import SeedNotAdmissible, TaskProbeOutsideAtlas
from pkmkit.kinematics import ee_pose
from pkmkit.mechanism import constraints, wrap_angle
from pkmkit.singularity import joint_difference

from conftest import two_circle


@pytest.fixture(scope="module")
def four_bar_atlas():
    mech = fixtures.load("parallelogram_4bar")
    return label_modes(sample_cspace(mech, [mech.config("flat")]))


@pytest.fixture(scope="module")
def serial_atlas():
    mech = fixtures.load("serial_2r")
    return label_modes(sample_cspace(mech, [mech.config("home")], step=0.1))


def brute_branches(samples=20000):
    """Both rocker-angle branches of the 4-bar over a dense crank grid.

    Each branch is followed by linear prediction, so at the two crossing
    points it continues straight through instead of swapping partners.
    """
    theta = np.linspace(0.0, 2 * np.pi, samples, endpoint=False) + 0.3
    sols = []
    for t in theta:
        b = np.array([np.cos(t), np.sin(t)])
        pair = []
        for sign in (1.0, -1.0):
            p = two_circle(b, 2.0, np.array([2.0, 0.0]), 1.0, sign)
            pair.append(np.arctan2(p[1], p[0] - 2.0))
        sols.append(pair)
    sols = np.array(sols)
    curves = np.zeros_like(sols)
    curves[0] = sols[0]
    curves[1] = sols[1] if np.abs(wrap_angle(sols[1] - sols[0])).sum() < np.abs(
        wrap_angle(sols[1][::-1] - sols[0])).sum() else sols[1][::-1]
    for i in range(2, len(theta)):
        pred = curves[i - 1] + wrap_angle(curves[i - 1] - curves[i - 2])
        straight = np.abs(wrap_angle(sols[i] - pred)).sum()
        swapped = np.abs(wrap_angle(sols[i][::-1] - pred)).sum()
        curves[i] = sols[i] if straight <= swapped else sols[i][::-1]
    return theta, curves


def test_four_bar_atlas_samples_on_variety(four_bar_atlas):
    a = four_bar_atlas
    mech = a.mech
    assert not a.budget_exhausted
    for q in a.q:
        assert np.linalg.norm(constraints(mech, q)) < 1e-9
    lengths = [np.linalg.norm(joint_difference(mech, a.q[i], a.q[j])) for i, j in a.edges]
    assert max(lengths) <= 3 * a.step


def test_four_bar_modes_match_brute_force(four_bar_atlas):
    a = four_bar_atlas
    assert a.mode_count("assembly") == 1
    assert a.mode_count("motion") == 2
    theta, curves = brute_branches()
    th = np.column_stack([np.cos(theta), np.sin(theta)])
    branch_of_mode: dict[int, set[int]] = {}
    for q, lab in zip(a.q, a.labels["motion"]):
        if lab < 0:
            continue
        i = int(np.argmin(np.linalg.norm(th - [np.cos(q[0]), np.sin(q[0])], axis=1)))
        err = np.abs(wrap_angle(curves[i] - q[3]))
        assert err.min() < 1e-2, "sample off both brute-force branches"
        if err.max() < 0.05:
            continue  # near a crossing the branches are indistinguishable
        branch_of_mode.setdefault(int(lab), set()).add(int(np.argmin(err)))
    assert all(len(v) == 1 for v in branch_of_mode.values())
    assert {next(iter(v)) for v in branch_of_mode.values()} == {0, 1}


def test_four_bar_modes_meet_at_flat_pose(four_bar_atlas):
    a = four_bar_atlas
    flagged = np.flatnonzero(a.flags["cspace"])
    assert len(flagged) >= 1
    flat = a.mech.config("flat")
    assert min(np.linalg.norm(joint_difference(a.mech, flat, a.q[i])) for i in flagged) < 1e-9
    rep = dof_report(a)
    assert rep.delta == 1 and rep.delta_diff_max == 2 and not rep.kinematotropic


def test_four_bar_atlas_same_from_regular_seed(four_bar_atlas):
    mech = four_bar_atlas.mech
    a = label_modes(sample_cspace(mech, [mech.config("home")]))
    assert a.mode_count("motion") == 2


def test_serial_modes(serial_atlas):
    a = serial_atlas
    assert [a.mode_count(g) for g in ("assembly", "motion", "actuation")] == [1, 1, 1]
    # the folded and stretched elbow circles split the torus into two operation modes
    assert a.mode_count("operation") == 2
    lab = a.labels["operation"]
    s2 = a.q[:, 1]
    up, down = lab[(s2 > 0.2) & (s2 < 2.9)], lab[(s2 < -0.2) & (s2 > -2.9)]
    assert len(set(up)) == 1 and len(set(down)) == 1 and set(up) != set(down)


def test_redundancy_measures(serial_atlas):
    mech = serial_atlas.mech
    probe = ee_pose(mech, mech.config("home")).position
    r = redundancy_measures(mech, serial_atlas, task_dim=2, task_probe=[probe])
    assert (r.dim_W, r.delta, r.rho_k) == (2, 2, 0)
    assert r.verdict == "exact" and r.contained
    assert r.regular_mode is not None
    r1 = redundancy_measures(mech, serial_atlas, task_dim=1, task_probe=[probe])
    assert r1.verdict == "redundant"
    far = np.array([5.0, 5.0])
    assert redundancy_measures(mech, serial_atlas, task_dim=2, task_probe=[far]).verdict == "deficient"
    with pytest.raises(TaskProbeOutsideAtlas):
        redundancy_measures(mech, serial_atlas, task_dim=2, task_probe=[far], strict=True)


def test_self_motion_of_serial_is_two_elbows(serial_atlas):
    mech = serial_atlas.mech
    pose = ee_pose(mech, mech.config("home")).position
    idx = self_motion(serial_atlas, pose, tol=0.1)
    assert len(idx) >= 2
    elbows = np.sign(serial_atlas.q[idx, 1])
    assert set(elbows) == {-1.0, 1.0}


def test_seed_must_be_admissible():
    mech = fixtures.load("five_bar")
    with pytest.raises(SeedNotAdmissible):
        sample_cspace(mech, [np.zeros(5)])


def test_budget_is_reported():
    mech = fixtures.load("five_bar")
    a = sample_cspace(mech, [mech.config("home")], budget=50)
    assert a.budget_exhausted and len(a) == 50


def test_trace_section_two_sheets_near_q0():
    mech = fixtures.load("five_bar")
    rows = trace_section(mech, mech.config("q0"), (0, 1), 3, half_width=0.08, resolution=7)
    nodes: dict[tuple, list] = {}
    for i, j, u, v, w, s in rows:
        nodes.setdefault((int(i), int(j)), []).append(w)
    away = [w for (i, j), w in nodes.items() if (i, j) != (3, 3)]
    assert sum(len(w) == 2 for w in away) >= 0.9 * len(away)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40))))
def test_components_match_scipy(case):
    n, pairs = case
    members = np.ones(n, dtype=bool)
    lab = _components(n, members, pairs)
    rows = [a for a, _ in pairs]
    cols = [b for _, b in pairs]
    G = coo_matrix((np.ones(len(pairs)), (rows, cols)), shape=(n, n))
    k, ref = connected_components(G, directed=False)
    assert lab.max() + 1 == k
    for a in range(n):
        for b in range(n):
            assert (lab[a] == lab[b]) == (ref[a] == ref[b])
