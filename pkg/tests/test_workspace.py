import copy

import numpy as np
import pytest

from pkmkit import fixtures
from pkmkit.errors import MixedOutputUnits, SeedNotAdmissible
from pkmkit.kinematics import ee_pose, jacobians
from pkmkit.mechanism import build_mechanism, load_description
from pkmkit.workspace import manipulability, sweep, write_grid_csv


def test_serial_manipulability_closed_form(serial):
    for s2 in (0.3, 1.2, 2.5):
        q = np.array([0.4, s2])
        s = np.linalg.svd(np.array([[-np.sin(0.4) - 0.8 * np.sin(0.4 + s2), -0.8 * np.sin(0.4 + s2)],
                                    [np.cos(0.4) + 0.8 * np.cos(0.4 + s2), 0.8 * np.cos(0.4 + s2)]]),
                          compute_uv=False)
        assert manipulability(jacobians(serial, q)) == pytest.approx((s[1] / s[0]) ** 2)
    assert manipulability(jacobians(serial, np.array([0.4, 0.0]))) < 1e-20


def test_manipulability_vanishes_at_input_singularity(five_bar):
    assert manipulability(jacobians(five_bar, five_bar.config("q0"))) == 0.0
    assert manipulability(jacobians(five_bar, five_bar.config("home"))) > 0.05


def test_orientation_output_rejected():
    d = copy.deepcopy(load_description(fixtures.path("five_bar")))
    d["ee"]["orientation"] = True
    mech = build_mechanism(d)
    with pytest.raises(MixedOutputUnits):
        manipulability(jacobians(mech, mech.config("home")))
    with pytest.raises(MixedOutputUnits):
        sweep(mech, (0, 2, 0, 2), 5, mech.config("home"))


@pytest.fixture(scope="module")
def five_bar_grid():
    mech = fixtures.load("five_bar")
    return sweep(mech, (-0.5, 2.5, -0.5, 2.5), 41, mech.config("home"))


def test_sweep_cells_reproduce_targets(five_bar_grid):
    mech = fixtures.load("five_bar")
    g = five_bar_grid
    for iy, ix in list(zip(*np.nonzero(g.reachable)))[:50]:
        assert np.allclose(ee_pose(mech, g.q[iy, ix]).position, [g.xs[ix], g.ys[iy]], atol=1e-9)


def test_sweep_is_mirror_symmetric(five_bar_grid):
    """The 5-bar fixture is symmetric about x = 1, and so is its 1/kappa field."""
    g = five_bar_grid
    ok = g.reachable & g.feasible
    both = ok & ok[:, ::-1]
    assert both.sum() > 100
    k = g.inv_kappa
    assert np.abs(k - k[:, ::-1])[both].max() < 1e-8


def test_sweep_splits_five_bar_at_locus(five_bar_grid):
    g = five_bar_grid
    ok = g.reachable & g.feasible
    assert len(set(g.mode[ok].tolist())) == 2
    assert np.isfinite(g.singular_distance[ok]).all()
    # 1/kappa is smallest next to the locus
    near = ok & (g.singular_distance < 0.1)
    far = ok & (g.singular_distance > 0.5)
    assert np.median(g.inv_kappa[near]) < np.median(g.inv_kappa[far])


def test_redundant_sweep_has_no_input_singularity():
    mech = fixtures.load("rr_2rrr")
    g = sweep(mech, (-0.5, 2.5, -0.5, 2.5), 41, mech.config("home"))
    ok = g.reachable & g.feasible
    assert ok.sum() > 100
    assert np.nanmin(g.inv_kappa[ok]) > 0
    assert len(set(g.mode[ok].tolist())) == 1


def test_seed_checked(five_bar):
    with pytest.raises(SeedNotAdmissible):
        sweep(five_bar, (0, 2, 0, 2), 5, np.zeros(5))


def test_grid_csv(tmp_path, five_bar_grid):
    p = tmp_path / "g.csv"
    write_grid_csv(five_bar_grid, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,reachable,inv_kappa,mode,feasible"
    assert len(lines) == 1 + 41 * 41
