"""Manipulability fields over a grid of end-effector positions."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import MixedOutputUnits, NoConvergence, NotAdmissible, OutOfWorkspace, SeedNotAdmissible, SingularIteration
from .kinematics import JacobianBundle, ee_pose, inverse_position, jacobians
from .linalg import RANK_RTOL, minors_indicator, rank_with_tolerance
from .mechanism import TAU_H, Mechanism, constraint_jacobian, constraints, inequality
from .singularity import edge_crossing, joint_difference

MAX_JUMP = 1.0  # rad (or m) per joint between neighbouring cells; larger jumps mean a branch change


def manipulability(bundle: JacobianBundle) -> float:
    """1/kappa of J_F J_F^T, i.e. (sigma_min / sigma_max)^2 of J_F; 0 where J_F is absent."""
    if bundle.J_O.shape[0] > 2:
        raise MixedOutputUnits("1/kappa mixes translation and rotation when orientation is reported")
    if bundle.J_F is None:
        return 0.0
    s = np.linalg.svd(bundle.J_F, compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float((s[-1] / s[0]) ** 2) if len(s) >= bundle.J_F.shape[0] else 0.0


@dataclass
class WorkspaceGrid:
    box: tuple[float, float, float, float]
    xs: np.ndarray
    ys: np.ndarray
    reachable: np.ndarray  # (ny, nx) bool
    inv_kappa: np.ndarray  # nan where unreachable
    mode: np.ndarray  # -1 where unreachable or infeasible
    feasible: np.ndarray
    singular_distance: np.ndarray  # EE distance to the nearest cell edge crossing an input singularity
    q: np.ndarray  # (ny, nx, n), nan where unreachable

    @property
    def resolution(self) -> tuple[int, int]:
        return len(self.xs), len(self.ys)

    @property
    def cell(self) -> tuple[float, float]:
        dx = self.xs[1] - self.xs[0] if len(self.xs) > 1 else 0.0
        dy = self.ys[1] - self.ys[0] if len(self.ys) > 1 else 0.0
        return float(dx), float(dy)


def _input_watch(mech: Mechanism, q, ranks: dict[str, int]) -> dict[str, np.ndarray]:
    J = constraint_jacobian(mech, q)
    mats = {"passive": J[:, list(mech.passive)], "actuator": J[:, list(mech.actuated)]}
    return {k: minors_indicator(mats[k], ranks[k]) for k in mats}


def sweep(mech: Mechanism, box, resolution, seed, rtol: float = RANK_RTOL) -> WorkspaceGrid:
    """Flood-fill inverse kinematics over an EE grid from the cell nearest the seed.

    Every cell is solved from an already solved 4-neighbour so the whole map
    stays on the seed's working mode.  Cells are split into modes by confirmed
    sign changes of the passive/actuator rank indicators between neighbours.
    """
    seed = np.asarray(getattr(seed, "q", seed), dtype=float)
    if seed.shape != (mech.n,) or np.linalg.norm(constraints(mech, seed)) > TAU_H:
        raise SeedNotAdmissible("sweep seed is not on the constraint variety")
    if mech.ee.report_orientation:
        raise MixedOutputUnits("sweeps are defined for point end-effectors")
    xmin, xmax, ymin, ymax = map(float, box)
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    xs, ys = np.linspace(xmin, xmax, int(nx)), np.linspace(ymin, ymax, int(ny))
    reach = np.zeros((ny, nx), dtype=bool)
    feas = np.zeros((ny, nx), dtype=bool)
    ik = np.full((ny, nx), np.nan)
    Q = np.full((ny, nx, mech.n), np.nan)
    tried = np.zeros((ny, nx), dtype=bool)

    def solve(iy, ix, start) -> bool:
        try:
            c = inverse_position(mech, np.array([xs[ix], ys[iy]]), start)
        except (NoConvergence, SingularIteration, OutOfWorkspace, NotAdmissible):
            return False
        if np.max(np.abs(joint_difference(mech, start, c.q))) > MAX_JUMP:
            return False
        reach[iy, ix] = True
        feas[iy, ix] = c.feasible
        Q[iy, ix] = c.q
        ik[iy, ix] = manipulability(jacobians(mech, c.q, rtol, check=False))
        return True

    p0 = ee_pose(mech, seed).position
    gx, gy = np.meshgrid(xs, ys)
    order = np.argsort(np.hypot(gx - p0[0], gy - p0[1]).ravel(), kind="stable")
    queue: deque[tuple[int, int]] = deque()
    for flat in order[:8]:
        iy, ix = divmod(int(flat), nx)
        tried[iy, ix] = True
        if solve(iy, ix, seed):
            queue.append((iy, ix))
            break
    while queue:
        iy, ix = queue.popleft()
        if not feas[iy, ix]:
            continue
        for dy, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            jy, jx = iy + dy, ix + dx
            if 0 <= jy < ny and 0 <= jx < nx and not tried[jy, jx]:
                tried[jy, jx] = True
                if solve(jy, jx, Q[iy, ix]):
                    queue.append((jy, jx))
    mode, dist = _modes(mech, xs, ys, reach & feas, Q, rtol)
    ik[~reach] = np.nan
    return WorkspaceGrid((xmin, xmax, ymin, ymax), xs, ys, reach, ik, mode, feas, dist, Q)


def _modes(mech: Mechanism, xs, ys, ok, Q, rtol):
    ny, nx = ok.shape
    cells = [(iy, ix) for iy in range(ny) for ix in range(nx) if ok[iy, ix]]
    if not cells:
        return np.full(ok.shape, -1), np.full(ok.shape, np.inf)
    J0 = constraint_jacobian(mech, Q[cells[0]])
    top = {"passive": 0, "actuator": 0}
    for c in cells:
        J = constraint_jacobian(mech, Q[c]) if c != cells[0] else J0
        top["passive"] = max(top["passive"], rank_with_tolerance(J[:, list(mech.passive)], rtol).rank)
        top["actuator"] = max(top["actuator"], rank_with_tolerance(J[:, list(mech.actuated)], rtol).rank)
    ind = {c: _input_watch(mech, Q[c], top) for c in cells}
    parent = {c: c for c in cells}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    crossings = []
    for c in cells:
        for dy, dx in ((0, 1), (1, 0)):
            d = (c[0] + dy, c[1] + dx)
            if d not in ind:
                continue
            cut = False
            for k in ("passive", "actuator"):
                pa, pb = ind[c][k], ind[d][k]
                if pa.size and float(pa @ pb) < 0.0 and edge_crossing(
                        mech, Q[c], Q[d], k, top[k], pa, pb, rtol) is not None:
                    cut = True
                    break
            if cut:
                crossings.append(((xs[c[1]] + xs[d[1]]) / 2, (ys[c[0]] + ys[d[0]]) / 2))
            else:
                ra, rb = find(c), find(d)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    mode = np.full(ok.shape, -1)
    roots: dict = {}
    for c in cells:
        r = find(c)
        roots.setdefault(r, len(roots))
        mode[c] = roots[r]
    gx, gy = np.meshgrid(xs, ys)
    dist = np.full(ok.shape, np.inf)
    if crossings:
        P = np.array(crossings)
        for iy in range(ny):
            d = np.hypot(gx[iy][:, None] - P[:, 0], gy[iy][:, None] - P[:, 1])
            dist[iy] = d.min(axis=1)
    return mode, dist


def write_grid_csv(grid: WorkspaceGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "reachable", "inv_kappa", "mode", "feasible"])
        for iy, y in enumerate(grid.ys):
            for ix, x in enumerate(grid.xs):
                k = grid.inv_kappa[iy, ix]
                w.writerow([f"{x:.10g}", f"{y:.10g}", int(grid.reachable[iy, ix]),
                            "" if np.isnan(k) else f"{k:.10g}", int(grid.mode[iy, ix]), int(grid.feasible[iy, ix])])
