"""Minimal-coordinate equations of motion, control-affine form and RK4 integration."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .actuation import (
    CHART_COND_LIMIT,
    ParameterizationChart,
    choose_chart,
    control_matrix,
    force_distribution,
)
from .errors import (
    ChartDegenerated,
    ChartInvalid,
    ConstraintDriftExceeded,
    CSpaceSingular,
    MissingInertialData,
    NoConvergence,
    SingularIteration,
    Underactuated,
)
from .kinematics import ee_pose, jacobians, solve_with_fixed
from .linalg import minors_indicator, rank_with_tolerance
from .mechanism import (
    TAU_H,
    Mechanism,
    angle_jacobian,
    constraint_bias,
    constraint_jacobian,
    constraints,
    point_jacobian,
    point_bias,
    tree_state,
    world_point,
)

GRAVITY = 9.81
RECHART_COND = 1e6


@dataclass(frozen=True)
class DynamicsTerms:
    G: np.ndarray
    Cqd: np.ndarray
    Q: np.ndarray
    JEt_tau: np.ndarray
    At: np.ndarray
    N: np.ndarray
    q: np.ndarray
    qd2: np.ndarray

    @property
    def rhs_free(self) -> np.ndarray:
        """Everything except G qdd_2 and A^T c, moved to the right-hand side."""
        return -(self.Cqd + self.Q + self.JEt_tau)


def _com(mech: Mechanism, i: int) -> np.ndarray:
    link = mech.links[i]
    off = link.com_offset if link.com_offset is not None else 0.5 * link.length
    return np.array([off, 0.0])


def _inertial_links(mech: Mechanism) -> list[int]:
    out = []
    for i, link in enumerate(mech.links):
        if link.id == mech.ground:
            continue
        if not link.has_inertia:
            raise MissingInertialData(f"link {link.id!r} lacks mass or inertia")
        out.append(i)
    return out


def tree_dynamics(mech: Mechanism, q, qd, gravity: bool = True):
    """Open-tree mass matrix M, velocity-product force and gravity gradient in full coordinates."""
    st = tree_state(mech, q, qd)
    n = mech.n
    M = np.zeros((n, n))
    h = np.zeros(n)
    grav = np.zeros(n)
    for i in _inertial_links(mech):
        link = mech.links[i]
        x = world_point(st, i, _com(mech, i))
        Jv = point_jacobian(mech, st, i, x)
        Jw = angle_jacobian(mech, i)
        M += link.mass * Jv.T @ Jv + link.inertia_about_com * np.outer(Jw, Jw)
        # angular Jacobian rows are constant, so only translation has a bias term
        h += link.mass * Jv.T @ point_bias(st, i, x)
        if gravity:
            grav += link.mass * GRAVITY * Jv[1]
    return M, h, grav, st


def potential_energy(mech: Mechanism, q, gravity: bool = True) -> float:
    if not gravity:
        return 0.0
    st = tree_state(mech, q)
    return float(sum(mech.links[i].mass * GRAVITY * world_point(st, i, _com(mech, i))[1]
                     for i in _inertial_links(mech)))


def ee_jacobian(mech: Mechanism, q, st=None) -> np.ndarray:
    """3 x n planar twist Jacobian (vx, vy, omega) of the EE point."""
    if st is None:
        st = tree_state(mech, q)
    L = mech.link_index[mech.ee.link]
    x = world_point(st, L, mech.ee.point)
    return np.vstack([point_jacobian(mech, st, L, x), angle_jacobian(mech, L)])


def assemble_terms(
    mech: Mechanism,
    chart: ParameterizationChart,
    q,
    qd2,
    tau=None,
    gravity: bool = True,
) -> DynamicsTerms:
    """Project the open-tree dynamics through qdot = N qdot_2.

    ``tau`` is the planar wrench (fx, fy, torque) the end-effector exerts on its
    environment, so it appears on the left of G qdd_2 + C qd_2 + Q + J_E^T tau = A^T c.
    """
    q = np.asarray(q, dtype=float)
    qd2 = np.asarray(qd2, dtype=float)
    J = constraint_jacobian(mech, q)
    chart.check(J)
    N = chart.basis(J)
    qd = N @ qd2
    M, h, grav, st = tree_dynamics(mech, q, qd, gravity)
    # Ndot qd_2: dependent accelerations forced by the velocity-product term of h(q) = 0
    Ndq = np.zeros(mech.n)
    if chart.dependent:
        Ndq[list(chart.dependent)] = -np.linalg.solve(chart.block(J), constraint_bias(mech, q, qd, st))
    tau = np.zeros(3) if tau is None else np.asarray(tau, dtype=float)
    At = N[list(mech.actuated)].T
    return DynamicsTerms(
        G=N.T @ M @ N,
        Cqd=N.T @ (M @ Ndq + h),
        Q=N.T @ grav,
        JEt_tau=N.T @ ee_jacobian(mech, q, st).T @ tau,
        At=At,
        N=N,
        q=q,
        qd2=qd2,
    )


def inverse_dynamics(
    mech: Mechanism,
    chart: ParameterizationChart,
    q,
    qd2,
    qdd2,
    tau=None,
    prestress=None,
    gravity: bool = True,
) -> np.ndarray:
    """Actuator forces c realizing qdd_2 at (q, qd_2)."""
    terms = assemble_terms(mech, chart, q, qd2, tau, gravity)
    target = terms.G @ np.asarray(qdd2, dtype=float) + terms.Cqd + terms.Q + terms.JEt_tau
    assessment = control_matrix(chart, jacobians(mech, q))
    if not assessment.full_actuated:
        c, *_ = np.linalg.lstsq(terms.At, target, rcond=None)
        res = float(np.linalg.norm(terms.At @ c - target))
        if res > 1e-9 * max(1.0, float(np.linalg.norm(target))):
            raise Underactuated(f"target not in range of A^T (residual {res:.3e})", res)
        return c if prestress is None else force_distribution(assessment, target, prestress)
    return force_distribution(assessment, target, prestress)


# ---------------------------------------------------------------- control system


@dataclass
class ControlSystem:
    """x' = f(x) + sum_i g_i(x) c_i with x = (q_2, qd_2) in the active chart."""

    mech: Mechanism
    chart: ParameterizationChart
    gravity: bool = True
    tau: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def reconstruct(self, q2, seed) -> np.ndarray:
        """Full configuration psi(q_2) near ``seed``."""
        if not self.chart.dependent:
            return self.mech.wrap(np.asarray(q2, dtype=float))
        fixed = {j: float(v) for j, v in zip(self.chart.independent, q2)}
        return solve_with_fixed(self.mech, seed, fixed)

    def terms(self, q, qd2) -> DynamicsTerms:
        return assemble_terms(self.mech, self.chart, q, qd2, self.tau, self.gravity)

    def fields(self, q, qd2) -> tuple[np.ndarray, np.ndarray]:
        """Drift f and control matrix [g_1 ... g_m] at a reconstructed configuration."""
        t = self.terms(q, qd2)
        d = len(qd2)
        Ginv = np.linalg.inv(t.G)
        f = np.concatenate([qd2, Ginv @ t.rhs_free])
        g = np.vstack([np.zeros((d, t.At.shape[1])), Ginv @ t.At])
        return f, g

    def accelerations(self, q, qd2, c) -> np.ndarray:
        t = self.terms(q, qd2)
        return np.linalg.solve(t.G, t.rhs_free + t.At @ np.asarray(c, dtype=float))

    def output(self, q):
        return ee_pose(self.mech, q)

    def energy(self, q, qd2) -> tuple[float, float]:
        t = self.terms(q, qd2)
        return float(0.5 * qd2 @ t.G @ qd2), potential_energy(self.mech, q, self.gravity)


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray  # full joint rates N qd_2
    qd2: np.ndarray
    c: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    power: np.ndarray  # c . qd_a - tau . V
    rank_g: np.ndarray
    alpha: np.ndarray
    events: list[dict] = field(default_factory=list)
    halted: bool = False

    @property
    def energy(self) -> np.ndarray:
        return self.kinetic + self.potential


def _controls(controls, m: int) -> Callable[[float], np.ndarray]:
    if callable(controls):
        return lambda t: np.asarray(controls(t), dtype=float)
    arr = np.zeros(m) if controls is None else np.asarray(controls, dtype=float)
    return lambda t: arr


def _monitor(mech: Mechanism, q, kinds, rtol: float) -> dict[str, tuple[int, np.ndarray]]:
    J = constraint_jacobian(mech, q)
    mats = {"cspace": J, "passive": J[:, list(mech.passive)], "actuator": J[:, list(mech.actuated)]}
    out = {}
    for k in kinds:
        rk = rank_with_tolerance(mats[k], rtol).rank
        out[k] = (rk, minors_indicator(mats[k], rk))
    return out


def forward_dynamics(
    mech: Mechanism,
    system: ControlSystem,
    controls,
    q0,
    qd2,
    horizon: float,
    dt: float,
    halt_on=("cspace", "passive", "actuator"),
    rtol: float = 1e-10,
) -> Trajectory:
    """Fixed-step RK4 on x = (q_2, qd_2) with the full q rebuilt through the chart at every stage.

    A sign change of a monitored rank indicator, or a rank drop, ends the run
    with a ``ModeBoundary`` event.  The chart is replaced when its dependent
    block condition passes 1e6.
    """
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    cfun = _controls(controls, mech.m)
    q = np.asarray(q0, dtype=float)
    if np.linalg.norm(constraints(mech, q)) > TAU_H:
        raise ConstraintDriftExceeded("initial configuration is not on the variety")
    ch = system.chart
    x = np.concatenate([q[list(ch.independent)], np.asarray(qd2, dtype=float)])
    d = ch.delta
    steps = int(round(horizon / dt))
    events: list[dict] = []
    rec = {k: [] for k in ("t", "q", "qd", "qd2", "c", "T", "U", "P", "rg", "al")}
    watch = _monitor(mech, q, halt_on, rtol)

    def record(t, q, x):
        c = cfun(t)
        terms = system.terms(q, x[d:])
        Ginv_At = np.linalg.solve(terms.G, terms.At)
        V = ee_jacobian(mech, q) @ (terms.N @ x[d:])
        rec["t"].append(t)
        rec["q"].append(q.copy())
        rec["qd"].append(terms.N @ x[d:])
        rec["qd2"].append(x[d:].copy())
        rec["c"].append(c)
        rec["T"].append(0.5 * x[d:] @ terms.G @ x[d:])
        rec["U"].append(potential_energy(mech, q, system.gravity))
        rec["P"].append(float(c @ (terms.At.T @ x[d:]) - system.tau @ V))
        rec["rg"].append(rank_with_tolerance(Ginv_At, rtol).rank if Ginv_At.size else 0)
        rec["al"].append(rank_with_tolerance(terms.At, rtol).rank if terms.At.size else 0)

    def deriv(t, xs, seed):
        qs = system.reconstruct(xs[:d], seed)
        f, g = system.fields(qs, xs[d:])
        return f + g @ cfun(t), qs

    record(0.0, q, x)
    halted = False
    for k in range(steps):
        t = k * dt
        try:
            k1, _ = deriv(t, x, q)
            k2, qa = deriv(t + dt / 2, x + dt / 2 * k1, q)
            k3, qb = deriv(t + dt / 2, x + dt / 2 * k2, qa)
            k4, _ = deriv(t + dt, x + dt * k3, qb)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            q = system.reconstruct(x[:d], q)
        except (NoConvergence, SingularIteration, ChartInvalid) as exc:
            events.append({"t": t, "event": "ModeBoundary", "reason": f"reconstruction failed: {exc}"})
            halted = True
            break
        drift = float(np.linalg.norm(constraints(mech, q)))
        if drift > TAU_H:
            raise ConstraintDriftExceeded(f"||h|| = {drift:.3e} at t = {t + dt:.6g}")
        J = constraint_jacobian(mech, q)
        cond = float(np.linalg.cond(system.chart.block(J))) if system.chart.dependent else 1.0
        if cond > RECHART_COND:
            try:
                new = choose_chart(jacobians(mech, q), mech)
            except CSpaceSingular as exc:
                raise ChartDegenerated(str(exc)) from exc
            if new.cond > CHART_COND_LIMIT:
                raise ChartDegenerated(f"no chart with condition below {CHART_COND_LIMIT:g}")
            qd_full = system.chart.basis(J) @ x[d:]
            system.chart = new
            x = np.concatenate([q[list(new.independent)], qd_full[list(new.independent)]])
            events.append({"t": t + dt, "event": "Rechart", "dependent": list(new.dependent), "cond": cond})
        now = _monitor(mech, q, halt_on, rtol)
        hit = [k for k in halt_on if now[k][0] != watch[k][0]
               or (now[k][1].size and float(now[k][1] @ watch[k][1]) < 0.0)]
        record(t + dt, q, x)
        if hit:
            events.append({"t": t + dt, "event": "ModeBoundary", "reason": "singularity: " + ", ".join(hit)})
            halted = True
            break
        watch = now

    return Trajectory(
        t=np.array(rec["t"]),
        q=np.array(rec["q"]),
        qd=np.array(rec["qd"]),
        qd2=np.array(rec["qd2"]),
        c=np.array(rec["c"]).reshape(len(rec["t"]), -1),
        kinetic=np.array(rec["T"]),
        potential=np.array(rec["U"]),
        power=np.array(rec["P"]),
        rank_g=np.array(rec["rg"]),
        alpha=np.array(rec["al"]),
        events=events,
        halted=halted,
    )


def write_trajectory_csv(traj: Trajectory, mech: Mechanism, path) -> None:
    ids = [j.id for j in mech.joints]
    d = traj.qd2.shape[1] if traj.qd2.ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + ids + [f"qd2_{i}" for i in range(d)] + [f"c_{mech.joints[a].id}" for a in mech.actuated]
                   + ["kinetic", "potential", "energy"])
        for i in range(len(traj.t)):
            row = [f"{traj.t[i]:.10g}"] + [f"{v:.12g}" for v in traj.q[i]] + [f"{v:.12g}" for v in traj.qd2[i]]
            row += [f"{v:.12g}" for v in traj.c[i]] + [f"{traj.kinetic[i]:.12g}", f"{traj.potential[i]:.12g}",
                                                        f"{traj.energy[i]:.12g}"]
            w.writerow(row)
