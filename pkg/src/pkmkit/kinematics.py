"""Jacobians, position kinematics, and velocity-level solutions on the constraint variety."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg
from .errors import DimensionMismatch, NoConvergence, NotAdmissible, OutOfWorkspace, SingularIteration
from .linalg import RANK_RTOL, RankInfo, rank_with_tolerance
from .mechanism import (
    TAU_H,
    Configuration,
    Mechanism,
    angle_jacobian,
    configuration,
    constraint_jacobian,
    constraints,
    point_jacobian,
    tree_state,
    world_point,
    wrap_angle,
)

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
NEWTON_GROWTH_LIMIT = 3


@dataclass(frozen=True)
class EEPose:
    position: np.ndarray
    orientation: float | None = None

    def vector(self) -> np.ndarray:
        if self.orientation is None:
            return np.asarray(self.position, dtype=float)
        return np.append(self.position, self.orientation)


@dataclass(frozen=True)
class JacobianBundle:
    q: np.ndarray
    J: np.ndarray
    J_p: np.ndarray
    J_a: np.ndarray
    J_O: np.ndarray
    J_I: np.ndarray
    active: tuple[int, ...]
    passive: tuple[int, ...]
    M_1: np.ndarray | None
    M_2: np.ndarray | None
    J_F: np.ndarray | None
    J_F_reason: str
    rank_J: RankInfo
    rank_Jp: RankInfo
    rank_Ja: RankInfo
    N_J: np.ndarray
    N_p: np.ndarray
    N_a: np.ndarray
    rtol: float = RANK_RTOL

    @property
    def n(self) -> int:
        return self.J.shape[1]

    @property
    def m(self) -> int:
        return len(self.active)

    @property
    def ranks(self) -> dict[str, int]:
        return {"J": self.rank_J.rank, "J_p": self.rank_Jp.rank, "J_a": self.rank_Ja.rank}


def output_jacobian(mech: Mechanism, q, st=None) -> np.ndarray:
    if st is None:
        st = tree_state(mech, q)
    L = mech.link_index[mech.ee.link]
    x = world_point(st, L, mech.ee.point)
    Jo = point_jacobian(mech, st, L, x)
    if mech.ee.report_orientation:
        Jo = np.vstack([Jo, angle_jacobian(mech, L)])
    return Jo


def input_jacobian(mech: Mechanism) -> np.ndarray:
    J_I = np.zeros((mech.m, mech.n))
    for row, col in enumerate(mech.actuated):
        J_I[row, col] = 1.0
    return J_I


def ee_pose(mech: Mechanism, q) -> EEPose:
    q = np.asarray(q.q if isinstance(q, Configuration) else q, dtype=float)
    st = tree_state(mech, q)
    L = mech.link_index[mech.ee.link]
    pos = world_point(st, L, mech.ee.point)
    ori = float(wrap_angle(st.theta[L])) if mech.ee.report_orientation else None
    return EEPose(pos, ori)


def _as_q(mech: Mechanism, q) -> np.ndarray:
    q = np.asarray(q.q if isinstance(q, Configuration) else q, dtype=float)
    if q.shape != (mech.n,):
        raise DimensionMismatch(f"expected q of length {mech.n}, got shape {q.shape}")
    return q


def require_admissible(mech: Mechanism, q) -> np.ndarray:
    q = _as_q(mech, q)
    res = float(np.linalg.norm(constraints(mech, q)))
    if res > TAU_H:
        raise NotAdmissible(f"||h(q)|| = {res:.3e} exceeds {TAU_H:g}")
    return q


def _input_output_form(J_p, J_a, J_O, passive, active, rank_p, rtol):
    """Eliminate passive rates: rows L with L [J_p; J_O,p] = 0 give M_2 V = M_1 qdot_a."""
    r = J_p.shape[0]
    k = J_O.shape[0]
    if rank_p.rank < J_p.shape[1]:
        return None, None, None, "passive Jacobian rank-deficient (rank J_p < n - m)"
    S = np.vstack([J_p, J_O[:, passive]])
    L = linalg.left_null_space(S, rtol)
    M_2 = L[:, r:]
    M_1 = L @ np.vstack([J_a, J_O[:, active]])
    info = rank_with_tolerance(M_2, rtol) if M_2.size else None
    if info is None or info.rank < k:
        return M_1, M_2, None, "M_2 lacks full column rank"
    if M_2.shape[0] == k:
        return M_1, M_2, np.linalg.solve(M_2, M_1), "square"
    # redundant actuation: consistent inputs satisfy the extra rows exactly
    return M_1, M_2, np.linalg.pinv(M_2) @ M_1, "least-squares (redundant inputs)"


def jacobians(mech: Mechanism, q, rtol: float = RANK_RTOL, check: bool = True) -> JacobianBundle:
    q = require_admissible(mech, q) if check else _as_q(mech, q)
    st = tree_state(mech, q)
    J = constraint_jacobian(mech, q, st)
    J_O = output_jacobian(mech, q, st)
    act, pas = mech.actuated, mech.passive
    J_p, J_a = J[:, list(pas)], J[:, list(act)]
    rJ, rp, ra = (rank_with_tolerance(M, rtol) for M in (J, J_p, J_a))
    M_1, M_2, J_F, reason = _input_output_form(J_p, J_a, J_O, list(pas), list(act), rp, rtol)
    return JacobianBundle(
        q=q, J=J, J_p=J_p, J_a=J_a, J_O=J_O, J_I=input_jacobian(mech),
        active=act, passive=pas, M_1=M_1, M_2=M_2, J_F=J_F, J_F_reason=reason,
        rank_J=rJ, rank_Jp=rp, rank_Ja=ra,
        N_J=linalg.null_space(J, rtol, mech.n),
        N_p=linalg.null_space(J_p, rtol, len(pas)),
        N_a=linalg.null_space(J_a, rtol, len(act)),
        rtol=rtol,
    )


# ------------------------------------------------------------------------- Newton


def newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0,
    tol: float = NEWTON_TOL,
    maxiter: int = NEWTON_MAXITER,
    require_full_rank: bool = False,
    rtol: float = RANK_RTOL,
    stall_error=NoConvergence,
) -> tuple[np.ndarray, int]:
    """Full-step Newton / minimum-norm Gauss-Newton.

    Steps use the SVD pseudoinverse.  Divergence is declared when the residual
    grows for three consecutive iterations; both divergence and the iteration
    cap raise ``stall_error``.  With ``require_full_rank`` a
    column-rank-deficient Jacobian raises :class:`SingularIteration`.
    """
    x = np.array(x0, dtype=float)
    F = residual(x)
    norm = float(np.linalg.norm(F))
    growth = 0
    best = norm
    for it in range(maxiter + 1):
        if norm <= tol:
            return x, it
        if it == maxiter:
            break
        Jx = jacobian(x)
        if require_full_rank:
            info = rank_with_tolerance(Jx, rtol)
            if info.rank < Jx.shape[1]:
                raise SingularIteration(
                    f"augmented Jacobian rank {info.rank} < {Jx.shape[1]} (singular configuration)")
        x = x - linalg.pinv(Jx, rtol) @ F
        F = residual(x)
        new = float(np.linalg.norm(F))
        growth = growth + 1 if new > norm else 0
        norm = new
        best = min(best, norm)
        if growth >= NEWTON_GROWTH_LIMIT or not np.isfinite(norm):
            raise stall_error(f"residual diverging ({norm:.3e}) after {it + 1} iterations")
    raise stall_error(f"no convergence in {maxiter} iterations (residual {norm:.3e}, best {best:.3e})")


def project(mech: Mechanism, q, tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAXITER) -> np.ndarray:
    """Minimum-norm Newton projection of an arbitrary joint vector onto h(q) = 0."""
    q = _as_q(mech, q)
    if mech.r == 0:
        return mech.wrap(q)
    memo = {}

    def F(x):
        memo["x"], memo["st"] = x, tree_state(mech, x)
        return constraints(mech, x, memo["st"])

    def JF(x):
        return constraint_jacobian(mech, x, memo["st"] if memo.get("x") is x else None)

    x, _ = newton(F, JF, q, tol, maxiter)
    return mech.wrap(x)


def solve_with_fixed(mech: Mechanism, seed, fixed: dict[int, float]) -> np.ndarray:
    """Newton on h(q) = 0 with selected coordinates held at given values."""
    idx = list(fixed)
    vals = np.array([fixed[i] for i in idx], dtype=float)
    rev = mech.revolute_mask[idx]
    S = np.zeros((len(idx), mech.n))
    S[np.arange(len(idx)), idx] = 1.0

    def F(x):
        d = x[idx] - vals
        d[rev] = wrap_angle(d[rev])
        return np.concatenate([constraints(mech, x), d])

    x, _ = newton(F, lambda x: np.vstack([constraint_jacobian(mech, x), S]), seed, require_full_rank=True)
    return mech.wrap(x)


def forward_position(mech: Mechanism, q_a, seed) -> Configuration:
    """Assemble the mechanism for prescribed actuator values, starting from ``seed``."""
    seed = require_admissible(mech, seed)
    q_a = np.asarray(q_a, dtype=float)
    if q_a.shape != (mech.m,):
        raise DimensionMismatch(f"expected {mech.m} actuator values")
    act = list(mech.actuated)
    rev = mech.revolute_mask[act]

    def F(x):
        d = x[act] - q_a
        d[rev] = wrap_angle(d[rev])
        return np.concatenate([constraints(mech, x), d])

    J_I = input_jacobian(mech)
    x, _ = newton(F, lambda x: np.vstack([constraint_jacobian(mech, x), J_I]), seed, require_full_rank=True)
    return configuration(mech, x)


def inverse_position(mech: Mechanism, target: EEPose, seed) -> Configuration:
    """Solve [h(q); f_O(q) - target] = 0 by Newton from ``seed``."""
    seed = require_admissible(mech, seed)
    tv = target.vector() if isinstance(target, EEPose) else np.asarray(target, dtype=float)
    k = 3 if mech.ee.report_orientation else 2
    if tv.shape != (k,):
        raise DimensionMismatch(f"expected an EE target of length {k}")

    def F(x):
        d = ee_pose(mech, x).vector() - tv
        if k == 3:
            d[2] = wrap_angle(d[2])
        return np.concatenate([constraints(mech, x), d])

    def JF(x):
        st = tree_state(mech, x)
        return np.vstack([constraint_jacobian(mech, x, st), output_jacobian(mech, x, st)])

    x, _ = newton(F, JF, seed, stall_error=OutOfWorkspace)
    return configuration(mech, x)


# ---------------------------------------------------------------- velocity level


@dataclass(frozen=True)
class VelocitySolution:
    particular: np.ndarray
    null_basis: np.ndarray
    consistent: bool
    residual: float


def velocity_solutions(bundle: JacobianBundle, rates, given: str = "active") -> VelocitySolution:
    """General solution of J_p qd_p + J_a qd_a = 0 for the complementary rates.

    ``given="active"`` returns qd_p = -J_p^+ J_a qd_a + N(J_p) z; ``"passive"``
    the symmetric solution for qd_a.  ``consistent`` is false when the given
    rates are instantaneously impossible.
    """
    rates = np.asarray(rates, dtype=float)
    if given == "active":
        known, unknown, N = bundle.J_a, bundle.J_p, bundle.N_p
    elif given == "passive":
        known, unknown, N = bundle.J_p, bundle.J_a, bundle.N_a
    else:
        raise ValueError("given must be 'active' or 'passive'")
    if rates.shape != (known.shape[1],):
        raise DimensionMismatch(f"expected {known.shape[1]} rates")
    rhs = known @ rates
    part = -linalg.pinv(unknown, bundle.rtol) @ rhs
    res = float(np.linalg.norm(unknown @ part + rhs))
    scale = max(1.0, float(np.linalg.norm(rhs)))
    return VelocitySolution(part, N, res <= 1e-9 * scale, res)


def tangent_basis(mech: Mechanism, q, rtol: float = RANK_RTOL) -> np.ndarray:
    if mech.r == 0:
        return np.eye(mech.n)
    return linalg.null_space(constraint_jacobian(mech, q), rtol, mech.n)
