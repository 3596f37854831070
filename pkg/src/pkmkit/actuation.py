"""Coordinate partitioning, control matrix, degree of actuation and force distribution."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from . import linalg
from .errors import ChartInvalid, CSpaceSingular, PrestressNotInNullSpace
from .kinematics import JacobianBundle
from .linalg import rank_with_tolerance
from .mechanism import Mechanism

CHART_COND_LIMIT = 1e8


class ActuationDeficiencyWarning(UserWarning):
    """Target generalized force is only matched in the least-squares sense."""


@dataclass(frozen=True)
class ParameterizationChart:
    independent: tuple[int, ...]
    dependent: tuple[int, ...]
    center: np.ndarray
    cond: float
    radius: float

    @property
    def delta(self) -> int:
        return len(self.independent)

    def block(self, J: np.ndarray) -> np.ndarray:
        return J[:, list(self.dependent)]

    def basis(self, J: np.ndarray) -> np.ndarray:
        """n x delta matrix N with qdot = N qdot_2 on the tangent space."""
        n = J.shape[1]
        N = np.zeros((n, self.delta))
        N[list(self.independent), np.arange(self.delta)] = 1.0
        if self.dependent:
            N[list(self.dependent)] = -np.linalg.solve(self.block(J), J[:, list(self.independent)])
        return N

    def check(self, J: np.ndarray) -> float:
        """Condition number of the dependent block at J; ChartInvalid past the limit."""
        if not self.dependent:
            return 1.0
        c = float(np.linalg.cond(self.block(J)))
        if not np.isfinite(c) or c > CHART_COND_LIMIT:
            raise ChartInvalid(f"dependent block condition {c:.3e} exceeds {CHART_COND_LIMIT:g}")
        return c


def _lever_scale(mech: Mechanism) -> float:
    return float(sum(l.length for l in mech.links if l.id != mech.ground)) or 1.0


def choose_chart(bundle: JacobianBundle, mech: Mechanism | None = None) -> ParameterizationChart:
    """Pick dependent joints by column-pivoted QR of J.

    Pivoting takes the column of largest remaining norm at each step (first
    index on ties), a greedy route to a well-conditioned r x r block.  The
    chart is refused where J has lost row rank, since no choice of delta
    joint variables parameterizes V there.
    """
    J = bundle.J
    r, n = J.shape
    if r == 0:
        return ParameterizationChart(tuple(range(n)), (), bundle.q, 1.0, np.inf)
    if bundle.rank_J.rank < r:
        raise CSpaceSingular(f"rank J = {bundle.rank_J.rank} < {r}: no dependent block is invertible")
    _, _, piv = qr(J, pivoting=True, mode="economic")
    dep = tuple(sorted(int(i) for i in piv[:r]))
    ind = tuple(i for i in range(n) if i not in dep)
    B = J[:, list(dep)]
    s = np.linalg.svd(B, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if cond > CHART_COND_LIMIT:
        raise CSpaceSingular(f"best dependent block has condition {cond:.3e}")
    scale = _lever_scale(mech) if mech is not None else max(1.0, float(np.abs(J).max()))
    return ParameterizationChart(ind, dep, bundle.q, cond, float(s[-1] / scale))


def all_charts(bundle: JacobianBundle, limit: float = CHART_COND_LIMIT) -> list[ParameterizationChart]:
    """Every dependent-index subset whose block is invertible, best conditioned first."""
    from itertools import combinations

    J = bundle.J
    r, n = J.shape
    out = []
    for dep in combinations(range(n), r):
        B = J[:, list(dep)]
        s = np.linalg.svd(B, compute_uv=False) if r else np.ones(1)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        if cond <= limit:
            ind = tuple(i for i in range(n) if i not in dep)
            out.append(ParameterizationChart(ind, tuple(dep), bundle.q, cond, float(s[-1])))
    return sorted(out, key=lambda c: (c.cond, c.dependent))


@dataclass(frozen=True)
class ActuationAssessment:
    A: np.ndarray
    alpha: int
    rho: int
    delta: int
    m: int
    null_At: np.ndarray
    chart: ParameterizationChart

    @property
    def full_actuated(self) -> bool:
        return self.alpha == self.delta

    @property
    def redundant(self) -> bool:
        return self.rho > 0

    @property
    def label(self) -> str:
        kind = "full-actuated" if self.full_actuated else "underactuated"
        return ("redundantly " if self.redundant else "non-redundantly ") + kind


def control_matrix(chart: ParameterizationChart, bundle: JacobianBundle) -> ActuationAssessment:
    """A with qdot_a = A qdot_2; alpha = rank A, rho = m - alpha."""
    chart.check(bundle.J)
    N = chart.basis(bundle.J)
    A = N[list(bundle.active)]
    alpha = rank_with_tolerance(A, bundle.rtol).rank if A.size else 0
    m = len(bundle.active)
    null_At = linalg.null_space(A.T, bundle.rtol, m) if A.size else np.eye(m)
    return ActuationAssessment(A, alpha, m - alpha, chart.delta, m, null_At, chart)


def singular_diagnostics(bundle: JacobianBundle) -> dict[str, int]:
    """Actuation diagnostics usable at any point of V, singular or not.

    ``projection_rank`` is the rank of the tangent space N(J) projected onto the
    actuated coordinates.  ``assignable`` subtracts the tangent motions that
    leave the actuators at rest (max(0, rank - kernel dimension)): input
    directions that exist only alongside an unobservable internal motion are
    not counted as independently assignable.  At regular points of a
    full-actuated mechanism both equal alpha.
    """
    P = bundle.J_I @ bundle.N_J
    info = rank_with_tolerance(P, bundle.rtol) if P.size else None
    rank = info.rank if info else 0
    kernel = bundle.N_J.shape[1] - rank
    return {"projection_rank": rank, "kernel": kernel, "assignable": max(0, rank - kernel)}


def force_distribution(assessment: ActuationAssessment, target, prestress=None) -> np.ndarray:
    """Minimum-norm c with A^T c = target, plus an optional prestress in N(A^T)."""
    A = assessment.A
    target = np.asarray(target, dtype=float)
    c = linalg.pinv(A.T) @ target
    if not assessment.full_actuated:
        res = float(np.linalg.norm(A.T @ c - target))
        if res > 1e-10 * max(1.0, float(np.linalg.norm(target))):
            warnings.warn(f"underactuated: residual {res:.3e} in A^T c = target", ActuationDeficiencyWarning,
                          stacklevel=2)
    if prestress is not None:
        p = np.asarray(prestress, dtype=float)
        if np.linalg.norm(A.T @ p) > 1e-8 * np.linalg.norm(p):
            raise PrestressNotInNullSpace(f"||A^T p|| = {np.linalg.norm(A.T @ p):.3e}")
        c = c + p
    return c
