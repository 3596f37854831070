"""Rank-based singularity classification at a point and along paths."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import linalg
from .errors import EmptyIntersection, NoConvergence, ProbeProjectionFailed, SingularIteration
from .kinematics import output_jacobian, project, require_admissible
from .linalg import RANK_RTOL, RankInfo, minors_indicator, rank_with_tolerance
from .mechanism import Mechanism, constraint_jacobian, configuration, tree_state, wrap_angle

__all__ = [
    "KINDS",
    "PROBE_RADIUS",
    "PointRanks",
    "SingularityReport",
    "classify",
    "point_ranks",
    "edge_crossing",
    "find_seeds",
    "singular_locus_scan",
    "rank_with_tolerance",
]

PROBE_RADIUS = 1e-4
KINDS = ("cspace", "passive", "actuator", "output")
# "input" is the union of the passive and actuator kinds
GROUPS = {
    "cspace": ("cspace",),
    "passive": ("passive",),
    "actuator": ("actuator",),
    "input": ("passive", "actuator"),
    "output": ("output",),
}


@dataclass(frozen=True)
class PointRanks:
    """Ranks of the four matrices watched for singularities, with their SVD evidence."""

    J: RankInfo
    J_p: RankInfo
    J_a: RankInfo
    out: RankInfo  # rank of J_O restricted to the tangent space, J_O N(J)

    def rank(self, kind: str) -> int:
        return {"cspace": self.J, "passive": self.J_p, "actuator": self.J_a, "output": self.out}[kind].rank

    def info(self, kind: str) -> RankInfo:
        return {"cspace": self.J, "passive": self.J_p, "actuator": self.J_a, "output": self.out}[kind]


def _stacked(mech: Mechanism, q, st=None) -> dict[str, np.ndarray]:
    if st is None:
        st = tree_state(mech, q)
    J = constraint_jacobian(mech, q, st)
    J_O = output_jacobian(mech, q, st)
    return {
        "cspace": J,
        "passive": J[:, list(mech.passive)],
        "actuator": J[:, list(mech.actuated)],
        # rank [J; J_O] = rank J + rank J_O N(J): a polynomial stand-in for the output rank
        "output": np.vstack([J, J_O]),
    }


def point_ranks(mech: Mechanism, q, rtol: float = RANK_RTOL) -> PointRanks:
    q = np.asarray(q, dtype=float)
    st = tree_state(mech, q)
    J = constraint_jacobian(mech, q, st)
    J_O = output_jacobian(mech, q, st)
    N = linalg.null_space(J, rtol, mech.n)
    return PointRanks(
        rank_with_tolerance(J, rtol),
        rank_with_tolerance(J[:, list(mech.passive)], rtol),
        rank_with_tolerance(J[:, list(mech.actuated)], rtol),
        rank_with_tolerance(J_O @ N, rtol),
    )


def indicator(mech: Mechanism, q, kind: str, k: int) -> np.ndarray:
    """Continuous sign-carrying indicator whose zero set contains rank drops below ``k``."""
    M = _stacked(mech, q)[kind]
    return minors_indicator(M, k)


def batch_matrices(mech: Mechanism, Q) -> tuple[np.ndarray, np.ndarray]:
    """Stacked constraint and output Jacobians for many configurations."""
    Q = np.asarray(Q, dtype=float).reshape(-1, mech.n)
    Js, JOs = [], []
    for q in Q:
        st = tree_state(mech, q)
        Js.append(constraint_jacobian(mech, q, st))
        JOs.append(output_jacobian(mech, q, st))
    k = 3 if mech.ee.report_orientation else 2
    return np.array(Js).reshape(len(Q), mech.r, mech.n), np.array(JOs).reshape(len(Q), k, mech.n)


def _batch_rank(Ms: np.ndarray, rtol: float) -> np.ndarray:
    if Ms.shape[-1] == 0 or Ms.shape[-2] == 0:
        return np.zeros(Ms.shape[0], dtype=int)
    s = np.linalg.svd(Ms, compute_uv=False)
    tol = max(Ms.shape[-2:]) * s[:, :1] * rtol
    return np.where(s[:, 0] > 0, np.sum(s > tol, axis=1), 0)


def batch_ranks(mech: Mechanism, Q, rtol: float = RANK_RTOL, mats=None) -> np.ndarray:
    """(samples, 4) integer ranks in ``KINDS`` order, same policy as :func:`point_ranks`."""
    J, JO = batch_matrices(mech, Q) if mats is None else mats
    out = np.zeros((J.shape[0], len(KINDS)), dtype=int)
    out[:, 0] = _batch_rank(J, rtol)
    out[:, 1] = _batch_rank(J[:, :, list(mech.passive)], rtol)
    out[:, 2] = _batch_rank(J[:, :, list(mech.actuated)], rtol)
    if mech.r == 0:
        out[:, 3] = _batch_rank(JO, rtol)
        return out
    _, s, vt = np.linalg.svd(J)
    for rk in np.unique(out[:, 0]):
        sel = np.flatnonzero(out[:, 0] == rk)
        N = np.swapaxes(vt[sel, rk:, :], 1, 2)
        out[sel, 3] = _batch_rank(JO[sel] @ N, rtol)
    return out


def batch_indicator(mech: Mechanism, kind: str, k: int, mats) -> np.ndarray:
    J, JO = mats
    M = {
        "cspace": J,
        "passive": J[:, :, list(mech.passive)],
        "actuator": J[:, :, list(mech.actuated)],
        "output": np.concatenate([J, JO], axis=1),
    }[kind]
    return minors_indicator(M, k)


def generic_rank(mech: Mechanism, ranks: PointRanks, kind: str) -> int:
    """Rank of the matrix used by :func:`indicator` given pointwise ranks."""
    if kind == "output":
        return ranks.J.rank + ranks.out.rank
    return ranks.rank(kind)


# ----------------------------------------------------------------- point classifier


@dataclass
class SingularityReport:
    q: np.ndarray
    flags: dict[str, bool]
    rank_flags: dict[str, bool]
    ranks: dict[str, int]
    probe_ranks: dict[str, list[int]]
    deficient: dict[str, bool]
    labels: list[str]
    delta_diff: int
    delta_loc: int
    uncertain: bool
    gap_ratios: dict[str, float]
    probes: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def singular(self) -> bool:
        return any(self.flags.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q"] = [float(v) for v in self.q]
        return d


def _probe_directions(N: np.ndarray, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    dirs = []
    for i in range(N.shape[1]):
        dirs += [N[:, i], -N[:, i]]
    while len(dirs) < count:
        v = N @ rng.standard_normal(N.shape[1])
        dirs.append(v / np.linalg.norm(v))
    return dirs[:count]


def classify(
    mech: Mechanism,
    q,
    rtol: float = RANK_RTOL,
    radius: float = PROBE_RADIUS,
    seed: int = 0,
) -> SingularityReport:
    """Label a configuration by comparing ranks at q with ranks at nearby points of V.

    A kind is flagged iff its rank at q differs from the rank at any projected
    probe.  Probes move a distance ``radius`` along tangent directions (the
    kernel of J at q) and are projected back onto h = 0.
    """
    q = require_admissible(mech, q)
    rng = np.random.default_rng(seed)
    here = point_ranks(mech, q, rtol)
    N = linalg.null_space(constraint_jacobian(mech, q), rtol, mech.n) if mech.r else np.eye(mech.n)
    delta_diff = N.shape[1]
    count = 2 * delta_diff + 4
    probe_ranks: dict[str, list[int]] = {k: [] for k in KINDS}
    uncertain = any(here.info(k).uncertain for k in KINDS)
    loc = []
    for d in _probe_directions(N, count, rng):
        try:
            qp = project(mech, q + radius * d)
        except (NoConvergence, SingularIteration) as exc:
            raise ProbeProjectionFailed(f"probe projection failed: {exc}") from exc
        pr = point_ranks(mech, qp, rtol)
        for k in KINDS:
            probe_ranks[k].append(pr.rank(k))
        uncertain |= any(pr.info(k).uncertain for k in KINDS)
        loc.append(mech.n - pr.J.rank)
    rank_flags = {k: any(r != here.rank(k) for r in probe_ranks[k]) for k in KINDS}
    flags = dict(rank_flags)
    notes = []
    if flags["cspace"] and not (flags["passive"] and flags["actuator"]):
        # A c-space singularity counts as both passive and actuator singular even
        # when a column partition keeps locally constant rank; rank_flags keeps the raw test.
        notes.append("passive/actuator implied by the c-space flag (partition ranks locally constant)")
        flags["passive"] = flags["actuator"] = True
    flags["input"] = flags["passive"] or flags["actuator"]

    # plain deficiency against the largest rank the shape allows
    bundle_dims = {
        "cspace": (mech.r, mech.n),
        "passive": (mech.r, mech.n - mech.m),
        "actuator": (mech.r, mech.m),
        "output": (len(output_jacobian(mech, q)), delta_diff),
    }
    deficient = {k: here.rank(k) < min(bundle_dims[k]) for k in KINDS}

    labels = []
    if here.J_p.rank < mech.n - mech.m:
        labels.append("RPM")
    if here.J.rank > here.J_p.rank:
        labels.append("II")
    return SingularityReport(
        q=q,
        flags=flags,
        rank_flags=rank_flags,
        ranks={k: here.rank(k) for k in KINDS},
        probe_ranks=probe_ranks,
        deficient=deficient,
        labels=labels,
        delta_diff=delta_diff,
        delta_loc=min(loc) if loc else delta_diff,
        uncertain=bool(uncertain),
        gap_ratios={k: here.info(k).gap_ratio for k in KINDS},
        probes=count,
        notes=notes,
    )


# -------------------------------------------------------------- path crossings


def _path_point(mech: Mechanism, qa: np.ndarray, dq: np.ndarray, t: float) -> np.ndarray:
    return project(mech, qa + t * dq)


def joint_difference(mech: Mechanism, qa, qb) -> np.ndarray:
    d = np.asarray(qb, dtype=float) - np.asarray(qa, dtype=float)
    rev = mech.revolute_mask
    d[rev] = wrap_angle(d[rev])
    return d


def edge_crossing(
    mech: Mechanism,
    qa,
    qb,
    kind: str,
    k: int,
    pa: np.ndarray | None = None,
    pb: np.ndarray | None = None,
    rtol: float = RANK_RTOL,
) -> np.ndarray | None:
    """Locate a rank drop of ``kind`` between two nearby points of V.

    Indicators of rank ``k`` are compared at the ends; on a sign flip the
    scalar pa . p(t) along the projected straight path is bracketed by
    Brent's method and the root is accepted only if the rank there is
    confirmed to fall below ``k``.
    """
    qa = np.asarray(qa, dtype=float)
    if pa is None:
        pa = indicator(mech, qa, kind, k)
    if pb is None:
        pb = indicator(mech, qb, kind, k)
    if pa.size == 0 or float(pa @ pb) >= 0.0:
        return None
    dq = joint_difference(mech, qa, qb)
    scale = float(pa @ pa)

    def f(t):
        if t == 0.0:
            return scale
        if t == 1.0:
            return float(pa @ pb)
        return float(pa @ indicator(mech, _path_point(mech, qa, dq, t), kind, k))

    try:
        t = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=100)
        q_star = _path_point(mech, qa, dq, t)
    except (NoConvergence, SingularIteration, ValueError, RuntimeError):
        return None
    M = _stacked(mech, q_star)[kind]
    if rank_with_tolerance(M, rtol).rank < k:
        return q_star
    return None


# -------------------------------------------------------------------- locus scan


def default_box(mech: Mechanism) -> np.ndarray:
    box = np.tile([-np.pi, np.pi], (mech.n, 1)).astype(float)
    for i, jt in enumerate(mech.joints):
        if jt.limits is not None:
            box[i] = jt.limits
        elif not jt.revolute:
            box[i] = (-10.0, 10.0)
    return box


def in_box(mech: Mechanism, q, box) -> bool:
    box = np.asarray(box, dtype=float)
    return bool(np.all(q >= box[:, 0] - 1e-12) and np.all(q <= box[:, 1] + 1e-12))


def find_seeds(mech: Mechanism, box=None, count: int = 8, tries: int = 400, seed: int = 0) -> list[np.ndarray]:
    """Admissible, feasible configurations inside ``box`` found by projecting random points."""
    rng = np.random.default_rng(seed)
    box = default_box(mech) if box is None else np.asarray(box, dtype=float)
    found: list[np.ndarray] = []
    for _ in range(tries):
        x = rng.uniform(box[:, 0], box[:, 1])
        try:
            q = project(mech, x)
        except (NoConvergence, SingularIteration):
            continue
        c = configuration(mech, q)
        if not (c.admissible and c.feasible and in_box(mech, q, box)):
            continue
        if all(np.linalg.norm(joint_difference(mech, q, f)) > 1e-3 for f in found):
            found.append(q)
        if len(found) >= count:
            break
    return found


def singular_locus_scan(
    mech: Mechanism,
    box=None,
    which: str = "input",
    step: float = 0.05,
    seeds=None,
    budget: int = 20000,
    rtol: float = RANK_RTOL,
    seed: int = 0,
) -> list:
    """Sample V inside ``box`` and return configurations on the singular locus of ``which``."""
    from .atlas import RankClassifier, _generic, crossing_edges, sample_cspace  # atlas builds on this module

    if which not in GROUPS:
        raise ValueError(f"unknown singularity kind {which!r}")
    box = default_box(mech) if box is None else np.asarray(box, dtype=float)
    if seeds is None:
        seeds = find_seeds(mech, box, seed=seed)
    if not seeds:
        raise EmptyIntersection("no admissible configuration found inside the box")
    atlas = sample_cspace(mech, seeds, step=step, budget=budget, box=box, rtol=rtol)
    use = atlas.usable
    clf = RankClassifier(mech, rtol)
    mats = clf.matrices(atlas.q)
    gen = _generic(clf.ranks(atlas.q, mats))
    E = atlas.edges[use[atlas.edges[:, 0]] & use[atlas.edges[:, 1]]] if len(atlas.edges) else atlas.edges
    found: list[np.ndarray] = []

    def add(q):
        if all(np.linalg.norm(joint_difference(mech, q, f)) > 1e-6 for f in found):
            found.append(q)

    for kind in GROUPS[which]:
        g = gen[kind]
        if not use.any():
            continue
        top = int(g[use].max())
        for i in np.flatnonzero(use & (g < top)):
            add(atlas.q[i])
        _, pts = crossing_edges(atlas, E, kind, clf, mats, g, use)
        for e in sorted(pts):
            if in_box(mech, pts[e], box):
                add(pts[e])
    return [configuration(mech, q) for q in found]
