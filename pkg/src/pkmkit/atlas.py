"""Sampled atlas of the configuration variety and its assembly/motion/actuation/operation modes."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoConvergence, SeedNotAdmissible, SingularIteration, TaskProbeOutsideAtlas
from .kinematics import EEPose, ee_pose, project, solve_with_fixed
from .linalg import RANK_RTOL
from .mechanism import TAU_H, Mechanism, constraint_jacobian, constraints, inequality, wrap_angle
from .singularity import (
    KINDS,
    batch_indicator,
    batch_matrices,
    batch_ranks,
    edge_crossing,
    joint_difference,
)

GRANULARITIES = ("assembly", "motion", "actuation", "operation")
# kinds whose singularities separate modes at each granularity
SEPARATORS = {
    "motion": ("cspace",),
    "actuation": ("cspace", "passive", "actuator"),
    "operation": ("cspace", "passive", "actuator", "output"),
}
TANGENT_COS = np.cos(np.radians(35.0))


@dataclass
class ModeAtlas:
    mech: Mechanism
    step: float
    q: np.ndarray
    feasible: np.ndarray
    inside: np.ndarray
    edges: np.ndarray
    tangents: list[np.ndarray]
    budget_exhausted: bool = False
    ranks: np.ndarray | None = None  # (samples, 4) in KINDS order
    flags: dict[str, np.ndarray] = field(default_factory=dict)
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    boundary: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.q)

    @property
    def usable(self) -> np.ndarray:
        return self.feasible & self.inside

    def mode_count(self, granularity: str) -> int:
        lab = self.labels[granularity]
        return int(lab.max() + 1) if lab.size and lab.max() >= 0 else 0

    def members(self, granularity: str, mode: int) -> np.ndarray:
        return np.flatnonzero(self.labels[granularity] == mode)


# ------------------------------------------------------------------- sampling


def _embed(mech: Mechanism, q: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(q)
    rev = mech.revolute_mask
    return np.hstack([np.cos(q[:, rev]), np.sin(q[:, rev]), q[:, ~rev]])


def _oriented_basis(N: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span N built from projected coordinate axes.

    Unlike raw SVD vectors this varies smoothly along V, so expansion
    steps line up into a near-regular grid.
    """
    if N.shape[1] == 0:
        return N
    P = N @ N.T
    order = np.argsort(-np.round(np.diag(P), 12), kind="stable")
    Q, R = np.linalg.qr(P[:, order[: N.shape[1]]])
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def _step_directions(mech: Mechanism, q: np.ndarray, rtol: float, branch_tol: float):
    """Tangent basis at q plus right singular vectors with small singular values.

    The near-null vectors let expansion leave one branch for another close to
    a c-space singularity, where branches meet.
    """
    if mech.r == 0:
        return np.eye(mech.n), np.zeros((mech.n, 0))
    J = constraint_jacobian(mech, q)
    _, s, vt = np.linalg.svd(J)
    s = np.concatenate([s, np.zeros(mech.n - len(s))])
    tol = max(J.shape) * s[0] * rtol
    T = _oriented_basis(vt[s <= tol].T)
    near = vt[(s > tol) & (s < branch_tol * s[0])].T
    return T, near


class _Index:
    """Incremental nearest-neighbour index over the chord embedding."""

    def __init__(self, dim: int):
        self.points = np.zeros((0, dim))
        self.tree = None
        self.synced = 0

    def add(self, e: np.ndarray):
        self.points = np.vstack([self.points, e]) if len(self.points) else e[None, :]
        if len(self.points) - self.synced > 256:
            self.tree = cKDTree(self.points)
            self.synced = len(self.points)

    def nearest(self, e: np.ndarray) -> tuple[float, int]:
        best, idx = np.inf, -1
        if self.tree is not None:
            best, idx = self.tree.query(e)
        tail = self.points[self.synced:]
        if len(tail):
            d = np.linalg.norm(tail - e, axis=1)
            j = int(np.argmin(d))
            if d[j] < best:
                best, idx = float(d[j]), self.synced + j
        return float(best), int(idx)


def sample_cspace(
    mech: Mechanism,
    seeds,
    step: float = 0.05,
    budget: int = 20000,
    box=None,
    rtol: float = RANK_RTOL,
    branch_tol: float = 0.1,
) -> ModeAtlas:
    """Breadth-first tangent-grid expansion of V from ``seeds``.

    Each frontier point steps by ``step`` along +- an orthonormal tangent basis
    (plus near-null directions, see :func:`_step_directions`), projects back
    with minimum-norm Newton, and keeps the result unless an existing sample
    lies within step/2.  Infeasible or out-of-box samples are kept but not
    expanded.
    """
    seeds = [np.asarray(getattr(s, "q", s), dtype=float) for s in seeds]
    box = None if box is None else np.asarray(box, dtype=float)
    index = _Index(2 * int(mech.revolute_mask.sum()) + int((~mech.revolute_mask).sum()))
    Q: list[np.ndarray] = []
    feas: list[bool] = []
    inside: list[bool] = []
    tangents: list[np.ndarray] = []
    edges: set[tuple[int, int]] = set()
    frontier: deque[int] = deque()
    exhausted = False

    def add(q: np.ndarray) -> int:
        i = len(Q)
        Q.append(q)
        g = inequality(mech, q)
        feas.append(bool(g.size == 0 or g.min() >= 0.0))
        ok = box is None or bool(np.all(q >= box[:, 0]) and np.all(q <= box[:, 1]))
        inside.append(ok)
        tangents.append(_step_directions(mech, q, rtol, branch_tol))
        index.add(_embed(mech, q)[0])
        if feas[-1] and ok:
            frontier.append(i)
        return i

    for s in seeds:
        if s.shape != (mech.n,) or np.linalg.norm(constraints(mech, s)) > TAU_H:
            raise SeedNotAdmissible("seed is not on the constraint variety")
        q = mech.wrap(s)
        d, j = index.nearest(_embed(mech, q)[0])
        if d >= step / 2:
            add(q)

    def _expand(i: int, direction: np.ndarray):
        """Step from sample i; False once the budget is spent."""
        nonlocal exhausted
        # at a branch crossing a generic tangent step projects back to within step/2
        # of its own source, so a collapsed step is retried once at double length
        for scale in (1.0, 2.0):
            guess = Q[i] + scale * step * direction
            # the unprojected guess is within O(step^2) of V: skip Newton when
            # it already lands on an existing sample
            d, j = index.nearest(_embed(mech, guess)[0])
            if d < 0.4 * step:
                if j != i:
                    edges.add((min(i, j), max(i, j)))
                    return None
                continue
            try:
                qn = project(mech, guess)
            except (NoConvergence, SingularIteration):
                return None
            jump = np.linalg.norm(joint_difference(mech, Q[i], qn))
            if jump > 3 * step:
                return None
            d, j = index.nearest(_embed(mech, qn)[0])
            if d < step / 2 or jump < step / 4:
                if j != i:
                    edges.add((min(i, j), max(i, j)))
                    return None
                continue
            if len(Q) >= budget:
                exhausted = True
                frontier.clear()
                return False
            edges.add((i, add(qn)))
            return None
        return None

    while frontier:
        i = frontier.popleft()
        T, near = tangents[i]
        dirs = [T, near]
        for D in dirs:
            for c in range(D.shape[1]):
                for sgn in (1.0, -1.0):
                    if _expand(i, sgn * D[:, c]) is False:
                        break
                if exhausted:
                    break
            if exhausted:
                break

    q_arr = np.array(Q).reshape(-1, mech.n)
    atlas = ModeAtlas(
        mech=mech,
        step=step,
        q=q_arr,
        feasible=np.array(feas, dtype=bool),
        inside=np.array(inside, dtype=bool),
        edges=np.array(sorted(edges), dtype=int).reshape(-1, 2),
        tangents=[t for t, _ in tangents],
        budget_exhausted=exhausted,
    )
    _add_proximity_edges(atlas)
    return atlas


def _edge_diffs(mech: Mechanism, q: np.ndarray, E: np.ndarray) -> np.ndarray:
    d = q[E[:, 1]] - q[E[:, 0]]
    rev = mech.revolute_mask
    d[:, rev] = wrap_angle(d[:, rev])
    return d


def _tangent_stack(atlas: ModeAtlas) -> np.ndarray:
    width = max((t.shape[1] for t in atlas.tangents), default=0)
    T = np.zeros((len(atlas.q), atlas.mech.n, width))
    for i, t in enumerate(atlas.tangents):
        T[i, :, : t.shape[1]] = t
    return T


def _compatible(mech: Mechanism, atlas: ModeAtlas, E: np.ndarray, T: np.ndarray | None = None) -> np.ndarray:
    """True where the chord of an edge is nearly tangent to V at both ends."""
    if len(E) == 0:
        return np.zeros(0, dtype=bool)
    T = _tangent_stack(atlas) if T is None else T
    d = _edge_diffs(mech, atlas.q, E)
    nd = np.linalg.norm(d, axis=1)
    ok = np.ones(len(E), dtype=bool)
    for end in (0, 1):
        proj = np.linalg.norm(np.einsum("enk,en->ek", T[E[:, end]], d), axis=1)
        ok &= proj >= TANGENT_COS * nd
    return ok


def _add_proximity_edges(atlas: ModeAtlas, factor: float = 1.25) -> None:
    if len(atlas.q) < 2:
        return
    emb = _embed(atlas.mech, atlas.q)
    pairs = cKDTree(emb).query_pairs(factor * atlas.step, output_type="ndarray")
    allp = np.vstack([atlas.edges, pairs]) if len(pairs) else atlas.edges
    atlas.edges = np.unique(np.sort(allp, axis=1), axis=0)


# ------------------------------------------------------------------ labeling


class _DSU:
    def __init__(self, n: int):
        self.p = np.arange(n)

    def find(self, x: int) -> int:
        p = self.p
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[max(ra, rb)] = min(ra, rb)


def _components(n: int, members: np.ndarray, pairs) -> np.ndarray:
    dsu = _DSU(n)
    for a, b in pairs:
        dsu.union(int(a), int(b))
    lab = np.full(n, -1)
    roots: dict[int, int] = {}
    for i in np.flatnonzero(members):
        r = dsu.find(int(i))
        if r not in roots:
            roots[r] = len(roots)
        lab[i] = roots[r]
    return lab


@dataclass(frozen=True)
class RankClassifier:
    """Batched ranks, indicators and edge-crossing tests used by :func:`label_modes`."""

    mech: Mechanism
    rtol: float = RANK_RTOL

    def matrices(self, Q):
        return batch_matrices(self.mech, Q)

    def ranks(self, Q, mats=None) -> np.ndarray:
        return batch_ranks(self.mech, Q, self.rtol, mats)

    def indicators(self, kind: str, k: int, mats) -> np.ndarray:
        return batch_indicator(self.mech, kind, k, mats)

    def crossing(self, qa, qb, kind: str, k: int, pa, pb):
        return edge_crossing(self.mech, qa, qb, kind, k, pa, pb, self.rtol)


def _generic(ranks: np.ndarray) -> dict[str, np.ndarray]:
    gen = {k: ranks[:, j] for j, k in enumerate(KINDS)}
    gen["output"] = ranks[:, 0] + ranks[:, 3]
    return gen


def crossing_edges(atlas: ModeAtlas, E: np.ndarray, kind: str, clf, mats, gen, use,
                   alive: np.ndarray | None = None) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Edges across which ``kind`` has a confirmed rank drop, and the located points."""
    out = np.zeros(len(E), dtype=bool)
    points: dict[int, np.ndarray] = {}
    if len(E) == 0 or not use.any():
        return out, points
    top = int(gen[use].max())
    same = (gen[E[:, 0]] == top) & (gen[E[:, 1]] == top)
    if alive is not None:
        same &= alive
    if not same.any():
        return out, points
    P = clf.indicators(kind, top, mats)
    if P.shape[1] == 0:
        return out, points
    dots = np.einsum("ij,ij->i", P[E[:, 0]], P[E[:, 1]])
    for e in np.flatnonzero(same & (dots < 0.0)):
        a, b = E[e]
        q = clf.crossing(atlas.q[a], atlas.q[b], kind, top, P[a], P[b])
        if q is not None:
            out[e] = True
            points[int(e)] = q
    return out, points


def label_modes(atlas: ModeAtlas, classifier: RankClassifier | None = None) -> ModeAtlas:
    """Connected components of the sample graph at four granularities.

    Assembly modes use the raw adjacency among feasible in-box samples.  A
    sample is flagged for a kind when its rank is below that of a neighbour.
    Motion modes drop flagged samples and tangent-incompatible edges, then
    rejoin the two halves of a branch that passes smoothly through a flagged
    sample.  Actuation and operation modes additionally drop every edge
    touching a flagged sample or crossing a confirmed rank drop of their
    separating kinds.
    """
    mech = atlas.mech
    clf = classifier or RankClassifier(mech)
    n = len(atlas.q)
    use = atlas.usable
    mats = clf.matrices(atlas.q)
    ranks = clf.ranks(atlas.q, mats)
    gen = _generic(ranks)
    E = atlas.edges[use[atlas.edges[:, 0]] & use[atlas.edges[:, 1]]] if len(atlas.edges) else atlas.edges

    flags = {}
    for j, k in enumerate(KINDS):
        hi = ranks[:, j].copy()
        np.maximum.at(hi, E[:, 0], ranks[E[:, 1], j])
        np.maximum.at(hi, E[:, 1], ranks[E[:, 0], j])
        flags[k] = use & (ranks[:, j] < hi)
    flags["input"] = flags["passive"] | flags["actuator"] | flags["cspace"]

    T = _tangent_stack(atlas)
    compat = _compatible(mech, atlas, E, T)
    labels = {"assembly": _components(n, use, E)}

    # motion modes
    cs = flags["cspace"]
    keep = compat & ~cs[E[:, 0]] & ~cs[E[:, 1]]
    glue = []
    nbrs: dict[int, list[int]] = {}
    for a, b in E:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    for s in np.flatnonzero(cs):
        around = [v for v in nbrs.get(int(s), []) if not cs[v]]
        for x in range(len(around)):
            for y in range(x + 1, len(around)):
                a, b = around[x], around[y]
                d1 = joint_difference(mech, atlas.q[a], atlas.q[s])
                d2 = joint_difference(mech, atlas.q[s], atlas.q[b])
                c = d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2) + 1e-300)
                if c > TANGENT_COS and _compatible(mech, atlas, np.array([[a, b]]), T)[0]:
                    glue.append((a, b))
    labels["motion"] = _components(n, use & ~cs, [tuple(e) for e in E[keep]] + glue)

    # actuation and operation: strict severing, no gluing
    boundary = np.zeros(n, dtype=bool)
    alive = keep.copy()
    checked: set[str] = set()
    for gran in ("actuation", "operation"):
        kinds = SEPARATORS[gran]
        bad = np.zeros(n, dtype=bool)
        for k in kinds:
            bad |= flags[k]
        touch = bad[E[:, 0]] | bad[E[:, 1]]
        boundary[E[alive & touch & ~bad[E[:, 0]], 0]] = True
        boundary[E[alive & touch & ~bad[E[:, 1]], 1]] = True
        alive &= ~touch
        for k in kinds:
            if k in checked:
                continue
            cross, _ = crossing_edges(atlas, E, k, clf, mats, gen[k], use, alive)
            boundary[E[cross].ravel()] = True
            alive &= ~cross
        labels[gran] = _components(n, use & ~bad, [tuple(x) for x in E[alive]])
        checked |= set(kinds)

    atlas.ranks = ranks
    atlas.flags = flags
    atlas.labels = labels
    atlas.boundary = boundary
    return atlas


# -------------------------------------------------------------- DOF & redundancy


@dataclass(frozen=True)
class DofReport:
    delta_per_mode: dict[int, int]
    delta: int
    delta_diff_min: int
    delta_diff_max: int
    kinematotropic: bool


def dof_report(atlas: ModeAtlas) -> DofReport:
    if atlas.ranks is None:
        raise ValueError("atlas has not been labeled")
    n = atlas.mech.n
    dd = n - atlas.ranks[:, 0]
    lab = atlas.labels["motion"]
    per = {}
    for mode in range(atlas.mode_count("motion")):
        vals = dd[lab == mode]
        per[mode] = int(np.bincount(vals).argmax())
    use = atlas.usable
    delta = max(per.values()) if per else int(dd[use].max())
    return DofReport(
        delta_per_mode=per,
        delta=delta,
        delta_diff_min=int(dd[use].min()),
        delta_diff_max=int(dd[use].max()),
        kinematotropic=len(set(per.values())) > 1,
    )


@dataclass(frozen=True)
class RedundancyMeasures:
    dim_W: int
    delta: int
    rho_k: int
    task_dim: int | None
    verdict: str | None
    contained: bool | None
    regular_mode: int | None


def _ee_images(atlas: ModeAtlas) -> np.ndarray:
    return np.array([ee_pose(atlas.mech, q).vector() for q in atlas.q])


def _probe_vectors(task_probe) -> np.ndarray:
    return np.array([p.vector() if isinstance(p, EEPose) else np.asarray(p, dtype=float) for p in task_probe])


def regular_task_mode(atlas: ModeAtlas, task_probe, tol: float | None = None) -> int | None:
    """Operation mode whose sampled EE image contains every probe, or None."""
    tol = 2 * atlas.step if tol is None else tol
    img = _ee_images(atlas)
    probes = _probe_vectors(task_probe)
    lab = atlas.labels["operation"]
    for mode in range(atlas.mode_count("operation")):
        pts = img[lab == mode]
        tree = cKDTree(pts)
        d, _ = tree.query(probes)
        if np.all(d <= tol):
            return mode
    return None


def redundancy_measures(
    mech: Mechanism,
    atlas: ModeAtlas,
    task_dim: int | None = None,
    task_probe=(),
    tol: float | None = None,
    strict: bool = False,
) -> RedundancyMeasures:
    """dim W, global DOF, degree of kinematic redundancy and a task verdict.

    A probe is inside the sampled workspace when some labeled sample's EE
    image lies within ``tol`` (default 2 * step) of it.  ``strict`` turns an
    outside probe into :class:`TaskProbeOutsideAtlas` instead of a
    "deficient" verdict.
    """
    rep = dof_report(atlas)
    use = atlas.usable & (atlas.labels["motion"] >= 0)
    dim_W = int(atlas.ranks[use, 3].max()) if use.any() else 0
    verdict = contained = mode = None
    if task_dim is not None and len(task_probe):
        tol = 2 * atlas.step if tol is None else tol
        img = _ee_images(atlas)[use]
        d, _ = cKDTree(img).query(_probe_vectors(task_probe))
        contained = bool(np.all(d <= tol))
        if not contained:
            if strict:
                raise TaskProbeOutsideAtlas(f"probe at distance {d.max():.3g} from the sampled workspace")
            verdict = "deficient"
        elif task_dim < dim_W:
            verdict = "redundant"
        elif task_dim == dim_W:
            verdict = "exact"
        else:
            verdict = "deficient"
        mode = regular_task_mode(atlas, task_probe, tol)
    return RedundancyMeasures(dim_W, rep.delta, rep.delta - dim_W, task_dim, verdict, contained, mode)


def self_motion(atlas: ModeAtlas, pose, tol: float = 1e-2) -> np.ndarray:
    """Indices of samples whose EE image lies within ``tol`` of ``pose``."""
    target = pose.vector() if isinstance(pose, EEPose) else np.asarray(pose, dtype=float)
    img = _ee_images(atlas)
    return np.flatnonzero(np.linalg.norm(img - target, axis=1) < tol)


# ------------------------------------------------------------------ sections


def trace_section(
    mech: Mechanism,
    center,
    grid_coords: tuple[int, int] = (0, 1),
    section: int = 3,
    half_width: float = 0.2,
    resolution: int = 41,
    step: float = 0.05,
) -> np.ndarray:
    """Section of V over a grid of two coordinates around ``center``.

    Returns rows (i, j, u, v, w, s) with u, v the grid coordinates and w the
    section coordinate, all relative to ``center``; s numbers the distinct
    solutions found at a grid node.  Candidate seeds come from a local atlas.
    """
    center = np.asarray(center, dtype=float)
    a, b = grid_coords
    margin = half_width + 3 * step
    box = np.tile([-np.inf, np.inf], (mech.n, 1))
    box[a] = center[a] - margin, center[a] + margin
    box[b] = center[b] - margin, center[b] + margin
    atlas = sample_cspace(mech, [center], step=step, box=box)
    pts = atlas.q[atlas.feasible]
    tree = cKDTree(pts[:, [a, b]])
    ticks = np.linspace(-half_width, half_width, resolution)
    rows = []
    for i, u in enumerate(ticks):
        for j, v in enumerate(ticks):
            target = {a: center[a] + u, b: center[b] + v}
            dist, near = tree.query([target[a], target[b]], k=min(64, len(pts)),
                                    distance_upper_bound=2.5 * step)
            sols: list[np.ndarray] = []
            tried = 0
            for s in near[np.isfinite(dist)]:
                # a seed close to a known solution would only find it again
                if tried >= 8 or any(np.linalg.norm(joint_difference(mech, pts[s], y)) < 4 * step for y in sols):
                    continue
                tried += 1
                try:
                    x = solve_with_fixed(mech, pts[s], target)
                except (NoConvergence, SingularIteration):
                    continue
                g = inequality(mech, x)
                if g.size and g.min() < 0:
                    continue
                if all(np.linalg.norm(joint_difference(mech, x, y)) > 1e-6 for y in sols):
                    sols.append(x)
            sols.sort(key=lambda x: float(wrap_angle(x[section] - center[section])))
            for k, x in enumerate(sols):
                rows.append((i, j, u, v, float(wrap_angle(x[section] - center[section])), k))
    return np.array(rows, dtype=float).reshape(-1, 6)


# ------------------------------------------------------------------- export


def write_atlas_csv(atlas: ModeAtlas, path) -> None:
    ids = [j.id for j in atlas.mech.joints]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ids + list(GRANULARITIES) + [f"flag_{k}" for k in (*KINDS, "input")] + ["feasible", "boundary"])
        for i, q in enumerate(atlas.q):
            row = [f"{v:.12g}" for v in q]
            row += [int(atlas.labels[g][i]) if g in atlas.labels else -1 for g in GRANULARITIES]
            row += [int(atlas.flags[k][i]) if k in atlas.flags else 0 for k in (*KINDS, "input")]
            row += [int(atlas.feasible[i]), int(atlas.boundary[i]) if atlas.boundary is not None else 0]
            w.writerow(row)
