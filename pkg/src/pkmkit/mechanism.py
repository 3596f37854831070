"""Planar linkage description, compilation into a loop-closure system, and evaluation.

A mechanism is a connected graph of rigid links (nodes) and one-DOF joints
(edges).  A breadth-first spanning tree rooted at the ground link fixes the
pose of every link from the tree joints alone; each joint left out of the tree
closes one independent loop and contributes three scalar residuals
``(dx, dy, dtheta)``.

Conventions
-----------
* Every link has its own frame.  Joint anchors are points in link frames.
* Revolute joint ``j`` with parent ``P`` and child ``C``::

      theta_C = theta_P + q_j + offset_j,     P(anchor) == C(child_anchor)

* Prismatic joint ``j``::

      theta_C = theta_P + offset_j,   C(child_anchor) == P(anchor) + q_j * u,
      u = R(theta_P + offset_j) e_x
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from math import cos, sin
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DescriptionError,
    DimensionMismatch,
    DisconnectedGraph,
    DuplicateId,
    NoGroundLink,
    ParseError,
    UnsupportedJointKind,
    ZeroLengthLink,
)

TAU_H = 1e-9
"""Admissibility tolerance on ||h(q)||."""

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def perp(v):
    """Rotate planar vector(s) by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Link:
    id: str
    length: float
    mass: float | None = None
    inertia_about_com: float | None = None
    com_offset: float | None = None

    @property
    def has_inertia(self) -> bool:
        return self.mass is not None and self.inertia_about_com is not None


@dataclass(frozen=True)
class Joint:
    id: str
    kind: str
    parent_link: str
    child_link: str
    anchor: tuple[float, float]
    child_anchor: tuple[float, float] = (0.0, 0.0)
    offset: float = 0.0
    actuated: bool = False
    limits: tuple[float, float] | None = None

    @property
    def revolute(self) -> bool:
        return self.kind == REVOLUTE


@dataclass(frozen=True)
class EEAttachment:
    link: str
    point: tuple[float, float]
    report_orientation: bool = False


@dataclass(frozen=True)
class Loop:
    cut_joint: int
    joints: tuple[int, ...]


@dataclass(frozen=True)
class _TreeEdge:
    link: int  # link placed by this edge
    parent: int  # tree parent link
    joint: int
    sign: float  # +1 when tree runs parent->child of the joint


@dataclass(frozen=True)
class Mechanism:
    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    ground: str
    ee: EEAttachment
    loops: tuple[Loop, ...]
    # compiled topology
    link_index: Mapping[str, int] = field(repr=False, compare=False)
    tree: tuple[_TreeEdge, ...] = field(repr=False, compare=False)
    paths: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)
    tree_sign: tuple[float, ...] = field(repr=False, compare=False, default=())
    configurations: Mapping[str, tuple[float, ...]] = field(repr=False, compare=False, default_factory=dict)
    tie_break: str = field(default="lexicographic", repr=False)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def m(self) -> int:
        return len(self.actuated)

    @property
    def r(self) -> int:
        return 3 * len(self.loops)

    @property
    def actuated(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.joints) if j.actuated)

    @property
    def passive(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.joints) if not j.actuated)

    @property
    def revolute_mask(self) -> np.ndarray:
        return np.array([j.revolute for j in self.joints], dtype=bool)

    @property
    def limited(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.joints) if j.limits is not None)

    @property
    def grubler(self) -> int:
        """Planar mobility count 3(N-1) - 2 J for one-DOF joints."""
        return 3 * (len(self.links) - 1) - 2 * self.n

    def joint_position(self, joint_id: str) -> int:
        for i, j in enumerate(self.joints):
            if j.id == joint_id:
                return i
        raise KeyError(joint_id)

    def wrap(self, q) -> np.ndarray:
        q = np.array(q, dtype=float)
        mask = self.revolute_mask
        q[..., mask] = wrap_angle(q[..., mask])
        return q

    def config(self, name: str) -> np.ndarray:
        try:
            return np.array(self.configurations[name], dtype=float)
        except KeyError:
            raise KeyError(f"mechanism {self.name!r} has no configuration {name!r}") from None

    def with_tie_break(self, tie_break: str) -> "Mechanism":
        return build_mechanism(to_description(self), tie_break=tie_break)


@dataclass(frozen=True)
class Configuration:
    q: np.ndarray
    residual_norm: float
    feasible: bool

    @property
    def admissible(self) -> bool:
        return self.residual_norm <= TAU_H


# --------------------------------------------------------------------------- build


def _pair(v, what) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: expected two numbers, got {v!r}")
    return a, b


def _link_from(d: Mapping[str, Any]) -> Link:
    try:
        lid = str(d["id"])
        length = float(d["length"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad link entry {d!r}: {exc}")
    if not length > 0:
        raise ZeroLengthLink(f"link {lid!r} has length {length}")

    def opt(key):
        return None if d.get(key) is None else float(d[key])

    link = Link(lid, length, opt("mass"), opt("inertia_about_com"), opt("com_offset"))
    if link.mass is not None and link.mass < 0:
        raise DescriptionError(f"link {lid!r}: negative mass")
    if link.inertia_about_com is not None and link.inertia_about_com < 0:
        raise DescriptionError(f"link {lid!r}: negative inertia")
    return link


def _joint_from(d: Mapping[str, Any]) -> Joint:
    try:
        jid = str(d["id"])
        kind = str(d.get("kind", REVOLUTE)).lower()
        parent = str(d["parent"] if "parent" in d else d["parent_link"])
        child = str(d["child"] if "child" in d else d["child_link"])
    except KeyError as exc:
        raise ParseError(f"joint entry {d!r} lacks {exc}")
    if kind not in (REVOLUTE, PRISMATIC):
        raise UnsupportedJointKind(f"joint {jid!r}: kind {kind!r} (only revolute/prismatic)")
    if parent == child:
        raise DescriptionError(f"joint {jid!r} connects link {parent!r} to itself")
    limits = d.get("limits")
    if limits is not None:
        limits = _pair(limits, f"joint {jid} limits")
        if limits[0] > limits[1]:
            raise DescriptionError(f"joint {jid!r}: empty limit interval {limits}")
    return Joint(
        id=jid,
        kind=kind,
        parent_link=parent,
        child_link=child,
        anchor=_pair(d.get("anchor", (0.0, 0.0)), f"joint {jid} anchor"),
        child_anchor=_pair(d.get("child_anchor", (0.0, 0.0)), f"joint {jid} child_anchor"),
        offset=float(d.get("offset", 0.0)),
        actuated=bool(d.get("actuated", False)),
        limits=limits,
    )


def build_mechanism(description: Mapping[str, Any], tie_break: str = "lexicographic") -> Mechanism:
    """Compile a structured description into a :class:`Mechanism`.

    ``tie_break`` selects the order in which incident joints are explored while
    growing the spanning tree (``"lexicographic"`` or ``"reverse"``); it changes
    the loop basis but never the joint order.
    """
    if not isinstance(description, Mapping):
        raise ParseError("description must be a mapping")
    for key in ("links", "joints"):
        if key not in description:
            raise ParseError(f"missing top-level key {key!r}")
    links = tuple(_link_from(d) for d in description["links"])
    joints = tuple(_joint_from(d) for d in description["joints"])

    seen: set[str] = set()
    for lk in links:
        if lk.id in seen:
            raise DuplicateId(f"duplicate link id {lk.id!r}")
        seen.add(lk.id)
    seen_j: set[str] = set()
    for jt in joints:
        if jt.id in seen_j:
            raise DuplicateId(f"duplicate joint id {jt.id!r}")
        seen_j.add(jt.id)

    link_index = {lk.id: i for i, lk in enumerate(links)}
    ground = description.get("ground")
    if ground is None or str(ground) not in link_index:
        raise NoGroundLink(f"ground link {ground!r} not among links")
    ground = str(ground)
    for jt in joints:
        for lid in (jt.parent_link, jt.child_link):
            if lid not in link_index:
                raise DescriptionError(f"joint {jt.id!r} references unknown link {lid!r}")

    ee_d = description.get("ee")
    if ee_d is None:
        raise ParseError("missing top-level key 'ee'")
    ee = EEAttachment(
        link=str(ee_d["link"]),
        point=_pair(ee_d.get("point", (0.0, 0.0)), "ee point"),
        report_orientation=bool(ee_d.get("orientation", ee_d.get("report_orientation", False))),
    )
    if ee.link not in link_index:
        raise DescriptionError(f"EE attached to unknown link {ee.link!r}")

    if tie_break not in ("lexicographic", "reverse"):
        raise ValueError(f"unknown tie_break {tie_break!r}")

    # breadth-first spanning tree rooted at ground
    incident: dict[int, list[int]] = {i: [] for i in range(len(links))}
    for ji, jt in enumerate(joints):
        incident[link_index[jt.parent_link]].append(ji)
        incident[link_index[jt.child_link]].append(ji)
    for v in incident.values():
        v.sort(key=lambda ji: joints[ji].id, reverse=(tie_break == "reverse"))

    g = link_index[ground]
    placed = {g: ()}
    tree: list[_TreeEdge] = []
    tree_joints: set[int] = set()
    queue = deque([g])
    while queue:
        li = queue.popleft()
        for ji in incident[li]:
            jt = joints[ji]
            a, b = link_index[jt.parent_link], link_index[jt.child_link]
            other = b if a == li else a
            if other in placed:
                continue
            sign = 1.0 if a == li else -1.0
            tree.append(_TreeEdge(link=other, parent=li, joint=ji, sign=sign))
            tree_joints.add(ji)
            placed[other] = placed[li] + (ji,)
            queue.append(other)
    if len(placed) != len(links):
        missing = sorted(lk.id for i, lk in enumerate(links) if i not in placed)
        raise DisconnectedGraph(f"links not connected to ground: {missing}")

    paths = tuple(placed[i] for i in range(len(links)))
    loops = []
    for ji, jt in enumerate(joints):
        if ji in tree_joints:
            continue
        pa = paths[link_index[jt.parent_link]]
        pc = paths[link_index[jt.child_link]]
        k = 0
        while k < min(len(pa), len(pc)) and pa[k] == pc[k]:
            k += 1
        cycle = tuple(pa[k:]) + (ji,) + tuple(reversed(pc[k:]))
        loops.append(Loop(cut_joint=ji, joints=cycle))

    configs = {}
    for key, val in dict(description.get("configurations", {})).items():
        try:
            vec = tuple(float(v) for v in val)
        except (TypeError, ValueError):
            raise ParseError(f"configuration {key!r} is not a numeric vector")
        if len(vec) != len(joints):
            raise DescriptionError(f"configuration {key!r} has {len(vec)} entries, expected {len(joints)}")
        configs[str(key)] = vec

    mech = Mechanism(
        name=str(description.get("name", "mechanism")),
        links=links,
        joints=joints,
        ground=ground,
        ee=ee,
        loops=tuple(loops),
        link_index=link_index,
        tree=tuple(tree),
        paths=paths,
        tree_sign=tuple(next((e.sign for e in tree if e.joint == ji), 0.0) for ji in range(len(joints))),
        configurations=configs,
        tie_break=tie_break,
    )
    if mech.m < 1:
        raise DescriptionError("at least one joint must be actuated")
    return mech


def to_description(mech: Mechanism) -> dict[str, Any]:
    links = []
    for lk in mech.links:
        d: dict[str, Any] = {"id": lk.id, "length": lk.length}
        for key in ("mass", "inertia_about_com", "com_offset"):
            if getattr(lk, key) is not None:
                d[key] = getattr(lk, key)
        links.append(d)
    joints = []
    for jt in mech.joints:
        d = {
            "id": jt.id,
            "kind": jt.kind,
            "parent": jt.parent_link,
            "child": jt.child_link,
            "anchor": list(jt.anchor),
            "child_anchor": list(jt.child_anchor),
            "offset": jt.offset,
            "actuated": jt.actuated,
        }
        if jt.limits is not None:
            d["limits"] = list(jt.limits)
        joints.append(d)
    return {
        "name": mech.name,
        "links": links,
        "joints": joints,
        "ground": mech.ground,
        "ee": {"link": mech.ee.link, "point": list(mech.ee.point), "orientation": mech.ee.report_orientation},
        "configurations": {k: list(v) for k, v in mech.configurations.items()},
    }


def load_description(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}")
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib

            return tomllib.loads(text)
        return json.loads(text)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}")


def load_mechanism(path: str | Path, tie_break: str = "lexicographic") -> Mechanism:
    return build_mechanism(load_description(path), tie_break=tie_break)


# ---------------------------------------------------------------------- evaluation


@dataclass
class TreeState:
    """Link poses (and optionally velocities) for one joint vector."""

    origin: np.ndarray  # (L, 2)
    theta: np.ndarray  # (L,)
    center: np.ndarray  # (n, 2) world joint centers (tree joints only)
    axis: np.ndarray  # (n, 2) world sliding axis, zero for revolute
    omega: np.ndarray | None = None  # (L,)
    bias: np.ndarray | None = None  # (L, 2) velocity-product acceleration of link origins


def _check_q(mech: Mechanism, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (mech.n,):
        raise DimensionMismatch(f"expected q of length {mech.n}, got shape {q.shape}")
    return q


def _plan(mech: Mechanism) -> list[tuple]:
    """Per tree edge constants for :func:`tree_state`, cached on the mechanism."""
    plan = mech.__dict__.get("_tree_plan")
    if plan is None:
        plan = []
        for e in mech.tree:
            jt = mech.joints[e.joint]
            a_par, a_chi = (jt.anchor, jt.child_anchor) if e.sign > 0 else (jt.child_anchor, jt.anchor)
            plan.append((e.link, e.parent, e.joint, float(e.sign), jt.revolute, float(jt.offset),
                         float(a_par[0]), float(a_par[1]), float(a_chi[0]), float(a_chi[1])))
        object.__setattr__(mech, "_tree_plan", plan)
    return plan


def tree_state(mech: Mechanism, q, qd=None) -> TreeState:
    q = _check_q(mech, q)
    nl = len(mech.links)
    ox, oy, th = [0.0] * nl, [0.0] * nl, [0.0] * nl
    center = np.zeros((mech.n, 2))
    axis = np.zeros((mech.n, 2))
    vel = qd is not None
    qv = q.tolist()
    if vel:
        qd = _check_q(mech, qd)
        qdv = qd.tolist()
        om = [0.0] * nl
        bx, by = [0.0] * nl, [0.0] * nl
    for L, tp, j, sign, revolute, off, px, py, cx_, cy_ in _plan(mech):
        ct, st_ = cos(th[tp]), sin(th[tp])
        cx = ox[tp] + ct * px - st_ * py
        cy = oy[tp] + st_ * px + ct * py
        if revolute:
            th[L] = th[tp] + sign * (qv[j] + off)
            cl, sl = cos(th[L]), sin(th[L])
            ox[L] = cx - (cl * cx_ - sl * cy_)
            oy[L] = cy - (sl * cx_ + cl * cy_)
        else:
            th[L] = th[tp] + sign * off
            cl, sl = cos(th[L]), sin(th[L])
            # sliding axis is fixed in the joint-parent frame, which shares theta with the child
            ang = th[tp] + (off if sign > 0 else 0.0)
            ux, uy = cos(ang), sin(ang)
            ox[L] = cx + sign * qv[j] * ux - (cl * cx_ - sl * cy_)
            oy[L] = cy + sign * qv[j] * uy - (sl * cx_ + cl * cy_)
            axis[j] = sign * ux, sign * uy
        center[j] = cx, cy
        if vel:
            w = om[tp]
            ax = bx[tp] - w * w * (cx - ox[tp])
            ay = by[tp] - w * w * (cy - oy[tp])
            if revolute:
                om[L] = w + sign * qdv[j]
            else:
                om[L] = w
                ax += 2.0 * sign * qdv[j] * w * -uy
                ay += 2.0 * sign * qdv[j] * w * ux
            wl = om[L]
            bx[L] = ax - wl * wl * (ox[L] - cx)
            by[L] = ay - wl * wl * (oy[L] - cy)
    st = TreeState(np.column_stack([ox, oy]), np.array(th), center, axis)
    if vel:
        st.omega, st.bias = np.array(om), np.column_stack([bx, by])
    return st


def world_point(st: TreeState, link: int, local) -> np.ndarray:
    return st.origin[link] + rot(st.theta[link]) @ np.asarray(local, dtype=float)


def _path_plan(mech: Mechanism, link: int):
    cache = mech.__dict__.get("_path_plans")
    if cache is None:
        cache = {}
        object.__setattr__(mech, "_path_plans", cache)
    if link not in cache:
        path = np.array(mech.paths[link], dtype=int)
        rev = np.array([mech.joints[j].revolute for j in path], dtype=bool)
        sign = np.array(mech.tree_sign, dtype=float)
        row = np.zeros(mech.n)
        row[path[rev]] = sign[path[rev]]
        cache[link] = (path[rev], sign[path[rev]], path[~rev], row)
    return cache[link]


def point_jacobian(mech: Mechanism, st: TreeState, link: int, x) -> np.ndarray:
    """2 x n Jacobian of a world point rigidly attached to ``link``."""
    rev, sgn, pri, _ = _path_plan(mech, link)
    Jp = np.zeros((2, mech.n))
    d = np.asarray(x, dtype=float) - st.center[rev]
    Jp[0, rev] = -sgn * d[:, 1]
    Jp[1, rev] = sgn * d[:, 0]
    Jp[:, pri] = st.axis[pri].T
    return Jp


def angle_jacobian(mech: Mechanism, link: int) -> np.ndarray:
    return _path_plan(mech, link)[3].copy()


def point_bias(st: TreeState, link: int, x) -> np.ndarray:
    """Velocity-product acceleration (J-dot q-dot) of a point on ``link``."""
    return st.bias[link] - st.omega[link] ** 2 * (np.asarray(x) - st.origin[link])


def _cut_points(mech: Mechanism, st: TreeState, q, loop: Loop):
    jt = mech.joints[loop.cut_joint]
    P, C = mech.link_index[jt.parent_link], mech.link_index[jt.child_link]
    local = np.asarray(jt.anchor, dtype=float)
    u = None
    if not jt.revolute:
        u_loc = np.array([np.cos(jt.offset), np.sin(jt.offset)])
        local = local + q[loop.cut_joint] * u_loc
        u = rot(st.theta[P]) @ u_loc
    xp = world_point(st, P, local)
    xc = world_point(st, C, jt.child_anchor)
    return jt, P, C, xp, xc, u


def constraints(mech: Mechanism, q, st: TreeState | None = None) -> np.ndarray:
    """Loop-closure residual h(q), three entries (dx, dy, dtheta) per loop."""
    q = _check_q(mech, q)
    if st is None:
        st = tree_state(mech, q)
    h = np.zeros(mech.r)
    for k, loop in enumerate(mech.loops):
        jt, P, C, xp, xc, _ = _cut_points(mech, st, q, loop)
        dth = st.theta[P] + jt.offset - st.theta[C]
        if jt.revolute:
            dth += q[loop.cut_joint]
        h[3 * k: 3 * k + 2] = xp - xc
        h[3 * k + 2] = wrap_angle(dth)
    return h


def constraint_jacobian(mech: Mechanism, q, st: TreeState | None = None) -> np.ndarray:
    """Analytic r x n Jacobian of :func:`constraints`."""
    q = _check_q(mech, q)
    if st is None:
        st = tree_state(mech, q)
    J = np.zeros((mech.r, mech.n))
    for k, loop in enumerate(mech.loops):
        jt, P, C, xp, xc, u = _cut_points(mech, st, q, loop)
        J[3 * k: 3 * k + 2] = point_jacobian(mech, st, P, xp) - point_jacobian(mech, st, C, xc)
        J[3 * k + 2] = angle_jacobian(mech, P) - angle_jacobian(mech, C)
        if jt.revolute:
            J[3 * k + 2, loop.cut_joint] += 1.0
        else:
            J[3 * k: 3 * k + 2, loop.cut_joint] += u
    return J


def constraint_bias(mech: Mechanism, q, qd, st: TreeState | None = None) -> np.ndarray:
    """The velocity-product term (dJ/dt) qd of the loop-closure constraints."""
    q = _check_q(mech, q)
    if st is None or st.bias is None:
        st = tree_state(mech, q, qd)
    out = np.zeros(mech.r)
    for k, loop in enumerate(mech.loops):
        jt, P, C, xp, xc, u = _cut_points(mech, st, q, loop)
        b = point_bias(st, P, xp) - point_bias(st, C, xc)
        if not jt.revolute:
            b = b + 2.0 * qd[loop.cut_joint] * st.omega[P] * perp(u)
        out[3 * k: 3 * k + 2] = b
    return out


def inequality(mech: Mechanism, q) -> np.ndarray:
    """Joint-limit residual g(q): (q_i - lo_i, hi_i - q_i) per limited joint."""
    q = _check_q(mech, q)
    g = []
    for i in mech.limited:
        lo, hi = mech.joints[i].limits
        g.extend((q[i] - lo, hi - q[i]))
    return np.array(g, dtype=float)


def configuration(mech: Mechanism, q) -> Configuration:
    q = mech.wrap(_check_q(mech, q))
    h = constraints(mech, q)
    g = inequality(mech, q)
    return Configuration(q=q, residual_norm=float(np.linalg.norm(h)), feasible=bool(np.all(g >= 0)))
