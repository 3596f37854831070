"""Command-line front end.  Every command writes CSV files plus ``manifest.json`` into --out."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, fixtures
from .actuation import choose_chart, control_matrix, singular_diagnostics
from .atlas import GRANULARITIES, dof_report, label_modes, sample_cspace, trace_section, write_atlas_csv
from .dynamics import ControlSystem, forward_dynamics, write_trajectory_csv
from .errors import CSpaceSingular, DescriptionError, NumericalError, PKMError
from .kinematics import jacobians
from .linalg import RANK_RTOL
from .mechanism import Mechanism, load_mechanism
from .singularity import KINDS, classify, find_seeds
from .workspace import sweep, write_grid_csv

EXIT_OK, EXIT_PARSE, EXIT_NUMERICAL = 0, 2, 3


@dataclass
class RunConfig:
    command: str
    mech: str
    out: Path
    seed: int = 0
    tol_rank: float = RANK_RTOL
    step: float = 0.05
    params: dict = field(default_factory=dict)
    argv: list[str] = field(default_factory=list)

    def header(self) -> list[str]:
        return [f"# command={self.command} mech={self.mech} seed={self.seed} "
                f"tol_rank={self.tol_rank:g} step={self.step:g}"]


# ------------------------------------------------------------------- helpers


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _mechanism(source: str) -> Mechanism:
    if Path(source).exists():
        return load_mechanism(source)
    if source in fixtures.NAMES:
        return fixtures.load(source)
    raise DescriptionError(f"no mechanism file or bundled fixture named {source!r}")


def _joint_index(mech: Mechanism, token: str) -> int:
    ids = [j.id for j in mech.joints]
    if token in ids:
        return ids.index(token)
    try:
        k = int(token)
    except ValueError:
        raise DescriptionError(f"unknown joint {token!r}") from None
    if not 1 <= k <= mech.n:
        raise DescriptionError(f"joint number {k} out of range 1..{mech.n}")
    return k - 1


def _configs(mech: Mechanism, args, rc: RunConfig) -> list[np.ndarray]:
    out = [np.asarray(q, dtype=float) for q in (args.q or [])]
    for name in args.config or []:
        if name not in mech.configurations:
            known = ", ".join(mech.configurations) or "none"
            raise DescriptionError(f"no configuration named {name!r} (available: {known})")
        out.append(mech.config(name))
    if out:
        return out
    if "home" in mech.configurations:
        return [mech.config("home")]
    seeds = find_seeds(mech, count=1, seed=rc.seed)
    if not seeds:
        raise NumericalError("no admissible configuration found; pass --q")
    return seeds


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _write(rc: RunConfig, name: str, header: list[str], rows) -> Path:
    path = rc.out / name
    with open(path, "w", newline="") as fh:
        for line in rc.header():
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _prepend_header(rc: RunConfig, path: Path) -> None:
    body = path.read_text()
    path.write_text("\n".join(rc.header()) + "\n" + body)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(rc: RunConfig, outputs: list[Path]) -> Path:
    mech_path = Path(rc.mech)
    data = {
        "command": rc.command,
        "argv": rc.argv,
        "mechanism": rc.mech,
        "mechanism_sha256": _sha256(mech_path) if mech_path.exists() else _sha256(fixtures.path(rc.mech)),
        "seed": rc.seed,
        "tolerances": {"tol_rank": rc.tol_rank, "step": rc.step},
        "params": rc.params,
        "versions": {
            "pkmkit": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = rc.out / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------------ commands


def cmd_info(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    qs = _configs(mech, args, rc)
    rank_J = max(jacobians(mech, q, rc.tol_rank).rank_J.rank for q in qs)
    rows = [
        ("name", mech.name),
        ("n", mech.n),
        ("m", mech.m),
        ("r", mech.r),
        ("loops", len(mech.loops)),
        ("links", len(mech.links)),
        ("grubler", mech.grubler),
        ("rank_J", rank_J),
        ("delta", mech.n - rank_J),
        ("actuated", " ".join(mech.joints[i].id for i in mech.actuated)),
    ]
    for k, v in rows:
        print(f"{k:10s} {v}")
    return [_write(rc, "info.csv", ["key", "value"], rows)]


def cmd_classify(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    q = _configs(mech, args, rc)[0]
    rep = classify(mech, q, rtol=rc.tol_rank, radius=args.radius, seed=rc.seed)
    rows = []
    for k in KINDS:
        rows.append((k, rep.flags[k], rep.rank_flags[k], rep.ranks[k], rep.deficient[k], rep.gap_ratios[k],
                     " ".join(str(v) for v in rep.probe_ranks[k])))
    rows.append(("input", rep.flags["input"], rep.rank_flags["passive"] or rep.rank_flags["actuator"], "", "", "", ""))
    print("flags :", ", ".join(k for k, v in rep.flags.items() if v) or "none")
    print("labels:", ", ".join(rep.labels) or "none")
    print(f"ranks : {rep.ranks}  delta_diff={rep.delta_diff} delta_loc={rep.delta_loc} uncertain={rep.uncertain}")
    for note in rep.notes:
        print("note  :", note)
    out = _write(rc, "classify.csv",
                 ["kind", "flag", "rank_flag", "rank", "deficient", "gap_ratio", "probe_ranks"], rows)
    summary = _write(rc, "classify_summary.csv", ["key", "value"], [
        ("labels", " ".join(rep.labels)),
        ("delta_diff", rep.delta_diff),
        ("delta_loc", rep.delta_loc),
        ("uncertain", rep.uncertain),
        ("probes", rep.probes),
        ("probe_radius", args.radius),
        ("q", " ".join(_fmt(v) for v in rep.q)),
    ])
    return [out, summary]


def cmd_modes(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    seeds = _configs(mech, args, rc)
    atlas = sample_cspace(mech, seeds, step=rc.step, budget=args.budget, rtol=rc.tol_rank)
    from .atlas import RankClassifier

    label_modes(atlas, RankClassifier(mech, rc.tol_rank))
    rep = dof_report(atlas)
    rows = [(g, atlas.mode_count(g)) for g in GRANULARITIES]
    rows += [
        ("delta", rep.delta),
        ("delta_diff_min", rep.delta_diff_min),
        ("delta_diff_max", rep.delta_diff_max),
        ("kinematotropic", rep.kinematotropic),
        ("samples", len(atlas)),
        ("budget_exhausted", atlas.budget_exhausted),
    ]
    rows += [(f"delta_motion_mode_{k}", v) for k, v in sorted(rep.delta_per_mode.items())]
    for k, v in rows:
        print(f"{k:18s} {_fmt(v)}")
    path = rc.out / "atlas.csv"
    write_atlas_csv(atlas, path)
    _prepend_header(rc, path)
    return [path, _write(rc, "modes.csv", ["key", "value"], rows)]


def cmd_trace_section(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    center = _configs(mech, args, rc)[0]
    a, b = (_joint_index(mech, t) for t in args.grid.split(","))
    s = _joint_index(mech, args.section)
    data = trace_section(mech, center, (a, b), s, args.half_width, args.resolution, rc.step)
    ids = [j.id for j in mech.joints]
    rows = [(int(i), int(j), u, v, w, int(k)) for i, j, u, v, w, k in data]
    nodes = {(r[0], r[1]) for r in rows}
    two = sum(1 for nd in nodes if sum(1 for r in rows if (r[0], r[1]) == nd) == 2)
    print(f"{len(rows)} points on {len(nodes)} grid nodes; {two} nodes with two solutions")
    return [_write(rc, "section.csv", ["i", "j", f"d{ids[a]}", f"d{ids[b]}", f"d{ids[s]}", "solution"], rows)]


def cmd_map(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    q = _configs(mech, args, rc)[0]
    grid = sweep(mech, args.box, args.resolution, q, rc.tol_rank)
    ok = grid.reachable & grid.feasible
    lo = np.nanmin(grid.inv_kappa[ok]) if ok.any() else float("nan")
    print(f"reachable {int(grid.reachable.sum())}/{grid.reachable.size}, feasible {int(ok.sum())}, "
          f"modes {len(set(grid.mode[ok].tolist()))}, min 1/kappa {lo:.6g}")
    path = rc.out / "grid.csv"
    write_grid_csv(grid, path)
    _prepend_header(rc, path)
    return [path]


def cmd_doa(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    qs = _configs(mech, args, rc)
    if args.sweep:
        atlas = sample_cspace(mech, qs[:1], step=rc.step, budget=args.budget, rtol=rc.tol_rank)
        idx = np.flatnonzero(atlas.usable)
        pick = idx[np.linspace(0, len(idx) - 1, min(args.sweep, len(idx))).astype(int)]
        qs = [atlas.q[i] for i in pick]
    ids = [j.id for j in mech.joints]
    rows = []
    for k, q in enumerate(qs):
        b = jacobians(mech, q, rc.tol_rank)
        diag = singular_diagnostics(b)
        try:
            a = control_matrix(choose_chart(b, mech), b)
            vals = (a.alpha, a.rho, a.delta, a.label)
        except CSpaceSingular:
            vals = ("", "", "", "c-space singular")
        rows.append((k, *q, *vals, diag["projection_rank"], diag["assignable"]))
        print(f"[{k}] alpha={vals[0]} rho={vals[1]} delta={vals[2]} {vals[3]} "
              f"(projection rank {diag['projection_rank']}, assignable {diag['assignable']})")
    header = ["index", *ids, "alpha", "rho", "delta", "class", "projection_rank", "assignable"]
    return [_write(rc, "doa.csv", header, rows)]


def _control_table(path: str, m: int):
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != m + 1:
        raise DescriptionError(f"control file needs columns t,c1..c{m}")
    ts, cs = data[:, 0], data[:, 1:]

    def c(t):
        k = int(np.searchsorted(ts, t, side="right")) - 1
        return cs[max(k, 0)]

    return c


def cmd_simulate(mech: Mechanism, args, rc: RunConfig) -> list[Path]:
    q = _configs(mech, args, rc)[0]
    chart = choose_chart(jacobians(mech, q, rc.tol_rank), mech)
    tau = args.tau if args.tau is not None else np.zeros(3)
    system = ControlSystem(mech, chart, gravity=not args.no_gravity, tau=tau)
    if args.control:
        controls = _control_table(args.control, mech.m)
    else:
        controls = args.torque if args.torque is not None else np.zeros(mech.m)
    qd2 = args.qd2 if args.qd2 is not None else np.zeros(chart.delta)
    traj = forward_dynamics(mech, system, controls, q, qd2, args.horizon, args.dt, rtol=rc.tol_rank)
    path = rc.out / "trajectory.csv"
    write_trajectory_csv(traj, mech, path)
    _prepend_header(rc, path)
    ev = [(e["t"], e["event"], e.get("reason", "")) for e in traj.events]
    for t, kind, why in ev:
        print(f"t={t:.6g} {kind} {why}")
    drift = float(np.max(np.abs(traj.energy - traj.energy[0])))
    print(f"{len(traj.t)} samples, halted={traj.halted}, max |E - E0| = {drift:.3e}")
    return [path, _write(rc, "events.csv", ["t", "event", "detail"], ev)]


COMMANDS = {
    "info": cmd_info,
    "classify": cmd_classify,
    "modes": cmd_modes,
    "trace-section": cmd_trace_section,
    "map-manipulability": cmd_map,
    "doa": cmd_doa,
    "simulate": cmd_simulate,
}


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mech", required=True, help="description file (JSON/TOML) or bundled fixture name")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0, help="random seed for probes and seed search")
    common.add_argument("--tol-rank", type=float, default=RANK_RTOL, help="relative rank tolerance")
    common.add_argument("--step", type=float, default=0.05, help="atlas sampling step")
    common.add_argument("--q", type=_vector, action="append", help="joint vector a,b,c,... (repeatable)")
    common.add_argument("--config", action="append", help="named configuration from the description (repeatable)")

    p = argparse.ArgumentParser(prog="pkmkit", description=__doc__)
    p.add_argument("--version", action="version", version=f"pkmkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("info", parents=[common], help="counts, Grubler and rank DOF")
    c = sub.add_parser("classify", parents=[common], help="singularity report at a configuration")
    c.add_argument("--radius", type=float, default=1e-4, help="probe radius")
    c = sub.add_parser("modes", parents=[common], help="sample V and count modes")
    c.add_argument("--budget", type=int, default=20000)
    c = sub.add_parser("trace-section", parents=[common], help="fixed-coordinate slice of V")
    c.add_argument("--grid", default="1,2", help="two grid coordinates (ids or 1-based numbers)")
    c.add_argument("--section", default="4", help="reported section coordinate")
    c.add_argument("--half-width", type=float, default=0.1)
    c.add_argument("--resolution", type=int, default=21)
    c = sub.add_parser("map-manipulability", parents=[common], help="1/kappa over an EE grid")
    c.add_argument("--box", type=float, nargs=4, required=True, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    c.add_argument("--resolution", type=int, default=100)
    c = sub.add_parser("doa", parents=[common], help="degree of actuation")
    c.add_argument("--sweep", type=int, default=0, help="assess this many atlas samples instead")
    c.add_argument("--budget", type=int, default=20000)
    c = sub.add_parser("simulate", parents=[common], help="forward dynamics")
    c.add_argument("--horizon", type=float, default=1.0)
    c.add_argument("--dt", type=float, default=1e-3)
    c.add_argument("--qd2", type=_vector, help="initial independent rates")
    c.add_argument("--torque", type=_vector, help="constant actuator forces")
    c.add_argument("--control", help="CSV t,c1..cm applied with zero-order hold")
    c.add_argument("--tau", type=_vector, help="EE wrench fx,fy,torque exerted on the environment")
    c.add_argument("--no-gravity", action="store_true")
    c = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    c.add_argument("manifest")
    c.add_argument("--out", help="output directory (default: the manifest's own)")
    return p


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return _replay(args)
    rc = RunConfig(args.command, args.mech, Path(args.out), args.seed, args.tol_rank, args.step,
                   params={k: (v.tolist() if isinstance(v, np.ndarray) else
                               [x.tolist() for x in v] if isinstance(v, list) and v and isinstance(v[0], np.ndarray)
                               else v)
                           for k, v in sorted(vars(args).items())
                           if k not in ("mech", "out", "seed", "tol_rank", "step", "command")},
                   argv=list(argv))
    try:
        mech = _mechanism(args.mech)
        rc.out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](mech, args, rc)
        _manifest(rc, outputs)
    except DescriptionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NumericalError, PKMError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _replay(args) -> int:
    src = Path(args.manifest)
    try:
        data = json.loads(src.read_text())
    except (OSError, ValueError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_PARSE
    argv = list(data["argv"])
    out = Path(args.out) if args.out else src.parent
    if "--out" in argv:
        argv[argv.index("--out") + 1] = str(out)
    else:
        argv += ["--out", str(out)]
    status = run(argv)
    if status != EXIT_OK:
        return status
    fresh = json.loads((out / "manifest.json").read_text())
    bad = [k for k, v in data["outputs"].items() if fresh["outputs"].get(k) != v]
    for k in bad:
        print(f"mismatch: {k}", file=sys.stderr)
    print("replay identical" if not bad else f"replay differs in {len(bad)} file(s)")
    return EXIT_OK if not bad else 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
