import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from pkmkit import fixtures
from pkmkit.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE, run


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_info(tmp_path, capsys):
    assert run(["info", "--mech", "five_bar", "--out", str(tmp_path)]) == EXIT_OK
    info = {r["key"]: r["value"] for r in _rows(tmp_path / "info.csv")}
    assert info["delta"] == "2" and info["grubler"] == "2" and info["rank_J"] == "3"
    assert "delta" in capsys.readouterr().out


def test_classify_writes_report_and_manifest(tmp_path):
    assert run(["classify", "--mech", "five_bar", "--config", "q0", "--out", str(tmp_path)]) == EXIT_OK
    rows = {r["kind"]: r for r in _rows(tmp_path / "classify.csv")}
    assert rows["passive"]["flag"] == "1" and rows["cspace"]["flag"] == "0"
    assert (tmp_path / "classify.csv").read_text().startswith("# command=classify")
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 0 and man["tolerances"]["tol_rank"] == 1e-10
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    assert man["mechanism_sha256"] == hashlib.sha256(fixtures.path("five_bar").read_bytes()).hexdigest()
    assert "timestamp" not in json.dumps(man)


def test_mechanism_file_path(tmp_path):
    out = tmp_path / "out"
    assert run(["doa", "--mech", str(fixtures.path("rr_2rrr")), "--out", str(out)]) == EXIT_OK
    row = _rows(out / "doa.csv")[0]
    assert (row["alpha"], row["rho"]) == ("2", "1")


def test_replay_is_byte_identical(tmp_path, capsys):
    assert run(["doa", "--mech", "five_bar", "--config", "home", "--config", "q0", "--out", str(tmp_path)]) == 0
    assert run(["replay", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert "replay identical" in capsys.readouterr().out
    assert (tmp_path / "doa.csv").read_bytes() == (tmp_path / "again" / "doa.csv").read_bytes()


def test_exit_codes(tmp_path):
    assert run(["info", "--mech", "no_such_thing", "--out", str(tmp_path)]) == EXIT_PARSE
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(["info", "--mech", str(bad), "--out", str(tmp_path)]) == EXIT_PARSE
    assert run(["classify", "--mech", "five_bar", "--q", "1,2,3,4,5", "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert run(["doa", "--mech", "five_bar", "--config", "nope", "--out", str(tmp_path)]) == EXIT_PARSE
    with pytest.raises(SystemExit) as exc:
        run(["classify"])
    assert exc.value.code == 2


def test_simulate_and_modes(tmp_path):
    assert run(["simulate", "--mech", "five_bar", "--config", "home", "--qd2", "0.5,-0.3", "--no-gravity",
                "--horizon", "0.05", "--dt", "0.001", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "trajectory.csv")
    assert len(rows) == 51
    e = np.array([float(r["energy"]) for r in rows])
    assert np.abs(e - e[0]).max() < 1e-9 * e[0]
    assert run(["modes", "--mech", "parallelogram_4bar", "--config", "flat", "--out", str(tmp_path)]) == EXIT_OK
    modes = {r["key"]: r["value"] for r in _rows(tmp_path / "modes.csv")}
    assert modes["motion"] == "2" and modes["assembly"] == "1"


def test_control_file(tmp_path):
    ctl = tmp_path / "ctl.csv"
    ctl.write_text("# t,c1,c2\n0,0.1,0.0\n0.02,0.0,0.1\n")
    assert run(["simulate", "--mech", "five_bar", "--config", "home", "--control", str(ctl),
                "--horizon", "0.04", "--dt", "0.01", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "trajectory.csv")
    assert [r["c_q1"] for r in rows] == ["0.1", "0.1", "0", "0", "0"]


def test_map_and_section(tmp_path):
    assert run(["map-manipulability", "--mech", "rr_2rrr", "--config", "home", "--box", "0", "2", "0.5", "2",
                "--resolution", "9", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "grid.csv")
    assert len(rows) == 81
    assert run(["trace-section", "--mech", "five_bar", "--config", "q0", "--grid", "q1,q2", "--section", "q4",
                "--half-width", "0.05", "--resolution", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert _rows(tmp_path / "section.csv")


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "pkmkit.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "pkmkit" in out.stdout
