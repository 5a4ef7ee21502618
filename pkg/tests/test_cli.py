import pytest

from mftg import cli
from mftg.errors import SupersolutionDefectError


def _run(tmp_path, *argv):
    return cli.run([*argv, "--out", str(tmp_path / "out")])


def test_lattice_reports_epsilon(tmp_path, capsys):
    assert _run(tmp_path, "lattice", "--game", "pursuit-1d", "--h", "1/16") == cli.OK
    assert "0.35355" in (tmp_path / "out" / "epsilon.txt").read_text()
    assert "0.35355" in capsys.readouterr().out
    manifest = (tmp_path / "out" / "manifest.txt").read_text()
    assert "epsilon = " in manifest and "c_star = " in manifest and "status = ok" in manifest
    assert "output rates.csv sha256=" in manifest


def test_csv_outputs_carry_version_header(tmp_path):
    _run(tmp_path, "lattice", "--h", "1/4", "--quiet")
    lines = (tmp_path / "out" / "rates.csv").read_text().splitlines()
    assert lines[0] == "# mftg-csv v1" and lines[1] == "state,q_1,q_2,q_3,q_4"


@pytest.mark.parametrize("argv", [
    ["lattice", "--h", "0.3"],
    ["lattice", "--game", "chess"],
    ["simulate", "--h", "1/8", "--m0", "0.2:1,0.4"],
    ["solve", "--game", "crowd-averse-1d", "--h", "1/8"],
    [],
])
def test_usage_errors(tmp_path, argv):
    assert _run(tmp_path, *argv) == cli.USAGE


def test_violation_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "residual_proxy", lambda flow: -1e9)
    code = _run(tmp_path, "simulate", "--h", "1/8", "--particles", "16", "--partition", "4")
    assert code == cli.VIOLATION
    assert "bound_holds = no" in (tmp_path / "out" / "outcome.txt").read_text()
    assert "status = violation" in (tmp_path / "out" / "manifest.txt").read_text()


def test_failed_check_maps_to_violation(tmp_path, monkeypatch):
    def boom(run):
        raise SupersolutionDefectError("value rose")

    monkeypatch.setitem(cli.HANDLERS, "lattice", boom)
    assert _run(tmp_path, "lattice") == cli.VIOLATION


def test_simulate_succeeds(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "--h", "1/8", "--particles", "32", "--partition", "4", "--quiet") == cli.OK
    assert capsys.readouterr().out.strip() == "ok"
    assert "bound_holds = yes" in (tmp_path / "out" / "outcome.txt").read_text()


def test_config_supplies_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# shared\nseed = 5\n[lattice]\nh = 1/4\nsplit = yes\n[simulate]\nparticles = 3\n")
    args = cli.parse_args(["lattice", "--config", str(cfg)])
    assert args.h == "1/4" and args.split is True and args.seed == 5
    args = cli.parse_args(["lattice", "--config", str(cfg), "--h", "1/8"])
    assert args.h == "1/8"


def test_config_errors(tmp_path):
    bad_key = tmp_path / "bad.cfg"
    bad_key.write_text("colour = red\n")
    assert _run(tmp_path, "lattice", "--config", str(bad_key)) == cli.USAGE
    garbled = tmp_path / "garbled.cfg"
    garbled.write_text("this line has no equals sign\n")
    assert _run(tmp_path, "lattice", "--config", str(garbled)) == cli.USAGE
    assert _run(tmp_path, "lattice", "--config", str(tmp_path / "missing.cfg")) == cli.USAGE


def test_thread_cap_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("MFTG_THREADS", "zero")
    assert _run(tmp_path, "lattice", "--h", "1/4") == cli.USAGE
    monkeypatch.setenv("MFTG_THREADS", "2")
    assert _run(tmp_path, "lattice", "--h", "1/4") == cli.OK
    assert "threads = 2" in (tmp_path / "out" / "manifest.txt").read_text()


def test_verify_single_suite(tmp_path):
    assert _run(tmp_path, "verify", "--suite", "metrics", "--quiet") == cli.OK
    assert "metrics,1,pass" in (tmp_path / "out" / "verify.csv").read_text()
