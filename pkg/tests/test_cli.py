import pytest

from divdivch import cli
from divdivch.assembly import ConfigurationError


def test_parse_levels():
    assert cli.parse_levels("1..4") == [1, 2, 3, 4]
    assert cli.parse_levels("2,3") == [2, 3]
    assert cli.parse_levels([1, 2]) == [1, 2]
    for bad in ("3..1", "0,1", "2,2", ""):
        with pytest.raises(ConfigurationError):
            cli.parse_levels(bad)


def test_missing_config_exits_2(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG
    assert "load_config" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('domain = "square"\nwhatever = 1\n')
    assert cli.main(["run", "--config", str(p)]) == cli.EXIT_CONFIG


def test_bad_flag_and_value_exit_2(tmp_path):
    assert cli.main(["table1", "--tau-rule", "h3"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--eps", "-1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_run_constant_case(tmp_path, capsys):
    code = cli.main(["run", "--levels", "1", "--case", "constant:1", "--T", "1e-3", "--tau", "1e-4",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    assert (tmp_path / "level1" / "final.vtk").is_file()
    assert "level 1: 10 steps" in capsys.readouterr().out


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'out = "{tmp_path / "from_config"}"\nlevels = "1"\n')
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "from_env"))
    assert cli.main(["audit", "--config", str(cfg)]) == cli.EXIT_OK
    assert (tmp_path / "from_env" / "audit.csv").is_file()
    assert cli.main(["audit", "--config", str(cfg), "--out", str(tmp_path / "flag")]) == cli.EXIT_OK
    assert (tmp_path / "flag" / "audit.csv").is_file()


def test_audit_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["audit", "--levels", "1,2", "--seed", "7", "--out", str(d)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS audit level") == 4
    assert (a / "audit.csv").read_bytes() == (b / "audit.csv").read_bytes()


def test_table_command_small(tmp_path, capsys):
    code = cli.main(["table1", "--levels", "1..3", "--tau-rule", "h2", "--T", "0.05",
                     "--out", str(tmp_path)])
    out = capsys.readouterr().out
    # three coarse levels are outside the asymptotic range, so the verdict fails
    assert code == cli.EXIT_VERDICT
    assert "FAIL table1/h2 rates" in out
    rows = (tmp_path / "table1_h2.csv").read_text().splitlines()
    assert rows[0] == "mesh,h,err_sigma,rate_sigma,err_u,rate_u" and len(rows) == 4


def test_infsup_command(tmp_path, capsys):
    assert cli.main(["infsup", "--levels", "1,2", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert "PASS inf-sup" in capsys.readouterr().out


def test_coalesce_short(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("snapshot_times = [0.0, 0.01, 0.02]\nstructured = 12\nT = 0.02\n")
    code = cli.main(["coalesce", "--config", str(cfg), "--out", str(tmp_path), "--csv-snapshots"])
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK
    assert "PASS mass drift per step" in out
    for t in ("0", "0.01", "0.02"):
        assert (tmp_path / f"snapshot_t{t}.vtk").is_file()
        assert (tmp_path / f"snapshot_t{t}.csv").read_text().startswith("x,y,u")
    assert len((tmp_path / "mass_history.csv").read_text().splitlines()) == 4
