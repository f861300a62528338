import json
import subprocess
import sys

import pytest

from errwlab.cli import KINDS, ConfigError, build_id, main, parse_config, repro_command


def test_minimal_flags_fill_defaults():
    cfg = parse_config(["check-ward", "--dim", "3", "--radius", "2", "--a", "8", "--seed", "1"])
    assert cfg.dim == 3 and cfg.radius == 2 and cfg.a == 8.0 and cfg.seed == 1
    assert cfg.sweeps == 100_000 and cfg.burnin == 100_000 and cfg.thin == 10


def test_nonpositive_weight_rejected():
    with pytest.raises(ConfigError, match="positivity"):
        parse_config(["check-ward", "--a", "0"])


def test_alpha_range_for_resistance_bound():
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(["check-resistance-bound", "--alpha", "0.2"])
    parse_config(["check-ward", "--alpha", "0.2", "--a", "8"])


def test_every_error_names_its_field():
    with pytest.raises(ConfigError) as exc:
        parse_config(["check-ward", "--a", "-1", "--thin", "0", "--b", "0.5"])
    msg = str(exc.value)
    assert "a:" in msg and "thin:" in msg and "b:" in msg


def test_config_file_and_unknown_keys(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"a": 4, "dim": 2, "seed": 3}))
    cfg = parse_config(["check-moments", "--config", str(good), "--seed", "5"])
    assert cfg.a == 4.0 and cfg.dim == 2 and cfg.seed == 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"a": 4, "sweps": 10}))
    with pytest.raises(ConfigError, match="sweps"):
        parse_config(["check-moments", "--config", str(bad)])
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(["check-moments", "--config", str(tmp_path / "missing.json")])


def test_main_exit_code_on_bad_config(capsys):
    assert main(["check-ward", "--a", "0"]) == 1
    assert "positivity" in capsys.readouterr().err


def test_ward_single_edge_report(tmp_path):
    out = tmp_path / "ward"
    code = main(["check-ward", "--graph", "edge", "--a", "4", "--m", "1", "--sweeps", "50000",
                 "--burnin", "2000", "--thin", "5", "--seed", "2", "--out", str(out)])
    rep = json.loads((out / "report.json").read_text())
    assert code == 0 and rep["verdict"] == "pass"
    bm = rep["extra"]["B_moment"]
    assert abs(bm["estimate"] - 4 / 3) <= 3 * bm["stderr"]
    assert rep["config"]["a"] == 4.0 and rep["build"] == build_id()
    assert (out / "repro.txt").read_text().startswith("errwlab check-ward")


def test_escape_radius_one(tmp_path):
    out = tmp_path / "esc"
    assert main(["escape-probability", "--dim", "3", "--radius", "1", "--runs", "1000",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["estimate"] == 1.0 and rep["stderr"] == 0.0


@pytest.mark.parametrize("kind,extra", [
    ("check-moments", ["--graph", "triangle", "--a", "4"]),
    ("simulate-vrjp", ["--dim", "2", "--radius", "2", "--steps", "300"]),
])
def test_identical_runs_identical_csv(tmp_path, kind, extra):
    args = [kind, "--sweeps", "2000", "--burnin", "200", "--seed", "7"] + extra
    main(args + ["--out", str(tmp_path / "r1")])
    main(args + ["--out", str(tmp_path / "r2")])
    assert (tmp_path / "r1" / "data.csv").read_bytes() == (tmp_path / "r2" / "data.csv").read_bytes()


def test_repro_command_round_trips():
    cfg = parse_config(["check-fluctuations", "--m", "3", "--a", "100", "--lengths", "10", "20"])
    argv = repro_command(cfg).split()[1:]
    assert parse_config(argv) == cfg


@pytest.mark.parametrize("kind", KINDS)
def test_every_subcommand_runs(tmp_path, kind):
    small = ["--dim", "2", "--radius", "1", "--sweeps", "400", "--burnin", "100", "--thin", "2",
             "--steps", "50", "--runs", "200", "--samples", "5", "--lengths", "4", "8", "--K", "20",
             "--a", "8", "--out", str(tmp_path / kind)]
    code = main([kind] + small)
    assert code in (0, 2)
    assert (tmp_path / kind / "report.json").exists() and (tmp_path / kind / "data.csv").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "errwlab", "escape-probability", "--radius", "1",
                          "--runs", "10", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
