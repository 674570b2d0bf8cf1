import subprocess
import sys

import pytest

from nsdarcy.cli import main
from nsdarcy.config import ConfigError, SimConfig, config_keys, parse_config, parse_config_text

FAST = ["--set", "geometry.nx=4", "--set", "geometry.ny_fluid=4", "--set", "geometry.ny_porous=4"]


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def test_empty_config_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = parse_config(path)
    assert (cfg.k, cfg.mu, cfg.beta, cfg.variant, cfg.theta, cfg.r, cfg.q) == (1.0, 1.0, 1.0, "bjs", 1.0, 2.0, 2.0)
    assert cfg.mu_weight == "critical" and cfg.mu_weight_value == 0.75


def test_sections_and_overrides():
    cfg = parse_config_text("[physics]\nvariant = BJ\nbeta = 0.01\n[time]\ndt = 0.5\n", ["time.T=2"])
    assert cfg.variant == "bj" and cfg.beta == 0.01 and cfg.dt == 0.5 and cfg.T == 2.0


@pytest.mark.parametrize("text,key", [
    ("[physics]\nbeta = -1\n", "physics.beta"),
    ("[physics]\nk = 0\n", "physics.k"),
    ("[physics]\nmu = -2\n", "physics.mu"),
    ("[physics]\nvariant = darcy\n", "physics.variant"),
    ("[time]\nT = 0\n", "time.T"),
    ("[time]\ndt = 0\n", "time.dt"),
    ("[time]\ntheta = 0.2\n", "time.theta"),
    ("[monitors]\nmu_weight = 0.4\n", "monitors.mu_weight"),
    ("[monitors]\nmu_weight = abc\n", "monitors.mu_weight"),
    ("[geometry]\nnx = 2.5\n", "geometry.nx"),
    ("[geometry]\nnz = 2\n", "geometry.nz"),
    ("[mesh]\nnx = 2\n", "mesh"),
])
def test_validation_names_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_missing_file_and_parse_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")
    with pytest.raises(ConfigError):
        parse_config_text("no section header\n")


def test_every_key_settable():
    for key in config_keys():
        assert hasattr(SimConfig(), key.split(".")[1])


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--set", "time.T=0", "--out", str(tmp_path)]) == 2
    assert "time.T" in capsys.readouterr().err
    assert main(["simulate", "--set", "physics.beta=-1", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["simulate", "--set", "bogus"]) == 2


def test_spectrum_command(tmp_path):
    assert main(["spectrum", "--out", str(tmp_path)] + FAST) == 0
    header, rows = read_csv(tmp_path / "spectrum.csv")
    assert header == ["re", "im", "residual", "level", "variant", "k", "mu", "beta"]
    assert len(rows) == 10 and all(float(r[0]) < 0 for r in rows)
    assert (tmp_path / "spectrum.png").stat().st_size > 0


def test_threshold_command(tmp_path, capsys):
    assert main(["threshold", "--out", str(tmp_path), "--set", "physics.variant=bj"] + FAST) == 0
    header, rows = read_csv(tmp_path / "threshold.csv")
    beta_c = float(rows[0][header.index("beta_c")])
    assert beta_c > 0
    assert "beta_c" in capsys.readouterr().out


def test_simulate_outputs(tmp_path):
    args = ["simulate", "--out", str(tmp_path), "--set", "time.T=0.2", "--set", "time.dt=0.02",
            "--set", "io.snapshot_stride=5"] + FAST
    assert main(args) == 0
    header, rows = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "energy", "dissipation", "identity_residual", "serrin_partial", "h32_p", "h32_u"]
    assert len(rows) == 11
    assert sorted(p.name for p in (tmp_path / "snapshots").iterdir()) == [
        "state_000000.txt", "state_000005.txt", "state_000010.txt"]
    header, rows = read_csv(tmp_path / "norms.csv")
    assert header == ["kind", "s", "r", "mu", "region", "value"]
    assert (tmp_path / "energy.png").exists()
    _, mon = read_csv(tmp_path / "monitors.csv")
    assert mon[0][-1] == "0"


def test_converge_and_extension_commands(tmp_path):
    assert main(["converge", "--out", str(tmp_path), "--set", "run.levels=2"] + FAST) == 0
    header, rows = read_csv(tmp_path / "rates_case1.csv")
    assert header == ["level", "h", "err_u", "err_p", "order_u", "order_p"]
    assert float(rows[1][4]) > 2.5
    assert main(["extension-check", "--out", str(tmp_path), "--set", "run.levels=2"] + FAST) == 0
    header, rows = read_csv(tmp_path / "extension_check.csv")
    assert float(rows[1][header.index("order_darcy")]) >= 1.0
    assert float(rows[1][header.index("order_stokes")]) >= 1.0


def test_floats_round_trip(tmp_path):
    main(["spectrum", "--out", str(tmp_path)] + FAST)
    _, rows = read_csv(tmp_path / "spectrum.csv")
    re = rows[0][0]
    assert float(format(float(re), ".17g")) == float(re)
    assert len(re.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_deterministic_outputs(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        for cmd in ("simulate", "spectrum"):
            assert main([cmd, "--out", str(out), "--set", "time.T=0.1", "--set", "time.dt=0.01",
                         "--set", "run.seed=3"] + FAST) == 0
        outs.append(out)
    for name in ("trajectory.csv", "monitors.csv", "norms.csv", "spectrum.csv", "snapshots/state_000010.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nsdarcy.cli", "spectrum", "--out", str(tmp_path)] + FAST,
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "eigenvalues" in res.stdout


def test_inline_comments_are_ignored():
    cfg = parse_config_text("[physics]\nvariant = bj   ; bjs | bj\n[monitors]\nmu_weight = critical ; auto\n")
    assert cfg.variant == "bj"
    assert cfg.mu_weight_value == 0.75
