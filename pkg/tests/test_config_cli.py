import numpy as np
import pytest

from nested_spde.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from nested_spde.config import (ExperimentConfig, load_config, parse_levels, parse_number,
                                parse_numbers)
from nested_spde.errors import ConfigError

SMALL_INI = """\
[model]
bc = Neumann
gamma = 1

[scheme]
T = 0.25
dt = 2^-4

[experiment]
levels = 1..2
level_ref = 3
replicates = 4
seed = 9
"""


@pytest.mark.parametrize("text, value", [("2^-10", 2.0 ** -10), ("2**-3", 0.125),
                                         ("2^(-2)", 0.25), ("0.5", 0.5), ("1e-3", 1e-3)])
def test_parse_number(text, value):
    assert parse_number(text) == value


def test_parse_lists():
    assert parse_levels("2..5") == (2, 3, 4, 5)
    assert parse_levels("2, 4,6") == (2, 4, 6)
    assert parse_numbers("2^-4, 2^-5") == (0.0625, 0.03125)
    with pytest.raises(ConfigError):
        parse_levels("a..b")
    with pytest.raises(ConfigError):
        parse_number("fast")


def test_load_config_text_and_overrides():
    cfg = load_config(text=SMALL_INI, seed=3, replicates=None)
    assert cfg.bc == "neumann" and cfg.dt == 0.0625 and cfg.levels == (1, 2)
    assert cfg.seed == 3 and cfg.replicates == 4
    assert load_config(text="[scheme]\nk = auto\n").k is None
    assert load_config(text="[scheme]\nk = 0.1\n").k == 0.1
    assert load_config() == ExperimentConfig()


@pytest.mark.parametrize("text", ["[model]\ncolour = red\n", "[solver]\ntol = 1\n",
                                  "[experiment]\nreplicates = many\n", "not an ini"])
def test_load_config_rejects(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


@pytest.mark.parametrize("change", [
    dict(bc="robin"), dict(gamma=0.0), dict(gamma=1.5), dict(nonlinearity="cubic"),
    dict(replicates=0), dict(levels=(2, 6)), dict(dt=0.3), dict(dt_ref=0.3),
    dict(dt=2.0 ** -4, dt_ref=2.0 ** -3), dict(k=-1.0), dict(levels=()),
])
def test_validate(change):
    import dataclasses
    with pytest.raises(ConfigError):
        dataclasses.replace(ExperimentConfig(), **change).validate("converge")


def test_validate_time_rate_ladder():
    cfg = ExperimentConfig(dt_ref=2.0 ** -6, dt_ladder=(2.0 ** -4, 0.3))
    with pytest.raises(ConfigError):
        cfg.validate("time-rate")
    ExperimentConfig(dt_ref=2.0 ** -6, dt_ladder=(2.0 ** -4,)).validate("time-rate")


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI)
    return str(path)


def test_converge_cli_is_deterministic(ini, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.csv"
        assert main(["converge", "--config", ini, "--out", str(out), "--threads", "1"]) == EXIT_OK
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == "mode,level,h,dt,gamma,k,replicates,error,stderr"
    assert lines[1].startswith("converge,1,0.7071067811865476,0.0625,1.0,nan,4,")
    assert lines[-1].startswith("# slope=")
    other = tmp_path / "seed.csv"
    main(["converge", "--config", ini, "--out", str(other), "--seed", "10"])
    assert other.read_bytes() != outs[0]


def test_cli_subcommands(ini, capsys):
    assert main(["pathwise", "--config", ini]) == EXIT_OK
    assert capsys.readouterr().out.startswith("mode,")
    assert main(["time-rate", "--config", ini]) == EXIT_CONFIG   # default ladder coarser than T
    assert main(["oracle", "--T", "0.25", "--gamma", "1", "--cutoff", "200"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "sum=0.2509387633014" in out and "tail_bound=" in out
    assert main(["quad-check", "--level", "2"]) == EXIT_OK
    assert main(["noise-check", "--level", "1", "--samples", "2000"]) == EXIT_OK
    assert "status=ok" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nunknown = 1\n")
    assert main(["converge", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["converge", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["oracle", "--T", "-1"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_cli_numerical_failure(ini, monkeypatch, capsys):
    from nested_spde import harness
    from nested_spde.errors import FactorizationError

    def boom(cfg):
        raise FactorizationError("non-positive pivot")

    monkeypatch.setattr(harness, "strong_error_study", boom)
    assert main(["converge", "--config", ini]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_console_script_entry_point():
    from importlib.metadata import entry_points
    eps = [e for e in entry_points(group="console_scripts") if e.name == "nested-spde"]
    assert eps and eps[0].value == "nested_spde.cli:main"
