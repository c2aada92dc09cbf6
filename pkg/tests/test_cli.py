import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subsde.cli import COMMANDS, main, run
from subsde.config import ConfigError, ExperimentConfig, format_matrix, load_config, parse_config, parse_matrix

BASE = """
[model]
name = {name}
{model_extra}

[spec]
beta = 0.5
c = 1.0
eps = 1e-3

[run]
t = {t}
N = {N}
seed = 3

[experiment]
{experiment}
"""

# small but complete runs of every subcommand
SMALL = {
    "ou-validate": dict(name="kinetic-linear", model_extra="", t=1.0, N=2000, experiment=""),
    "hormander-check": dict(name="pendulum", model_extra="", t=1.0, N=1, experiment="n_points = 5"),
    "malliavin-spectrum": dict(name="pendulum", model_extra="", t=1.0, N=10000, experiment="x0 = 0.5 0.0"),
    "generator-check": dict(name="zero-drift", model_extra="d = 2", t=1.0, N=1, experiment=""),
    "fp-residual": dict(name="zero-drift", model_extra="d = 2", t=1.0, N=500, experiment="dt = 0.05\ninner = 4"),
    "decomp-check": dict(name="zero-drift", model_extra="d = 2", t=1.0, N=2000, experiment=""),
    "norris-bound": dict(name="zero-drift", model_extra="d = 1", t=1.0, N=5000, experiment=""),
    "kinetic-density": dict(name="kinetic-linear", model_extra="", t=1.0, N=2000, experiment="n_grid = 11"),
}


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _body(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# subsde ")
    return lines[1:]


class TestConfig:
    def test_empty_names_first_field(self):
        with pytest.raises(ConfigError, match=r"model\.name"):
            parse_config("")

    @pytest.mark.parametrize(
        "drop,field",
        [("beta", "spec.beta"), ("eps", "spec.eps"), ("seed", "run.seed"), ("N", "run.N")],
    )
    def test_missing_field_named(self, drop, field):
        text = BASE.format(**SMALL["ou-validate"])
        text = "\n".join(line for line in text.splitlines() if not line.startswith(drop + " "))
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            parse_config(text)

    @pytest.mark.parametrize(
        "old,new,field",
        [
            ("beta = 0.5", "beta = 1.5", "spec.beta"),
            ("c = 1.0", "c = -1", "spec.c"),
            ("t = 1.0", "t = 0", "run.t"),
            ("N = 2000", "N = many", "run.N"),
            ("name = kinetic-linear", "name = spiral", "model.name"),
        ],
    )
    def test_invalid_field_named(self, old, new, field):
        text = BASE.format(**SMALL["ou-validate"]).replace(old, new)
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            parse_config(text)

    def test_linear_requires_matrix(self):
        with pytest.raises(ConfigError, match=r"model\.B"):
            parse_config(BASE.format(name="linear", model_extra="", t=1, N=10, experiment=""))

    def test_round_trip(self):
        cfg = parse_config(BASE.format(name="linear", model_extra="B = 0 1; -1 0\nA = 0 0; 0 1", t=0.5, N=10, experiment="z_max = 2"))
        again = parse_config(cfg.to_ini())
        assert again == cfg and again.digest() == cfg.digest()
        from_json = parse_config(cfg.to_json())
        assert from_json == cfg
        np.testing.assert_array_equal(cfg.build_model().jacobian(np.zeros(2)), [[0, 1], [-1, 0]])

    def test_overrides(self):
        cfg = parse_config(BASE.format(**SMALL["ou-validate"]))
        over = cfg.with_overrides(seed=11, threads=4)
        assert (over.seed, over.threads) == (11, 4) and cfg.seed == 3
        assert over.digest() != cfg.digest()

    def test_inline_comments(self):
        cfg = parse_config(BASE.format(**SMALL["ou-validate"]).replace("beta = 0.5", "beta = 0.5   # stable index"))
        assert cfg.beta == 0.5

    def test_hamiltonian(self):
        cfg = parse_config(BASE.format(name="hamiltonian", model_extra="potential = quadratic\nstrength = 2", t=1, N=10, experiment=""))
        m = cfg.build_model()
        assert m.d == 2
        np.testing.assert_allclose(m.jacobian(np.zeros(2)), [[0, 1], [-2, 0]], atol=1e-12)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.ini"))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=4))
    def test_matrix_format_round_trip(self, rows):
        M = np.array(rows)
        np.testing.assert_array_equal(parse_matrix(format_matrix(M)), M)


class TestSubcommands:
    @pytest.mark.parametrize("command", sorted(COMMANDS))
    def test_runs_and_replays(self, command, tmp_path):
        cfg = parse_config(BASE.format(**SMALL[command]))
        assert run(command, cfg, str(tmp_path / "a")) in (0, 2)
        run(command, cfg, str(tmp_path / "b"))
        for suffix in ("", "_summary"):
            a = _body(tmp_path / "a" / f"{command}{suffix}.csv")
            b = _body(tmp_path / "b" / f"{command}{suffix}.csv")
            assert a == b and len(a) >= 2

    @pytest.mark.parametrize("command", ["ou-validate", "fp-residual"])
    def test_thread_count_does_not_change_body(self, command, tmp_path):
        cfg = parse_config(BASE.format(**SMALL[command]))
        run(command, cfg, str(tmp_path / "one"))
        run(command, cfg.with_overrides(threads=3), str(tmp_path / "three"))
        assert _body(tmp_path / "one" / f"{command}.csv") == _body(tmp_path / "three" / f"{command}.csv")

    def test_banner(self, tmp_path):
        cfg = parse_config(BASE.format(**SMALL["generator-check"]))
        run("generator-check", cfg, str(tmp_path))
        first = (tmp_path / "generator-check.csv").read_text().splitlines()[0]
        assert f"config_hash={cfg.digest()}" in first and "seed=3" in first and "threads=1" in first

    def test_ou_validate_needs_linear(self):
        cfg = parse_config(BASE.format(**SMALL["malliavin-spectrum"]))
        with pytest.raises(ConfigError):
            run("ou-validate", cfg, ".")


class TestMain:
    def test_pass_exit_zero(self, tmp_path, capsys):
        path = _write(tmp_path, BASE.format(**SMALL["generator-check"]))
        assert main(["generator-check", "--config", path, "--out", str(tmp_path)]) == 0
        assert "max_rel_err" in capsys.readouterr().out

    def test_failing_check_exit_two(self, tmp_path):
        text = BASE.format(**SMALL["generator-check"]).replace("[experiment]", "[experiment]\ntol = 1e-300")
        assert main(["generator-check", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 2

    def test_config_error_exit_one(self, tmp_path, capsys):
        assert main(["generator-check", "--config", _write(tmp_path, "[model]\nname = pendulum\n"), "--out", str(tmp_path)]) == 1
        assert "spec.beta" in capsys.readouterr().err

    def test_usage_error_exit_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["not-a-command", "--config", "x"])
        assert exc.value.code == 1

    def test_json_config_and_seed_override(self, tmp_path):
        cfg = parse_config(BASE.format(**SMALL["decomp-check"]))
        path = _write(tmp_path, cfg.to_json(), "cfg.json")
        assert main(["decomp-check", "--config", path, "--seed", "8", "--out", str(tmp_path)]) == 0
        assert "seed=8" in (tmp_path / "decomp-check.csv").read_text().splitlines()[0]

    def test_module_entry_point(self, tmp_path):
        path = _write(tmp_path, BASE.format(**SMALL["generator-check"]))
        out = subprocess.run(
            [sys.executable, "-m", "subsde", "generator-check", "--config", path, "--out", str(tmp_path)],
            capture_output=True, text=True, env={**os.environ},
        )
        assert out.returncode == 0 and "generator-closed-form" in out.stdout

    def test_demo_configs_parse(self):
        root = os.path.join(os.path.dirname(__file__), os.pardir, "demos", "configs")
        names = sorted(f for f in os.listdir(root) if f.endswith((".ini", ".json")))
        assert names
        for name in names:
            load_config(os.path.join(root, name))


def test_json_rejects_non_object():
    with pytest.raises(ConfigError):
        parse_config(json.dumps([1, 2]))


def test_dataclass_equality_uses_strings():
    a = ExperimentConfig({"name": "pendulum"}, {"beta": "0.5", "c": "1", "eps": "1e-3"}, {"t": "1", "N": "5", "seed": "0"})
    assert a.N == 5 and a.dt_max is None
