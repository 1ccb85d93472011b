import json
from pathlib import Path

import numpy as np
import pytest

from conftest import FIXTURES
from fetchcache.cli import EXIT_CONFIG, EXIT_FINGERPRINT, EXIT_NONCONVERGED, main
from fetchcache.configfile import parse_config
from fetchcache.model import ConfigError
from fetchcache.solver import ValueTable

M2 = str(FIXTURES / "m2.cfg")
ZERO = str(FIXTURES / "zero.cfg")


def run(*argv):
    return main([str(a) for a in argv])


class TestConfigFile:
    def test_broadcast_and_defaults(self):
        rc = parse_config("gamma = 0.5\nnum_nodes = 3\nrequest_probs = 0.2\n"
                          "rho_means = 1\nlambda_cloud_mean = 4\n")
        assert rc.model.request_probs == (0.2,) * 4
        assert rc.model.lambda_out_means == (0.0,) * 3
        assert rc.solver.epsilon is None and rc.sim.horizon is None

    def test_missing_key_named(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("num_nodes = 0\nrequest_probs = 1\nrho_means = 1\nlambda_cloud_mean = 1\n")
        assert exc.value.key == "gamma"

    def test_unknown_key(self):
        text = (FIXTURES / "zero.cfg").read_text() + "colour = blue\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.key == "colour"

    def test_wrong_length(self):
        with pytest.raises(ConfigError):
            parse_config("gamma = 0.5\nnum_nodes = 2\nrequest_probs = 0.1, 0.2\n"
                         "rho_means = 1\nlambda_cloud_mean = 1\n")


class TestSolve:
    def test_zero_prices(self, tmp_path):
        out = tmp_path / "t.json"
        assert run("solve", ZERO, "-o", out) == 0
        assert np.all(ValueTable.load(out).values == 0)
        assert (tmp_path / "t.json.manifest.json").exists()

    def test_matches_golden(self, tmp_path):
        out = tmp_path / "t.bin"
        assert run("solve", M2, "-o", out) == 0
        golden = json.loads((FIXTURES / "m2_golden.json").read_text())
        table = ValueTable.load(out)
        assert table.config_hash == golden["config_hash"]
        assert table.iterations == golden["iterations"]
        np.testing.assert_allclose(table.values, golden["values"], rtol=0, atol=1e-9)

    def test_missing_gamma(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("\n".join(l for l in (FIXTURES / "zero.cfg").read_text().splitlines()
                                 if not l.startswith("gamma")))
        assert run("solve", cfg, "-o", tmp_path / "t.json") == EXIT_CONFIG

    def test_nonconvergence_exit(self, tmp_path):
        assert run("solve", M2, "--max-iterations", 3, "-o", tmp_path / "t.json") == EXIT_NONCONVERGED

    def test_missing_file(self, tmp_path):
        assert run("solve", tmp_path / "nope.cfg", "-o", tmp_path / "t.json") == EXIT_CONFIG


class TestSimulate:
    def test_never_zero_cost(self, tmp_path):
        out = tmp_path / "r.json"
        assert run("simulate", ZERO, "--policy", "never", "-o", out) == 0
        assert json.loads(out.read_text())["mean_discounted_cost"] == 0

    def test_fingerprint_mismatch(self, tmp_path, capsys):
        table = tmp_path / "zero.json"
        assert run("solve", ZERO, "-o", table) == 0
        capsys.readouterr()
        code = run("simulate", M2, "--policy", "dp", "--table", table, "-o", tmp_path / "r.json")
        assert code == EXIT_FINGERPRINT
        err = capsys.readouterr().err
        assert ValueTable.load(table).config_hash in err

    def test_dp_needs_table(self, tmp_path):
        assert run("simulate", M2, "--policy", "dp", "-o", tmp_path / "r.json") == EXIT_CONFIG

    def test_compare_dp_myopic(self, tmp_path):
        table = tmp_path / "t.json"
        assert run("solve", M2, "-o", table) == 0
        out = tmp_path / "c.json"
        assert run("compare", M2, "--policies", "dp,myopic", "--table", table, "-o", out) == 0
        res = json.loads(out.read_text())
        d = res["differences"][0]
        assert (d["baseline"], d["other"]) == ("dp", "myopic")
        assert d["mean"] + 1.96 * d["stderr"] >= 0

    def test_csv_format(self, tmp_path):
        out = tmp_path / "r.csv"
        assert run("simulate", ZERO, "--policy", "always", "--format", "csv", "-o", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("policy,") and lines[1].startswith("always,")

    def test_validate(self, tmp_path):
        assert run("validate", M2) == 0
        table = tmp_path / "t.json"
        run("solve", ZERO, "-o", table)
        assert run("validate", M2, "--table", table) == EXIT_FINGERPRINT


class TestSweep:
    def test_unknown_builtin(self, tmp_path, capsys):
        assert run("sweep", "fig9", "-o", tmp_path) == EXIT_CONFIG
        assert "fig1a" in capsys.readouterr().err

    def test_empty_grid(self, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"name": "e", "axes": [["rho_mean", []]]}))
        assert run("sweep", spec, "-o", tmp_path / "out") == EXIT_CONFIG

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({
            "name": "tiny", "scenario": {"rho_mean": 0.0, "lambda_mean": 0.0, "num_trajectories": 20,
                                         "horizon": 5},
            "axes": [["rho_mean", [0.0]]], "policies": ["never"]}))
        out = tmp_path / "out"
        assert run("sweep", spec, "-o", out, "--threads", 1) == 0
        lines = (out / "tiny.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].split(",")[7] == "0.0"
        assert json.loads((out / "manifest.json").read_text())["command"] == "sweep"

    def test_builtin_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("sweep", "fig1d", "-o", a, "--threads", 1) == 0
        assert run("sweep", "fig1d", "-o", b, "--threads", 2) == 0
        for name in ("fig1d.csv", "fig1d.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
