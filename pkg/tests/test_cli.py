import json

import numpy as np
import pytest
import yaml

from approxhsmm import cli
from approxhsmm.config import RunConfig, apply_environment, load_config
from approxhsmm.errors import DataError
from approxhsmm.io import read_series

TRUTH = {"pi": [[0, 0.3, 0.7], [0.2, 0, 0.8], [0.1, 0.9, 0]], "lam": [6, 9, 6],
         "mu": [0, 4, 8], "sigma2": [1, 1, 1]}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_yaml(root / "sim.yaml", {"model": {"K": 3, "a": 10},
                                         "simulate": {"T": 150, "truth": TRUTH}})
    assert cli.run(["simulate", str(cfg), "--out", str(root / "sim")]) == 0
    return root, root / "sim" / "data.csv"


class TestCommands:
    def test_simulate_outputs(self, simulated):
        root, data = simulated
        y = read_series(data)
        assert y.T == 150
        truth = json.loads((root / "sim" / "truth.json").read_text())
        assert truth["T"] == 150
        assert truth["truth"]["lam"] == TRUTH["lam"]
        states = np.loadtxt(data, delimiter=",", skiprows=1)[:, 2]
        assert set(states) <= {1, 2, 3}

    def test_fit_is_deterministic(self, simulated, tmp_path):
        root, data = simulated
        cfg = write_yaml(tmp_path / "fit.yaml", {
            "data": {"path": str(data)}, "model": {"K": 3, "a": 10},
            "sampler": {"chains": 1, "warmup": 30, "draws": 20, "seed": 4}})
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert cli.run(["fit", str(cfg), "--out", str(out)]) == 0
            outs.append((out / "draws.csv").read_text())
            assert (out / "config.yaml").exists()
            assert set(json.loads((out / "summary.json").read_text())) >= {"parameters"}
        assert outs[0] == outs[1]
        out = tmp_path / "other"
        assert cli.run(["fit", str(cfg), "--out", str(out), "--seed", "5"]) == 0
        assert (out / "draws.csv").read_text() != outs[0]

    def test_decode_and_residuals(self, simulated, tmp_path):
        root, data = simulated
        cfg = write_yaml(tmp_path / "c.yaml", {"data": {"path": str(data)},
                                               "model": {"K": 3, "a": 10},
                                               "decode": {"estimate": "mle"}})
        assert cli.run(["decode", str(cfg), "--out", str(tmp_path / "d")]) == 0
        states = np.loadtxt(tmp_path / "d" / "states.csv", delimiter=",", skiprows=1)
        assert states.shape == (150, 3) and set(states[:, 1]) <= {1, 2, 3}
        assert cli.run(["residuals", str(cfg), "--out", str(tmp_path / "r")]) == 0
        assert (tmp_path / "r" / "residuals.csv").exists()

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.run(["--version"])
        assert exc.value.code == 0
        assert "approxhsmm 0.1.0" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_key_is_a_config_error(self, tmp_path):
        cfg = write_yaml(tmp_path / "bad.yaml", {"model": {"K": 3, "bogus": 1}})
        assert cli.run(["fit", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_section_is_a_config_error(self, tmp_path):
        cfg = write_yaml(tmp_path / "bad.yaml", {"model": {"K": 3}})
        assert cli.run(["fit", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_bad_data_is_a_data_error(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("y\n1.0\nabc\n2.0\nnan\n")
        cfg = write_yaml(tmp_path / "c.yaml", {"data": {"path": str(tmp_path / "bad.csv")},
                                               "model": {"K": 2}})
        assert cli.run(["fit", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "3, 5" in capsys.readouterr().err


class TestConfig:
    def test_canonical_echo_is_idempotent(self, tmp_path):
        cfg = write_yaml(tmp_path / "c.yaml", {"model": {"K": 2, "dwell": "negbinomial"}})
        first = load_config(cfg).dumps()
        again = write_yaml(tmp_path / "again.yaml", yaml.safe_load(first))
        assert load_config(again).dumps() == first

    def test_environment_overrides(self):
        cfg = apply_environment(RunConfig(), {"APPROXHSMM_SEED": "9", "APPROXHSMM_THREADS": "3"})
        assert cfg.sampler.seed == 9 and cfg.sampler.n_jobs == 3

    def test_rejects_other_versions(self):
        with pytest.raises(ValueError):
            RunConfig(version=2)


class TestReadSeries:
    def test_reports_every_bad_line(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,y\n1,0.5\n2,\n3,inf\n4,1.5\n")
        with pytest.raises(DataError, match="lines 3, 4"):
            read_series(p)

    def test_column_and_transform(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,count\n1,4\n2,9\n\n3,16\n")
        np.testing.assert_allclose(read_series(p, "count", sqrt_transform=True).y, [2, 3, 4])
        np.testing.assert_allclose(read_series(p, 0).y, [1, 2, 3])
        with pytest.raises(DataError):
            read_series(p, "missing")
        with pytest.raises(DataError):
            read_series(tmp_path / "absent.csv")
