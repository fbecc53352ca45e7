import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sblab import cli


def _write(tmp_path, **values):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({k.replace("__", "."): v for k, v in values.items()}))
    return str(path)


SMALL = dict(design__kind="gaussian_iid", design__n=30, design__p=8, truth__s0=2, seed=3,
             n_draws=200, replications=2)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSubcommands:
    def test_diagnose(self, tmp_path):
        cfg = _write(tmp_path, design__n=6, truth__s0=2, diagnose__s_max=2)
        assert cli.main(["diagnose", "--config", cfg, "--out", str(tmp_path)]) == 0
        d = json.loads((tmp_path / "diagnostics.json").read_text())
        assert d["mutual_coherence"] == 0.0

    def test_fit_exact(self, tmp_path):
        assert cli.main(["fit-exact", "--config", _write(tmp_path, **SMALL),
                         "--out", str(tmp_path)]) == 0
        post = json.loads((tmp_path / "posterior.json").read_text())
        assert post["engine"] == "enumeration"
        assert post["map_model"] == [0, 1]
        rows = _rows(tmp_path / "draws.csv")
        assert rows[0] == [f"b{j}" for j in range(8)] and len(rows) == 201

    def test_fit_exact_sequence(self, tmp_path):
        cfg = _write(tmp_path, design__n=50, truth__s0=2, seed=1, n_draws=10)
        assert cli.main(["fit-exact", "--config", cfg, "--out", str(tmp_path)]) == 0
        post = json.loads((tmp_path / "posterior.json").read_text())
        assert post["engine"] == "sequence"
        assert sum(post["dimension_posterior"]) == pytest.approx(1.0)

    def test_fit_mcmc(self, tmp_path):
        cfg = _write(tmp_path, **SMALL, mcmc__n_sweeps=600, mcmc__burn_in=100)
        assert cli.main(["fit-mcmc", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert len(_rows(tmp_path / "chain.csv")) == 501
        diag = json.loads((tmp_path / "diagnostics.json").read_text())
        assert set(diag["acceptance"]) == {"add", "delete", "swap"}

    def test_bvm(self, tmp_path):
        cfg = _write(tmp_path, **SMALL, bvm__mc_draws=2000)
        assert cli.main(["bvm", "--config", cfg, "--out", str(tmp_path)]) == 0
        mix = json.loads((tmp_path / "mixture.json").read_text())
        w = np.exp([c["log_weight"] for c in mix["components"]])
        assert w.sum() == pytest.approx(1.0)
        assert 0.0 <= mix["tv_bound"] <= 1.0 + 1e-9

    def test_bvm_with_data(self, tmp_path):
        gen = np.random.default_rng(0)
        A = gen.standard_normal((25, 5))
        y = A[:, 0] * 2 + gen.standard_normal(25)
        np.savetxt(tmp_path / "X.csv", A, delimiter=",")
        np.savetxt(tmp_path / "y.csv", y, delimiter=",")
        cfg = _write(tmp_path, data__design=str(tmp_path / "X.csv"),
                     data__response=str(tmp_path / "y.csv"), bvm__mc_draws=1000)
        assert cli.main(["bvm", "--config", cfg, "--out", str(tmp_path)]) == 0

    def test_lasso_compare(self, tmp_path):
        cfg = _write(tmp_path, design__n=100, truth__signal="zero", lasso__n_draws=500)
        assert cli.main(["lasso-compare", "--config", cfg, "--out", str(tmp_path)]) == 0
        d = json.loads((tmp_path / "lasso.json").read_text())
        assert {"lasso_ball_mass", "spike_slab_ball_mass"} <= set(d)

    def test_predict_subspace(self, tmp_path):
        cfg = _write(tmp_path, **{**SMALL, "design__p": 10, "truth__s0": 3}, design__planted=1,
                     subspace__t_max=3)
        assert cli.main(["predict-subspace", "--config", cfg, "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "posterior.json").read_text())
        fam = _rows(tmp_path / "family.csv")
        assert fam[0] == ["index", "support", "dim", "log_weight"]
        assert len(fam) - 1 == res["family_size"] == sum(res["members_per_dim"])
        assert res["t0"] == 2 and res["s0"] == 3
        assert len(_rows(tmp_path / "predictions.csv")) == 201

    def test_simulate(self, tmp_path, capsys):
        cfg = _write(tmp_path, experiment="selection", design__n=40, truth__s0=2, seed=4,
                     replications=3)
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--threads", "2"]) == 0
        first = (out / "report.json").read_text()
        assert "map_is_s0" in capsys.readouterr().out
        assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "report.json").read_text() == first
        assert _rows(out / "plotdata.csv")[0] == ["experiment", "rep", "stat", "value"]

    def test_seed_override(self, tmp_path):
        cfg = _write(tmp_path, experiment="dimension", design__n=20, replications=1)
        cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "9"])
        rep = json.loads((tmp_path / "a" / "report.json").read_text())
        assert rep["config"]["seed"] == 9


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert cli.main(["simulate", "--config", _write(tmp_path, bogus=1)]) == 2

    def test_missing_config(self, tmp_path):
        assert cli.main(["diagnose", "--config", str(tmp_path / "none.json")]) == 2

    def test_bad_threads(self, tmp_path):
        assert cli.main(["simulate", "--config", _write(tmp_path), "--threads", "0"]) == 2

    def test_budget_refused(self, tmp_path):
        cfg = _write(tmp_path, design__kind="gaussian_iid", design__n=30, design__p=60,
                     engine="exact", s_max=10)
        assert cli.main(["fit-exact", "--config", cfg, "--out", str(tmp_path)]) == 3

    def test_numeric_failure(self, tmp_path):
        np.savetxt(tmp_path / "X.csv", np.zeros((5, 3)), delimiter=",")
        cfg = _write(tmp_path, data__design=str(tmp_path / "X.csv"))
        assert cli.main(["diagnose", "--config", cfg, "--out", str(tmp_path)]) == 4

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "sblab.cli", "--help"], capture_output=True,
                         text=True, check=True)
    for name in cli.COMMANDS:
        assert name in res.stdout
