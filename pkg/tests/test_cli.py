"""End-to-end tests of the command-line interface."""

import json

import numpy as np
import pytest

from metainfer.cli import main
from metainfer.dataset import write_csv

from .conftest import make_dataset


def write_fixture_csv(path, thetas, ses, studies=None, moderators=None):
    data = make_dataset(thetas, ses, studies, moderators)
    write_csv(data, path)
    return path


@pytest.fixture
def three_row_csv(tmp_path):
    return write_fixture_csv(tmp_path / "data.csv",
                             [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])


@pytest.fixture
def moderated_csv(tmp_path):
    rng = np.random.default_rng(17)
    n = 30
    x1 = rng.normal(0.0, 1.0, n)
    x2 = rng.normal(0.0, 1.0, n)
    thetas = 0.1 + 0.5 * x1 + rng.normal(0.0, 0.08, n)
    ses = rng.uniform(0.05, 0.2, n)
    studies = [f"s{i % 10}" for i in range(n)]
    csv = write_fixture_csv(tmp_path / "mods.csv", thetas, ses, studies,
                            {"x1": x1, "x2": x2})
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps([
        {"name": "x1", "kind": "continuous"},
        {"name": "x2", "kind": "continuous"},
    ]))
    return csv, schema


@pytest.fixture
def bias_csv(tmp_path):
    rng = np.random.default_rng(42)
    n = 25
    ses = rng.uniform(0.08, 0.3, n)
    thetas = rng.normal(0.1, 0.05, n) + rng.normal(0.0, 1.0, n) * ses
    return write_fixture_csv(tmp_path / "bias.csv", thetas, ses,
                             [f"s{i % 8}" for i in range(n)])


class TestPool:
    def test_writes_pooled_effect(self, three_row_csv, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["pool", "--input", str(three_row_csv), "--out-dir", str(out)])
        assert rc == 0
        rep = json.loads((out / "pool.json").read_text())
        assert rep["mu_hat"] == pytest.approx(2.0, abs=1e-12)
        assert rep["n_estimates"] == 3
        assert "pooled effect 2" in capsys.readouterr().out
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "pool"
        assert manifest["seed"] == 0

    def test_rerun_byte_identical_outside_manifest(self, three_row_csv, tmp_path):
        out = tmp_path / "out"
        main(["pool", "--input", str(three_row_csv), "--out-dir", str(out)])
        first = (out / "pool.json").read_bytes()
        first_manifest = json.loads((out / "manifest.json").read_text())
        main(["pool", "--input", str(three_row_csv), "--out-dir", str(out)])
        assert (out / "pool.json").read_bytes() == first
        second_manifest = json.loads((out / "manifest.json").read_text())
        # only the wall-clock fields may change between reruns
        for key in ("started_at", "finished_at"):
            first_manifest.pop(key)
            second_manifest.pop(key)
        assert first_manifest == second_manifest


class TestFunnel:
    def test_writes_band(self, three_row_csv, tmp_path):
        out = tmp_path / "out"
        rc = main(["funnel", "--input", str(three_row_csv), "--out-dir", str(out)])
        assert rc == 0
        lines = (out / "funnel.csv").read_text().strip().split("\n")
        assert lines[0] == "kind,theta,se"
        kinds = {line.split(",")[0] for line in lines[1:]}
        assert kinds == {"point", "band_low", "band_high"}


class TestOutlierFilter:
    @pytest.fixture
    def outlier_csv(self, tmp_path):
        thetas = [0.10, 0.12, 0.11, 0.09, 0.10, 0.11, 9.0]
        ses = [0.05, 0.06, 0.05, 0.06, 0.05, 0.06, 0.05]
        return write_fixture_csv(tmp_path / "out.csv", thetas, ses)

    def test_filter_applied_by_default(self, outlier_csv, tmp_path, capsys):
        out = tmp_path / "a"
        main(["pool", "--input", str(outlier_csv), "--out-dir", str(out)])
        assert json.loads((out / "pool.json").read_text())["n_estimates"] == 6
        assert "outlier filter removed 1" in capsys.readouterr().err

    def test_no_outlier_filter_flag(self, outlier_csv, tmp_path):
        out = tmp_path / "b"
        main(["pool", "--input", str(outlier_csv), "--out-dir", str(out),
              "--no-outlier-filter"])
        assert json.loads((out / "pool.json").read_text())["n_estimates"] == 7


class TestSimulate:
    def test_seeded_reruns_byte_identical(self, tmp_path):
        out = tmp_path / "sim"
        rc = main(["simulate", "--seed", "7", "--out-dir", str(out)])
        assert rc == 0
        data1 = (out / "simulated.csv").read_bytes()
        cfg1 = (out / "sim_config.json").read_bytes()
        rc = main(["simulate", "--seed", "7", "--out-dir", str(out)])
        assert rc == 0
        assert (out / "simulated.csv").read_bytes() == data1
        assert (out / "sim_config.json").read_bytes() == cfg1

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--seed", "1", "--out-dir", str(a)])
        main(["simulate", "--seed", "2", "--out-dir", str(b)])
        assert (a / "simulated.csv").read_bytes() != (b / "simulated.csv").read_bytes()

    def test_config_file_honoured(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "n_studies": 5, "estimates_per_study": [3, 3],
        }))
        out = tmp_path / "sim"
        rc = main(["simulate", "--config", str(cfg_path), "--out-dir", str(out)])
        assert rc == 0
        lines = (out / "simulated.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 15
        assert json.loads((out / "sim_config.json").read_text())["n_studies"] == 5

    def test_bad_config_exits_one(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"n_studies": 5, "bogus_key": 1}))
        rc = main(["simulate", "--config", str(cfg_path),
                   "--out-dir", str(tmp_path / "o")])
        assert rc == 1
        assert "bogus_key" in capsys.readouterr().err


class TestMetareg:
    def test_fit_with_moderators(self, moderated_csv, tmp_path):
        csv, schema = moderated_csv
        out = tmp_path / "out"
        rc = main(["metareg", "--input", str(csv), "--schema", str(schema),
                   "--out-dir", str(out), "--moderators", "x1"])
        assert rc == 0
        lines = (out / "metareg.csv").read_text().strip().split("\n")
        assert lines[0] == "name,estimate,se,z,p_value,stars"
        assert lines[1].startswith("intercept,")
        assert lines[2].startswith("x1,")
        rep = json.loads((out / "metareg.json").read_text())
        assert rep["converged"] is True

    def test_collinear_design_exits_one(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        x = rng.normal(0.0, 1.0, 12)
        csv = write_fixture_csv(tmp_path / "c.csv",
                                rng.normal(0.0, 1.0, 12),
                                rng.uniform(0.05, 0.2, 12),
                                moderators={"a": x, "b": 2.0 * x})
        schema = tmp_path / "schema.json"
        schema.write_text(json.dumps([
            {"name": "a", "kind": "continuous"},
            {"name": "b", "kind": "continuous"},
        ]))
        rc = main(["metareg", "--input", str(csv), "--schema", str(schema),
                   "--out-dir", str(tmp_path / "o"), "--moderators", "a,b"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "rank deficient" in err
        assert "a" in err or "b" in err


class TestScreen:
    def test_writes_rows(self, moderated_csv, tmp_path):
        csv, schema = moderated_csv
        out = tmp_path / "out"
        rc = main(["screen", "--input", str(csv), "--schema", str(schema),
                   "--out-dir", str(out), "--moderators", "x1,x2"])
        assert rc == 0
        lines = (out / "screen.csv").read_text().strip().split("\n")
        assert lines[0] == "moderator,pip,post_mean,forced,included"
        names = [line.split(",")[0] for line in lines[1:]]
        assert names == ["se", "x1", "x2"]
        by_name = {line.split(",")[0]: line.split(",") for line in lines[1:]}
        assert by_name["se"][3] == "yes"
        assert float(by_name["x1"][1]) > 0.9

    def test_requires_candidates(self, moderated_csv, tmp_path, capsys):
        csv, schema = moderated_csv
        rc = main(["screen", "--input", str(csv), "--schema", str(schema),
                   "--out-dir", str(tmp_path / "o")])
        assert rc == 1
        assert "at least one candidate" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_flag_exits_one(self, three_row_csv, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["pool", "--input", str(three_row_csv),
                  "--out-dir", str(tmp_path), "--wat"])
        assert exc.value.code == 1

    def test_missing_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_missing_input_file_exits_one(self, tmp_path, capsys):
        rc = main(["pool", "--input", str(tmp_path / "nope.csv"),
                   "--out-dir", str(tmp_path)])
        assert rc == 1
        assert capsys.readouterr().err


class TestBias:
    def test_reduced_settings_write_artifacts(self, bias_csv, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["bias", "--input", str(bias_csv), "--out-dir", str(out),
                   "--chains", "2", "--iters", "400", "--seed", "1"])
        assert rc == 0
        rep = json.loads((out / "ensemble.json").read_text())
        assert len(rep["models"]) == 20
        assert rep["seed"] == 1
        assert 0.0 <= rep["components"]["bias"]["posterior_prob"] <= 1.0
        assert set(rep["averaged"]) == {"mu", "tau", "omega2", "omega3",
                                        "beta_pet", "beta_peese"}
        curve = (out / "weightfn.csv").read_text().strip().split("\n")
        assert curve[0] == "p,mean,ci_low,ci_high"
        assert len(curve) == 1 + 201
        assert "P(bias)" in capsys.readouterr().out
        assert json.loads((out / "manifest.json").read_text())["command"] == "bias"


class TestFullPipeline:
    def test_all_artifacts_written(self, moderated_csv, tmp_path, capsys):
        csv, schema = moderated_csv
        out = tmp_path / "out"
        rc = main(["full", "--input", str(csv), "--schema", str(schema),
                   "--out-dir", str(out), "--chains", "2", "--iters", "300",
                   "--moderators", "x1,x2", "--seed", "2"])
        assert rc == 0
        for name in ("describe.csv", "pool.json", "funnel.csv",
                     "ensemble.json", "weightfn.csv", "screen.csv",
                     "metareg.csv", "metareg.json", "manifest.json"):
            assert (out / name).exists(), name
        # the screen feeds the regression design: x1 carries the signal
        metareg_names = [line.split(",")[0] for line in
                         (out / "metareg.csv").read_text().strip().split("\n")[1:]]
        assert "x1" in metareg_names
        assert "full pipeline complete" in capsys.readouterr().out
