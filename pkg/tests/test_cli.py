import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from bgmm.cli import main
from bgmm.data_io import (
    InputError,
    read_dataset_csv,
    sidecar_path,
    write_dataset_csv,
    write_rows_csv,
)
from bgmm.moments import Dataset

REPORT_KEYS = {"post_mean", "post_sd", "iqr", "failed", "failure_reason", "accept_rate",
               "n_adaptations", "wall_time_s", "config_echo"}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def dataset_csv(tmp_path):
    cfg = _write(tmp_path / "dgp.json", {"N": 200, "K": 8, "seed": 2})
    out = tmp_path / "data.csv"
    assert main(["dgp", "--config", cfg, "--out", str(out)]) == 0
    return out


class TestDataIO:
    def test_round_trip_exact(self, tmp_path, rng):
        d = Dataset(rng.normal(size=7), rng.normal(size=7), rng.normal(size=(7, 3)))
        write_dataset_csv(d, tmp_path / "a.csv")
        back = read_dataset_csv(tmp_path / "a.csv")
        assert np.array_equal(back.Z, d.Z) and np.array_equal(back.y, d.y)

    def test_column_order_free(self, tmp_path):
        (tmp_path / "b.csv").write_text("z2,x,z1,y\n1,2,3,4\n5,6,7,8\n")
        d = read_dataset_csv(tmp_path / "b.csv")
        np.testing.assert_array_equal(d.Z, [[3, 1], [7, 5]])
        np.testing.assert_array_equal(d.y, [4, 8])

    @pytest.mark.parametrize("text, needle", [
        ("x,z1\n1,2\n3,4\n", "'y'"),
        ("y,z1\n1,2\n3,4\n", "'x'"),
        ("y,x\n1,2\n3,4\n", "z1"),
        ("y,x,z1,z3\n1,2,3,4\n5,6,7,8\n", "gaps"),
        ("y,x,z1\n1,2,a\n5,6,7\n", "non-numeric"),
        ("", "empty"),
    ])
    def test_schema_errors(self, tmp_path, text, needle):
        (tmp_path / "c.csv").write_text(text)
        with pytest.raises(InputError, match=needle):
            read_dataset_csv(tmp_path / "c.csv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_dataset_csv(tmp_path / "nope.csv")

    def test_missing_values_blank(self, tmp_path):
        write_rows_csv(tmp_path / "r.csv", ["a", "b", "c"], [[1, None, float("nan")]])
        assert (tmp_path / "r.csv").read_text().splitlines()[1] == "1,,"

    def test_sidecar_name(self):
        assert sidecar_path("/x/data.csv").name == "data.truth.json"


class TestDgpCommand:
    def test_writes_data_and_truth(self, dataset_csv):
        d = read_dataset_csv(dataset_csv)
        assert d.n_obs == 200 and d.n_instruments == 8
        truth = json.loads(sidecar_path(dataset_csv).read_text())
        assert truth["gamma_true"] == 0.5 and truth["sigma_x2"] > 0 and truth["sigma_y2"] > 0

    def test_seed_override(self, tmp_path):
        cfg = _write(tmp_path / "dgp.json", {"K": 3})
        main(["dgp", "--config", cfg, "--out", str(tmp_path / "a.csv"), "--seed", "1"])
        main(["dgp", "--config", cfg, "--out", str(tmp_path / "b.csv"), "--seed", "2"])
        assert (tmp_path / "a.csv").read_text() != (tmp_path / "b.csv").read_text()

    def test_bad_config(self, tmp_path, capsys):
        cfg = _write(tmp_path / "dgp.json", {"K": 0})
        assert main(["dgp", "--config", cfg, "--out", str(tmp_path / "a.csv")]) == 2
        assert "input error" in capsys.readouterr().err


class TestEstimateCommand:
    def test_report(self, dataset_csv, tmp_path):
        out = tmp_path / "rep.json"
        trace = tmp_path / "trace.csv"
        code = main(["estimate", "--data", str(dataset_csv), "--perms", "3", "--draws", "3000",
                     "--warmup", "1000", "--trace", str(trace), "--out", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        assert set(rep) == REPORT_KEYS
        assert abs(rep["post_mean"] - 0.5) < 3 * rep["post_sd"]
        assert rep["config_echo"]["weighting"]["n_permutations"] == 3
        assert len(trace.read_text().splitlines()) == 3001

    def test_oracle_reads_sidecar(self, dataset_csv, tmp_path):
        out = tmp_path / "rep.json"
        code = main(["estimate", "--data", str(dataset_csv), "--estimator", "standard",
                     "--strategy", "oracle", "--draws", "2000", "--warmup", "500",
                     "--out", str(out)])
        assert code == 0 and json.loads(out.read_text())["failed"] is False

    def test_oracle_without_truth(self, tmp_path, capsys):
        d = Dataset(np.arange(5.0), np.arange(5.0) + 1, np.ones((5, 1)))
        write_dataset_csv(d, tmp_path / "d.csv")
        code = main(["estimate", "--data", str(tmp_path / "d.csv"), "--strategy", "oracle",
                     "--out", str(tmp_path / "r.json")])
        assert code == 2 and "sidecar" in capsys.readouterr().err

    def test_missing_y_column(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("x,z1\n1,2\n3,4\n")
        code = main(["estimate", "--data", str(tmp_path / "bad.csv"), "--out",
                     str(tmp_path / "r.json")])
        assert code == 2 and "'y'" in capsys.readouterr().err

    def test_chain_failure_exit_code(self, tmp_path):
        cfg = _write(tmp_path / "dgp.json", {"N": 30, "K": 40})
        main(["dgp", "--config", cfg, "--out", str(tmp_path / "d.csv")])
        out = tmp_path / "r.json"
        code = main(["estimate", "--data", str(tmp_path / "d.csv"), "--estimator", "standard",
                     "--strategy", "continuous", "--draws", "200", "--warmup", "100",
                     "--out", str(out)])
        rep = json.loads(out.read_text())
        assert code == 3 and rep["failed"] and rep["failure_reason"] == "numerical"

    def test_invalid_split(self, dataset_csv, tmp_path):
        code = main(["estimate", "--data", str(dataset_csv), "--n-star", "199", "--out",
                     str(tmp_path / "r.json")])
        assert code == 2


class TestSimulateCommand:
    def _config(self, tmp_path):
        return _write(tmp_path / "exp.json", {
            "defaults": {"dgp": {"K": 6}, "j_total": 600, "j_warmup": 200, "replications": 3,
                         "weighting": {"kind": "ner", "n_permutations": 2}},
            "experiments": [{"strategy": "random"},
                            {"strategy": "oracle", "weighting": {"kind": "standard"}}],
        })

    def test_results_csv(self, tmp_path, capsys):
        out = tmp_path / "res.csv"
        assert main(["simulate", "--config", self._config(tmp_path), "--out", str(out),
                     "--quiet"]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["K", "estimator", "strategy", "fail", "total", "mse", "mae",
                           "mean_time_s"]
        assert [r[:3] for r in rows[1:]] == [["6", "NER", "Random"], ["6", "Standard", "Oracle"]]
        assert "Oracle" in capsys.readouterr().out

    def test_parallel_matches_serial(self, tmp_path):
        cfg = self._config(tmp_path)
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "a.csv"), "--quiet"])
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "b.csv"), "--quiet",
              "--parallelism", "2"])
        a = [r[:7] for r in csv.reader((tmp_path / "a.csv").open())]
        b = [r[:7] for r in csv.reader((tmp_path / "b.csv").open())]
        assert a == b

    def test_single_spec_config(self, tmp_path):
        cfg = _write(tmp_path / "one.json", {"dgp": {"K": 4}, "strategy": "random",
                                             "weighting": {"n_permutations": 1},
                                             "j_total": 300, "j_warmup": 100, "replications": 1})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o.csv"),
                     "--quiet"]) == 0

    def test_invalid_config(self, tmp_path):
        cfg = _write(tmp_path / "bad.json", {"strategy": "nope"})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 2


class TestProfileCommand:
    def test_profile_csv(self, tmp_path):
        cfg = _write(tmp_path / "dgp.json", {"N": 60, "K": 5, "seed": 1})
        out = tmp_path / "p.csv"
        assert main(["ner-profile", "--config", cfg, "--out", str(out), "--perms", "4",
                     "--grid", "15", "30", "45"]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["n_star", "median_g", "p05_g", "p95_g"]
        assert [r[0] for r in rows[1:]] == ["15", "30", "45"]


@pytest.mark.skipif(shutil.which("bgmm") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["bgmm", "--help"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    for cmd in ("simulate", "dgp", "estimate", "ner-profile"):
        assert cmd in res.stdout
