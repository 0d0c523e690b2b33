import hashlib
import json
import subprocess
import sys

import pytest

from gaitssc.cli import default_config, main, parse_subspaces, read_config
from gaitssc.errors import ConfigError
from gaitssc.ingest import load_dataset, write_dataset

SMALL = """
[synth]
n_case = 3
n_control = 3
cycles_per_subject = 4,5
[run]
seed = 7
"""


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    assert main(["synth", "--config", str(cfg), "--output", str(root / "data")]) == 0
    return root / "data" / "dataset.csv"


class TestConfig:
    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[solver]\nlambda = 0.1\nfoo = 1\n")
        with pytest.raises(ConfigError, match="foo"):
            read_config(p)

    def test_unknown_section(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[extras]\na = 1\n")
        with pytest.raises(ConfigError):
            read_config(p)

    def test_values_and_defaults(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[solver]\nlambda = 0.1\nbandwidth = median\n[evaluation]\npaper_mode = yes\n")
        cfg = read_config(p)
        assert cfg["solver"]["lambda"] == 0.1 and cfg["solver"]["bandwidth"] is None
        assert cfg["evaluation"]["paper_mode"] is True
        assert cfg["solver"]["rho"] == default_config()["solver"]["rho"]

    def test_subspaces(self):
        assert parse_subspaces("1-3:1; 4,5,6:2", 6) == (((1, 2, 3), 1), ((4, 5, 6), 2))
        assert parse_subspaces("", 18)[1] == (tuple(range(10, 19)), 3)


class TestExitCodes:
    def test_bad_partition(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text("[synth]\nsubspaces = 1-9:3;9-18:3\n")
        assert main(["synth", "--config", str(p), "--output", str(tmp_path / "o")]) == 2
        assert "duplicated: [9]" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, dataset):
        p = tmp_path / "bad.ini"
        p.write_text("[svm]\ngamma = 2\n")
        assert main(["solve", "--config", str(p), "--input", str(dataset)]) == 2

    def test_bad_value(self, tmp_path, dataset):
        p = tmp_path / "bad.ini"
        p.write_text("[solver]\nlambda = -1\n")
        assert main(["solve", "--config", str(p), "--input", str(dataset), "--output", str(tmp_path)]) == 2

    def test_usage(self):
        assert main(["frobnicate"]) == 2
        assert main([]) == 2

    def test_bad_features(self, tmp_path, dataset):
        assert main(["evaluate", "--input", str(dataset), "--features", "wavelet", "--output", str(tmp_path)]) == 2

    def test_runtime_failure(self, tmp_path):
        assert main(["solve", "--input", str(tmp_path / "absent.csv"), "--output", str(tmp_path)]) == 1

    def test_all_cycles_fail(self, tmp_path, dataset, monkeypatch):
        import gaitssc.cli as cli
        from gaitssc.errors import SolverError

        monkeypatch.setattr(cli, "solve_many", lambda ys, *a, **k: [SolverError("boom") for _ in ys])
        assert main(["solve", "--input", str(dataset), "--output", str(tmp_path)]) == 1


class TestCommands:
    def test_default_synth(self, tmp_path):
        assert main(["synth", "--output", str(tmp_path)]) == 0
        raw = load_dataset(tmp_path / "dataset.csv")
        subjects = {r.subject_id for r in raw}
        assert len(subjects) == 47
        assert 36 <= len(raw) / 47 <= 44
        echo = json.loads((tmp_path / "config.json").read_text())
        assert echo["synth"]["n_case"] == 24 and echo["run"]["seed"] == 0

    def test_synth_determinism(self, tmp_path):
        cfg = tmp_path / "s.ini"
        cfg.write_text(SMALL)
        for name in ("a", "b"):
            assert main(["synth", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
        assert _digest(tmp_path / "a" / "dataset.csv") == _digest(tmp_path / "b" / "dataset.csv")
        assert _digest(tmp_path / "a" / "truth.json") == _digest(tmp_path / "b" / "truth.json")

    def test_solve(self, tmp_path, dataset):
        raw = load_dataset(dataset)[:10]
        ten = write_dataset(raw, tmp_path / "ten.csv")
        out = tmp_path / "solve"
        assert main(["solve", "--input", str(ten), "--output", str(out)]) == 0
        assert len(list((out / "coefficients").glob("*_C.csv"))) == 10
        summary = json.loads((out / "solve_summary.json").read_text())
        assert summary["cycles"] == 10 and summary["mean_r2"] <= 1
        assert len((out / "solve_log.csv").read_text().splitlines()) == 11

    def test_preprocess(self, tmp_path, dataset):
        assert main(["preprocess", "--input", str(dataset), "--output", str(tmp_path)]) == 0
        cycles = load_dataset(tmp_path / "preprocessed.csv")
        assert all(c.length == 84 for c in cycles)

    def test_features_cm2(self, tmp_path, dataset):
        assert main(["features", "--input", str(dataset), "--features", "cm2", "--output", str(tmp_path)]) == 0
        assert (tmp_path / "clusters_ssc-cm2_I.json").exists()
        header = (tmp_path / "features_ssc-cm2_I.csv").read_text().splitlines()[0]
        assert header.startswith("subject_id,cycle_index,cohort,cs[")

    def test_train(self, tmp_path, dataset):
        assert main(["train", "--input", str(dataset), "--features", "cm1:1", "--output", str(tmp_path)]) == 0
        model = json.loads((tmp_path / "model_ssc-cm1_1.json").read_text())
        assert len(model["w"]) == 17
        assert len((tmp_path / "weights_ssc-cm1_1.csv").read_text().splitlines()) == 6

    def test_evaluate_table_and_rerun(self, tmp_path, dataset):
        args = ["evaluate", "--input", str(dataset), "--features", "stat,corr,pca,cm1:1,kssc-cm1:1",
                "--run-tag", "r"]
        assert main(args + ["--output", str(tmp_path / "a")]) == 0
        assert main(args + ["--output", str(tmp_path / "b"), "--jobs", "2"]) == 0
        table = (tmp_path / "a" / "comparison_r.txt").read_text().splitlines()
        assert len(table) == 5 and len(table[0].split("|")) == 6
        assert len(list((tmp_path / "a").glob("report_*_r.json"))) == 5
        for f in sorted((tmp_path / "a").glob("*_r.*")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name

    def test_evaluate_cm2_writes_clusters(self, tmp_path, dataset):
        assert main(["evaluate", "--input", str(dataset), "--features", "cm2", "--output", str(tmp_path),
                     "--run-tag", "x"]) == 0
        assert (tmp_path / "clusters_ssc-cm2_I_x.json").exists()

    def test_report(self, tmp_path, dataset, capsys):
        assert main(["evaluate", "--input", str(dataset), "--features", "stat", "--output", str(tmp_path),
                     "--run-tag", "q"]) == 0
        capsys.readouterr()
        assert main(["report", str(tmp_path / "report_statistical_q.json")]) == 0
        assert "Testing Hit Rate" in capsys.readouterr().out

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "gaitssc", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "evaluate" in proc.stdout
