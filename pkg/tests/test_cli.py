import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from scatterfold.cli import main, stage_seed
from scatterfold.io import load_dataset, read_matrix_csv

FAST = {
    "scattering": {"self_loop_isolated": True},
    "gsae": {"iterations": 40, "latent_dim": 4, "hidden_dims": [32, 16], "batch_size": 20,
             "lr": 1e-3, "beta": 0.01, "standardize_meta": True, "log_every": 10},
    "sin": {"hidden_dims": [32, 16], "rank": 4, "batch_size": 20, "pretrain_iterations": 40,
            "refine_iterations": 5, "window": 20},
    "eval": {"k": [5, 10], "mds_max": 50},
}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert main(["gen-toy", "--n", "8", "--steps", "99", "--seed", "3", "--out", str(d / "toy.jsonl")]) == 0
    cfg = d / "fast.json"
    cfg.write_text(json.dumps(FAST))
    return d / "toy.jsonl", cfg


class TestData:
    def test_gen_toy_defaults(self, tmp_path):
        out = tmp_path / "t.jsonl"
        assert main(["gen-toy", "--out", str(out)]) == 0
        d = load_dataset(out)
        assert len(d) == 10000 and d.n == 10 and d.meta_name == "step_index"
        sidecar = json.loads((tmp_path / "t.jsonl.config.json").read_text())
        assert sidecar["toy"] == {"n": 10, "p": 0.5, "steps": 9999}

    def test_gen_toy_steps(self, tmp_path):
        assert main(["gen-toy", "--steps", "100", "--out", str(tmp_path / "t.jsonl")]) == 0
        assert len(load_dataset(tmp_path / "t.jsonl")) == 101

    def test_missing_out_is_usage_error(self, capsys):
        assert main(["gen-toy"]) == 2

    def test_console_script_exit_code(self):
        r = subprocess.run([sys.executable, "-m", "scatterfold.cli", "gen-toy"], capture_output=True, text=True)
        assert r.returncode == 2 and "--out" in r.stderr

    def test_ingest(self, tmp_path):
        src = tmp_path / "s.txt"
        src.write_text("(((...))) -1.5\n((.....)) -0.5\n......... 0.0\n")
        assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "d.jsonl")]) == 0
        d = load_dataset(tmp_path / "d.jsonl")
        assert d.n == 9 and len(d) == 3 and d.meta_name == "energy"

    def test_ingest_malformed(self, tmp_path, capsys):
        src = tmp_path / "s.txt"
        src.write_text("((...)). -1.0\n((...)). −1.2\n")
        assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "d.jsonl")]) == 1
        err = capsys.readouterr().err
        assert "line 2" in err and "column 10" in err

    def test_gen_folds(self, tmp_path):
        out = tmp_path / "f.jsonl"
        assert main(["gen-folds", "--sequence", "GGGAAACCC", "--out", str(out)]) == 0
        d = load_dataset(out)
        assert d.meta_name == "energy" and min(d.meta) < 0


class TestConfig:
    def test_unknown_key(self, tmp_path, toy):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"gsae": {"learning_rate": 1.0}}))
        assert main(["scatter", "--dataset", str(toy[0]), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_section(self, tmp_path, toy):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"plotting": {}}))
        assert main(["scatter", "--dataset", str(toy[0]), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_invalid_value(self, tmp_path, toy):
        assert main(["pipeline", "--dataset", str(toy[0]), "--config", str(toy[1]), "--alpha", "-1",
                     "--out", str(tmp_path)]) == 2

    def test_flag_overrides_file(self, tmp_path, toy):
        out = tmp_path / "s"
        assert main(["scatter", "--dataset", str(toy[0]), "--config", str(toy[1]), "--j-max", "2",
                     "--out", str(out)]) == 0
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["scattering"]["j_max"] == 2 and cfg["scattering"]["self_loop_isolated"] is True
        assert json.loads((out / "manifest.json").read_text())["J"] == 2

    def test_isolated_nodes_need_flag(self, tmp_path, toy, capsys):
        # sparse toy graphs have isolated nodes; the default policy refuses them
        ds = tmp_path / "sparse.jsonl"
        assert main(["gen-toy", "--n", "8", "--p", "0.1", "--steps", "5", "--out", str(ds)]) == 0
        assert main(["scatter", "--dataset", str(ds), "--out", str(tmp_path / "s")]) == 1
        err = capsys.readouterr().err
        assert "stage=scatter" in err and "--self-loop-isolated" in err

    def test_stage_seeds_differ(self):
        seeds = {stage_seed(0, s) for s in ("data", "split", "gsae", "sin", "eval", "interpolate")}
        assert len(seeds) == 6 and stage_seed(0, "gsae") == stage_seed(0, "gsae")


class TestPipeline:
    @pytest.fixture(scope="class")
    def runs(self, toy, tmp_path_factory):
        root = tmp_path_factory.mktemp("runs")
        base = ["pipeline", "--dataset", str(toy[0]), "--config", str(toy[1]), "--out", str(root),
                "--sin", "--trajectory-pairs", "2"]
        assert main(base + ["--run-name", "a"]) == 0
        assert main(base + ["--run-name", "b"]) == 0
        assert main(["pipeline", "--dataset", str(toy[0]), "--config", str(toy[1]), "--out", str(root),
                     "--alpha", "0", "--run-name", "ae"]) == 0
        return root

    def test_smoothness_table(self, runs):
        rows = read_csv(runs / "a" / "smoothness.csv")
        assert list(rows[0]) == ["method", "signal", "k", "dirichlet", "smoothness_index"]
        assert {r["method"] for r in rows} == {"gsae", "scattering", "wl", "ged-mds"}
        assert {r["k"] for r in rows} == {"5", "10"}
        assert all(float(r["smoothness_index"]) >= 0 for r in rows)

    def test_resolved_config_written(self, runs):
        cfg = json.loads((runs / "a" / "config.json").read_text())
        assert cfg["gsae"]["iterations"] == 40 and cfg["pipeline"]["sin"] is True

    def test_byte_identical_rerun(self, runs):
        a, b = runs / "a", runs / "b"
        names = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".jsonl"))
        assert "embedding.csv" in names and "trajectories.csv" in names
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_alpha_zero_pred_na(self, runs):
        hist = read_csv(runs / "ae" / "history.csv")
        assert all(r["pred"] == "n/a" for r in hist)
        report = read_csv(runs / "ae" / "gsae_report.csv")
        assert all(r["pred_mse"] == "n/a" for r in report)
        report = read_csv(runs / "a" / "gsae_report.csv")
        assert all(float(r["pred_mse"]) >= 0 for r in report)

    def test_sin_report(self, runs):
        rows = read_csv(runs / "a" / "sin_report.csv")
        assert [r["split"] for r in rows] == ["train", "test"]
        assert all(0 <= float(r["edge_accuracy"]) <= 1 and "±" in r["rescatter_mse_e3"] for r in rows)

    def test_trajectories(self, runs):
        rows = read_csv(runs / "a" / "trajectories.csv")
        assert len(rows) == 2
        assert all(r["monotone_within_slack"] in ("0", "1") for r in rows)


class TestSubcommands:
    @pytest.fixture(scope="class")
    def work(self, toy, tmp_path_factory):
        d = tmp_path_factory.mktemp("work")
        ds, cfg = map(str, toy)
        assert main(["scatter", "--dataset", ds, "--config", cfg, "--out", str(d / "sc")]) == 0
        assert main(["train-gsae", "--dataset", ds, "--scattering", str(d / "sc"), "--config", cfg,
                     "--out", str(d / "g")]) == 0
        assert main(["train-sin", "--dataset", ds, "--scattering", str(d / "sc"), "--config", cfg,
                     "--out", str(d / "s")]) == 0
        return d, ds, cfg

    def test_artifacts(self, work):
        d, _, _ = work
        for f in ("sc/scattering.csv", "sc/manifest.json", "g/gsae.json", "g/history.csv", "g/split.json",
                  "s/sin.json", "s/sin_report.csv"):
            assert (d / f).exists(), f

    def test_embed_and_pca(self, work):
        d, ds, _ = work
        assert main(["embed", "--gsae", str(d / "g" / "gsae.json"), "--scattering", str(d / "sc"),
                     "--dataset", ds, "--out", str(d / "e")]) == 0
        ids, z, header = read_matrix_csv(d / "e" / "embedding.csv")
        assert z.shape == (100, 5) and header[-1] == "meta" and ids.tolist() == list(range(100))
        assert main(["pca", "--input", str(d / "e" / "embedding.csv"), "--dims", "2", "--out", str(d / "p")]) == 0
        _, c, header = read_matrix_csv(d / "p" / "pca.csv")
        assert header == ["graph_id", "c0", "c1"] and c.shape == (100, 2)

    def test_eval_points(self, work):
        d, ds, cfg = work
        emb = d / "e2"
        assert main(["embed", "--gsae", str(d / "g" / "gsae.json"), "--scattering", str(d / "sc"),
                     "--out", str(emb)]) == 0
        assert main(["eval", "--dataset", ds, "--config", cfg, "--methods", "scattering",
                     "--scattering", str(d / "sc"), "--points", f"mine={emb / 'embedding.csv'}",
                     "--k", "5", "--out", str(d / "ev")]) == 0
        rows = read_csv(d / "ev" / "smoothness.csv")
        assert {r["method"] for r in rows} == {"scattering", "mine"} and {r["k"] for r in rows} == {"5"}

    def test_interpolate(self, work):
        d, _, _ = work
        assert main(["interpolate", "--gsae", str(d / "g" / "gsae.json"), "--sin", str(d / "s" / "sin.json"),
                     "--scattering", str(d / "sc"), "--start", "0", "--end", "99", "--trajectory-steps", "6",
                     "--out", str(d / "i")]) == 0
        traj = load_dataset(d / "i" / "trajectory.jsonl")
        assert len(traj) == 6 and traj.n == 8
        prof = read_csv(d / "i" / "profile.csv")
        assert [r["t"] for r in prof] == [str(t) for t in range(6)] and prof[-1]["ged_to_final"] == "0"
        assert np.all(np.array([int(r["ged_to_final"]) for r in prof]) >= 0)
