"""CLI tests: artifact layout, exit codes, config precedence, manifest
replay, and the ablation/sweep tables."""

import json

import numpy as np
import pytest

from stmfg.autodiff import Tensor
from stmfg.cli import main
from stmfg.data import load_dataset

FAST = ["--epochs", "2", "--dims", "8,4", "--decoder-hidden", "8",
        "--min-spots", "1", "--restarts", "3"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--out", str(out), "--n-side", "8", "--domains", "2",
                 "--genes", "15", "--seed", "3", "--dropout", "0.2"])
    assert code == 0
    return out


def data_flags(synth_dir, labels=True):
    flags = ["--expression", str(synth_dir / "expression.csv"),
             "--coords", str(synth_dir / "coords.csv")]
    if labels:
        flags += ["--labels", str(synth_dir / "labels.csv")]
    return flags


class TestSynth:
    def test_files_written_and_loadable(self, synth_dir):
        for name in ("expression.csv", "coords.csv", "labels.csv", "manifest.json"):
            assert (synth_dir / name).exists()
        ds = load_dataset(synth_dir / "expression.csv", synth_dir / "coords.csv",
                          synth_dir / "labels.csv")
        assert ds.n_spots == 64
        assert ds.n_domains == 2


class TestRun:
    def test_artifacts_and_single_epoch_log(self, synth_dir, tmp_path):
        out = tmp_path / "run"
        code = main(["run", *data_flags(synth_dir), "--out", str(out),
                     *FAST, "--epochs", "1"])
        assert code == 0
        for name in ("manifest.json", "loss_log.csv", "embeddings.csv",
                     "labels.csv", "metrics.csv", "params_final.txt"):
            assert (out / name).exists()
        log_lines = (out / "loss_log.csv").read_text().splitlines()
        assert len(log_lines) == 2  # header + one epoch
        metrics = (out / "metrics.csv").read_text()
        assert ",ari," in metrics and ",nmi," in metrics

    def test_without_labels_no_score_rows(self, synth_dir, tmp_path):
        out = tmp_path / "run"
        code = main(["run", *data_flags(synth_dir, labels=False), "--out", str(out),
                     *FAST, "--clusters", "2"])
        assert code == 0
        metrics = (out / "metrics.csv").read_text()
        assert ",k," in metrics
        assert ",ari," not in metrics and ",nmi," not in metrics

    def test_clusters_required_without_labels(self, synth_dir, tmp_path):
        code = main(["run", *data_flags(synth_dir, labels=False),
                     "--out", str(tmp_path / "x"), *FAST])
        assert code == 3

    def test_malformed_expression_is_data_error(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("spot_id,g1\ns1,not-a-number\n")
        code = main(["run", "--expression", str(bad),
                     "--coords", str(synth_dir / "coords.csv"),
                     "--out", str(tmp_path / "x"), *FAST, "--clusters", "2"])
        assert code == 2

    def test_numeric_abort_exit_code_and_manifest(self, synth_dir, tmp_path, monkeypatch):
        def poisoned(*args, **kwargs):
            t = Tensor([[1.0]])
            t.data[0, 0] = np.nan
            return t

        monkeypatch.setattr("stmfg.training.spatial_reg_loss", poisoned)
        out = tmp_path / "run"
        code = main(["run", *data_flags(synth_dir), "--out", str(out), *FAST])
        assert code == 4
        # the manifest must have been written before training started
        assert (out / "manifest.json").exists()

    def test_manifest_replay_reproduces_outputs(self, synth_dir, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", *data_flags(synth_dir), "--out", str(out_a), *FAST]) == 0
        assert main(["run", "--from-manifest", str(out_a / "manifest.json"),
                     "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
        assert (out_a / "labels.csv").read_bytes() == (out_b / "labels.csv").read_bytes()
        assert (out_a / "embeddings.csv").read_bytes() == (out_b / "embeddings.csv").read_bytes()

    def test_config_file_with_flag_precedence(self, synth_dir, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"epochs": 3, "hidden_dims": [8, 4],
                                        "decoder_hidden": 8, "min_spots": 1,
                                        "restarts": 2}))
        out = tmp_path / "run"
        code = main(["run", *data_flags(synth_dir), "--out", str(out),
                     "--config", str(cfg_file), "--epochs", "1"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["train"]["epochs"] == 1  # flag wins
        assert manifest["train"]["hidden_dims"] == [8, 4]  # from file

    def test_unknown_config_key_is_contract_error(self, synth_dir, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"learning_rate": 0.1}))
        code = main(["run", *data_flags(synth_dir), "--out", str(tmp_path / "x"),
                     "--config", str(cfg_file), *FAST])
        assert code == 3


class TestBenchmarkScaleRun:
    @pytest.mark.slow
    def test_900_spot_run_under_five_minutes(self, tmp_path):
        import time

        data_dir = tmp_path / "data"
        assert main(["synth", "--out", str(data_dir)]) == 0  # 30x30 defaults
        out = tmp_path / "run"
        started = time.perf_counter()
        code = main(["run",
                     "--expression", str(data_dir / "expression.csv"),
                     "--coords", str(data_dir / "coords.csv"),
                     "--labels", str(data_dir / "labels.csv"),
                     "--out", str(out)])
        elapsed = time.perf_counter() - started
        assert code == 0
        assert elapsed < 300.0
        assert ",ari," in (out / "metrics.csv").read_text()


class TestAblate:
    def test_table_shape(self, synth_dir, tmp_path):
        out = tmp_path / "ablate"
        code = main(["ablate", *data_flags(synth_dir), "--out", str(out),
                     "--seeds", "0,1", *FAST])
        assert code == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[0] == "variant,seed,ari,nmi"
        variants = ("full", "no_mf", "no_cl", "no_reg", "no_zinb")
        assert len(lines) == 1 + len(variants) * 2 + len(variants)
        for v in variants:
            assert any(line.startswith(f"{v},mean,") for line in lines)

    def test_labels_required(self, synth_dir, tmp_path):
        code = main(["ablate", *data_flags(synth_dir, labels=False),
                     "--out", str(tmp_path / "x"), "--seeds", "0",
                     *FAST, "--clusters", "2"])
        assert code == 3


class TestSweep:
    def test_grid_rows(self, synth_dir, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep", *data_flags(synth_dir), "--out", str(out),
                     "--seeds", "0", "--lambda-grid", "0.001,0.01",
                     "--tau-grid", "0.5,1", *FAST])
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "alpha,lambda,gamma,tau,seed,ari,nmi"
        assert len(lines) == 1 + 2 * 2
