import json

import numpy as np
import pytest

from flowreject.cli import main
from flowreject.dataio import load_dataset
from flowreject.flow import LOG_2PI


def run(args):
    return main([str(a) for a in args])


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert run(["synth", "--preset", "default", "--seed", "3", "--out", out]) == 0
    return out


class TestSynth:
    def test_default_roundtrip(self, synth_dir):
        ds = load_dataset(synth_dir / "dataset.manifest.json")
        assert ds.n == 2900 and ds.d_in == 16
        assert (synth_dir / "resolved_config.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--seed", "7", "--out", out]) == 0
        assert ((a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes())

    def test_bin_format(self, tmp_path):
        out = tmp_path / "bin"
        assert run(["synth", "--format", "bin", "--out", out]) == 0
        assert load_dataset(out / "dataset.manifest.json").n == 2900

    def test_bad_preset_is_config_error(self, tmp_path):
        import subprocess, sys
        proc = subprocess.run(
            [sys.executable, "-m", "flowreject.cli", "synth", "--preset", "nope"],
            capture_output=True)
        assert proc.returncode == 2


class TestTrain:
    @pytest.fixture
    def small_data(self, tmp_path):
        out = tmp_path / "small"
        spec = {
            "d_in": 4, "n_tp": 150, "noise": 0.1,
            "tp_components": [{"mean": [0, 0], "cov": [[1, 0], [0, 1]], "weight": 1}],
            "fp_classes": [{"name": "far", "shape": "gaussian",
                            "shift": [7, 7], "scale": 0.5, "count": 60}],
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert run(["synth", "--spec", spec_path, "--seed", "1", "--out", out]) == 0
        return out / "dataset.manifest.json"

    def test_mle_writes_model_and_trace(self, small_data, tmp_path):
        out = tmp_path / "run"
        assert run(["train", "--dataset", small_data, "--variant", "mle",
                    "--epochs", "4", "--n-layers", "2", "--out", out]) == 0
        from flowreject.modelio import load_model
        enc, flow, meta = load_model(out / "model.frm")
        assert flow.d == 4
        trace = (out / "trace.csv").read_text().strip().splitlines()
        assert len(trace) == 1 + 4  # header + one row per epoch

    def test_frozen_without_fps_fails_cleanly(self, tmp_path):
        out = tmp_path / "tponly"
        spec = {
            "d_in": 4, "n_tp": 60, "noise": 0.1,
            "tp_components": [{"mean": [0, 0], "cov": [[1, 0], [0, 1]], "weight": 1}],
            "fp_classes": [],
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert run(["synth", "--spec", spec_path, "--out", out]) == 0
        rc = run(["train", "--dataset", out / "dataset.manifest.json",
                  "--variant", "frozen", "--epochs", "2",
                  "--out", tmp_path / "r"])
        assert rc == 2


class TestScore:
    def test_identity_model_scores_are_gaussian_nll(self, tmp_path):
        from flowreject.encoder import EncoderModel
        from flowreject.flow import FlowModel
        from flowreject.modelio import save_model
        from flowreject.dataio import Dataset, save_dataset

        enc = EncoderModel("identity", 2, 2)
        flow = FlowModel(2, n_layers=0)
        model = save_model(tmp_path / "m.frm", enc, flow)
        ds = Dataset(features=np.array([[0.0, 0.0], [1.0, 0.0]]),
                     labels=np.array([0, 0]), fp_class=[None, None],
                     class_names=[])
        manifest = save_dataset(ds, tmp_path, name="d")
        out = tmp_path / "scores.csv"
        assert run(["score", "--model", model, "--dataset", manifest,
                    "--out", out, "--threshold", "2.0"]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "id,log_likelihood,anomaly_score,reject"
        row0 = lines[1].split(",")
        assert float(row0[1]) == pytest.approx(-LOG_2PI)
        assert row0[3] == "0"  # 1.8379 < 2.0 -> kept
        row1 = lines[2].split(",")
        assert float(row1[2]) == pytest.approx(LOG_2PI + 0.5)
        assert row1[3] == "1"

    def test_dimension_mismatch_exit_code(self, tmp_path, synth_dir):
        from flowreject.encoder import EncoderModel
        from flowreject.flow import FlowModel
        from flowreject.modelio import save_model
        model = save_model(tmp_path / "m.frm", EncoderModel("identity", 2, 2),
                           FlowModel(2, n_layers=0))
        rc = run(["score", "--model", model,
                  "--dataset", synth_dir / "dataset.manifest.json"])
        assert rc == 3


class TestEval:
    def test_comparative_smoke_and_determinism(self, tmp_path):
        data = tmp_path / "data"
        spec = {
            "d_in": 4, "n_tp": 150, "noise": 0.1,
            "tp_components": [{"mean": [0, 0], "cov": [[1, 0], [0, 1]], "weight": 1}],
            "fp_classes": [{"name": "far", "shape": "gaussian",
                            "shift": [7, 7], "scale": 0.5, "count": 60}],
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert run(["synth", "--spec", spec_path, "--out", data]) == 0
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert run(["eval", "--dataset", data / "dataset.manifest.json",
                        "--experiment", "comparative",
                        "--scorers", "gaussian,kde",
                        "--folds", "3", "--out", out]) == 0
            outs.append(out)
        a = (outs[0] / "comparative_summary.csv").read_bytes()
        b = (outs[1] / "comparative_summary.csv").read_bytes()
        assert a == b
        doc = json.loads((outs[0] / "comparative.json").read_text())
        assert doc["schema_version"] == 1


class TestInspect:
    def test_prints_model_info(self, tmp_path, capsys):
        from flowreject.encoder import EncoderModel
        from flowreject.flow import FlowModel
        from flowreject.modelio import save_model
        model = save_model(tmp_path / "m.frm", EncoderModel("identity", 4, 4),
                           FlowModel(4, n_layers=2))
        assert run(["inspect-model", "--model", model]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["flow"]["n_layers"] == 2
