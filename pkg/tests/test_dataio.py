import json

import numpy as np
import pytest

from flowreject.baselines import GaussianScorer
from flowreject.dataio import (Dataset, FPClassSpec, SynthSpec, load_dataset,
                               preset_spec, save_dataset, synth_generate,
                               two_moons)
from flowreject.errors import ConfigError, DataError
from flowreject.metrics import roc_auc


def tiny_dataset():
    return Dataset(
        features=np.arange(16, dtype=np.float64).reshape(4, 4),
        labels=np.array([0, 0, 1, 1]),
        fp_class=[None, None, "glare", "bubble"],
        class_names=["glare", "bubble"],
        provenance="fixture",
    )


class TestDatasetFiles:
    def test_csv_fixture_roundtrip(self, tmp_path):
        ds = tiny_dataset()
        manifest = save_dataset(ds, tmp_path, fmt="csv")
        back = load_dataset(manifest)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.fp_class == ds.fp_class
        assert back.class_names == ds.class_names
        assert back.d_in == 4 and len(back.class_names) == 2

    def test_bin_roundtrip(self, tmp_path):
        ds = tiny_dataset()
        manifest = save_dataset(ds, tmp_path, fmt="bin")
        back = load_dataset(manifest)
        np.testing.assert_array_equal(back.features, ds.features)
        assert back.fp_class == ds.fp_class

    def test_digest_mismatch_rejected(self, tmp_path):
        manifest = save_dataset(tiny_dataset(), tmp_path, fmt="csv")
        payload = json.loads(manifest.read_text())["payload"]
        path = tmp_path / payload
        path.write_bytes(path.read_bytes() + b"tampered")
        with pytest.raises(DataError, match="digest"):
            load_dataset(manifest)

    def test_nonfinite_feature_rejected_with_row(self):
        ds = tiny_dataset()
        ds.features[2, 1] = np.nan
        with pytest.raises(DataError, match="row 2"):
            ds.validate()

    def test_fp_without_class_tag_rejected(self):
        ds = tiny_dataset()
        ds.fp_class[2] = None
        with pytest.raises(DataError, match="class tag"):
            ds.validate()

    def test_bad_label_in_csv_rejected(self, tmp_path):
        manifest = save_dataset(tiny_dataset(), tmp_path, fmt="csv")
        payload_name = json.loads(manifest.read_text())["payload"]
        path = tmp_path / payload_name
        text = path.read_text().replace("TP", "MAYBE", 1)
        path.write_text(text)
        # fix the digest so only the label check can fire
        m = json.loads(manifest.read_text())
        import hashlib
        m["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest.write_text(json.dumps(m))
        with pytest.raises(DataError, match="MAYBE"):
            load_dataset(manifest)


class TestSynthGenerate:
    def test_no_noise_axis_lift_confines_features(self):
        spec = SynthSpec(d_in=6, noise=0.0, n_tp=50, seed=0, tp_components=[
            {"mean": (0.0, 0.0), "cov": ((1.0, 0.0), (0.0, 1.0)), "weight": 1.0}])
        ds = synth_generate(spec)
        # features live on a 2-D plane: rank of the feature matrix is 2
        assert np.linalg.matrix_rank(ds.features, tol=1e-8) == 2

    def test_empirical_mean_close_to_spec(self):
        spec = SynthSpec(d_in=4, noise=0.0, n_tp=4000, seed=1, tp_components=[
            {"mean": (2.0, -1.0), "cov": ((0.5, 0.0), (0.0, 0.5)), "weight": 1.0}])
        ds = synth_generate(spec)
        # lift is orthonormal, so the ambient mean norm matches the latent one
        latent_norm = np.sqrt(2.0 ** 2 + 1.0 ** 2)
        got = np.linalg.norm(ds.features.mean(axis=0))
        assert abs(got - latent_norm) < 3 * np.sqrt(0.5) / np.sqrt(4000) * 3

    def test_same_seed_bit_identical(self):
        spec = preset_spec("default", seed=3)
        a, b = synth_generate(spec), synth_generate(preset_spec("default", seed=3))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_class_tags_and_counts(self):
        ds = synth_generate(preset_spec("default", seed=0))
        assert ds.class_names == ["near", "ring", "offbox"]
        assert int((ds.labels == 0).sum()) == 2000
        assert ds.fp_class.count("ring") == 300

    def test_invalid_shape_rejected(self):
        with pytest.raises(ConfigError):
            FPClassSpec("x", "triangle")

    def test_difficulty_span_self_check(self):
        # the generator must span difficulty: gaussian-baseline AUC gap >= 0.2
        aucs = {}
        for name in ("easy", "hard"):
            ds = synth_generate(preset_spec(name, seed=0))
            tp = ds.features[ds.labels == 0]
            scores = GaussianScorer().fit(tp).score_samples(ds.features)
            aucs[name] = roc_auc(scores, ds.labels)
        assert abs(aucs["easy"] - aucs["hard"]) >= 0.2


class TestTwoMoons:
    def test_deterministic(self):
        np.testing.assert_array_equal(two_moons(100, seed=5), two_moons(100, seed=5))

    def test_shape_and_extent(self):
        pts = two_moons(1000, noise=0.05, seed=0)
        assert pts.shape == (1000, 2)
        assert np.abs(pts).max() < 3.0
