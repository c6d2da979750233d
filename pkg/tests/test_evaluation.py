import json

import numpy as np
import pytest

from flowreject import evaluation
from flowreject.baselines import GaussianScorer, KDEScorer
from flowreject.dataio import FPClassSpec, SynthSpec, preset_spec, synth_generate
from flowreject.detector import FlowDetector
from flowreject.errors import DataError
from flowreject.evaluation import (ExperimentConfig, kfold_split,
                                   run_class_robustness, run_comparative,
                                   run_data_efficiency, summarize,
                                   write_reports)


def small_dataset(seed=0):
    spec = SynthSpec(d_in=4, n_tp=200, seed=seed, noise=0.1, fp_classes=[
        FPClassSpec("far", "gaussian", shift=(8.0, 8.0), scale=0.5, count=60),
        FPClassSpec("box", "uniform-box", shift=(-8.0, 8.0), scale=1.0, count=60),
    ])
    return synth_generate(spec)


class TestKFoldSplit:
    def test_sizes_follow_7_1_2(self):
        labels = np.zeros(100, dtype=int)
        labels[80:] = 1
        tags = [None] * 80 + ["c"] * 20
        folds = kfold_split(labels, tags, k=5, seed=0)
        for train, val, test in folds:
            assert len(test) == 20
            assert len(val) == 10
            assert len(train) == 70

    def test_test_folds_partition_dataset(self):
        ds = small_dataset()
        folds = kfold_split(ds.labels, ds.fp_class, k=5, seed=1)
        tests = [set(t.tolist()) for _, _, t in folds]
        union = set().union(*tests)
        assert union == set(range(ds.n))
        for i in range(len(tests)):
            for j in range(i + 1, len(tests)):
                assert not (tests[i] & tests[j])

    def test_triples_are_disjoint(self):
        ds = small_dataset()
        for train, val, test in kfold_split(ds.labels, ds.fp_class, k=5, seed=2):
            assert not (set(train) & set(val))
            assert not (set(train) & set(test))
            assert not (set(val) & set(test))

    def test_stratification_within_one_sample(self):
        labels = np.array([0] * 80 + [1] * 20)
        tags = [None] * 80 + ["c"] * 20
        global_ratio = 0.2
        for _, _, test in kfold_split(labels, tags, k=5, seed=3):
            fold_ratio = labels[test].mean()
            assert abs(fold_ratio - global_ratio) <= 1.0 / len(test) + 1e-12

    def test_small_class_rejected(self):
        labels = np.array([0] * 20 + [1] * 3)
        tags = [None] * 20 + ["c"] * 3
        with pytest.raises(DataError, match="fewer than k"):
            kfold_split(labels, tags, k=5)


class TestComparative:
    def test_report_shape_and_separation(self):
        ds = small_dataset()
        scorers = {"gaussian": GaussianScorer(), "kde": KDEScorer()}
        cfg = ExperimentConfig(k=5, seed=0)
        reports = run_comparative(ds, scorers, cfg)
        assert len(reports) == 10  # scorer x fold
        # FPs are 6+ sigma off-manifold: every density scorer separates
        for r in reports:
            assert r.auc >= 0.99

    def test_balanced_test_sets(self):
        ds = small_dataset()
        cfg = ExperimentConfig(k=5, seed=0)
        reports = run_comparative(ds, {"gaussian": GaussianScorer()}, cfg)
        for r in reports:
            counts = np.array(r.nll_histogram["tp"]).sum(), np.array(r.nll_histogram["fp"]).sum()
            assert counts[0] == counts[1]

    def test_deterministic_under_rerun(self):
        ds = small_dataset()
        cfg = ExperimentConfig(k=3, seed=5)
        a = run_comparative(ds, {"gaussian": GaussianScorer()}, cfg)
        b = run_comparative(ds, {"gaussian": GaussianScorer()}, cfg)
        assert [r.row() for r in a] == [r.row() for r in b]


class TestDataEfficiency:
    def test_full_ratio_uses_every_training_fp(self):
        ds = small_dataset()
        seen = []

        class ProbeDet(FlowDetector):
            def fit(self, X, y=None, validation=None):
                seen.append(int(np.sum(y == 1)))
                return super().fit(X, y, validation=validation)

        det = ProbeDet(variant="frozen", n_layers=1, epochs=1, seed=0)
        cfg = ExperimentConfig(k=3, seed=0)
        run_data_efficiency(ds, {"flow": det}, cfg, ratios=[1.0])
        folds = evaluation.kfold_split(ds.labels, ds.fp_class, 3, 0.125, 0)
        expected = [int(np.sum(ds.labels[tr] == 1)) for tr, _, _ in folds]
        assert seen == expected

    def test_nested_subsampling(self):
        ds = small_dataset()
        seen = {}

        class ProbeDet(FlowDetector):
            def fit(self, X, y=None, validation=None):
                key = int(np.sum(y == 1))
                seen[key] = {tuple(row) for row in X[y == 1]}
                return super().fit(X, y, validation=validation)

        det = ProbeDet(variant="frozen", n_layers=1, epochs=1, seed=0)
        cfg = ExperimentConfig(k=2, seed=1)
        run_data_efficiency(ds, {"flow": det}, cfg, ratios=[0.2, 0.6, 1.0])
        sizes = sorted(seen)
        for small, large in zip(sizes, sizes[1:]):
            assert seen[small] <= seen[large]

    def test_requires_fps(self):
        ds = small_dataset()
        tp_only = type(ds)(features=ds.features[ds.labels == 0],
                           labels=ds.labels[ds.labels == 0],
                           fp_class=[None] * int((ds.labels == 0).sum()),
                           class_names=[])
        with pytest.raises(DataError):
            run_data_efficiency(tp_only, {}, ExperimentConfig(k=2))


class TestClassRobustness:
    def test_shape_and_offmanifold_detection(self):
        ds = small_dataset()
        det = FlowDetector(variant="mle", n_layers=4, epochs=30, seed=0)
        cfg = ExperimentConfig(k=3, seed=0)
        reports = run_class_robustness(ds, {"flow-mle": det}, cfg)
        assert len(reports) == 6  # 2 classes x 3 folds
        classes = {r.extra["held_out_class"] for r in reports}
        assert classes == {"far", "box"}
        # both classes are far off-manifold: never-seen classes still detected
        for r in reports:
            assert r.auc >= 0.95

    def test_requires_two_classes(self):
        spec = SynthSpec(d_in=4, n_tp=50, seed=0, fp_classes=[
            FPClassSpec("only", "gaussian", shift=(8.0, 8.0), count=20)])
        ds = synth_generate(spec)
        with pytest.raises(DataError, match=">= 2"):
            run_class_robustness(ds, {}, ExperimentConfig(k=2))


class TestReports:
    def test_summarize_means(self):
        ds = small_dataset()
        cfg = ExperimentConfig(k=3, seed=0)
        reports = run_comparative(ds, {"gaussian": GaussianScorer()}, cfg)
        rows = summarize(reports)
        assert len(rows) == 1
        row = rows[0]
        assert row["n_folds"] == 3
        assert row["auc_mean"] == pytest.approx(np.mean([r.auc for r in reports]))

    def test_write_reports_outputs(self, tmp_path):
        ds = small_dataset()
        cfg = ExperimentConfig(k=2, seed=0)
        reports = run_comparative(ds, {"gaussian": GaussianScorer()}, cfg)
        write_reports(reports, tmp_path, "comparative")
        doc = json.loads((tmp_path / "comparative.json").read_text())
        assert doc["schema_version"] == 1
        assert len(doc["reports"]) == 2
        assert (tmp_path / "comparative_summary.csv").exists()
        curve_files = list((tmp_path / "curves").iterdir())
        assert len(curve_files) == 4  # pr + roc per fold
        header = (tmp_path / "curves" / curve_files[0].name).read_text().splitlines()[0]
        assert header in ("threshold,precision,recall", "threshold,fpr,tpr")

    def test_summary_csv_byte_identical_on_rerun(self, tmp_path):
        ds = small_dataset()
        cfg = ExperimentConfig(k=2, seed=0)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            reports = run_comparative(ds, {"gaussian": GaussianScorer(),
                                           "kde": KDEScorer()}, cfg)
            write_reports(reports, out, "comparative")
        assert ((out1 / "comparative_summary.csv").read_bytes()
                == (out2 / "comparative_summary.csv").read_bytes())
