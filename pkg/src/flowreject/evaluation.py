"""Cross-validation splitting, experiment protocols, and report emission.

Three experiment shapes over a labeled TP/FP dataset:

* comparative      -- every scorer fit on TP-only training data per fold,
                      evaluated on balanced test folds;
* data efficiency  -- frozen/finetune detectors trained with nested FP
                      subsamples at increasing sampling ratios;
* class robustness -- leave-one-FP-class-out: train on the other classes,
                      evaluate on TPs plus the held-out class only.

Folds follow a stratified k-fold with a 7:1:2 train/validation/test ratio
at k=5.  All randomness is derived from the experiment seed, and report
aggregation is sorted, so reruns are byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import clone

from . import metrics
from .dataio import Dataset
from .detector import FlowDetector
from .errors import DataError

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_RATIOS = (0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50,
                  0.60, 0.70, 0.80, 0.90, 1.00)


@dataclass
class ExperimentConfig:
    k: int = 5
    val_fraction: float = 0.125     # share of the non-test portion
    seed: int = 0
    balance_test: bool = True


@dataclass
class EvalReport:
    experiment: str
    scorer: str
    fold: int
    ap: float
    auc: float
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    threshold: float
    extra: dict = field(default_factory=dict)
    pr_curve: np.ndarray | None = None
    roc_curve: np.ndarray | None = None
    nll_histogram: dict | None = None

    def row(self) -> dict:
        r = {
            "experiment": self.experiment, "scorer": self.scorer,
            "fold": self.fold, "ap": self.ap, "auc": self.auc,
            "accuracy": self.accuracy, "precision": self.precision,
            "sensitivity": self.sensitivity, "specificity": self.specificity,
            "threshold": self.threshold,
        }
        r.update(self.extra)
        return r


def kfold_split(labels, fp_tags, k: int = 5, val_fraction: float = 0.125,
                seed: int = 0):
    """Stratified k-fold (train, val, test) index triples.

    Strata are TP plus each FP class.  Each sample lands in exactly one
    test fold; validation is carved from the remaining portion per stratum
    so the overall split realizes train:val:test = 7:1:2 at k=5.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    strata: dict[str, np.ndarray] = {}
    tags = np.array([t if t else "TP" for t in fp_tags])
    for name in np.unique(tags):
        idx = np.nonzero(tags == name)[0]
        if len(idx) < k:
            raise DataError(f"stratum {name!r} has {len(idx)} samples, fewer than k={k}")
        strata[name] = idx
    rng = np.random.default_rng(seed)
    chunks = {name: np.array_split(rng.permutation(idx), k)
              for name, idx in strata.items()}
    folds = []
    for f in range(k):
        train, val, test = [], [], []
        for name in sorted(chunks):
            test_part = chunks[name][f]
            rest = np.concatenate([chunks[name][j] for j in range(k) if j != f])
            rest = rng.permutation(rest)
            n_val = int(round(val_fraction * len(rest)))
            val.append(rest[:n_val])
            train.append(rest[n_val:])
            test.append(test_part)
        folds.append((np.sort(np.concatenate(train)),
                      np.sort(np.concatenate(val)),
                      np.sort(np.concatenate(test))))
    return folds


def _balance(idx, labels, rng):
    """Downsample the majority label so the index set is label-balanced."""
    idx = np.asarray(idx)
    pos = idx[labels[idx] == 1]
    neg = idx[labels[idx] == 0]
    m = min(len(pos), len(neg))
    if m == 0:
        raise DataError("cannot balance a single-label index set")
    pos = rng.permutation(pos)[:m]
    neg = rng.permutation(neg)[:m]
    return np.sort(np.concatenate([pos, neg]))


def _fit_scorer(est, X, y, val_X, val_y):
    if isinstance(est, FlowDetector):
        validation = (val_X, val_y) if val_X is not None and len(val_X) else None
        est.fit(X, y, validation=validation)
    else:
        est.fit(X[y == 0])
    return est


def _evaluate(est, name, experiment, fold, test_X, test_y,
              val_X=None, val_y=None, extra=None) -> EvalReport:
    scores = np.asarray(est.score_samples(test_X), dtype=np.float64)
    ap = metrics.average_precision(scores, test_y)
    auc = metrics.roc_auc(scores, test_y)
    # threshold picked on validation when it carries both labels
    if val_X is not None and len(val_X) and len(np.unique(val_y)) == 2:
        val_scores = np.asarray(est.score_samples(val_X), dtype=np.float64)
        threshold, _ = metrics.select_threshold_f1(val_scores, val_y)
    else:
        threshold, _ = metrics.select_threshold_f1(scores, test_y)
    acc, prec, sens, spec = metrics.confusion_metrics(scores, test_y, threshold)
    return EvalReport(
        experiment=experiment, scorer=name, fold=fold,
        ap=ap, auc=auc, accuracy=acc, precision=prec,
        sensitivity=sens, specificity=spec, threshold=threshold,
        extra=extra or {},
        pr_curve=metrics.pr_curve(scores, test_y),
        roc_curve=metrics.roc_curve(scores, test_y),
        nll_histogram=metrics.nll_histogram(scores, test_y),
    )


def run_comparative(dataset: Dataset, scorers: dict, cfg: ExperimentConfig):
    """Fit every scorer on TP-only training data per fold; balanced test."""
    folds = kfold_split(dataset.labels, dataset.fp_class, cfg.k,
                        cfg.val_fraction, cfg.seed)
    reports = []
    for f, (train_idx, val_idx, test_idx) in enumerate(folds):
        rng = np.random.default_rng(cfg.seed + 1000 + f)
        if cfg.balance_test:
            test_idx = _balance(test_idx, dataset.labels, rng)
        for name in sorted(scorers):
            est = clone(scorers[name])
            if isinstance(est, FlowDetector):
                est.set_params(seed=est.seed + f)
            train_y = dataset.labels[train_idx]
            tp_only = np.zeros_like(train_y)  # comparative: TP-only training
            _fit_scorer(est, dataset.features[train_idx][train_y == 0],
                        tp_only[train_y == 0],
                        dataset.features[val_idx], dataset.labels[val_idx])
            reports.append(_evaluate(
                est, name, "comparative", f,
                dataset.features[test_idx], dataset.labels[test_idx],
                dataset.features[val_idx], dataset.labels[val_idx]))
    return reports


def run_data_efficiency(dataset: Dataset, scorers: dict, cfg: ExperimentConfig,
                        ratios=DEFAULT_RATIOS):
    """Train outlier-exposed detectors with nested FP subsamples per ratio."""
    if not np.any(dataset.labels == 1):
        raise DataError("data-efficiency experiment requires FP samples")
    folds = kfold_split(dataset.labels, dataset.fp_class, cfg.k,
                        cfg.val_fraction, cfg.seed)
    reports = []
    for f, (train_idx, val_idx, test_idx) in enumerate(folds):
        rng = np.random.default_rng(cfg.seed + 1000 + f)
        if cfg.balance_test:
            test_idx = _balance(test_idx, dataset.labels, rng)
        train_y = dataset.labels[train_idx]
        tp_idx = train_idx[train_y == 0]
        fp_idx = train_idx[train_y == 1]
        fp_order = rng.permutation(fp_idx)  # one shuffle -> nested subsets
        for ratio in ratios:
            n_fp = math.ceil(ratio * len(fp_order))
            if n_fp == 0:
                log.info("ratio %.3f yields zero FPs; skipped", ratio)
                continue
            sub = fp_order[:n_fp]
            fit_idx = np.concatenate([tp_idx, sub])
            for name in sorted(scorers):
                est = clone(scorers[name])
                if isinstance(est, FlowDetector):
                    est.set_params(seed=est.seed + f)
                _fit_scorer(est, dataset.features[fit_idx],
                            dataset.labels[fit_idx],
                            dataset.features[val_idx], dataset.labels[val_idx])
                reports.append(_evaluate(
                    est, name, "data_efficiency", f,
                    dataset.features[test_idx], dataset.labels[test_idx],
                    dataset.features[val_idx], dataset.labels[val_idx],
                    extra={"ratio": ratio}))
    return reports


def run_class_robustness(dataset: Dataset, scorers: dict, cfg: ExperimentConfig):
    """Leave-one-FP-class-out: train without class c, test on TPs + class c."""
    classes = list(dataset.class_names)
    if len(classes) < 2:
        raise DataError("class-robustness experiment requires >= 2 FP classes")
    tags = dataset.fp_class_array()
    folds = kfold_split(dataset.labels, dataset.fp_class, cfg.k,
                        cfg.val_fraction, cfg.seed)
    reports = []
    for f, (train_idx, val_idx, test_idx) in enumerate(folds):
        for held_out in classes:
            keep_train = train_idx[(dataset.labels[train_idx] == 0)
                                   | (tags[train_idx] != held_out)]
            sel_val = val_idx[(dataset.labels[val_idx] == 0)
                              | (tags[val_idx] == held_out)]
            sel_test = test_idx[(dataset.labels[test_idx] == 0)
                                | (tags[test_idx] == held_out)]
            if not np.any(dataset.labels[sel_test] == 1):
                raise DataError(f"held-out class {held_out!r} has no test members")
            for name in sorted(scorers):
                est = clone(scorers[name])
                if isinstance(est, FlowDetector):
                    est.set_params(seed=est.seed + f)
                _fit_scorer(est, dataset.features[keep_train],
                            dataset.labels[keep_train],
                            dataset.features[sel_val], dataset.labels[sel_val])
                reports.append(_evaluate(
                    est, name, "class_robustness", f,
                    dataset.features[sel_test], dataset.labels[sel_test],
                    dataset.features[sel_val], dataset.labels[sel_val],
                    extra={"held_out_class": held_out}))
    return reports


# ---------------------------------------------------------------------------
# report emission


def _group_key(r: EvalReport):
    return (r.scorer,) + tuple(sorted(r.extra.items()))


def summarize(reports) -> list[dict]:
    """Fold mean and std per (scorer, extra) group, sorted for determinism."""
    groups: dict = {}
    for r in reports:
        groups.setdefault(_group_key(r), []).append(r)
    rows = []
    for key in sorted(groups, key=str):
        rs = sorted(groups[key], key=lambda r: r.fold)
        row = {"scorer": rs[0].scorer}
        row.update(rs[0].extra)
        for m in ("ap", "auc", "accuracy", "precision", "sensitivity", "specificity"):
            vals = np.array([getattr(r, m) for r in rs], dtype=np.float64)
            row[f"{m}_mean"] = float(np.mean(vals))
            row[f"{m}_std"] = float(np.std(vals))
        row["n_folds"] = len(rs)
        rows.append(row)
    return rows


def write_reports(reports, out_dir, experiment: str) -> None:
    """Emit JSON document, CSV summary, and per-fold curve files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "experiment": experiment,
        "reports": [dict(r.row(), nll_histogram=r.nll_histogram)
                    for r in sorted(reports, key=lambda r: (str(_group_key(r)), r.fold))],
        "summary": summarize(reports),
    }
    (out_dir / f"{experiment}.json").write_text(json.dumps(doc, indent=2))

    rows = summarize(reports)
    cols: list[str] = []
    for row in rows:
        for c in row:
            if c not in cols:
                cols.append(c)
    with open(out_dir / f"{experiment}_summary.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row.get(c), float)
                              else str(row.get(c, "")) for c in cols) + "\n")

    curves = out_dir / "curves"
    curves.mkdir(exist_ok=True)
    for r in sorted(reports, key=lambda r: (str(_group_key(r)), r.fold)):
        tag = "_".join(f"{k}-{v}" for k, v in sorted(r.extra.items()))
        stem = f"{experiment}_{r.scorer}{'_' + tag if tag else ''}_fold{r.fold}"
        np.savetxt(curves / f"{stem}_pr.csv", r.pr_curve, delimiter=",",
                   header="threshold,precision,recall", comments="")
        np.savetxt(curves / f"{stem}_roc.csv", r.roc_curve, delimiter=",",
                   header="threshold,fpr,tpr", comments="")
