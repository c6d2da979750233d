"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``score``, ``eval``, ``inspect-model``.
Options resolve as defaults < JSON config file < explicit flags, and the
fully resolved configuration is written next to every run's outputs so any
run can be reproduced from its output directory alone.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, modelio, training
from .baselines import make_baseline
from .dataio import SynthSpec, load_dataset, preset_spec, save_dataset, synth_generate
from .detector import FlowDetector
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger("flowreject")

OUTPUT_ROOT_ENV = "FLOWREJECT_OUTPUT_ROOT"


def _out_dir(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / default_name


def _resolve(defaults: dict, config_path: str | None, flags: dict,
             extra_keys: tuple = ("dataset", "spec")) -> dict:
    # extra_keys covers fields the commands append to resolved_config.json;
    # they are accepted on re-load so a run can be replayed from its own
    # resolved config, but the command-line values still win.
    cfg = dict(defaults)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(loaded) - set(defaults) - set(extra_keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k not in extra_keys})
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def _write_resolved(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    defaults = {"preset": "default", "seed": 0, "format": "csv", "name": "dataset"}
    cfg = _resolve(defaults, args.config, {
        "preset": args.preset, "seed": args.seed, "format": args.format,
    })
    out = _out_dir(args.out, "synth")
    if args.spec:
        spec_dict = json.loads(Path(args.spec).read_text())
        spec_dict["seed"] = cfg["seed"]
        spec = SynthSpec.from_dict(spec_dict)
    else:
        spec = preset_spec(cfg["preset"], seed=cfg["seed"])
    ds = synth_generate(spec)
    manifest = save_dataset(ds, out, fmt=cfg["format"], name=cfg["name"])
    cfg["spec"] = spec.to_dict()
    _write_resolved(cfg, out)
    print(f"wrote {manifest} ({ds.n} samples, d_in={ds.d_in})")
    return 0


def cmd_train(args) -> int:
    defaults = {
        "variant": "mle", "epochs": 200, "lr": 1e-3, "weight_decay": 1e-4,
        "batch_tp": 256, "batch_fp": 256, "margin_mode": "adaptive",
        "margin_value": 0.0, "seed": 0, "n_layers": 8, "hidden": None,
        "s_max": 2.0, "encoder_kind": None, "encoder_out_dim": None,
        "val_fraction": 0.1,
    }
    cfg = _resolve(defaults, args.config, {
        "variant": args.variant, "epochs": args.epochs, "lr": args.lr,
        "seed": args.seed, "n_layers": args.n_layers, "hidden": args.hidden,
    })
    if args.paper_hparams:
        paper = training.paper_hparams(cfg["variant"])
        cfg.update({"epochs": paper.epochs, "lr": paper.lr,
                    "weight_decay": paper.weight_decay,
                    "batch_tp": paper.batch_tp, "batch_fp": paper.batch_fp,
                    "n_layers": 32, "hidden": 512})
    ds = load_dataset(args.dataset)
    out = _out_dir(args.out, "train")
    out.mkdir(parents=True, exist_ok=True)

    # hold out a seeded validation slice for checkpoint selection
    rng = np.random.default_rng(cfg["seed"])
    perm = rng.permutation(ds.n)
    n_val = int(round(cfg["val_fraction"] * ds.n))
    val_idx, fit_idx = perm[:n_val], perm[n_val:]

    det = FlowDetector(
        variant=cfg["variant"], n_layers=cfg["n_layers"], hidden=cfg["hidden"],
        s_max=cfg["s_max"], encoder_kind=cfg["encoder_kind"],
        encoder_out_dim=cfg["encoder_out_dim"], epochs=cfg["epochs"],
        lr=cfg["lr"], weight_decay=cfg["weight_decay"],
        batch_tp=cfg["batch_tp"], batch_fp=cfg["batch_fp"],
        margin_mode=cfg["margin_mode"], margin_value=cfg["margin_value"],
        seed=cfg["seed"])
    validation = (ds.features[val_idx], ds.labels[val_idx]) if n_val else None
    det.fit(ds.features[fit_idx], ds.labels[fit_idx], validation=validation)

    model_path = out / "model.frm"
    modelio.save_model(model_path, det.encoder_, det.flow_, meta={
        "train_config": {k: cfg[k] for k in sorted(cfg)},
        "data_digest": ds.provenance,
        "margin": det.trace_.margin,
    })
    det.trace_.to_csv(out / "trace.csv")
    cfg["dataset"] = str(args.dataset)
    _write_resolved(cfg, out)
    print(f"wrote {model_path} and {out / 'trace.csv'} "
          f"({len(det.trace_.epochs)} epochs)")
    return 0


def cmd_score(args) -> int:
    enc, flow, _ = modelio.load_model(args.model)
    ds = load_dataset(args.dataset)
    if ds.d_in != enc.in_dim:
        raise DataError(
            f"dataset dimension {ds.d_in} does not match model input {enc.in_dim}"
        )
    ll = np.asarray(flow.log_likelihood(enc.encode(ds.features)))
    score = np.where(np.isfinite(ll), -ll, np.inf)
    out_path = Path(args.out) if args.out else Path("scores.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        cols = "id,log_likelihood,anomaly_score"
        if args.threshold is not None:
            cols += ",reject"
        fh.write(cols + "\n")
        for i in range(ds.n):
            line = f"{i},{float(ll[i])!r},{float(score[i])!r}"
            if args.threshold is not None:
                line += f",{int(score[i] > args.threshold)}"
            fh.write(line + "\n")
    print(f"wrote {out_path} ({ds.n} rows)")
    return 0


_EXPERIMENTS = ("comparative", "data-efficiency", "class-robustness")


def _build_scorers(names, cfg) -> dict:
    scorers = {}
    det_kw = dict(n_layers=cfg["n_layers"], hidden=cfg["hidden"],
                  epochs=cfg["epochs"], lr=cfg["lr"],
                  weight_decay=cfg["weight_decay"], batch_tp=cfg["batch_tp"],
                  batch_fp=cfg["batch_fp"], seed=cfg["seed"])
    for name in names:
        if name.startswith("flow-"):
            scorers[name] = FlowDetector(variant=name.removeprefix("flow-"), **det_kw)
        elif name == "pca":
            scorers[name] = make_baseline("pca", n_components=cfg["pca_components"])
        else:
            scorers[name] = make_baseline(name)
    return scorers


def cmd_eval(args) -> int:
    defaults = {
        "experiment": "comparative", "scorers": "flow-mle,kde,gaussian,pca",
        "folds": 5, "seed": 0, "epochs": 60, "lr": 1e-3, "weight_decay": 1e-4,
        "n_layers": 8, "hidden": None, "batch_tp": 256, "batch_fp": 256,
        "pca_components": 2, "ratios": list(evaluation.DEFAULT_RATIOS),
        "balance_test": True,
    }
    cfg = _resolve(defaults, args.config, {
        "experiment": args.experiment, "scorers": args.scorers,
        "folds": args.folds, "seed": args.seed, "epochs": args.epochs,
        "ratios": args.ratios,
    })
    if cfg["experiment"] not in _EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}, "
                          f"expected one of {_EXPERIMENTS}")
    names = ([s.strip() for s in cfg["scorers"].split(",")]
             if isinstance(cfg["scorers"], str) else list(cfg["scorers"]))
    ds = load_dataset(args.dataset)
    out = _out_dir(args.out, "eval")
    ecfg = evaluation.ExperimentConfig(k=cfg["folds"], seed=cfg["seed"],
                                       balance_test=cfg["balance_test"])
    scorers = _build_scorers(names, cfg)
    if cfg["experiment"] == "comparative":
        reports = evaluation.run_comparative(ds, scorers, ecfg)
    elif cfg["experiment"] == "data-efficiency":
        ratios = [float(r) for r in cfg["ratios"]]
        reports = evaluation.run_data_efficiency(ds, scorers, ecfg, ratios=ratios)
    else:
        reports = evaluation.run_class_robustness(ds, scorers, ecfg)
    experiment_tag = cfg["experiment"].replace("-", "_")
    evaluation.write_reports(reports, out, experiment_tag)
    cfg["dataset"] = str(args.dataset)
    _write_resolved(cfg, out)
    print(f"wrote {out / (experiment_tag + '_summary.csv')}")
    return 0


def cmd_inspect_model(args) -> int:
    enc, flow, meta = modelio.load_model(args.model)
    info = {
        "encoder": {"kind": enc.kind, "in_dim": enc.in_dim, "out_dim": enc.out_dim,
                    "trainable": enc.trainable},
        "flow": {"d": flow.d, "n_layers": flow.n_layers, "hidden": flow.hidden,
                 "s_max": flow.s_max},
        "n_parameters": int(sum(v.size for v in flow.parameters().values())
                            + sum(v.size for v in enc.parameters().values())),
        "sidecar": meta,
    }
    print(json.dumps(info, indent=2))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowreject",
                                description="Likelihood-based false-positive "
                                            "rejection toolkit")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--preset", choices=("default", "easy", "hard", "confounded"))
    s.add_argument("--hardness", dest="preset",
                   choices=("easy", "hard"), help="alias for --preset")
    s.add_argument("--spec", help="JSON generator spec file")
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=("csv", "bin"))
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a detector variant")
    t.add_argument("--dataset", required=True, help="dataset manifest path")
    t.add_argument("--variant", choices=training.VARIANTS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--n-layers", dest="n_layers", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--paper-hparams", action="store_true",
                   help="apply the published large-scale hyperparameters")
    t.add_argument("--config")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("score", help="score a dataset with a trained model")
    c.add_argument("--model", required=True)
    c.add_argument("--dataset", required=True)
    c.add_argument("--threshold", type=float)
    c.add_argument("--out")
    c.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="run an experiment protocol")
    e.add_argument("--dataset", required=True)
    e.add_argument("--experiment", choices=_EXPERIMENTS)
    e.add_argument("--scorers")
    e.add_argument("--folds", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--epochs", type=int)
    e.add_argument("--ratios", type=float, nargs="+")
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-model", help="print model header and sidecar")
    i.add_argument("--model", required=True)
    i.set_defaults(func=cmd_inspect_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
