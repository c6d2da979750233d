"""Losses, AdamW, and the training loop for the three detector variants.

Variants:

* ``mle``      -- inlier-only maximum likelihood; FP samples are never read.
* ``frozen``   -- encoder fixed, flow trained on the joint TP + hinge-margin
                  FP loss (outlier exposure).
* ``finetune`` -- encoder and flow optimized jointly on the same loss.

The FP term is a hinge on log-likelihood: mean over the FP batch of
``max(0, log p(e) - margin)``.  The total loss is the sum of the TP and FP
terms, each an expectation over its own batch.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from . import metrics
from .encoder import EncoderModel
from .errors import ConfigError, DataError, NumericError
from .flow import FlowModel
from .gradcore import Tape

log = logging.getLogger(__name__)

VARIANTS = ("mle", "frozen", "finetune")


@dataclass
class TrainConfig:
    variant: str = "mle"
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-1
    betas: tuple[float, float] = (0.9, 0.999)
    eps_adam: float = 1e-8
    batch_tp: int = 256
    batch_fp: int = 256
    margin_mode: str = "adaptive"   # or "fixed"
    margin_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.margin_mode not in ("adaptive", "fixed"):
            raise ConfigError(f"margin_mode must be 'adaptive' or 'fixed', got {self.margin_mode!r}")
        if self.epochs < 1 or self.batch_tp < 1 or self.batch_fp < 1:
            raise ConfigError("epochs and batch sizes must be >= 1")


def paper_hparams(variant: str = "mle") -> TrainConfig:
    """Hyperparameter preset matching the published large-scale setup."""
    batch = 32 if variant == "finetune" else 2048
    return TrainConfig(variant=variant, epochs=100, lr=1e-5, weight_decay=1e-1,
                       batch_tp=batch, batch_fp=batch)


@dataclass
class EpochStats:
    epoch: int
    loss_tp: float
    loss_fp: float
    val_ap: float
    val_auc: float
    seconds: float


@dataclass
class TrainTrace:
    epochs: list[EpochStats] = field(default_factory=list)
    margin: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss_tp,loss_fp,val_ap,val_auc,seconds\n")
            for e in self.epochs:
                fh.write(f"{e.epoch},{e.loss_tp!r},{e.loss_fp!r},"
                         f"{e.val_ap!r},{e.val_auc!r},{e.seconds:.3f}\n")


@dataclass
class TrainData:
    """Feature arrays for one training run; ``fp`` may be None for MLE."""
    tp: np.ndarray
    fp: np.ndarray | None = None
    val_features: np.ndarray | None = None
    val_labels: np.ndarray | None = None


def loss_graph(enc: EncoderModel, flow: FlowModel, tp_batch: np.ndarray,
               fp_batch: np.ndarray | None, margin: float):
    """Build the tracked total-loss graph.

    Returns (tape, loss, loss_tp, loss_fp, param_nodes).  Encoder
    parameters join the graph only when the encoder is trainable; a frozen
    encoder is applied untracked so its gradient is identically absent.
    """
    tp_batch = np.atleast_2d(np.asarray(tp_batch, dtype=np.float64))
    if tp_batch.shape[0] == 0:
        raise DataError("TP batch must be nonempty")
    tape = Tape()
    pnodes: dict[str, gc.Node] = {}
    flow_params = {}
    for name, arr in flow.parameters().items():
        node = tape.leaf(arr)
        pnodes["flow." + name] = node
        flow_params[name] = node
    enc_params = None
    if enc.trainable:
        enc_params = {}
        for name, arr in enc.parameters().items():
            node = tape.leaf(arr)
            pnodes["enc." + name] = node
            enc_params[name] = node
        tp_e = enc.encode(tape.leaf(tp_batch), enc_params)
    else:
        tp_e = tape.leaf(enc.encode(tp_batch))
    ll_tp = flow.log_likelihood(tp_e, flow_params)
    l_tp = gc.scale(-1.0, gc.reduce_mean(ll_tp))
    l_fp = None
    loss = l_tp
    if fp_batch is not None and len(fp_batch) > 0:
        fp_batch = np.atleast_2d(np.asarray(fp_batch, dtype=np.float64))
        if enc.trainable:
            fp_e = enc.encode(tape.leaf(fp_batch), enc_params)
        else:
            fp_e = tape.leaf(enc.encode(fp_batch))
        ll_fp = flow.log_likelihood(fp_e, flow_params)
        l_fp = gc.reduce_mean(gc.maximum(gc.sub(ll_fp, float(margin)), 0.0))
        loss = gc.add(l_tp, l_fp)
    return tape, loss, l_tp, l_fp, pnodes


def loss_tp(tp_batch, enc: EncoderModel, flow: FlowModel) -> float:
    """Negative mean log-likelihood of a TP batch (untracked)."""
    tp_batch = np.atleast_2d(np.asarray(tp_batch, dtype=np.float64))
    if tp_batch.shape[0] == 0:
        raise DataError("TP batch must be nonempty")
    return float(-np.mean(flow.log_likelihood(enc.encode(tp_batch))))


def loss_fp(fp_batch, enc: EncoderModel, flow: FlowModel, margin: float) -> float:
    """Mean hinge ``max(0, log p(e) - margin)`` over an FP batch; 0 if empty."""
    fp_batch = np.atleast_2d(np.asarray(fp_batch, dtype=np.float64))
    if fp_batch.shape[0] == 0 or fp_batch.size == 0:
        return 0.0
    ll = flow.log_likelihood(enc.encode(fp_batch))
    return float(np.mean(np.maximum(ll - float(margin), 0.0)))


def total_loss(tp_batch, fp_batch, enc: EncoderModel, flow: FlowModel,
               margin: float) -> float:
    lt = loss_tp(tp_batch, enc, flow)
    if fp_batch is None or len(fp_batch) == 0:
        return lt
    return lt + loss_fp(fp_batch, enc, flow, margin)


class AdamW:
    """Adam with decoupled weight decay over a dict of named arrays.

    Update: ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`` with
    bias-corrected first/second moments.  Parameters are updated in place.
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> bool:
        """One update from named gradients; skipped (False) if any is non-finite."""
        for k in self.params:
            if not np.all(np.isfinite(grads[k])):
                log.warning("non-finite gradient for %s; step skipped", k)
                return False
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)
        return True


def _snapshot(enc: EncoderModel, flow: FlowModel):
    return (copy.deepcopy(enc.parameters()), copy.deepcopy(flow.parameters()))


def _restore(enc: EncoderModel, flow: FlowModel, snap) -> None:
    enc_p, flow_p = snap
    if enc_p:
        enc.set_parameters(enc_p)
    flow.set_parameters(flow_p)


def _val_scores(enc: EncoderModel, flow: FlowModel, X: np.ndarray) -> np.ndarray:
    return -np.asarray(flow.log_likelihood(enc.encode(np.atleast_2d(X))))


def train(data: TrainData, enc: EncoderModel, flow: FlowModel,
          cfg: TrainConfig):
    """Run one training; returns (enc, flow, TrainTrace) with the
    best-validation parameters restored into the models.

    Validation selection uses AP when the validation split has both labels;
    otherwise the negative validation NLL stands in and ``val_ap`` is nan in
    the trace.
    """
    use_fp = cfg.variant != "mle"
    tp = np.atleast_2d(np.asarray(data.tp, dtype=np.float64))
    if tp.shape[0] == 0:
        raise DataError("training requires at least one TP sample")
    fp = None
    if use_fp:
        if data.fp is None or len(data.fp) == 0:
            raise ConfigError(
                f"variant {cfg.variant!r} requires FP samples; none were provided"
            )
        fp = np.atleast_2d(np.asarray(data.fp, dtype=np.float64))
    if cfg.variant == "finetune" and not enc.trainable:
        raise ConfigError("finetune variant requires a trainable encoder")
    if cfg.variant in ("mle", "frozen") and enc.trainable:
        raise ConfigError(f"variant {cfg.variant!r} requires a frozen encoder")

    opt_params: dict[str, np.ndarray] = {}
    for name, arr in flow.parameters().items():
        opt_params["flow." + name] = arr
    if enc.trainable:
        for name, arr in enc.params.items():
            opt_params["enc." + name] = arr
    opt = AdamW(opt_params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps_adam,
                weight_decay=cfg.weight_decay)

    rng = np.random.default_rng(cfg.seed)
    margin = cfg.margin_value if cfg.margin_mode == "fixed" else None
    has_val = data.val_features is not None and len(data.val_features) > 0
    val_has_both = (has_val and data.val_labels is not None
                    and len(np.unique(data.val_labels)) == 2)

    trace = TrainTrace()
    best_score = -np.inf
    best_snap = _snapshot(enc, flow)
    lr_halved = False
    n_tp, n_fp = tp.shape[0], (fp.shape[0] if fp is not None else 0)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        epoch_snap = _snapshot(enc, flow)
        perm = rng.permutation(n_tp)
        sum_lt, sum_lf, n_batches = 0.0, 0.0, 0
        aborted = False
        for start in range(0, n_tp, cfg.batch_tp):
            tp_batch = tp[perm[start:start + cfg.batch_tp]]
            fp_batch = None
            if use_fp and margin is not None:
                fp_batch = fp[rng.integers(0, n_fp, size=cfg.batch_fp)]
            tape, loss, l_tp, l_fp, pnodes = loss_graph(enc, flow, tp_batch,
                                                        fp_batch, margin or 0.0)
            if not np.isfinite(loss.value):
                if lr_halved:
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} after lr halving; aborting run"
                    )
                log.warning("non-finite loss at epoch %d; restoring and halving lr", epoch)
                _restore(enc, flow, epoch_snap)
                opt.lr *= 0.5
                lr_halved = True
                aborted = True
                break
            tape.backward(loss)
            opt.step({k: pnodes[k].grad for k in opt_params})
            sum_lt += float(l_tp.value)
            sum_lf += float(l_fp.value) if l_fp is not None else 0.0
            n_batches += 1
        if aborted:
            continue

        if use_fp and margin is None:
            # adaptive margin set once, after the first completed epoch
            ref = data.val_features[np.asarray(data.val_labels) == 0] \
                if val_has_both else (data.val_features if has_val else tp)
            ll = np.asarray(flow.log_likelihood(enc.encode(np.atleast_2d(ref))))
            margin = float(np.mean(ll) - 2.0 * np.std(ll))

        val_ap, val_auc = float("nan"), float("nan")
        if val_has_both:
            scores = _val_scores(enc, flow, data.val_features)
            labels = np.asarray(data.val_labels, dtype=np.int64)
            val_ap = metrics.average_precision(scores, labels)
            val_auc = metrics.roc_auc(scores, labels)
            sel = val_ap
        elif has_val:
            sel = float(np.mean(flow.log_likelihood(enc.encode(
                np.atleast_2d(data.val_features)))))
        else:
            sel = -(sum_lt / max(n_batches, 1))
        if sel >= best_score:
            best_score = sel
            best_snap = _snapshot(enc, flow)

        trace.epochs.append(EpochStats(
            epoch=epoch,
            loss_tp=sum_lt / max(n_batches, 1),
            loss_fp=sum_lf / max(n_batches, 1),
            val_ap=val_ap, val_auc=val_auc,
            seconds=time.perf_counter() - t0,
        ))

    _restore(enc, flow, best_snap)
    trace.margin = margin if margin is not None else float("nan")
    return enc, flow, trace
