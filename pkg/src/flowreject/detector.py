"""sklearn-style wrapper tying encoder, flow, and training together.

``FlowDetector`` is the scorer the evaluation harness consumes alongside
the classical baselines: ``fit(X, y)`` then ``score_samples(X)`` where the
score is the negative log-likelihood (higher = more FP-like).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .encoder import EncoderModel
from .errors import ConfigError, DataError
from .flow import FlowModel
from .training import TrainConfig, TrainData, train


class FlowDetector(BaseEstimator):
    """Density-based FP rejector with three training variants.

    ``mle`` trains on TPs only; ``frozen`` adds the hinge-margin FP loss
    with a fixed encoder; ``finetune`` jointly optimizes a trainable
    encoder with the flow.  The default encoder is the identity for the
    first two variants and a small trainable MLP for ``finetune``.
    """

    def __init__(self, variant="mle", n_layers=8, hidden=None, s_max=2.0,
                 encoder_kind=None, encoder_out_dim=None,
                 epochs=60, lr=1e-3, weight_decay=1e-4,
                 batch_tp=256, batch_fp=256,
                 margin_mode="adaptive", margin_value=0.0, seed=0):
        self.variant = variant
        self.n_layers = n_layers
        self.hidden = hidden
        self.s_max = s_max
        self.encoder_kind = encoder_kind
        self.encoder_out_dim = encoder_out_dim
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_tp = batch_tp
        self.batch_fp = batch_fp
        self.margin_mode = margin_mode
        self.margin_value = margin_value
        self.seed = seed

    def _build_models(self, in_dim: int):
        kind = self.encoder_kind
        if kind is None:
            kind = "mlp" if self.variant == "finetune" else "identity"
        out_dim = self.encoder_out_dim
        if out_dim is None:
            if kind == "identity":
                if in_dim % 2 != 0:
                    raise ConfigError(
                        f"identity encoder needs an even input dimension, got {in_dim}; "
                        "set encoder_kind='linear' or encoder_out_dim explicitly"
                    )
                out_dim = in_dim
            else:
                out_dim = in_dim if in_dim % 2 == 0 else in_dim + 1
        trainable = self.variant == "finetune"
        enc = EncoderModel(kind, in_dim, out_dim, trainable=trainable, seed=self.seed)
        flow = FlowModel(out_dim, n_layers=self.n_layers, hidden=self.hidden,
                         s_max=self.s_max, seed=self.seed + 1)
        return enc, flow

    def fit(self, X, y=None, validation=None):
        """Train on features X with labels y (0=TP, 1=FP; None means all TP).

        ``validation`` is an optional ``(X_val, y_val)`` pair used for
        best-checkpoint selection and the adaptive margin.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if y is None:
            y = np.zeros(X.shape[0], dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if y.shape[0] != X.shape[0]:
            raise DataError("X and y length mismatch")
        tp = X[y == 0]
        fp = X[y == 1] if self.variant != "mle" else None
        val_X, val_y = (None, None)
        if validation is not None:
            val_X = np.atleast_2d(np.asarray(validation[0], dtype=np.float64))
            val_y = np.asarray(validation[1], dtype=np.int64)
        enc, flow = self._build_models(X.shape[1])
        cfg = TrainConfig(variant=self.variant, epochs=self.epochs, lr=self.lr,
                          weight_decay=self.weight_decay,
                          batch_tp=self.batch_tp, batch_fp=self.batch_fp,
                          margin_mode=self.margin_mode,
                          margin_value=self.margin_value, seed=self.seed)
        data = TrainData(tp=tp, fp=fp, val_features=val_X, val_labels=val_y)
        self.encoder_, self.flow_, self.trace_ = train(data, enc, flow, cfg)
        return self

    def log_likelihood(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.asarray(self.flow_.log_likelihood(self.encoder_.encode(X)))

    def score_samples(self, X) -> np.ndarray:
        score = -self.log_likelihood(X)
        score[~np.isfinite(score)] = np.inf
        return score
