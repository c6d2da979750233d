"""Feature adapter in front of the flow.

Stands in for a pretrained image backbone: maps raw input features to the
(even-dimensional) space where the flow estimates density.  Three kinds:

* ``identity`` -- no parameters, requires matching dimensions;
* ``linear``   -- single affine map;
* ``mlp``      -- one hidden tanh layer of width ``2 * out_dim``.

``trainable=False`` freezes the parameters: the training loop never touches
them and they compare bit-identical before and after a run.
"""

from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, ShapeError

KINDS = ("identity", "linear", "mlp")


class EncoderModel:
    def __init__(self, kind: str, in_dim: int, out_dim: int,
                 trainable: bool = False, seed: int = 0):
        if kind not in KINDS:
            raise ConfigError(f"unknown encoder kind {kind!r}, expected one of {KINDS}")
        if out_dim % 2 != 0:
            raise ConfigError(f"encoder out_dim must be even (flow constraint), got {out_dim}")
        if kind == "identity" and in_dim != out_dim:
            raise ConfigError(
                f"identity encoder requires in_dim == out_dim, got {in_dim} != {out_dim}"
            )
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.trainable = bool(trainable)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        if kind == "identity":
            self.params: dict[str, np.ndarray] = {}
        elif kind == "linear":
            lim = 1.0 / np.sqrt(in_dim)
            self.params = {
                "W": rng.uniform(-lim, lim, size=(in_dim, out_dim)),
                "b": np.zeros(out_dim),
            }
        else:
            h = 2 * out_dim
            lim1 = 1.0 / np.sqrt(in_dim)
            lim2 = 1.0 / np.sqrt(h)
            self.params = {
                "W1": rng.uniform(-lim1, lim1, size=(in_dim, h)),
                "b1": np.zeros(h),
                "W2": rng.uniform(-lim2, lim2, size=(h, out_dim)),
                "b2": np.zeros(out_dim),
            }

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.params)

    def set_parameters(self, flat: dict[str, np.ndarray]) -> None:
        # copy in place so optimizer references to the arrays stay valid
        for name in self.params:
            np.copyto(self.params[name], flat[name])

    def encode(self, x, params=None):
        """Map a batch (n, in_dim) to (n, out_dim)."""
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected last dimension {self.in_dim}, got {x.shape}")
        p = params if params is not None else self.params
        if self.kind == "identity":
            return x
        if self.kind == "linear":
            return gc.add(gc.matmul(x, p["W"]), p["b"])
        h = gc.tanh(gc.add(gc.matmul(x, p["W1"]), p["b1"]))
        return gc.add(gc.matmul(h, p["W2"]), p["b2"])

    def identity_like(self) -> bool:
        return self.kind == "identity"
