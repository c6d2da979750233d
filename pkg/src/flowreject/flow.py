"""Normalizing-flow density estimator built from affine coupling layers.

Each coupling layer copies one half of its input and applies an
input-conditioned affine map ``exp(s) * (other_half + t)`` to the rest,
where ``s`` and ``t`` come from small two-layer perceptrons fed with the
copied half.  The Jacobian of that map is triangular, so the log absolute
determinant is just ``sum(s)``; composing layers adds the per-layer terms.
With a standard-Gaussian base distribution this gives exact log-likelihoods
via the change-of-variables formula.

All math is written against :mod:`flowreject.gradcore` dispatchers, so the
same forward code runs untracked on numpy arrays (scoring) or tracked on a
tape (training).
"""

from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .errors import ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))

# parameter tensors of one coupling layer, in serialization order
LAYER_PARAM_NAMES = ("Ws1", "bs1", "Ws2", "bs2", "Wt1", "bt1", "Wt2", "bt2")


class CouplingLayer:
    """One affine coupling layer over even-dimensional inputs.

    ``transform_second_half=True`` copies the first half and transforms the
    second (and vice versa).  The raw scale output is squashed through
    ``s_max * tanh(.)`` so ``exp(s)`` can never overflow; with the output
    weights zero-initialized the layer starts as the identity.
    """

    def __init__(self, d: int, hidden: int, transform_second_half: bool,
                 s_max: float = 2.0, rng: np.random.Generator | None = None):
        if d % 2 != 0 or d < 2:
            raise ShapeError(f"coupling layer needs an even dimension >= 2, got {d}")
        if s_max <= 0:
            raise ShapeError(f"s_max must be positive, got {s_max}")
        self.d = d
        self.m = d // 2
        self.hidden = hidden
        self.transform_second_half = bool(transform_second_half)
        self.s_max = float(s_max)
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = 1.0 / np.sqrt(self.m)
        self.params = {
            "Ws1": rng.uniform(-lim, lim, size=(self.m, hidden)),
            "bs1": np.zeros(hidden),
            "Ws2": np.zeros((hidden, self.m)),
            "bs2": np.zeros(self.m),
            "Wt1": rng.uniform(-lim, lim, size=(self.m, hidden)),
            "bt1": np.zeros(hidden),
            "Wt2": np.zeros((hidden, self.m)),
            "bt2": np.zeros(self.m),
        }

    def _nets(self, passthrough, p):
        """Scale and shift conditioned on the copied half."""
        hs = gc.tanh(gc.add(gc.matmul(passthrough, p["Ws1"]), p["bs1"]))
        s_raw = gc.add(gc.matmul(hs, p["Ws2"]), p["bs2"])
        s = gc.scale(self.s_max, gc.tanh(s_raw))
        ht = gc.tanh(gc.add(gc.matmul(passthrough, p["Wt1"]), p["bt1"]))
        t = gc.add(gc.matmul(ht, p["Wt2"]), p["bt2"])
        return s, t

    def _split(self, x):
        a1 = gc.cols(x, 0, self.m)
        a2 = gc.cols(x, self.m, self.d)
        if self.transform_second_half:
            return a1, a2
        return a2, a1

    def _join(self, passthrough, transformed):
        if self.transform_second_half:
            return gc.concat(passthrough, transformed)
        return gc.concat(transformed, passthrough)

    def forward(self, x, params=None):
        """Map a batch (n, d) through the layer.

        Returns ``(out, logdet)`` with ``logdet`` of shape (n,): the row sum
        of the scale outputs.
        """
        self._check_dim(x)
        p = params if params is not None else self.params
        keep, move = self._split(x)
        s, t = self._nets(keep, p)
        moved = gc.mul(gc.exp(s), gc.add(move, t))
        return self._join(keep, moved), gc.reduce_sum(s, axis=-1)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        """Analytic inverse; untracked numpy only."""
        self._check_dim(y)
        y = np.asarray(y, dtype=np.float64)
        keep, moved = self._split(y)
        s, t = self._nets(keep, self.params)
        back = np.exp(-s) * moved - t
        return self._join(keep, back)

    def _check_dim(self, x):
        shape = x.shape
        if shape[-1] != self.d:
            raise ShapeError(f"expected last dimension {self.d}, got {shape}")


class FlowModel:
    """Composition of coupling layers with a standard-Gaussian base.

    Consecutive layers alternate which half they transform so every
    coordinate is transformed somewhere in the stack.
    """

    def __init__(self, d: int, n_layers: int = 32, hidden: int | None = None,
                 s_max: float = 2.0, seed: int = 0):
        if d % 2 != 0 or d < 2:
            raise ShapeError(f"flow dimension must be even and >= 2, got {d}")
        if n_layers < 0:
            raise ShapeError(f"n_layers must be >= 0, got {n_layers}")
        self.d = d
        self.hidden = hidden if hidden is not None else max(8, d // 4)
        self.s_max = float(s_max)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.layers = [
            CouplingLayer(d, self.hidden, transform_second_half=(i % 2 == 0),
                          s_max=s_max, rng=rng)
            for i in range(n_layers)
        ]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable tensor."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name in LAYER_PARAM_NAMES:
                out[f"layer{i}.{name}"] = layer.params[name]
        return out

    def set_parameters(self, flat: dict[str, np.ndarray]) -> None:
        # copy in place so optimizer references to the arrays stay valid
        for i, layer in enumerate(self.layers):
            for name in LAYER_PARAM_NAMES:
                np.copyto(layer.params[name], flat[f"layer{i}.{name}"])

    def forward(self, e, params=None):
        """(z, total_logdet) for a batch (n, d); logdet accumulates per layer."""
        x = e
        logdet = None
        for i, layer in enumerate(self.layers):
            lp = None
            if params is not None:
                prefix = f"layer{i}."
                lp = {name: params[prefix + name] for name in LAYER_PARAM_NAMES}
            x, ld = layer.forward(x, lp)
            logdet = ld if logdet is None else gc.add(logdet, ld)
        if logdet is None:
            x = gc.scale(1.0, x) if isinstance(x, gc.Node) else np.asarray(x, dtype=np.float64)
            n = x.shape[0] if len(x.shape) == 2 else ()
            logdet = np.zeros(n) if n != () else np.zeros(())
        return x, logdet

    def inverse(self, z: np.ndarray) -> np.ndarray:
        x = np.asarray(z, dtype=np.float64)
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x

    def log_likelihood(self, e, params=None):
        """log p(e) per row: Gaussian base log-density plus total log-det."""
        z, logdet = self.forward(e, params)
        sq = gc.reduce_sum(gc.mul(z, z), axis=-1)
        base = gc.add(gc.scale(-0.5, sq), -0.5 * self.d * LOG_2PI)
        return gc.add(base, logdet)

    def score_samples(self, e: np.ndarray) -> np.ndarray:
        """Anomaly score per row: negative log-likelihood (higher = more FP-like).

        Non-finite likelihoods are propagated as +inf scores so callers can
        flag the sample instead of crashing.
        """
        e = np.atleast_2d(np.asarray(e, dtype=np.float64))
        ll = self.log_likelihood(e)
        score = -np.asarray(ll, dtype=np.float64)
        score[~np.isfinite(score)] = np.inf
        return score

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Draw n vectors by pushing base-Gaussian draws through the inverse."""
        if n < 1:
            raise ShapeError(f"sample count must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.d))
        return self.inverse(z)
