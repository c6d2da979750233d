"""Model file format: one self-describing binary plus a JSON sidecar.

Layout (all little-endian):

* magic ``FRMD``, u32 format version
* encoder block: kind code u8, trainable u8, 6 pad bytes, in_dim u64,
  out_dim u64, then the encoder parameter tensors as raw float64 in fixed
  per-kind order
* flow block: d u64, n_layers u64, hidden u64, s_max f64, one u8 per layer
  for the transform-second-half pattern, then per-layer tensors in
  ``LAYER_PARAM_NAMES`` order as raw float64

The sidecar (``<path>.json``) repeats the header fields human-readably and
carries the training config and the training-data digest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import KINDS, EncoderModel
from .errors import DataError
from .flow import LAYER_PARAM_NAMES, FlowModel

MAGIC = b"FRMD"
FORMAT_VERSION = 1

_ENC_TENSORS = {
    "identity": (),
    "linear": ("W", "b"),
    "mlp": ("W1", "b1", "W2", "b2"),
}


def save_model(path, enc: EncoderModel, flow: FlowModel, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<BB6xQQ", KINDS.index(enc.kind), int(enc.trainable),
                             enc.in_dim, enc.out_dim))
    for name in _ENC_TENSORS[enc.kind]:
        parts.append(np.ascontiguousarray(enc.params[name], dtype="<f8").tobytes())
    parts.append(struct.pack("<QQQd", flow.d, flow.n_layers, flow.hidden, flow.s_max))
    parts.append(bytes(int(layer.transform_second_half) for layer in flow.layers))
    for layer in flow.layers:
        for name in LAYER_PARAM_NAMES:
            parts.append(np.ascontiguousarray(layer.params[name], dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))

    sidecar = {
        "format_version": FORMAT_VERSION,
        "base_distribution": "standard_normal",
        "encoder": {"kind": enc.kind, "in_dim": enc.in_dim,
                    "out_dim": enc.out_dim, "trainable": enc.trainable},
        "flow": {"d": flow.d, "n_layers": flow.n_layers, "hidden": flow.hidden,
                 "s_max": flow.s_max,
                 "alternation": [layer.transform_second_half for layer in flow.layers]},
    }
    sidecar.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def _take(buf: memoryview, offset: int, shape) -> tuple[np.ndarray, int]:
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
    return arr, offset + 8 * n


def load_model(path):
    """Returns (encoder, flow, sidecar_meta)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise DataError(f"{path} is not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    kind_code, trainable, in_dim, out_dim = struct.unpack_from("<BB6xQQ", buf, 8)
    offset = 8 + 24
    kind = KINDS[kind_code]
    enc = EncoderModel(kind, in_dim, out_dim, trainable=bool(trainable))
    mv = memoryview(buf)
    for name in _ENC_TENSORS[kind]:
        arr, offset = _take(mv, offset, enc.params[name].shape)
        enc.params[name] = arr
    d, n_layers, hidden, s_max = struct.unpack_from("<QQQd", buf, offset)
    offset += 32
    pattern = [bool(b) for b in buf[offset:offset + n_layers]]
    offset += n_layers
    flow = FlowModel(d, n_layers=n_layers, hidden=hidden, s_max=s_max)
    for layer, second in zip(flow.layers, pattern):
        layer.transform_second_half = second
        for name in LAYER_PARAM_NAMES:
            arr, offset = _take(mv, offset, layer.params[name].shape)
            layer.params[name] = arr
    sidecar_path = Path(str(path) + ".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return enc, flow, meta
