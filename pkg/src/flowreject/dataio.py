"""Dataset ingestion, validation, and the seeded synthetic TP/FP generator.

On-disk format: a JSON manifest (schema version, dimensions, class table,
SHA-256 of the payload) next to a payload that is either a CSV
(``id,label,fp_class,f0..f{d-1}``) for inspection or raw little-endian
float64 with a fixed 32-byte header for scale.  For the binary payload the
labels and class tags live in the manifest.

The synthetic generator draws TPs from a 2-D latent Gaussian mixture and
each FP class from a shifted latent shape (gaussian blob, ring, or uniform
box), lifts everything into ``d_in`` dimensions through a seeded orthonormal
map, and adds isotropic ambient noise.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SCHEMA_VERSION = 1
BIN_MAGIC = b"FRDS"
FP_SHAPES = ("gaussian", "ring", "uniform-box")


@dataclass
class Dataset:
    features: np.ndarray            # (n, d_in) float64
    labels: np.ndarray              # (n,) int64, 0=TP 1=FP
    fp_class: list                  # per-sample class tag, None for TPs
    class_names: list
    provenance: str = ""

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "Dataset":
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        bad = np.nonzero(~np.isfinite(self.features).all(axis=1))[0]
        if len(bad):
            raise DataError(f"non-finite feature values at row {int(bad[0])}")
        if self.labels.shape != (self.n,):
            raise DataError("labels length does not match features")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be TP (0) or FP (1)")
        if len(self.fp_class) != self.n:
            raise DataError("fp_class length does not match features")
        for i, (lab, tag) in enumerate(zip(self.labels, self.fp_class)):
            if lab == 1 and not tag:
                raise DataError(f"FP sample at row {i} is missing its class tag")
            if lab == 0 and tag:
                raise DataError(f"TP sample at row {i} must not carry a class tag")
            if tag and tag not in self.class_names:
                raise DataError(f"unknown FP class {tag!r} at row {i}")
        return self

    def fp_class_array(self) -> np.ndarray:
        return np.array([t if t else "" for t in self.fp_class])


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _csv_payload(ds: Dataset) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "fp_class"] + [f"f{j}" for j in range(ds.d_in)])
    for i in range(ds.n):
        label = "FP" if ds.labels[i] == 1 else "TP"
        tag = ds.fp_class[i] or ""
        w.writerow([i, label, tag] + [repr(float(v)) for v in ds.features[i]])
    return buf.getvalue().encode()


def _bin_payload(ds: Dataset) -> bytes:
    header = struct.pack("<4sIQQ", BIN_MAGIC, SCHEMA_VERSION, ds.n, ds.d_in)
    header += b"\x00" * (32 - len(header))
    return header + np.ascontiguousarray(ds.features, dtype="<f8").tobytes()


def save_dataset(ds: Dataset, out_dir, fmt: str = "csv", name: str = "dataset") -> Path:
    """Write payload + manifest; returns the manifest path."""
    ds.validate()
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"unknown dataset format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload_name = f"{name}.{fmt}"
    payload = _csv_payload(ds) if fmt == "csv" else _bin_payload(ds)
    (out_dir / payload_name).write_bytes(payload)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "d_in": ds.d_in,
        "n": ds.n,
        "class_table": list(ds.class_names),
        "payload": payload_name,
        "format": fmt,
        "sha256": _sha256(payload),
        "provenance": ds.provenance,
    }
    if fmt == "bin":
        manifest["labels"] = ds.labels.tolist()
        manifest["fp_class"] = [t if t else "" for t in ds.fp_class]
    manifest_path = out_dir / f"{name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def _parse_csv(payload: bytes, d_in: int):
    rows = list(csv.reader(io.StringIO(payload.decode())))
    header, rows = rows[0], rows[1:]
    if header[:3] != ["id", "label", "fp_class"]:
        raise DataError(f"unexpected CSV header {header[:3]}")
    feats = np.empty((len(rows), d_in))
    labels = np.empty(len(rows), dtype=np.int64)
    tags = []
    for i, row in enumerate(rows):
        if row[1] not in ("TP", "FP"):
            raise DataError(f"label {row[1]!r} outside {{TP, FP}} at row {i}")
        labels[i] = 1 if row[1] == "FP" else 0
        tags.append(row[2] or None)
        feats[i] = [float(v) for v in row[3:3 + d_in]]
    return feats, labels, tags


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported schema version {manifest.get('schema_version')}")
    payload_path = manifest_path.parent / manifest["payload"]
    payload = payload_path.read_bytes()
    if _sha256(payload) != manifest["sha256"]:
        raise DataError(f"payload digest mismatch for {payload_path}")
    d_in = manifest["d_in"]
    if manifest["format"] == "csv":
        feats, labels, tags = _parse_csv(payload, d_in)
    else:
        magic, version, n, d = struct.unpack("<4sIQQ", payload[:24])
        if magic != BIN_MAGIC or version != SCHEMA_VERSION:
            raise DataError("bad binary payload header")
        if (n, d) != (manifest["n"], d_in):
            raise DataError("binary header disagrees with manifest")
        feats = np.frombuffer(payload[32:], dtype="<f8").reshape(n, d).copy()
        labels = np.asarray(manifest["labels"], dtype=np.int64)
        tags = [t or None for t in manifest["fp_class"]]
    ds = Dataset(features=feats, labels=labels, fp_class=tags,
                 class_names=list(manifest["class_table"]),
                 provenance=manifest["sha256"])
    return ds.validate()


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class FPClassSpec:
    name: str
    shape: str                     # gaussian | ring | uniform-box
    shift: tuple = (0.0, 0.0)      # center in the 2-D latent plane
    scale: float = 1.0
    count: int = 300

    def __post_init__(self):
        if self.shape not in FP_SHAPES:
            raise ConfigError(f"unknown FP shape {self.shape!r}, expected one of {FP_SHAPES}")
        if self.count < 1:
            raise ConfigError("FP class count must be >= 1")


@dataclass
class SynthSpec:
    d_in: int = 16
    tp_components: list = field(default_factory=lambda: [
        {"mean": (-2.0, -1.0), "cov": ((0.25, 0.0), (0.0, 0.08)), "weight": 1.0},
        {"mean": (2.0, -1.0), "cov": ((0.08, 0.0), (0.0, 0.25)), "weight": 1.0},
        {"mean": (0.0, 1.5), "cov": ((0.2, 0.1), (0.1, 0.2)), "weight": 1.0},
    ])
    fp_classes: list = field(default_factory=list)
    tp_ring: float | None = None   # if set, TPs come from a ring of this radius instead
    noise: float = 0.15
    n_tp: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_tp < 1:
            raise ConfigError("n_tp must be >= 1")
        if self.d_in < 2:
            raise ConfigError("d_in must be >= 2")
        self.fp_classes = [
            c if isinstance(c, FPClassSpec) else FPClassSpec(**c)
            for c in self.fp_classes
        ]

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "tp_components": [
                {"mean": list(c["mean"]), "cov": [list(r) for r in c["cov"]],
                 "weight": c["weight"]}
                for c in self.tp_components
            ],
            "fp_classes": [
                {"name": c.name, "shape": c.shape, "shift": list(c.shift),
                 "scale": c.scale, "count": c.count}
                for c in self.fp_classes
            ],
            "tp_ring": self.tp_ring,
            "noise": self.noise,
            "n_tp": self.n_tp,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def _orthonormal_lift(d_in: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d_in, 2)))
    return q


def _draw_latent_class(spec: FPClassSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.count
    shift = np.asarray(spec.shift, dtype=np.float64)
    if spec.shape == "gaussian":
        return shift + spec.scale * rng.standard_normal((n, 2))
    if spec.shape == "ring":
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = spec.scale * (1.0 + 0.05 * rng.standard_normal(n))
        return shift + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return shift + spec.scale * rng.uniform(-1.0, 1.0, (n, 2))


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset from a latent-plane spec."""
    rng = np.random.default_rng(spec.seed)
    lift = _orthonormal_lift(spec.d_in, spec.seed + 1)

    if spec.tp_ring is not None:
        theta = rng.uniform(0.0, 2.0 * np.pi, spec.n_tp)
        r = spec.tp_ring * (1.0 + 0.05 * rng.standard_normal(spec.n_tp))
        z_tp = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    else:
        weights = np.array([c["weight"] for c in spec.tp_components], dtype=np.float64)
        weights = weights / weights.sum()
        comp = rng.choice(len(weights), size=spec.n_tp, p=weights)
        z_tp = np.empty((spec.n_tp, 2))
        for k, c in enumerate(spec.tp_components):
            idx = np.nonzero(comp == k)[0]
            if len(idx):
                z_tp[idx] = rng.multivariate_normal(
                    np.asarray(c["mean"], dtype=np.float64),
                    np.asarray(c["cov"], dtype=np.float64), size=len(idx))

    blocks = [z_tp @ lift.T]
    labels = [np.zeros(spec.n_tp, dtype=np.int64)]
    tags: list = [None] * spec.n_tp
    for c in spec.fp_classes:
        z = _draw_latent_class(c, rng)
        blocks.append(z @ lift.T)
        labels.append(np.ones(c.count, dtype=np.int64))
        tags.extend([c.name] * c.count)
    feats = np.concatenate(blocks, axis=0)
    if spec.noise > 0:
        feats = feats + spec.noise * rng.standard_normal(feats.shape)
    ds = Dataset(features=feats, labels=np.concatenate(labels), fp_class=tags,
                 class_names=[c.name for c in spec.fp_classes],
                 provenance=f"synth(seed={spec.seed})")
    return ds.validate()


def preset_spec(name: str, seed: int = 0) -> SynthSpec:
    """Named generator presets spanning the difficulty range."""
    if name == "default":
        return SynthSpec(seed=seed, fp_classes=[
            FPClassSpec("near", "gaussian", shift=(3.5, 0.5), scale=0.6, count=300),
            FPClassSpec("ring", "ring", shift=(0.0, 0.0), scale=4.5, count=300),
            FPClassSpec("offbox", "uniform-box", shift=(9.0, 9.0), scale=2.0, count=300),
        ])
    if name == "easy":
        return SynthSpec(seed=seed, tp_components=[
            {"mean": (0.0, 0.0), "cov": ((1.0, 0.0), (0.0, 1.0)), "weight": 1.0}],
            fp_classes=[FPClassSpec("far", "gaussian", shift=(6.0, 0.0),
                                    scale=1.0, count=600)])
    if name == "hard":
        # FPs concentrated inside the TP support: density-only scoring is
        # misled, outlier exposure has room to help
        return SynthSpec(seed=seed, tp_components=[
            {"mean": (0.0, 0.0), "cov": ((1.0, 0.0), (0.0, 1.0)), "weight": 1.0}],
            fp_classes=[FPClassSpec("inlier-like", "gaussian", shift=(0.5, 0.0),
                                    scale=0.35, count=600)])
    if name == "confounded":
        # TP ring with an FP blob at its center: an invertible map over raw
        # features struggles, a learned (non-invertible) adapter separates
        return SynthSpec(seed=seed, tp_ring=2.0, noise=0.3, fp_classes=[
            FPClassSpec("center", "gaussian", shift=(0.0, 0.0), scale=0.5, count=600)])
    raise ConfigError(f"unknown preset {name!r}")


def two_moons(n: int, noise: float = 0.08, seed: int = 0) -> np.ndarray:
    """Seeded two-interleaving-half-circles sample in 2-D."""
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n2 = n - n1
    t1 = rng.uniform(0.0, np.pi, n1)
    t2 = rng.uniform(0.0, np.pi, n2)
    upper = np.column_stack([np.cos(t1), np.sin(t1)])
    lower = np.column_stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)])
    pts = np.concatenate([upper, lower], axis=0)
    return pts + noise * rng.standard_normal(pts.shape)
