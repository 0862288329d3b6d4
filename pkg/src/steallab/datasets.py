"""Synthetic classification tasks with deterministic generation and a checksummed file format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FAMILIES = ("gaussian_blobs", "concentric_rings", "grid_digits_8x8")

DATA_MAGIC = b"STLDATA\x00"
DATA_VERSION = 1


class DatasetFileError(ValueError):
    pass


class UnsupportedDatasetVersion(DatasetFileError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    family: str
    num_classes: int
    input_dim: int = 2
    samples_per_class: int = 500
    test_samples_per_class: int = 200
    separation: float = 4.0
    seed: int = 0
    background_spread: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}; expected one of {FAMILIES}")
        if self.num_classes < 2:
            raise ValueError(f"{self.family} needs at least 2 classes, got {self.num_classes}")
        if self.family == "grid_digits_8x8" and self.num_classes > 10:
            raise ValueError("grid_digits_8x8 has at most 10 classes")
        if self.family == "concentric_rings" and self.input_dim < 2:
            raise ValueError("concentric_rings needs input_dim >= 2")
        if self.samples_per_class < 1 or self.test_samples_per_class < 1:
            raise ValueError("samples per class must be >= 1")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if not self.background_spread >= 1.0:
            raise ValueError("background_spread must be >= 1")

    @property
    def input_shape(self) -> tuple[int, ...]:
        if self.family == "grid_digits_8x8":
            return (1, 8, 8)
        return (self.input_dim,)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes and self.split == other.split
                and self.provenance == other.provenance
                and self.inputs.shape == other.inputs.shape
                and self.inputs.tobytes() == other.inputs.tobytes()
                and self.labels.tobytes() == other.labels.tobytes())

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

# 5x7 glyphs, rows top to bottom
_GLYPHS = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}


def glyph(digit: int) -> np.ndarray:
    return np.array([[int(ch) for ch in row] for row in _GLYPHS[digit]], dtype=np.float64)


def _split_rngs(spec: TaskSpec) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    layout, train, test = np.random.SeedSequence(spec.seed).spawn(3)
    return np.random.default_rng(layout), np.random.default_rng(train), np.random.default_rng(test)


def _labels(k: int, per_class: int) -> np.ndarray:
    return np.repeat(np.arange(k), per_class)


def _blob_centers(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    # orthonormal directions when they fit, evenly spaced angles in the plane,
    # random unit vectors otherwise
    k, d = spec.num_classes, spec.input_dim
    if k <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        dirs = q.T
    elif d == 2:
        theta = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(k) / k
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        dirs = rng.standard_normal((k, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return spec.separation * dirs


def _blobs(spec, layout, rng, per_class):
    # background_spread > 1 turns class 0 into a broad blob at the origin
    centers = _blob_centers(spec, layout)
    y = _labels(spec.num_classes, per_class)
    std = np.ones((y.size, 1))
    if spec.background_spread > 1.0:
        centers[0] = 0.0
        std[y == 0] = spec.background_spread
    x = centers[y] + std * rng.standard_normal((y.size, spec.input_dim))
    return x, y


def _rings(spec, layout, rng, per_class):
    # ring k has radius (k + 1) * separation; unit-variance radial noise
    y = _labels(spec.num_classes, per_class)
    theta = rng.uniform(0, 2 * np.pi, y.size)
    r = (y + 1) * spec.separation + rng.standard_normal(y.size)
    x = np.zeros((y.size, spec.input_dim))
    x[:, 0] = r * np.cos(theta)
    x[:, 1] = r * np.sin(theta)
    if spec.input_dim > 2:
        x[:, 2:] = rng.standard_normal((y.size, spec.input_dim - 2))
    return x, y


def _digits(spec, rng, per_class):
    # pixel noise std shrinks as separation grows
    y = _labels(spec.num_classes, per_class)
    n = y.size
    x = np.zeros((n, 1, 8, 8))
    dx = rng.integers(0, 4, n)
    dy = rng.integers(0, 2, n)
    ink = rng.uniform(0.7, 1.0, n)
    for i in range(n):
        x[i, 0, dy[i]:dy[i] + 7, dx[i]:dx[i] + 5] = glyph(int(y[i])) * ink[i]
    x = 2.0 * x - 1.0 + rng.standard_normal(x.shape) * (0.5 / spec.separation)
    return np.clip(x, -1.0, 1.0), y


def _scale_to_unit_box(*arrays: np.ndarray) -> list[np.ndarray]:
    scale = max(float(np.abs(a).max()) for a in arrays)
    return [a / scale for a in arrays]


def generate(spec: TaskSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Build the (train, test) splits for ``spec``; pure given the spec."""
    layout, rng_train, rng_test = _split_rngs(spec)
    if spec.family == "grid_digits_8x8":
        xtr, ytr = _digits(spec, rng_train, spec.samples_per_class)
        xte, yte = _digits(spec, rng_test, spec.test_samples_per_class)
    else:
        make = _blobs if spec.family == "gaussian_blobs" else _rings
        layout_state = layout.bit_generator.state
        xtr, ytr = make(spec, layout, rng_train, spec.samples_per_class)
        layout.bit_generator.state = layout_state
        xte, yte = make(spec, layout, rng_test, spec.test_samples_per_class)
        xtr, xte = _scale_to_unit_box(xtr, xte)
    prov = {"task": asdict(spec)}
    return (LabeledDataset(xtr, ytr, spec.num_classes, "train", dict(prov)),
            LabeledDataset(xte, yte, spec.num_classes, "test", dict(prov)))


def arithmetic_counts(start: int, stop: int, k: int) -> list[int]:
    """``k`` evenly spaced integer counts from ``start`` to ``stop`` inclusive."""
    if k < 2:
        return [start]
    step = (stop - start) / (k - 1)
    if step != int(step):
        raise ValueError(f"({stop} - {start}) is not divisible into {k - 1} equal steps")
    return [start + int(step) * i for i in range(k)]


def make_unbalanced(dataset: LabeledDataset, counts: Sequence[int], seed) -> LabeledDataset:
    """Subsample so class ``i`` keeps exactly ``counts[i]`` rows, then shuffle."""
    counts = [int(c) for c in counts]
    if len(counts) != dataset.num_classes:
        raise ValueError(f"need {dataset.num_classes} counts, got {len(counts)}")
    rng = np.random.default_rng(seed)
    available = dataset.class_counts()
    picked = []
    for cls, want in enumerate(counts):
        if want < 0:
            raise ValueError(f"class {cls}: negative count {want}")
        if want > available[cls]:
            raise ValueError(f"class {cls}: requested {want} samples but only {available[cls]} available")
        idx = np.flatnonzero(dataset.labels == cls)
        picked.append(rng.choice(idx, size=want, replace=False))
    order = rng.permutation(np.concatenate(picked))
    prov = dict(dataset.provenance)
    prov["unbalanced"] = {"counts": counts, "seed": seed}
    return LabeledDataset(dataset.inputs[order], dataset.labels[order], dataset.num_classes, dataset.split, prov)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save(dataset: LabeledDataset, path) -> None:
    x = np.ascontiguousarray(dataset.inputs, dtype="<f8")
    y = np.ascontiguousarray(dataset.labels, dtype="<i8")
    payload = x.tobytes() + y.tobytes()
    header = {
        "num_classes": dataset.num_classes,
        "split": dataset.split,
        "provenance": dataset.provenance,
        "input_shape": list(x.shape),
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(DATA_MAGIC + struct.pack("<II", DATA_VERSION, len(hbytes)) + hbytes + payload)


def load(path) -> LabeledDataset:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != DATA_MAGIC:
        raise DatasetFileError(f"{path}: not a dataset file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != DATA_VERSION:
        raise UnsupportedDatasetVersion(f"{path}: dataset file version {version} is not supported (expected {DATA_VERSION})")
    try:
        header = json.loads(blob[16:16 + hlen])
    except (ValueError, UnicodeDecodeError) as exc:
        raise DatasetFileError(f"{path}: checksum mismatch (corrupt header)") from exc
    payload = blob[16 + hlen:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise DatasetFileError(f"{path}: checksum mismatch (file truncated or corrupted)")
    shape = tuple(header["input_shape"])
    nx = int(np.prod(shape)) * 8
    x = np.frombuffer(payload[:nx], dtype="<f8").astype(np.float64).reshape(shape)
    y = np.frombuffer(payload[nx:], dtype="<i8").astype(np.int64)
    return LabeledDataset(x, y, header["num_classes"], header["split"], header["provenance"])
