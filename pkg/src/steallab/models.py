"""Desk-scale victim/clone classifiers and query generators, plus their file format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .autodiff import nn
from .autodiff.tensor import Tensor, as_tensor

CAPACITIES = ("tiny", "small", "medium")

# hidden widths for the mlp family
MLP_PRESETS = {"tiny": (16, 16), "small": (64, 64), "medium": (128, 128, 128)}
# (conv1 channels, conv2 channels, dense hidden) for the conv family
CONV_PRESETS = {"tiny": (4, 8, 32), "small": (8, 16, 64), "medium": (16, 32, 128)}

MODEL_MAGIC = b"STLMODEL"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    """Model file is corrupt, truncated, or does not match its declared spec."""


class UnsupportedVersionError(ModelFileError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    input_shape: tuple[int, ...]
    num_classes: int
    capacity: str = "small"
    family: str = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.capacity not in CAPACITIES:
            raise ValueError(f"capacity must be one of {CAPACITIES}, got {self.capacity!r}")
        if self.family not in ("mlp", "conv"):
            raise ValueError(f"family must be 'mlp' or 'conv', got {self.family!r}")
        if len(self.input_shape) == 3 and self.family != "conv":
            raise ValueError("image inputs (C, H, W) need the conv family")
        if self.family == "conv":
            if len(self.input_shape) != 3:
                raise ValueError("conv family needs a (C, H, W) input shape")
            _, h, w = self.input_shape
            if h % 4 or w % 4:
                raise ValueError(f"conv family needs H and W divisible by 4, got {h}x{w}")
        elif len(self.input_shape) != 1:
            raise ValueError("mlp family needs a (d,) input shape")


@dataclass(frozen=True)
class GeneratorSpec:
    """Query generator layout.

    For image outputs ``num_conv_blocks`` counts upsample-conv-batchnorm-ReLU
    blocks; for vector outputs it counts linear-batchnorm-ReLU hidden blocks.
    Zero blocks gives a single linear map followed by tanh.
    """

    output_shape: tuple[int, ...]
    latent_dim: int = 64
    num_conv_blocks: int = 3
    base_channels: int = 32
    upsample_mode: str = "nearest"

    def __post_init__(self):
        object.__setattr__(self, "output_shape", tuple(int(s) for s in self.output_shape))
        if self.latent_dim < 1 or self.base_channels < 1:
            raise ValueError("latent_dim and base_channels must be positive")
        if not 0 <= self.num_conv_blocks <= 3:
            raise ValueError(f"num_conv_blocks must be in 0..3, got {self.num_conv_blocks}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ValueError(f"upsample_mode must be nearest or bilinear, got {self.upsample_mode!r}")
        if len(self.output_shape) == 3:
            _, h, w = self.output_shape
            step = 2 ** self.num_conv_blocks
            if h % step or w % step:
                raise ValueError(f"output {h}x{w} not divisible by 2**num_conv_blocks={step}")
        elif len(self.output_shape) != 1:
            raise ValueError("output_shape must be (d,) or (C, H, W)")


def _spec_from_dict(cls, d: dict):
    d = dict(d)
    for key in ("input_shape", "output_shape"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)


class _Model:
    kind = ""

    def __init__(self, spec, net: nn.Module):
        self.spec = spec
        self.net = net

    # mode handling
    @property
    def training(self) -> bool:
        return self.net.training

    def train(self, mode: bool = True):
        self.net.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def named_parameters(self):
        return list(self.net.named_parameters())

    def parameters(self, trainable_only: bool = True):
        return self.net.parameters(trainable_only)

    def zero_grad(self) -> None:
        self.net.zero_grad()

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(p.size for p in self.parameters(trainable_only))

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ModelFileError(f"parameter names differ from spec: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if params[name].shape != arr.shape:
                raise ModelFileError(f"parameter {name!r}: shape {arr.shape} does not match spec {params[name].shape}")
            params[name].data[...] = arr


class ClassifierModel(_Model):
    kind = "classifier"

    def __call__(self, x) -> Tensor:
        return self.classify(x)

    def classify(self, x) -> Tensor:
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"classify: expected inputs of shape (N, {self.spec.input_shape}), got {x.shape}")
        return self.net(x)


class GeneratorModel(_Model):
    kind = "generator"

    def __call__(self, z) -> Tensor:
        return self.generate(z)

    def generate(self, z) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(f"generate: expected latent batch (N, {self.spec.latent_dim}), got {z.shape}")
        return self.net(z)

    def sample_latent(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.spec.latent_dim))


def build_classifier(spec: ClassifierSpec, seed) -> ClassifierModel:
    rng = np.random.default_rng(seed)
    k = spec.num_classes
    if spec.family == "mlp":
        widths = MLP_PRESETS[spec.capacity]
        layers: list[nn.Module] = []
        prev = spec.input_shape[0]
        for wdt in widths:
            layers += [nn.Linear(prev, wdt, rng), nn.ReLU()]
            prev = wdt
        layers.append(nn.Linear(prev, k, rng))
        return ClassifierModel(spec, nn.Sequential(*layers))

    c1, c2, hidden = CONV_PRESETS[spec.capacity]
    c, h, w = spec.input_shape
    net = nn.Sequential(
        nn.Conv2d(c, c1, 3, rng, padding=1, bias=False), nn.BatchNorm(c1), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(c1, c2, 3, rng, padding=1, bias=False), nn.BatchNorm(c2), nn.ReLU(), nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(c2 * (h // 4) * (w // 4), hidden, rng), nn.ReLU(),
        nn.Linear(hidden, k, rng),
    )
    return ClassifierModel(spec, net)


def classifier_param_count(spec: ClassifierSpec) -> int:
    """Closed-form trainable parameter count for a classifier spec."""
    k = spec.num_classes
    if spec.family == "mlp":
        dims = (spec.input_shape[0],) + MLP_PRESETS[spec.capacity] + (k,)
        return sum(a * b + b for a, b in zip(dims, dims[1:]))
    c1, c2, hidden = CONV_PRESETS[spec.capacity]
    c, h, w = spec.input_shape
    flat = c2 * (h // 4) * (w // 4)
    return (9 * c * c1 + 2 * c1) + (9 * c1 * c2 + 2 * c2) + (flat * hidden + hidden) + (hidden * k + k)


def _block_channels(spec: GeneratorSpec) -> list[int]:
    # halve per block, never below 8
    chans = [spec.base_channels]
    for _ in range(spec.num_conv_blocks):
        chans.append(max(8, chans[-1] // 2))
    return chans


def build_generator(spec: GeneratorSpec, seed) -> GeneratorModel:
    rng = np.random.default_rng(seed)
    out = spec.output_shape
    nb = spec.num_conv_blocks
    if nb == 0:
        size = int(np.prod(out))
        layers = [nn.Linear(spec.latent_dim, size, rng), nn.Tanh()]
        if len(out) == 3:
            layers.append(nn.Reshape(*out))
        return GeneratorModel(spec, nn.Sequential(*layers))

    if len(out) == 1:
        layers = []
        prev = spec.latent_dim
        for _ in range(nb):
            layers += [nn.Linear(prev, spec.base_channels, rng), nn.BatchNorm(spec.base_channels), nn.ReLU()]
            prev = spec.base_channels
        layers += [nn.Linear(prev, out[0], rng), nn.Tanh()]
        return GeneratorModel(spec, nn.Sequential(*layers))

    c, h, w = out
    h0, w0 = h // 2 ** nb, w // 2 ** nb
    chans = _block_channels(spec)
    layers = [
        nn.Linear(spec.latent_dim, chans[0] * h0 * w0, rng),
        nn.Reshape(chans[0], h0, w0),
        nn.BatchNorm(chans[0]),
    ]
    for cin, cout in zip(chans, chans[1:]):
        layers += [
            nn.Upsample(2, spec.upsample_mode),
            nn.Conv2d(cin, cout, 3, rng, padding=1, bias=False),
            nn.BatchNorm(cout),
            nn.ReLU(),
        ]
    layers += [nn.Conv2d(chans[-1], c, 1, rng), nn.Tanh()]
    return GeneratorModel(spec, nn.Sequential(*layers))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

Model = Union[ClassifierModel, GeneratorModel]


def _model_bytes(model: Model) -> bytes:
    names, shapes, chunks = [], [], []
    for name, p in model.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    header = {
        "kind": model.kind,
        "spec": asdict(model.spec),
        "params": [{"name": n, "shape": s} for n, s in zip(names, shapes)],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(hbytes)) + hbytes + payload


def save_model(model: Model, path) -> str:
    """Write ``model`` and return the sha256 of the whole file."""
    blob = _model_bytes(model)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_model(path) -> Model:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != MODEL_MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"{path}: model file version {version} is not supported (expected {MODEL_VERSION})")
    try:
        header = json.loads(blob[16:16 + hlen])
    except (ValueError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header") from exc
    payload = blob[16 + hlen:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ModelFileError(f"{path}: checksum mismatch (file truncated or corrupted)")

    if header["kind"] == "classifier":
        model: Model = build_classifier(_spec_from_dict(ClassifierSpec, header["spec"]), 0)
    elif header["kind"] == "generator":
        model = build_generator(_spec_from_dict(GeneratorSpec, header["spec"]), 0)
    else:
        raise ModelFileError(f"{path}: unknown model kind {header['kind']!r}")

    state, offset = {}, 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        state[entry["name"]] = np.frombuffer(payload[offset:offset + n], dtype="<f8").astype(np.float64).reshape(shape)
        offset += n
    model.load_state(state)
    model.eval()
    return model
