"""Two-branch convolutional attention network (motion + appearance) with a swappable head."""
from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ParameterSet, Tensor

WEIGHTS_HEADER = "PADPHYS-W v1"
HEADS = ("regression", "binary")


class NumericError(FloatingPointError):
    pass


class WeightsFormatError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 36
    conv_filters: tuple = (32, 32, 64, 64)
    kernel: int = 3
    attention_points: tuple = (2, 4)
    head: str = "binary"
    head_hidden: int = 128
    dropout_rate: float = 0.25
    padding: str = "same"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "attention_points", tuple(int(p) for p in self.attention_points))
        n = len(self.conv_filters)
        if n == 0 or n % 2:
            raise ValueError("conv_filters must have a non-zero even length")
        if any(not 1 <= p <= n for p in self.attention_points):
            raise ValueError(f"attention_points must index conv layers 1..{n}")
        if len(set(self.attention_points)) != len(self.attention_points):
            raise ValueError("attention_points must be distinct")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.padding not in ("same", "valid"):
            raise ValueError("padding must be 'same' or 'valid'")
        if self.feature_shape()[1] < 1:
            raise ValueError("input_size too small for this many layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["attention_points"] = list(self.attention_points)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    def replace(self, **kw) -> "NetworkConfig":
        d = self.to_dict()
        d.update(kw)
        return NetworkConfig.from_dict(d)

    def body_dict(self) -> dict:
        d = self.to_dict()
        for k in ("head", "head_hidden", "dropout_rate"):
            d.pop(k)
        return d

    def config_hash(self) -> str:
        return _digest(self.to_dict())

    def body_hash(self) -> str:
        return _digest(self.body_dict())

    def feature_shape(self) -> tuple[int, int]:
        """(channels, spatial extent) of the motion features entering the head."""
        size = self.input_size
        shrink = 0 if self.padding == "same" else self.kernel - 1
        for i in range(len(self.conv_filters)):
            size -= shrink
            if i % 2 == 1:
                size //= 2
        return self.conv_filters[-1], size

    def n_features(self) -> int:
        c, s = self.feature_shape()
        return c * s * s


def _digest(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ModelWeights:
    config: NetworkConfig
    params: ParameterSet
    provenance: list = field(default_factory=list)

    @property
    def tag(self) -> Optional[str]:
        return self.provenance[-1]["tag"] if self.provenance else None

    def body_names(self) -> list[str]:
        return [n for n in self.params if not is_head_param(n)]

    def head_names(self) -> list[str]:
        return [n for n in self.params if is_head_param(n)]

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, self.params.copy(), [dict(p) for p in self.provenance])


def is_head_param(name: str) -> bool:
    return name.startswith("head.")


def _xavier(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _head_shapes(config: NetworkConfig) -> list[tuple[str, tuple]]:
    nf = config.n_features()
    return [
        ("head.hidden.weight", (config.head_hidden, nf)),
        ("head.hidden.bias", (config.head_hidden,)),
        ("head.out.weight", (1, config.head_hidden)),
        ("head.out.bias", (1,)),
    ]


def init_head(params: ParameterSet, config: NetworkConfig, rng: np.random.Generator, trainable: bool = True) -> None:
    for name, shape in _head_shapes(config):
        if name.endswith("bias"):
            value = np.zeros(shape)
        else:
            value = _xavier(rng, shape, shape[1], shape[0])
        params.add(name, value, trainable)


def init_weights(config: NetworkConfig, seed: int = 0) -> ModelWeights:
    """Xavier-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    k = config.kernel
    last_att = max(config.attention_points, default=0)
    for branch in ("motion", "appearance"):
        c_in = 3
        for i, c_out in enumerate(config.conv_filters, start=1):
            if branch == "appearance" and i > last_att:
                break
            params.add(f"{branch}.conv{i}.weight", _xavier(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k))
            params.add(f"{branch}.conv{i}.bias", np.zeros(c_out))
            c_in = c_out
    for p in config.attention_points:
        c = config.conv_filters[p - 1]
        params.add(f"attention{p}.weight", _xavier(rng, (1, c, 1, 1), c, 1))
        params.add(f"attention{p}.bias", np.zeros(1))
    init_head(params, config, rng)
    return ModelWeights(config, params)


# ---------------------------------------------------------------------------
# forward pass


def attention_mask(features: Tensor, proj: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Soft spatial mask from appearance features.

    ``sigmoid(1x1 conv)`` normalized so each sample's mask sums to h*w/2.
    Works on [C, h, w] or [N, C, h, w]; output has a single channel.
    """
    if bias is None:
        bias = Tensor(np.zeros(1))
    m = T.sigmoid(T.conv2d(features, proj, bias, padding="valid"))
    h, w = m.shape[-2:]
    if m.ndim == 3:
        total = T.sum_axis(T.reshape(m, (1, h * w)), axis=1)
        total = T.reshape(total, (1, 1, 1))
    else:
        n = m.shape[0]
        total = T.sum_axis(T.reshape(m, (n, h * w)), axis=1)
        total = T.reshape(total, (n, 1, 1, 1))
    return T.div(T.mul(m, Tensor(h * w / 2.0)), total)


def _check(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation in layer {layer}")
    return t


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class ForwardResult:
    score: Tensor
    features: Tensor
    masks: dict


def body_forward(motion, appearance, weights: ModelWeights, mode: str = "eval",
                 rng: Optional[np.random.Generator] = None) -> tuple[Tensor, dict]:
    """Run both branches up to the flatten layer; returns (features, attention masks)."""
    cfg = weights.config
    p = weights.params
    training = mode == "train"
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    m = _as_input(motion)
    a = _as_input(appearance)
    if m.shape != a.shape:
        raise T.ShapeError(f"motion {m.shape} and appearance {a.shape} inputs differ")
    if m.shape[-3:] != (3, cfg.input_size, cfg.input_size):
        raise T.ShapeError(f"inputs must end in (3, {cfg.input_size}, {cfg.input_size}), got {m.shape}")
    batched = m.ndim == 4
    last_att = max(cfg.attention_points, default=0)
    masks = {}
    for i in range(1, len(cfg.conv_filters) + 1):
        m = _check(T.tanh(T.conv2d(m, p[f"motion.conv{i}.weight"], p[f"motion.conv{i}.bias"], cfg.padding)),
                   f"motion.conv{i}")
        if i <= last_att:
            a = _check(T.tanh(T.conv2d(a, p[f"appearance.conv{i}.weight"], p[f"appearance.conv{i}.bias"],
                                       cfg.padding)), f"appearance.conv{i}")
        if i in cfg.attention_points:
            mask = _check(attention_mask(a, p[f"attention{i}.weight"], p[f"attention{i}.bias"]), f"attention{i}")
            masks[i] = mask
            m = T.mul(m, mask)
        if i % 2 == 0:
            m = T.dropout(T.avg_pool2x2(m), cfg.dropout_rate, rng, training)
            if i < last_att:
                a = T.dropout(T.avg_pool2x2(a), cfg.dropout_rate, rng, training)
    return T.flatten(m, batched=batched), masks


def head_forward(features, weights: ModelWeights, mode: str = "eval",
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    cfg = weights.config
    p = weights.params
    f = _as_input(features)
    h = _check(T.tanh(T.dense(f, p["head.hidden.weight"], p["head.hidden.bias"])), "head.hidden")
    h = T.dropout(h, cfg.dropout_rate, rng, mode == "train")
    out = _check(T.dense(h, p["head.out.weight"], p["head.out.bias"]), "head.out")
    out = T.reshape(out, out.shape[:-1])
    if cfg.head == "binary":
        out = T.sigmoid(out)
    return out


def forward(motion, appearance, weights: ModelWeights, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> ForwardResult:
    """Score one frame pair (scalar output) or a batch of them (shape [N])."""
    feats, masks = body_forward(motion, appearance, weights, mode, rng)
    return ForwardResult(head_forward(feats, weights, mode, rng), feats, masks)


def predict(motion: np.ndarray, appearance: np.ndarray, weights: ModelWeights, batch_size: int = 64) -> np.ndarray:
    """Eval-mode scores for stacked frame pairs [N, 3, S, S]."""
    out = []
    for i in range(0, len(motion), batch_size):
        out.append(forward(motion[i:i + batch_size], appearance[i:i + batch_size], weights).score.data)
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# persistence


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape: list) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(s), dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise WeightsFormatError(f"parameter data has {arr.size} values, shape {shape} needs more or fewer")
    return arr.reshape(shape)


def weights_to_text(w: ModelWeights) -> str:
    doc = {
        "config": w.config.to_dict(),
        "config_hash": w.config.config_hash(),
        "provenance": w.provenance,
        "params": [
            {"name": name, "shape": list(t.shape), "trainable": w.params.trainable(name), "data": _encode(t.data)}
            for name, t in w.params.items()
        ],
    }
    return WEIGHTS_HEADER + "\n" + json.dumps(doc, indent=1) + "\n"


def atomic_write_text(path: Path | str, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(w: ModelWeights, path: Path | str) -> None:
    atomic_write_text(path, weights_to_text(w))


def load_weights(path: Path | str) -> ModelWeights:
    text = Path(path).read_text()
    header, _, body = text.partition("\n")
    if header != WEIGHTS_HEADER:
        raise WeightsFormatError(f"{path}: expected header {WEIGHTS_HEADER!r}, found {header[:40]!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise WeightsFormatError(f"{path}: malformed JSON body") from exc
    config = NetworkConfig.from_dict(doc["config"])
    if doc.get("config_hash") != config.config_hash():
        raise WeightsFormatError(f"{path}: stored config hash does not match its config")
    params = ParameterSet()
    for entry in doc["params"]:
        params.add(entry["name"], _decode(entry["data"], entry["shape"]), bool(entry["trainable"]))
    return ModelWeights(config, params, doc.get("provenance", []))


def check_compatible(w: ModelWeights, config: NetworkConfig, body_only: bool = False) -> None:
    """Raise :class:`ConfigMismatchError` unless ``w`` can be loaded into a model built from ``config``."""
    if body_only:
        if w.config.body_hash() != config.body_hash():
            raise ConfigMismatchError(
                f"body config hash {w.config.body_hash()} does not match model body {config.body_hash()}")
    elif w.config.config_hash() != config.config_hash():
        raise ConfigMismatchError(
            f"weights config hash {w.config.config_hash()} ({w.config.head} head) does not match "
            f"model config hash {config.config_hash()} ({config.head} head)")
