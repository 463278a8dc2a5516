"""Training: loss functions and Adam, driven by one of three regimes.

* ``scratch``         -- fresh weights, everything trainable (physiological pretraining)
* ``full_retrain``    -- start from existing weights, everything trainable
* ``frozen_transfer`` -- keep the convolutional body fixed, train a new head
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .dataset import DataError, PairSet, load_pairs, load_pulse_for
from .manifest import DatasetManifest
from .network import (
    ModelWeights,
    NetworkConfig,
    body_forward,
    check_compatible,
    forward,
    head_forward,
    init_head,
    init_weights,
    is_head_param,
)
from .preprocess import PreprocessConfig
from .tensor import ParameterSet, Tensor

REGIMES = ("scratch", "full_retrain", "frozen_transfer")
REGIME_TAGS = {"scratch": "deepphys", "full_retrain": "deepfake", "frozen_transfer": "pad"}
BCE_CLAMP = 1e-7


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    regime: str = "scratch"
    loss: Optional[str] = None  # derived from the head when None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    patience: int = 10
    pairs_per_clip: Optional[int] = 32

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise TrainingError(f"regime must be one of {REGIMES}")
        if self.lr < 0:
            raise TrainingError("lr must be >= 0")
        if self.loss not in (None, "mse", "bce"):
            raise TrainingError("loss must be 'mse' or 'bce'")
        if self.batch_size < 1 or self.epochs < 0:
            raise TrainingError("batch_size must be >= 1 and epochs >= 0")

    def loss_for(self, head: str) -> str:
        expected = "mse" if head == "regression" else "bce"
        if self.loss is not None and self.loss != expected:
            raise TrainingError(f"{head} head requires {expected} loss, not {self.loss}")
        return expected


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    param_norm: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.3f}"])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# losses


def _target(target) -> Tensor:
    return Tensor(np.asarray(target, dtype=np.float64))


def mse_loss(pred: Tensor, target) -> Tensor:
    if pred.data.size == 0:
        raise TrainingError("empty prediction")
    t = _target(target)
    if t.shape != pred.shape:
        raise T.ShapeError(f"mse_loss: pred {pred.shape} vs target {t.shape}")
    return T.tensor_mean(T.square(pred - t))


def bce_loss(pred: Tensor, label) -> Tensor:
    """Mean binary cross-entropy; label 1 is bona-fide.  Predictions are clamped to [1e-7, 1 - 1e-7]."""
    if pred.data.size == 0:
        raise TrainingError("empty prediction")
    y = _target(label)
    if y.shape != pred.shape:
        raise T.ShapeError(f"bce_loss: pred {pred.shape} vs label {y.shape}")
    p = T.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one_minus = T.add(T.mul(p, Tensor(-1.0)), Tensor(1.0))
    ll = T.add(T.mul(y, T.log(p)), T.mul(Tensor(1.0 - y.data), T.log(one_minus)))
    return T.mul(T.tensor_mean(ll), Tensor(-1.0))


LOSSES = {"mse": mse_loss, "bce": bce_loss}


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update of every trainable parameter that has a gradient."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in params.trainable_names():
        p = params[name]
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise T.GradientError(f"non-finite gradient for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state


# ---------------------------------------------------------------------------
# training


def prepare_weights(net_config: NetworkConfig, cfg: TrainConfig,
                    init: Optional[ModelWeights]) -> ModelWeights:
    """Initial weights and trainable flags for a regime."""
    if cfg.regime == "scratch":
        if init is not None:
            raise TrainingError("scratch training starts from fresh weights; drop the initial weights")
        return init_weights(net_config, cfg.seed)
    if init is None:
        raise TrainingError(f"{cfg.regime} needs initial weights")
    check_compatible(init, net_config, body_only=True)
    params = ParameterSet()
    for name, t in init.params.items():
        if not is_head_param(name):
            params.add(name, T.Tensor(t.data.copy()), cfg.regime != "frozen_transfer")
    rng = np.random.default_rng([cfg.seed, 7])
    same_head = init.config.head_hidden == net_config.head_hidden and init.head_names()
    if cfg.regime == "full_retrain" and same_head:
        for name, t in init.params.items():
            if is_head_param(name):
                params.add(name, T.Tensor(t.data.copy()), True)
    else:
        init_head(params, net_config, rng)
    return ModelWeights(net_config, params, [dict(p) for p in init.provenance])


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def _param_norm(params: ParameterSet) -> float:
    return float(np.sqrt(sum(float(np.sum(t.data * t.data)) for _, t in params.items())))


class _Trainer:
    """Binds weights, data and loss; ``frozen`` trains the head on cached body features."""

    def __init__(self, weights: ModelWeights, loss: str, frozen: bool):
        self.weights = weights
        self.loss_fn = LOSSES[loss]
        self.frozen = frozen

    def inputs(self, data: PairSet):
        if not self.frozen:
            return (data.motion, data.appearance)
        feats = []
        for i in range(0, len(data), 128):
            f, _ = body_forward(data.motion[i:i + 128], data.appearance[i:i + 128], self.weights)
            feats.append(f.data)
        return (np.concatenate(feats),)

    def predict(self, inputs, idx, mode, rng):
        if self.frozen:
            return head_forward(inputs[0][idx], self.weights, mode, rng)
        return forward(inputs[0][idx], inputs[1][idx], self.weights, mode, rng).score

    def loss(self, inputs, target, batch: int = 128) -> float:
        n = len(target)
        total = 0.0
        for i in range(0, n, batch):
            idx = np.arange(i, min(i + batch, n))
            total += self.loss_fn(self.predict(inputs, idx, "eval", None), target[idx]).item() * len(idx)
        return total / n


def evaluate_loss(weights: ModelWeights, data: PairSet) -> float:
    loss = "mse" if weights.config.head == "regression" else "bce"
    trainer = _Trainer(weights, loss, frozen=False)
    return trainer.loss(trainer.inputs(data), data.target)


def fit(weights: ModelWeights, train: PairSet, val: PairSet, cfg: TrainConfig) -> TrainLog:
    """Optimize ``weights`` in place on prepared pairs; restores the best-validation snapshot."""
    loss = cfg.loss_for(weights.config.head)
    trainer = _Trainer(weights, loss, frozen=cfg.regime == "frozen_transfer")
    rng = np.random.default_rng(cfg.seed)
    params = weights.params
    start = time.perf_counter()
    tr_in, va_in = trainer.inputs(train), trainer.inputs(val)
    log = TrainLog()
    best = trainer.loss(va_in, val.target)
    log.records.append(EpochRecord(0, trainer.loss(tr_in, train.target), best, _param_norm(params),
                                   time.perf_counter() - start))
    snapshot = params.snapshot()
    state = AdamState()
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        losses, counts = [], []
        for idx in _batches(len(train), cfg.batch_size, rng):
            params.zero_grad()
            out = trainer.loss_fn(trainer.predict(tr_in, idx, "train", rng), train.target[idx])
            T.backward(out)
            adam_step(params, state, cfg)
            losses.append(out.item())
            counts.append(len(idx))
        params.zero_grad()
        train_loss = float(np.average(losses, weights=counts))
        val_loss = trainer.loss(va_in, val.target)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        log.records.append(EpochRecord(epoch, train_loss, val_loss, _param_norm(params),
                                       time.perf_counter() - start))
        if val_loss < best:
            best, snapshot, stale = val_loss, params.snapshot(), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    params.load_snapshot(snapshot)
    return log


def train(
    manifest: DatasetManifest,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    init: Optional[ModelWeights] = None,
    preprocess: PreprocessConfig = PreprocessConfig(),
    pulse: Optional[dict] = None,
) -> tuple[ModelWeights, TrainLog]:
    """Train under ``train_config.regime`` and return the best-validation weights with their log."""
    train_config.loss_for(net_config.head)
    weights = prepare_weights(net_config, train_config, init)
    target = "regression" if net_config.head == "regression" else "binary"
    if target == "regression" and pulse is None:
        pulse = load_pulse_for(manifest)
    for split in ("train", "val"):
        if not manifest.split(split):
            raise DataError(f"manifest has no {split!r} clips")
    tr = load_pairs(manifest, "train", preprocess, target, train_config.pairs_per_clip, pulse)
    va = load_pairs(manifest, "val", preprocess, target, train_config.pairs_per_clip, pulse)
    log = fit(weights, tr, va, train_config)
    weights.provenance.append({
        "tag": REGIME_TAGS[train_config.regime],
        "regime": train_config.regime,
        "head": net_config.head,
        "seed": train_config.seed,
        "epochs_run": len(log.records) - 1,
        "best_epoch": log.best_epoch,
        "preprocess": asdict(preprocess),
    })
    return weights, log
