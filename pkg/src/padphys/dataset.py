"""Turn manifest clips into frame-pair arrays and per-video scores."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .manifest import ClipEntry, DatasetManifest
from .metrics import BONAFIDE, VideoScore
from .network import ModelWeights, predict
from .preprocess import PreprocessConfig, boxes_from_lists, load_clip, prepare_clip, standardize_clip


class DataError(ValueError):
    pass


@dataclass
class PairSet:
    motion: np.ndarray  # [N, 3, S, S]
    appearance: np.ndarray  # [N, 3, S, S]
    target: np.ndarray  # [N]
    clip_index: np.ndarray  # [N], index into ``clips``
    clips: list[ClipEntry]

    def __len__(self) -> int:
        return len(self.target)


def pair_indices(n_pairs: int, limit: Optional[int]) -> np.ndarray:
    """Evenly spaced pair indices; all of them when ``limit`` is None or large enough."""
    if limit is None or limit >= n_pairs:
        return np.arange(n_pairs)
    return np.unique(np.round(np.linspace(0, n_pairs - 1, limit)).astype(int))


def clip_label(entry: ClipEntry) -> str:
    return BONAFIDE if entry.is_bonafide else entry.attack_type


def pulse_target(pulse: np.ndarray) -> np.ndarray:
    """Per-pair regression target: the pulse increment between consecutive frames, standardized per clip."""
    return standardize_clip(np.diff(np.asarray(pulse, dtype=np.float64)), "motion")


def prepare_entry(manifest: DatasetManifest, entry: ClipEntry, config: PreprocessConfig):
    path = manifest.resolve(entry)
    if not path.exists():
        raise DataError(f"clip {entry.id}: {path} not found")
    frames = load_clip(path)
    return prepare_clip(frames, boxes_from_lists(entry.bboxes), config)


def load_pairs(
    manifest: DatasetManifest,
    split: str,
    config: PreprocessConfig,
    target: str = "binary",
    pairs_per_clip: Optional[int] = None,
    pulse: Optional[dict] = None,
) -> PairSet:
    """Collect frame pairs for every clip in ``split``.

    ``target="binary"`` labels pairs 1 for bona-fide and 0 for attacks;
    ``"regression"`` uses :func:`pulse_target` of the clip's ground-truth pulse.
    """
    clips = manifest.split(split)
    if not clips:
        raise DataError(f"manifest has no {split!r} clips")
    if target == "regression" and pulse is None:
        raise DataError("regression targets need ground-truth pulse traces")
    ms, aps, ys, idx = [], [], [], []
    for ci, entry in enumerate(clips):
        motion, appearance = prepare_entry(manifest, entry, config)
        sel = pair_indices(len(motion), pairs_per_clip)
        if target == "binary":
            y = np.full(len(sel), 1.0 if entry.is_bonafide else 0.0)
        elif target == "regression":
            if entry.id not in pulse:
                raise DataError(f"no pulse trace for clip {entry.id}")
            y = pulse_target(pulse[entry.id])[sel]
        else:
            raise ValueError(f"unknown target {target!r}")
        ms.append(motion[sel])
        aps.append(appearance[sel])
        ys.append(y)
        idx.append(np.full(len(sel), ci))
    return PairSet(np.concatenate(ms), np.concatenate(aps), np.concatenate(ys), np.concatenate(idx), clips)


def load_pulse_for(manifest: DatasetManifest) -> Optional[dict]:
    if manifest.root is None:
        return None
    path = Path(manifest.root) / "pulse.npz"
    if not path.exists():
        return None
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


def score_clips(
    manifest: DatasetManifest,
    weights: ModelWeights,
    split: str,
    config: PreprocessConfig,
    batch_size: int = 64,
) -> list[VideoScore]:
    """Eval-mode frame scores for every pair of every clip in ``split``, pooled per video."""
    out = []
    for entry in manifest.split(split):
        motion, appearance = prepare_entry(manifest, entry, config)
        frame_scores = predict(motion, appearance, weights, batch_size)
        out.append(VideoScore(entry.id, clip_label(entry), frame_scores))
    return out
