"""Face-crop preprocessing and the two network input streams.

Frames are float arrays in [0, 1] with layout [3, H, W] (clips: [T, 3, H, W]).
Bounding boxes are square and given by their top-left corner and side.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

MOTION_EPS = 1e-8
STD_FLOOR = 1e-6
RAW_MAGIC = b"PPRAW1"


class BoxError(ValueError):
    pass


class ClipFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise BoxError(f"bounding box side must be positive, got {self.side}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.side / 2.0, self.y + self.side / 2.0

    def rounded(self) -> tuple[int, int, int]:
        return int(round(self.x)), int(round(self.y)), max(1, int(round(self.side)))


@dataclass(frozen=True)
class PreprocessConfig:
    expand_ratio: float = 0.8
    ema_alpha: float = 0.5
    target_size: int = 36
    standardize: bool = True

    def __post_init__(self):
        if self.expand_ratio < 0:
            raise ValueError("expand_ratio must be >= 0")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in (0, 1]")
        if self.target_size < 8:
            raise ValueError("target_size must be >= 8")


def expand_bbox(b: BoundingBox, frame_w: int, frame_h: int, ratio: float) -> BoundingBox:
    """Grow a square box about its center by ``ratio`` of its width, then fit it into the frame.

    A box that overhangs an edge is shifted back inside; one that is larger than
    the frame is shrunk to ``min(frame_w, frame_h)`` first.
    """
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    if b.side <= 0:
        raise BoxError("bounding box side must be positive")
    if ratio == 0 and 0 <= b.x and 0 <= b.y and b.x + b.side <= frame_w and b.y + b.side <= frame_h:
        return b
    cx, cy = b.center
    side = min(b.side * (1.0 + ratio), float(min(frame_w, frame_h)))
    x = min(max(cx - side / 2.0, 0.0), frame_w - side)
    y = min(max(cy - side / 2.0, 0.0), frame_h - side)
    return BoundingBox(x, y, side)


def ema_smooth(boxes: Sequence[BoundingBox], alpha: float) -> list[BoundingBox]:
    """Exponential moving average over x, y and side; no rounding is applied here."""
    if len(boxes) == 0:
        raise ValueError("ema_smooth needs at least one box")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    out = [boxes[0]]
    sx, sy, ss = boxes[0].x, boxes[0].y, boxes[0].side
    for b in boxes[1:]:
        sx = alpha * b.x + (1.0 - alpha) * sx
        sy = alpha * b.y + (1.0 - alpha) * sy
        ss = alpha * b.side + (1.0 - alpha) * ss
        out.append(BoundingBox(sx, sy, ss))
    return out


def center_box(frame_w: int, frame_h: int, fraction: float = 0.7) -> BoundingBox:
    """Fallback face box when the manifest carries none."""
    side = fraction * min(frame_w, frame_h)
    return BoundingBox((frame_w - side) / 2.0, (frame_h - side) / 2.0, side)


def _bilinear_axes(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if dst == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, target: int) -> np.ndarray:
    """Corner-aligned bilinear resize of [..., h, w] to [..., target, target]."""
    h, w = img.shape[-2:]
    r0, r1, fr = _bilinear_axes(h, target)
    c0, c1, fc = _bilinear_axes(w, target)
    top = img[..., r0, :] * (1.0 - fr)[:, None] + img[..., r1, :] * fr[:, None]
    return top[..., c0] * (1.0 - fc) + top[..., c1] * fc


def crop_resize(frame: np.ndarray, b: BoundingBox, target: int = 36) -> np.ndarray:
    """Crop the (rounded) box from a [3, H, W] frame and resize it to [3, target, target]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ValueError(f"expected a [C, H, W] frame, got shape {frame.shape}")
    _, h, w = frame.shape
    x, y, s = b.rounded()
    if x < 0 or y < 0 or x + s > w or y + s > h:
        raise BoxError(f"box (x={x}, y={y}, side={s}) is outside the {w}x{h} frame")
    crop = frame[:, y:y + s, x:x + s]
    return np.clip(resize_bilinear(crop, target), 0.0, 1.0)


def motion_input(prev: np.ndarray, curr: np.ndarray) -> np.ndarray:
    """Normalized frame difference (I(t) - I(t-1)) / (I(t) + I(t-1)).

    Pixels whose intensity sum falls below ``MOTION_EPS`` map to 0.
    """
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.shape != curr.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {curr.shape}")
    denom = curr + prev
    ok = denom >= MOTION_EPS
    out = np.zeros_like(curr)
    np.divide(curr - prev, denom, out=out, where=ok)
    return out


def standardize_clip(t: np.ndarray, stream: str) -> np.ndarray:
    """Zero-mean, unit-variance scaling over a clip.

    ``stream="motion"`` uses one mean/std for the whole array; ``"appearance"``
    uses one per color channel (axis -3).
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("cannot standardize an empty tensor")
    if stream == "motion":
        return (t - t.mean()) / max(t.std(), STD_FLOOR)
    if stream == "appearance":
        axes = tuple(i for i in range(t.ndim) if i != t.ndim - 3)
        mu = t.mean(axis=axes, keepdims=True)
        sd = np.maximum(t.std(axis=axes, keepdims=True), STD_FLOOR)
        return (t - mu) / sd
    raise ValueError(f"unknown stream {stream!r}")


def prepare_clip(
    frames: np.ndarray,
    boxes: Optional[Sequence[BoundingBox]],
    config: PreprocessConfig = PreprocessConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Full preprocessing of one clip.

    Returns ``(motion, appearance)``, each [T-1, 3, S, S]; entry k pairs frame
    k+1 with its predecessor.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ClipFormatError(f"expected frames [T, 3, H, W], got {frames.shape}")
    n, _, h, w = frames.shape
    if n < 2:
        raise ClipFormatError("a clip needs at least two frames")
    if boxes is None:
        boxes = [center_box(w, h)] * n
    if len(boxes) != n:
        raise ClipFormatError(f"{len(boxes)} boxes for {n} frames")
    expanded = [expand_bbox(b, w, h, config.expand_ratio) for b in boxes]
    smoothed = ema_smooth(expanded, config.ema_alpha)
    faces = np.stack([crop_resize(f, b, config.target_size) for f, b in zip(frames, smoothed)])
    motion = motion_input(faces[:-1], faces[1:])
    appearance = faces[1:]
    if config.standardize:
        motion = standardize_clip(motion, "motion")
        appearance = standardize_clip(appearance, "appearance")
    return motion, appearance


# ---------------------------------------------------------------------------
# clip storage


def write_raw(path: Path | str, frames: np.ndarray) -> None:
    """Write frames [T, 3, H, W] in the planar PPRAW1 format (float32, little endian)."""
    frames = np.asarray(frames)
    t, c, h, w = frames.shape
    if c != 3:
        raise ClipFormatError("raw clips are RGB")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", t, h, w))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_raw(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != RAW_MAGIC:
        raise ClipFormatError(f"{path}: bad magic {blob[:6]!r}")
    t, h, w = struct.unpack("<III", blob[6:18])
    expected = 18 + t * 3 * h * w * 4
    if len(blob) != expected:
        raise ClipFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=18).reshape(t, 3, h, w)
    return data.astype(np.float64)


_NUM = re.compile(r"(\d+)")


def _frame_key(p: Path) -> tuple:
    m = _NUM.findall(p.stem)
    return (int(m[-1]) if m else -1, p.name)


def read_image_dir(path: Path | str) -> np.ndarray:
    """Load numbered PNG/PPM/PGM frames; grayscale frames are channel-tripled."""
    from PIL import Image

    files = sorted(
        (p for p in Path(path).iterdir() if p.suffix.lower() in (".png", ".ppm", ".pgm", ".pnm")),
        key=_frame_key,
    )
    if not files:
        raise ClipFormatError(f"{path}: no image frames found")
    frames = []
    for f in files:
        with Image.open(f) as im:
            arr = np.asarray(im)
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        arr = arr[..., :3]
        scale = 65535.0 if arr.dtype == np.uint16 else 255.0
        frames.append(arr.transpose(2, 0, 1).astype(np.float64) / scale)
    return np.stack(frames)


def load_clip(path: Path | str) -> np.ndarray:
    path = Path(path)
    if path.is_dir():
        return read_image_dir(path)
    return read_raw(path)


def boxes_from_lists(rows: Optional[Iterable[Sequence[float]]]) -> Optional[list[BoundingBox]]:
    if rows is None:
        return None
    return [BoundingBox(float(x), float(y), float(s)) for x, y, s in rows]
