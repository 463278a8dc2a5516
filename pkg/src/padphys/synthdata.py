"""Synthetic pulsatile face videos with pulse-free and replayed attacks.

Bona-fide clips carry a sinusoidal, green-dominant skin-color pulse.  Print
and mask style attacks share the face texture but have no pulse; replay
attacks re-show a bona-fide recording (pulse included) through a screen.
"""
from __future__ import annotations

import csv
import io
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from .manifest import ClipEntry, DatasetManifest
from .network import atomic_write_text
from .preprocess import BoundingBox, write_raw

SYNTH_ATTACKS = {"paper_like": "Pr", "mask_like": "PlM", "replay_like": "VR"}
PULSE_BAND = (0.7, 4.0)
PULSE_COLOR = np.array([0.3, 1.0, 0.5])
FACE_HALF = 11.0  # half side of the face box in pixels


@dataclass
class SynthConfig:
    n_users: int = 8
    clips_per_user: int = 4
    frames_per_clip: int = 150
    fps: float = 30.0
    heart_rate_hz: tuple = (0.8, 3.0)
    pulse_amplitude: float = 0.02
    noise_sigma: float = 0.01
    motion_amplitude: float = 1.5
    attack_types: tuple = ("paper_like", "mask_like", "replay_like")
    frame_size: int = 48
    val_fraction: float = 0.25
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.heart_rate_hz = tuple(float(v) for v in self.heart_rate_hz)
        self.attack_types = tuple(self.attack_types)
        self.validate()

    def validate(self) -> None:
        lo, hi = self.heart_rate_hz
        if not (0.7 <= lo <= hi <= 4.0):
            raise ValueError(f"heart_rate_hz {self.heart_rate_hz} must lie within [0.7, 4.0] Hz")
        if not 0.0 <= self.pulse_amplitude < 0.1:
            raise ValueError("pulse_amplitude must lie in [0, 0.1)")
        if self.noise_sigma < 0 or self.motion_amplitude < 0:
            raise ValueError("noise_sigma and motion_amplitude must be >= 0")
        if self.n_users < 1 or self.clips_per_user < 1:
            raise ValueError("n_users and clips_per_user must be >= 1")
        if self.frames_per_clip < 2 or self.fps <= 0:
            raise ValueError("need at least two frames and a positive fps")
        unknown = set(self.attack_types) - set(SYNTH_ATTACKS)
        if unknown:
            raise ValueError(f"unknown attack types {sorted(unknown)}")
        if self.frame_size < 2 * FACE_HALF * 1.8 + 4:
            raise ValueError("frame_size too small for the face box")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise ValueError("split fractions must be non-negative and leave room for training")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heart_rate_hz"] = list(self.heart_rate_hz)
        d["attack_types"] = list(self.attack_types)
        return d


@dataclass
class GroundTruth:
    clip_id: str
    label: str
    attack_type: Optional[str]
    heart_rate_hz: float
    pulse: np.ndarray = field(repr=False)


@dataclass
class Corpus:
    manifest: DatasetManifest
    truth: list[GroundTruth]
    out_dir: Path


def split_counts(n: int, val_fraction: float, test_fraction: float) -> tuple[int, int, int]:
    """(train, val, test) counts for one (user, class) cell; train and test first get one each."""
    if n == 1:
        return 1, 0, 0
    n_test = max(1, int(round(n * test_fraction)))
    n_val = int(round(n * val_fraction)) if n >= 3 else 0
    n_train = n - n_test - n_val
    if n_train < 1:
        n_val -= 1 - n_train
        n_train = 1
    return n_train, n_val, n_test


class _Face:
    """Per-user face appearance, fixed across that user's clips."""

    def __init__(self, rng: np.random.Generator, size: int):
        self.size = size
        tone = rng.uniform(0.45, 0.8)
        self.skin = np.array([tone + 0.12, tone, tone - 0.1])
        self.background = rng.uniform(0.25, 0.45, size=3)
        yy, xx = np.mgrid[0:size, 0:size] / size
        a, b, c = rng.uniform(0, 2 * np.pi, size=3)
        self.bg_texture = 0.05 * np.sin(2 * np.pi * (1.3 * xx + 0.7 * yy) + a) * np.cos(2 * np.pi * 0.9 * yy + b)
        self.tex_phase = (a, b, c)
        self.feature_offsets = rng.uniform(-2.0, 2.0, size=(3, 2))

    def render(self, cx: float, cy: float, skin_gain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return the image [3, S, S] and the soft skin mask [S, S] for a face centered at (cx, cy)."""
        s = self.size
        yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
        u = (xx - cx) / (FACE_HALF * 0.82)
        v = (yy - cy) / FACE_HALF
        r = np.sqrt(u * u + v * v)
        alpha = np.clip((1.0 - r) * 4.0, 0.0, 1.0)
        a, b, c = self.tex_phase
        tex = 0.04 * np.sin(2.5 * u + a) * np.cos(2.0 * v + b) + 0.02 * np.sin(4.0 * (u + v) + c)
        # darker eyes and mouth, anchored to the face
        for (ex, ey), (dx, dy) in zip(((-0.4, -0.25), (0.4, -0.25), (0.0, 0.5)), self.feature_offsets):
            d2 = (u - ex - 0.02 * dx) ** 2 + (v - ey - 0.02 * dy) ** 2
            tex = tex - 0.15 * np.exp(-d2 / 0.012)
        face = (self.skin[:, None, None] + tex[None]) * skin_gain[:, None, None]
        bg = self.background[:, None, None] + self.bg_texture[None]
        img = alpha[None] * face + (1.0 - alpha[None]) * bg
        return img, alpha


def _sway(n: int, fps: float, amp: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fps
    f = rng.uniform(0.1, 0.4, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    return np.stack([amp * np.sin(2 * np.pi * f[0] * t + ph[0]), 0.6 * amp * np.sin(2 * np.pi * f[1] * t + ph[1])], 1)


def _render_clip(face: _Face, kind: str, cfg: SynthConfig, rng: np.random.Generator):
    n, fps, size = cfg.frames_per_clip, cfg.fps, cfg.frame_size
    hr = float(rng.uniform(*cfg.heart_rate_hz))
    phase = rng.uniform(0, 2 * np.pi)
    if kind == "replay_like":
        # replayed recording: source frames advance by 1, sometimes 2 (dropped frames)
        steps = np.where(rng.random(n) < 0.1, 2, 1)
        steps[0] = 0
        src_t = np.cumsum(steps) / fps
    else:
        src_t = np.arange(n) / fps
    has_pulse = kind in ("bonafide", "replay_like")
    pulse = cfg.pulse_amplitude * np.sin(2 * np.pi * hr * src_t + phase) if has_pulse else np.zeros(n)
    sway = _sway(n, fps, cfg.motion_amplitude, rng)
    jitter = rng.normal(0.0, 0.3, size=(n, 2))
    center = size / 2.0
    frames = np.empty((n, 3, size, size))
    boxes = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "paper_like":
        band_angle = rng.uniform(-0.6, 0.6)
    if kind == "mask_like":
        cuts = rng.uniform(-0.5, 0.5, size=3)
        offs = rng.choice([-1.0, 1.0], size=4) * rng.uniform(0.04, 0.07, size=4)
    if kind == "replay_like":
        fx, fy = rng.uniform(0.35, 0.45), rng.uniform(0.3, 0.42)
        moire = 0.03 * np.sin(2 * np.pi * (fx * xx + fy * yy)) * np.sin(2 * np.pi * 0.47 * xx)
        # display + re-capture compresses contrast toward mid-gray
        gain = rng.uniform(0.5, 0.7)
    for k in range(n):
        cx, cy = center + sway[k, 0], center - 1.0 + sway[k, 1]
        img, alpha = face.render(cx, cy, 1.0 + pulse[k] * PULSE_COLOR / np.mean(face.skin))
        u = (xx - cx) / FACE_HALF
        v = (yy - cy) / FACE_HALF
        if kind == "paper_like":
            band = np.exp(-((v * np.cos(band_angle) + u * np.sin(band_angle) + 0.2) ** 2) / 0.02)
            img = img + 0.15 * band[None] * alpha[None]
        elif kind == "mask_like":
            region = (u > cuts[0]).astype(int) + 2 * (v > cuts[1]).astype(int)
            img = img + (offs[region] * (alpha > 0.5))[None]
        elif kind == "replay_like":
            img = gain * img + (1.0 - gain) * 0.5 + moire[None]
        img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
        frames[k] = np.clip(img, 0.0, 1.0)
        boxes.append([cx - FACE_HALF + jitter[k, 0], cy - FACE_HALF + jitter[k, 1], 2 * FACE_HALF])
    return frames, boxes, hr, pulse


def _clip_plan(cfg: SynthConfig) -> list[tuple[int, str, int, str]]:
    """(user, kind, index, split) for every clip, in emission order."""
    kinds = ["bonafide"] + list(cfg.attack_types)
    n_tr, n_va, _ = split_counts(cfg.clips_per_user, cfg.val_fraction, cfg.test_fraction)
    plan = []
    for user in range(cfg.n_users):
        for kind in kinds:
            for j in range(cfg.clips_per_user):
                split = "train" if j < n_tr else "val" if j < n_tr + n_va else "test"
                plan.append((user, kind, j, split))
    return plan


def generate(config: SynthConfig, out_dir: Path | str) -> Corpus:
    """Write clips, ``manifest.jsonl``, ``groundtruth.csv`` and ``pulse.npz`` into ``out_dir``.

    The directory is built under a temporary name and renamed into place, so
    a failure never leaves a partial corpus behind.
    """
    config.validate()
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise FileExistsError(f"{out_dir} exists and is not empty")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(dir=out_dir.parent, prefix=f".{out_dir.name}."))
    try:
        corpus = _generate_into(config, work)
        if out_dir.exists():
            out_dir.rmdir()
        work.rename(out_dir)
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    corpus.out_dir = out_dir
    corpus.manifest.root = out_dir
    return corpus


def _generate_into(cfg: SynthConfig, root: Path) -> Corpus:
    (root / "clips").mkdir()
    faces = [_Face(np.random.default_rng([cfg.seed, 1, u]), cfg.frame_size) for u in range(cfg.n_users)]
    entries, truth = [], []
    for idx, (user, kind, j, split) in enumerate(_clip_plan(cfg)):
        clip_id = f"u{user:02d}_{kind}_{j}"
        rng = np.random.default_rng([cfg.seed, 2, idx])
        frames, boxes, hr, pulse = _render_clip(faces[user], kind, cfg, rng)
        write_raw(root / "clips" / f"{clip_id}.raw", frames)
        attack = SYNTH_ATTACKS.get(kind)
        entries.append(ClipEntry(
            id=clip_id, path=f"clips/{clip_id}.raw", label="bonafide" if attack is None else "attack",
            split=split, attack_type=attack, bboxes=[[round(float(v), 6) for v in b] for b in boxes],
        ))
        if kind in ("paper_like", "mask_like"):
            hr = 0.0
        truth.append(GroundTruth(clip_id, entries[-1].label, attack, hr, pulse))
    manifest = DatasetManifest(entries, {"synth": cfg.to_dict()}, root)
    manifest.save(root / "manifest.jsonl")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip_id", "label", "attack_type", "heart_rate_hz"])
    for g in truth:
        w.writerow([g.clip_id, g.label, g.attack_type or "", f"{g.heart_rate_hz:.6f}"])
    atomic_write_text(root / "groundtruth.csv", buf.getvalue())
    with open(root / "pulse.npz", "wb") as fh:
        np.savez(fh, **{g.clip_id: g.pulse for g in truth})
    return Corpus(manifest, truth, root)


def load_pulse(manifest_dir: Path | str) -> dict[str, np.ndarray]:
    with np.load(Path(manifest_dir) / "pulse.npz") as z:
        return {k: z[k] for k in z.files}


# ---------------------------------------------------------------------------
# spectral self-test


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    edges = np.arange(n)
    return np.clip(np.minimum(edges + 1, hi) - np.maximum(edges, lo), 0.0, 1.0)


def roi_green_trace(frames: np.ndarray, boxes: Optional[list] = None, inner: float = 0.5) -> np.ndarray:
    """Mean green value over the central ``inner`` fraction of each frame's face box.

    Pixels are weighted by their fractional overlap with the region, so the
    trace varies smoothly with sub-pixel box motion.
    """
    frames = np.asarray(frames)
    n, _, h, w = frames.shape
    out = np.empty(n)
    for k in range(n):
        if boxes is None:
            x, y, s = w * 0.25, h * 0.25, min(h, w) * 0.5
        else:
            x, y, s = boxes[k]
        cx, cy, half = x + s / 2.0, y + s / 2.0, s * inner / 2.0
        wy = _coverage(cy - half, cy + half, h)
        wx = _coverage(cx - half, cx + half, w)
        weight = np.outer(wy, wx)
        out[k] = float((frames[k, 1] * weight).sum() / weight.sum())
    return out


def spectral_check(trace: np.ndarray, fps: float, band: tuple = PULSE_BAND, nperseg: int = 64) -> tuple[float, float]:
    """Dominant in-band frequency of a trace and its peak-to-median amplitude ratio.

    The spectrum is the square root of a Welch power estimate over
    ``nperseg``-sample segments with the mean removed, so the DC bin never
    counts.  A trace with no in-band power returns ``(nan, 0.0)``.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 1:
        raise ValueError("spectral_check expects a 1-D trace; use roi_green_trace on clips")
    if len(trace) < nperseg:
        raise ValueError(f"trace too short: {len(trace)} < {nperseg} samples")
    freqs, power = signal.welch(trace, fs=fps, nperseg=nperseg, detrend="constant")
    sel = (freqs >= band[0]) & (freqs <= band[1])
    amp = np.sqrt(power[sel])
    if amp.size == 0 or not np.any(amp > 1e-12 * max(np.abs(trace).max(), 1.0)):
        return float("nan"), 0.0
    k = int(np.argmax(amp))
    med = float(np.median(amp))
    ratio = float(amp[k] / med) if med > 0 else float("inf")
    return float(freqs[sel][k]), ratio
