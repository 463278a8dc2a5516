"""Line-delimited JSON dataset manifest.

The first line is a header object; every following line is one clip entry.
Clip paths are resolved relative to the manifest file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .network import atomic_write_text

FORMAT = "padphys-manifest"
VERSION = 1
SPLITS = ("train", "val", "test")
LABELS = ("bonafide", "attack")

# abbreviation -> attack instrument
ATTACK_TYPES = {
    "MH": "Mannequin Head Attack",
    "L2TP": "Layered 2D Transparent Photo",
    "PlM": "Plastic Mask Attack",
    "LM": "Latex Mask Attack",
    "3CPM": "3D Curved Paper Mask",
    "PrM": "Print Mask Attack",
    "VR": "Video Replay Attack",
    "Pr": "Print Attack",
    "SM": "Silicone Mask Attack",
    "PR": "Photo Replay Attack",
    "Pr3LM": "Print 3D Layered Mask",
}


class ManifestError(ValueError):
    pass


@dataclass
class ClipEntry:
    id: str
    path: str
    label: str
    split: str
    attack_type: Optional[str] = None
    bboxes: Optional[list] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"clip {self.id}: label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"clip {self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if self.label == "attack":
            if self.attack_type not in ATTACK_TYPES:
                raise ManifestError(f"clip {self.id}: unknown attack_type {self.attack_type!r}")
        elif self.attack_type is not None:
            raise ManifestError(f"clip {self.id}: bona-fide entries must not carry an attack_type")

    @property
    def is_bonafide(self) -> bool:
        return self.label == "bonafide"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "label": self.label,
            "attack_type": self.attack_type,
            "split": self.split,
            "bboxes": self.bboxes,
        }


@dataclass
class DatasetManifest:
    clips: list[ClipEntry]
    preprocess: dict = field(default_factory=dict)
    root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for c in self.clips:
            if c.id in seen:
                raise ManifestError(f"duplicate clip id {c.id!r}")
            seen.add(c.id)

    def split(self, name: str) -> list[ClipEntry]:
        return [c for c in self.clips if c.split == name]

    def resolve(self, entry: ClipEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def to_text(self) -> str:
        header = {"format": FORMAT, "version": VERSION, "preprocess": self.preprocess}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(c.to_dict()) for c in self.clips]
        return "\n".join(lines) + "\n"

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, self.to_text())


def parse_manifest(text: str, root: Optional[Path] = None) -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ManifestError("empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError("manifest header is not JSON") from exc
    if header.get("format") != FORMAT:
        raise ManifestError(f"not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise ManifestError(f"unsupported manifest version {header.get('version')!r}")
    clips = []
    for i, ln in enumerate(lines[1:], start=2):
        try:
            d = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {i}: not JSON") from exc
        try:
            clips.append(ClipEntry(
                id=str(d["id"]), path=str(d["path"]), label=d["label"], split=d["split"],
                attack_type=d.get("attack_type"), bboxes=d.get("bboxes"),
            ))
        except KeyError as exc:
            raise ManifestError(f"line {i}: missing field {exc}") from exc
    return DatasetManifest(clips, header.get("preprocess", {}), root)


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(), root=path.parent)
