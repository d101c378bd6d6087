"""Sargassum level / scene labels and the CSV manifest."""
from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

from ..errors import LabelError, ParseError

UNKNOWN = "unknown"
MANIFEST_HEADER = ("path", "level", "scene", "place", "date")


class LevelLabel(IntEnum):
    """Ordinal sargassum amount; codes follow increasing amount."""

    NADA = 0
    BAJO = 1
    MODERADO = 2
    ABUNDANTE = 3
    EXCESIVO = 4

    @property
    def canonical(self) -> str:
        return self.name.lower()

    @property
    def english(self) -> str:
        return LEVEL_ENGLISH[self]

    @property
    def display(self) -> str:
        return f"{self.english} ({self.canonical})"

    @classmethod
    def parse(cls, text) -> "LevelLabel":
        key = str(text).strip().lower()
        if key in _LEVEL_ALIASES:
            return _LEVEL_ALIASES[key]
        if key.isdigit() and int(key) < len(cls):
            return cls(int(key))
        raise LabelError(f"unknown level {text!r}")


LEVEL_ENGLISH = {
    LevelLabel.NADA: "nothing",
    LevelLabel.BAJO: "low",
    LevelLabel.MODERADO: "mild",
    LevelLabel.ABUNDANTE: "plenty",
    LevelLabel.EXCESIVO: "excesive",
}
_LEVEL_ALIASES = {lvl.canonical: lvl for lvl in LevelLabel}
_LEVEL_ALIASES.update({name: lvl for lvl, name in LEVEL_ENGLISH.items()})
_LEVEL_ALIASES.update({"fair": LevelLabel.MODERADO, "excessive": LevelLabel.EXCESIVO})

NUM_LEVELS = len(LevelLabel)


class SceneLabel(Enum):
    PLAYA = "playa"
    MAR = "mar"
    TIERRA = "tierra"
    AEREA = "aerea"
    UNKNOWN = UNKNOWN

    @property
    def english(self) -> str:
        return SCENE_ENGLISH[self]

    @classmethod
    def parse(cls, text) -> "SceneLabel":
        key = str(text).strip().lower()
        if key in _SCENE_ALIASES:
            return _SCENE_ALIASES[key]
        raise LabelError(f"unknown scene {text!r}")


SCENE_ENGLISH = {
    SceneLabel.PLAYA: "beach",
    SceneLabel.MAR: "sea",
    SceneLabel.TIERRA: "land",
    SceneLabel.AEREA: "aerial",
    SceneLabel.UNKNOWN: UNKNOWN,
}
_SCENE_ALIASES = {s.value: s for s in SceneLabel}
_SCENE_ALIASES.update({name: s for s, name in SCENE_ENGLISH.items()})
_SCENE_ALIASES["aérea"] = SceneLabel.AEREA


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    level: LevelLabel
    scene: SceneLabel = SceneLabel.UNKNOWN
    place: str = UNKNOWN
    date: str = UNKNOWN

    def __post_init__(self):
        if not self.image_path:
            raise ParseError("empty image path")


def _check_date(text):
    if text == UNKNOWN:
        return text
    try:
        _dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"date {text!r} is not ISO-8601 (YYYY-MM-DD)") from None
    return text


def load_manifest(path) -> list[ManifestRecord]:
    """Parse a ``path,level,scene,place,date`` CSV; errors carry the file line number."""
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("manifest is empty (no header row)", line=1)
        header = [h.strip().lower() for h in header]
        if tuple(header[:2]) != MANIFEST_HEADER[:2]:
            raise ParseError(f"header must start with 'path,level', got {','.join(header)!r}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [c.strip() for c in row] + [""] * (len(MANIFEST_HEADER) - len(row))
            image, level, scene, place, date = cells[:5]
            if not image:
                raise ParseError("missing image path", line=line)
            if not level:
                raise ParseError("missing level", line=line)
            try:
                lvl = LevelLabel.parse(level)
                scn = SceneLabel.parse(scene or UNKNOWN)
                date = _check_date(date or UNKNOWN)
            except (LabelError, ParseError) as exc:
                raise ParseError(str(exc), line=line) from None
            records.append(ManifestRecord(image, lvl, scn, place or UNKNOWN, date))
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.image_path, r.level.canonical, r.scene.value, r.place, r.date])
