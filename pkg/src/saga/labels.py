"""Five-level attribution hierarchy and label projection.

A :class:`GeneratorManifest` maps generator ids to their task, Stable
Diffusion backbone and team. From it every level gets an ordered class
table, and any generator (or GEN-level prediction) can be projected to a
coarser level.

Generators whose task or backbone is unknown project to a reserved class
(``other-task`` / ``other-backbone``) that exists so the projection stays
total, but is excluded from evaluation at that level.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, UnknownLabelError, ValidationError


class AttributionLevel(enum.IntEnum):
    """Granularity levels, ordered coarse to fine."""

    BIN = 0
    TASK = 1
    SD = 2
    TEAM = 3
    GEN = 4

    @classmethod
    def parse(cls, value) -> "AttributionLevel":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        if key.endswith("-L"):
            key = key[:-2]
        try:
            return cls[key]
        except KeyError:
            raise ValidationError(f"unknown attribution level {value!r}; expected one of {[m.name for m in cls]}") from None


TASKS = ("REAL", "T2V", "I2V", "UNKNOWN")
SD_VERSIONS = ("NONE", "SD14", "SD15", "SD21", "SDXL", "UNKNOWN")

BIN_CLASSES = ("real", "fake")
TASK_CLASSES = ("Real", "T2V", "I2V")
SD_CLASSES = ("Real", "SD 1.4", "SD 1.5", "SD 2.1", "SDXL")
OTHER_TASK = "other-task"
OTHER_BACKBONE = "other-backbone"
REAL_ID = "Real"


@dataclass(frozen=True)
class GeneratorEntry:
    id: str
    task: str
    sd: str
    team: str

    @property
    def is_real(self) -> bool:
        return self.task == "REAL"


@dataclass(frozen=True)
class LevelClasses:
    level: AttributionLevel
    names: tuple[str, ...]
    evaluable: tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return len(self.names)

    @property
    def evaluable_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.evaluable)


@dataclass(frozen=True)
class LabelRecord:
    """A generator id together with its class index at every level."""

    generator_id: str
    indices: tuple[int, int, int, int, int]

    def at(self, level) -> int:
        return self.indices[AttributionLevel.parse(level)]


@dataclass(frozen=True)
class GeneratorManifest:
    entries: tuple[GeneratorEntry, ...]
    _tables: dict = field(default=None, init=False, repr=False, compare=False)
    _proj: dict = field(default=None, init=False, repr=False, compare=False)
    _lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        _validate(self.entries)
        tables = {lvl: _build_table(self.entries, lvl) for lvl in AttributionLevel}
        proj = {}
        for lvl in AttributionLevel:
            lookup = {name: i for i, name in enumerate(tables[lvl].names)}
            proj[lvl] = np.array([lookup[_class_name(e, lvl)] for e in self.entries], dtype=np.int64)
        object.__setattr__(self, "_tables", tables)
        object.__setattr__(self, "_proj", proj)
        object.__setattr__(self, "_lookup", {e.id: i for i, e in enumerate(self.entries)})

    # -- construction / serialization

    @classmethod
    def from_dict(cls, obj) -> "GeneratorManifest":
        if not isinstance(obj, dict):
            raise ValidationError("manifest: expected a JSON object")
        gens = obj.get("generators")
        if not isinstance(gens, list):
            raise ValidationError("manifest.generators: expected a list")
        entries = []
        for i, g in enumerate(gens):
            path = f"generators[{i}]"
            if not isinstance(g, dict):
                raise ValidationError(f"{path}: expected an object")
            for key in ("id", "task", "sd", "team"):
                if not isinstance(g.get(key), str) or not g[key]:
                    raise ValidationError(f"{path}.{key}: expected a non-empty string")
            if g["task"] not in TASKS:
                raise ValidationError(f"{path}.task: {g['task']!r} not in {TASKS}")
            if g["sd"] not in SD_VERSIONS:
                raise ValidationError(f"{path}.sd: {g['sd']!r} not in {SD_VERSIONS}")
            if "is_real" in g and bool(g["is_real"]) != (g["task"] == "REAL"):
                raise ValidationError(f"{path}.is_real: disagrees with task {g['task']!r}")
            entries.append(GeneratorEntry(g["id"], g["task"], g["sd"], g["team"]))
        return cls(tuple(entries))

    def to_dict(self) -> dict:
        return {"generators": [{"id": e.id, "task": e.task, "sd": e.sd, "team": e.team} for e in self.entries]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    # -- queries

    @property
    def generator_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)

    def __contains__(self, generator_id) -> bool:
        return generator_id in self._lookup

    def gen_index(self, generator_id: str) -> int:
        try:
            return self._lookup[generator_id]
        except KeyError:
            raise UnknownLabelError(f"generator {generator_id!r} not in manifest") from None

    def classes_at_level(self, level) -> LevelClasses:
        return self._tables[AttributionLevel.parse(level)]

    def project_label(self, generator_id: str, level) -> int:
        return int(self._proj[AttributionLevel.parse(level)][self.gen_index(generator_id)])

    def project_predictions(self, preds: Iterable[int], level) -> np.ndarray:
        """Map GEN-level class indices to class indices at ``level``."""
        p = np.asarray(list(preds) if not isinstance(preds, np.ndarray) else preds, dtype=np.int64)
        n = len(self.entries)
        if p.size and ((p < 0).any() or (p >= n).any()):
            bad = p[(p < 0) | (p >= n)][0]
            raise UnknownLabelError(f"GEN-level index {int(bad)} out of range for {n} generators")
        return self._proj[AttributionLevel.parse(level)][p]

    def label_record(self, generator_id: str) -> LabelRecord:
        g = self.gen_index(generator_id)
        return LabelRecord(generator_id, tuple(int(self._proj[lvl][g]) for lvl in AttributionLevel))


def _class_name(e: GeneratorEntry, level: AttributionLevel) -> str:
    if level == AttributionLevel.BIN:
        return BIN_CLASSES[0] if e.is_real else BIN_CLASSES[1]
    if level == AttributionLevel.TASK:
        return OTHER_TASK if e.task == "UNKNOWN" else TASK_CLASSES[TASKS.index(e.task)]
    if level == AttributionLevel.SD:
        return OTHER_BACKBONE if e.sd == "UNKNOWN" else SD_CLASSES[SD_VERSIONS.index(e.sd)]
    if level == AttributionLevel.TEAM:
        return e.team
    return e.id


def _build_table(entries: Sequence[GeneratorEntry], level: AttributionLevel) -> LevelClasses:
    if level == AttributionLevel.BIN:
        names = BIN_CLASSES
    elif level in (AttributionLevel.TASK, AttributionLevel.SD):
        base = TASK_CLASSES if level == AttributionLevel.TASK else SD_CLASSES
        other = OTHER_TASK if level == AttributionLevel.TASK else OTHER_BACKBONE
        field_ = "task" if level == AttributionLevel.TASK else "sd"
        names = base + ((other,) if any(getattr(e, field_) == "UNKNOWN" for e in entries) else ())
    else:
        names = tuple(dict.fromkeys(_class_name(e, level) for e in entries))
    reserved = (OTHER_TASK, OTHER_BACKBONE) if level in (AttributionLevel.TASK, AttributionLevel.SD) else ()
    evaluable = tuple(i for i, n in enumerate(names) if n not in reserved)
    return LevelClasses(level, tuple(names), evaluable)


def _validate(entries: Sequence[GeneratorEntry]) -> None:
    seen = set()
    for i, e in enumerate(entries):
        if e.id in seen:
            raise ValidationError(f"generators[{i}].id: duplicate generator id {e.id!r}")
        seen.add(e.id)
        if e.is_real != (e.sd == "NONE"):
            raise ValidationError(f"generators[{i}]: task {e.task!r} inconsistent with sd {e.sd!r}")
        if e.is_real != (e.id == REAL_ID):
            raise ValidationError(f"generators[{i}]: only the entry named {REAL_ID!r} may be real")
    n_real = sum(e.is_real for e in entries)
    if n_real != 1:
        raise ValidationError(f"manifest needs exactly one {REAL_ID!r} entry, found {n_real}")
    if len(entries) < 2:
        raise ValidationError("manifest needs at least one synthetic generator")


def load_manifest(path) -> GeneratorManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 ({exc})") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return GeneratorManifest.from_dict(obj)


def default_manifest() -> GeneratorManifest:
    """The 19-generator manifest shipped with the package (plus ``Real``)."""
    text = resources.files("saga.data").joinpath("demamba_manifest.json").read_text(encoding="utf-8")
    return GeneratorManifest.from_dict(json.loads(text))
