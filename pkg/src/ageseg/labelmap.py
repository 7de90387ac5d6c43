"""Many-to-one label remapping onto the 19 shared organ classes.

The 19-class target taxonomy is configuration, not code: a default mapping
ships with the package (``data/default_labelmap.csv``) covering 19 common
CT organs, and any mapping file with the same layout can replace it.  A
mapping file has one ``source,target,name`` row per line; ``#`` starts a
comment.  Targets live in [0, 19], 0 being background.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import LabelDomainError, MappingError
from .volume import LabelVolume

__all__ = [
    "NUM_TARGET_CLASSES",
    "DEFAULT_CLASS_NAMES",
    "ClassMapping",
    "load_mapping",
    "default_mapping",
    "remap",
]

log = logging.getLogger(__name__)

NUM_TARGET_CLASSES = 19

# Editable default taxonomy: 19 organs commonly labeled in public CT sets.
DEFAULT_CLASS_NAMES = (
    "spleen",
    "right_kidney",
    "left_kidney",
    "gallbladder",
    "liver",
    "stomach",
    "pancreas",
    "right_adrenal_gland",
    "left_adrenal_gland",
    "right_lung",
    "left_lung",
    "esophagus",
    "trachea",
    "thyroid",
    "small_bowel",
    "duodenum",
    "colon",
    "urinary_bladder",
    "heart",
)


@dataclass(frozen=True)
class ClassMapping:
    """source label -> target label in [0, 19], with target names.

    ``unmapped_policy`` decides what happens to labels absent from
    ``entries``: ``"to-background"`` sends them to 0 (with a logged count),
    ``"error"`` raises.
    """

    entries: tuple[tuple[int, int], ...]
    target_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    unmapped_policy: str = "to-background"

    def __post_init__(self) -> None:
        if self.unmapped_policy not in ("to-background", "error"):
            raise MappingError(f"unknown unmapped_policy {self.unmapped_policy!r}")
        seen: set[int] = set()
        for src, tgt in self.entries:
            if src < 0:
                raise MappingError(f"negative source label {src}")
            if src in seen:
                raise MappingError(f"duplicate source label {src}")
            seen.add(src)
            if not 0 <= tgt <= NUM_TARGET_CLASSES:
                raise MappingError(
                    f"target {tgt} for source {src} outside [0, {NUM_TARGET_CLASSES}]"
                )
        if len(self.target_names) != NUM_TARGET_CLASSES:
            raise MappingError(
                f"expected {NUM_TARGET_CLASSES} target names, got {len(self.target_names)}"
            )

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def is_complete(self) -> bool:
        """True when every target in [1, 19] is hit by at least one source."""
        hit = {tgt for _, tgt in self.entries if tgt != 0}
        return hit == set(range(1, NUM_TARGET_CLASSES + 1))

    def class_name(self, target: int) -> str:
        if not 1 <= target <= NUM_TARGET_CLASSES:
            raise MappingError(f"target class {target} outside [1, {NUM_TARGET_CLASSES}]")
        return self.target_names[target - 1]


def _parse_mapping_lines(lines, origin: str) -> ClassMapping:
    entries: list[tuple[int, int]] = []
    names: dict[int, str] = {}
    for lineno, line in enumerate(lines, start=1):
        row = line.split("#", 1)[0].strip()
        if not row:
            continue
        parts = [p.strip() for p in row.split(",")]
        if len(parts) < 2:
            raise MappingError(f"{origin}:{lineno}: expected 'source,target[,name]'")
        try:
            src, tgt = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise MappingError(f"{origin}:{lineno}: non-integer label: {row!r}") from exc
        entries.append((src, tgt))
        if len(parts) >= 3 and parts[2] and tgt >= 1:
            names[tgt] = parts[2]
    target_names = tuple(
        names.get(t, DEFAULT_CLASS_NAMES[t - 1]) for t in range(1, NUM_TARGET_CLASSES + 1)
    )
    return ClassMapping(tuple(entries), target_names)


def load_mapping(path) -> ClassMapping:
    """Load and validate a ``source,target,name`` mapping file."""
    path = Path(path)
    return _parse_mapping_lines(path.read_text().splitlines(), str(path))


def default_mapping() -> ClassMapping:
    """The shipped 19-organ identity mapping (see ``data/default_labelmap.csv``)."""
    text = resources.files("ageseg").joinpath("data/default_labelmap.csv").read_text()
    return _parse_mapping_lines(text.splitlines(), "<default>")


def remap(volume: LabelVolume, mapping: ClassMapping) -> LabelVolume:
    """Apply ``mapping`` to every voxel; output has ``num_classes == 19``.

    Voxel count is conserved: each output class holds exactly the union of
    the voxel sets of its source labels.  Sources mapping to one target can
    never collide because input labels are exclusive per voxel.
    """
    labels = volume.labels
    max_label = int(labels.max()) if labels.size else 0
    lut = np.full(max_label + 1, -1, dtype=np.int32)
    for src, tgt in mapping.entries:
        if src <= max_label:
            lut[src] = tgt
    unmapped = lut < 0
    if unmapped.any():
        present = np.unique(labels)
        offending = [int(v) for v in present if lut[v] < 0]
        if offending:
            if mapping.unmapped_policy == "error":
                raise LabelDomainError(
                    f"labels {offending} are not covered by the mapping"
                )
            n_bg = int(np.isin(labels, offending).sum())
            log.warning("remap: %d voxels with unmapped labels sent to background", n_bg)
        lut[unmapped] = 0
    out = lut[labels]
    return LabelVolume(out, volume.spacing, volume.origin, NUM_TARGET_CLASSES)
