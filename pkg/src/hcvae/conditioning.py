"""Two-level machine taxonomy and one-hot condition vectors.

Level one is the machine type, level two the model ID. IDs share one global
vocabulary across types, so ``[type | id]`` still identifies a pair uniquely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ClipRef, scan_dataset
from .errors import IngestionError, UnknownLabelError


class ConditionMode(str, enum.Enum):
    NONE = "none"
    LEVEL1 = "ci"
    LEVEL2 = "cij"
    BOTH = "both"

    @property
    def uses_type(self) -> bool:
        return self in (ConditionMode.LEVEL1, ConditionMode.BOTH)

    @property
    def uses_id(self) -> bool:
        return self in (ConditionMode.LEVEL2, ConditionMode.BOTH)


@dataclass(frozen=True)
class Taxonomy:
    level1_labels: tuple
    level2_labels: tuple
    pairs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name, labels in (("level1", self.level1_labels), ("level2", self.level2_labels)):
            if len(set(labels)) != len(labels):
                raise IngestionError(f"duplicate {name} labels: {labels}")
        known1, known2 = set(self.level1_labels), set(self.level2_labels)
        for t, i in self.pairs:
            if t not in known1 or i not in known2:
                raise IngestionError(f"pair ({t}, {i}) references an unknown label")

    @classmethod
    def from_pairs(cls, pairs) -> "Taxonomy":
        pairs = frozenset((str(t), str(i)) for t, i in pairs)
        if not pairs:
            raise IngestionError("cannot build a taxonomy from zero (type, id) pairs")
        return cls(
            tuple(sorted({t for t, _ in pairs})),
            tuple(sorted({i for _, i in pairs})),
            pairs,
        )

    def union(self, other: "Taxonomy") -> "Taxonomy":
        return Taxonomy.from_pairs(self.pairs | other.pairs)

    def cond_dim(self, mode) -> int:
        mode = ConditionMode(mode)
        return len(self.level1_labels) * mode.uses_type + len(self.level2_labels) * mode.uses_id

    def to_dict(self) -> dict:
        return {
            "level1": list(self.level1_labels),
            "level2": list(self.level2_labels),
            "pairs": sorted([t, i] for t, i in self.pairs),
        }

    @classmethod
    def from_dict(cls, d) -> "Taxonomy":
        return cls(tuple(d["level1"]), tuple(d["level2"]), frozenset(tuple(p) for p in d["pairs"]))


def build_taxonomy(*sources) -> Taxonomy:
    """Taxonomy from dataset roots, clip lists, or synth specs (merged).

    Labels are sorted lexicographically so index assignment is stable.
    """
    from .synth import SynthSpec

    if not sources:
        raise IngestionError("build_taxonomy needs at least one source")
    pairs = set()
    for src in sources:
        if isinstance(src, SynthSpec):
            pairs.update((t.name, i.name) for t in src.machine_types for i in src.ids)
        elif isinstance(src, (str, Path)):
            pairs.update((c.machine_type, c.machine_id) for c in scan_dataset(src))
        else:
            items = list(src)
            if items and not isinstance(items[0], ClipRef):
                raise IngestionError(f"unsupported taxonomy source: {type(src).__name__}")
            pairs.update((c.machine_type, c.machine_id) for c in items)
    return Taxonomy.from_pairs(pairs)


def _one_hot(labels, label, level) -> np.ndarray:
    try:
        k = labels.index(label)
    except ValueError:
        raise UnknownLabelError(f"unknown {level} label {label!r}; known: {list(labels)}") from None
    v = np.zeros(len(labels))
    v[k] = 1.0
    return v


def encode_condition(tax: Taxonomy, type_label, id_label, mode) -> np.ndarray:
    """``[one-hot(type) | one-hot(id)]`` restricted to the active levels."""
    mode = ConditionMode(mode)
    blocks = []
    if mode.uses_type:
        blocks.append(_one_hot(tax.level1_labels, type_label, "machine type"))
    if mode.uses_id:
        blocks.append(_one_hot(tax.level2_labels, id_label, "machine id"))
    return np.concatenate(blocks) if blocks else np.zeros(0)
