"""Discovery of clips in a ``<root>/<machine_type>/id_<NN>/<normal|abnormal>/*.wav`` tree."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

from .errors import IngestionError


class Label(str, enum.Enum):
    NORMAL = "normal"
    ANOMALY = "anomaly"


_LABEL_DIRS = {"normal": Label.NORMAL, "abnormal": Label.ANOMALY}


@dataclass(frozen=True)
class ClipRef:
    path: Path
    machine_type: str
    machine_id: str
    label: Label

    def clip_id(self, root) -> str:
        return self.path.relative_to(root).as_posix()


def scan_dataset(root, labels=(Label.NORMAL, Label.ANOMALY)) -> list[ClipRef]:
    """All clips under ``root`` in a stable (sorted) order.

    Directories that do not follow the layout are ignored, but a root with no
    usable clip at all is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    wanted = {Label(lab) for lab in labels}
    clips = []
    for type_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for id_dir in sorted(p for p in type_dir.iterdir() if p.is_dir() and p.name.startswith("id_")):
            for sub, label in sorted(_LABEL_DIRS.items()):
                if label not in wanted:
                    continue
                d = id_dir / sub
                if not d.is_dir():
                    continue
                for wav in sorted(d.glob("*.wav")):
                    clips.append(ClipRef(wav, type_dir.name, id_dir.name, label))
    if not clips:
        raise IngestionError(
            f"no clips found under {root}; expected <type>/id_<NN>/<normal|abnormal>/*.wav"
        )
    return clips
