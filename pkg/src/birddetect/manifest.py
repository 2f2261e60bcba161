"""Label manifests: CSV files pairing clip ids with binary labels.

The expected layout is a header row of ``itemid,hasbird``. Unlabeled sets
(test data) carry only ``itemid``; their entries get ``label=None``, which
is distinct from the absent class 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

__all__ = ["Manifest", "ManifestEntry", "ManifestError", "load_manifest"]


class ManifestError(ValueError):
    """Raised for structural problems in a manifest CSV."""


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    label: int | None  # 1 present, 0 absent, None unknown
    path: Path | None = None


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.clip_id for e in self.entries]

    @property
    def labels(self) -> list[int | None]:
        return [e.label for e in self.entries]

    @property
    def is_labeled(self) -> bool:
        return all(e.label is not None for e in self.entries)


def load_manifest(csv_path: str | Path, audio_dir: str | Path | None = None) -> Manifest:
    """Parse a manifest CSV, optionally resolving audio paths.

    When ``audio_dir`` is given, each entry's path is resolved to
    ``audio_dir/<itemid>.wav`` and must exist. Without it, entries carry
    ids and labels only (enough for split arithmetic and evaluation).
    """
    csv_path = Path(csv_path)
    audio_dir = Path(audio_dir) if audio_dir is not None else None

    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{csv_path}: empty manifest, expected a header row") from None
        header = [h.strip() for h in header]
        if "itemid" not in header:
            raise ManifestError(f"{csv_path}: header {header} lacks an itemid column")
        id_col = header.index("itemid")
        label_col = header.index("hasbird") if "hasbird" in header else None

        entries: list[ManifestEntry] = []
        seen: set[str] = set()
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= id_col:
                raise ManifestError(f"{csv_path}: row {row_num} has no itemid field")
            clip_id = row[id_col].strip()
            if not clip_id:
                raise ManifestError(f"{csv_path}: row {row_num} has an empty itemid")
            if clip_id in seen:
                raise ManifestError(f"{csv_path}: duplicate itemid {clip_id!r} at row {row_num}")
            seen.add(clip_id)

            label: int | None = None
            if label_col is not None:
                raw = row[label_col].strip() if len(row) > label_col else ""
                if raw:
                    if raw not in ("0", "1"):
                        raise ManifestError(
                            f"{csv_path}: row {row_num}: hasbird must be 0 or 1, got {raw!r}"
                        )
                    label = int(raw)

            path = None
            if audio_dir is not None:
                name = clip_id if clip_id.endswith(".wav") else clip_id + ".wav"
                path = audio_dir / name
                if not path.exists():
                    raise ManifestError(f"{csv_path}: row {row_num}: audio file not found: {path}")
            entries.append(ManifestEntry(clip_id=clip_id, label=label, path=path))

    return Manifest(entries=entries)
