"""Per-patch manifest records and their CSV persistence."""

import csv
import os
from dataclasses import dataclass, replace

CLASS_LABELS = ("EE", "CD", "Normal")
CLUSTER_VALUES = ("unassigned", "useful", "not_useful")
SPLIT_VALUES = ("train", "test")

MANIFEST_HEADER = ["patch_id", "slide_id", "class_label", "grid_x", "grid_y",
                   "cluster", "split"]


@dataclass(frozen=True)
class PatchRecord:
    patch_id: str
    slide_id: str
    class_label: str
    grid_x: int
    grid_y: int
    cluster: str = "unassigned"
    split: str = "train"

    def __post_init__(self):
        if self.class_label not in CLASS_LABELS:
            raise ValueError(f"unknown class label {self.class_label!r}")
        if self.cluster not in CLUSTER_VALUES:
            raise ValueError(f"unknown cluster value {self.cluster!r}")
        if self.split not in SPLIT_VALUES:
            raise ValueError(f"unknown split value {self.split!r}")
        if self.grid_x < 0 or self.grid_y < 0:
            raise ValueError("grid coordinates must be non-negative")

    def with_cluster(self, cluster: str) -> "PatchRecord":
        return replace(self, cluster=cluster)

    def with_split(self, split: str) -> "PatchRecord":
        return replace(self, split=split)


def write_manifest(path, records) -> None:
    records = list(records)
    seen = set()
    for rec in records:
        if rec.patch_id in seen:
            raise ValueError(f"duplicate patch_id {rec.patch_id!r}")
        seen.add(rec.patch_id)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            writer.writerow([rec.patch_id, rec.slide_id, rec.class_label,
                             rec.grid_x, rec.grid_y, rec.cluster, rec.split])
    os.replace(tmp, path)


def read_manifest(path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(
                f"bad manifest header {header!r}, expected {MANIFEST_HEADER!r}"
            )
        records = []
        for row in reader:
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"bad manifest row: {row!r}")
            records.append(PatchRecord(
                patch_id=row[0], slide_id=row[1], class_label=row[2],
                grid_x=int(row[3]), grid_y=int(row[4]),
                cluster=row[5], split=row[6]))
    return records
