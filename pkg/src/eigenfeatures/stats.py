"""Per-image intensity and gradient statistics with per-class aggregates.

Reports are CSV. Per-image rows come first under a fixed header. Aggregates
follow as ``#``-prefixed lines, so plain CSV readers skip them. Floats are
written with ``repr`` and read back bit-exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .container import write_atomic
from .errors import DataError
from .gradients import METHODS, gradient_module, mean_intensity
from .images import as_image
from .synth import Manifest

COLUMNS = ("image_id", "class", "mean_intensity", "mean_grad", "tv")
METRICS = ("mean_intensity", "mean_grad", "tv")
AGGREGATE_TAG = "aggregate"


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    label: int
    mean_intensity: float
    mean_grad: float
    tv: float


def _aggregate(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "std": std, "count": len(v)}


@dataclass
class SliceStatistics:
    records: list = field(default_factory=list)
    method: str = "sobel"

    def classes(self) -> list[int]:
        return sorted({r.label for r in self.records})

    def values(self, metric: str, label=None) -> list[float]:
        return [getattr(r, metric) for r in self.records if label is None or r.label == label]

    def aggregates(self) -> dict:
        """``{label: {metric: {mean, std, count}}}``; std is the sample std."""
        return {c: {m: _aggregate(self.values(m, c)) for m in METRICS} for c in self.classes()}

    def by_class(self, metric: str = "mean_grad") -> dict:
        return {c: self.values(metric, c) for c in self.classes()}


def record_for(image_id: str, label: int, img, method: str = "sobel") -> ImageRecord:
    img = as_image(img)
    tv = float(gradient_module(img, method).pixels.sum())
    return ImageRecord(image_id, int(label), mean_intensity(img), tv / img.size, tv)


def statistics_of_images(ids: Sequence[str], images, labels, method: str = "sobel") -> SliceStatistics:
    if not (len(ids) == len(images) == len(labels)):
        raise DataError("ids, images and labels differ in length")
    return SliceStatistics([record_for(i, c, im, method) for i, im, c in zip(ids, images, labels)],
                           method)


def compute_statistics(manifest: Manifest, method: str = "sobel") -> SliceStatistics:
    """One record per manifest entry, in manifest order."""
    ids = [e["path"].rsplit(".", 1)[0] for e in manifest.entries]
    return statistics_of_images(ids, manifest.images(), manifest.labels(), method)


def report_text(stats: SliceStatistics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in stats.records:
        writer.writerow([r.image_id, r.label, repr(r.mean_intensity), repr(r.mean_grad), repr(r.tv)])
    buf.write(f"# method,{stats.method}\n")
    for label, metrics in stats.aggregates().items():
        for metric, agg in metrics.items():
            buf.write(f"# {AGGREGATE_TAG},{label},{metric},{agg['mean']!r},{agg['std']!r},{agg['count']}\n")
    return buf.getvalue()


def write_report(stats: SliceStatistics, path) -> None:
    write_atomic(path, report_text(stats).encode("utf-8"))


def read_report(path):
    """Parse a report; returns ``(SliceStatistics, aggregates)`` with aggregates as written."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = [line for line in lines if not line.startswith("#")]
    method = "sobel"
    aggregates: dict = {}
    for line in lines:
        if not line.startswith("# "):
            continue
        parts = line[2:].split(",")
        if parts[0] == "method" and len(parts) == 2 and parts[1] in METHODS:
            method = parts[1]
        elif parts[0] == AGGREGATE_TAG and len(parts) == 6:
            label, metric = int(parts[1]), parts[2]
            aggregates.setdefault(label, {})[metric] = {
                "mean": float(parts[3]), "std": float(parts[4]), "count": int(parts[5])}
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise DataError(f"report columns {reader.fieldnames} differ from {list(COLUMNS)}")
    records = [ImageRecord(row["image_id"], int(row["class"]), float(row["mean_intensity"]),
                           float(row["mean_grad"]), float(row["tv"])) for row in reader]
    return SliceStatistics(records, method), aggregates
