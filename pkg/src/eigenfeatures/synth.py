"""Seeded four-class texture generator.

Each class is Gaussian-smoothed white noise with its own correlation length
and amplitude. Mean gradient magnitude scales roughly as amplitude divided
by correlation length, which fixes the class ordering by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError, DataError, OrderingError
from .gradients import mean_gradient_module
from .images import GrayImage, read_pgm, write_pgm
from .rng import stream

GENERATOR_VERSION = 1
MANIFEST_VERSION = 1
CLIP_WARN_FRACTION = 0.01
TARGET_ORDER = (3, 2, 4, 1)


@dataclass(frozen=True)
class ClassSpec:
    label: int
    correlation_length: float
    amplitude: float
    base_level: float = 128.0

    def __post_init__(self):
        if self.correlation_length < 1:
            raise ConfigError("correlation_length must be >= 1 pixel")
        if self.amplitude <= 0:
            raise ConfigError("amplitude must be positive")
        if self.base_level - 3 * self.amplitude < 0 or self.base_level + 3 * self.amplitude > 255:
            raise ConfigError(f"class {self.label}: base_level +- 3*amplitude leaves [0, 255]")


# class 3 finest and strongest, then 2, 4, 1
DEFAULT_SPECS = (
    ClassSpec(1, correlation_length=6.0, amplitude=28.0),
    ClassSpec(2, correlation_length=2.5, amplitude=36.0),
    ClassSpec(3, correlation_length=1.5, amplitude=40.0),
    ClassSpec(4, correlation_length=4.0, amplitude=32.0),
)


def _kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(4 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gen_field_with_stats(spec: ClassSpec, size: int, seed: int) -> tuple[GrayImage, float]:
    """Generate one field; also return the fraction of pixels that were clipped."""
    if size < 8:
        raise ConfigError("field size must be at least 8")
    rng = stream(seed, "field")
    noise = rng.standard_normal((size, size))
    k = _kernel(spec.correlation_length)
    smooth = convolve1d(convolve1d(noise, k, axis=0, mode="wrap"), k, axis=1, mode="wrap")
    # stationary std of separable smoothed unit white noise
    std = float(np.sum(k * k))
    field = spec.base_level + spec.amplitude * smooth / std
    clipped = float(np.mean((field < 0) | (field > 255)))
    field = np.rint(np.clip(field, 0.0, 255.0))
    return GrayImage(field), clipped


def gen_field(spec: ClassSpec, size: int, seed: int) -> GrayImage:
    """Integer-valued texture in [0, 255]; identical inputs give identical pixels."""
    return gen_field_with_stats(spec, size, seed)[0]


def image_seed(global_seed: int, label: int, index: int) -> int:
    return int(stream(global_seed, "generator", label, index).integers(0, 2**63 - 1))


def assign_splits(labels, seed: int, val_fraction: float = 0.3) -> list[str]:
    from .cnn.training import split_indices

    labels = np.asarray(labels)
    _, va = split_indices(labels, val_fraction, stream(seed, "split"))
    tags = ["train"] * len(labels)
    for i in va:
        tags[i] = "val"
    return tags


def generate(specs=DEFAULT_SPECS, n_per_class: int = 100, size: int = 64, seed: int = 0):
    """In-memory dataset: list of ``(image, label, image_seed, clipped_fraction)``."""
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1 (empty manifest)")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError("class labels must be distinct")
    out = []
    for spec in specs:
        for i in range(n_per_class):
            s = image_seed(seed, spec.label, i)
            img, clipped = gen_field_with_stats(spec, size, s)
            out.append((img, spec.label, s, clipped))
    return out


@dataclass
class Manifest:
    entries: list
    seed: int
    version: int = MANIFEST_VERSION
    generator_version: int = GENERATOR_VERSION
    root: str = "."
    extra: dict = None

    def labels(self) -> list[int]:
        return [e["label"] for e in self.entries]

    def path(self, entry) -> Path:
        return Path(self.root) / entry["path"]

    def images(self) -> list[GrayImage]:
        out = []
        for e in self.entries:
            p = self.path(e)
            if not p.exists():
                raise DataError(f"manifest entry missing on disk: {p}")
            out.append(read_pgm(p))
        return out

    def to_dict(self) -> dict:
        d = {"version": self.version, "generator_version": self.generator_version,
             "seed": self.seed, "entries": self.entries}
        if self.extra:
            d.update(self.extra)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
        entries = d["entries"]
        seed = d["seed"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from None
    extra = {k: v for k, v in d.items() if k not in ("version", "generator_version", "seed", "entries")}
    return Manifest(entries, seed, d.get("version", MANIFEST_VERSION),
                    d.get("generator_version", GENERATOR_VERSION), str(path.parent), extra)


def class_ordering(values_by_class: dict, sigmas: float = 3.0):
    """Descending class order of per-class means plus statistics and ties.

    Two adjacent classes are a tie when their means differ by less than
    ``sigmas`` pooled standard errors.
    """
    stats = {}
    for label, vals in values_by_class.items():
        v = np.asarray(vals, dtype=np.float64)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        stats[label] = {"mean": float(v.mean()), "std": std, "count": len(v)}
    order = sorted(stats, key=lambda c: (-stats[c]["mean"], c))
    ties = []
    for a, b in zip(order, order[1:]):
        sa, sb = stats[a], stats[b]
        se = np.sqrt(sa["std"] ** 2 / sa["count"] + sb["std"] ** 2 / sb["count"])
        if sa["mean"] - sb["mean"] < sigmas * se or sa["mean"] == sb["mean"]:
            ties.append((a, b))
    return order, stats, ties


def ordering_of_images(images, labels, method: str = "sobel"):
    by_class: dict = {}
    for img, label in zip(images, labels):
        by_class.setdefault(label, []).append(mean_gradient_module(img, method))
    return class_ordering(by_class)


def gen_dataset(out_dir, specs=DEFAULT_SPECS, n_per_class: int = 100, size: int = 64,
                seed: int = 0, method: str = "sobel", check_order: bool = True) -> Manifest:
    """Write ``4 * n_per_class`` PGM files plus ``manifest.json`` under ``out_dir``.

    Fails with :class:`OrderingError` unless class means of the gradient module
    follow 3 > 2 > 4 > 1 with every adjacent gap at least three pooled
    standard errors.
    """
    if len(specs) != 4:
        raise ConfigError("gen_dataset expects exactly four class specs")
    data = generate(specs, n_per_class, size, seed)
    labels = [d[1] for d in data]
    if check_order:
        order, _, ties = ordering_of_images([d[0] for d in data], labels, method)
        if tuple(order) != TARGET_ORDER or ties:
            raise OrderingError(f"class order {order} (ties {ties}) differs from {TARGET_ORDER}")
    out = Path(out_dir)
    splits = assign_splits(labels, seed)
    entries = []
    counters: dict = {}
    for (img, label, s, clipped), split in zip(data, splits):
        i = counters.get(label, 0)
        counters[label] = i + 1
        rel = f"class{label}/img_{i:04d}.pgm"
        (out / f"class{label}").mkdir(parents=True, exist_ok=True)
        write_pgm(img, out / rel)
        entry = {"path": rel, "label": label, "seed": s, "split": split}
        if clipped > CLIP_WARN_FRACTION:
            entry["warning"] = f"clipped {clipped:.4f} of pixels"
        entries.append(entry)
    manifest = Manifest(entries, seed, root=str(out),
                        extra={"size": size, "specs": [asdict(s) for s in specs]})
    manifest.save(out / "manifest.json")
    return manifest


def verify_ordering(manifest: Manifest, method: str = "sobel"):
    """Recompute per-image gradient means from disk; returns ``(order, stats, ties)``."""
    for e in manifest.entries:
        if not os.path.exists(manifest.path(e)):
            raise DataError(f"manifest entry missing on disk: {manifest.path(e)}")
    return ordering_of_images(manifest.images(), manifest.labels(), method)
