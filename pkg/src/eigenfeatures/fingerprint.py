"""Visual fingerprints of what a trained network responds to.

Two summaries of one layer's feature maps are offered. The alpha fingerprint
is the single channel holding the strongest activation. The eigen
fingerprint is the first left singular vector of the matrix whose columns
are all the (rescaled, resized) channel maps, which pools every channel
instead of trusting one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cnn.checkpoint import Checkpoint
from .cnn.config import BatchNorm, Conv, MaxPool, NetworkConfig, ReLU
from .cnn.training import activations_at, activations_many
from .container import frame, pack_text, unframe, unpack_text, write_atomic
from .errors import ConfigError, CorruptPayloadError, DegenerateInputError, ShapeMismatchError
from .images import GrayImage, as_image, contrast_stretch, resize_bilinear, rescale01, write_pgm
from .svd import canonical_sign, pearson, svd_via_gram
from .synth import class_ordering

MAGIC = b"FPRT"
VERSION = 1
HIST_BINS = 32
# gaps below this are flagged in the metadata; u1 is then poorly determined
DEGENERATE_GAP = 1e-3


def default_layer(config: NetworkConfig) -> int:
    """Layer index of the ReLU after the second convolution."""
    return config.relu_index(2)


def strongest_channel(activations) -> int:
    """Channel holding the global maximum of a (k, h, w) tensor; ties go to the lowest index."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] < 1:
        raise ShapeMismatchError(f"expected a (channels, h, w) tensor, got shape {a.shape}")
    # row-major flattening puts channel first, so the first hit has the lowest channel
    return int(np.argmax(a) // (a.shape[1] * a.shape[2]))


def _maps(ckpt: Checkpoint, img, layer_id: Optional[int]) -> tuple[np.ndarray, int]:
    layer_id = default_layer(ckpt.config) if layer_id is None else layer_id
    maps = activations_at(ckpt, img, layer_id)
    if maps.ndim != 3:
        raise ConfigError(f"layer {layer_id} has no spatial feature maps")
    return maps, layer_id


def process_map(fmap, width: int, height: int) -> GrayImage:
    """Rescale one feature map to [0, 1], then resize it to ``width x height``."""
    return resize_bilinear(rescale01(GrayImage(fmap)), width, height)


def alpha_fingerprint(ckpt: Checkpoint, img, layer_id: Optional[int] = None) -> GrayImage:
    img = as_image(img)
    maps, _ = _maps(ckpt, img, layer_id)
    return process_map(maps[strongest_channel(maps)], img.width, img.height)


def alpha_record(ckpt: Checkpoint, img, layer_id: Optional[int] = None) -> Fingerprint:
    """The alpha fingerprint packaged for storage; it has no spectrum, so the gap is 0."""
    img = as_image(img)
    maps, layer_id = _maps(ckpt, img, layer_id)
    alpha = strongest_channel(maps)
    image = process_map(maps[alpha], img.width, img.height)
    return Fingerprint(image, np.zeros(0), layer_id, ckpt.digest(), 0.0, "alpha", alpha)


def feature_matrix(maps, width: int, height: int) -> np.ndarray:
    """Stack processed channel maps as the columns of an ``(width*height) x k`` matrix."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ShapeMismatchError(f"expected (channels, h, w) maps, got shape {maps.shape}")
    return np.column_stack([process_map(m, width, height).flat() for m in maps])


def assemble_feature_matrix(ckpt: Checkpoint, img, layer_id: Optional[int] = None) -> np.ndarray:
    img = as_image(img)
    maps, _ = _maps(ckpt, img, layer_id)
    return feature_matrix(maps, img.width, img.height)


@dataclass(frozen=True)
class Fingerprint:
    image: GrayImage
    spectrum: np.ndarray
    layer_id: int
    model_digest: str
    spectral_gap: float
    method: str = "eigen"
    channel: Optional[int] = None  # alpha fingerprints only

    @property
    def degenerate(self) -> bool:
        return self.method == "eigen" and self.spectral_gap < DEGENERATE_GAP

    def metadata(self) -> dict:
        meta = {"layer_id": self.layer_id, "model_digest": self.model_digest,
                "spectral_gap": self.spectral_gap, "degenerate_gap": self.degenerate,
                "method": self.method}
        if self.channel is not None:
            meta["channel"] = self.channel
        return meta

    def to_bytes(self) -> bytes:
        spectrum = np.asarray(self.spectrum, dtype="<f8")
        body = struct.pack("<III", self.image.width, self.image.height, len(spectrum))
        body += np.ascontiguousarray(self.image.pixels, dtype="<f8").tobytes()
        body += spectrum.tobytes()
        body += pack_text(json.dumps(self.metadata(), sort_keys=True))
        return frame(MAGIC, VERSION, body)

    @classmethod
    def from_bytes(cls, blob: bytes) -> Fingerprint:
        body = unframe(blob, MAGIC, VERSION)
        if len(body) < 12:
            raise CorruptPayloadError("fingerprint header is truncated")
        w, h, k = struct.unpack_from("<III", body, 0)
        offset = 12
        end = offset + 8 * (w * h + k)
        if w < 1 or h < 1 or end > len(body):
            raise CorruptPayloadError("fingerprint payload is truncated")
        pixels = np.frombuffer(body, dtype="<f8", count=w * h, offset=offset).reshape(h, w)
        spectrum = np.frombuffer(body, dtype="<f8", count=k, offset=offset + 8 * w * h)
        text, offset = unpack_text(body, end)
        if offset != len(body):
            raise CorruptPayloadError("trailing bytes after fingerprint metadata")
        try:
            meta = json.loads(text)
            channel = meta.get("channel")
            return cls(GrayImage(pixels.astype(np.float64)), spectrum.astype(np.float64),
                       int(meta["layer_id"]), str(meta["model_digest"]), float(meta["spectral_gap"]),
                       str(meta.get("method", "eigen")), None if channel is None else int(channel))
        except (ValueError, KeyError) as exc:
            raise CorruptPayloadError(f"unreadable fingerprint metadata: {exc}") from None

    def save(self, path, render: bool = True) -> None:
        """Write the binary file and, next to it, a contrast-stretched PGM rendering."""
        path = Path(path)
        write_atomic(path, self.to_bytes())
        if render:
            write_pgm(contrast_stretch(self.image, out_max=255.0), path.with_suffix(".pgm"))


def load_fingerprint(path) -> Fingerprint:
    with open(path, "rb") as fh:
        return Fingerprint.from_bytes(fh.read())


def eigen_from_matrix(x: np.ndarray, width: int, height: int):
    """First left singular vector of ``x`` as a ``[0, 1]`` image; also the spectrum.

    Columns are put in lexicographic order first. The result then depends
    only on the set of columns, so any channel permutation gives
    bit-identical output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != width * height:
        raise ShapeMismatchError(f"feature matrix {x.shape} does not match a {width}x{height} image")
    if not np.any(x):
        raise DegenerateInputError("every feature map is zero; no dominant mode exists")
    x = x[:, np.lexsort(x[::-1])]
    svd = svd_via_gram(x)
    u1 = canonical_sign(svd.U[:, 0])
    image = rescale01(GrayImage(u1.reshape(height, width)))
    return image, svd.sigma, svd.spectral_gap


def eigen_fingerprint(ckpt: Checkpoint, img, layer_id: Optional[int] = None) -> Fingerprint:
    img = as_image(img)
    maps, layer_id = _maps(ckpt, img, layer_id)
    image, spectrum, gap = eigen_from_matrix(feature_matrix(maps, img.width, img.height),
                                             img.width, img.height)
    return Fingerprint(image, spectrum, layer_id, ckpt.digest(), gap)


def fingerprint_correlation(a, b) -> float:
    """Pearson r between two equally sized fingerprint images."""
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"fingerprints are {a.width}x{a.height} and {b.width}x{b.height}")
    return pearson(a.pixels, b.pixels)


def robustness_compare(ckpt_a: Checkpoint, ckpt_b: Checkpoint, img,
                       layer_a: Optional[int] = None, layer_b: Optional[int] = None) -> float:
    """Correlation of the eigen fingerprints two models give for the same image."""
    fa = eigen_fingerprint(ckpt_a, img, layer_a)
    fb = eigen_fingerprint(ckpt_b, img, layer_b)
    return fingerprint_correlation(fa.image, fb.image)


@dataclass(frozen=True)
class ClassActivationSeries:
    """Per-image mean activation at one layer, with each image's class label."""

    layer_id: int
    labels: np.ndarray
    values: np.ndarray

    def by_class(self) -> dict:
        return {int(c): self.values[self.labels == c] for c in np.unique(self.labels)}

    def class_means(self) -> dict:
        return {c: float(v.mean()) for c, v in self.by_class().items()}

    def ordering(self):
        """``(order, stats, ties)`` as computed by :func:`class_ordering`."""
        return class_ordering(self.by_class())


def mean_activation_per_class(ckpt: Checkpoint, images: Sequence, labels,
                              layer_id: Optional[int] = None,
                              alpha_only: bool = False) -> ClassActivationSeries:
    """Mean of the layer output per image, over all channels and pixels.

    With ``alpha_only`` the mean is taken over the strongest channel only.
    """
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ConfigError("dataset is empty")
    if len(images) != len(labels):
        raise ShapeMismatchError("images and labels differ in length")
    layer_id = default_layer(ckpt.config) if layer_id is None else layer_id
    acts = activations_many(ckpt, images, layer_id)
    if alpha_only:
        if acts.ndim != 4:
            raise ConfigError(f"layer {layer_id} has no channels to pick from")
        values = np.array([a[strongest_channel(a)].mean() for a in acts])
    else:
        values = acts.reshape(len(acts), -1).mean(axis=1)
    return ClassActivationSeries(layer_id, labels, values)


@dataclass(frozen=True)
class ModeProjection:
    """Loadings of every image on the first two modes of the image stack."""

    loadings: np.ndarray  # (images, 2)
    sigma: np.ndarray
    bin_edges: np.ndarray
    histograms: dict  # label -> counts of first-mode loadings

    def class_means(self, labels) -> dict:
        labels = np.asarray(labels)
        return {int(c): float(self.loadings[labels == c, 0].mean()) for c in np.unique(labels)}


def dataset_mode_projection(images: Sequence, labels=None, bins: int = HIST_BINS) -> ModeProjection:
    """Project each flattened image on the two leading left singular vectors of the stack."""
    if len(images) < 2:
        raise ConfigError("need at least two images")
    images = [as_image(im) for im in images]
    if len({im.shape for im in images}) != 1:
        raise ShapeMismatchError("all images must share one size")
    x = np.column_stack([im.flat() for im in images])
    svd = svd_via_gram(x)
    modes = [canonical_sign(svd.U[:, i]) if np.any(svd.U[:, i]) else svd.U[:, i]
             for i in range(min(2, svd.U.shape[1]))]
    loadings = np.column_stack([x.T @ u for u in modes])
    if loadings.shape[1] < 2:
        loadings = np.column_stack([loadings, np.zeros(len(images))])
    first = loadings[:, 0]
    lo, hi = float(first.min()), float(first.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    labels = np.zeros(len(images), dtype=int) if labels is None else np.asarray(labels)
    hist = {int(c): np.histogram(first[labels == c], bins=edges)[0] for c in np.unique(labels)}
    return ModeProjection(loadings, svd.sigma, edges, hist)


def _blocks(config: NetworkConfig) -> list[tuple[int, int]]:
    """``(start, stop)`` layer ranges of each conv block (conv, BN, ReLU, optional pool)."""
    spans = []
    layers = config.layers
    for i in config.conv_indices():
        j = i + 1
        while j < len(layers) and isinstance(layers[j], (BatchNorm, ReLU)):
            j += 1
        if j < len(layers) and isinstance(layers[j], MaxPool):
            j += 1
        spans.append((i, j))
    return spans


def reduced_capacity_config(config: NetworkConfig) -> NetworkConfig:
    """Drop the last conv block and halve the channels of the first two conv layers."""
    spans = _blocks(config)
    if len(spans) < 2:
        raise ConfigError("reducing capacity needs at least two conv blocks")
    first_two = [config.layers[s] for s, _ in spans[:2]]
    if any(c.filters % 2 for c in first_two):
        raise ConfigError("the first two conv layers need even channel counts to halve")
    start, stop = spans[-1]
    layers = list(config.layers[:start]) + list(config.layers[stop:])
    for s, _ in spans[:2]:
        conv = layers[s]
        layers[s] = Conv(conv.kernel, conv.filters // 2, conv.pad, conv.stride)
    return NetworkConfig(config.input_shape, tuple(layers), config.classes)
