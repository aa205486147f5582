"""Mini-batch SGD training plus inference and layer read-out."""

from __future__ import annotations

import csv
import logging
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError, ShapeMismatchError
from ..images import GrayImage, as_image
from ..rng import stream
from .checkpoint import Checkpoint
from .config import NetworkConfig, TrainConfig
from .layers import sgd_step
from .network import Network, init_params, trainable

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iteration", "epoch", "train_loss", "train_acc", "val_loss", "val_acc")
METRIC_NOTES = (
    "train_loss: batch SUM of cross entropy plus lambda/2*||w||^2; parameter updates use gradient/batch_size",
    "val_loss: cross entropy averaged per validation sample; val columns empty off-schedule",
)


def prepare_input(img) -> np.ndarray:
    """Zero-center and scale to unit population std; constant images become zeros."""
    p = as_image(img).pixels
    centered = p - p.mean()
    std = np.sqrt(np.mean(centered * centered))
    return centered / std if std > 0 else centered


def _augmented(x: np.ndarray, y: np.ndarray):
    return (np.concatenate([x, x[:, :, ::-1], x[:, ::-1, :]]),
            np.concatenate([y, y, y]))


def split_indices(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    """Class-stratified random split; every class keeps at least one sample per side."""
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_fraction * len(idx)))
        n_val = min(max(n_val, 1), len(idx) - 1)
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 128) -> tuple[float, float]:
    """Mean cross entropy and accuracy in inference mode."""
    probs = net.predict_proba(x, batch)
    picked = probs[np.arange(len(y)), y]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    acc = float(np.mean(probs.argmax(axis=1) == y))
    return loss, acc


def train(images: Sequence, labels, net: NetworkConfig, cfg: TrainConfig = TrainConfig(),
          augment: bool = True, meta: Optional[dict] = None, split=None):
    """Train ``net`` on labelled images; returns ``(Checkpoint, metric rows)``.

    Labels are class indices ``0..classes-1``. The split is made on source
    images before augmentation, so mirrored copies of a validation image never
    reach the training side. ``split`` may fix it as ``(train_idx, val_idx)``;
    otherwise a stratified split is drawn from the ``split`` stream.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels):
        raise DataError("images and labels differ in length")
    if len(labels) < 2 * net.classes:
        raise DataError(f"need at least {2 * net.classes} images for {net.classes} classes")
    if labels.min() < 0 or labels.max() >= net.classes:
        raise DataError(f"labels must lie in [0, {net.classes})")
    counts = np.bincount(labels, minlength=net.classes)
    if np.any(counts < 2):
        raise DataError(f"every class needs at least two images; counts are {counts.tolist()}")

    x = np.stack([prepare_input(im) for im in images])
    w, h, _ = net.input_shape
    if x.shape[1:] != (h, w):
        raise ShapeMismatchError(f"images are {x.shape[2]}x{x.shape[1]}, network expects {w}x{h}")

    seed = cfg.seed
    if split is None:
        tr, va = split_indices(labels, cfg.val_fraction, stream(seed, "split"))
    else:
        tr, va = (np.sort(np.asarray(s, dtype=np.int64)) for s in split)
        if len(np.intersect1d(tr, va)) or len(tr) + len(va) != len(labels) \
                or not np.array_equal(np.union1d(tr, va), np.arange(len(labels))):
            raise DataError("split must partition the image indices")
        if len(va) == 0:
            raise DataError("validation split is empty")
    x_tr, y_tr, x_va, y_va = x[tr], labels[tr], x[va], labels[va]
    if augment:
        x_tr, y_tr = _augmented(x_tr, y_tr)
        x_va, y_va = _augmented(x_va, y_va)
    if cfg.batch_size > len(y_tr):
        raise ConfigError(f"batch size {cfg.batch_size} exceeds the {len(y_tr)} training images")

    params = init_params(net, stream(seed, "init"))
    network = Network(net, params)
    shuffle = stream(seed, "shuffle")
    val_shuffle = stream(seed, "val-shuffle")
    drop = stream(seed, "dropout")

    rows = []
    iteration = 0
    n_batches = -(-len(y_tr) // cfg.batch_size)
    total = cfg.epochs * n_batches
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(len(y_tr))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, _, probs, grads = network.loss_and_grads(
                x_tr[idx], y_tr[idx], cfg.l2_lambda, rng=drop, dropout_rate=cfg.dropout_rate)
            # gradient of the batch sum, scaled to a per-sample mean
            grads = {k: g / len(idx) for k, g in grads.items()}
            network.params.update(sgd_step({k: network.params[k] for k in grads}, grads,
                                           cfg.learning_rate))
            iteration += 1
            row = {
                "iteration": iteration,
                "epoch": epoch,
                "train_loss": loss,
                "train_acc": float(np.mean(probs.argmax(axis=1) == y_tr[idx])),
                "val_loss": None,
                "val_acc": None,
            }
            if iteration % cfg.val_frequency == 0 or iteration == total:
                perm = val_shuffle.permutation(len(y_va))
                row["val_loss"], row["val_acc"] = evaluate(network, x_va[perm], y_va[perm])
                log.info("iter %d epoch %d train_loss %.4f val_loss %.4f val_acc %.3f",
                         iteration, epoch, loss, row["val_loss"], row["val_acc"])
            rows.append(row)

    last_val = next(r for r in reversed(rows) if r["val_acc"] is not None)
    info = {
        "seed": seed,
        "epochs": cfg.epochs,
        "iterations": iteration,
        "train": cfg.to_dict(),
        "augment": bool(augment),
        "final_train_loss": rows[-1]["train_loss"],
        "final_val_loss": last_val["val_loss"],
        "final_val_acc": last_val["val_acc"],
        "val_indices": va.tolist(),
    }
    if meta:
        info.update(meta)
    return Checkpoint(net, network.params, info), rows


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        for note in METRIC_NOTES:
            fh.write(f"# {note}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(["" if r[c] is None else repr(r[c]) for c in METRIC_COLUMNS])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        row = {}
        for c in METRIC_COLUMNS:
            v = rec[c]
            row[c] = None if v == "" else (int(v) if c in ("iteration", "epoch") else float(v))
        rows.append(row)
    return rows


def _input_batch(ckpt: Checkpoint, img) -> np.ndarray:
    img = as_image(img)
    w, h, _ = ckpt.config.input_shape
    if img.shape != (h, w):
        raise ShapeMismatchError(f"image is {img.width}x{img.height}, network expects {w}x{h}")
    return prepare_input(img)[None]


def predict(ckpt: Checkpoint, img: GrayImage) -> np.ndarray:
    """Class probabilities for one image (inference mode)."""
    return ckpt.network().forward(_input_batch(ckpt, img))[0]


def predict_many(ckpt: Checkpoint, images) -> np.ndarray:
    x = np.stack([_input_batch(ckpt, im)[0] for im in images])
    return ckpt.network().predict_proba(x)


def activations_at(ckpt: Checkpoint, img: GrayImage, layer_index: int) -> np.ndarray:
    """Output of layer ``layer_index`` for one image, as (channels, h, w)."""
    if not 0 <= layer_index < len(ckpt.config.layers):
        raise ConfigError(f"layer index {layer_index} out of range")
    out = ckpt.network().forward(_input_batch(ckpt, img), until=layer_index)[0]
    return out.transpose(2, 0, 1) if out.ndim == 3 else out


def activations_many(ckpt: Checkpoint, images, layer_index: int, batch: int = 64) -> np.ndarray:
    net = ckpt.network()
    x = np.stack([_input_batch(ckpt, im)[0] for im in images])
    outs = [net.forward(x[s:s + batch], until=layer_index) for s in range(0, len(x), batch)]
    out = np.concatenate(outs)
    return out.transpose(0, 3, 1, 2) if out.ndim == 4 else out


def untrained_checkpoint(net: NetworkConfig, seed: int = 0) -> Checkpoint:
    return Checkpoint(net, init_params(net, stream(seed, "init")), {"seed": seed, "epochs": 0})


def trainable_names(ckpt: Checkpoint) -> list[str]:
    return [k for k in ckpt.params if trainable(k)]
