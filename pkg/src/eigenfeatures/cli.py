"""Command-line entry point: ``eigenfeatures <command> [options]``.

Settings come from three places. A flag beats a value in the ``--config``
JSON file, which beats the built-in default. Exit status is 0 on success,
2 for configuration errors, 3 for data errors and 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .cnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .cnn.config import NetworkConfig, TrainConfig, desk_config
from .cnn.training import train, write_metrics
from .container import write_atomic
from .errors import (
    EXIT_DATA,
    EXIT_OK,
    ArtifactError,
    ConfigError,
    DataError,
    InvalidGeometryError,
)
from .fingerprint import (
    alpha_record,
    default_layer,
    dataset_mode_projection,
    eigen_fingerprint,
    fingerprint_correlation,
    mean_activation_per_class,
    reduced_capacity_config,
)
from .gradients import METHODS, gradient_module
from .images import GrayImage, read_pgm, rescale01, write_pgm
from .stats import compute_statistics, write_report
from .synth import DEFAULT_SPECS, ClassSpec, Manifest, class_ordering, gen_dataset, load_manifest

log = logging.getLogger("eigenfeatures")

REDUCED_BATCH = 32


@dataclass
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    deterministic: bool = True
    n_per_class: int = 100
    size: int = 64
    specs: Optional[list] = None  # list of ClassSpec fields; None means the defaults
    gradient_method: str = "sobel"
    network: Optional[dict] = None  # NetworkConfig.to_dict(); None means the desk model
    train: dict = field(default_factory=dict)  # TrainConfig fields
    augment: bool = True
    fingerprint_layer: Optional[int] = None

    def __post_init__(self):
        if self.gradient_method not in METHODS:
            raise ConfigError(f"gradient_method must be one of {METHODS}")
        try:
            if self.seed < 0 or self.n_per_class < 1 or self.size < 8:
                raise ConfigError("seed must be >= 0, n_per_class >= 1 and size >= 8")
            self.class_specs()
            self.network_config()
            self.train_config()
        except TypeError as exc:
            raise ConfigError(f"config value has the wrong type: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def class_specs(self) -> tuple:
        if self.specs is None:
            return DEFAULT_SPECS
        try:
            return tuple(ClassSpec(**s) for s in self.specs)
        except TypeError as exc:
            raise ConfigError(f"bad class spec: {exc}") from None

    def network_config(self) -> NetworkConfig:
        if self.network is None:
            return desk_config(self.size)
        return NetworkConfig.from_dict(self.network)

    def train_config(self) -> TrainConfig:
        d = dict(self.train)
        d.setdefault("seed", self.seed)
        d.setdefault("deterministic", self.deterministic)
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


def _resolve(args) -> RunConfig:
    """Layer command-line flags over the config file over the defaults."""
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    if args.seed is not None:
        base["seed"] = args.seed
        base["train"] = {**base["train"], "seed": args.seed}
    if args.deterministic:
        base["deterministic"] = True
    if args.out is not None:
        base["out_dir"] = args.out
    for key in ("data_dir", "gradient_method", "n_per_class", "size", "fingerprint_layer"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    overrides = {k: getattr(args, k, None) for k in ("epochs", "learning_rate", "batch_size")}
    base["train"] = {**base["train"], **{k: v for k, v in overrides.items() if v is not None}}
    if getattr(args, "no_augment", False):
        base["augment"] = False
    return RunConfig.from_dict(base)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    manifest = gen_dataset(out, cfg.class_specs(), cfg.n_per_class, cfg.size, cfg.seed,
                           cfg.gradient_method)
    warnings = sum(1 for e in manifest.entries if "warning" in e)
    if warnings:
        log.warning("%d images clipped more than 1%% of their pixels", warnings)
    print(out / "manifest.json")
    return EXIT_OK


def _manifest(cfg: RunConfig) -> Manifest:
    return load_manifest(Path(cfg.data_dir) / "manifest.json")


def cmd_preprocess(cfg: RunConfig, args) -> int:
    src = _manifest(cfg)
    if "gradient_method" in src.extra:
        raise DataError(f"{cfg.data_dir} already holds gradient images")
    out = _out_dir(cfg)
    entries = []
    for entry, img in zip(src.entries, src.images()):
        grad = gradient_module(img, cfg.gradient_method)
        target = out / entry["path"]
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(GrayImage(rescale01(grad).pixels * 255.0), target)
        if args.sidecar:
            np.save(target.with_suffix(".npy"), grad.pixels)
        entries.append({k: v for k, v in entry.items() if k != "warning"})
    extra = {k: v for k, v in src.extra.items()}
    extra.update({"gradient_method": cfg.gradient_method, "source": str(cfg.data_dir),
                  "sidecar": bool(args.sidecar)})
    derived = Manifest(entries, src.seed, root=str(out), extra=extra)
    derived.save(out / "manifest.json")
    print(out / "manifest.json")
    return EXIT_OK


def _training_images(manifest: Manifest, cfg: RunConfig, raw: bool):
    """Network inputs for every manifest entry and the input mode they represent."""
    derived = "gradient_method" in manifest.extra
    if raw:
        if derived:
            raise ConfigError("raw-intensity training needs the original dataset, not gradient images")
        return manifest.images(), {"input_mode": "raw"}
    if derived:
        images = []
        for entry in manifest.entries:
            sidecar = manifest.path(entry).with_suffix(".npy")
            images.append(GrayImage(np.load(sidecar)) if sidecar.exists() else read_pgm(manifest.path(entry)))
        return images, {"input_mode": "gradient", "gradient_method": manifest.extra["gradient_method"]}
    images = [gradient_module(im, cfg.gradient_method) for im in manifest.images()]
    return images, {"input_mode": "gradient", "gradient_method": cfg.gradient_method}


def cmd_train(cfg: RunConfig, args) -> int:
    manifest = _manifest(cfg)
    images, info = _training_images(manifest, cfg, args.raw)
    net = cfg.network_config()
    tcfg = cfg.train_config()
    if args.reduced:
        net = reduced_capacity_config(net)
        tcfg = tcfg.with_overrides(batch_size=args.batch_size or REDUCED_BATCH)
    class_labels = sorted(set(manifest.labels()))
    if len(class_labels) != net.classes:
        raise DataError(f"dataset has {len(class_labels)} classes, network expects {net.classes}")
    index = {c: i for i, c in enumerate(class_labels)}
    labels = np.array([index[c] for c in manifest.labels()])
    split = None
    tags = [e.get("split") for e in manifest.entries]
    if all(t in ("train", "val") for t in tags):
        split = ([i for i, t in enumerate(tags) if t == "train"],
                 [i for i, t in enumerate(tags) if t == "val"])
    meta = {**info, "class_labels": class_labels, "reduced": bool(args.reduced)}
    ckpt, rows = train(images, labels, net, tcfg, augment=cfg.augment, meta=meta, split=split)
    out = _out_dir(cfg)
    name = args.name or ("reduced" if args.reduced else "model")
    save_checkpoint(ckpt, out / f"{name}.mcnn")
    write_metrics(rows, out / f"{name}_metrics.csv")
    print(f"{out / f'{name}.mcnn'} val_acc={ckpt.meta['final_val_acc']:.4f}")
    return EXIT_OK


def network_input(ckpt: Checkpoint, img: GrayImage, as_is: bool = False) -> GrayImage:
    """Turn a raw test image into what the checkpoint was trained on."""
    if as_is or ckpt.meta.get("input_mode", "raw") == "raw":
        return img
    return gradient_module(img, ckpt.meta.get("gradient_method", "sobel"))


def _read_image(path) -> GrayImage:
    return read_pgm(path)


def _check_geometry(ckpt: Checkpoint, img: GrayImage, label: str) -> None:
    w, h, _ = ckpt.config.input_shape
    if img.shape != (h, w):
        raise InvalidGeometryError(f"{label} expects {w}x{h} images, got {img.width}x{img.height}")


def cmd_fingerprint(cfg: RunConfig, args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    raw = _read_image(args.image)
    _check_geometry(ckpt, raw, "checkpoint")
    x = network_input(ckpt, raw, args.as_is)
    out = _out_dir(cfg)
    stem = Path(args.image).stem
    layer = cfg.fingerprint_layer
    results = {}
    if args.method in ("alpha", "both"):
        results["alpha"] = alpha_record(ckpt, x, layer)
    if args.method in ("eigen", "both"):
        results["eigen"] = eigen_fingerprint(ckpt, x, layer)
    for method, fp in results.items():
        path = out / f"{stem}.{method}.fprt"
        fp.save(path)
        extra = f" channel={fp.channel}" if method == "alpha" else f" spectral_gap={fp.spectral_gap:.6f}"
        flag = " (degenerate gap)" if fp.degenerate else ""
        print(f"{path} layer={fp.layer_id}{extra}{flag}")
    if len(results) == 2:
        r = fingerprint_correlation(results["alpha"].image, results["eigen"].image)
        print(f"pearson(alpha, eigen) = {r:.6f}")
    return EXIT_OK


def _rows_csv(header, rows, notes=()) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    for note in notes:
        buf.write(f"# {note}\n")
    return buf.getvalue().encode("utf-8")


def cmd_stats(cfg: RunConfig, args) -> int:
    manifest = _manifest(cfg)
    stats = compute_statistics(manifest, cfg.gradient_method)
    out = _out_dir(cfg)
    write_report(stats, out / "stats.csv")
    order, _, ties = class_ordering(stats.by_class("mean_grad"))
    print(f"{out / 'stats.csv'} order={order}" + (f" ties={ties}" if ties else ""))
    ids = [e["path"].rsplit(".", 1)[0] for e in manifest.entries]
    labels = manifest.labels()
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        images = [network_input(ckpt, im) for im in manifest.images()]
        series = mean_activation_per_class(ckpt, images, labels, cfg.fingerprint_layer,
                                           alpha_only=args.alpha_only)
        order, st, _ = series.ordering()
        notes = [f"layer,{series.layer_id}", f"channels,{'alpha' if args.alpha_only else 'all'}"]
        notes += [f"aggregate,{c},{st[c]['mean']!r},{st[c]['std']!r},{st[c]['count']}" for c in sorted(st)]
        rows = [[i, c, repr(float(v))] for i, c, v in zip(ids, labels, series.values)]
        write_atomic(out / "activations.csv", _rows_csv(("image_id", "class", "mean_activation"), rows, notes))
        print(f"{out / 'activations.csv'} order={order}")
    if args.modes:
        grads = [gradient_module(im, cfg.gradient_method) for im in manifest.images()]
        proj = dataset_mode_projection(grads, labels)
        rows = [[i, c, repr(float(a)), repr(float(b))] for i, c, (a, b) in zip(ids, labels, proj.loadings)]
        notes = ["bin_edges," + ",".join(repr(float(e)) for e in proj.bin_edges)]
        notes += [f"histogram,{c}," + ",".join(str(int(n)) for n in h) for c, h in proj.histograms.items()]
        write_atomic(out / "modes.csv", _rows_csv(("image_id", "class", "mode1", "mode2"), rows, notes))
        print(out / "modes.csv")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    if a.config.input_shape != b.config.input_shape:
        raise InvalidGeometryError(
            f"checkpoints take different inputs: {a.config.input_shape} vs {b.config.input_shape}")
    raw = _read_image(args.image)
    _check_geometry(a, raw, "first checkpoint")
    out = _out_dir(cfg)
    stem = Path(args.image).stem
    fps = []
    for tag, ckpt in (("a", a), ("b", b)):
        layer = cfg.fingerprint_layer if cfg.fingerprint_layer is not None else default_layer(ckpt.config)
        fp = eigen_fingerprint(ckpt, network_input(ckpt, raw, args.as_is), layer)
        fp.save(out / f"{stem}.{tag}.fprt")
        fps.append(fp)
    r = fingerprint_correlation(fps[0].image, fps[1].image)
    print(f"r = {r:.6f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed for every random stream")
    common.add_argument("--deterministic", action="store_true",
                        help="require bit-reproducible output (always on; kept for scripts)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress lines")

    parser = argparse.ArgumentParser(prog="eigenfeatures", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic texture dataset")
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--method", dest="gradient_method", choices=METHODS,
                   help="gradient used to check the class ordering")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", parents=[common], help="convert a dataset to gradient-module images")
    p.add_argument("--data", dest="data_dir", help="dataset directory holding manifest.json")
    p.add_argument("--method", dest="gradient_method", choices=METHODS)
    p.add_argument("--sidecar", action="store_true", help="also store unscaled float gradients as .npy")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a network and write a checkpoint")
    p.add_argument("--data", dest="data_dir")
    p.add_argument("--method", dest="gradient_method", choices=METHODS,
                   help="gradient applied when the dataset holds raw images")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--raw", action="store_true", help="train on intensities instead of gradients")
    p.add_argument("--reduced", action="store_true",
                   help="reduced-capacity variant (last block dropped, first two layers halved), batch 32")
    p.add_argument("--name", help="base name of the checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fingerprint", parents=[common], help="fingerprint one test image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--method", choices=("alpha", "eigen", "both"), default="eigen")
    p.add_argument("--layer", dest="fingerprint_layer", type=int, help="layer index (default: ReLU 2)")
    p.add_argument("--as-is", action="store_true", help="the image is already a network input")
    p.set_defaults(func=cmd_fingerprint)

    p = sub.add_parser("stats", parents=[common], help="per-image and per-class statistics")
    p.add_argument("--data", dest="data_dir")
    p.add_argument("--method", dest="gradient_method", choices=METHODS)
    p.add_argument("--checkpoint", help="also report mean activations per class")
    p.add_argument("--layer", dest="fingerprint_layer", type=int)
    p.add_argument("--alpha-only", action="store_true", help="average the strongest channel only")
    p.add_argument("--modes", action="store_true", help="write loadings on the two leading modes")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compare", parents=[common], help="correlate two models' eigen fingerprints")
    p.add_argument("ckpt_a")
    p.add_argument("ckpt_b")
    p.add_argument("image")
    p.add_argument("--layer", dest="fingerprint_layer", type=int)
    p.add_argument("--as-is", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        return args.func(cfg, args)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: not found", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
