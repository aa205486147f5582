import csv
import json

import numpy as np
import pytest

from eigenfeatures.cli import RunConfig, main
from eigenfeatures.cnn import load_checkpoint, read_metrics
from eigenfeatures.errors import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK
from eigenfeatures.fingerprint import load_fingerprint
from eigenfeatures.images import GrayImage, read_pgm, write_pgm
from eigenfeatures.synth import load_manifest


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny dataset, its gradient version and one trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    config = {"n_per_class": 8, "size": 32, "seed": 3,
              "train": {"epochs": 2, "batch_size": 8, "val_frequency": 2}}
    (root / "run.json").write_text(json.dumps(config))
    base = ["--config", str(root / "run.json")]
    assert main(["gen-data", *base, "--out", str(root / "data")]) == EXIT_OK
    assert main(["preprocess", *base, "--data", str(root / "data"), "--out", str(root / "grad"),
                 "--sidecar"]) == EXIT_OK
    assert main(["train", *base, "--data", str(root / "grad"), "--out", str(root / "models")]) == EXIT_OK
    return root, base


def test_gen_data_creates_missing_dir(workdir, capsys):
    root, base = workdir
    target = root / "deep" / "er"
    assert main(["gen-data", *base, "--out", str(target)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == str(target / "manifest.json")
    assert len(load_manifest(target / "manifest.json").entries) == 32


def test_gen_data_is_repeatable(workdir):
    root, base = workdir
    assert main(["gen-data", *base, "--out", str(root / "again")]) == EXIT_OK
    for p in (root / "data").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (root / "again" / p.relative_to(root / "data")).read_bytes()


def test_preprocess_manifest(workdir):
    root, _ = workdir
    m = load_manifest(root / "grad" / "manifest.json")
    src = load_manifest(root / "data" / "manifest.json")
    assert m.labels() == src.labels()
    assert m.extra["gradient_method"] == "sobel" and m.extra["sidecar"] is True
    first = root / "grad" / m.entries[0]["path"]
    assert read_pgm(first).pixels.max() == 255
    assert first.with_suffix(".npy").exists()


def test_preprocess_method_and_constant_images(tmp_path):
    data = tmp_path / "const"
    (data / "c").mkdir(parents=True)
    entries = []
    for i, label in enumerate([1, 2]):
        write_pgm(GrayImage(np.full((16, 16), 90.0)), data / f"c/{i}.pgm")
        entries.append({"path": f"c/{i}.pgm", "label": label, "seed": i, "split": "train"})
    (data / "manifest.json").write_text(json.dumps({"version": 1, "seed": 0, "entries": entries}))
    assert main(["preprocess", "--data", str(data), "--out", str(tmp_path / "g"),
                 "--method", "prewitt"]) == EXIT_OK
    m = load_manifest(tmp_path / "g" / "manifest.json")
    assert m.extra["gradient_method"] == "prewitt"
    for img in m.images():
        assert not np.any(img.pixels)


def test_train_outputs(workdir):
    root, _ = workdir
    ck = load_checkpoint(root / "models" / "model.mcnn")
    assert ck.meta["input_mode"] == "gradient" and ck.meta["class_labels"] == [1, 2, 3, 4]
    m = load_manifest(root / "grad" / "manifest.json")
    assert ck.meta["val_indices"] == [i for i, e in enumerate(m.entries) if e["split"] == "val"]
    rows = read_metrics(root / "models" / "model_metrics.csv")
    assert rows[-1]["iteration"] == ck.meta["iterations"]


def test_train_is_deterministic(workdir):
    root, base = workdir
    assert main(["train", *base, "--data", str(root / "grad"), "--out", str(root / "models2")]) == EXIT_OK
    assert (root / "models" / "model.mcnn").read_bytes() == (root / "models2" / "model.mcnn").read_bytes()


def test_train_reduced_and_raw(workdir):
    root, base = workdir
    assert main(["train", *base, "--data", str(root / "data"), "--out", str(root / "models"),
                 "--reduced", "--epochs", "1"]) == EXIT_OK
    red = load_checkpoint(root / "models" / "reduced.mcnn")
    assert red.meta["reduced"] and red.meta["train"]["batch_size"] == 32
    assert len(red.config.conv_indices()) == 2
    assert main(["train", *base, "--data", str(root / "data"), "--out", str(root / "models"),
                 "--raw", "--epochs", "1", "--name", "raw"]) == EXIT_OK
    assert load_checkpoint(root / "models" / "raw.mcnn").meta["input_mode"] == "raw"
    assert main(["train", *base, "--data", str(root / "grad"), "--raw"]) == EXIT_CONFIG


def test_fingerprint_both(workdir, capsys):
    root, base = workdir
    image = root / "data" / "class3" / "img_0000.pgm"
    out = root / "fp"
    args = ["fingerprint", *base, "--checkpoint", str(root / "models" / "model.mcnn"),
            "--image", str(image), "--method", "both", "--out", str(out)]
    assert main(args) == EXIT_OK
    text = capsys.readouterr().out
    assert "spectral_gap=" in text and "pearson(alpha, eigen)" in text
    eig = load_fingerprint(out / "img_0000.eigen.fprt")
    alpha = load_fingerprint(out / "img_0000.alpha.fprt")
    assert eig.image.shape == (32, 32) and alpha.method == "alpha"
    assert (out / "img_0000.eigen.pgm").exists()
    first = (out / "img_0000.eigen.fprt").read_bytes()
    assert main(args) == EXIT_OK
    assert (out / "img_0000.eigen.fprt").read_bytes() == first


def test_fingerprint_bad_method(workdir):
    root, base = workdir
    with pytest.raises(SystemExit) as exc:
        main(["fingerprint", *base, "--checkpoint", "x", "--image", "y", "--method", "beta"])
    assert exc.value.code == 2


def test_fingerprint_geometry_mismatch(workdir, tmp_path):
    root, base = workdir
    write_pgm(GrayImage(np.zeros((20, 20))), tmp_path / "small.pgm")
    assert main(["fingerprint", *base, "--checkpoint", str(root / "models" / "model.mcnn"),
                 "--image", str(tmp_path / "small.pgm"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_fingerprint_of_flat_image_is_numeric_error(workdir, tmp_path):
    root, base = workdir
    write_pgm(GrayImage(np.zeros((32, 32))), tmp_path / "flat.pgm")
    # A flat image has zero gradient, so every first-layer map is constant and
    # rescales to zero. Deeper layers pick up structure from zero padding.
    assert main(["fingerprint", *base, "--checkpoint", str(root / "models" / "model.mcnn"),
                 "--image", str(tmp_path / "flat.pgm"), "--out", str(tmp_path), "--layer", "2"]) == EXIT_NUMERIC


def test_stats_with_checkpoint_and_modes(workdir, capsys):
    root, base = workdir
    out = root / "stats"
    assert main(["stats", *base, "--data", str(root / "data"), "--out", str(out),
                 "--checkpoint", str(root / "models" / "model.mcnn"), "--modes"]) == EXIT_OK
    assert "order=[3, 2, 4, 1]" in capsys.readouterr().out
    rows = [r for r in csv.reader(open(out / "activations.csv")) if not r[0].startswith("#")]
    assert rows[0] == ["image_id", "class", "mean_activation"] and len(rows) == 33
    assert all(float(r[2]) >= 0 for r in rows[1:])
    modes = [r for r in csv.reader(open(out / "modes.csv")) if not r[0].startswith("#")]
    assert len(modes) == 33


def test_compare(workdir, capsys):
    root, base = workdir
    model = str(root / "models" / "model.mcnn")
    image = str(root / "data" / "class2" / "img_0001.pgm")
    assert main(["compare", *base, model, model, image, "--out", str(root / "cmp")]) == EXIT_OK
    assert "r = 1.000000" in capsys.readouterr().out
    assert main(["compare", *base, model, str(root / "models" / "reduced.mcnn"), image,
                 "--out", str(root / "cmp")]) == EXIT_OK


def test_compare_incompatible(workdir, tmp_path):
    root, base = workdir
    model = str(root / "models" / "model.mcnn")
    write_pgm(GrayImage(np.zeros((64, 64))), tmp_path / "big.pgm")
    assert main(["compare", *base, model, model, str(tmp_path / "big.pgm"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG


class TestExitCodes:
    def test_missing_manifest(self, tmp_path):
        assert main(["stats", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path)]) == EXIT_DATA

    def test_missing_checkpoint(self, tmp_path):
        write_pgm(GrayImage(np.zeros((8, 8))), tmp_path / "i.pgm")
        assert main(["fingerprint", "--checkpoint", str(tmp_path / "none.mcnn"),
                     "--image", str(tmp_path / "i.pgm")]) == EXIT_DATA

    def test_corrupt_checkpoint(self, workdir, tmp_path):
        root, base = workdir
        bad = tmp_path / "bad.mcnn"
        bad.write_bytes((root / "models" / "model.mcnn").read_bytes()[:-10])
        image = str(root / "data" / "class1" / "img_0000.pgm")
        assert main(["fingerprint", *base, "--checkpoint", str(bad), "--image", image]) == EXIT_DATA

    def test_bad_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text('{"colour": 3}')
        assert main(["gen-data", "--config", str(tmp_path / "c.json")]) == EXIT_CONFIG
        (tmp_path / "c.json").write_text("[1, 2")
        assert main(["gen-data", "--config", str(tmp_path / "c.json")]) == EXIT_CONFIG
        assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG

    def test_bad_values(self, tmp_path):
        assert main(["gen-data", "--n-per-class", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert main(["gen-data", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_ordering_failure_is_numeric(self, tmp_path):
        specs = [{"label": c, "correlation_length": 3.0, "amplitude": 30.0} for c in (1, 2, 3, 4)]
        (tmp_path / "c.json").write_text(json.dumps({"specs": specs, "n_per_class": 10, "size": 32}))
        assert main(["gen-data", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) \
            == EXIT_NUMERIC


class TestRunConfig:
    def test_precedence(self, tmp_path):
        from eigenfeatures.cli import _resolve, build_parser

        (tmp_path / "c.json").write_text(json.dumps({"seed": 5, "size": 32, "train": {"epochs": 4}}))
        parser = build_parser()
        args = parser.parse_args(["train", "--config", str(tmp_path / "c.json"), "--seed", "9"])
        cfg = _resolve(args)
        assert cfg.seed == 9 and cfg.size == 32 and cfg.train_config().seed == 9
        assert cfg.train_config().epochs == 4
        args = parser.parse_args(["train", "--config", str(tmp_path / "c.json"), "--epochs", "2"])
        cfg = _resolve(args)
        assert cfg.seed == 5 and cfg.train_config().epochs == 2
        assert _resolve(parser.parse_args(["train"])).seed == RunConfig().seed

    def test_roundtrip(self):
        cfg = RunConfig(seed=4, size=32)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_wrong_type(self):
        from eigenfeatures.errors import ConfigError

        with pytest.raises(ConfigError):
            RunConfig(seed="x")
        with pytest.raises(ConfigError):
            RunConfig(gradient_method="laplace")
