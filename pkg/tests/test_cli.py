import csv
import struct

import numpy as np
import pytest

from chaoskpa import FormatError, UsageError
from chaoskpa.checkpoint import Checkpoint, decode, encode, load_checkpoint, save_checkpoint
from chaoskpa.cli import CSV_COLUMNS, main
from chaoskpa.config import ExperimentConfig, load_config, parse_config, preset_names, with_overrides
from chaoskpa.nets import build
from chaoskpa.pnm import read_pnm, write_pnm
from chaoskpa.train import AdamState, MetricsRecord, adam_step


def digits(n, seed=0):
    """Blocky synthetic 28x28 'digits': a bright rectangle on black, so the images have structure."""
    rng = np.random.default_rng(seed)
    out = np.zeros((n, 28, 28), np.uint8)
    for im in out:
        r, c = rng.integers(2, 14, 2)
        h, w = rng.integers(6, 14, 2)
        im[r:r + h, c:c + w] = rng.integers(128, 256)
    return out


@pytest.fixture
def mnist_dir(tmp_path):
    d = tmp_path / "mnist"
    d.mkdir()
    imgs = digits(40)
    (d / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 2051, 40, 28, 28) + imgs.tobytes())
    (d / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 2049, 40) + bytes(40))
    return d


def smoke(tmp_path, mnist_dir, *extra, out="run"):
    return ["--config", "mnist_smoke", "--data-dir", str(mnist_dir), "--out-dir", str(tmp_path / out), *extra]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestGenpairs:
    def test_archive_and_rerun(self, tmp_path, mnist_dir, capsys):
        assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "0")]) == 0
        assert "40 pairs, 36 train / 4 test" in capsys.readouterr().out
        first = {p.name: p.read_bytes() for p in (tmp_path / "run" / "pairs").iterdir()}
        assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "0")]) == 0
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "run" / "pairs").iterdir()}

    def test_pair_limit(self, tmp_path, mnist_dir, capsys):
        assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "20")]) == 0
        assert "20 pairs, 18 train / 2 test" in capsys.readouterr().out
        assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "41")]) == 1

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["genpairs", "--config", "mnist_smoke", "--data-dir", str(tmp_path / "none")]) == 2
        assert "train-images-idx3-ubyte" in capsys.readouterr().err

    def test_incompatible_scheme(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[experiment]\ndataset = cifar10\n[cipher]\nscheme = single_logistic\n")
        assert main(["genpairs", "--config", str(cfg)]) == 1
        assert "channel" in capsys.readouterr().err


@pytest.fixture
def trained(tmp_path, mnist_dir):
    assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "0")]) == 0
    assert main(["train", *smoke(tmp_path, mnist_dir, "--epochs", "3")]) == 0
    return tmp_path / "run"


class TestTrain:
    def test_outputs(self, trained):
        rows = read_csv(trained / "metrics.csv")
        assert rows[0] == CSV_COLUMNS
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(r[4] == "" for r in rows[1:])  # deterministic preset keeps wall-clock out
        assert len(read_csv(trained / "timings.csv")) == 4
        assert read_csv(trained / "summary.csv")[0] == ["scheme", "network", "train_accuracy", "test_accuracy",
                                                         "epochs", "seconds_per_epoch"]
        assert {p.name for p in trained.glob("*.ckpt")} == {"last.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt",
                                                            "epoch_0003.ckpt"}

    def test_deterministic_rerun(self, trained, tmp_path, mnist_dir):
        args = smoke(tmp_path, mnist_dir, "--epochs", "3", "--archive", str(trained / "pairs"), out="again")
        assert main(["train", *args]) == 0
        assert (trained / "metrics.csv").read_bytes() == (tmp_path / "again" / "metrics.csv").read_bytes()

    def test_resume(self, trained, tmp_path, mnist_dir):
        args = smoke(tmp_path, mnist_dir, "--epochs", "3", "--archive", str(trained / "pairs"), out="resumed")
        assert main(["train", *args[:-4], "--epochs", "1", *args[-2:]]) == 0
        resumed = tmp_path / "resumed"
        assert main(["train", *args, "--checkpoint", str(resumed / "epoch_0001.ckpt")]) == 0
        assert (trained / "metrics.csv").read_bytes() == (resumed / "metrics.csv").read_bytes()
        a, b = load_checkpoint(trained / "last.ckpt"), load_checkpoint(resumed / "last.ckpt")
        assert a.state.step == b.state.step
        assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)

    def test_resume_refuses_finished(self, trained, tmp_path, mnist_dir):
        assert main(["train", *smoke(tmp_path, mnist_dir, "--epochs", "3",
                                     "--checkpoint", str(trained / "last.ckpt"))]) == 1

    def test_zero_epochs(self, tmp_path, mnist_dir):
        assert main(["train", *smoke(tmp_path, mnist_dir, "--epochs", "0")]) == 1

    def test_missing_archive(self, tmp_path, mnist_dir, capsys):
        assert main(["train", *smoke(tmp_path, mnist_dir)]) == 2
        assert "genpairs" in capsys.readouterr().err

    def test_key_mismatch(self, trained, tmp_path):
        cfg = tmp_path / "other.ini"
        cfg.write_text(load_config("mnist_smoke").to_ini().replace("logistic.seed = 0.1", "logistic.seed = 0.2"))
        assert main(["train", "--config", str(cfg), "--archive", str(trained / "pairs"),
                     "--out-dir", str(tmp_path / "x")]) == 1


class TestAttack:
    def test_matches_final_test_corr(self, trained, capsys):
        assert main(["attack", "--checkpoint", str(trained / "last.ckpt"), "--archive", str(trained / "pairs"),
                     "--out-dir", str(trained / "att")]) == 0
        rows = read_csv(trained / "att" / "correlation.csv")
        mean = np.mean([float(r[1]) for r in rows[1:] if r[2] == "0"])
        assert mean == pytest.approx(float(read_csv(trained / "metrics.csv")[-1][3]), abs=1e-6)
        trip = sorted(p.name for p in (trained / "att").glob("*.pgm"))
        assert len(trip) == 12 and trip[0].endswith("_cipher.pgm")
        assert read_pnm(trained / "att" / trip[0]).shape == (1, 28, 28)

    def test_untrained_checkpoint(self, trained, tmp_path, capsys):
        m = build("unet", 1, 8).init_params(0)
        save_checkpoint(tmp_path / "init.ckpt", Checkpoint(m, AdamState(), 0, {}))
        assert main(["attack", "--checkpoint", str(tmp_path / "init.ckpt"), "--archive", str(trained / "pairs"),
                     "--out-dir", str(tmp_path / "a0")]) == 0
        rows = read_csv(tmp_path / "a0" / "correlation.csv")
        assert np.nanmean([float(r[1]) for r in rows[1:] if r[1]]) < 0.3

    def test_channel_mismatch(self, trained, tmp_path):
        m = build("unet", 3, 8).init_params(0)
        save_checkpoint(tmp_path / "rgb.ckpt", Checkpoint(m, AdamState(), 0, {}))
        assert main(["attack", "--checkpoint", str(tmp_path / "rgb.ckpt"), "--archive", str(trained / "pairs")]) == 1

    def test_image_files(self, trained, tmp_path):
        p = write_pnm(tmp_path / "c.pgm", np.zeros((1, 28, 28), np.uint8))
        assert main(["attack", "--checkpoint", str(trained / "last.ckpt"), "--images", str(p),
                     "--out-dir", str(tmp_path / "img")]) == 0
        assert read_pnm(tmp_path / "img" / "c_decrypted.pgm").shape == (1, 28, 28)

    def test_needs_checkpoint(self):
        assert main(["attack"]) == 1


class TestOtherCommands:
    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--network", "msednet", "--samples", "1", "--input-samples", "4"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["gradcheck", "--network", "unet", "--samples", "1", "--input-samples", "4",
                     "--corrupt", "conv2d:1.5"]) == 3

    def test_audit(self, tmp_path, mnist_dir, capsys):
        assert main(["genpairs", *smoke(tmp_path, mnist_dir, "--pairs", "0")]) == 0
        assert main(["audit", "--archive", str(tmp_path / "run" / "pairs")]) == 0
        assert "re-encryption check" in capsys.readouterr().out
        blob = tmp_path / "run" / "pairs" / "cipher.u8"
        raw = bytearray(blob.read_bytes())
        raw[0] ^= 1
        blob.write_bytes(bytes(raw))
        assert main(["audit", "--archive", str(tmp_path / "run" / "pairs")]) == 2

    def test_bad_usage(self):
        assert main([]) == 1
        assert main(["train", "--bogus"]) == 1
        assert main(["train", "--config", "no_such_preset"]) == 1

    def test_import_csv(self, tmp_path):
        import gzip
        rows = "\n".join(",".join(["7"] * 784 + [str(i)]) for i in range(3))
        (tmp_path / "d.csv.gz").write_bytes(gzip.compress(rows.encode()))
        assert main(["import-mnist-csv", "--csv", str(tmp_path / "d.csv.gz"), "--dest", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "train-images-idx3-ubyte").stat().st_size == 16 + 3 * 784


class TestConfig:
    @pytest.mark.parametrize("name", preset_names())
    def test_presets_valid(self, name):
        cfg = load_config(name)
        assert parse_config(cfg.to_ini()) == cfg

    def test_expected_presets(self):
        assert {"mnist_unet", "mnist_msednet", "cifar_unet", "cifar_msednet", "mnist_smoke"} <= set(preset_names())

    def test_defaults(self):
        c = load_config("mnist_unet")
        assert (c.train.initial_lr, c.train.batch_size, c.train.weight_decay, c.train.epochs) == (1e-5, 8, 1e-4, 200)
        assert c.scheme == "single_logistic" and load_config("cifar_unet").scheme == "hybrid_rgb"
        assert c.logistic.control == 3.601 and c.sine.seed == 0.154 and c.chebyshev.control == 5.0

    def test_errors(self):
        with pytest.raises(FormatError):
            parse_config("[train]\nepochz = 3\n")
        with pytest.raises(FormatError):
            parse_config("[train]\nepochs = many\n")
        with pytest.raises(FormatError):
            parse_config("[nope]\na = 1\n")
        with pytest.raises(UsageError):
            ExperimentConfig(dataset="svhn")

    def test_overrides(self):
        c = with_overrides(load_config("mnist_smoke"), epochs=2, seed=9, out_dir="x")
        assert (c.train.epochs, c.train.seed, c.out_dir) == (2, 9, "x")


class TestCheckpoint:
    def make(self):
        m = build("msednet", 1, 8).init_params(0)
        for p in m.params.values():
            p.grad = np.ones_like(p.data)
        s = adam_step(m.params, AdamState(), 1e-3)
        return Checkpoint(m, s, 4, {"name": "t", "x": 0.1}, [MetricsRecord(1, 0.5, 0.1, float("nan"), 1.25)])

    def test_save_load_save(self, tmp_path):
        raw = encode(self.make())
        save_checkpoint(tmp_path / "a.ckpt", decode(raw))
        assert (tmp_path / "a.ckpt").read_bytes() == raw
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.epoch == 4 and back.state.step == 1 and back.config["x"] == 0.1
        assert np.isnan(back.history[0].test_corr)

    def test_corruption(self, tmp_path):
        raw = bytearray(encode(self.make()))
        with pytest.raises(FormatError, match="magic"):
            decode(b"XXXX" + bytes(raw[4:]))
        raw[-1] ^= 1
        with pytest.raises(FormatError, match="checksum"):
            decode(bytes(raw))
        with pytest.raises(FormatError):
            decode(bytes(raw[:20]))


class TestPnm:
    @pytest.mark.parametrize("c", [1, 3])
    def test_round_trip(self, tmp_path, c):
        a = np.random.default_rng(c).integers(0, 256, (c, 5, 7), dtype=np.uint8)
        assert np.array_equal(read_pnm(write_pnm(tmp_path / "x", a)), a)

    def test_float_scaling_and_comments(self, tmp_path):
        write_pnm(tmp_path / "f.pgm", np.array([[0.0, 0.5, 1.2]]))
        assert read_pnm(tmp_path / "f.pgm").tolist() == [[[0, 128, 255]]]
        (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n255\n\x01\x02")
        assert read_pnm(tmp_path / "c.pgm").tolist() == [[[1, 2]]]

    def test_bad(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n1")
        with pytest.raises(FormatError):
            read_pnm(tmp_path / "b.pgm")
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(FormatError, match="truncated"):
            read_pnm(tmp_path / "t.pgm")
