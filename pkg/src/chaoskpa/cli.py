"""Command-line experiment runner.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numerical failure (non-finite loss, failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import tarfile
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import FormatError, KPAError, NumericalError, ParameterError, UsageError, __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .cipher import correlation_audit
from .config import ExperimentConfig, load_config, preset_names, with_overrides
from .data import (MNIST_FILES, TEST, TRAIN, fetch, import_mnist_csv, key_fingerprint,
                   load_archive, load_cifar_dir, load_mnist_dir, make_pairs, mlxtend_mnist_csv,
                   save_archive, split)
from .metrics import batch_correlation
from .nets import build
from .pnm import read_pnm, write_pnm
from .tensor_engine import corrupted_backward, grad_check_model
from .train import MetricsRecord, TrainingAborted, fit, predict

log = logging.getLogger("chaoskpa")

CSV_COLUMNS = ["epoch", "loss_l1", "train_corr", "test_corr", "seconds"]
CSV_SCHEMA_VERSION = 1
SUMMARY_COLUMNS = ["scheme", "network", "train_accuracy", "test_accuracy", "epochs", "seconds_per_epoch"]
AUDIT_IMAGES = 1000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _num(x: float) -> str:
    return repr(float(x))


# --- config ------------------------------------------------------------------

def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, epochs=getattr(args, "epochs", None), seed=args.seed,
                          deterministic=True if args.deterministic else None,
                          out_dir=args.out_dir, data_dir=getattr(args, "data_dir", None),
                          archive=getattr(args, "archive", None), pairs=getattr(args, "pairs", None))


# --- genpairs ------------------------------------------------------------------

def _load_dataset(cfg: ExperimentConfig):
    if cfg.dataset == "mnist":
        return load_mnist_dir(cfg.data_dir)
    return load_cifar_dir(cfg.data_dir)


def cmd_genpairs(args) -> int:
    cfg = _config(args)
    images, labels = _load_dataset(cfg)
    if cfg.pairs:
        if cfg.pairs > len(images):
            raise UsageError(f"config asks for {cfg.pairs} pairs but {cfg.data_dir} holds {len(images)} images")
        idx = np.sort(np.random.default_rng([cfg.split_seed, 0x5EED]).permutation(len(images))[:cfg.pairs])
        images, labels = images[idx], labels[idx]
    pairs = make_pairs(images, cfg.key(), labels, source=f"{cfg.dataset}:{Path(cfg.data_dir).resolve().name}")
    pairs = split(pairs, cfg.train_fraction, cfg.split_seed)
    out = save_archive(pairs, cfg.archive_path)
    audit = correlation_audit(cfg.key(), pairs.plain[:AUDIT_IMAGES])
    print(f"wrote {out}: {len(pairs)} pairs, {len(pairs.indices(TRAIN))} train / {len(pairs.indices(TEST))} test")
    print(f"plaintext-ciphertext correlation over {audit.count} images: mean |r| = {audit.mean_abs_corr:.4f}, "
          f"max |r| = {audit.max_abs_corr:.4f} ({audit.skipped} constant images skipped)")
    return 0


# --- train -------------------------------------------------------------------

def _check_archive(cfg: ExperimentConfig, pairs) -> None:
    if key_fingerprint(pairs.key) != key_fingerprint(cfg.key()):
        raise UsageError(f"archive {cfg.archive_path} was encrypted under a different key than the config "
                         f"({key_fingerprint(pairs.key)} vs {key_fingerprint(cfg.key())}); refusing to train")
    if pairs.shape[0] != cfg.channels:
        raise UsageError(f"archive has {pairs.shape[0]}-channel images, config dataset {cfg.dataset} expects "
                         f"{cfg.channels}")
    if len(pairs.indices(TRAIN)) == 0 or len(pairs.indices(TEST)) == 0:
        raise UsageError(f"archive {cfg.archive_path} has an empty train or test split")


def _open_archive(cfg: ExperimentConfig):
    try:
        return load_archive(cfg.archive_path)
    except FileNotFoundError as e:
        raise FileNotFoundError(f"{e}; run `chaoskpa genpairs` with the same config first") from None


def write_metrics_csv(path: Path, history: List[MetricsRecord], deterministic: bool) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in history:
        # wall-clock time is the one nondeterministic column; it goes to timings.csv instead
        w.writerow([r.epoch, _num(r.loss_l1), _num(r.train_corr), _num(r.test_corr),
                    "" if deterministic else f"{r.seconds:.3f}"])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_timings_csv(path: Path, history: List[MetricsRecord]) -> None:
    lines = ["epoch,seconds"] + [f"{r.epoch},{r.seconds:.3f}" for r in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_csv(path: Path, cfg: ExperimentConfig, history: List[MetricsRecord]) -> dict:
    last = history[-1]
    per_epoch = sum(r.seconds for r in history) / len(history)
    row = {"scheme": cfg.scheme, "network": cfg.network, "train_accuracy": f"{100 * last.train_corr:.2f}",
           "test_accuracy": f"{100 * last.test_corr:.2f}", "epochs": str(last.epoch),
           "seconds_per_epoch": "" if cfg.train.deterministic else f"{per_epoch:.1f}"}
    path.write_text(",".join(SUMMARY_COLUMNS) + "\n" + ",".join(row[c] for c in SUMMARY_COLUMNS) + "\n",
                    encoding="utf-8")
    return row


def _resume(cfg: ExperimentConfig, path: str, pairs):
    ck = load_checkpoint(path)
    saved = ExperimentConfig.from_dict(ck.config)
    ignore = {"epochs", "deterministic"}
    diff = [k for k, v in asdict(saved.train).items() if k not in ignore and asdict(cfg.train)[k] != v]
    if diff:
        raise UsageError(f"checkpoint {path} was trained with different settings: {', '.join(diff)}")
    if (saved.network, saved.base_width) != (cfg.network, cfg.base_width):
        raise UsageError(f"checkpoint {path} holds a {saved.network} of width {saved.base_width}, config asks "
                         f"for {cfg.network} of width {cfg.base_width}")
    if ck.extra.get("key_fingerprint") != key_fingerprint(pairs.key):
        raise UsageError(f"checkpoint {path} was trained on a different key than archive {cfg.archive_path}")
    if ck.epoch >= cfg.train.epochs:
        raise UsageError(f"checkpoint is already at epoch {ck.epoch}; pass --epochs > {ck.epoch} to continue")
    return ck


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    pairs = _open_archive(cfg)
    _check_archive(cfg, pairs)
    if args.checkpoint:
        ck = _resume(cfg, args.checkpoint, pairs)
        model, state, start, history = ck.model, ck.state, ck.epoch, ck.history
        log.info("resuming from %s at epoch %d", args.checkpoint, start)
    else:
        model = build(cfg.network, cfg.channels, cfg.base_width, cfg.train.dropout_ratio).init_params(cfg.train.seed)
        state, start, history = None, 0, []
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    fingerprint = key_fingerprint(pairs.key)
    log.info("%s: %d parameters, %d train / %d test pairs", cfg.network, model.param_count,
             len(pairs.indices(TRAIN)), len(pairs.indices(TEST)))

    def on_epoch(epoch, rec, model, state, hist):
        write_metrics_csv(out / "metrics.csv", hist, cfg.train.deterministic)
        write_timings_csv(out / "timings.csv", hist)
        ck = Checkpoint(model, state, epoch, cfg.to_dict(), hist,
                        {"key_fingerprint": fingerprint, "csv_schema": CSV_SCHEMA_VERSION})
        save_checkpoint(out / "last.ckpt", ck)
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.train.epochs:
            save_checkpoint(out / f"epoch_{epoch:04d}.ckpt", ck)

    try:
        model, history, state = fit(model, pairs, cfg.train, [on_epoch], state, start, history)
    except TrainingAborted as e:
        print(f"training aborted: {e} ({e.record})", file=sys.stderr)
        return 3
    row = write_summary_csv(out / "summary.csv", cfg, history)
    print(f"{cfg.scheme} {cfg.network}: train {row['train_accuracy']}% test {row['test_accuracy']}% "
          f"after {row['epochs']} epochs; metrics in {out / 'metrics.csv'}")
    return 0


# --- attack ------------------------------------------------------------------

def cmd_attack(args) -> int:
    if not args.checkpoint:
        raise UsageError("attack needs --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    model = ck.model
    out = Path(args.out_dir or Path(args.checkpoint).parent / "attack")
    out.mkdir(parents=True, exist_ok=True)
    want = (model.in_channels,)

    if args.images:
        cipher = [read_pnm(p) for p in args.images]
        shapes = {c.shape for c in cipher}
        if len(shapes) != 1 or next(iter(shapes))[0] != model.in_channels or next(iter(shapes))[1] > model.spatial:
            raise UsageError(f"model expects {model.in_channels}-channel images up to {model.spatial}px, "
                             f"got {sorted(shapes)}")
        dec = predict(model, np.stack(cipher))
        for p, d in zip(args.images, dec):
            write_pnm(out / (Path(p).stem + "_decrypted" + (".pgm" if d.shape[0] == 1 else ".ppm")), d)
        print(f"decrypted {len(dec)} images into {out}")
        return 0

    cfg = _config(args)
    pairs = _open_archive(cfg)
    if pairs.shape[:1] != want or pairs.shape[1] > model.spatial:
        raise UsageError(f"model expects {model.in_channels}-channel images, archive holds {pairs.shape}")
    if ck.extra.get("key_fingerprint") not in (None, key_fingerprint(pairs.key)):
        log.warning("archive key differs from the key the model was trained on")
    which = {"test": pairs.indices(TEST), "train": pairs.indices(TRAIN), "all": np.arange(len(pairs))}[args.split]
    if len(which) == 0:
        raise UsageError(f"archive has no {args.split} pairs")
    plain, cipher = pairs.plain[which], pairs.cipher[which]
    dec = predict(model, cipher)
    rep = batch_correlation(dec, plain.astype(np.float32) / 255.0)
    (out / "correlation.csv").write_text(rep.to_csv(), encoding="utf-8")
    ext = ".pgm" if model.in_channels == 1 else ".ppm"
    for i in range(min(args.triplets, len(which))):
        stem = out / f"{int(which[i]):05d}"
        write_pnm(f"{stem}_plain{ext}", plain[i])
        write_pnm(f"{stem}_cipher{ext}", cipher[i])
        write_pnm(f"{stem}_decrypted{ext}", dec[i])
    print(f"attack on {len(which)} {args.split} pairs: mean correlation {rep.mean:.6f} "
          f"({rep.summary()}); outputs in {out}")
    return 0


# --- gradcheck / audit ----------------------------------------------------------

def cmd_gradcheck(args) -> int:
    nets = ["unet", "msednet"] if args.network == "all" else [args.network]
    rng = np.random.default_rng(args.seed or 0)
    ok = True
    for name in nets:
        channels = args.channels
        model = build(name, channels, args.width).init_params(args.seed or 0, np.float64)
        x = rng.random((args.batch, channels, model.spatial, model.spatial))
        if args.corrupt:
            op, _, factor = args.corrupt.partition(":")
            with corrupted_backward(op, float(factor or 1.5)):
                rep = grad_check_model(model, x, args.tolerance, samples=args.samples,
                                       input_samples=args.input_samples, seed=args.seed or 0)
        else:
            rep = grad_check_model(model, x, args.tolerance, samples=args.samples,
                                   input_samples=args.input_samples, seed=args.seed or 0)
        print(f"{name} (width {args.width}): {rep.summary()}")
        ok &= rep.passed
    return 0 if ok else 3


def cmd_audit(args) -> int:
    cfg = _config(args)
    pairs = load_archive(cfg.archive_path)
    n = min(args.count, len(pairs))
    rec = correlation_audit(pairs.key, pairs.plain[:n])
    consistent = pairs.audit(args.fraction, seed=args.seed or 0)
    print(f"{cfg.archive_path}: {len(pairs)} pairs, key {key_fingerprint(pairs.key)}")
    print(f"plaintext-ciphertext correlation over {rec.count} images: mean |r| = {rec.mean_abs_corr:.4f}, "
          f"max |r| = {rec.max_abs_corr:.4f}")
    print(f"re-encryption check on {args.fraction:.1%} of pairs: {'ok' if consistent else 'MISMATCH'}")
    if not consistent:
        raise FormatError(f"{cfg.archive_path}: stored ciphertexts do not match re-encryption under the stored key")
    return 0


# --- dataset acquisition ------------------------------------------------------------

def cmd_fetch(args) -> int:
    dest = Path(args.dest)
    if args.dataset == "mnist":
        for name in MNIST_FILES.values():
            fetch(args.mirror, name + ".gz", dest)
    else:
        tgz = fetch(args.mirror, "cifar-10-binary.tar.gz", dest)
        with tarfile.open(tgz) as tf:
            tf.extractall(dest, filter="data")
    print(f"{args.dataset} files in {dest}")
    return 0


def cmd_import_mnist_csv(args) -> int:
    src = args.csv or mlxtend_mnist_csv()
    ip, lp = import_mnist_csv(src, args.dest)
    print(f"wrote {ip} and {lp}")
    return 0


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"config file or preset ({', '.join(preset_names())})")
    common.add_argument("--seed", type=int, help="training seed (init, shuffling, dropout)")
    common.add_argument("--out-dir", help="output directory (overrides the config)")
    common.add_argument("--deterministic", action="store_true",
                        help="reproducible outputs: wall-clock times are kept out of metrics.csv")
    common.add_argument("--epochs", type=int, help="override the configured epoch count")
    common.add_argument("--checkpoint", help="checkpoint to resume from (train) or to attack with (attack)")
    common.add_argument("--archive", help="pair archive directory (default <out-dir>/pairs)")
    common.add_argument("--data-dir", help="dataset directory (overrides the config)")

    p = _Parser(prog="chaoskpa", description="Known-plaintext attacks on chaotic image ciphers.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("genpairs", parents=[common], help="encrypt a dataset into a pair archive")
    g.add_argument("--pairs", type=int, help="number of images to use (0 = all)")
    g.set_defaults(func=cmd_genpairs)

    sub.add_parser("train", parents=[common], help="train a decryption network").set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common], help="decrypt ciphertexts with a trained checkpoint")
    a.add_argument("--split", choices=["test", "train", "all"], default="test")
    a.add_argument("--triplets", type=int, default=8, help="plain/cipher/decrypted image triplets to write")
    a.add_argument("--images", nargs="+", help="PGM/PPM ciphertext files instead of an archive")
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a network's gradients")
    c.add_argument("--network", choices=["unet", "msednet", "all"], default="all")
    c.add_argument("--width", type=int, default=8)
    c.add_argument("--channels", type=int, choices=[1, 3], default=1)
    c.add_argument("--batch", type=int, default=2)
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.add_argument("--samples", type=int, default=4, help="probes per parameter array")
    c.add_argument("--input-samples", type=int, default=24, help="probes into the input image")
    c.add_argument("--corrupt", metavar="OP[:FACTOR]", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    u = sub.add_parser("audit", parents=[common], help="correlation and consistency audit of a pair archive")
    u.add_argument("--count", type=int, default=AUDIT_IMAGES)
    u.add_argument("--fraction", type=float, default=0.01)
    u.set_defaults(func=cmd_audit)

    f = sub.add_parser("fetch", help="download a dataset from a mirror and verify md5 sums")
    f.add_argument("dataset", choices=["mnist", "cifar10"])
    f.add_argument("--mirror", required=True, help="base URL holding the original archive files")
    f.add_argument("--dest", required=True)
    f.set_defaults(func=cmd_fetch)

    m = sub.add_parser("import-mnist-csv", help="convert a pixels+label CSV of MNIST digits to IDX files")
    m.add_argument("--csv", help="CSV(.gz) path; default: the sample bundled with mlxtend")
    m.add_argument("--dest", required=True)
    m.set_defaults(func=cmd_import_mnist_csv)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"chaoskpa: error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.verbose:
        logging.getLogger("chaoskpa").setLevel(logging.INFO)
    try:
        return args.func(args)
    except (UsageError, ParameterError) as e:
        print(f"chaoskpa: error: {e}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError) as e:
        print(f"chaoskpa: data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"chaoskpa: numerical failure: {e}", file=sys.stderr)
        return 3
    except KPAError as e:
        print(f"chaoskpa: error: {e}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
