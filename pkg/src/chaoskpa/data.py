"""Dataset readers, plaintext/ciphertext pair corpora and the on-disk pair archive.

Images travel as uint8 stacks of shape ``(N, C, H, W)``; ``ImageBytes`` is
only used at API edges that handle single images.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import os
import struct
import urllib.request
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import FormatError, ParameterError, UsageError
from .chaos_core import ChaoticMapParams, MapFamily
from .cipher import CipherKey, ImageBytes, Scheme, encrypt_array

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073
CIFAR_SIDE = 32

ARCHIVE_VERSION = 1
MANIFEST = "manifest.txt"

TRAIN, TEST, UNSPLIT = 0, 1, 255

PathLike = Union[str, os.PathLike]


# --- raw formats ------------------------------------------------------------

def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw: bytes, magic: int, ndims: int, path) -> Tuple[int, ...]:
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise FormatError(f"{path}: offset {len(raw)}: header truncated, need {need} bytes")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: offset 0: magic {found}, expected {magic}")
    return struct.unpack(f">{ndims}I", raw[4:need])


def load_mnist(images_path: PathLike, labels_path: Optional[PathLike] = None):
    """Parse an IDX image file (optionally gzipped) into a ``(N, 1, rows, cols)`` uint8 stack.

    With ``labels_path`` the result is ``(images, labels)``.
    """
    raw = _read_bytes(images_path)
    n, rows, cols = _idx_header(raw, IDX_IMAGES_MAGIC, 3, images_path)
    body = memoryview(raw)[16:]
    want = n * rows * cols
    if len(body) < want:
        raise FormatError(f"{images_path}: offset {16 + len(body)}: truncated pixel data, "
                          f"expected {want} bytes after the header, found {len(body)}")
    images = np.frombuffer(body[:want], dtype=np.uint8).reshape(n, 1, rows, cols).copy()
    if labels_path is None:
        return images
    labels = load_idx_labels(labels_path)
    if len(labels) != n:
        raise FormatError(f"{labels_path}: {len(labels)} labels for {n} images")
    return images, labels


def load_idx_labels(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    (n,) = _idx_header(raw, IDX_LABELS_MAGIC, 1, path)
    if len(raw) - 8 < n:
        raise FormatError(f"{path}: offset {len(raw)}: truncated labels, expected {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).copy()


def write_idx_images(path: PathLike, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape[0], images.shape[-2], images.shape[-1]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path: PathLike, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_cifar10(batch_paths: Union[PathLike, Sequence[PathLike]]):
    """Read CIFAR-10 binary batches into ``(images (N,3,32,32) uint8, labels (N,))``."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    imgs, labels = [], []
    for p in batch_paths:
        raw = _read_bytes(p)
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD} "
                              f"(trailing {len(raw) % CIFAR_RECORD} bytes at offset "
                              f"{len(raw) - len(raw) % CIFAR_RECORD})")
        if not raw:
            warnings.warn(f"{p}: empty CIFAR-10 batch file")
            continue
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].copy())
        imgs.append(rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).copy())
    if not imgs:
        return np.zeros((0, 3, CIFAR_SIDE, CIFAR_SIDE), np.uint8), np.zeros(0, np.uint8)
    return np.concatenate(imgs), np.concatenate(labels)


MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]


def _find(data_dir: Path, name: str) -> Optional[Path]:
    for cand in (data_dir / name, data_dir / (name + ".gz"), data_dir / "cifar-10-batches-bin" / name):
        if cand.exists():
            return cand
    return None


def mnist_paths(data_dir: PathLike) -> Dict[str, Path]:
    data_dir = Path(data_dir)
    found = {k: _find(data_dir, v) for k, v in MNIST_FILES.items()}
    if found["train_images"] is None and found["test_images"] is None:
        raise FileNotFoundError(
            f"MNIST files missing in {data_dir}: expected {MNIST_FILES['train_images']} and/or "
            f"{MNIST_FILES['test_images']} (optionally .gz)")
    return found


def load_mnist_dir(data_dir: PathLike):
    """All MNIST images in ``data_dir`` (train then test file), with labels when present."""
    paths = mnist_paths(data_dir)
    ims, labs = [], []
    for part in ("train", "test"):
        ip, lp = paths[f"{part}_images"], paths[f"{part}_labels"]
        if ip is None:
            continue
        if lp is not None:
            im, lab = load_mnist(ip, lp)
        else:
            im = load_mnist(ip)
            lab = np.full(len(im), 255, np.uint8)
        ims.append(im)
        labs.append(lab)
    return np.concatenate(ims), np.concatenate(labs)


def load_cifar_dir(data_dir: PathLike):
    data_dir = Path(data_dir)
    found = [_find(data_dir, f) for f in CIFAR_FILES]
    if not any(found):
        raise FileNotFoundError(
            f"CIFAR-10 binary batches missing in {data_dir}: expected {', '.join(CIFAR_FILES)}")
    return load_cifar10([p for p in found if p is not None])


# --- optional download helper ---------------------------------------------

# md5 checksums of the public archives; URLs are supplied by the caller
KNOWN_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
    "cifar-10-binary.tar.gz": "c32a1d4ab5d03f1284b67883e8d87530",
}


def fetch(mirror: str, filename: str, dest_dir: PathLike, md5: Optional[str] = None) -> Path:
    """Download ``mirror/filename`` into ``dest_dir`` and verify its md5."""
    dest = Path(dest_dir) / filename
    dest.parent.mkdir(parents=True, exist_ok=True)
    md5 = md5 or KNOWN_MD5.get(filename)
    if not dest.exists():
        url = mirror.rstrip("/") + "/" + filename
        log.info("downloading %s", url)
        with urllib.request.urlopen(url, timeout=60) as resp:
            dest.write_bytes(resp.read())
    if md5 is not None:
        digest = hashlib.md5(dest.read_bytes()).hexdigest()
        if digest != md5:
            dest.unlink()
            raise FormatError(f"{filename}: md5 {digest} does not match expected {md5}")
    return dest


def import_mnist_csv(csv_gz: PathLike, dest_dir: PathLike, prefix: str = "train") -> Tuple[Path, Path]:
    """Convert a ``pixels...,label`` CSV of 28x28 digits (e.g. mlxtend's 5000-image MNIST
    sample) into IDX files named like the official train files."""
    raw = _read_bytes(csv_gz).decode()
    rows = np.loadtxt(raw.splitlines(), delimiter=",", dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] != 785:
        raise FormatError(f"{csv_gz}: expected 785 columns (784 pixels + label), got {rows.shape}")
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    ip = dest_dir / MNIST_FILES[f"{prefix}_images"]
    lp = dest_dir / MNIST_FILES[f"{prefix}_labels"]
    write_idx_images(ip, rows[:, :784].astype(np.uint8).reshape(-1, 28, 28))
    write_idx_labels(lp, rows[:, 784].astype(np.uint8))
    return ip, lp


def mlxtend_mnist_csv() -> Path:
    import importlib.util
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("mlxtend is not installed; `pip install mlxtend` provides a 5000-image MNIST sample")
    return Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"


# --- pair corpora -------------------------------------------------------------

@dataclass
class PairSet:
    plain: np.ndarray
    cipher: np.ndarray
    key: CipherKey
    split: np.ndarray  # per-index TRAIN / TEST / UNSPLIT
    split_seed: Optional[int] = None
    labels: Optional[np.ndarray] = None
    source: str = ""

    def __post_init__(self):
        if self.plain.shape != self.cipher.shape:
            raise UsageError(f"plaintexts {self.plain.shape} and ciphertexts {self.cipher.shape} misaligned")
        if len(self.split) != len(self.plain):
            raise UsageError("split labels do not cover every pair")

    def __len__(self):
        return len(self.plain)

    @property
    def shape(self):
        return self.plain.shape[1:]

    def indices(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)

    def train_arrays(self):
        i = self.indices(TRAIN)
        return self.plain[i], self.cipher[i]

    def test_arrays(self):
        i = self.indices(TEST)
        return self.plain[i], self.cipher[i]

    def subset(self, idx: np.ndarray) -> "PairSet":
        return replace(self, plain=self.plain[idx], cipher=self.cipher[idx], split=self.split[idx],
                       labels=None if self.labels is None else self.labels[idx])

    def audit(self, fraction: float = 0.01, seed: int = 0) -> bool:
        """Re-encrypt a random ``fraction`` of plaintexts and compare with the stored ciphertexts."""
        k = max(1, int(round(len(self) * fraction)))
        idx = np.random.default_rng(seed).choice(len(self), size=min(k, len(self)), replace=False)
        return bool(np.array_equal(encrypt_array(self.key, self.plain[idx]), self.cipher[idx]))


def _stack(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        if images.ndim == 3:
            images = images[:, None]
        return images
    images = list(images)
    arrays = [im.to_array() if isinstance(im, ImageBytes) else np.asarray(im) for im in images]
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise UsageError(f"make_pairs: images have mixed shapes/channel counts {sorted(shapes)}")
    if not arrays:
        raise UsageError("make_pairs needs at least one image")
    return np.stack(arrays)


def make_pairs(images, key: CipherKey, labels: Optional[np.ndarray] = None, source: str = "") -> PairSet:
    """Encrypt every image under the single fixed ``key``; the result is unsplit."""
    plain = np.ascontiguousarray(_stack(images), dtype=np.uint8)
    cipher = encrypt_array(key, plain)
    return PairSet(plain, cipher, key, np.full(len(plain), UNSPLIT, np.uint8), None, labels, source)


def split(pairs: PairSet, train_fraction: float = 0.9, seed: int = 0) -> PairSet:
    """Random ``train_fraction`` / rest partition, reproducible per seed."""
    if not 0 < train_fraction < 1:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(pairs)
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.full(n, TEST, np.uint8)
    labels[perm[:int(np.floor(n * train_fraction))]] = TRAIN
    return replace(pairs, split=labels, split_seed=seed)


# --- archive ------------------------------------------------------------------

def _key_items(key: CipherKey) -> List[Tuple[str, str]]:
    items = [("scheme", key.scheme.value)]
    for p in key.channel_params():
        f = p.family.value
        items += [(f"{f}.control", repr(p.control)), (f"{f}.seed", repr(p.seed)),
                  (f"{f}.burn_in", str(p.burn_in))]
    return items


def key_from_items(items: Dict[str, str]) -> CipherKey:
    def params(fam: MapFamily) -> ChaoticMapParams:
        f = fam.value
        return ChaoticMapParams(fam, float(items[f"{f}.control"]), float(items[f"{f}.seed"]),
                                int(items[f"{f}.burn_in"]))

    scheme = Scheme(items["scheme"])
    if scheme is Scheme.SINGLE_LOGISTIC:
        return CipherKey(scheme, params(MapFamily.LOGISTIC))
    return CipherKey(scheme, params(MapFamily.LOGISTIC), params(MapFamily.SINE), params(MapFamily.CHEBYSHEV))


def key_fingerprint(key: CipherKey) -> str:
    text = "\n".join(f"{k}={v}" for k, v in _key_items(key))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def read_kv(path: PathLike) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_kv(path: PathLike, items: Iterable[Tuple[str, str]], header: str = "") -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_archive(pairs: PairSet, out_dir: PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blobs = {"plain.u8": pairs.plain, "cipher.u8": pairs.cipher, "split.u8": pairs.split}
    if pairs.labels is not None:
        blobs["labels.u8"] = pairs.labels.astype(np.uint8)
    digests = {}
    for name, arr in blobs.items():
        data = np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    n = len(pairs)
    c, h, w = pairs.shape
    items = [("format_version", str(ARCHIVE_VERSION)), ("count", str(n)), ("channels", str(c)),
             ("height", str(h)), ("width", str(w)), ("source", pairs.source or "-")]
    items += _key_items(pairs.key)
    items += [("key_fingerprint", key_fingerprint(pairs.key)),
              ("split_seed", "-" if pairs.split_seed is None else str(pairs.split_seed)),
              ("train_count", str(int((pairs.split == TRAIN).sum()))),
              ("test_count", str(int((pairs.split == TEST).sum())))]
    items += [(f"sha256.{k}", v) for k, v in sorted(digests.items())]
    write_kv(out / MANIFEST, items, "plaintext/ciphertext pair archive")
    return out


def load_archive(path: PathLike, verify: bool = True) -> PairSet:
    path = Path(path)
    if not (path / MANIFEST).exists():
        raise FileNotFoundError(f"no pair archive at {path} (missing {MANIFEST})")
    m = read_kv(path / MANIFEST)
    if int(m.get("format_version", -1)) != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {m.get('format_version')}")
    n, c, h, w = (int(m[k]) for k in ("count", "channels", "height", "width"))

    def blob(name, shape):
        data = (path / name).read_bytes()
        if verify and hashlib.sha256(data).hexdigest() != m.get(f"sha256.{name}"):
            raise FormatError(f"{path / name}: checksum mismatch")
        arr = np.frombuffer(data, dtype=np.uint8)
        if arr.size != int(np.prod(shape)):
            raise FormatError(f"{path / name}: {arr.size} bytes, expected {int(np.prod(shape))}")
        return arr.reshape(shape).copy()

    labels = blob("labels.u8", (n,)) if (path / "labels.u8").exists() else None
    split_seed = None if m.get("split_seed", "-") == "-" else int(m["split_seed"])
    return PairSet(blob("plain.u8", (n, c, h, w)), blob("cipher.u8", (n, c, h, w)), key_from_items(m),
                   blob("split.u8", (n,)), split_seed, labels,
                   "" if m.get("source", "-") == "-" else m["source"])
