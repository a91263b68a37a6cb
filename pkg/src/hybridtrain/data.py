"""Datasets, stratified splits and checkpoint files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .tensor import DTYPE, RngStream

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{k}.bin" for k in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] in [0, 1]
    labels: np.ndarray  # [N] int
    classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.classes)


@dataclass
class Splits:
    train: Dataset
    validation: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        aliases = {"train": "train", "val": "validation", "validation": "validation", "test": "test"}
        if name not in aliases:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, aliases[name])


@dataclass
class SplitSpec:
    train_fraction: float = 4 / 6
    validation_fraction: float = 1 / 6
    test_fraction: float = 1 / 6
    stratified: bool = True
    seed: int = 0

    def validate(self) -> "SplitSpec":
        fr = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f <= 0 for f in fr):
            raise ConfigError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)}")
        return self

    @classmethod
    def from_ratios(cls, train: float, validation: float, test: float, **kw) -> "SplitSpec":
        total = train + validation + test
        return cls(train / total, validation / total, test / total, **kw)


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise FormatError(f"missing CIFAR-10 batch file {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        whole = raw.size // CIFAR_RECORD
        raise FormatError(f"{path}: truncated record at byte offset {whole * CIFAR_RECORD} "
                          f"(file size {raw.size} is not a multiple of {CIFAR_RECORD})")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} out of range at byte offset {bad[0] * CIFAR_RECORD}")
    return rec[:, 1:], labels


def load_cifar10(directory: str | Path, dtype=DTYPE) -> Dataset:
    """All 60,000 records of the CIFAR-10 binary release (train batches then test batch)."""
    directory = Path(directory)
    pixels, labels = [], []
    for name in CIFAR_TRAIN_FILES + (CIFAR_TEST_FILE,):
        px, lb = _read_cifar_file(directory / name)
        pixels.append(px)
        labels.append(lb)
    px = np.concatenate(pixels)
    images = np.empty((px.shape[0],) + CIFAR_SHAPE, dtype=dtype)
    np.multiply(px.reshape((-1,) + CIFAR_SHAPE), 1.0 / 255.0, out=images, casting="unsafe")
    return Dataset(images, np.concatenate(labels), 10)


def write_cifar10_batch(path: str | Path, images_u8: np.ndarray, labels: np.ndarray) -> None:
    """Write records in the CIFAR-10 binary layout (used for fixtures)."""
    rec = np.empty((len(labels), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images_u8.reshape(len(labels), -1)
    rec.tofile(path)


def split_indices(labels: np.ndarray, spec: SplitSpec, classes: int | None = None) -> tuple[np.ndarray, ...]:
    spec.validate()
    rng = RngStream(spec.seed)
    labels = np.asarray(labels)
    fractions = (spec.train_fraction, spec.validation_fraction)
    if not spec.stratified:
        groups = [np.arange(len(labels))]
    else:
        classes = int(labels.max()) + 1 if classes is None else classes
        groups = [np.nonzero(labels == c)[0] for c in range(classes)]
    parts = ([], [], [])
    for g, idx in enumerate(groups):
        idx = idx[rng.substream(g).permutation(len(idx))]
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        if n_train + n_val > len(idx):
            raise ConfigError(f"group {g} of size {len(idx)} is too small for the requested fractions")
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def stratified_split(ds: Dataset, spec: SplitSpec) -> Splits:
    tr, va, te = split_indices(ds.labels, spec, ds.classes)
    if min(len(tr), len(va), len(te)) == 0:
        raise ConfigError("split produced an empty partition")
    return Splits(ds.subset(tr), ds.subset(va), ds.subset(te))


def stratified_subset(ds: Dataset, size: int, seed: int = 0) -> Dataset:
    """A class-balanced subset of ``size`` samples."""
    if not 0 < size <= len(ds):
        raise ConfigError(f"subset size must be in (0, {len(ds)}], got {size}")
    per_class = size // ds.classes
    rng = RngStream(seed)
    keep = []
    for c in range(ds.classes):
        idx = np.nonzero(ds.labels == c)[0]
        if len(idx) < per_class:
            raise ConfigError(f"class {c} has only {len(idx)} samples, need {per_class}")
        keep.append(idx[rng.substream(c).permutation(len(idx))[:per_class]])
    return ds.subset(np.sort(np.concatenate(keep)))


def make_synthetic(classes: int = 10, per_class: int = 100, image_size: int | Sequence[int] = 16,
                   seed: int = 0, noise: float = 0.15, contrast: float = 1.0, cell: int = 4) -> Dataset:
    """Class-conditional blob images: a per-class mean pattern plus Gaussian noise.

    Each class gets a coarse random pattern (``cell`` x ``cell`` pixel tiles) in
    [0, 1], pulled toward 0.5 by ``contrast``; samples add N(0, noise^2) pixel
    noise and are clipped to [0, 1].
    """
    if classes < 1 or per_class < 1:
        raise ConfigError("classes and per_class must be positive")
    shape = (3, image_size, image_size) if np.isscalar(image_size) else tuple(image_size)
    c, h, w = shape
    rng = RngStream(seed)
    gh, gw = -(-h // cell), -(-w // cell)
    means = []
    for k in range(classes):
        coarse = rng.substream(0, k).random(c * gh * gw).reshape(c, gh, gw)
        pattern = np.repeat(np.repeat(coarse, cell, axis=1), cell, axis=2)[:, :h, :w]
        means.append(0.5 + contrast * (pattern - 0.5))
    labels = np.repeat(np.arange(classes), per_class)
    noise_draw = rng.substream(1).normal(labels.size * c * h * w).reshape((labels.size,) + shape)
    images = np.clip(np.stack(means)[labels] + noise * noise_draw, 0.0, 1.0)
    order = rng.substream(2).permutation(labels.size)
    return Dataset(images[order], labels[order], classes)


def parse_data_spec(spec: str) -> tuple[str, dict]:
    """``cifar10:<dir>`` or ``synthetic:key=value,...``."""
    kind, _, rest = spec.partition(":")
    if kind == "cifar10":
        if not rest:
            raise ConfigError("cifar10 data spec needs a directory: cifar10:<dir>")
        return kind, {"directory": rest}
    if kind == "synthetic":
        args: dict = {}
        casts = {"classes": int, "per_class": int, "image_size": int, "seed": int,
                 "noise": float, "contrast": float, "cell": int}
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq or key not in casts:
                raise ConfigError(f"bad synthetic option {item!r}; known: {sorted(casts)}")
            args[key] = casts[key](value)
        return kind, args
    raise ConfigError(f"unknown data source {kind!r}; use cifar10:<dir> or synthetic:<opts>")


def load_data(spec: str, subset: int | None = None, subset_seed: int = 0) -> Dataset:
    kind, args = parse_data_spec(spec)
    try:
        ds = load_cifar10(args["directory"]) if kind == "cifar10" else make_synthetic(**args)
    except FormatError as exc:
        raise DataError(str(exc)) from exc
    if subset:
        ds = stratified_subset(ds, subset, subset_seed)
    return ds


# -- checkpoints -------------------------------------------------------------

MAGIC = b"HYBRIDCK"
VERSION = 1


@dataclass
class Checkpoint:
    architecture: dict
    parameters: list[np.ndarray]
    epoch: int = 0
    seed: int = 0
    phase: str = "init"
    version: int = VERSION
    extra: dict = field(default_factory=dict)


def _pack_text(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(ck: Checkpoint) -> bytes:
    arch = json.dumps({"architecture": ck.architecture, "extra": ck.extra}, sort_keys=True)
    out = [MAGIC, struct.pack("<I", VERSION), _pack_text(arch),
           struct.pack("<QQ", ck.epoch, ck.seed), _pack_text(ck.phase),
           struct.pack("<I", len(ck.parameters))]
    for p in ck.parameters:
        p = np.asarray(p, dtype="<f8")
        out.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}Q", *p.shape))
        out.append(p.tobytes(order="C"))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf, self.pos, self.name = buf, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.name}: truncated at byte offset {self.pos} (need {n} more bytes)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.name}: corrupt text field at offset {self.pos}") from exc


def decode_checkpoint(buf: bytes, name: str = "<checkpoint>") -> Checkpoint:
    r = _Reader(buf, name)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{name}: bad magic, not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        meta = json.loads(r.text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{name}: corrupt architecture descriptor") from exc
    epoch, seed = r.unpack("<QQ")
    phase = r.text()
    (count,) = r.unpack("<I")
    params = []
    for _ in range(count):
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape)) if ndim else 1
        params.append(np.frombuffer(r.take(8 * size), dtype="<f8").astype(DTYPE).reshape(shape))
    if r.pos != len(buf):
        raise FormatError(f"{name}: {len(buf) - r.pos} trailing bytes after parameters")
    return Checkpoint(meta["architecture"], params, epoch, seed, phase, version, meta.get("extra", {}))


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ck))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint {path} not found")
    return decode_checkpoint(path.read_bytes(), str(path))
