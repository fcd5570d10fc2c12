"""MNIST IDX ingestion, the seeded train/held-out split and parity labels.

IDX layout (big endian):
    images: u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels, row-major
    labels: u32 magic 0x00000801 | u32 count | u8 digits
Gzipped streams are detected by their two-byte header and decompressed transparently.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from config.settings import (
    DATA_DIR,
    HELD_OUT_SIZE,
    MNIST_COUNTS,
    MNIST_FILES,
    MNIST_SHA256,
    RAW_SIZE,
)
from simulator.encoding import PaddedImage, pad_image, pad_raw_batch

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_HEADER = b"\x1f\x8b"


class IdxFormatError(ValueError):
    """Malformed or truncated IDX stream."""


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] != GZIP_HEADER:
        return data
    try:
        return gzip.decompress(data)
    except (OSError, EOFError) as exc:
        raise IdxFormatError(f"corrupt gzip stream of {len(data)} bytes: {exc}") from exc


def _read_header(data: bytes, num_fields: int, magic: int, what: str) -> tuple[int, ...]:
    size = 4 * num_fields
    if len(data) < size:
        raise IdxFormatError(f"{what}: truncated header, {len(data)} of {size} bytes at offset 0")
    fields = struct.unpack(f">{num_fields}I", data[:size])
    if fields[0] != magic:
        raise IdxFormatError(f"{what}: wrong magic 0x{fields[0]:08x} at offset 0, expected 0x{magic:08x}")
    return fields[1:]


def parse_idx_images(data: bytes, expected_count: int | None = None) -> np.ndarray:
    """(count, 28, 28) uint8 array from an IDX image stream."""
    data = _maybe_gunzip(bytes(data))
    count, rows, cols = _read_header(data, 4, IMAGE_MAGIC, "image file")
    if (rows, cols) != (RAW_SIZE, RAW_SIZE):
        raise IdxFormatError(f"image file: dimensions {rows}x{cols} at offset 8, expected {RAW_SIZE}x{RAW_SIZE}")
    if expected_count is not None and count != expected_count:
        raise IdxFormatError(f"image file: count {count} at offset 4, expected {expected_count}")
    need = 16 + count * rows * cols
    if len(data) < need:
        raise IdxFormatError(
            f"image file: truncated at offset {len(data)}, payload needs {need} bytes "
            f"(image {(len(data) - 16) // (rows * cols)} of {count} incomplete)"
        )
    if len(data) > need:
        logger.warning("image file: %d trailing bytes after offset %d ignored", len(data) - need, need)
    if count == 0:
        return np.zeros((0, rows, cols), dtype=np.uint8)
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def parse_idx_labels(data: bytes, expected_count: int | None = None) -> np.ndarray:
    """(count,) uint8 digits from an IDX label stream."""
    data = _maybe_gunzip(bytes(data))
    (count,) = _read_header(data, 2, LABEL_MAGIC, "label file")
    if expected_count is not None and count != expected_count:
        raise IdxFormatError(f"label file: count {count} at offset 4 does not match {expected_count} images")
    need = 8 + count
    if len(data) < need:
        raise IdxFormatError(f"label file: truncated at offset {len(data)}, payload needs {need} bytes")
    digits = np.frombuffer(data, dtype=np.uint8, count=count, offset=8)
    bad = np.flatnonzero(digits > 9)
    if bad.size:
        raise IdxFormatError(f"label file: digit {digits[bad[0]]} out of range at offset {8 + bad[0]}")
    return digits


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">4I", IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def write_idx_labels(digits: np.ndarray) -> bytes:
    digits = np.asarray(digits, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, digits.shape[0]) + digits.tobytes()


def parity_label(digit: int) -> int:
    """+1 for odd digits, -1 for even digits."""
    if not 0 <= digit <= 9:
        raise ValueError(f"digit {digit} outside 0..9")
    return 1 if digit % 2 == 1 else -1


def parity_labels(digits: np.ndarray) -> np.ndarray:
    digits = np.asarray(digits)
    if digits.size and (digits.min() < 0 or digits.max() > 9):
        raise ValueError("digits must lie in 0..9")
    return np.where(digits % 2 == 1, 1, -1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class LabeledImages:
    """Raw uint8 images with their digits; immutable and safe to share across threads."""

    images: np.ndarray
    digits: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 3 or self.images.shape[1:] != (RAW_SIZE, RAW_SIZE):
            raise ValueError(f"images must have shape (N, {RAW_SIZE}, {RAW_SIZE}), got {self.images.shape}")
        if self.images.shape[0] != self.digits.shape[0]:
            raise ValueError(f"{self.images.shape[0]} images but {self.digits.shape[0]} digits")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return parity_labels(self.digits)

    def subset(self, indices: np.ndarray) -> "LabeledImages":
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledImages(self.images[indices], self.digits[indices])

    def padded(self, i: int) -> PaddedImage:
        return pad_image(self.images[i])

    def padded_pixels(self) -> np.ndarray:
        """All images as (N, 32, 32) floats in [0, 1]."""
        return pad_raw_batch(self.images)


@dataclass(frozen=True, eq=False)
class MnistData:
    train: LabeledImages
    test: LabeledImages


def _find(data_dir: Path, base: str) -> Path:
    for name in (base, base + ".gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{base}[.gz] not found in {data_dir}")


def load_mnist(data_dir: str | Path = DATA_DIR) -> MnistData:
    data_dir = Path(data_dir)
    parts = {}
    for split in ("train", "test"):
        images = parse_idx_images(_find(data_dir, MNIST_FILES[f"{split}_images"]).read_bytes())
        digits = parse_idx_labels(_find(data_dir, MNIST_FILES[f"{split}_labels"]).read_bytes(), len(images))
        parts[split] = LabeledImages(images, digits)
        logger.info("Loaded %d %s images from %s", len(images), split, data_dir)
    return MnistData(**parts)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: np.ndarray
    held_out: np.ndarray
    test: np.ndarray
    seed: int = field(default=0)

    def __post_init__(self) -> None:
        if np.intersect1d(self.train, self.held_out).size or np.unique(self.train).size != self.train.size:
            raise ValueError("train and held-out indices must be disjoint and free of duplicates")


def make_split(seed: int, num_images: int = MNIST_COUNTS["train"], num_test: int = MNIST_COUNTS["test"]) -> DatasetSplit:
    """Shuffle 0..num_images-1 with a PCG64 generator seeded by `seed` and cut it.

    On the canonical 60,000 training images the first 50,000 shuffled indices train and
    the remaining 10,000 are held out. Other sizes (test fixtures) hold out
    min(10,000, num_images // 6). The test selection is always every test image.
    """
    if num_images < 2:
        raise ValueError(f"need at least 2 training images to split, got {num_images}")
    order = np.random.default_rng(seed).permutation(num_images)
    held = HELD_OUT_SIZE if num_images == MNIST_COUNTS["train"] else min(HELD_OUT_SIZE, max(1, num_images // 6))
    train_size = num_images - held
    return DatasetSplit(order[:train_size], order[train_size:], np.arange(num_test), seed)


# --- Integrity ---

def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class FileCheck:
    name: str
    ok: bool
    count: int | None = None
    sha256: str | None = None
    payload_sha256: str | None = None
    message: str = ""

    @property
    def payload_name(self) -> str:
        return self.name.removesuffix(".gz")

    def digests(self) -> dict[str, str]:
        """Manifest entries for this file: its own digest and, when gzipped, the payload's."""
        return {self.name: self.sha256, self.payload_name: self.payload_sha256}


def verify_mnist_files(
    data_dir: str | Path = DATA_DIR,
    expected_counts: Mapping[str, int] = MNIST_COUNTS,
    digests: Mapping[str, str] | None = None,
    allow_unpinned: bool = False,
) -> list[FileCheck]:
    """Check magics, counts and SHA-256 digests of the four files; one FileCheck per file.

    A gzipped file is matched against the pins for its own name and for its decompressed
    name, an uncompressed file against the pin for its name. Every pin present must match,
    and a file with no pin at all fails unless `allow_unpinned`.
    """
    data_dir = Path(data_dir)
    pinned = {name: sha.lower() for name, sha in {**MNIST_SHA256, **(digests or {})}.items()}
    checks = []
    image_counts = {}
    for key, base in MNIST_FILES.items():
        split, kind = key.split("_")
        try:
            path = _find(data_dir, base)
            raw = path.read_bytes()
        except OSError as exc:
            checks.append(FileCheck(base, False, message=str(exc)))
            continue
        check = FileCheck(path.name, True, sha256=sha256_hex(raw))
        try:
            payload = _maybe_gunzip(raw)
        except IdxFormatError as exc:
            check.ok = False
            check.message = f"{path.name}: {exc}"
            checks.append(check)
            continue
        check.payload_sha256 = check.sha256 if payload is raw else sha256_hex(payload)

        found = check.digests()
        expected = {name: pinned[name] for name in found if name in pinned}
        wrong = [name for name, sha in expected.items() if sha != found[name]]
        if wrong:
            check.ok = False
            check.message = f"SHA-256 mismatch for {wrong[0]}: got {found[wrong[0]]}, expected {expected[wrong[0]]}"
            checks.append(check)
            continue
        try:
            if kind == "images":
                check.count = len(parse_idx_images(payload, expected_counts.get(split)))
                image_counts[split] = check.count
            else:
                check.count = len(parse_idx_labels(payload, image_counts.get(split, expected_counts.get(split))))
        except IdxFormatError as exc:
            check.ok = False
            check.message = f"{path.name}: {exc}"
        else:
            if expected:
                check.message = "pinned digest ok"
            elif allow_unpinned:
                check.message = "no pinned SHA-256 (allowed)"
            else:
                check.ok = False
                check.message = f"no pinned SHA-256 for {path.name}; pass --digests or --allow-unpinned"
        checks.append(check)
    return checks
