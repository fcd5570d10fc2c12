import gzip
import os
from pathlib import Path

import numpy as np
import pytest

from config.settings import MNIST_FILES
from pipelines.mnist_io import DatasetSplit, LabeledImages, MnistData, write_idx_images, write_idx_labels

FIXTURE_TRAIN = 120
FIXTURE_TEST = 40


def synthetic_digits(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Digit-like 28x28 images: a bright blob in the top half for odd digits, bottom half for even."""
    digits = rng.integers(0, 10, size=n).astype(np.uint8)
    rows, cols = np.mgrid[0:28, 0:28]
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    for i, d in enumerate(digits):
        r0 = 8 if d % 2 else 19
        c0 = rng.integers(8, 20)
        blob = 255.0 * np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / 8.0)
        noise = rng.integers(0, 20, size=(28, 28))
        images[i] = np.clip(blob + noise, 0, 255).astype(np.uint8)
    return images, digits


def write_idx_dir(path: Path, train: tuple, test: tuple, gz: bool = False) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    payloads = {
        "train_images": write_idx_images(train[0]),
        "train_labels": write_idx_labels(train[1]),
        "test_images": write_idx_images(test[0]),
        "test_labels": write_idx_labels(test[1]),
    }
    for key, data in payloads.items():
        name = MNIST_FILES[key]
        if gz:
            (path / f"{name}.gz").write_bytes(gzip.compress(data))
        else:
            (path / name).write_bytes(data)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_digits():
    return synthetic_digits


@pytest.fixture
def idx_dir(tmp_path):
    rng = np.random.default_rng(7)
    return write_idx_dir(tmp_path / "mnist", synthetic_digits(rng, FIXTURE_TRAIN), synthetic_digits(rng, FIXTURE_TEST))


@pytest.fixture
def gz_idx_dir(tmp_path):
    rng = np.random.default_rng(7)
    return write_idx_dir(
        tmp_path / "mnist-gz", synthetic_digits(rng, FIXTURE_TRAIN), synthetic_digits(rng, FIXTURE_TEST), gz=True
    )


@pytest.fixture
def small_data():
    rng = np.random.default_rng(11)
    train = LabeledImages(*synthetic_digits(rng, 64))
    test = LabeledImages(*synthetic_digits(rng, 32))
    return MnistData(train, test)


@pytest.fixture
def small_split(small_data):
    return DatasetSplit(np.arange(len(small_data.train)), np.array([], dtype=np.intp), np.arange(len(small_data.test)))


@pytest.fixture
def real_mnist_dir():
    data_dir = Path(os.environ.get("MOQE_DATA_DIR", "/nonexistent"))
    base = MNIST_FILES["train_images"]
    if not ((data_dir / base).exists() or (data_dir / f"{base}.gz").exists()):
        pytest.skip("real MNIST files not available (set MOQE_DATA_DIR)")
    return data_dir
