import gzip
import json
import struct

import numpy as np
import pytest

from config.settings import MNIST_FILES, MNIST_SHA256
from pipelines.mnist_io import (
    IdxFormatError,
    LabeledImages,
    load_mnist,
    make_split,
    parity_label,
    parity_labels,
    parse_idx_images,
    parse_idx_labels,
    sha256_hex,
    verify_mnist_files,
    write_idx_images,
    write_idx_labels,
)
from conftest import FIXTURE_TEST, FIXTURE_TRAIN


def reference_parse_images(data):
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    assert magic == 2051
    pixels = [data[16 + i] for i in range(count * rows * cols)]
    return np.array(pixels, dtype=np.uint8).reshape(count, rows, cols)


FIXTURE_COUNTS = {"train": FIXTURE_TRAIN, "test": FIXTURE_TEST}


class TestIdxImages:
    def test_round_trip(self, make_digits, rng):
        images, _ = make_digits(rng, 7)
        np.testing.assert_array_equal(parse_idx_images(write_idx_images(images)), images)

    def test_matches_bytewise_reader(self, make_digits, rng):
        images, _ = make_digits(rng, 3)
        data = write_idx_images(images)
        np.testing.assert_array_equal(parse_idx_images(data), reference_parse_images(data))

    def test_empty_file(self):
        assert parse_idx_images(write_idx_images(np.zeros((0, 28, 28)))).shape == (0, 28, 28)

    def test_wrong_magic(self):
        data = struct.pack(">4I", 0x801, 0, 28, 28)
        with pytest.raises(IdxFormatError, match="wrong magic 0x00000801"):
            parse_idx_images(data)

    def test_truncated_header(self):
        with pytest.raises(IdxFormatError, match="truncated header"):
            parse_idx_images(b"\x00\x00\x08")

    def test_truncated_payload_reports_offset(self, make_digits, rng):
        images, _ = make_digits(rng, 2)
        data = write_idx_images(images)[:-100]
        with pytest.raises(IdxFormatError, match=f"truncated at offset {16 + 2 * 784 - 100}"):
            parse_idx_images(data)

    def test_wrong_dimensions(self):
        data = struct.pack(">4I", 0x803, 1, 32, 32) + bytes(1024)
        with pytest.raises(IdxFormatError, match="32x32"):
            parse_idx_images(data)

    def test_unexpected_count(self, make_digits, rng):
        images, _ = make_digits(rng, 2)
        with pytest.raises(IdxFormatError, match="count 2"):
            parse_idx_images(write_idx_images(images), expected_count=3)

    def test_gzip_stream(self, make_digits, rng):
        images, _ = make_digits(rng, 4)
        np.testing.assert_array_equal(parse_idx_images(gzip.compress(write_idx_images(images))), images)

    def test_corrupt_gzip(self):
        with pytest.raises(IdxFormatError, match="gzip"):
            parse_idx_images(b"\x1f\x8b" + b"garbage" * 4)


class TestIdxLabels:
    def test_round_trip(self):
        digits = np.array([0, 9, 3, 3, 8], dtype=np.uint8)
        np.testing.assert_array_equal(parse_idx_labels(write_idx_labels(digits)), digits)

    def test_count_mismatch_with_images(self):
        with pytest.raises(IdxFormatError, match="does not match 4 images"):
            parse_idx_labels(write_idx_labels(np.arange(3)), expected_count=4)

    def test_digit_out_of_range(self):
        data = write_idx_labels(np.array([1, 2, 12, 4]))
        with pytest.raises(IdxFormatError, match="digit 12 out of range at offset 10"):
            parse_idx_labels(data)

    def test_truncated(self):
        with pytest.raises(IdxFormatError, match="truncated"):
            parse_idx_labels(write_idx_labels(np.arange(10))[:-1])


class TestParity:
    @pytest.mark.parametrize("digit,label", [(0, -1), (1, 1), (2, -1), (7, 1), (8, -1), (9, 1)])
    def test_single_digit(self, digit, label):
        assert parity_label(digit) == label

    def test_invalid_digit(self):
        with pytest.raises(ValueError, match="outside 0..9"):
            parity_label(10)

    def test_vectorized(self):
        np.testing.assert_array_equal(parity_labels(np.arange(10)), [-1, 1] * 5)
        assert parity_labels(np.arange(10)).dtype == np.int8


class TestSplit:
    def test_canonical_sizes(self):
        split = make_split(0)
        assert split.train.size == 50_000
        assert split.held_out.size == 10_000
        np.testing.assert_array_equal(np.sort(np.concatenate([split.train, split.held_out])), np.arange(60_000))
        np.testing.assert_array_equal(split.test, np.arange(10_000))

    def test_deterministic_per_seed(self):
        np.testing.assert_array_equal(make_split(3).train, make_split(3).train)
        assert not np.array_equal(make_split(3).train, make_split(4).train)

    def test_small_sizes(self):
        split = make_split(1, FIXTURE_TRAIN, FIXTURE_TEST)
        assert (split.train.size, split.held_out.size) == (100, 20)
        assert np.intersect1d(split.train, split.held_out).size == 0

    def test_too_small(self):
        with pytest.raises(ValueError, match="at least 2"):
            make_split(0, 1)


class TestLabeledImages:
    def test_labels_and_subset(self, make_digits, rng):
        images, digits = make_digits(rng, 10)
        data = LabeledImages(images, digits)
        sub = data.subset([3, 1])
        assert len(sub) == 2
        np.testing.assert_array_equal(sub.digits, digits[[3, 1]])
        np.testing.assert_array_equal(data.labels, np.where(digits % 2 == 1, 1, -1))

    def test_padded_views(self, make_digits, rng):
        images, digits = make_digits(rng, 3)
        data = LabeledImages(images, digits)
        assert data.padded_pixels().shape == (3, 32, 32)
        np.testing.assert_array_equal(data.padded(1).pixels, data.padded_pixels()[1])

    def test_shape_mismatch(self, make_digits, rng):
        images, digits = make_digits(rng, 3)
        with pytest.raises(ValueError, match="3 images but 2 digits"):
            LabeledImages(images, digits[:2])


class TestLoad:
    def test_uncompressed_directory(self, idx_dir):
        data = load_mnist(idx_dir)
        assert (len(data.train), len(data.test)) == (FIXTURE_TRAIN, FIXTURE_TEST)
        assert data.train.images.dtype == np.uint8

    def test_gzipped_directory_matches(self, idx_dir, gz_idx_dir):
        plain, packed = load_mnist(idx_dir), load_mnist(gz_idx_dir)
        np.testing.assert_array_equal(plain.train.images, packed.train.images)
        np.testing.assert_array_equal(plain.test.digits, packed.test.digits)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist(tmp_path / "absent")


class TestVerify:
    def test_fixture_passes_when_unpinned_files_are_allowed(self, idx_dir):
        checks = verify_mnist_files(idx_dir, FIXTURE_COUNTS, allow_unpinned=True)
        assert all(c.ok for c in checks)
        assert [c.count for c in checks] == [FIXTURE_TRAIN, FIXTURE_TRAIN, FIXTURE_TEST, FIXTURE_TEST]
        assert all(c.message == "no pinned SHA-256 (allowed)" for c in checks)

    def test_unpinned_files_fail_by_default(self, idx_dir):
        checks = verify_mnist_files(idx_dir, FIXTURE_COUNTS)
        assert not any(c.ok for c in checks)
        assert all(c.message.startswith(f"no pinned SHA-256 for {c.name}") for c in checks)

    def test_one_changed_byte_in_a_canonical_file_fails(self, idx_dir):
        manifest = {}
        for check in verify_mnist_files(idx_dir, FIXTURE_COUNTS, allow_unpinned=True):
            manifest.update(check.digests())
        name = MNIST_FILES["train_images"]
        data = bytearray((idx_dir / name).read_bytes())
        data[100] ^= 0xFF
        (idx_dir / name).write_bytes(bytes(data))

        checks = {c.name: c for c in verify_mnist_files(idx_dir, FIXTURE_COUNTS, manifest)}
        assert not checks[name].ok
        assert checks[name].message.startswith(f"SHA-256 mismatch for {name}")
        assert all(c.ok for n, c in checks.items() if n != name)
        assert not verify_mnist_files(idx_dir, FIXTURE_COUNTS)[0].ok

    def test_wrong_count(self, idx_dir):
        checks = verify_mnist_files(idx_dir)
        assert not checks[0].ok
        assert "count 120" in checks[0].message

    def test_truncated_file(self, idx_dir):
        path = idx_dir / MNIST_FILES["test_images"]
        path.write_bytes(path.read_bytes()[:-10])
        checks = {c.name: c for c in verify_mnist_files(idx_dir, FIXTURE_COUNTS, allow_unpinned=True)}
        assert not checks[path.name].ok
        assert "truncated" in checks[path.name].message

    def test_pinned_digest(self, idx_dir):
        name = MNIST_FILES["train_labels"]
        good = {name: sha256_hex((idx_dir / name).read_bytes())}
        checks = {c.name: c for c in verify_mnist_files(idx_dir, FIXTURE_COUNTS, good)}
        assert checks[name].ok and checks[name].message == "pinned digest ok"
        checks = {c.name: c for c in verify_mnist_files(idx_dir, FIXTURE_COUNTS, {name: "0" * 64})}
        assert not checks[name].ok
        assert checks[name].message.startswith(f"SHA-256 mismatch for {name}")

    def test_shipped_digests_pin_the_gzipped_distribution(self, gz_idx_dir):
        assert set(MNIST_SHA256) == {f"{name}.gz" for name in MNIST_FILES.values()}
        checks = verify_mnist_files(gz_idx_dir, FIXTURE_COUNTS, allow_unpinned=True)
        assert not any(c.ok for c in checks)
        assert all(c.message.startswith(f"SHA-256 mismatch for {c.name}") for c in checks)

    def test_gzipped_file_is_checked_through_its_payload(self, idx_dir, gz_idx_dir):
        plain = {c.name: c.sha256 for c in verify_mnist_files(idx_dir, FIXTURE_COUNTS, allow_unpinned=True)}
        archives = {c.name: c.sha256 for c in verify_mnist_files(gz_idx_dir, FIXTURE_COUNTS)}
        checks = verify_mnist_files(gz_idx_dir, FIXTURE_COUNTS, {**archives, **plain})
        assert all(c.ok and c.message == "pinned digest ok" for c in checks)
        assert [c.payload_sha256 for c in checks] == list(plain.values())

        wrong_payload = {**archives, **plain, MNIST_FILES["test_labels"]: "0" * 64}
        checks = verify_mnist_files(gz_idx_dir, FIXTURE_COUNTS, wrong_payload)
        assert not checks[3].ok
        assert checks[3].message.startswith(f"SHA-256 mismatch for {MNIST_FILES['test_labels']}:")

    def test_missing_file(self, idx_dir):
        (idx_dir / MNIST_FILES["test_labels"]).unlink()
        checks = verify_mnist_files(idx_dir, FIXTURE_COUNTS, allow_unpinned=True)
        assert not checks[-1].ok
        assert "not found" in checks[-1].message


def test_real_mnist_matches_published_counts(real_mnist_dir):
    decompressed = (real_mnist_dir / MNIST_FILES["train_images"]).exists()
    checks = verify_mnist_files(real_mnist_dir, allow_unpinned=decompressed)
    assert all(c.ok for c in checks), json.dumps([c.message for c in checks])
    data = load_mnist(real_mnist_dir)
    assert (len(data.train), len(data.test)) == (60_000, 10_000)
