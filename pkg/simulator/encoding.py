"""Amplitude encoding of 28x28 images into a 10-qubit state.

The image is zero-padded to 32x32 and pixel (x, y) (x = row, y = column) is
stored at the amplitude whose index bits, most significant first, are
x0 y0 x1 y1 ... x4 y4. Qubit 2i therefore carries bit i of the row and qubit
2i + 1 bit i of the column, with i = 0 the coarsest scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from config.settings import NUM_QUBITS, PAD, PADDED_SIZE, PIXEL_SCALE, RAW_SIZE
from simulator.core_state import StateVector, apply_1q

COORD_BITS = 5


def x_qubit(level: int) -> int:
    return 2 * level


def y_qubit(level: int) -> int:
    return 2 * level + 1


Y4_QUBIT = y_qubit(COORD_BITS - 1)


@dataclass(frozen=True, eq=False)
class PaddedImage:
    """32x32 grid of intensities in [0, 1] plus its L2 norm."""

    pixels: np.ndarray
    source_norm: float

    def __post_init__(self) -> None:
        if self.pixels.shape != (PADDED_SIZE, PADDED_SIZE):
            raise ValueError(f"padded image must be {PADDED_SIZE}x{PADDED_SIZE}, got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if not self.source_norm > 0.0:
            raise ValueError("image norm must be positive")
        squared = float(np.sum(self.pixels ** 2))
        if abs(self.source_norm ** 2 - squared) > 1e-12 * max(1.0, squared):
            raise ValueError("source_norm does not match the pixel values")

    @classmethod
    def from_pixels(cls, pixels: np.ndarray) -> "PaddedImage":
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(pixels, float(np.linalg.norm(pixels)))


def pad_raw_batch(raw: np.ndarray) -> np.ndarray:
    """Scale raw (..., 28, 28) intensities to [0, 1] and place them inside a zero border."""
    raw = np.asarray(raw)
    if raw.shape[-2:] != (RAW_SIZE, RAW_SIZE):
        raise ValueError(f"raw images must be {RAW_SIZE}x{RAW_SIZE}, got {raw.shape[-2:]}")
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise ValueError("raw pixel values must lie in [0, 255]")
    padded = np.zeros(raw.shape[:-2] + (PADDED_SIZE, PADDED_SIZE), dtype=np.float64)
    padded[..., PAD:PAD + RAW_SIZE, PAD:PAD + RAW_SIZE] = raw / PIXEL_SCALE
    return padded


def pad_image(raw: np.ndarray) -> PaddedImage:
    pixels = pad_raw_batch(raw)
    if not np.any(pixels):
        raise ValueError("all-zero image has no norm and cannot be amplitude-encoded")
    return PaddedImage.from_pixels(pixels)


def pixel_to_amplitude_index(x: int, y: int) -> int:
    """Interleave the bits of (x, y) as x0 y0 x1 y1 ... x4 y4, x0 most significant."""
    side = 1 << COORD_BITS
    if not (0 <= x < side and 0 <= y < side):
        raise ValueError(f"pixel coordinate ({x}, {y}) outside 0..{side - 1}")
    index = 0
    for level in range(COORD_BITS):
        shift = COORD_BITS - 1 - level
        index = (index << 2) | (((x >> shift) & 1) << 1) | ((y >> shift) & 1)
    return index


@lru_cache(maxsize=None)
def amplitude_index_grid() -> np.ndarray:
    """32x32 table of pixel_to_amplitude_index."""
    grid = np.array(
        [[pixel_to_amplitude_index(x, y) for y in range(PADDED_SIZE)] for x in range(PADDED_SIZE)],
        dtype=np.intp,
    )
    grid.flags.writeable = False
    return grid


def encode_pixels(pixels: np.ndarray) -> np.ndarray:
    """Normalized amplitudes (..., 1024) for non-negative (..., 32, 32) pixel grids of any scale."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-2:] != (PADDED_SIZE, PADDED_SIZE):
        raise ValueError(f"expected {PADDED_SIZE}x{PADDED_SIZE} grids, got {pixels.shape[-2:]}")
    if pixels.size and pixels.min() < 0.0:
        raise ValueError("pixel intensities must be non-negative")
    batch = pixels.shape[:-2]
    flat = pixels.reshape(batch + (-1,))
    norms = np.linalg.norm(flat, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("all-zero image has no norm and cannot be amplitude-encoded")
    amps = np.zeros(batch + (1 << NUM_QUBITS,), dtype=np.complex128)
    amps[..., amplitude_index_grid().ravel()] = flat / norms
    return amps


def encode_raw_batch(raw: np.ndarray) -> np.ndarray:
    return encode_pixels(pad_raw_batch(raw))


def amplitude_encode(img: PaddedImage) -> StateVector:
    return StateVector(NUM_QUBITS, encode_pixels(img.pixels))


def _pair_axis(qubit: int) -> tuple[int, int]:
    """(pixel axis, pair distance) of the coordinate bit carried by `qubit`."""
    if not 0 <= qubit < NUM_QUBITS:
        raise IndexError(f"qubit index {qubit} out of range")
    axis = qubit % 2
    level = qubit // 2
    return axis, 1 << (COORD_BITS - 1 - level)


def strided_pair_convolution(pixels: np.ndarray, matrix: np.ndarray, qubit: int = Y4_QUBIT) -> np.ndarray:
    """Classical counterpart of a 1-qubit gate on `qubit`.

    Pixels whose coordinate bit is 0 are paired with the pixel `distance` further along
    the same axis; each pair (c0, c1) becomes (a*c0 + b*c1, g*c0 + d*c1). For y4 this is
    a 1x2 kernel applied with horizontal stride 2.
    """
    axis, distance = _pair_axis(qubit)
    (a, b), (g, d) = np.asarray(matrix, dtype=np.float64)
    moved = np.moveaxis(np.asarray(pixels, dtype=np.float64), axis, 0)
    blocks = moved.reshape(PADDED_SIZE // (2 * distance), 2, distance, -1)
    c0, c1 = blocks[:, 0], blocks[:, 1]
    out = np.stack([a * c0 + b * c1, g * c0 + d * c1], axis=1)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)


def conv_equivalence_check(
    alpha: float,
    beta: float,
    gamma: float,
    delta: float,
    img: PaddedImage,
    qubit: int = Y4_QUBIT,
    tol: float = 1e-12,
) -> bool:
    """True iff the gate [[alpha, beta], [gamma, delta]] on `qubit` equals the strided pair convolution."""
    matrix = np.array([[alpha, beta], [gamma, delta]], dtype=np.float64)
    if not np.allclose(matrix @ matrix.T, np.eye(2), rtol=0.0, atol=1e-12):
        raise ValueError("conv_equivalence_check needs a real orthogonal 2x2 matrix")
    state = apply_1q(amplitude_encode(img), qubit, matrix.astype(np.complex128))
    classical = strided_pair_convolution(img.pixels, matrix, qubit)
    expected = np.zeros(1 << NUM_QUBITS)
    expected[amplitude_index_grid().ravel()] = classical.ravel() / img.source_norm
    return bool(np.max(np.abs(state.amplitudes - expected)) < tol)
