import numpy as np
import pytest

from simulator.core_state import ry
from simulator.encoding import (
    Y4_QUBIT,
    PaddedImage,
    amplitude_encode,
    amplitude_index_grid,
    conv_equivalence_check,
    encode_pixels,
    encode_raw_batch,
    pad_image,
    pad_raw_batch,
    pixel_to_amplitude_index,
    strided_pair_convolution,
)


def bit_string_index(x, y):
    xb = format(x, "05b")
    yb = format(y, "05b")
    return int("".join(a + b for a, b in zip(xb, yb)), 2)


@pytest.fixture
def images(make_digits, rng):
    raw, _ = make_digits(rng, 20)
    return [pad_image(r) for r in raw]


class TestPadding:
    def test_constant_image(self):
        img = pad_image(np.full((28, 28), 255, dtype=np.uint8))
        assert img.pixels[2:30, 2:30].min() == 1.0
        assert img.pixels.sum() == 28 * 28
        assert img.source_norm == pytest.approx(28.0)

    def test_border_is_zero(self, rng):
        img = pad_image(rng.integers(1, 256, size=(28, 28)))
        border = np.ones((32, 32), dtype=bool)
        border[2:30, 2:30] = False
        assert not img.pixels[border].any()

    def test_single_pixel_lands_offset_by_two(self):
        raw = np.zeros((28, 28), dtype=np.uint8)
        raw[0, 5] = 51
        img = pad_image(raw)
        assert img.pixels[2, 7] == pytest.approx(0.2)
        assert np.count_nonzero(img.pixels) == 1

    def test_all_zero_image_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            pad_image(np.zeros((28, 28)))

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError, match="28x28"):
            pad_image(np.ones((27, 28)))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 255\]"):
            pad_raw_batch(np.full((28, 28), 256))

    def test_padded_image_validates_norm(self):
        pixels = np.zeros((32, 32))
        pixels[3, 3] = 0.5
        with pytest.raises(ValueError, match="source_norm"):
            PaddedImage(pixels, 1.0)


class TestIndexMap:
    @pytest.mark.parametrize("x,y,index", [(0, 0, 0), (31, 31, 1023), (3, 5, 27), (16, 0, 512), (0, 16, 256)])
    def test_known_positions(self, x, y, index):
        assert pixel_to_amplitude_index(x, y) == index

    def test_is_a_bijection(self):
        grid = amplitude_index_grid()
        assert sorted(grid.ravel().tolist()) == list(range(1024))

    def test_matches_interleaved_bit_strings(self):
        grid = amplitude_index_grid()
        for x in range(32):
            for y in range(32):
                assert grid[x, y] == bit_string_index(x, y)

    def test_outside_grid_rejected(self):
        with pytest.raises(ValueError):
            pixel_to_amplitude_index(32, 0)


class TestEncode:
    def test_state_is_normalized(self, images):
        for img in images:
            assert amplitude_encode(img).is_normalized()

    def test_amplitudes_follow_pixels(self, images):
        img = images[0]
        amps = amplitude_encode(img).amplitudes
        for x, y in [(2, 2), (10, 17), (29, 29), (15, 3)]:
            assert amps[pixel_to_amplitude_index(x, y)].real == pytest.approx(img.pixels[x, y] / img.source_norm)

    def test_amplitudes_are_real_and_non_negative(self, images):
        amps = amplitude_encode(images[3]).amplitudes
        assert np.all(amps.imag == 0.0)
        assert amps.real.min() >= 0.0

    def test_single_pixel_gives_basis_state(self):
        raw = np.zeros((28, 28))
        raw[1, 3] = 17
        amps = amplitude_encode(pad_image(raw)).amplitudes
        index = pixel_to_amplitude_index(3, 5)
        assert amps[index].real == pytest.approx(1.0)
        assert np.count_nonzero(amps) == 1

    def test_batch_matches_single(self, make_digits, rng):
        raw, _ = make_digits(rng, 5)
        batch = encode_raw_batch(raw)
        for r, amps in zip(raw, batch):
            np.testing.assert_allclose(amps, amplitude_encode(pad_image(r)).amplitudes, atol=1e-15, rtol=0)

    def test_scale_invariance(self, images):
        pixels = images[1].pixels
        base = encode_pixels(pixels)
        for factor in (0.5, 2.0):
            np.testing.assert_array_equal(encode_pixels(pixels * factor), base)
        np.testing.assert_allclose(encode_pixels(pixels * 255.0), base, atol=1e-15, rtol=0)

    def test_zero_grid_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            encode_pixels(np.zeros((32, 32)))


class TestStridedPairConvolution:
    def test_identity_gate(self, images):
        np.testing.assert_array_equal(strided_pair_convolution(images[0].pixels, np.eye(2)), images[0].pixels)

    def test_swap_exchanges_neighbouring_columns(self, images):
        pixels = images[0].pixels
        out = strided_pair_convolution(pixels, np.array([[0, 1], [1, 0]]))
        np.testing.assert_array_equal(out[:, 0::2], pixels[:, 1::2])
        np.testing.assert_array_equal(out[:, 1::2], pixels[:, 0::2])

    def test_coarsest_row_bit_pairs_distant_rows(self, images):
        pixels = images[2].pixels
        out = strided_pair_convolution(pixels, np.array([[0, 1], [1, 0]]), qubit=0)
        np.testing.assert_array_equal(out[:16], pixels[16:])
        np.testing.assert_array_equal(out[16:], pixels[:16])

    def test_matches_quantum_gate_for_many_angles(self, images, rng):
        for theta in rng.uniform(-np.pi, np.pi, size=200):
            (a, b), (g, d) = ry(theta).real
            for img in images:
                assert conv_equivalence_check(a, b, g, d, img)

    def test_matches_quantum_gate_on_other_qubits(self, images, rng):
        for qubit in range(10):
            (a, b), (g, d) = ry(rng.uniform(-np.pi, np.pi)).real
            assert conv_equivalence_check(a, b, g, d, images[4], qubit=qubit)

    def test_reflection_also_matches(self, images):
        c, s = np.cos(0.4), np.sin(0.4)
        assert conv_equivalence_check(c, s, s, -c, images[5], qubit=Y4_QUBIT)

    def test_non_orthogonal_rejected(self, images):
        with pytest.raises(ValueError, match="orthogonal"):
            conv_equivalence_check(1.0, 1.0, 0.0, 1.0, images[0])
