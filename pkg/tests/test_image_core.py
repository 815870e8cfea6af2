import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gray_image, rgb_image
from padkit.image_core import (
    Image,
    PnmHeaderError,
    PnmMaxvalError,
    PnmTruncatedError,
    Rect,
    center_rect,
    crop,
    decode_pnm,
    encode_pnm,
    resize_bilinear,
    to_grayscale,
    to_input_tensor,
)


@st.composite
def images(draw, max_side=12):
    w = draw(st.integers(1, max_side))
    h = draw(st.integers(1, max_side))
    c = draw(st.sampled_from([1, 3]))
    data = draw(st.binary(min_size=w * h * c, max_size=w * h * c))
    return Image(np.frombuffer(data, dtype=np.uint8).reshape(h, w, c))


class TestPnmCodec:
    def test_minimal_pgm(self):
        img = decode_pnm(b"P5\n2 1\n255\n" + bytes([0, 255]))
        assert (img.width, img.height, img.channels) == (2, 1, 1)
        assert list(img.data) == [0, 255]

    def test_minimal_ppm(self):
        img = decode_pnm(b"P6\n1 1\n255\n" + bytes([1, 2, 3]))
        assert (img.width, img.height, img.channels) == (1, 1, 3)
        assert list(img.data) == [1, 2, 3]

    def test_encode_canonical_header(self):
        assert encode_pnm(gray_image([[7]])) == b"P5\n1 1\n255\n" + bytes([7])
        assert encode_pnm(rgb_image([[[1, 2, 3]]])) == b"P6\n1 1\n255\n" + bytes([1, 2, 3])

    def test_header_whitespace_variants(self):
        img = decode_pnm(b"P5 2\t1\r\n255 " + bytes([9, 10]))
        assert list(img.data) == [9, 10]

    def test_bad_magic(self):
        with pytest.raises(PnmHeaderError):
            decode_pnm(b"P7\n1 1\n255\n" + bytes([0]))

    def test_magic_must_be_followed_by_whitespace(self):
        with pytest.raises(PnmHeaderError):
            decode_pnm(b"P52 1\n255\n" + bytes([0, 0]))

    def test_non_numeric_header(self):
        with pytest.raises(PnmHeaderError):
            decode_pnm(b"P5\nx 1\n255\n" + bytes([0]))

    def test_unsupported_maxval(self):
        with pytest.raises(PnmMaxvalError):
            decode_pnm(b"P5\n2 1\n65535\n" + bytes([0, 0, 0, 0]))

    def test_truncated_payload(self):
        with pytest.raises(PnmTruncatedError):
            decode_pnm(b"P5\n2 2\n255\n" + bytes([0, 0, 0]))

    def test_trailing_data(self):
        with pytest.raises(PnmTruncatedError):
            decode_pnm(b"P5\n1 1\n255\n" + bytes([0, 0]))

    @settings(max_examples=60)
    @given(images())
    def test_round_trip_byte_exact(self, img):
        encoded = encode_pnm(img)
        assert decode_pnm(encoded) == img
        assert encode_pnm(decode_pnm(encoded)) == encoded


class TestGrayscale:
    def test_white_maps_to_white(self):
        img = to_grayscale(rgb_image([[[255, 255, 255]]]))
        assert img.data[0] == 255

    def test_pure_red_rec601(self):
        # 0.299 * 255 = 76.245, round half away from zero -> 76
        img = to_grayscale(rgb_image([[[255, 0, 0]]]))
        assert img.data[0] == 76

    def test_grayscale_passthrough(self):
        img = gray_image([[1, 2], [3, 4]])
        assert to_grayscale(img) is img

    @settings(max_examples=40)
    @given(images())
    def test_idempotent(self, img):
        once = to_grayscale(img)
        assert to_grayscale(once) == once


class TestCrop:
    def test_full_frame_identity(self):
        img = gray_image(np.arange(12).reshape(3, 4))
        assert crop(img, Rect(0, 0, 4, 3)) == img

    def test_center_crop_six_to_four(self):
        values = np.arange(36, dtype=np.uint8).reshape(6, 6)
        img = gray_image(values)
        rect = center_rect(6, 6, 4, 4)
        assert rect == Rect(1, 1, 4, 4)
        out = crop(img, rect)
        assert np.array_equal(out.pixels[:, :, 0], values[1:5, 1:5])

    def test_out_of_bounds(self):
        img = gray_image(np.zeros((6, 6)))
        with pytest.raises(ValueError):
            crop(img, Rect(5, 5, 4, 4))

    @settings(max_examples=40)
    @given(images(max_side=10), st.data())
    def test_crop_composes(self, img, data):
        aw = data.draw(st.integers(1, img.width))
        ah = data.draw(st.integers(1, img.height))
        ax = data.draw(st.integers(0, img.width - aw))
        ay = data.draw(st.integers(0, img.height - ah))
        bw = data.draw(st.integers(1, aw))
        bh = data.draw(st.integers(1, ah))
        bx = data.draw(st.integers(0, aw - bw))
        by = data.draw(st.integers(0, ah - bh))
        a, b = Rect(ax, ay, aw, ah), Rect(bx, by, bw, bh)
        composed = Rect(ax + bx, ay + by, bw, bh)
        assert crop(crop(img, a), b) == crop(img, composed)


class TestCenterRect:
    def test_exact_fit(self):
        assert center_rect(140, 140, 140, 140) == Rect(0, 0, 140, 140)

    def test_odd_margin_floors(self):
        assert center_rect(141, 141, 140, 140) == Rect(0, 0, 140, 140)

    def test_asymmetric(self):
        assert center_rect(200, 160, 140, 140) == Rect(30, 10, 140, 140)

    def test_target_larger_than_source(self):
        with pytest.raises(ValueError):
            center_rect(100, 100, 140, 140)


class TestResize:
    def test_same_size_identity(self):
        img = gray_image(np.arange(20).reshape(4, 5))
        assert resize_bilinear(img, 5, 4) == img

    def test_two_to_four_hand_computed(self):
        # source coords: -0.25, 0.25, 0.75, 1.25 with edge clamping
        img = gray_image([[0, 255]])
        out = resize_bilinear(img, 4, 1)
        assert list(out.data) == [0, 64, 191, 255]

    @settings(max_examples=30)
    @given(
        st.integers(0, 255),
        st.integers(1, 8),
        st.integers(1, 8),
        st.integers(1, 12),
        st.integers(1, 12),
    )
    def test_constant_stays_constant(self, value, w, h, out_w, out_h):
        img = gray_image(np.full((h, w), value))
        out = resize_bilinear(img, out_w, out_h)
        assert np.all(out.pixels == value)


class TestInputTensor:
    def test_extremes_and_scale(self):
        tensor = to_input_tensor(gray_image([[0, 255, 51]]))
        assert tensor[0, 0, 0] == 0.0
        assert tensor[0, 1, 0] == 1.0
        assert tensor[0, 2, 0] == pytest.approx(0.2)

    def test_shape_is_hw1(self):
        tensor = to_input_tensor(gray_image(np.zeros((140, 140))))
        assert tensor.shape == (140, 140, 1)

    def test_rejects_rgb(self):
        with pytest.raises(ValueError):
            to_input_tensor(rgb_image(np.zeros((2, 2, 3))))

    @settings(max_examples=30)
    @given(images())
    def test_values_in_unit_interval(self, img):
        tensor = to_input_tensor(to_grayscale(img))
        assert np.all(tensor >= 0.0) and np.all(tensor <= 1.0)
