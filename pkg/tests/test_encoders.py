import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from d2e.encoders import (
    decode_ttfs,
    encode_direct,
    encode_dvs_sim,
    encode_ttfs,
    get_encoder,
    translate,
    triangle_path,
    ttfs_alphabet_size,
    ttfs_spike_time,
)

images = arrays(np.float64, (2, 1, 4, 4), elements=st.floats(0.0, 1.0))
steps = st.integers(2, 12)


def test_direct_single_copy(rng):
    img = rng.uniform(size=(1, 3, 3))
    out = encode_direct(img, 1)
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_array_equal(out[0], img)


def test_direct_constant_image():
    out = encode_direct(np.full((1, 2, 2), 0.5), 8)
    assert out.shape == (8, 1, 2, 2)
    assert (out == 0.5).all()


@given(images, steps)
def test_direct_slices_bitwise_equal(img, T):
    out = encode_direct(img, T)
    for t in range(T):
        assert np.array_equal(out[t], out[0])


def test_direct_rejects_bad_input():
    with pytest.raises(ValueError):
        encode_direct(np.zeros((1, 2, 2)), 0)
    with pytest.raises(ValueError):
        encode_direct(np.full((1, 2, 2), 1.5), 2)


def test_ttfs_examples():
    assert ttfs_spike_time(1.0, 8) == 0
    assert ttfs_spike_time(0.5, 8) == 4
    assert encode_ttfs(np.array([0.0]), 8).sum() == 0
    out = encode_ttfs(np.array([1.0, 0.5]), 8)
    assert out[:, 0].tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    assert out[:, 1].tolist() == [0, 0, 0, 0, 1, 0, 0, 0]


def test_ttfs_single_step():
    # T = 1: every nonzero pixel fires at t = 0
    np.testing.assert_array_equal(encode_ttfs(np.array([0.0, 0.01, 1.0]), 1), [[0.0, 1.0, 1.0]])


@given(images, steps)
def test_ttfs_binary_and_at_most_one_spike(img, T):
    out = encode_ttfs(img, T)
    assert set(np.unique(out)) <= {0.0, 1.0}
    counts = out.sum(axis=0)
    np.testing.assert_array_equal(counts, (img > 0).astype(float))


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0), steps)
def test_ttfs_brighter_never_later(a, b, T):
    hi, lo = max(a, b), min(a, b)
    assert ttfs_spike_time(hi, T) <= ttfs_spike_time(lo, T)


@given(images, steps)
def test_ttfs_round_trip_within_quantization(img, T):
    decoded = decode_ttfs(encode_ttfs(img, T))
    mask = img > 0
    err = np.abs(decoded - img)[mask]
    assert (err <= 1.0 / (2 * (T - 1)) + 1e-12).all()
    assert (decoded[~mask] == 0).all()


def test_alphabet_size():
    assert ttfs_alphabet_size(8) == 9
    assert ttfs_alphabet_size(1) == 2


@pytest.mark.parametrize("T", [1, 2, 3, 8])
def test_alphabet_matches_enumeration(T):
    grid = np.arange(256) / 255.0
    out = encode_ttfs(grid, T)
    codewords = {out[:, i].tobytes() for i in range(grid.size)}
    assert len(codewords) <= ttfs_alphabet_size(T)
    assert len(codewords) == ttfs_alphabet_size(T)


def test_triangle_path_closed():
    path = triangle_path(8, 2.0)
    assert path.shape == (9, 2)
    np.testing.assert_allclose(path[0], path[-1])
    assert np.abs(path).max() <= 2.0


def test_translate_integer_shift():
    img = np.arange(9, dtype=float).reshape(3, 3)
    np.testing.assert_array_equal(translate(img, 1, 0), [[0, 0, 1], [3, 3, 4], [6, 6, 7]])


def test_dvs_zero_motion_is_silent(rng):
    out = encode_dvs_sim(rng.uniform(size=(1, 5, 5)), 4, motion="static")
    assert out.shape == (4, 2, 5, 5)
    assert out.sum() == 0


@given(st.floats(0.0, 1.0), st.integers(1, 6))
def test_dvs_uniform_image_is_silent(level, T):
    assert encode_dvs_sim(np.full((1, 6, 6), level), T).sum() == 0


def test_dvs_moving_pixel_hand_trace():
    img = np.zeros((1, 3, 3))
    img[0, 1, 1] = 1.0
    out = encode_dvs_sim(img, 1, motion=[(0.0, 0.0), (1.0, 0.0)])
    on, off = out[0, 0], out[0, 1]
    expected_on = np.zeros((3, 3))
    expected_on[1, 2] = 1
    expected_off = np.zeros((3, 3))
    expected_off[1, 1] = 1
    np.testing.assert_array_equal(on, expected_on)
    np.testing.assert_array_equal(off, expected_off)


@given(images, st.integers(1, 6), st.floats(0.05, 1.0))
def test_dvs_binary_and_polarities_exclusive(img, T, threshold):
    out = encode_dvs_sim(img, T, threshold=threshold)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert (out[:, :, 0] + out[:, :, 1] <= 1).all()
    merged = encode_dvs_sim(img, T, threshold=threshold, merge_polarity=True)
    np.testing.assert_array_equal(merged[:, :, 0], out[:, :, 0] + out[:, :, 1])


def test_dvs_errors():
    with pytest.raises(ValueError):
        encode_dvs_sim(np.zeros((1, 3, 3)), 2, threshold=0.0)
    with pytest.raises(ValueError):
        encode_dvs_sim(np.zeros((1, 3, 3)), 2, motion=[(0, 0), (1, 0)])
    with pytest.raises(ValueError):
        encode_dvs_sim(np.zeros((1, 3, 3)), 2, motion="zigzag")


def test_get_encoder():
    assert get_encoder("direct") is encode_direct
    assert get_encoder("ttfs") is encode_ttfs
    assert get_encoder("dvs")(np.zeros((1, 1, 4, 4)), 3).shape == (3, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        get_encoder("poisson")
