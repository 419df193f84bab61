import numpy as np
import pytest

from lvseg.core import VideoTensor
from lvseg.superimage import (DivisibilityError, NonSquareFrameCountError,
                              from_super_image, frames_to_grid, grid_to_frames,
                              to_super_image)


def make_clip(f, h=6, w=5, seed=0):
    rng = np.random.default_rng(seed)
    px = rng.random((h, w, f, 3)).astype(np.float32)
    return VideoTensor(px, tuple(range(f)), (False,) * f)


def test_f16_layout_dimensions():
    clip = make_clip(16, h=112, w=112)
    img = to_super_image(clip)
    assert img.shape == (448, 448, 3)


def test_f1_is_identity():
    clip = make_clip(1)
    img = to_super_image(clip)
    assert np.array_equal(img, clip.pixels[:, :, 0, :])


def test_non_square_f_rejected():
    with pytest.raises(NonSquareFrameCountError):
        to_super_image(make_clip(15))


def test_frame_placement_row_major():
    clip = make_clip(4, h=2, w=2)
    img = to_super_image(clip)
    # frame k at grid row k//2, col k%2
    for k in range(4):
        r, c = divmod(k, 2)
        np.testing.assert_array_equal(img[2 * r:2 * r + 2, 2 * c:2 * c + 2],
                                      clip.pixels[:, :, k, :])


@pytest.mark.parametrize("f", [1, 4, 9, 16, 25])
def test_round_trip_identity(f):
    clip = make_clip(f, seed=f)
    back = from_super_image(to_super_image(clip), f,
                            clip.frame_indices, clip.pad_flags)
    assert back.pixels.tobytes() == clip.pixels.tobytes()
    assert back.frame_indices == clip.frame_indices


def test_pixel_multiset_preserved():
    clip = make_clip(9)
    img = to_super_image(clip)
    assert np.array_equal(np.sort(img.ravel()), np.sort(clip.pixels.ravel()))


def test_grid_arithmetic():
    img = np.zeros((448, 448, 3), np.float32)
    frames = grid_to_frames(img, 16)
    assert frames.shape == (112, 112, 16, 3)


def test_divisibility_error():
    with pytest.raises(DivisibilityError):
        grid_to_frames(np.zeros((450, 448, 3), np.float32), 16)


def test_inverse_is_exact_on_raw_arrays():
    rng = np.random.default_rng(0)
    arr = rng.random((7, 3, 25, 3)).astype(np.float32)
    assert np.array_equal(grid_to_frames(frames_to_grid(arr), 25), arr)
