import numpy as np
import pytest

from lvseg.core import RandomSource, VideoTensor
from lvseg.masking import default_ratio, mask_clip, num_masked_frames


def make_clip(f, h=4, w=4, seed=0):
    rng = np.random.default_rng(seed)
    px = rng.random((h, w, f, 3)).astype(np.float32) + 0.1
    return VideoTensor(px, tuple(range(f)), (False,) * f)


def test_default_ratio_is_point_six():
    assert default_ratio() == 0.6


def test_ratio_zero_is_identity():
    clip = make_clip(8)
    masked = mask_clip(clip, 0.0, RandomSource(0))
    assert masked.num_masked == 0
    assert np.array_equal(masked.clip.pixels, clip.pixels)


def test_f32_ratio_point_six_masks_nineteen():
    masked = mask_clip(make_clip(32), 0.6, RandomSource(0))
    assert masked.num_masked == 19
    zero_slots = [k for k in range(32)
                  if not masked.clip.pixels[:, :, k, :].any()]
    assert len(zero_slots) == 19
    assert set(zero_slots) == masked.masked_slots


def test_ratio_one_rejected():
    with pytest.raises(ValueError):
        mask_clip(make_clip(8), 1.0, RandomSource(0))


@pytest.mark.parametrize("ratio", [0.0, 0.25, 0.5, 0.6, 0.75, 0.99])
def test_masked_count_exact_for_all_f(ratio):
    import math
    for f in range(1, 257):
        expected = min(math.floor(ratio * f + 0.5), f - 1)
        assert num_masked_frames(f, ratio) == expected


def test_unmasked_slots_bit_identical():
    clip = make_clip(16, seed=3)
    masked = mask_clip(clip, 0.5, RandomSource(5))
    for k in range(16):
        if k not in masked.masked_slots:
            assert masked.clip.pixels[:, :, k, :].tobytes() == \
                   clip.pixels[:, :, k, :].tobytes()


def test_slot_frequency_uniform():
    rng = RandomSource(123)
    clip = make_clip(10)
    counts = np.zeros(10)
    draws = 10_000
    for _ in range(draws):
        masked = mask_clip(clip, 0.5, rng)
        for s in masked.masked_slots:
            counts[s] += 1
    freq = counts / draws
    assert np.all(np.abs(freq - 0.5) <= 0.02)


def test_provenance_preserved():
    clip = make_clip(8)
    masked = mask_clip(clip, 0.5, RandomSource(1))
    assert masked.clip.frame_indices == clip.frame_indices
    assert masked.clip.pad_flags == clip.pad_flags
