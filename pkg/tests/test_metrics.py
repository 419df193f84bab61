import csv
import json
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from torch import nn

from lvseg import io as lvio
from lvseg.core import ClipSpec, RandomSource, VideoTensor
from lvseg.ingest import AnnotatedFrame, DatasetIndex, IndexEntry
from lvseg.metrics import (DiceReport, VideoScore, bootstrap_ci, dsc,
                           evaluate_split)


# ---------------------------------------------------------------------------
# dice similarity

def test_dsc_identical_is_one():
    m = np.zeros((8, 8), np.uint8)
    m[2:6, 2:6] = 1
    assert dsc(m, m) == 1.0


def test_dsc_disjoint_is_zero():
    a = np.zeros((8, 8), np.uint8)
    b = np.zeros((8, 8), np.uint8)
    a[:4] = 1
    b[4:] = 1
    assert dsc(a, b) == 0.0


def test_dsc_hand_value():
    # |a| = 4, |b| = 2, overlap 2 -> 2*2 / 6
    a = np.array([[1, 1, 1, 1, 0, 0]], np.uint8)
    b = np.array([[1, 1, 0, 0, 0, 0]], np.uint8)
    assert dsc(a, b) == pytest.approx(2 / 3)


def test_dsc_both_empty_is_one():
    z = np.zeros((4, 4), np.uint8)
    assert dsc(z, z) == 1.0


def test_dsc_one_empty_is_zero():
    a = np.zeros((4, 4), np.uint8)
    b = np.ones((4, 4), np.uint8)
    assert dsc(a, b) == 0.0


def test_dsc_symmetric():
    rng = np.random.default_rng(0)
    a = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    b = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    assert dsc(a, b) == dsc(b, a)


def test_dsc_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        dsc(np.zeros((4, 4)), np.zeros((4, 5)))


# ---------------------------------------------------------------------------
# bootstrap confidence intervals

def test_bootstrap_constant_sample_zero_width():
    lo, hi = bootstrap_ci([0.7] * 30)
    assert lo == hi == pytest.approx(0.7)


def test_bootstrap_brackets_the_mean():
    rng = np.random.default_rng(1)
    vals = rng.normal(0.8, 0.1, size=60)
    lo, hi = bootstrap_ci(vals, rng=RandomSource(5))
    assert lo <= vals.mean() <= hi
    assert lo < hi


def test_bootstrap_levels_nest():
    vals = np.random.default_rng(2).normal(0.5, 0.2, size=40)
    lo95, hi95 = bootstrap_ci(vals, level=0.95, rng=RandomSource(0))
    lo90, hi90 = bootstrap_ci(vals, level=0.90, rng=RandomSource(0))
    assert lo95 <= lo90 and hi90 <= hi95


def test_bootstrap_width_shrinks_like_root_n():
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(20):
        small = rng.normal(0.0, 1.0, size=50)
        large = rng.normal(0.0, 1.0, size=200)
        lo_s, hi_s = bootstrap_ci(small, resamples=2000, rng=RandomSource(1))
        lo_l, hi_l = bootstrap_ci(large, resamples=2000, rng=RandomSource(2))
        ratios.append((hi_l - lo_l) / (hi_s - lo_s))
    assert np.mean(ratios) == pytest.approx(0.5, abs=0.1)


def test_bootstrap_deterministic_for_fixed_rng():
    vals = [0.1, 0.4, 0.9, 0.3]
    assert bootstrap_ci(vals, rng=RandomSource(7)) == bootstrap_ci(
        vals, rng=RandomSource(7))


def test_bootstrap_empty_sample_rejected():
    with pytest.raises(ValueError):
        bootstrap_ci([])


# ---------------------------------------------------------------------------
# report object

def make_report():
    scores = [VideoScore("v0", "ED", 0, 0.9), VideoScore("v0", "ES", 10, 0.8),
              VideoScore("v1", "ED", 3, 1.0)]
    return DiceReport(per_video=scores,
                      aggregates={"overall": {"mean": 0.9, "ci_lo": 0.8,
                                              "ci_hi": 1.0, "n": 3}})


def test_report_group_filtering():
    r = make_report()
    assert r.scores("overall") == [0.9, 0.8, 1.0]
    assert r.scores("ED") == [0.9, 1.0]
    assert r.scores("ES") == [0.8]
    assert r.scores("middle") == []


def test_report_csv_round_trip(tmp_path):
    r = make_report()
    path = tmp_path / "report.csv"
    r.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["video_id", "phase", "frame_index", "dsc"]
    assert rows[1] == ["v0", "ED", "0", "0.900000"]
    assert ["overall", "0.900000", "0.800000", "1.000000", "3"] in rows


def test_report_json_round_trip(tmp_path):
    r = make_report()
    path = tmp_path / "report.json"
    r.write_json(path)
    payload = json.loads(path.read_text())
    assert len(payload["per_video"]) == 3
    assert payload["aggregates"]["overall"]["n"] == 3


# ---------------------------------------------------------------------------
# split evaluation against a mask-decoding oracle

class MaskDecoder(nn.Module):
    """Reads the mask straight out of the pixels: logits +/- 10."""

    def forward(self, x):  # (B, C, F, H, W)
        return x.mean(dim=1, keepdim=True) * 20.0 - 10.0


class AlwaysEmpty(nn.Module):
    def forward(self, x):
        return torch.full_like(x.mean(dim=1, keepdim=True), -10.0)


def oracle_dataset(tmp_path, n_videos=3, h=16, w=16, length=12):
    """Videos whose pixel values equal their ground-truth masks."""
    rng = np.random.default_rng(0)
    entries = []
    for k in range(n_videos):
        masks = np.zeros((length, h, w), np.uint8)
        for t in range(length):
            r = 3 + (t + k) % 4
            masks[t, 4:4 + r, 4:4 + r] = 1
        pixels = np.repeat(masks.transpose(1, 2, 0)[:, :, :, None],
                           3, axis=3).astype(np.float32)
        path = tmp_path / f"vid{k}.lvt"
        lvio.save_video_tensor(
            path, VideoTensor(pixels, tuple(range(length)), (False,) * length))
        ed, es = int(rng.integers(0, length)), int(rng.integers(0, length))
        frames = [AnnotatedFrame(ed, masks[ed], "ED"),
                  AnnotatedFrame(es if es != ed else (ed + 1) % length,
                                 masks[es if es != ed else (ed + 1) % length],
                                 "ES")]
        entries.append(IndexEntry(f"vid{k}", path, "test", tuple(frames),
                                  length))
    return DatasetIndex(entries=entries, root=tmp_path,
                        stats={"mean": [0, 0, 0], "std": [1, 1, 1]},
                        dense=False)


def test_oracle_model_scores_perfect_dice(tmp_path):
    index = oracle_dataset(tmp_path)
    model = SimpleNamespace(net=MaskDecoder())
    report = evaluate_split(model, index, ClipSpec(4, 1), split="test",
                            resamples=500)
    assert all(s.dsc == 1.0 for s in report.per_video)
    for group in ("overall", "ED", "ES"):
        agg = report.aggregates[group]
        assert agg["mean"] == 1.0
        assert agg["ci_lo"] == agg["ci_hi"] == 1.0
    assert report.aggregates["overall"]["n"] == 6


def test_empty_prediction_scores_zero(tmp_path):
    index = oracle_dataset(tmp_path)
    model = SimpleNamespace(net=AlwaysEmpty())
    report = evaluate_split(model, index, ClipSpec(4, 1), split="test",
                            resamples=500)
    assert all(s.dsc == 0.0 for s in report.per_video)
    assert report.aggregates["overall"]["mean"] == 0.0


def test_empty_split_rejected(tmp_path):
    index = oracle_dataset(tmp_path)
    model = SimpleNamespace(net=MaskDecoder())
    with pytest.raises(ValueError):
        evaluate_split(model, index, ClipSpec(4, 1), split="val")
