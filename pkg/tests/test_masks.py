import json

import numpy as np
import pytest

from multishot.codec import CodecConfig
from multishot.errors import ValidationError
from multishot.masks import (
    AttentionMask, MultiShotSpec, ShotLayout, build_layout, build_mask, layout_from_token_frames,
    mask_stats, read_pgm, write_layout_json, write_pgm,
)
from oracles import mask_oracle


def spec(durations, size=16):
    return MultiShotSpec([f"shot {i}" for i in range(len(durations))], durations, size, size)


def test_two_shots_of_64_frames():
    lay = build_layout(spec([64, 64]), CodecConfig())
    assert lay.shot_ranges == [(0, 16), (16, 32)]
    assert lay.transition_targets == [16]
    assert len(lay.transition_indices) == 1


def test_single_shot_has_no_transitions():
    lay = build_layout(spec([32]), CodecConfig())
    assert lay.transition_indices == [] and lay.n_shots == 1


def test_three_shot_snapping():
    lay = build_layout(spec([40, 40, 48]), CodecConfig())
    assert lay.shot_ranges == [(0, 10), (10, 20), (20, 32)]
    assert lay.frame_boundaries == [40, 80]


def test_layout_rejects_short_shot_and_caption_mismatch():
    with pytest.raises(ValidationError):
        build_layout(spec([2, 30]), CodecConfig())
    with pytest.raises(ValidationError):
        build_layout(MultiShotSpec(["a"], [16, 16]), CodecConfig())


def test_single_shot_mask_is_full():
    lay = layout_from_token_frames([2], 1, 2)
    assert build_mask(lay).bits.all()


def test_two_shot_reference_mask():
    lay = layout_from_token_frames([2, 2], 1, 2)
    bits = build_mask(lay).bits
    assert bits.shape == (9, 9)
    assert np.flatnonzero(bits[8]).tolist() == [2, 8]
    assert np.flatnonzero(bits[4]).tolist() == [0, 1, 4, 5]
    assert np.flatnonzero(bits[6]).tolist() == [2, 3, 6, 7]
    assert np.flatnonzero(bits[0]).tolist() == [0, 1, 2, 3, 4, 5]
    assert np.flatnonzero(bits[2]).tolist() == [0, 1, 2, 3, 6, 7, 8]
    assert np.array_equal(bits, bits.T)


def test_prev_last_target_mode():
    lay = layout_from_token_frames([2, 2], 1, 1, target_mode="prev_last")
    assert lay.transition_targets == [1]
    assert np.flatnonzero(build_mask(lay).bits[-1]).tolist() == [1, 6]


@pytest.mark.parametrize("seed", range(20))
def test_mask_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, 4, size=rng.integers(1, 9)).tolist()
    tpf, tps = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    lay = layout_from_token_frames(lengths, tpf, tps)
    assert np.array_equal(build_mask(lay).bits, mask_oracle(lengths, tpf, tps))


def test_mask_stats_two_shot_example():
    lay = layout_from_token_frames([2, 2], 1, 2)
    st = mask_stats(build_mask(lay), lay)
    assert st["transition_row_population"] == [2]
    assert st["density"]["text-text-cross"] == 0.0
    assert st["density"]["text-visual-cross"] == 0.0
    assert st["density"]["visual-visual"] == 1.0
    assert st["total_true"] == int(mask_oracle([2, 2], 1, 2).sum())


def test_mask_stats_full_mask():
    lay = layout_from_token_frames([2, 3], 2, 2)
    st = mask_stats(AttentionMask(np.ones((lay.size, lay.size), bool)), lay)
    assert all(v == 1.0 for v in st["density"].values() if v is not None)


def test_layout_validation_catches_bad_targets():
    lay = layout_from_token_frames([2, 2], 1, 1)
    lay.transition_targets = [3]
    with pytest.raises(ValidationError):
        build_mask(lay)


def test_pgm_and_layout_json(tmp_path):
    lay = build_layout(spec([16, 16], 8), CodecConfig())
    mask = build_mask(lay)
    write_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), mask.bits)
    write_layout_json(tmp_path / "l.json", lay)
    back = ShotLayout.from_dict(json.loads((tmp_path / "l.json").read_text()))
    assert back.shot_ranges == lay.shot_ranges and back.size == lay.size
