import itertools
import sys

import numpy as np
import pytest

from multishot.codec import CodecConfig
from multishot.dataset import (
    DAY, CurateConfig, ExternalCommandCaptioner, MotionProgram, MultiShotSample, Segment, SourceVideo,
    SynthParams, SyntheticCaptioner, VideoCluster, caption_for_scene, caption_shots, caption_similarity,
    cluster_videos, curate, filter_method1_candidates, identity_filter, load_corpus, make_multishot_from_cluster,
    make_multishot_from_single, make_scene, read_manifest, sample_to_example, save_corpus, source_motion,
    synth_generate, write_manifest,
)
from multishot.errors import ValidationError
from multishot.evaluation import ToyDetector, ToyEmbedder
from multishot.motion import passes_motion_filter


def video(vid, identity="red-circle", bg="teal", motion=None, n_frames=300, uploader="u0", t=0.0, seed=0,
          extra=None, caption=None):
    rng = np.random.default_rng(seed)
    scene = make_scene(rng, identity, bg, motion or MotionProgram(), n_frames, SynthParams(), extra)
    return SourceVideo(vid, uploader, t, caption or caption_for_scene(scene), identity, scene)


def test_synth_generate_is_deterministic():
    a = synth_generate(6, seed=3)
    b = synth_generate(6, seed=3)
    assert [v.to_dict() for v in a] == [v.to_dict() for v in b]
    assert np.array_equal(a[0].frames(0, 3), b[0].frames(0, 3))


def test_same_identity_embeds_alike():
    det, emb = ToyDetector(), ToyEmbedder()
    a = video("a", seed=1, bg="teal").frames(indices=[10])[0]
    b = video("b", seed=2, bg="plum").frames(indices=[40])[0]
    ea, eb = emb(a, det(a)[0].mask), emb(b, det(b)[0].mask)
    assert float(ea @ eb) > 0.9


def test_static_and_fast_pan_programs():
    still = source_motion(video("s", motion=MotionProgram()), max_pairs=3)
    pan = source_motion(video("p", motion=MotionProgram(tx=12.0)), max_pairs=3)
    assert not passes_motion_filter(still)
    assert passes_motion_filter(pan)


def test_method1_candidate_filter():
    vids = [video("short", motion=MotionProgram(tx=12.0), n_frames=249),
            video("still", n_frames=300),
            video("pan", motion=MotionProgram(tx=12.0), n_frames=300)]
    kept, stats = filter_method1_candidates(vids, max_pairs=3, return_stats=True)
    assert [v.video_id for v in kept] == ["pan"]
    assert stats["dropped_short"] == 1 and stats["dropped_low_motion"] == 1
    assert stats["input"] == stats["kept"] + stats["dropped_short"] + stats["dropped_low_motion"]


def test_method1_sample_bounds_and_determinism():
    v = video("v", motion=MotionProgram(tx=12.0), n_frames=300)
    s = make_multishot_from_single(v, 2, seed=5, duration_bounds=(32, 64))
    assert 64 <= s.n_frames <= 128 and len(s.boundaries) == 1
    assert all(d % 4 == 0 for d in s.durations)
    again = make_multishot_from_single(v, 2, seed=5, duration_bounds=(32, 64))
    assert again.to_record() == s.to_record()
    # the segments are disjoint in the source
    spans = sorted((g.start, g.start + g.length) for g in s.segments)
    assert spans[0][1] <= spans[1][0]


def test_method1_all_orders_occur():
    v = video("v", n_frames=300)
    orders = {tuple(make_multishot_from_single(v, 3, seed=k, duration_bounds=(32, 64)).provenance["order"])
              for k in range(200)}
    assert orders == set(itertools.permutations(range(3)))


def test_method1_rejects_short_source():
    with pytest.raises(ValidationError):
        make_multishot_from_single(video("v", n_frames=60), 3, seed=0, duration_bounds=(32, 64))


def test_clustering_rules():
    same = "a red circle with a still camera on a teal background"
    vids = [video("a", t=0.0, caption=same), video("b", t=1 * DAY, caption=same),
            video("c", t=10 * DAY, caption=same), video("d", uploader="u1", t=0.5 * DAY, caption=same)]
    clusters = cluster_videos(vids, 3 * DAY, 0.5)
    members = sorted(sorted(c.members) for c in clusters)
    assert members == [["a", "b"], ["c"], ["d"]]


def test_caption_similarity():
    assert caption_similarity("a b c", "a b c") == pytest.approx(1.0)
    assert caption_similarity("a b", "c d") == 0.0


def test_method2_uses_distinct_members():
    vids = {f"v{i}": video(f"v{i}", seed=i, bg=bg) for i, bg in enumerate(["teal", "plum"] * 3)}
    pair = VideoCluster("c0", ["v0", "v1"])
    s = make_multishot_from_cluster(pair, vids, 2, seed=1, duration_bounds=(32, 64))
    assert sorted(s.provenance["source_ids"]) == ["v0", "v1"]
    six = VideoCluster("c1", list(vids))
    s3 = make_multishot_from_cluster(six, vids, 3, seed=2, duration_bounds=(32, 64))
    assert len(set(s3.provenance["source_ids"])) == 3
    assert make_multishot_from_cluster(six, vids, 3, seed=2, duration_bounds=(32, 64)).to_record() == s3.to_record()


def test_synthetic_captions_echo_parameters():
    v = video("v", identity="red-circle", motion=MotionProgram(tx=12.0))
    s = make_multishot_from_single(v, 2, seed=0, duration_bounds=(32, 64))
    caption_shots(s, SyntheticCaptioner(), {"v": v})
    assert len(s.captions) == s.n_shots
    assert all("red circle" in c and "panning" in c and "teal" in c for c in s.captions)
    assert s.filter_flags["caption_failures"] == []


def test_external_captioner_empty_output_is_flagged():
    v = video("v")
    s = make_multishot_from_single(v, 2, seed=0, duration_bounds=(32, 64))
    cap = ExternalCommandCaptioner([sys.executable, "-c", "print('')"])
    caption_shots(s, cap, {"v": v})
    assert s.captions == ["", ""]
    assert len(s.filter_flags["caption_failures"]) == 2


def test_external_captioner_success():
    v = video("v")
    s = make_multishot_from_single(v, 2, seed=0, duration_bounds=(32, 64))
    cap = ExternalCommandCaptioner([sys.executable, "-c", "import sys; print('shot of', sys.argv[1][-8:])"])
    caption_shots(s, cap, {"v": v})
    assert all(c.startswith("shot of") for c in s.captions)


def _cluster_sample(ids, vids):
    return make_multishot_from_cluster(VideoCluster("c", ids), vids, len(ids), seed=0, duration_bounds=(32, 64))


def test_identity_filter_decisions():
    vids = {"a": video("a", "red-circle", "teal", seed=1), "b": video("b", "red-circle", "plum", seed=2),
            "c": video("c", "blue-square", "teal", seed=3),
            "d": video("d", "red-circle", "teal", seed=4, extra="green-diamond")}
    keep = identity_filter(_cluster_sample(["a", "b"], vids), vids)
    assert keep.keep and keep.min_similarity > 0.75
    mixed = identity_filter(_cluster_sample(["a", "c"], vids), vids)
    assert not mixed.keep and mixed.reason.startswith("identity_mismatch")
    two = identity_filter(_cluster_sample(["a", "d"], vids), vids)
    assert not two.keep and two.reason.startswith("character_count")


def test_curate_small_corpus_conserves_counts(tmp_path):
    vids = synth_generate(24, seed=1)
    res = curate(vids, seed=0, config=CurateConfig(n_samples=24, motion_pairs=2))
    st = res.stats
    assert st["construction"]["built"] + st["construction"]["failed"] == 24
    assert st["identity_filter"]["kept"] + st["identity_filter"]["dropped"] == st["construction"]["built"]
    assert len(res.kept) == st["identity_filter"]["kept"]
    by_id = {v.video_id: v for v in vids}
    for s in res.kept:
        assert len({by_id[g.source_id].identity_label for g in s.segments}) == 1
        assert all(d % 4 == 0 for d in s.durations)
    write_manifest(tmp_path, res, vids, size=8, config_hash="abc")
    back = read_manifest(tmp_path)
    assert len(back) == len(res.kept)
    assert all(r["config_hash"] == "abc" for r in back.records)
    ex = sample_to_example(res.kept[0], by_id, CodecConfig(f_p_h=1, f_p_w=1))
    assert ex.layout.frame_boundaries == res.kept[0].boundaries


def test_method2_share_controls_mix():
    vids = synth_generate(30, seed=2)
    res = curate(vids, seed=0, config=CurateConfig(n_samples=30, method2_share=1.0, motion_pairs=2))
    assert "method1_candidates" in res.stats
    assert all(s.provenance["method"] == 2 for s in res.kept)
    with pytest.raises(ValidationError):
        curate(vids, config=CurateConfig(method2_share=1.5))


def test_corpus_roundtrip(tmp_path):
    vids = synth_generate(3, seed=0)
    save_corpus(vids, tmp_path, materialize=True)
    first = (tmp_path / "index.json").read_bytes()
    back = load_corpus(tmp_path)
    assert [v.video_id for v in back] == [v.video_id for v in vids]
    assert np.array_equal(back[0].frames(0, 2), vids[0].frames(0, 2))
    save_corpus(vids, tmp_path, materialize=True)
    assert (tmp_path / "index.json").read_bytes() == first


def test_source_video_requires_caption():
    with pytest.raises(ValidationError):
        video("v", caption="  ")


def test_sample_rejects_caption_count_mismatch():
    with pytest.raises(ValidationError):
        MultiShotSample("s", [Segment("v", 0, 8), Segment("v", 8, 8)], captions=["one"])
