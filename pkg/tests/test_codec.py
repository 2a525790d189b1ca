import numpy as np
import pytest

from multishot.codec import (
    CodecConfig, LatentVideo, VideoClip, decode, encode, export_png_dir, frame_to_latent_token_frame,
    import_png_dir, mixing_matrix, patchify, read_video, snap_boundaries, unpatchify, write_video,
)
from multishot.errors import RangeError, ShapeError, ValidationError


def rand_clip(shape, seed=0):
    return VideoClip(np.random.default_rng(seed).random(shape))


def test_latent_shape_from_compression_factors():
    lat = encode(rand_clip((16, 3, 8, 8)), CodecConfig(f_t=4, f_s=2))
    assert lat.shape == (4, 3 * 4 * 2 * 2, 4, 4)


def test_unit_factors_and_identity_mixing_is_identity():
    clip = rand_clip((5, 3, 6, 6))
    lat = encode(clip, CodecConfig(f_t=1, f_s=1, mixing_seed=None))
    assert np.array_equal(lat.latents, clip.frames)


def test_mixing_matrix_orthonormal():
    m = mixing_matrix(CodecConfig())
    assert np.allclose(m @ m.T, np.eye(len(m)), atol=1e-12)


def test_space_to_depth_places_pixels_without_mixing():
    # oracle: pixel (f, c, y, x) lands in latent channel ((f%ft)*C + c)*fs*fs + (y%fs)*fs + x%fs
    cfg = CodecConfig(f_t=2, f_s=2, mixing_seed=None)
    x = rand_clip((4, 3, 4, 4), 5).frames
    z = encode(VideoClip(x), cfg).latents
    for f in range(4):
        for c in range(3):
            for y in range(4):
                for xx in range(4):
                    ch = ((f % 2) * 3 + c) * 4 + (y % 2) * 2 + xx % 2
                    assert z[f // 2, ch, y // 2, xx // 2] == x[f, c, y, xx]


@pytest.mark.parametrize("seed", range(5))
def test_roundtrip_random_clips(seed):
    cfg = CodecConfig()
    clip = rand_clip((8, 3, 8, 12), seed)
    back = decode(encode(clip, cfg), cfg)
    assert np.max(np.abs(back.frames - clip.frames)) < 1e-5


def test_encode_of_decode_on_random_latents():
    cfg = CodecConfig()
    z = np.random.default_rng(1).standard_normal((3, cfg.latent_channels, 4, 4))
    again = encode(decode(LatentVideo(z), cfg), cfg).latents
    assert np.max(np.abs(again - z)) < 1e-5


def test_decode_zero_latent_is_zero_clip():
    cfg = CodecConfig()
    out = decode(np.zeros((2, cfg.latent_channels, 2, 2)), cfg)
    assert out.shape == (8, 3, 4, 4) and not out.frames.any()


def test_decode_wrong_channels():
    with pytest.raises(ShapeError):
        decode(np.zeros((2, 5, 2, 2)), CodecConfig())


def test_encode_rejects_indivisible():
    with pytest.raises(ShapeError):
        encode(rand_clip((6, 3, 8, 8)), CodecConfig())


@pytest.mark.parametrize("patch,count", [(1, 64), (2, 16)])
def test_patchify_token_counts(patch, count):
    cfg = CodecConfig(f_p_h=patch, f_p_w=patch)
    z = np.zeros((4, cfg.latent_channels, 4, 4))
    assert patchify(z, cfg).shape == (count, cfg.patch_dim)


def test_patchify_roundtrip_and_order():
    cfg = CodecConfig(f_p_f=2, f_p_h=2, f_p_w=1)
    z = np.random.default_rng(2).standard_normal((4, cfg.latent_channels, 4, 6))
    tok = patchify(z, cfg)
    assert np.array_equal(unpatchify(tok, (2, 2, 6), cfg).latents, z)
    # first token is the top-left patch of the first token-frame
    assert np.array_equal(tok[0], z[0:2, :, 0:2, 0:1].reshape(-1))


def test_patchify_projection():
    cfg = CodecConfig()
    z = np.random.default_rng(0).standard_normal((1, cfg.latent_channels, 2, 2))
    proj = np.random.default_rng(1).standard_normal((cfg.patch_dim, 5))
    assert np.allclose(patchify(z, cfg, proj), patchify(z, cfg) @ proj)


def test_frame_to_token_frame():
    cfg = CodecConfig()
    assert frame_to_latent_token_frame(0, cfg) == 0
    assert frame_to_latent_token_frame(7, cfg) == 1
    assert frame_to_latent_token_frame(64, cfg, n_frames=128) == 16
    with pytest.raises(RangeError):
        frame_to_latent_token_frame(128, cfg, n_frames=128)


def test_snap_boundaries_nearest_half_up():
    cfg = CodecConfig()
    assert snap_boundaries([40, 40, 48], cfg) == [40, 80]
    assert snap_boundaries([42, 42], cfg) == [44]
    assert snap_boundaries([41, 43], cfg) == [40]
    with pytest.raises(ValidationError):
        snap_boundaries([1, 1, 2], cfg)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_video_file_roundtrip(tmp_path, dtype):
    clip = VideoClip(rand_clip((3, 3, 4, 5)).frames.astype(dtype))
    write_video(tmp_path / "v.msvv", clip)
    back = read_video(tmp_path / "v.msvv")
    assert back.frames.dtype == dtype and np.array_equal(back.frames, clip.frames)
    raw = (tmp_path / "v.msvv").read_bytes()
    assert raw[:4] == b"MSVV"


def test_video_file_truncated(tmp_path):
    write_video(tmp_path / "v.msvv", rand_clip((2, 3, 4, 4)))
    data = (tmp_path / "v.msvv").read_bytes()
    (tmp_path / "v.msvv").write_bytes(data[:-8])
    with pytest.raises(ValidationError, match="truncated"):
        read_video(tmp_path / "v.msvv")


def test_png_directory_roundtrip(tmp_path):
    clip = VideoClip(np.round(rand_clip((3, 3, 4, 4)).frames * 255) / 255, frame_rate=12.0)
    export_png_dir(clip, tmp_path / "png")
    back = import_png_dir(tmp_path / "png")
    assert back.frame_rate == 12.0
    assert np.max(np.abs(back.frames - clip.frames)) < 1e-6
