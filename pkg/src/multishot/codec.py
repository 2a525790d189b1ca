"""Invertible space-to-depth video codec, patchifier and frame/token arithmetic.

The codec stands in for a learned 3D autoencoder.  A clip ``[F, C, H, W]``
is folded into latents ``[F/f_t, C*f_t*f_s*f_s, H/f_s, W/f_s]`` and the
channel axis is rotated by a fixed, seeded orthonormal matrix, so
``decode(encode(x)) == x`` up to float roundoff.
"""
import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import RangeError, ShapeError, ValidationError


@dataclass(frozen=True)
class CodecConfig:
    f_t: int = 4
    f_s: int = 2
    f_p_f: int = 1
    f_p_h: int = 2
    f_p_w: int = 2
    channels: int = 3
    model_dim: int = 128
    mixing_seed: int | None = 1234

    def __post_init__(self):
        for name in ("f_t", "f_s", "f_p_f", "f_p_h", "f_p_w", "channels", "model_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"codec factor {name} must be >= 1")

    @property
    def latent_channels(self):
        return self.channels * self.f_t * self.f_s * self.f_s

    @property
    def frames_per_token_frame(self):
        return self.f_t * self.f_p_f

    @property
    def patch_dim(self):
        return self.latent_channels * self.f_p_f * self.f_p_h * self.f_p_w

    def token_grid(self, frames, height, width):
        """``(token_frames, rows, cols)`` for a pixel-space clip size."""
        check_divisible(frames, height, width, self)
        return (frames // self.frames_per_token_frame,
                height // (self.f_s * self.f_p_h),
                width // (self.f_s * self.f_p_w))

    def to_dict(self):
        return asdict(self)


@dataclass
class VideoClip:
    frames: np.ndarray  # [F, C, H, W], nominally in [0, 1]
    frame_rate: float = 24.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ShapeError(f"clip frames must be [F>=1, C, H, W], got {self.frames.shape}")

    @property
    def shape(self):
        return self.frames.shape

    @property
    def n_frames(self):
        return self.frames.shape[0]

    def exported(self):
        """Copy clamped to [0, 1] for writing."""
        return VideoClip(np.clip(self.frames, 0.0, 1.0), self.frame_rate)


@dataclass
class LatentVideo:
    latents: np.ndarray  # [F', C', H', W']

    @property
    def shape(self):
        return self.latents.shape


_MIXING_CACHE = {}


def mixing_matrix(cfg):
    """Orthonormal ``[C', C']`` channel rotation; identity when unseeded."""
    n = cfg.latent_channels
    if cfg.mixing_seed is None:
        return np.eye(n)
    key = (n, cfg.mixing_seed)
    if key not in _MIXING_CACHE:
        rng = np.random.default_rng(cfg.mixing_seed)
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        q *= np.sign(np.diag(r))[None, :]
        _MIXING_CACHE[key] = q
    return _MIXING_CACHE[key]


def check_divisible(frames, height, width, cfg):
    if frames % cfg.f_t or height % cfg.f_s or width % cfg.f_s:
        raise ShapeError(
            f"clip {frames}x{height}x{width} not divisible by f_t={cfg.f_t}, f_s={cfg.f_s}")


def encode(clip, cfg):
    x = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    F, C, H, W = x.shape
    if C != cfg.channels:
        raise ShapeError(f"clip has {C} channels, codec expects {cfg.channels}")
    check_divisible(F, H, W, cfg)
    ft, fs = cfg.f_t, cfg.f_s
    z = x.reshape(F // ft, ft, C, H // fs, fs, W // fs, fs)
    # -> [F', ft, C, fs, fs, H', W'] then fold into channels
    z = z.transpose(0, 1, 2, 4, 6, 3, 5).reshape(F // ft, cfg.latent_channels, H // fs, W // fs)
    m = mixing_matrix(cfg).astype(z.dtype, copy=False)
    z = np.einsum("oc,fchw->fohw", m, z, optimize=True)
    return LatentVideo(z)


def decode(lat, cfg, frame_rate=24.0):
    z = lat.latents if isinstance(lat, LatentVideo) else np.asarray(lat)
    if z.ndim != 4:
        raise ShapeError(f"latents must be rank 4, got {z.shape}")
    Fp, Cp, Hp, Wp = z.shape
    if Cp != cfg.latent_channels:
        raise ShapeError(f"latent has {Cp} channels, codec expects {cfg.latent_channels}")
    ft, fs, C = cfg.f_t, cfg.f_s, cfg.channels
    m = mixing_matrix(cfg).astype(z.dtype, copy=False)
    x = np.einsum("co,fchw->fohw", m, z, optimize=True)
    x = x.reshape(Fp, ft, C, fs, fs, Hp, Wp).transpose(0, 1, 2, 5, 3, 6, 4)
    return VideoClip(x.reshape(Fp * ft, C, Hp * fs, Wp * fs), frame_rate)


def patchify(lat, cfg, projection=None):
    """Flatten latent patches into visual tokens, frame-major then row-major.

    Returns ``[N, patch_dim]``, or ``[N, D]`` when a ``[patch_dim, D]``
    projection is given.
    """
    z = lat.latents if isinstance(lat, LatentVideo) else np.asarray(lat)
    Fp, Cp, Hp, Wp = z.shape
    pf, ph, pw = cfg.f_p_f, cfg.f_p_h, cfg.f_p_w
    if Fp % pf or Hp % ph or Wp % pw:
        raise ShapeError(f"latent {z.shape} not divisible by patch ({pf},{ph},{pw})")
    t = z.reshape(Fp // pf, pf, Cp, Hp // ph, ph, Wp // pw, pw)
    t = t.transpose(0, 3, 5, 1, 2, 4, 6).reshape(-1, pf * Cp * ph * pw)
    if projection is not None:
        t = t @ projection
    return t


def unpatchify(tokens, grid, cfg):
    """Inverse of ``patchify`` for a ``(token_frames, rows, cols)`` grid."""
    nf, nh, nw = grid
    pf, ph, pw = cfg.f_p_f, cfg.f_p_h, cfg.f_p_w
    Cp = cfg.latent_channels
    tokens = np.asarray(tokens)
    if tokens.shape != (nf * nh * nw, pf * Cp * ph * pw):
        raise ShapeError(f"tokens {tokens.shape} do not match grid {grid}")
    t = tokens.reshape(nf, nh, nw, pf, Cp, ph, pw).transpose(0, 3, 4, 1, 5, 2, 6)
    return LatentVideo(t.reshape(nf * pf, Cp, nh * ph, nw * pw))


def frame_to_latent_token_frame(frame_index, cfg, n_frames=None):
    """Token-frame holding pixel frame ``frame_index`` (floor rule)."""
    if frame_index < 0 or (n_frames is not None and frame_index >= n_frames):
        raise RangeError(f"frame index {frame_index} outside [0, {n_frames})")
    return int(frame_index) // cfg.frames_per_token_frame


def snap_boundaries(durations, cfg):
    """Snap cumulative shot boundaries to the nearest token-frame multiple.

    Returns the interior boundary frames (length ``len(durations) - 1``);
    halves round up.  Raises when a snapped shot would be empty.
    """
    q = cfg.frames_per_token_frame
    total = int(sum(durations))
    if total % q:
        raise ValidationError(f"total frames {total} not divisible by {q}")
    cuts = np.cumsum(durations)[:-1]
    snapped = [int(q * np.floor(c / q + 0.5)) for c in cuts]
    edges = [0, *snapped, total]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValidationError(f"durations {list(durations)} collapse a shot after snapping to {q}")
    return snapped


# ---------------------------------------------------------------- file formats

VIDEO_MAGIC = b"MSVV"


def write_video(path, clip):
    """MSVV: magic, u32 F/C/H/W, u8 precision flag (0 f32, 1 f64), raw LE frames."""
    frames = np.asarray(clip.frames)
    flag = 1 if frames.dtype == np.float64 else 0
    dtype = "<f8" if flag else "<f4"
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        fh.write(struct.pack("<4IB", *frames.shape, flag))
        fh.write(np.ascontiguousarray(frames, dtype=dtype).tobytes())


def read_video(path, frame_rate=24.0):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != VIDEO_MAGIC:
            raise ValidationError(f"{path}: bad video magic {magic!r}")
        F, C, H, W, flag = struct.unpack("<4IB", fh.read(17))
        dtype = np.dtype("<f8" if flag else "<f4")
        n = F * C * H * W
        raw = fh.read(n * dtype.itemsize)
    if len(raw) != n * dtype.itemsize:
        raise ValidationError(f"{path}: truncated video payload")
    frames = np.frombuffer(raw, dtype=dtype).reshape(F, C, H, W).astype(dtype.newbyteorder("="))
    return VideoClip(frames, frame_rate)


def export_png_dir(clip, directory):
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    frames = np.clip(clip.frames, 0.0, 1.0)
    for i, f in enumerate(frames):
        img = np.round(f.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        if img.shape[2] == 1:
            img = img[:, :, 0]
        Image.fromarray(img).save(os.path.join(directory, f"frame_{i:05d}.png"))
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump({"frame_rate": clip.frame_rate, "count": len(frames)}, fh)


def import_png_dir(directory):
    from PIL import Image

    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    frames = []
    for i in range(meta["count"]):
        img = np.asarray(Image.open(os.path.join(directory, f"frame_{i:05d}.png")), dtype=np.float32)
        if img.ndim == 2:
            img = img[:, :, None]
        frames.append(img.transpose(2, 0, 1) / 255.0)
    return VideoClip(np.stack(frames), float(meta["frame_rate"]))
