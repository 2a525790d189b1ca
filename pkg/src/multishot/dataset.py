"""Synthetic source corpus, multi-shot sample construction and curation filters.

Source videos are procedural: one bright, saturated character drawn in screen
space over a dark textured background seen through a moving camera.  The
background texture for zooming cameras is periodic in log-radius, so a zoom
can run indefinitely while every frame pair stays an exact similarity
transform.
Frames are rendered on demand from the scene parameters.
"""
import functools
import itertools
import json
import math
import os
import re
import shlex
import subprocess
import tempfile
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import CodecConfig, VideoClip, read_video, write_video
from .errors import MissingInputError, ValidationError
from .evaluation import ToyDetector, ToyEmbedder
from .motion import DEFAULT_THRESHOLDS, analyze_video, passes_motion_filter
from .palette import BACKGROUNDS, CHARACTER_HUES, CHARACTER_SATURATION, SHAPES, hue_rgb

DAY = 86400.0
MIN_SOURCE_FRAMES = 250
REFERENCE_DROP_RATE = 0.38

IDENTITIES = {
    f"{color}-{shape}": (color, shape, k)
    for k, (color, shape) in enumerate(zip(CHARACTER_HUES, itertools.cycle(SHAPES)))
}

# ------------------------------------------------------------------ scenes


@dataclass
class MotionProgram:
    """Camera motion as seen on screen: content shift (px/frame) and scale change."""

    tx: float = 0.0
    ty: float = 0.0
    zoom: float = 0.0  # per-frame magnification minus one

    @property
    def kind(self):
        moving = [k for k, v in (("pan", self.tx), ("tilt", self.ty), ("zoom", self.zoom)) if v]
        if not moving:
            return "static"
        return moving[0] if len(moving) == 1 else "mixed"

    def describe(self):
        parts = []
        if self.tx:
            parts.append("panning " + ("left" if self.tx > 0 else "right"))
        if self.ty:
            parts.append("tilting " + ("up" if self.ty > 0 else "down"))
        if self.zoom:
            parts.append("zooming " + ("in" if self.zoom > 0 else "out"))
        if not parts:
            return "with a still camera"
        return "with the camera " + " and ".join(parts)


@dataclass
class Character:
    color: str
    shape: str
    texture_id: int
    radius: float
    path: tuple  # (cx, cy, ax, ay, wx, wy, px, py) in pixels / radians


@dataclass
class SceneParams:
    character: Character
    bg_color: str
    bg_seed: int
    motion: MotionProgram
    n_frames: int
    size: int = 48
    extra_characters: list = field(default_factory=list)

    @property
    def identity(self):
        return f"{self.character.color}-{self.character.shape}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["character"] = Character(**{**d["character"], "path": tuple(d["character"]["path"])})
        d["extra_characters"] = [Character(**{**c, "path": tuple(c["path"])})
                                 for c in d.get("extra_characters", [])]
        d["motion"] = MotionProgram(**d["motion"])
        return cls(**d)


def caption_for_scene(scene):
    c = scene.character
    return f"a {c.color} {c.shape} {scene.motion.describe()} on a {scene.bg_color} background"


_TEXTURE_GAIN = 0.3
_PLANE_PERIOD = 128  # pixels; the flat texture tiles with this period
_POLAR_RHO = 48  # noise cells per log-radius period
_POLAR_PERIOD = math.log(8.0)  # log-radius period, longer than any per-frame zoom
_POLAR_THETA = int(round(2 * math.pi * _POLAR_RHO / _POLAR_PERIOD))  # square cells


@functools.lru_cache(maxsize=64)
def _noise_tile(seed, shape, sigma=3.0):
    from scipy.ndimage import gaussian_filter

    tile = gaussian_filter(np.random.default_rng(seed).standard_normal(shape), sigma, mode="wrap")
    return (tile / (3.0 * tile.std())).astype(np.float32)


def _camera_offsets(motion, stop):
    """Screen offset ``o(t)`` of the texture and log2 magnification per frame."""
    z = 1.0 + motion.zoom
    if z <= 0:
        raise ValidationError(f"zoom {motion.zoom} collapses the image")
    o = np.zeros((stop, 2))
    for t in range(1, stop):
        o[t] = z * o[t - 1] - (motion.tx, motion.ty)
    return o, np.arange(stop) * math.log2(z)


def _texture(scene, rx, ry, offset, log_zoom):
    """Smooth periodic noise, roughly in [-1, 1].

    Scenes without zoom sample a flat tile.  Zooming scenes sample the tile in
    log-polar coordinates around the pattern origin, which makes a change of
    scale a shift in log-radius, so the zoom can run forever.
    """
    from scipy.ndimage import map_coordinates

    px, py = rx + offset[0], ry + offset[1]
    if scene.motion.zoom == 0:
        tile = _noise_tile(scene.bg_seed, (_PLANE_PERIOD, _PLANE_PERIOD))
        return map_coordinates(tile, [py, px], order=1, mode="grid-wrap")
    tile = _noise_tile(scene.bg_seed, (_POLAR_RHO, _POLAR_THETA))
    r = np.hypot(px, py)
    rho = np.log(np.maximum(r, 1e-6)) - log_zoom * math.log(2.0)
    theta = np.arctan2(py, px)
    coords = [rho / _POLAR_PERIOD * _POLAR_RHO, theta / (2 * math.pi) * _POLAR_THETA]
    fade = np.clip((r - 2.0) / 4.0, 0.0, 1.0)
    return fade * map_coordinates(tile, coords, order=1, mode="grid-wrap")


def _shape_mask(shape, dx, dy, r):
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * r
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.2 * r
    if shape == "triangle":
        return (dy <= 0.6 * r) & (dy >= -r + 2 * np.abs(dx) * 0.85)
    raise ValidationError(f"unknown shape {shape!r}")


def _draw_character(img, c, t, xx, yy):
    cx0, cy0, ax, ay, wx, wy, px, py = c.path
    cx = cx0 + ax * math.sin(wx * t + px)
    cy = cy0 + ay * math.sin(wy * t + py)
    dx, dy = xx - cx, yy - cy
    inside = _shape_mask(c.shape, dx, dy, c.radius)
    theta = c.texture_id * math.pi / 5
    k = 1 + c.texture_id % 3
    v = 0.85 + 0.15 * np.cos(2 * math.pi * k * (dx * math.cos(theta) + dy * math.sin(theta)) / c.radius)
    hue = CHARACTER_HUES[c.color]
    rgb = hue_rgb(hue, CHARACTER_SATURATION, 1.0)
    for ch in range(3):
        img[ch][inside] = (rgb[ch] * v)[inside]


def render_scene(scene, start=0, stop=None, size=None, indices=None):
    """Frames ``[start, stop)`` (or an explicit index list) as ``[n, 3, S, S]`` float32.

    ``size`` box-averages the native resolution down by an integer factor.
    """
    stop = scene.n_frames if stop is None else stop
    idx = list(range(start, stop)) if indices is None else [int(i) for i in indices]
    if any(i < 0 or i >= scene.n_frames for i in idx):
        raise ValidationError(f"frame indices outside [0, {scene.n_frames})")
    S = scene.size
    size = S if size is None else int(size)
    if S % size:
        raise ValidationError(f"render size {size} must divide native size {S}")
    offsets, log_zoom = _camera_offsets(scene.motion, (max(idx) + 1) if idx else 1)
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    c = (S - 1) / 2.0
    rx, ry = xx - c, yy - c
    base = BACKGROUNDS[scene.bg_color]
    out = np.empty((len(idx), 3, size, size), dtype=np.float32)
    for n, t in enumerate(idx):
        tex = _texture(scene, rx, ry, offsets[t], log_zoom[t])
        img = base[:, None, None] * (1.0 + _TEXTURE_GAIN * tex)[None]
        for ch in (scene.character, *scene.extra_characters):
            _draw_character(img, ch, t, xx, yy)
        if size != S:
            f = S // size
            img = img.reshape(3, size, f, size, f).mean(axis=(2, 4))
        out[n] = img
    return out


# ------------------------------------------------------------------ source videos


@dataclass
class SourceVideo:
    video_id: str
    uploader_id: str
    upload_time: float  # seconds
    caption: str
    identity_label: str  # ground truth; filters never read it
    scene: SceneParams = None
    path: str = None  # on-disk MSVV alternative to ``scene``
    frame_rate: float = 24.0
    n_frames_hint: int = None

    def __post_init__(self):
        if not self.caption or not self.caption.strip():
            raise ValidationError(f"video {self.video_id} has an empty caption")
        if self.scene is None and self.path is None:
            raise ValidationError(f"video {self.video_id} needs scene parameters or a file")

    @property
    def n_frames(self):
        if self.scene is not None:
            return self.scene.n_frames
        if self.n_frames_hint is None:
            self.n_frames_hint = read_video(self.path).n_frames
        return self.n_frames_hint

    def frames(self, start=0, stop=None, size=None, indices=None):
        if self.scene is not None:
            return render_scene(self.scene, start, stop, size, indices)
        if not os.path.exists(self.path):
            raise MissingInputError(f"source video file missing: {self.path}")
        data = read_video(self.path).frames
        sel = data[start:stop] if indices is None else data[list(indices)]
        if size is not None and size != sel.shape[-1]:
            f = sel.shape[-1] // size
            sel = sel.reshape(len(sel), sel.shape[1], size, f, size, f).mean(axis=(3, 5))
        return np.asarray(sel, dtype=np.float32)

    @property
    def clip(self):
        return VideoClip(self.frames(), self.frame_rate)

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("video_id", "uploader_id", "upload_time", "caption",
                                           "identity_label", "path", "frame_rate")}
        d["n_frames"] = self.n_frames
        d["scene"] = None if self.scene is None else self.scene.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scene = d.pop("scene", None)
        n = d.pop("n_frames", None)
        return cls(scene=None if scene is None else SceneParams.from_dict(scene), n_frames_hint=n, **d)


@dataclass
class SynthParams:
    size: int = 48
    frame_range: tuple = (150, 400)
    identities: tuple = tuple(IDENTITIES)
    motion_weights: dict = field(default_factory=lambda: {"static": 0.2, "pan": 0.3, "tilt": 0.2, "zoom": 0.3})
    fast_fraction: float = 0.6
    fast_shift: tuple = (10.0, 14.0)
    slow_shift: tuple = (1.0, 5.0)
    fast_zoom: tuple = (0.6, 0.75)
    slow_zoom: tuple = (0.05, 0.2)
    session_size: tuple = (4, 8)  # videos per upload session, inclusive
    sessions_per_uploader: int = 2
    session_gap_days: float = 7.0
    session_span_days: float = 2.0
    stranger_rate: float = 0.15  # video of another identity inside an uploader's session
    home_bg_rate: float = 0.3
    second_character_rate: float = 0.05
    char_radius_frac: float = 0.14

    def to_dict(self):
        d = asdict(self)
        d["identities"] = list(self.identities)
        return d


def _random_motion(rng, p):
    kinds = list(p.motion_weights)
    w = np.array([p.motion_weights[k] for k in kinds], dtype=np.float64)
    kind = kinds[rng.choice(len(kinds), p=w / w.sum())]
    if kind == "static":
        return MotionProgram()
    fast = rng.random() < p.fast_fraction
    sign = 1.0 if rng.random() < 0.5 else -1.0
    if kind == "zoom":
        # fast zooms run inward only: a matching zoom-out shrinks the frame
        # by ~2x per step, past what block matching resolves
        lo, hi = p.fast_zoom if fast else p.slow_zoom
        mag = float(rng.uniform(lo, hi))
        return MotionProgram(zoom=mag if (fast or sign > 0) else -mag / (1.0 + mag))
    lo, hi = p.fast_shift if fast else p.slow_shift
    v = sign * float(rng.uniform(lo, hi))
    return MotionProgram(tx=v) if kind == "pan" else MotionProgram(ty=v)


def _random_character(rng, identity, p, size):
    color, shape, tex = IDENTITIES[identity]
    r = p.char_radius_frac * size
    path = (size / 2 + rng.uniform(-0.1, 0.1) * size, size / 2 + rng.uniform(-0.1, 0.1) * size,
            rng.uniform(0.05, 0.15) * size, rng.uniform(0.05, 0.15) * size,
            rng.uniform(0.02, 0.08), rng.uniform(0.02, 0.08),
            rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi))
    return Character(color, shape, tex, float(r), tuple(float(v) for v in path))


def make_scene(rng, identity, bg_color, motion, n_frames, params=None, extra_identity=None):
    p = params or SynthParams()
    ch = _random_character(rng, identity, p, p.size)
    extras = []
    if extra_identity is not None:
        other = _random_character(rng, extra_identity, p, p.size)
        # keep the two characters on opposite sides so they never merge
        cx, cy, *rest = ch.path
        ch = Character(ch.color, ch.shape, ch.texture_id, ch.radius,
                       (p.size * 0.27, cy, 0.0, rest[1], *rest[2:]))
        other = Character(other.color, other.shape, other.texture_id, other.radius,
                          (p.size * 0.73, other.path[1], 0.0, *other.path[3:]))
        extras.append(other)
    return SceneParams(ch, bg_color, int(rng.integers(2 ** 31)), motion, int(n_frames), p.size, extras)


def synth_generate(n_videos, seed, params=None):
    """Deterministic synthetic corpus of ``n_videos`` sources.

    Each uploader owns one identity and posts in sessions a week apart; a
    fraction of session videos show another identity or a second character
    so that clustering alone cannot guarantee clean samples.
    """
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    bgs = list(BACKGROUNDS)
    videos = []
    uploader = 0
    while len(videos) < n_videos:
        uid = f"u{uploader:04d}"
        identity = p.identities[int(rng.integers(len(p.identities)))]
        home = bgs[int(rng.integers(len(bgs)))]
        for session in range(p.sessions_per_uploader):
            t0 = session * p.session_gap_days * DAY + rng.uniform(0, DAY)
            count = int(rng.integers(p.session_size[0], p.session_size[1] + 1))
            for _ in range(count):
                if len(videos) >= n_videos:
                    break
                ident = identity
                if rng.random() < p.stranger_rate:
                    ident = p.identities[int(rng.integers(len(p.identities)))]
                bg = home if rng.random() < p.home_bg_rate else bgs[int(rng.integers(len(bgs)))]
                extra = None
                if rng.random() < p.second_character_rate:
                    others = [i for i in p.identities if i != ident]
                    extra = others[int(rng.integers(len(others)))]
                n_frames = int(rng.integers(p.frame_range[0], p.frame_range[1] + 1))
                scene = make_scene(rng, ident, bg, _random_motion(rng, p), n_frames, p, extra)
                videos.append(SourceVideo(
                    video_id=f"v{len(videos):05d}", uploader_id=uid,
                    upload_time=float(t0 + rng.uniform(0, p.session_span_days * DAY)),
                    caption=caption_for_scene(scene), identity_label=ident, scene=scene))
        uploader += 1
    return videos


def save_corpus(videos, out_dir, materialize=False):
    """Write ``index.json`` (and MSVV files when ``materialize``)."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for v in videos:
        rec = v.to_dict()
        if materialize:
            rel = os.path.join("videos", f"{v.video_id}.msvv")
            os.makedirs(os.path.join(out_dir, "videos"), exist_ok=True)
            write_video(os.path.join(out_dir, rel), v.clip)
            rec["path"] = rel
        records.append(rec)
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump({"videos": records}, fh, indent=1, sort_keys=True)


def load_corpus(out_dir):
    path = os.path.join(out_dir, "index.json")
    if not os.path.exists(path):
        raise MissingInputError(f"no corpus index at {path}")
    with open(path) as fh:
        records = json.load(fh)["videos"]
    videos = []
    for rec in records:
        if rec.get("path"):
            rec = {**rec, "path": os.path.join(out_dir, rec["path"])}
        videos.append(SourceVideo.from_dict(rec))
    return videos


# ------------------------------------------------------------------ method 1


def source_motion(video, max_pairs=6, seed=0, **analysis):
    """Motion metrics from ``max_pairs`` evenly spaced consecutive-frame pairs."""
    n = video.n_frames
    if n < 2:
        raise ValidationError(f"{video.video_id}: needs two frames for motion analysis")
    starts = np.linspace(0, n - 2, min(max_pairs, n - 1)).round().astype(int)
    idx = np.ravel(np.c_[starts, starts + 1])
    frames = video.frames(indices=idx)
    return analyze_video(frames, pair_stride=2, seed=seed, **analysis)


def filter_method1_candidates(videos, thresholds=DEFAULT_THRESHOLDS, min_frames=MIN_SOURCE_FRAMES,
                              max_pairs=6, seed=0, return_stats=False, **analysis):
    """Keep videos with at least ``min_frames`` frames that pass the motion filter."""
    kept, short, still = [], [], []
    metrics = {}
    for k, v in enumerate(videos):
        if v.n_frames < min_frames:
            short.append(v.video_id)
            continue
        m = source_motion(v, max_pairs, seed + k, **analysis)
        metrics[v.video_id] = m.to_dict()
        if passes_motion_filter(m, thresholds):
            kept.append(v)
        else:
            still.append(v.video_id)
    if not return_stats:
        return kept
    stats = {"input": len(videos), "kept": len(kept), "dropped_short": len(short),
             "dropped_low_motion": len(still), "short_ids": short, "low_motion_ids": still,
             "metrics": metrics}
    return kept, stats


# ------------------------------------------------------------------ samples


@dataclass
class Segment:
    source_id: str
    start: int
    length: int


@dataclass
class MultiShotSample:
    sample_id: str
    segments: list
    captions: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    filter_flags: dict = field(default_factory=dict)
    bg: str = None  # "same" / "diff" tag for report grouping
    video: VideoClip = None

    def __post_init__(self):
        if not self.segments or any(s.length < 1 for s in self.segments):
            raise ValidationError("a sample needs non-empty segments")
        if self.captions and len(self.captions) != len(self.segments):
            raise ValidationError("caption count must equal shot count")

    @property
    def n_shots(self):
        return len(self.segments)

    @property
    def durations(self):
        return [s.length for s in self.segments]

    @property
    def boundaries(self):
        return [int(b) for b in np.cumsum(self.durations)[:-1]]

    @property
    def n_frames(self):
        return int(sum(self.durations))

    def render(self, sources, size=None):
        parts = [sources[s.source_id].frames(s.start, s.start + s.length, size) for s in self.segments]
        return VideoClip(np.concatenate(parts))

    def middle_frames(self, sources, size=None):
        """One frame per shot at ``floor(K/2)`` within the shot."""
        return np.stack([sources[s.source_id].frames(indices=[s.start + s.length // 2], size=size)[0]
                         for s in self.segments])

    def to_record(self):
        return {
            "id": self.sample_id,
            "boundaries": self.boundaries,
            "durations": self.durations,
            "captions": list(self.captions),
            "provenance": self.provenance,
            "filter_flags": self.filter_flags,
            "segments": [asdict(s) for s in self.segments],
            "n_shots": self.n_shots,
            "bg": self.bg,
        }


def allowed_durations(bounds, codec=None):
    q = (codec or CodecConfig()).frames_per_token_frame
    lo, hi = bounds
    opts = [d for d in range(q * math.ceil(lo / q), hi + 1, q)]
    if not opts:
        raise ValidationError(f"no multiple of {q} inside duration bounds {bounds}")
    return opts


def _bg_tag(sources, segments):
    bgs = {sources[s.source_id].scene.bg_color for s in segments
           if sources.get(s.source_id) is not None and sources[s.source_id].scene is not None}
    if not bgs:
        return None
    return "same" if len(bgs) == 1 else "diff"


def make_multishot_from_single(video, n_shots, seed, duration_bounds=(32, 64), codec=None,
                               sample_id=None):
    """Method 1: ``n_shots`` disjoint random sub-clips of one video, shuffled."""
    if n_shots < 1:
        raise ValidationError("n_shots must be >= 1")
    opts = allowed_durations(duration_bounds, codec)
    F = video.n_frames
    if n_shots * opts[0] > F:
        raise ValidationError(
            f"{video.video_id}: {F} frames cannot hold {n_shots} shots of >= {opts[0]} frames")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        durs = [opts[int(i)] for i in rng.integers(0, len(opts), size=n_shots)]
        if sum(durs) <= F:
            break
    else:
        durs = [opts[0]] * n_shots
    slack = F - sum(durs)
    cuts = np.sort(rng.integers(0, slack + 1, size=n_shots))
    gaps = np.diff(np.concatenate([[0], cuts]))
    starts, pos = [], 0
    for d, g in zip(durs, gaps):
        pos += int(g)
        starts.append(pos)
        pos += d
    order = rng.permutation(n_shots)
    segs = [Segment(video.video_id, starts[i], durs[i]) for i in order]
    return MultiShotSample(sample_id or f"m1-{video.video_id}-{seed}", segs,
                           provenance={"method": 1, "source_ids": [video.video_id],
                                       "order": [int(i) for i in order]},
                           bg=_bg_tag({video.video_id: video}, segs))


# ------------------------------------------------------------------ method 2


@dataclass
class VideoCluster:
    cluster_id: str
    members: list  # video ids, earliest first
    uploader_id: str = None

    def __len__(self):
        return len(self.members)


def bag_of_words(text):
    return Counter(re.findall(r"[a-z0-9]+", text.lower()))


def caption_similarity(a, b):
    ba, bb = bag_of_words(a), bag_of_words(b)
    dot = sum(ba[w] * bb[w] for w in ba)
    na = math.sqrt(sum(v * v for v in ba.values()))
    nb = math.sqrt(sum(v * v for v in bb.values()))
    return dot / (na * nb) if na and nb else 0.0


def cluster_videos(videos, time_window=3 * DAY, caption_sim_threshold=0.5):
    """Greedy clusters per uploader.

    Videos are visited in upload order; each joins the first open cluster
    whose earliest member is within ``time_window`` and whose caption has
    bag-of-words cosine >= ``caption_sim_threshold`` with it, else it starts
    a new cluster.
    """
    by_uploader = defaultdict(list)
    for v in videos:
        if not v.caption:
            raise ValidationError(f"{v.video_id} has no caption")
        by_uploader[v.uploader_id].append(v)
    clusters = []
    for uid in sorted(by_uploader):
        open_clusters = []  # (seed video, member ids)
        for v in sorted(by_uploader[uid], key=lambda x: (x.upload_time, x.video_id)):
            for seed_v, members in open_clusters:
                if (v.upload_time - seed_v.upload_time <= time_window
                        and caption_similarity(seed_v.caption, v.caption) >= caption_sim_threshold):
                    members.append(v.video_id)
                    break
            else:
                open_clusters.append((v, [v.video_id]))
        for seed_v, members in open_clusters:
            clusters.append(VideoCluster(f"c{len(clusters):05d}", members, uid))
    return clusters


def make_multishot_from_cluster(cluster, videos, n_shots, seed, duration_bounds=(32, 64), codec=None,
                                sample_id=None):
    """Method 2: one random sub-clip from each of ``n_shots`` distinct members."""
    if len(cluster) < n_shots:
        raise ValidationError(f"cluster {cluster.cluster_id} has {len(cluster)} < {n_shots} members")
    opts = allowed_durations(duration_bounds, codec)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(cluster), size=n_shots, replace=False)
    segs = []
    for i in picks:
        v = videos[cluster.members[int(i)]]
        fits = [d for d in opts if d <= v.n_frames]
        if not fits:
            raise ValidationError(f"{v.video_id}: {v.n_frames} frames is shorter than {opts[0]}")
        d = fits[int(rng.integers(len(fits)))]
        start = int(rng.integers(0, v.n_frames - d + 1))
        segs.append(Segment(v.video_id, start, d))
    return MultiShotSample(sample_id or f"m2-{cluster.cluster_id}-{seed}", segs,
                           provenance={"method": 2, "cluster_id": cluster.cluster_id,
                                       "source_ids": [s.source_id for s in segs]},
                           bg=_bg_tag(videos, segs))


# ------------------------------------------------------------------ captioning


class SyntheticCaptioner:
    """Describes a shot from the generator's scene parameters."""

    name = "synthetic"

    def __call__(self, source, segment, frames=None):
        if source.scene is None:
            raise ValidationError(f"{source.video_id} has no scene parameters to describe")
        return caption_for_scene(source.scene)


class ExternalCommandCaptioner:
    """``command <png>`` prints a caption for the shot's middle frame."""

    def __init__(self, command, timeout=60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.name = "external-cmd"
        self.timeout = timeout

    def __call__(self, source, segment, frames=None):
        from PIL import Image

        frame = source.frames(indices=[segment.start + segment.length // 2])[0]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "shot.png")
            img = (np.clip(frame, 0, 1).transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
            Image.fromarray(img).save(path)
            out = subprocess.run(self.command + [path], capture_output=True, text=True,
                                 timeout=self.timeout, check=True)
        return out.stdout.strip()


def caption_shots(sample, captioner, sources):
    """Fill one caption per shot; failures are flagged, never dropped."""
    captions, failed = [], []
    for k, seg in enumerate(sample.segments):
        try:
            text = captioner(sources[seg.source_id], seg)
            if not isinstance(text, str) or not text.strip():
                raise ValidationError("empty caption")
            captions.append(text.strip())
        except Exception as exc:  # any backend failure is recorded on the sample
            captions.append("")
            failed.append({"shot": k, "error": str(exc) or type(exc).__name__})
    sample.captions = captions
    sample.filter_flags["caption_failures"] = failed
    return sample


# ------------------------------------------------------------------ identity filter


@dataclass
class FilterDecision:
    keep: bool
    reason: str = "ok"
    min_similarity: float = None
    detections: list = field(default_factory=list)


def identity_filter(sample, sources, detector=None, embedder=None, sim_threshold=0.75, frames=None):
    """Drop unless every shot's middle frame shows exactly one character and all
    pairs of those characters embed with cosine >= ``sim_threshold``."""
    detector = detector or ToyDetector()
    embedder = embedder or ToyEmbedder()
    frames = sample.middle_frames(sources) if frames is None else frames
    regions = []
    counts = []
    try:
        for f in frames:
            found = detector(f)
            counts.append(len(found))
            if len(found) == 1:
                regions.append(embedder(f, found[0].mask))
    except Exception as exc:
        return FilterDecision(False, f"detector_error: {exc}", None, counts)
    if any(c != 1 for c in counts):
        return FilterDecision(False, "character_count", None, counts)
    sims = [float(np.dot(a, b)) for i, a in enumerate(regions) for b in regions[i + 1:]]
    low = min(sims) if sims else 1.0
    if low < sim_threshold:
        return FilterDecision(False, "identity_mismatch", low, counts)
    return FilterDecision(True, "ok", low, counts)


# ------------------------------------------------------------------ curation


@dataclass
class CurateConfig:
    n_samples: int = 500
    method: str = "both"  # "1", "2" or "both"
    shot_counts: tuple = (2, 3, 4)
    duration_bounds: tuple = (8, 32)
    min_frames: int = MIN_SOURCE_FRAMES
    motion_thresholds: tuple = DEFAULT_THRESHOLDS
    time_window_days: float = 3.0
    caption_sim_threshold: float = 0.5
    sim_threshold: float = 0.75
    motion_pairs: int = 6
    method2_share: float = 0.5  # fraction of shot-count blocks built with Method 2 under "both"

    def to_dict(self):
        d = asdict(self)
        d["shot_counts"] = list(self.shot_counts)
        d["duration_bounds"] = list(self.duration_bounds)
        d["motion_thresholds"] = list(self.motion_thresholds)
        return d


@dataclass
class CurationResult:
    kept: list
    dropped: list
    stats: dict


def curate(videos, seed=0, config=None, codec=None, captioner=None, detector=None, embedder=None):
    """Build candidate samples with Method 1 and/or 2, caption them and run the
    identity filter.  Per-stage statistics satisfy ``kept + dropped == input``.

    Shot counts cycle uniformly; with ``method="both"`` each full cycle of
    shot counts is one block, and blocks go to Method 2 at the rate
    ``method2_share`` (evenly interleaved).
    """
    cfg = config or CurateConfig()
    if cfg.method not in ("1", "2", "both"):
        raise ValidationError(f"method must be 1, 2 or both, got {cfg.method!r}")
    if not 0.0 <= cfg.method2_share <= 1.0:
        raise ValidationError(f"method2_share must lie in [0, 1], got {cfg.method2_share}")
    captioner = captioner or SyntheticCaptioner()
    by_id = {v.video_id: v for v in videos}
    rng = np.random.default_rng(seed)
    stats = {}

    candidates = []
    if cfg.method in ("1", "both"):
        candidates, s1 = filter_method1_candidates(
            videos, cfg.motion_thresholds, cfg.min_frames, cfg.motion_pairs, seed, return_stats=True)
        stats["method1_candidates"] = {k: s1[k] for k in ("input", "kept", "dropped_short", "dropped_low_motion",
                                                          "short_ids", "low_motion_ids")}
    clusters = []
    if cfg.method in ("2", "both"):
        clusters = cluster_videos(videos, cfg.time_window_days * DAY, cfg.caption_sim_threshold)
        sizes = [len(c) for c in clusters]
        stats["clustering"] = {"videos": len(videos), "clusters": len(clusters),
                               "mean_cluster_size": float(np.mean(sizes)) if sizes else 0.0,
                               "multi_member_clusters": sum(s >= 2 for s in sizes)}

    built, failed = [], 0
    for i in range(cfg.n_samples):
        n = cfg.shot_counts[i % len(cfg.shot_counts)]
        b = i // len(cfg.shot_counts)
        m2_block = math.floor((b + 1) * cfg.method2_share) > math.floor(b * cfg.method2_share)
        use_m1 = cfg.method == "1" or (cfg.method == "both" and not m2_block)
        sub = int(rng.integers(2 ** 31))
        try:
            if use_m1:
                pool = [v for v in candidates if v.n_frames >= n * cfg.duration_bounds[0]]
                if not pool:
                    raise ValidationError("no Method 1 candidate is long enough")
                v = pool[int(rng.integers(len(pool)))]
                s = make_multishot_from_single(v, n, sub, cfg.duration_bounds, codec, f"s{i:06d}")
            else:
                pool = [c for c in clusters if len(c) >= n]
                if not pool:
                    raise ValidationError(f"no cluster with >= {n} members")
                c = pool[int(rng.integers(len(pool)))]
                s = make_multishot_from_cluster(c, by_id, n, sub, cfg.duration_bounds, codec, f"s{i:06d}")
        except ValidationError:
            failed += 1
            continue
        built.append(s)
    stats["construction"] = {"requested": cfg.n_samples, "built": len(built), "failed": failed}

    flagged = 0
    for s in built:
        caption_shots(s, captioner, by_id)
        flagged += bool(s.filter_flags["caption_failures"])
    stats["captioning"] = {"input": len(built), "flagged": flagged}

    kept, dropped = [], []
    reasons = Counter()
    for s in built:
        d = identity_filter(s, by_id, detector, embedder, cfg.sim_threshold)
        s.filter_flags["identity"] = {"keep": d.keep, "reason": d.reason,
                                      "min_similarity": d.min_similarity, "detections": d.detections}
        (kept if d.keep else dropped).append(s)
        if not d.keep:
            reasons[d.reason.split(":")[0]] += 1
    stats["identity_filter"] = {"input": len(built), "kept": len(kept), "dropped": len(dropped),
                                "reasons": dict(reasons),
                                "drop_rate": len(dropped) / len(built) if built else 0.0,
                                "reference_drop_rate": REFERENCE_DROP_RATE}
    stats["composition"] = {
        "by_shots": {str(k): v for k, v in sorted(Counter(s.n_shots for s in kept).items())},
        "by_method": {str(k): v for k, v in sorted(Counter(s.provenance["method"] for s in kept).items())},
        "by_bg": {str(k): v for k, v in sorted(Counter(s.bg for s in kept).items())},
    }
    return CurationResult(kept, dropped, stats)


# ------------------------------------------------------------------ manifest


@dataclass
class DatasetManifest:
    records: list
    stats: dict
    root: str = None

    def __len__(self):
        return len(self.records)

    def video_path(self, record):
        return os.path.join(self.root or "", record["video_path"])


def write_manifest(out_dir, result, sources, size=None, config_hash=None):
    """MSVV file per kept sample plus ``manifest.jsonl`` and ``stats.json``."""
    by_id = {v.video_id: v for v in sources} if isinstance(sources, list) else sources
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    records = []
    for s in result.kept:
        rel = os.path.join("samples", f"{s.sample_id}.msvv")
        write_video(os.path.join(out_dir, rel), s.render(by_id, size))
        rec = s.to_record()
        rec["video_path"] = rel
        if config_hash:
            rec["config_hash"] = config_hash
        records.append(rec)
    for rec in records:
        if not os.path.exists(os.path.join(out_dir, rec["video_path"])):
            raise MissingInputError(f"manifest references a missing file: {rec['video_path']}")
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    stats = dict(result.stats)
    if config_hash:
        stats["config_hash"] = config_hash
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    return DatasetManifest(records, stats, out_dir)


def read_manifest(out_dir):
    path = os.path.join(out_dir, "manifest.jsonl")
    if not os.path.exists(path):
        raise MissingInputError(f"no manifest at {path}")
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    stats = {}
    if os.path.exists(os.path.join(out_dir, "stats.json")):
        with open(os.path.join(out_dir, "stats.json")) as fh:
            stats = json.load(fh)
    return DatasetManifest(records, stats, out_dir)


# ------------------------------------------------------------------ training bridge


def sample_to_example(sample, sources, codec=None, size=8, text_tokens_per_shot=4):
    """Render a curated sample at ``size`` pixels and tokenize it for training."""
    from .diffusion import TrainExample, clip_to_tokens
    from .masks import MultiShotSpec, build_layout

    codec = codec or CodecConfig()
    clip = sample.render(sources, size)
    spec = MultiShotSpec(list(sample.captions), sample.durations, size, size)
    layout = build_layout(spec, codec, text_tokens_per_shot)
    if layout.frame_boundaries != sample.boundaries:
        raise ValidationError(f"{sample.sample_id}: boundaries are not token-frame aligned")
    tokens, _ = clip_to_tokens(clip, codec)
    return TrainExample(tokens.astype(np.float32), list(sample.captions), layout)
