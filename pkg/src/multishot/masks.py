"""Shot layouts and the local attention mask over the joint token sequence.

Sequence order is ``[visual | text shot 0 .. text shot n-1 | transition x (n-1)]``.
Mask rules (symmetric, diagonal always set):

1. visual <-> visual: always.
2. text of shot j <-> visual tokens of shot j only.
3. text of shot j <-> text of shot j only.
4. transition k <-> visual tokens whose token-frame equals its target only.
5. transition <-> transition: never (except the diagonal).
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecConfig, snap_boundaries
from .errors import ValidationError

VISUAL, TEXT, TRANSITION = 0, 1, 2
TARGET_MODES = ("next_first", "prev_last")


@dataclass
class MultiShotSpec:
    """A generation request: one caption and one duration (frames) per shot."""

    captions: list
    durations: list
    height: int = 16
    width: int = 16
    bg_condition: str = "same"

    @property
    def n_shots(self):
        return len(self.durations)

    @property
    def total_frames(self):
        return int(sum(self.durations))

    def validate(self):
        if not self.durations:
            raise ValidationError("a spec needs at least one shot")
        if len(self.captions) != len(self.durations):
            raise ValidationError(
                f"{len(self.captions)} captions for {len(self.durations)} shots")
        if any(int(d) <= 0 for d in self.durations):
            raise ValidationError("shot durations must be positive")


@dataclass
class ShotLayout:
    n_shots: int
    shot_ranges: list  # token-frame [start, end) per shot
    text_ranges: list  # sequence-index [start, end) per shot
    transition_indices: list
    transition_targets: list  # token-frame each transition attends to
    tokens_per_frame: int
    text_tokens_per_shot: int
    frame_boundaries: list = field(default_factory=list)  # pixel-frame cuts
    target_mode: str = "next_first"
    frame_grid: tuple = ()  # (rows, cols) of tokens within one token-frame

    @property
    def n_token_frames(self):
        return self.shot_ranges[-1][1]

    @property
    def n_visual(self):
        return self.n_token_frames * self.tokens_per_frame

    @property
    def size(self):
        return self.n_visual + self.n_shots * self.text_tokens_per_shot + self.n_shots - 1

    def kinds(self):
        """Per-index ``(kind, shot, token_frame_or_target)`` arrays."""
        n = self.size
        kind = np.empty(n, dtype=np.int64)
        shot = np.full(n, -1, dtype=np.int64)
        frame = np.full(n, -1, dtype=np.int64)
        nv = self.n_visual
        kind[:nv] = VISUAL
        tf = np.arange(nv) // self.tokens_per_frame
        frame[:nv] = tf
        for j, (a, b) in enumerate(self.shot_ranges):
            shot[:nv][(tf >= a) & (tf < b)] = j
        for j, (a, b) in enumerate(self.text_ranges):
            kind[a:b] = TEXT
            shot[a:b] = j
        for idx, tgt in zip(self.transition_indices, self.transition_targets):
            kind[idx] = TRANSITION
            frame[idx] = tgt
        return kind, shot, frame

    def validate(self):
        prev = 0
        for a, b in self.shot_ranges:
            if a != prev or b <= a:
                raise ValidationError(f"shot ranges {self.shot_ranges} do not partition token-frames")
            prev = b
        if len(self.transition_indices) != self.n_shots - 1:
            raise ValidationError("need exactly n_shots - 1 transition tokens")
        if len(self.text_ranges) != self.n_shots:
            raise ValidationError("need one text range per shot")
        if self.target_mode not in TARGET_MODES:
            raise ValidationError(f"unknown transition target mode {self.target_mode!r}")
        for k, tgt in enumerate(self.transition_targets):
            expect = (self.shot_ranges[k + 1][0] if self.target_mode == "next_first"
                      else self.shot_ranges[k][1] - 1)
            if tgt != expect:
                raise ValidationError(f"transition {k} targets {tgt}, expected {expect}")

    def visual_shot_ids(self):
        tf = np.arange(self.n_visual) // self.tokens_per_frame
        ids = np.empty(self.n_visual, dtype=np.int64)
        for j, (a, b) in enumerate(self.shot_ranges):
            ids[(tf >= a) & (tf < b)] = j
        return ids

    def to_dict(self):
        return {
            "n_shots": self.n_shots,
            "shot_ranges": [list(map(int, r)) for r in self.shot_ranges],
            "text_ranges": [list(map(int, r)) for r in self.text_ranges],
            "transition_indices": [int(i) for i in self.transition_indices],
            "transition_targets": [int(t) for t in self.transition_targets],
            "tokens_per_frame": self.tokens_per_frame,
            "text_tokens_per_shot": self.text_tokens_per_shot,
            "frame_boundaries": [int(b) for b in self.frame_boundaries],
            "target_mode": self.target_mode,
            "frame_grid": list(self.frame_grid),
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("size", None)
        d["frame_grid"] = tuple(d.get("frame_grid", ()))
        d["shot_ranges"] = [tuple(r) for r in d["shot_ranges"]]
        d["text_ranges"] = [tuple(r) for r in d["text_ranges"]]
        return cls(**d)


@dataclass
class AttentionMask:
    bits: np.ndarray  # [size, size] bool, row = query, column = key

    @property
    def size(self):
        return self.bits.shape[0]


def layout_from_token_frames(shot_lengths, tokens_per_frame, text_tokens_per_shot,
                             target_mode="next_first"):
    """Layout from per-shot lengths already expressed in token-frames."""
    if not shot_lengths or any(int(n) < 1 for n in shot_lengths):
        raise ValidationError(f"every shot needs >= 1 token-frame, got {shot_lengths}")
    if tokens_per_frame < 1 or text_tokens_per_shot < 0:
        raise ValidationError("tokens_per_frame must be >= 1 and text tokens >= 0")
    edges = np.concatenate([[0], np.cumsum(shot_lengths)]).astype(int)
    shot_ranges = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    n = len(shot_lengths)
    nv = int(edges[-1]) * tokens_per_frame
    text_ranges = [(nv + j * text_tokens_per_shot, nv + (j + 1) * text_tokens_per_shot)
                   for j in range(n)]
    first_tr = nv + n * text_tokens_per_shot
    if target_mode == "next_first":
        targets = [shot_ranges[k + 1][0] for k in range(n - 1)]
    elif target_mode == "prev_last":
        targets = [shot_ranges[k][1] - 1 for k in range(n - 1)]
    else:
        raise ValidationError(f"unknown transition target mode {target_mode!r}")
    layout = ShotLayout(
        n_shots=n,
        shot_ranges=shot_ranges,
        text_ranges=text_ranges,
        transition_indices=list(range(first_tr, first_tr + n - 1)),
        transition_targets=targets,
        tokens_per_frame=tokens_per_frame,
        text_tokens_per_shot=text_tokens_per_shot,
        target_mode=target_mode,
    )
    layout.validate()
    return layout


def build_layout(spec, cfg=None, text_tokens_per_shot=4, target_mode="next_first"):
    """Convert a frame-level spec into token-frame ranges.

    Boundaries are snapped to multiples of ``f_t * f_p_f`` (nearest, halves
    up); each requested duration must cover at least one token-frame.
    """
    cfg = cfg or CodecConfig()
    spec.validate()
    q = cfg.frames_per_token_frame
    short = [d for d in spec.durations if int(d) < q]
    if short:
        raise ValidationError(f"durations {short} shorter than one token-frame ({q} frames)")
    boundaries = snap_boundaries([int(d) for d in spec.durations], cfg)
    edges = [0, *boundaries, spec.total_frames]
    lengths = [(b - a) // q for a, b in zip(edges[:-1], edges[1:])]
    _, rows, cols = cfg.token_grid(spec.total_frames, spec.height, spec.width)
    layout = layout_from_token_frames(lengths, rows * cols, text_tokens_per_shot, target_mode)
    layout.frame_boundaries = boundaries
    layout.frame_grid = (rows, cols)
    return layout


def build_mask(layout):
    layout.validate()
    kind, shot, frame = layout.kinds()
    kq, kk = kind[:, None], kind[None, :]
    sq, sk = shot[:, None], shot[None, :]
    fq, fk = frame[:, None], frame[None, :]
    same_shot = sq == sk
    vv = (kq == VISUAL) & (kk == VISUAL)
    text_vis = (((kq == TEXT) & (kk == VISUAL)) | ((kq == VISUAL) & (kk == TEXT))) & same_shot
    text_text = (kq == TEXT) & (kk == TEXT) & same_shot
    tr_vis = (((kq == TRANSITION) & (kk == VISUAL)) | ((kq == VISUAL) & (kk == TRANSITION))) & (fq == fk)
    bits = vv | text_vis | text_text | tr_vis
    np.fill_diagonal(bits, True)
    return AttentionMask(bits)


_BLOCKS = {
    "visual-visual": (VISUAL, VISUAL, None),
    "text-visual-own": (TEXT, VISUAL, True),
    "text-visual-cross": (TEXT, VISUAL, False),
    "text-text-own": (TEXT, TEXT, True),
    "text-text-cross": (TEXT, TEXT, False),
    "transition-visual": (TRANSITION, VISUAL, None),
    "transition-text": (TRANSITION, TEXT, None),
    "transition-transition": (TRANSITION, TRANSITION, None),
}


def mask_stats(mask, layout):
    """Per-block true density, row populations and total count."""
    bits = mask.bits
    if bits.shape != (layout.size, layout.size):
        raise ValidationError(f"mask {bits.shape} does not match layout size {layout.size}")
    kind, shot, _ = layout.kinds()
    stats = {"density": {}, "total_true": int(bits.sum())}
    for name, (a, b, own) in _BLOCKS.items():
        sel = (kind[:, None] == a) & (kind[None, :] == b)
        if own is not None:
            same = shot[:, None] == shot[None, :]
            sel &= same if own else ~same
        if a == b == TRANSITION:
            sel &= ~np.eye(len(kind), dtype=bool)
        count = int(sel.sum())
        stats["density"][name] = float(bits[sel].mean()) if count else None
    rows = bits.sum(axis=1)
    stats["rows_min"] = int(rows.min())
    stats["transition_row_population"] = [int(rows[i]) for i in layout.transition_indices]
    return stats


def write_pgm(path, mask):
    bits = np.asarray(mask.bits if isinstance(mask, AttentionMask) else mask, dtype=bool)
    h, w = bits.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.where(bits, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)[: w * h].reshape(h, w)
    return pixels > 127


def write_layout_json(path, layout):
    with open(path, "w") as fh:
        json.dump(layout.to_dict(), fh, indent=2)
