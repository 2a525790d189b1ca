"""Diffusion transformer over the joint visual/text/transition sequence."""
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import CodecConfig
from .errors import ShapeError, ValidationError
from .masks import TEXT, TRANSITION, VISUAL, build_mask
from .numerics.layers import DiTBlock, LayerNorm, Linear, Module, TimestepEmbedding, sinusoidal_embedding
from .numerics.tensor import read_tensor, write_tensor


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 2
    model_dim: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0
    text_tokens_per_shot: int = 4
    max_shots: int = 8
    freq_dim: int = 64
    text_hash_dim: int = 256
    text_seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValidationError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ValidationError("depth must be >= 0")
        if self.text_tokens_per_shot < 1 or self.max_shots < 1:
            raise ValidationError("text_tokens_per_shot and max_shots must be >= 1")

    def to_dict(self):
        return asdict(self)


class TextStubEncoder:
    """Deterministic caption -> ``[tokens_per_shot, D]`` embedding.

    Lower-cased whitespace-split words are assigned to token slots
    round-robin; each slot is a signed hashed bag of its words, projected by
    a fixed seeded Gaussian matrix.
    """

    def __init__(self, seed=0, tokens_per_shot=4, dim=128, hash_dim=256):
        self.seed = seed
        self.tokens_per_shot = tokens_per_shot
        self.dim = dim
        self.hash_dim = hash_dim
        rng = np.random.default_rng(seed + 7919)
        self.projection = rng.standard_normal((hash_dim, dim)) / np.sqrt(2.0)
        self._cache = {}

    def _bucket(self, word):
        digest = hashlib.blake2b(f"{self.seed}:{word}".encode(), digest_size=8).digest()
        v = int.from_bytes(digest, "little")
        return v % self.hash_dim, 1.0 if (v >> 32) & 1 else -1.0

    def bags(self, caption):
        words = caption.lower().split()
        if not words:
            raise ValidationError("caption must contain at least one word")
        bag = np.zeros((self.tokens_per_shot, self.hash_dim))
        for i, w in enumerate(words):
            b, s = self._bucket(w)
            bag[i % self.tokens_per_shot, b] += s
        return bag

    def encode(self, caption):
        if caption not in self._cache:
            self._cache[caption] = self.bags(caption) @ self.projection
        return self._cache[caption]


def encode_text_stub(caption, enc):
    return enc.encode(caption)


@dataclass
class TokenSequence:
    tokens: np.ndarray  # [N, D]
    kinds: np.ndarray  # VISUAL / TEXT / TRANSITION per index
    layout: object = None
    extras: dict = field(default_factory=dict)

    def kind_of(self, i):
        return {VISUAL: "visual", TEXT: "text", TRANSITION: "transition"}[int(self.kinds[i])]


def visual_position_encoding(grid, dim):
    """3D sinusoidal code for ``(token_frame, row, col)``, frame-major order."""
    nf, nh, nw = grid
    per_axis = 2 * (dim // 6)
    f, r, c = np.meshgrid(np.arange(nf), np.arange(nh), np.arange(nw), indexing="ij")
    enc = np.zeros((nf * nh * nw, dim))
    if per_axis:
        enc[:, :per_axis] = sinusoidal_embedding(f.ravel(), per_axis)
        enc[:, per_axis:2 * per_axis] = sinusoidal_embedding(r.ravel(), per_axis)
        enc[:, 2 * per_axis:3 * per_axis] = sinusoidal_embedding(c.ravel(), per_axis)
    return enc


class MultiShotDiT(Module):
    """Denoiser predicting noise on visual patch tokens.

    Transition tokens are copies of one learnable vector and carry no
    positional code; their placement is expressed only through the mask.
    """

    def __init__(self, cfg=None, codec=None, seed=0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.codec = codec = codec or CodecConfig(model_dim=cfg.model_dim)
        rng = np.random.default_rng(seed)
        D, pd = cfg.model_dim, codec.patch_dim
        self.dtype = dtype
        self.patch_embed = self.add_child("patch_embed", Linear(pd, D, rng, dtype))
        self.text_proj = self.add_child("text_proj", Linear(D, D, rng, dtype))
        self.add_param("shot_embed", (rng.standard_normal((cfg.max_shots, D)) * 0.02).astype(dtype),
                       decay=False)
        self.add_param("transition", (rng.standard_normal(D) * 0.02).astype(dtype), decay=False)
        self.temb = self.add_child("temb", TimestepEmbedding(cfg.freq_dim, D, rng, dtype))
        self.blocks = [self.add_child(f"blocks.{i}", DiTBlock(D, cfg.heads, cfg.mlp_ratio, rng, dtype))
                       for i in range(cfg.depth)]
        self.final_ln = self.add_child("final_ln", LayerNorm(D, dtype=dtype))
        self.head = self.add_child("head", Linear(D, pd, rng, dtype, init_scale=0.02 / np.sqrt(D)))
        self.text_encoder = TextStubEncoder(cfg.text_seed, cfg.text_tokens_per_shot, D, cfg.text_hash_dim)
        self._pos_cache = {}
        self._cache = None

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = dtype
        self._pos_cache = {}
        return self

    # ------------------------------------------------------------ assembly
    def positions(self, grid):
        if grid not in self._pos_cache:
            self._pos_cache[grid] = visual_position_encoding(grid, self.cfg.model_dim).astype(self.dtype)
        return self._pos_cache[grid]

    def text_stub(self, captions):
        return np.concatenate([self.text_encoder.encode(c) for c in captions]).astype(self.dtype)

    def assemble_sequence(self, visual_tokens, captions, layout, grid=None):
        """Joint sequence ``[visual | text per shot | transition x (n-1)]``.

        ``visual_tokens`` are patch vectors ``[Nv, patch_dim]``; they are
        embedded and given 3D positional codes here.
        """
        if len(captions) != layout.n_shots:
            raise ValidationError(f"{len(captions)} captions for {layout.n_shots} shots")
        if layout.text_tokens_per_shot != self.cfg.text_tokens_per_shot:
            raise ValidationError("layout text tokens per shot differs from the model config")
        if layout.n_shots > self.cfg.max_shots:
            raise ValidationError(f"{layout.n_shots} shots exceed max_shots={self.cfg.max_shots}")
        nv = layout.n_visual
        if visual_tokens.shape[0] != nv:
            raise ShapeError(f"{visual_tokens.shape[0]} visual tokens, layout expects {nv}")
        if grid is None:
            rows_cols = tuple(layout.frame_grid) or (layout.tokens_per_frame, 1)
            grid = (layout.n_token_frames, *rows_cols)
        stub = self.text_stub(captions)
        shot_ids = np.repeat(np.arange(layout.n_shots), self.cfg.text_tokens_per_shot)
        xv = self.patch_embed.forward(visual_tokens.astype(self.dtype, copy=False)) + self.positions(grid)
        xt = self.text_proj.forward(stub) + self.params["shot_embed"][shot_ids]
        xtr = np.repeat(self.params["transition"][None, :], layout.n_shots - 1, axis=0)
        tokens = np.concatenate([xv, xt, xtr], axis=0)
        kinds = np.concatenate([np.full(nv, VISUAL), np.full(len(xt), TEXT), np.full(len(xtr), TRANSITION)])
        return TokenSequence(tokens, kinds, layout, {"shot_ids": shot_ids})

    # ------------------------------------------------------------ forward/backward
    def forward(self, visual_tokens, captions, layout, t, mask=None, grid=None):
        mask_bits = build_mask(layout).bits if mask is None else getattr(mask, "bits", mask)
        seq = self.assemble_sequence(visual_tokens, captions, layout, grid)
        if mask_bits.shape != (len(seq.tokens), len(seq.tokens)):
            raise ShapeError(f"mask {mask_bits.shape} does not match sequence length {len(seq.tokens)}")
        temb = self.temb.forward(np.atleast_1d(t))
        x = seq.tokens
        for blk in self.blocks:
            x = blk.forward(x, mask_bits, temb)
        nv = layout.n_visual
        out = self.head.forward(self.final_ln.forward(x[:nv]))
        self._cache = (len(x), nv, seq.extras["shot_ids"], layout.n_shots)
        return out

    def backward(self, dout):
        """Accumulate parameter gradients; returns d(visual patch tokens)."""
        n, nv, shot_ids, n_shots = self._cache
        D = self.cfg.model_dim
        dx = np.zeros((n, D), dtype=dout.dtype)
        dx[:nv] = self.final_ln.backward(self.head.backward(dout))
        dtemb = np.zeros(D, dtype=dout.dtype)
        for blk in reversed(self.blocks):
            dx, dt = blk.backward(dx)
            dtemb += dt
        self.temb.backward(dtemb[None, :])
        nt = len(shot_ids)
        dxt = dx[nv:nv + nt]
        self.text_proj.backward(dxt)
        np.add.at(self.grads["shot_embed"], shot_ids, dxt)
        self.grads["transition"] += dx[nv + nt:].sum(axis=0)
        return self.patch_embed.backward(dx[:nv])


def count_parameters(cfg, codec=None):
    """Closed-form parameter count of ``MultiShotDiT(cfg, codec)``."""
    codec = codec or CodecConfig(model_dim=cfg.model_dim)
    D, pd = cfg.model_dim, codec.patch_dim
    hidden = int(round(D * cfg.mlp_ratio))
    embed = (pd * D + D) + (D * D + D) + cfg.max_shots * D + D
    temb = (cfg.freq_dim * D + D) + (D * D + D)
    head = 2 * D + (D * pd + pd)
    attn = (D * D + D) + D * D + (D * D + D) + (D * D + D)
    mlp = (D * hidden + hidden) + (hidden * D + D)
    block = 4 * D + attn + mlp
    return embed + temb + head + cfg.depth * block


# ------------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"MSVCKPT1"


def save_checkpoint(path, model, step=0, schedule=None, extra_tensors=None, extra=None):
    """Header (u64 length + JSON) followed by MSVT tensors listed in a manifest."""
    tensors = dict(model.named_params())
    for k, v in (extra_tensors or {}).items():
        tensors[k] = v
    buf = io.BytesIO()
    manifest = []
    for name, arr in tensors.items():
        offset = buf.tell()
        write_tensor(buf, np.asarray(arr))
        manifest.append({"name": name, "offset": offset, "shape": list(np.shape(arr)),
                         "dtype": str(np.asarray(arr).dtype)})
    header = {
        "config": model.cfg.to_dict(),
        "codec": model.codec.to_dict(),
        "step": int(step),
        "schedule": schedule or {},
        "manifest": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(buf.getvalue())


def read_checkpoint(path):
    """Returns ``(header, {name: array})``."""
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        base = fh.tell()
        tensors = {}
        for entry in header["manifest"]:
            fh.seek(base + entry["offset"])
            tensors[entry["name"]] = read_tensor(fh)
    return header, tensors


def load_checkpoint(path):
    """Rebuild the model; returns ``(model, header, extra_tensors)``."""
    header, tensors = read_checkpoint(path)
    cfg = ModelConfig(**header["config"])
    codec = CodecConfig(**header["codec"])
    dtype = np.dtype(header["manifest"][0]["dtype"]) if header["manifest"] else np.float32
    model = MultiShotDiT(cfg, codec, dtype=dtype.type)
    params = model.named_params()
    for name, arr in params.items():
        if name not in tensors or tensors[name].shape != arr.shape:
            raise ValidationError(f"checkpoint missing or misshaped parameter {name}")
        arr[...] = tensors[name]
    extras = {k: v for k, v in tensors.items() if k not in params}
    return model, header, extras
