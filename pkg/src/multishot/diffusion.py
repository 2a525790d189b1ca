"""Noise schedule, epsilon-prediction objective, AdamW, LR schedule and sampler."""
import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import decode, encode, patchify, unpatchify, VideoClip
from .errors import ConfigError, NumericalError, RangeError, ShapeError
from .masks import build_layout, build_mask


@dataclass
class NoiseSchedule:
    """Cumulative signal level per step (``alpha[t]`` multiplies ``x`` under a sqrt)."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1 or len(self.alpha) < 1:
            raise ConfigError("noise schedule needs a 1-D alpha array")
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ConfigError("alpha values must lie in [0, 1]")
        if np.any(np.diff(self.alpha) >= 0):
            raise ConfigError("alpha must be strictly decreasing")

    @property
    def T(self):
        return len(self.alpha)

    @classmethod
    def cosine(cls, T=1000, s=0.008, max_beta=0.999):
        f = lambda u: math.cos((u + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.array([min(1 - f((i + 1) / T) / f(i / T), max_beta) for i in range(T)])
        return cls(np.cumprod(1.0 - betas))

    def to_dict(self):
        return {"kind": "explicit", "T": self.T}


def add_noise(x, eps, t, sched):
    """``sqrt(alpha_t) * x + sqrt(1 - alpha_t) * eps``."""
    if np.shape(x) != np.shape(eps):
        raise ShapeError(f"x {np.shape(x)} and eps {np.shape(eps)} differ")
    if not 0 <= int(t) < sched.T:
        raise RangeError(f"timestep {t} outside [0, {sched.T})")
    a = sched.alpha[int(t)]
    x = np.asarray(x)
    return (math.sqrt(a) * x + math.sqrt(1.0 - a) * np.asarray(eps)).astype(x.dtype, copy=False)


# ------------------------------------------------------------------ recipe / LR


@dataclass
class TrainRecipe:
    learning_rate: float = 5.0e-5
    weight_decay: float = 0.1
    betas: tuple = (0.9, 0.95)
    warmup_steps: int = 2000
    min_lr: float = 2.0e-5
    batch_size: int = 128
    total_steps: int = 5000
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    antithetic: bool = False

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.warmup_steps > self.total_steps:
            raise ConfigError("warmup_steps must not exceed total_steps")
        if self.min_lr > self.learning_rate:
            raise ConfigError("min_lr must not exceed learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @classmethod
    def desk(cls, total_steps=2000, **overrides):
        """From-scratch toy training: same optimizer family, faster schedule."""
        base = dict(learning_rate=1e-3, weight_decay=0.1, betas=(0.9, 0.95), warmup_steps=100,
                    min_lr=1e-4, batch_size=4, total_steps=total_steps, grad_clip=1.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_at(step, recipe):
    """Linear warmup from 0, then cosine decay to ``min_lr`` at ``total_steps``."""
    lr, lo, w, total = recipe.learning_rate, recipe.min_lr, recipe.warmup_steps, recipe.total_steps
    if step < w:
        return lr * step / w
    if total <= w:
        return lr if step == w else lo
    progress = min((step - w) / (total - w), 1.0)
    return lo + 0.5 * (lr - lo) * (1.0 + math.cos(math.pi * progress))


# ------------------------------------------------------------------ state / optimizer


@dataclass
class TrainState:
    model: object
    step: int = 0
    seed: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.model.named_params().items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def rng(self, purpose=0):
        return np.random.default_rng([self.seed, self.step, purpose])


def adamw_update(state, recipe, lr):
    """Decoupled weight decay then bias-corrected Adam step, in place."""
    params = state.model.named_params()
    grads = state.model.named_grads()
    skip = state.model.no_decay_names()
    b1, b2 = recipe.betas
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if recipe.weight_decay and name not in skip:
            p *= 1.0 - lr * recipe.weight_decay
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + recipe.adam_eps)).astype(p.dtype, copy=False)


def _global_norm(grads):
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


# ------------------------------------------------------------------ objective


@dataclass
class TrainExample:
    """One latent video as patch tokens plus its conditioning."""

    tokens: np.ndarray  # [Nv, patch_dim], model space
    captions: list
    layout: object
    mask: np.ndarray = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = build_mask(self.layout).bits


def diffusion_loss(model, batch, sched, rng, antithetic=False, predictor=None):
    """Mean-squared noise-prediction error; accumulates gradients into ``model``.

    ``predictor(x_t, example, t, eps)`` replaces the model forward (used to
    inject oracle predictions); no gradients are produced in that case.
    """
    n = len(batch)
    ts = rng.integers(0, sched.T, size=n)
    if antithetic:
        half = (n + 1) // 2
        ts[half:] = sched.T - 1 - ts[: n - half]
    total = 0.0
    for ex, t in zip(batch, ts):
        eps = rng.standard_normal(ex.tokens.shape).astype(ex.tokens.dtype)
        xt = add_noise(ex.tokens, eps, t, sched)
        if predictor is not None:
            pred = predictor(xt, ex, int(t), eps)
            total += float(np.mean((pred - eps) ** 2))
            continue
        pred = model.forward(xt, ex.captions, ex.layout, float(t), mask=ex.mask)
        diff = pred - eps
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at timestep {int(t)}")
        total += loss
        model.backward((2.0 / (diff.size * n)) * diff)
    return total / n


def train_step(state, recipe, batch, sched):
    """One AdamW update; returns ``state`` with ``step`` advanced."""
    model = state.model
    model.zero_grad()
    loss = diffusion_loss(model, batch, sched, state.rng(), recipe.antithetic)
    grads = model.named_grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name} at step {state.step}")
    norm = _global_norm(grads)
    if recipe.grad_clip is not None and norm > recipe.grad_clip:
        scale = recipe.grad_clip / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    lr = lr_at(state.step, recipe)
    adamw_update(state, recipe, lr)
    state.last_stats = {"step": state.step, "loss": loss, "lr": lr, "grad_norm": norm}
    state.step += 1
    return state


def train(state, recipe, dataset, sched, steps=None, log_path=None, checkpoint_fn=None,
          checkpoint_every=0, progress=None):
    """Run ``steps`` (default ``recipe.total_steps - state.step``) updates.

    Batches are drawn with replacement using the state's seeded RNG.  A CSV
    log with ``step, loss, lr, grad_norm, wallclock`` is written if requested.
    """
    steps = recipe.total_steps - state.step if steps is None else steps
    history = []
    fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(["step", "loss", "lr", "grad_norm", "wallclock"])
    t0 = time.perf_counter()
    try:
        for _ in range(steps):
            idx = state.rng(1).integers(0, len(dataset), size=recipe.batch_size)
            train_step(state, recipe, [dataset[i] for i in idx], sched)
            s = state.last_stats
            history.append(s["loss"])
            if writer:
                writer.writerow([s["step"], f"{s['loss']:.6f}", f"{s['lr']:.6e}",
                                 f"{s['grad_norm']:.6f}", f"{time.perf_counter() - t0:.3f}"])
            if progress:
                progress(s)
            if checkpoint_fn and checkpoint_every and state.step % checkpoint_every == 0:
                checkpoint_fn(state)
    finally:
        if fh:
            fh.close()
    return history


# ------------------------------------------------------------------ sampling


def to_model_space(frames):
    return frames * 2.0 - 1.0


def from_model_space(frames):
    return (frames + 1.0) * 0.5


def clip_to_tokens(clip, codec):
    """Pixel clip in [0, 1] -> model-space patch tokens and their grid."""
    lat = encode(VideoClip(to_model_space(np.asarray(clip.frames))), codec)
    grid = (lat.latents.shape[0] // codec.f_p_f, lat.latents.shape[2] // codec.f_p_h,
            lat.latents.shape[3] // codec.f_p_w)
    return patchify(lat, codec), grid


def tokens_to_clip(tokens, grid, codec, frame_rate=24.0):
    lat = unpatchify(tokens, grid, codec)
    clip = decode(lat, codec, frame_rate)
    return VideoClip(from_model_space(clip.frames), frame_rate)


def _project_pixels(tokens, grid, codec):
    """Clamp a token estimate to the valid pixel range through the codec."""
    clip = decode(unpatchify(tokens, grid, codec), codec)
    clip.frames = np.clip(clip.frames, -1.0, 1.0)
    return patchify(encode(clip, codec), codec)


def sampling_timesteps(T, steps):
    steps = max(1, min(steps, T))
    return np.unique(np.round(np.linspace(0, T - 1, steps)).astype(int))[::-1]


def sample(spec, model, sched, seed, steps=50, codec=None, clip_x0=True, return_layout=False):
    """Strided ancestral sampling for a multi-shot request.

    Starts from Gaussian noise on the visual tokens; the caption, layout and
    mask come from ``spec`` and stay fixed throughout.  Deterministic given ``seed``.
    """
    codec = codec or model.codec
    layout = build_layout(spec, codec, model.cfg.text_tokens_per_shot)
    mask = build_mask(layout).bits
    grid = (layout.n_token_frames, *layout.frame_grid)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((layout.n_visual, codec.patch_dim)).astype(model.dtype)
    ts = sampling_timesteps(sched.T, steps)
    for i, t in enumerate(ts):
        a = sched.alpha[t]
        a_prev = sched.alpha[ts[i + 1]] if i + 1 < len(ts) else 1.0
        eps = model.forward(x, spec.captions, layout, float(t), mask=mask)
        x0 = (x - math.sqrt(1.0 - a) * eps) / math.sqrt(a)
        if clip_x0:
            x0 = _project_pixels(x0, grid, codec)
        if i + 1 == len(ts):
            x = x0
            break
        step_alpha = a / a_prev
        beta = 1.0 - step_alpha
        coef_x0 = math.sqrt(a_prev) * beta / (1.0 - a)
        coef_xt = math.sqrt(step_alpha) * (1.0 - a_prev) / (1.0 - a)
        var = beta * (1.0 - a_prev) / (1.0 - a)
        x = coef_x0 * x0 + coef_xt * x + math.sqrt(max(var, 0.0)) * rng.standard_normal(x.shape)
        x = x.astype(model.dtype, copy=False)
    clip = tokens_to_clip(x, grid, codec)
    if return_layout:
        return clip, layout
    return clip
