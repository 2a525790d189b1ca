"""Layers with explicit forward/backward passes.

Every layer keeps its own parameters in ``params`` and accumulates gradients
into ``grads`` during ``backward``.  Composite layers register children so
``named_params`` / ``named_grads`` return flat ``{"a.b.w": array}`` views
that alias the live arrays (optimizers update them in place).
"""
import math

import numpy as np
from scipy.special import erf

from .. import kernels
from ..errors import ConfigError, EmptyAttentionRowError, NumericalError, ShapeError

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def masked_softmax(scores, mask):
    """Row softmax restricted to ``mask``; masked entries get exactly zero.

    ``scores`` may carry leading batch axes; ``mask`` broadcasts over them.
    """
    scores = np.asarray(scores)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(f"scores {scores.shape} and mask {mask.shape} differ")
    empty = ~mask.any(axis=-1)
    if empty.any():
        row = int(np.argwhere(empty)[0][-1])
        raise EmptyAttentionRowError(f"attention row {row} has no admissible key")
    if scores.ndim == 2 and mask.ndim == 2:
        return kernels.masked_softmax(scores, mask).astype(scores.dtype, copy=False)
    masked = np.where(mask, scores, -np.inf)
    masked = masked - masked.max(axis=-1, keepdims=True)
    e = np.exp(masked)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gain, bias, eps=1e-5):
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    x = np.asarray(x)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError("gain/bias must match the last dimension of x")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT_HALF))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def sinusoidal_embedding(positions, dim, max_period=10000.0):
    """``[len(positions), dim]`` cos/sin features; odd ``dim`` pads a zero column."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    args = positions[:, None] * freqs[None, :]
    out = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        out = np.concatenate([out, np.zeros((len(positions), 1))], axis=1)
    return out


class Module:
    """Parameter container with child registration."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.no_decay = set()
        self.children = {}

    def add_param(self, name, value, decay=True):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        if not decay:
            self.no_decay.add(name)

    def add_child(self, name, module):
        self.children[name] = module
        return module

    def named_params(self, prefix=""):
        out = {prefix + k: v for k, v in self.params.items()}
        for cname, child in self.children.items():
            out.update(child.named_params(f"{prefix}{cname}."))
        return out

    def named_grads(self, prefix=""):
        out = {prefix + k: v for k, v in self.grads.items()}
        for cname, child in self.children.items():
            out.update(child.named_grads(f"{prefix}{cname}."))
        return out

    def no_decay_names(self, prefix=""):
        out = {prefix + k for k in self.no_decay}
        for cname, child in self.children.items():
            out |= child.no_decay_names(f"{prefix}{cname}.")
        return out

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0
        for child in self.children.values():
            child.zero_grad()

    def astype(self, dtype):
        """Cast parameters and gradients in place (new arrays)."""
        for k in list(self.params):
            self.params[k] = self.params[k].astype(dtype)
            self.grads[k] = np.zeros_like(self.params[k])
        for child in self.children.values():
            child.astype(dtype)
        return self

    def set_param(self, qualified, value):
        """Overwrite a parameter's contents by dotted name, keeping identity."""
        target = self.named_params()[qualified]
        target[...] = value

    def parameter_count(self):
        return sum(int(v.size) for v in self.named_params().values())


class Linear(Module):
    def __init__(self, d_in, d_out, rng=None, dtype=np.float32, init_scale=None, bias=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = init_scale if init_scale is not None else 1.0 / math.sqrt(d_in)
        self.add_param("w", (rng.standard_normal((d_in, d_out)) * scale).astype(dtype))
        self.bias = bias
        if bias:
            self.add_param("b", np.zeros(d_out, dtype=dtype), decay=False)
        self._x = None

    def forward(self, x):
        self._x = x
        y = x @ self.params["w"]
        return y + self.params["b"] if self.bias else y

    def backward(self, dy):
        x = self._x
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.grads["w"] += x2.T @ dy2
        if self.bias:
            self.grads["b"] += dy2.sum(axis=0)
        return dy @ self.params["w"].T


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        if eps <= 0:
            raise ConfigError(f"layer_norm eps must be positive, got {eps}")
        self.eps = eps
        self.add_param("gain", np.ones(dim, dtype=dtype), decay=False)
        self.add_param("bias", np.zeros(dim, dtype=dtype), decay=False)
        self._cache = None

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.params["gain"] + self.params["bias"]

    def backward(self, dy):
        xhat, inv = self._cache
        d = xhat.shape[-1]
        self.grads["gain"] += (dy * xhat).reshape(-1, d).sum(axis=0)
        self.grads["bias"] += dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.params["gain"]
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class GELU(Module):
    def forward(self, x):
        self._x = x
        return gelu(x)

    def backward(self, dy):
        return dy * gelu_grad(self._x)


class MLP(Module):
    def __init__(self, dim, hidden, rng=None, dtype=np.float32):
        super().__init__()
        self.fc1 = self.add_child("fc1", Linear(dim, hidden, rng, dtype))
        self.act = GELU()
        self.fc2 = self.add_child("fc2", Linear(hidden, dim, rng, dtype))

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


class MaskedSelfAttention(Module):
    """Multi-head self-attention under a boolean ``[N, N]`` mask.

    Scores are scaled by ``1/sqrt(head_dim)`` before the masked softmax.
    Keys carry no bias: a key bias shifts each score row by a constant and
    has identically zero gradient.
    """

    def __init__(self, dim, heads, rng=None, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = self.add_child("q", Linear(dim, dim, rng, dtype))
        self.k = self.add_child("k", Linear(dim, dim, rng, dtype, bias=False))
        self.v = self.add_child("v", Linear(dim, dim, rng, dtype))
        self.proj = self.add_child("proj", Linear(dim, dim, rng, dtype))
        self._cache = None

    def _split(self, t):
        n = t.shape[0]
        return t.reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)

    def _merge(self, t):
        return t.transpose(1, 0, 2).reshape(t.shape[1], self.dim)

    def forward(self, x, mask):
        n = x.shape[0]
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, n):
            raise ShapeError(f"mask {mask.shape} does not match sequence length {n}")
        q = self._split(self.q.forward(x))
        k = self._split(self.k.forward(x))
        v = self._split(self.v.forward(x))
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        p = masked_softmax(scores, mask).astype(x.dtype, copy=False)
        o = p @ v
        self._cache = (q, k, v, p, scale)
        return self.proj.forward(self._merge(o))

    def backward(self, dy):
        q, k, v, p, scale = self._cache
        do = self._split(self.proj.backward(dy))
        dv = p.transpose(0, 2, 1) @ do
        dp = do @ v.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dq = (ds @ k) * scale
        dk = (ds.transpose(0, 2, 1) @ q) * scale
        return (self.q.backward(self._merge(dq)) + self.k.backward(self._merge(dk))
                + self.v.backward(self._merge(dv)))

    def attention_probs(self):
        """Probabilities from the most recent forward pass, ``[heads, N, N]``."""
        return self._cache[3]


class TimestepEmbedding(Module):
    """Sinusoidal features of a scalar timestep followed by a GELU MLP."""

    def __init__(self, freq_dim, dim, rng=None, dtype=np.float32):
        super().__init__()
        self.freq_dim = freq_dim
        self.fc1 = self.add_child("fc1", Linear(freq_dim, dim, rng, dtype))
        self.act = GELU()
        self.fc2 = self.add_child("fc2", Linear(dim, dim, rng, dtype))
        self._t = None

    def forward(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        self._t = t
        feats = sinusoidal_embedding(t, self.freq_dim).astype(self.fc1.params["w"].dtype)
        return self.fc2.forward(self.act.forward(self.fc1.forward(feats)))

    def backward(self, dy):
        dfeat = self.fc1.backward(self.act.backward(self.fc2.backward(dy)))
        half = self.freq_dim // 2
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
        args = self._t[:, None] * freqs[None, :]
        # d cos = -sin * f ; d sin = cos * f
        dt = (dfeat[:, :half] * (-np.sin(args) * freqs)).sum(axis=1)
        dt += (dfeat[:, half:2 * half] * (np.cos(args) * freqs)).sum(axis=1)
        return dt


class DiTBlock(Module):
    """Pre-norm transformer block with additive timestep conditioning.

    ``h = x + temb``; ``h = h + attn(ln1(h))``; ``h = h + mlp(ln2(h))``.
    """

    def __init__(self, dim, heads, mlp_ratio=4.0, rng=None, dtype=np.float32, eps=1e-5):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.ln1 = self.add_child("ln1", LayerNorm(dim, eps, dtype))
        self.attn = self.add_child("attn", MaskedSelfAttention(dim, heads, rng, dtype))
        self.ln2 = self.add_child("ln2", LayerNorm(dim, eps, dtype))
        self.mlp = self.add_child("mlp", MLP(dim, hidden, rng, dtype))

    def forward(self, x, mask, temb=None):
        h = x if temb is None else x + temb
        h = h + self.attn.forward(self.ln1.forward(h), mask)
        return h + self.mlp.forward(self.ln2.forward(h))

    def backward(self, dy):
        """Returns ``(dx, dtemb)``; ``dtemb`` is summed over tokens."""
        dh = dy + self.ln2.backward(self.mlp.backward(dy))
        dh = dh + self.ln1.backward(self.attn.backward(dh))
        return dh, dh.sum(axis=0)


def assert_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {name}")
