"""Central finite-difference verification of analytic backward passes."""
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    passed: bool
    worst_name: str = ""
    checked: int = 0


def _rel_err(a, f):
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


def check_gradients(layer, x, tolerance=1e-4, h=1e-5, seed=0, max_per_tensor=None,
                    check_input=True, **context):
    """Compare ``layer.backward`` against central differences.

    The scalar probed is ``sum(R * layer.forward(x, **context))`` for a fixed
    Gaussian ``R``.  Every parameter element and every input element is
    perturbed unless ``max_per_tensor`` caps the count (a seeded subset is
    then checked).  Requires float64 parameters and input.
    """
    x = np.array(x, dtype=np.float64, copy=True) if np.asarray(x).dtype == np.float64 else None
    if x is None:
        raise ConfigError("gradient checks require float64 input")
    named = layer.named_params()
    for name, p in named.items():
        if p.dtype != np.float64:
            raise ConfigError(f"gradient checks require float64 parameters ({name} is {p.dtype})")

    rng = np.random.default_rng(seed)
    layer.zero_grad()
    y = layer.forward(x, **context)
    probe = rng.standard_normal(np.shape(y))
    dx = layer.backward(probe)
    if isinstance(dx, tuple):
        dx = dx[0]
    grads = {k: g.copy() for k, g in layer.named_grads().items()}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite analytic gradient for {name}")

    def objective_diff(target, idx):
        old = target[idx]
        target[idx] = old + h
        yp = layer.forward(x, **context)
        target[idx] = old - h
        ym = layer.forward(x, **context)
        target[idx] = old
        return float(np.sum(probe * (yp - ym)) / (2.0 * h))

    worst = (0.0, -1, "")
    checked = 0
    tensors = list(named.items())
    if check_input:
        tensors.append(("<input>", x))
    for name, target in tensors:
        analytic = grads[name] if name != "<input>" else np.asarray(dx)
        flat_idx = np.arange(target.size)
        if max_per_tensor is not None and target.size > max_per_tensor:
            flat_idx = np.sort(rng.choice(target.size, max_per_tensor, replace=False))
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), target.shape)
            numeric = objective_diff(target, idx)
            a = float(analytic[idx])
            if not np.isfinite(numeric):
                raise NumericalError(f"non-finite numeric gradient for {name}{idx}")
            err = float(_rel_err(a, numeric))
            checked += 1
            if err > worst[0] or worst[1] < 0:
                worst = (err, int(fi), name)
    return GradCheckReport(
        max_relative_error=worst[0],
        worst_parameter_index=worst[1],
        passed=worst[0] < tolerance,
        worst_name=worst[2],
        checked=checked,
    )
