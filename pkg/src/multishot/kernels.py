"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``MULTISHOT_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MULTISHOT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def masked_softmax(scores, mask, backend=None):
    impl = _select(backend)
    out = impl.masked_softmax(np.ascontiguousarray(scores, dtype=np.float64),
                              np.ascontiguousarray(mask, dtype=np.uint8))
    return out


def block_match(ref, tgt, block, radius, init_dx=None, init_dy=None, backend=None):
    """Per-block integer displacement of ``ref`` blocks found in ``tgt``.

    Returns ``(dx, dy, sad)`` arrays of shape ``(H // block, W // block)``.
    """
    impl = _select(backend)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    tgt = np.ascontiguousarray(tgt, dtype=np.float64)
    nby, nbx = ref.shape[0] // block, ref.shape[1] // block
    if init_dx is None:
        init_dx = np.zeros((nby, nbx), dtype=np.int64)
    if init_dy is None:
        init_dy = np.zeros((nby, nbx), dtype=np.int64)
    return impl.block_match(ref, tgt, int(block), int(radius),
                            np.ascontiguousarray(init_dx, dtype=np.int64),
                            np.ascontiguousarray(init_dy, dtype=np.int64))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {backend!r}")
