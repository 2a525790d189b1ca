"""Pure-Python/numpy versions of the compiled kernels.

Semantics match ``_ckernels`` exactly; only summation order may differ.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def masked_softmax(scores, mask):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"attention row {int(np.argmax(empty))} has no admissible key")
    masked = np.where(mask, scores, -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(masked - mx), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def block_match(ref, tgt, block, radius, init_dx, init_dy):
    H, W = ref.shape
    nby, nbx = init_dx.shape
    out_dx = np.zeros((nby, nbx), dtype=np.int64)
    out_dy = np.zeros((nby, nbx), dtype=np.int64)
    out_sad = np.full((nby, nbx), np.inf)
    offsets = np.arange(-radius, radius + 1)
    for by in range(nby):
        y0 = by * block
        for bx in range(nbx):
            x0 = bx * block
            cy0, cx0 = int(init_dy[by, bx]), int(init_dx[by, bx])
            patch = ref[y0:y0 + block, x0:x0 + block]
            # candidate top-left corners, clipped to the frame
            ys = y0 + cy0 + offsets
            xs = x0 + cx0 + offsets
            vy = (ys >= 0) & (ys + block <= H)
            vx = (xs >= 0) & (xs + block <= W)
            best, best_dx, best_dy = np.inf, 0, 0
            if 0 <= y0 + cy0 <= H - block and 0 <= x0 + cx0 <= W - block:
                best = np.abs(patch - tgt[y0 + cy0:y0 + cy0 + block,
                                          x0 + cx0:x0 + cx0 + block]).sum()
                best_dx, best_dy = cx0, cy0
            if vy.any() and vx.any():
                ylo, yhi = ys[vy][0], ys[vy][-1]
                xlo, xhi = xs[vx][0], xs[vx][-1]
                region = tgt[ylo:yhi + block, xlo:xhi + block]
                windows = sliding_window_view(region, (block, block))
                sad = np.abs(windows - patch).sum(axis=(2, 3))
                cand = np.argwhere(sad < best)
                if len(cand):
                    vals = sad[cand[:, 0], cand[:, 1]]
                    k = int(np.argmin(vals))  # first minimum in raster order
                    iy, ix = cand[k]
                    best = vals[k]
                    best_dy = int(ylo + iy - y0)
                    best_dx = int(xlo + ix - x0)
            out_dx[by, bx] = best_dx
            out_dy[by, bx] = best_dy
            out_sad[by, bx] = best
    return out_dx, out_dy, out_sad
