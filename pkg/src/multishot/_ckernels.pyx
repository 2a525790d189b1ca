# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: masked row softmax and SAD block matching."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()


def masked_softmax(double[:, ::1] scores, cnp.uint8_t[:, ::1] mask):
    cdef Py_ssize_t n = scores.shape[0], m = scores.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, total, v
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        mx = -INFINITY
        for j in range(m):
            if mask[i, j] and scores[i, j] > mx:
                mx = scores[i, j]
        if mx == -INFINITY:
            raise ValueError(f"attention row {i} has no admissible key")
        total = 0.0
        for j in range(m):
            if mask[i, j]:
                v = exp(scores[i, j] - mx)
                out[i, j] = v
                total += v
        for j in range(m):
            out[i, j] /= total
    return out_arr


cdef inline double _sad(double[:, ::1] ref, double[:, ::1] tgt, Py_ssize_t y0,
                       Py_ssize_t x0, long cy, long cx, int block, double bound):
    cdef Py_ssize_t y, x
    cdef double sad = 0.0
    for y in range(block):
        for x in range(block):
            sad += fabs(ref[y0 + y, x0 + x] - tgt[y0 + cy + y, x0 + cx + x])
        if sad >= bound:
            return sad
    return sad


def block_match(double[:, ::1] ref, double[:, ::1] tgt, int block, int radius,
                long[:, ::1] init_dx, long[:, ::1] init_dy):
    """Exhaustive SAD search around an initial displacement per block.

    The initial displacement is scored first; any other offset must be
    strictly better, scanned in (dy, dx) raster order.  Returns
    ``(dx, dy, sad)`` per block; ``sad`` is inf where no candidate fits.
    """
    cdef Py_ssize_t H = ref.shape[0], W = ref.shape[1]
    cdef Py_ssize_t nby = init_dx.shape[0], nbx = init_dx.shape[1]
    cdef Py_ssize_t by, bx, y0, x0
    cdef long dy, dx, cy, cx, best_dx, best_dy
    cdef double sad, best
    out_dx_arr = np.zeros((nby, nbx), dtype=np.int64)
    out_dy_arr = np.zeros((nby, nbx), dtype=np.int64)
    out_sad_arr = np.full((nby, nbx), np.inf, dtype=np.float64)
    cdef long[:, ::1] out_dx = out_dx_arr
    cdef long[:, ::1] out_dy = out_dy_arr
    cdef double[:, ::1] out_sad = out_sad_arr
    for by in range(nby):
        y0 = by * block
        for bx in range(nbx):
            x0 = bx * block
            best = INFINITY
            best_dx = 0
            best_dy = 0
            cy = init_dy[by, bx]
            cx = init_dx[by, bx]
            if 0 <= y0 + cy and y0 + cy + block <= H and 0 <= x0 + cx and x0 + cx + block <= W:
                best = _sad(ref, tgt, y0, x0, cy, cx, block, INFINITY)
                best_dx = cx
                best_dy = cy
            for dy in range(-radius, radius + 1):
                cy = init_dy[by, bx] + dy
                if y0 + cy < 0 or y0 + cy + block > H:
                    continue
                for dx in range(-radius, radius + 1):
                    if dx == 0 and dy == 0:
                        continue
                    cx = init_dx[by, bx] + dx
                    if x0 + cx < 0 or x0 + cx + block > W:
                        continue
                    sad = _sad(ref, tgt, y0, x0, cy, cx, block, best)
                    if sad < best:
                        best = sad
                        best_dx = cx
                        best_dy = cy
            out_dx[by, bx] = best_dx
            out_dy[by, bx] = best_dy
            out_sad[by, bx] = best
    return out_dx_arr, out_dy_arr, out_sad_arr
