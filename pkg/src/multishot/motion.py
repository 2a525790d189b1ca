"""Camera-motion metrics from optical flow and RANSAC homographies.

Correspondences are expressed relative to the frame centre, so a homography's
translation column is pure pan/tilt even when the camera also zooms.
"""
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import EstimationFailed, ShapeError, ValidationError

DEFAULT_THRESHOLDS = (8.0, 8.0, 0.4)


@dataclass
class FlowField:
    data: np.ndarray  # [H, W, 2] as (dx, dy) in pixels/frame

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ShapeError(f"flow must be [H, W, 2], got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("flow contains non-finite values")

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def dx(self):
        return self.data[..., 0]

    @property
    def dy(self):
        return self.data[..., 1]


@dataclass
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or abs(m[2, 2]) < 1e-12:
            raise ValidationError("homography must be 3x3 with a non-zero (2,2) entry")
        self.matrix = m / m[2, 2]
        if abs(np.linalg.det(self.matrix)) <= 1e-9:
            raise ValidationError("homography is singular")

    @property
    def translation(self):
        return float(self.matrix[0, 2]), float(self.matrix[1, 2])

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        h = np.c_[pts, np.ones(len(pts))] @ self.matrix.T
        return h[:, :2] / h[:, 2:3]


@dataclass
class MotionMetrics:
    t_x: float
    t_y: float
    s: float

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ flow


def to_gray(frame):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f
    if f.ndim == 3 and f.shape[0] in (1, 3, 4):
        return f[:3].mean(axis=0)
    if f.ndim == 3 and f.shape[2] in (1, 3, 4):
        return f[..., :3].mean(axis=2)
    raise ShapeError(f"cannot convert frame of shape {f.shape} to grayscale")


def _downsample(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    return img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _dense_from_blocks(bdx, bdy, shape, block):
    """Bilinear interpolation of block-centre vectors onto every pixel."""
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    cy = (yy - (block - 1) / 2.0) / block
    cx = (xx - (block - 1) / 2.0) / block
    coords = np.array([cy, cx])
    dx = ndimage.map_coordinates(bdx.astype(np.float64), coords, order=1, mode="nearest")
    dy = ndimage.map_coordinates(bdy.astype(np.float64), coords, order=1, mode="nearest")
    return np.stack([dx, dy], axis=-1)


def compute_flow(frame_a, frame_b, levels=3, block=8, radius=8, backend=None):
    """Coarse-to-fine SAD block matching; dense flow by bilinear upsampling."""
    a, b = to_gray(frame_a), to_gray(frame_b)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < block or a.shape[1] < block:
        raise ShapeError(f"frames {a.shape} smaller than one {block}x{block} block")
    pyr = [(a, b)]
    while len(pyr) < levels:
        pa, pb = _downsample(pyr[-1][0]), _downsample(pyr[-1][1])
        if pa.shape[0] < block or pa.shape[1] < block:
            break
        pyr.append((pa, pb))
    bdx = bdy = None
    prev_shape = None
    for la, lb in reversed(pyr):
        nby, nbx = la.shape[0] // block, la.shape[1] // block
        if bdx is None:
            init_dx = np.zeros((nby, nbx), dtype=np.int64)
            init_dy = np.zeros((nby, nbx), dtype=np.int64)
        else:
            dense = _dense_from_blocks(bdx, bdy, prev_shape, block)
            # sample the coarse flow at this level's block centres, scaled x2
            ys = np.minimum((np.arange(nby) * block + block // 2) // 2, prev_shape[0] - 1)
            xs = np.minimum((np.arange(nbx) * block + block // 2) // 2, prev_shape[1] - 1)
            init_dx = np.rint(2.0 * dense[np.ix_(ys, xs)][..., 0]).astype(np.int64)
            init_dy = np.rint(2.0 * dense[np.ix_(ys, xs)][..., 1]).astype(np.int64)
        bdx, bdy, sad = kernels.block_match(la, lb, block, radius, init_dx, init_dy, backend=backend)
        if init_dx.any() or init_dy.any():
            # a bad coarse estimate must not trap the search: also try zero init
            zdx, zdy, zsad = kernels.block_match(la, lb, block, radius, backend=backend)
            better = zsad < sad
            bdx = np.where(better, zdx, bdx)
            bdy = np.where(better, zdy, bdy)
        prev_shape = la.shape
    return FlowField(_dense_from_blocks(bdx, bdy, a.shape, block))


def ingest_flow(flow):
    """Accept externally computed flow (array or FlowField) unchanged."""
    return flow if isinstance(flow, FlowField) else FlowField(flow)


FLOW_MAGIC = b"MSVF"


def write_flow(path, flow):
    data = np.ascontiguousarray(ingest_flow(flow).data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<2I", data.shape[0], data.shape[1]))
        fh.write(data.tobytes())


def read_flow(path):
    with open(path, "rb") as fh:
        if fh.read(4) != FLOW_MAGIC:
            raise ValidationError(f"{path}: bad flow magic")
        H, W = struct.unpack("<2I", fh.read(8))
        raw = fh.read(H * W * 2 * 4)
    if len(raw) != H * W * 8:
        raise ValidationError(f"{path}: truncated flow payload")
    return FlowField(np.frombuffer(raw, dtype="<f4").reshape(H, W, 2).astype(np.float32))


# ------------------------------------------------------------------ homography


def frame_center(shape):
    H, W = shape
    return np.array([(W - 1) / 2.0, (H - 1) / 2.0])


def grid_correspondences(flow, grid=16):
    """Points on a ``grid x grid`` lattice and their flow targets, centred."""
    flow = ingest_flow(flow)
    H, W = flow.shape
    ys = np.linspace(0, H - 1, min(grid, H)).round().astype(int)
    xs = np.linspace(0, W - 1, min(grid, W)).round().astype(int)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    p = np.c_[gx.ravel(), gy.ravel()].astype(np.float64)
    q = p + flow.data[gy.ravel(), gx.ravel()].astype(np.float64)
    c = frame_center((H, W))
    return p - c, q - c


def _normalize(pts):
    mean = pts.mean(axis=0)
    d = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 1e-12 else 1.0
    T = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])
    return (pts - mean) * s, T


def fit_homography(src, dst):
    """Normalised DLT; least squares when more than four points are given."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ns, Ts = _normalize(src)
    nd, Td = _normalize(dst)
    n = len(src)
    A = np.zeros((2 * n, 9))
    x, y = ns[:, 0], ns[:, 1]
    u, v = nd[:, 0], nd[:, 1]
    A[0::2, 0:3] = np.c_[x, y, np.ones(n)]
    A[0::2, 6:9] = -u[:, None] * np.c_[x, y, np.ones(n)]
    A[1::2, 3:6] = np.c_[x, y, np.ones(n)]
    A[1::2, 6:9] = -v[:, None] * np.c_[x, y, np.ones(n)]
    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    Hm = np.linalg.inv(Td) @ Hn @ Ts
    return Hm / Hm[2, 2]


def _degenerate(pts, tol=1e-6):
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                a, b, c = pts[i], pts[j], pts[k]
                if abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) < tol:
                    return True
    return False


def _reproj_error(Hm, src, dst):
    h = np.c_[src, np.ones(len(src))] @ Hm.T
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = h[:, :2] / h[:, 2:3]
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def ransac_homography(src, dst, iters=500, inlier_px=2.0, seed=0):
    """4-point RANSAC with inlier refit; returns ``(Homography, inlier_mask)``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4:
        raise EstimationFailed(f"need >= 4 correspondences, have {n}")
    rng = np.random.default_rng(seed)
    best = None
    best_count = -1
    attempts = 0
    done = 0
    while done < iters and attempts < 20 * iters:
        attempts += 1
        idx = rng.choice(n, 4, replace=False)
        if _degenerate(src[idx]) or _degenerate(dst[idx]):
            continue
        done += 1
        Hm = fit_homography(src[idx], dst[idx])
        if not np.all(np.isfinite(Hm)):
            continue
        inl = _reproj_error(Hm, src, dst) < inlier_px
        count = int(inl.sum())
        if count > best_count:
            best, best_count = inl, count
            if count == n:
                break
    if best is None or best_count < 4:
        raise EstimationFailed(f"RANSAC found {max(best_count, 0)} inliers (< 4)")
    Hm = fit_homography(src[best], dst[best])
    # one refinement pass: re-select inliers under the refit model
    inl = _reproj_error(Hm, src, dst) < inlier_px
    if inl.sum() >= best_count:
        best = inl
        Hm = fit_homography(src[best], dst[best])
    return Homography(Hm), best


def estimate_homography_ransac(flow, iters=500, inlier_px=2.0, seed=0, grid=16):
    """Homography between consecutive frames from a flow field.

    Returns ``(Homography, inlier_ratio)``.
    """
    src, dst = grid_correspondences(flow, grid)
    H, inl = ransac_homography(src, dst, iters, inlier_px, seed)
    return H, float(inl.mean())


# ------------------------------------------------------------------ metrics


def radial_divergence(flow):
    """Mean outward flow component, normalised by mean distance to centre."""
    flow = ingest_flow(flow)
    H, W = flow.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    c = frame_center((H, W))
    rx, ry = xx - c[0], yy - c[1]
    r = np.sqrt(rx * rx + ry * ry)
    ok = r > 1e-9
    radial = (flow.dx[ok] * rx[ok] + flow.dy[ok] * ry[ok]) / r[ok]
    return float(radial.mean() / r[ok].mean())


def homography_flow(h, shape):
    """Dense flow induced by a centre-referenced homography."""
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    pts = np.c_[xx.ravel(), yy.ravel()] - frame_center(shape)
    return FlowField((h.apply(pts) - pts).reshape(H, W, 2))


def motion_metrics(homographies, flow_fields):
    """Pan/tilt = mean homography translation; zoom = mean radial divergence."""
    if not homographies or len(homographies) != len(flow_fields):
        raise ValidationError("need one homography per flow field and at least one pair")
    tx = float(np.mean([h.translation[0] for h in homographies]))
    ty = float(np.mean([h.translation[1] for h in homographies]))
    s = float(np.mean([radial_divergence(f) for f in flow_fields]))
    return MotionMetrics(tx, ty, s)


def passes_motion_filter(m, thresholds=DEFAULT_THRESHOLDS):
    """True when any of ``|t_x|, |t_y|, |s|`` exceeds its threshold."""
    tx, ty, ts = thresholds
    return abs(m.t_x) > tx or abs(m.t_y) > ty or abs(m.s) > ts


def _mapped(h, shape):
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    c = frame_center((H, W))
    q = h.apply(np.c_[xx.ravel(), yy.ravel()] - c) + c
    inside = (q[:, 0] >= 0) & (q[:, 0] <= W - 1) & (q[:, 1] >= 0) & (q[:, 1] <= H - 1)
    return q, inside.reshape(H, W)


def warp_by_homography(frame, h):
    """``out(p) = frame(h(p))`` for every pixel ``p`` (centre-referenced), edges clamped.

    Also returns the mask of pixels whose source lies inside the frame.
    """
    img = to_gray(frame)
    H, W = img.shape
    q, inside = _mapped(h, img.shape)
    coords = np.array([q[:, 1].reshape(H, W), q[:, 0].reshape(H, W)])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest"), inside


def _alignment_error(a, b, h, min_cover=0.05):
    warped, inside = warp_by_homography(b, h)
    if inside.mean() < min_cover:
        return np.inf
    # median, so content that does not follow the camera cannot pull the fit
    return float(np.median(np.abs(warped - a)[inside]))


def pair_homography(frame_a, frame_b, iters=300, inlier_px=2.0, seed=0, bidirectional=True,
                    backend=None, refine=3, scale_search=True):
    """Homography taking ``frame_a`` to ``frame_b`` and its inlier ratio.

    Block matching handles shrinking content much better than magnified
    content, so with ``bidirectional`` the reverse pair is also fitted and
    its inverse is used when it explains more of the grid.  Each of the
    ``refine`` passes then warps ``frame_b`` back onto ``frame_a`` with the
    current estimate, fits the residual on the part of ``frame_a`` still in
    view and composes it; a pass is kept only if it lowers the mean
    absolute difference over that part.  This recovers scale changes too
    large for translation-only blocks.  ``scale_search`` first tries pure
    scalings (0.5x to 2x) with the fitted translation and with none, and
    starts from whichever candidate aligns the frames best.
    """
    a, b = to_gray(frame_a), to_gray(frame_b)
    flow = compute_flow(a, b, backend=backend)
    H, ratio = estimate_homography_ransac(flow, iters, inlier_px, seed=seed)
    if bidirectional:
        back = compute_flow(b, a, backend=backend)
        Hb, rb = estimate_homography_ransac(back, iters, inlier_px, seed=seed + 7919)
        if rb > ratio:
            try:
                H, ratio = Hb.inverse(), rb
            except ValidationError:
                pass
    err = _alignment_error(a, b, H) if refine else np.inf
    if refine and scale_search:
        # global start: isotropic scales about the fitted translation and about none
        for tx, ty in {H.translation, (0.0, 0.0)}:
            for z in np.geomspace(0.5, 2.0, 29):
                cand = Homography(np.array([[z, 0.0, tx], [0.0, z, ty], [0.0, 0.0, 1.0]]))
                e = _alignment_error(a, b, cand)
                if e < err:
                    H, err = cand, e
        if H.matrix[0, 1] == 0 and H.matrix[2, 0] == 0 and H.matrix[2, 1] == 0:
            z0, (tx, ty) = H.matrix[0, 0], H.translation
            for z in z0 * np.geomspace(0.975, 1.025, 11):
                cand = Homography(np.array([[z, 0.0, tx], [0.0, z, ty], [0.0, 0.0, 1.0]]))
                e = _alignment_error(a, b, cand)
                if e < err:
                    H, err = cand, e
    for k in range(refine):
        warped, inside = warp_by_homography(b, H)
        src, dst = grid_correspondences(compute_flow(a, warped, backend=backend))
        c = frame_center(a.shape)
        px = np.rint(src + c).astype(int)
        keep = inside[px[:, 1], px[:, 0]]
        if keep.sum() < 8:
            break
        try:
            Hr, inl = ransac_homography(src[keep], dst[keep], iters, inlier_px, seed + 104729 * (k + 1))
            cand = Homography(H.matrix @ Hr.matrix)
        except (EstimationFailed, ValidationError):
            break
        cand_err = _alignment_error(a, b, cand)
        if not cand_err < err:
            break
        H, err, ratio = cand, cand_err, float(inl.mean())
    return H, ratio, flow


def analyze_video(clip, pair_stride=1, max_pairs=None, seed=0, iters=300, inlier_px=2.0,
                  zoom_source="homography", bidirectional=True, backend=None):
    """Flow + homography per consecutive frame pair, reduced to ``MotionMetrics``.

    With ``zoom_source="homography"`` the divergence is measured on the flow
    induced by each RANSAC homography (outlier blocks such as content leaving
    the frame are discarded); ``"raw"`` uses the forward block-matching flow.
    """
    if zoom_source not in ("homography", "raw"):
        raise ValidationError(f"unknown zoom source {zoom_source!r}")
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    if len(frames) < 2:
        raise ValidationError("motion analysis needs at least two frames")
    starts = list(range(0, len(frames) - 1, max(1, pair_stride)))
    if max_pairs is not None and len(starts) > max_pairs:
        pick = np.linspace(0, len(starts) - 1, max_pairs).round().astype(int)
        starts = [starts[i] for i in pick]
    homs, flows = [], []
    for k, i in enumerate(starts):
        H, _, flow = pair_homography(frames[i], frames[i + 1], iters, inlier_px, seed + k,
                                     bidirectional, backend)
        homs.append(H)
        flows.append(homography_flow(H, flow.shape) if zoom_source == "homography" else flow)
    return motion_metrics(homs, flows)


def metrics_json(m, path=None):
    text = json.dumps(m.to_dict())
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text
