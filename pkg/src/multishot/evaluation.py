"""Shot-cut detection, duration error, embedding consistency and reporting."""
import csv
import json
import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .palette import BACKGROUNDS, CHARACTER_HUES, caption_descriptors

# ------------------------------------------------------------------ cuts / MSDE


@dataclass
class CutList:
    cuts: list

    def __post_init__(self):
        self.cuts = [int(c) for c in self.cuts]
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValidationError(f"cut indices must be strictly increasing: {self.cuts}")

    def __iter__(self):
        return iter(self.cuts)

    def __len__(self):
        return len(self.cuts)

    def __eq__(self, other):
        if isinstance(other, CutList):
            return self.cuts == other.cuts
        return self.cuts == list(other)


def frame_differences(frames):
    """``d[i-1]`` = mean absolute difference between frames ``i-1`` and ``i``."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.abs(np.diff(frames, axis=0)).reshape(len(frames) - 1, -1).mean(axis=1)


def detect_cuts(video, threshold=3.0, window=15, min_diff=0.02, merge_gap=2):
    """Frames ``i`` where ``d(i-1, i)`` exceeds ``threshold`` times the median
    of ``d`` over a centred ``window``-frame neighbourhood.

    ``min_diff`` is an absolute floor (pixel units in [0, 1]) so that
    near-static footage with a zero median does not fire on noise.
    Detections within ``merge_gap`` frames of an earlier one are merged
    into it.
    """
    frames = video.frames if hasattr(video, "frames") else np.asarray(video)
    if len(frames) < 2:
        raise ValidationError("cut detection needs at least two frames")
    d = frame_differences(frames)
    half = window // 2
    cuts = []
    for k, value in enumerate(d):
        lo, hi = max(0, k - half), min(len(d), k + half + 1)
        med = float(np.median(d[lo:hi]))
        if value > threshold * med and value > min_diff:
            i = k + 1
            if cuts and i - cuts[-1] <= merge_gap:
                continue
            cuts.append(i)
    return CutList(cuts)


def cuts_to_durations(cuts, n_frames):
    edges = [0, *list(cuts), n_frames]
    return [b - a for a, b in zip(edges[:-1], edges[1:])]


def duration_error(gt_durations, detected_durations):
    """Mean absolute per-shot error with in-order pairing.

    Unpaired shots on either side are charged their full duration; the mean
    runs over ``max(len(gt), len(detected))`` shots.
    """
    n = max(len(gt_durations), len(detected_durations))
    total = 0.0
    for i in range(n):
        g = gt_durations[i] if i < len(gt_durations) else 0
        p = detected_durations[i] if i < len(detected_durations) else 0
        total += abs(g - p)
    return total / n


def msde(gt_durations, video, threshold=3.0, **detect_kwargs):
    frames = video.frames if hasattr(video, "frames") else np.asarray(video)
    if sum(gt_durations) != len(frames):
        raise ValidationError(
            f"ground-truth durations sum to {sum(gt_durations)}, video has {len(frames)} frames")
    cuts = detect_cuts(frames, threshold, **detect_kwargs)
    return duration_error(list(gt_durations), cuts_to_durations(cuts, len(frames)))


# ------------------------------------------------------------------ colour helpers


def rgb_to_hsv(frame):
    """``[3, H, W]`` RGB in [0, 1] -> hue (degrees), saturation, value arrays."""
    rgb = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    r, g, b = rgb[0], rgb[1], rgb[2]
    v = rgb.max(axis=0)
    c = v - rgb.min(axis=0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe) % 6.0,
                 np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(c > 0, h * 60.0, 0.0)
    return h, s, v


# ------------------------------------------------------------------ detector / embedder


@dataclass
class Detection:
    mask: np.ndarray  # bool [H, W]
    bbox: tuple  # (y0, x0, y1, x1), end-exclusive

    @property
    def area(self):
        return int(self.mask.sum())


class ToyDetector:
    """Connected components of strongly saturated, bright pixels."""

    name = "toy"

    def __init__(self, sv_threshold=0.6, min_area_frac=0.004):
        self.sv_threshold = sv_threshold
        self.min_area_frac = min_area_frac

    def __call__(self, frame):
        from scipy import ndimage

        _, s, v = rgb_to_hsv(frame)
        fg = s * v > self.sv_threshold
        labels, n = ndimage.label(fg)
        min_area = max(1, int(round(self.min_area_frac * fg.size)))
        found = []
        for k, sl in enumerate(ndimage.find_objects(labels), start=1):
            comp = labels == k
            if comp.sum() >= min_area:
                found.append(Detection(comp, (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)))
        return found


def hu_moments(weights):
    """Seven Hu invariants of a non-negative 2-D weight image, log-compressed."""
    w = np.asarray(weights, dtype=np.float64)
    m00 = w.sum()
    if m00 <= 0:
        return np.zeros(7)
    yy, xx = np.mgrid[: w.shape[0], : w.shape[1]].astype(np.float64)
    cx, cy = (w * xx).sum() / m00, (w * yy).sum() / m00
    dx, dy = xx - cx, yy - cy

    def eta(p, q):
        return (w * dx ** p * dy ** q).sum() / m00 ** (1 + (p + q) / 2)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    a, b = n30 + n12, n21 + n03
    hu = np.array([
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11 ** 2,
        (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2,
        a ** 2 + b ** 2,
        (n30 - 3 * n12) * a * (a ** 2 - 3 * b ** 2) + (3 * n21 - n03) * b * (3 * a ** 2 - b ** 2),
        (n20 - n02) * (a ** 2 - b ** 2) + 4 * n11 * a * b,
        (3 * n21 - n03) * a * (a ** 2 - 3 * b ** 2) - (n30 - 3 * n12) * b * (3 * a ** 2 - b ** 2),
    ])
    return np.sign(hu) * np.log10(1.0 + np.abs(hu) * 1e3)


class ToyEmbedder:
    """Square-rooted 16x2x2 HSV histogram joined with shape moments, unit norm.

    Hue bins are centred on multiples of 22.5 degrees.  The value split sits
    at 0.7, away from both the dark backgrounds and the bright characters of
    the synthetic palette, so small brightness changes do not move pixels
    between bins.
    """

    name = "toy"

    def __init__(self, moment_weight=0.45, s_split=0.5, v_split=0.7):
        self.moment_weight = moment_weight
        self.s_split = s_split
        self.v_split = v_split

    def histogram(self, frame, mask):
        h, s, v = rgb_to_hsv(frame)
        hb = np.floor(((h + 11.25) % 360.0) / 22.5).astype(int) % 16
        idx = hb * 4 + (s >= self.s_split) * 2 + (v >= self.v_split)
        counts = np.bincount(idx[mask], minlength=64).astype(np.float64)
        return counts / max(counts.sum(), 1.0)

    def __call__(self, frame, mask):
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValidationError("cannot embed an empty region")
        hist = np.sqrt(self.histogram(frame, mask))
        mom = hu_moments(mask)
        mom = mom / max(np.linalg.norm(mom), 1e-12)
        vec = np.concatenate([hist * math.sqrt(1 - self.moment_weight ** 2), mom * self.moment_weight])
        return vec / np.linalg.norm(vec)


class ExternalCommandEmbedder:
    """Runs ``command <png>`` and reads a JSON list of floats from stdout.

    Pixels outside the region are written as black before the call.
    """

    def __init__(self, command, timeout=60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.name = "external-cmd"
        self.timeout = timeout

    def __call__(self, frame, mask):
        from PIL import Image

        img = np.where(np.asarray(mask, dtype=bool)[None], np.clip(frame, 0, 1), 0.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "region.png")
            Image.fromarray((img.transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)).save(path)
            out = subprocess.run(self.command + [path], capture_output=True, text=True,
                                 timeout=self.timeout, check=True)
        vec = np.asarray(json.loads(out.stdout), dtype=np.float64)
        norm = np.linalg.norm(vec)
        if vec.ndim != 1 or not np.isfinite(norm) or norm == 0:
            raise ValidationError(f"external embedder returned an unusable vector of shape {vec.shape}")
        return vec / norm


def make_embedder(backend="toy", command=None):
    if backend == "toy":
        return ToyEmbedder()
    if backend == "external-cmd":
        if not command:
            raise ValidationError("the external-cmd backend needs a command")
        return ExternalCommandEmbedder(command)
    raise ValidationError(f"unknown embedding backend {backend!r}")


# ------------------------------------------------------------------ consistency metrics


def middle_frame_indices(durations):
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]]).astype(int)
    return [int(s + d // 2) for s, d in zip(starts, durations)]


def _frames_of(video):
    return video.frames if hasattr(video, "frames") else np.asarray(video)


def _main_detection(frame, detector):
    found = detector(frame)
    if not found:
        return None
    return max(found, key=lambda d: d.area)


def _pairwise_mean(vectors):
    sims = [float(np.dot(a, b)) for i, a in enumerate(vectors) for b in vectors[i + 1:]]
    return float(np.mean(sims))


def _region_embeddings(video, durations, detector, embedder, background):
    frames = _frames_of(video)
    if len(durations) < 2:
        raise ValidationError("consistency metrics need at least two shots")
    out = []
    for i in middle_frame_indices(durations):
        det = _main_detection(frames[i], detector)
        if det is None:
            return None
        region = ~det.mask if background else det.mask
        if not region.any():
            return None
        out.append(embedder(frames[i], region))
    return out


def identity_consistency(video, durations, detector=None, embedder=None):
    """Mean pairwise cosine of foreground embeddings at shot middle frames, x100.

    Returns ``None`` when some middle frame has no detection.
    """
    vecs = _region_embeddings(video, durations, detector or ToyDetector(),
                              embedder or ToyEmbedder(), background=False)
    return None if vecs is None else 100.0 * _pairwise_mean(vecs)


def background_consistency(video, durations, detector=None, embedder=None):
    vecs = _region_embeddings(video, durations, detector or ToyDetector(),
                              embedder or ToyEmbedder(), background=True)
    return None if vecs is None else 100.0 * _pairwise_mean(vecs)


# ------------------------------------------------------------------ text alignment


class ToyAligner:
    """Scores a frame against the colour words of a caption.

    The background colour is the median of non-character pixels and the
    character hue is the circular mean over the largest detection; each
    descriptor contributes the softmax probability of the named colour among
    the palette entries.  The score is the mean over descriptors, x100.
    """

    name = "toy"

    def __init__(self, detector=None, rgb_temperature=0.01, hue_scale=30.0):
        self.detector = detector or ToyDetector()
        self.rgb_temperature = rgb_temperature
        self.hue_scale = hue_scale

    def __call__(self, frame, caption):
        desc = caption_descriptors(caption)
        if not desc:
            raise ValidationError(f"caption has no colour descriptors: {caption!r}")
        frame = np.asarray(frame, dtype=np.float64)
        det = _main_detection(frame, self.detector)
        fg = det.mask if det is not None else np.zeros(frame.shape[1:], dtype=bool)
        probs = []
        if "background" in desc:
            bg = np.median(frame[:, ~fg], axis=1) if (~fg).any() else frame.reshape(3, -1).mean(1)
            names = list(BACKGROUNDS)
            logits = np.array([-np.sum((bg - BACKGROUNDS[n]) ** 2) for n in names]) / self.rgb_temperature
            p = np.exp(logits - logits.max())
            probs.append(float(p[names.index(desc["background"])] / p.sum()))
        if "character" in desc and det is not None:
            h, _, _ = rgb_to_hsv(frame)
            ang = np.deg2rad(h[fg])
            mean_h = math.degrees(math.atan2(np.sin(ang).mean(), np.cos(ang).mean())) % 360.0
            names = list(CHARACTER_HUES)
            dist = np.array([(mean_h - CHARACTER_HUES[n] + 180.0) % 360.0 - 180.0 for n in names])
            logits = -(dist / self.hue_scale) ** 2
            p = np.exp(logits - logits.max())
            probs.append(float(p[names.index(desc["character"])] / p.sum()))
        if not probs:
            return 0.0
        return 100.0 * float(np.mean(probs))


def shot_alignment_scores(video, durations, captions, aligner=None):
    aligner = aligner or ToyAligner()
    if len(captions) != len(durations):
        raise ValidationError("one caption per shot is required")
    frames = _frames_of(video)
    return [aligner(frames[i], c) for i, c in zip(middle_frame_indices(durations), captions)]


def text_alignment(video, durations, captions, aligner=None):
    """Per-shot aligner score at the middle frame, averaged over shots."""
    return float(np.mean(shot_alignment_scores(video, durations, captions, aligner)))


# ------------------------------------------------------------------ reporting

METRICS = ("ic", "bc", "ta", "msde")
BG_CONDITIONS = ("diff", "same")


@dataclass
class EvalReport:
    per_sample: list  # dicts with id, n_shots, bg and one entry per metric (None = missing)
    groups: dict = field(default_factory=dict)  # "bg/n_shots" -> metric -> {mean, count, missing}
    metrics: tuple = METRICS

    def group(self, bg="all", n_shots="all"):
        return self.groups.get(f"{bg}/{n_shots}")

    def to_dict(self):
        return {"metrics": list(self.metrics), "groups": self.groups, "per_sample": self.per_sample}


def _summarize(rows, metrics):
    out = {}
    for m in metrics:
        vals = [r[m] for r in rows if r.get(m) is not None]
        out[m] = {
            "mean": float(sum(vals) / len(vals)) if vals else None,
            "count": len(vals),
            "missing": len(rows) - len(vals),
        }
    return out


def aggregate_report(samples, results, metrics=METRICS):
    """Group means by background condition and shot count.

    ``samples`` carry ``n_shots`` and ``bg`` ("same" or "diff"); ``results``
    are per-sample metric dicts where ``None`` marks a missing score.  Groups
    with no samples are left out; the ``all`` keys pool over a dimension.
    """
    if len(samples) != len(results):
        raise ValidationError("samples and results differ in length")
    rows = []
    for i, (s, r) in enumerate(zip(samples, results)):
        bg = s.get("bg")
        if bg not in BG_CONDITIONS:
            raise ValidationError(f"sample {i}: bg must be one of {BG_CONDITIONS}, got {bg!r}")
        row = {"id": s.get("id", i), "n_shots": int(s["n_shots"]), "bg": bg}
        row.update({m: (None if r.get(m) is None else float(r[m])) for m in metrics})
        rows.append(row)
    groups = {}
    shot_counts = sorted({r["n_shots"] for r in rows})
    for bg in (*BG_CONDITIONS, "all"):
        for n in (*shot_counts, "all"):
            sel = [r for r in rows if (bg == "all" or r["bg"] == bg) and (n == "all" or r["n_shots"] == n)]
            if sel:
                groups[f"{bg}/{n}"] = {"samples": len(sel), **_summarize(sel, metrics)}
    return EvalReport(rows, groups, tuple(metrics))


def write_report(report, out_dir, config_hash=None):
    """``report.csv`` (one row per group and metric), ``report.json`` and one SVG
    histogram per metric."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bg", "n_shots", "metric", "mean", "count", "missing"])
        for key, g in report.groups.items():
            bg, n = key.split("/")
            for m in report.metrics:
                mean = g[m]["mean"]
                w.writerow([bg, n, m, "" if mean is None else f"{mean:.6f}", g[m]["count"], g[m]["missing"]])
    payload = report.to_dict()
    if config_hash:
        payload["config_hash"] = config_hash
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
    for m in report.metrics:
        vals = [r[m] for r in report.per_sample if r[m] is not None]
        write_histogram_svg(os.path.join(out_dir, f"hist_{m}.svg"), vals, m)


def write_histogram_svg(path, values, title, bins=10, width=320, height=200):
    pad = 24
    if values:
        counts, edges = np.histogram(values, bins=bins)
    else:
        counts, edges = np.zeros(bins, dtype=int), np.linspace(0, 1, bins + 1)
    top = max(int(counts.max()), 1)
    bw = (width - 2 * pad) / bins
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="16" font-size="12">{title} (n={len(values)})</text>']
    for i, c in enumerate(counts):
        h = (height - 2 * pad) * c / top
        parts.append(f'<rect x="{pad + i * bw:.1f}" y="{height - pad - h:.1f}" '
                     f'width="{bw - 1:.1f}" height="{h:.1f}" fill="#4a78b0"/>')
    parts.append(f'<text x="{pad}" y="{height - 6}" font-size="10">{edges[0]:.3g}</text>')
    parts.append(f'<text x="{width - pad}" y="{height - 6}" font-size="10" '
                 f'text-anchor="end">{edges[-1]:.3g}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
