"""Frame-level anomaly scoring: per-frame maps, temporal smoothing and
min-max normalization, plus the CSV/PGM export formats.

Per-object scores turn into a per-frame score by taking the maximum over
the frame's anomaly map. Pixels outside every box (and frames with no
detections at all) carry the video's minimum object score as a neutral
baseline, so they can never become the frame maximum.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .ingest import clamp_box
from .exceptions import SkipSample
from .pnm import write_pgm


def video_baseline(object_scores):
    """Neutral score for uncovered pixels: the video minimum (0 if empty)."""
    return float(min(object_scores)) if len(object_scores) else 0.0


def build_map(height, width, scored_detections, baseline):
    """Anomaly map of one frame: per-pixel max of the covering box scores.

    scored_detections: iterable of (Detection, score) for this frame.
    """
    values = np.full((height, width), baseline, dtype=np.float64)
    for det, score in scored_detections:
        try:
            x1, y1, x2, y2 = clamp_box(det, height, width)
        except SkipSample:
            continue
        region = values[y1:y2, x1:x2]
        np.maximum(region, score, out=region)
    return values


def frame_score(anomaly_map):
    """Frame score = the highest value in the frame's anomaly map."""
    return float(np.max(anomaly_map))


def frame_scores_from_objects(n_frames, scored_detections):
    """Raw per-frame scores straight from object scores.

    Equivalent to building each frame's map and taking its maximum, without
    materializing the maps. scored_detections: iterable of
    (Detection, score).
    """
    scores = [s for _, s in scored_detections]
    baseline = video_baseline(scores)
    raw = np.full(n_frames, baseline, dtype=np.float64)
    for det, score in scored_detections:
        t = det.frame_index
        if not 0 <= t < n_frames:
            raise ValidationError(f"detection frame {t} outside video of {n_frames} frames")
        if score > raw[t]:
            raw[t] = score
    return raw, baseline


def gaussian_kernel(sigma):
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def temporal_smooth(raw, sigma):
    """1-D Gaussian smoothing with edge replication; kernel mass 1."""
    raw = np.asarray(raw, dtype=np.float64)
    kernel = gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    padded = np.pad(raw, radius, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def minmax_normalize(series):
    """Map to [0, 1] per video; a constant series maps to all zeros."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise ValidationError("cannot normalize an empty series")
    lo, hi = float(series.min()), float(series.max())
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


@dataclass
class FrameScoreSeries:
    """Raw, smoothed and normalized per-frame scores of one video."""

    video_id: str
    raw: np.ndarray
    smoothed: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_raw(cls, video_id, raw, sigma):
        raw = np.asarray(raw, dtype=np.float64)
        smoothed = temporal_smooth(raw, sigma)
        return cls(video_id, raw, smoothed, minmax_normalize(smoothed))

    def __len__(self):
        return len(self.raw)


def write_scores_csv(path, series):
    """CSV columns: frame_index, raw, smoothed, normalized (full precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "raw", "smoothed", "normalized"])
        for i in range(len(series)):
            writer.writerow(
                [i, repr(float(series.raw[i])), repr(float(series.smoothed[i])),
                 repr(float(series.normalized[i]))]
            )


def read_scores_csv(path, video_id=None):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame_index", "raw", "smoothed", "normalized"]:
            raise ValidationError(f"{path}: not a frame-score CSV (header {header})")
        raw, smoothed, normalized = [], [], []
        for row in reader:
            raw.append(float(row[1]))
            smoothed.append(float(row[2]))
            normalized.append(float(row[3]))
    return FrameScoreSeries(
        video_id or path.stem,
        np.asarray(raw),
        np.asarray(smoothed),
        np.asarray(normalized),
    )


def write_map_pgms(directory, maps, lo=None, hi=None):
    """Export anomaly maps as PGM heat images, values mapped linearly to 0..255.

    The linear range defaults to the min/max over all maps so frames remain
    comparable within a video.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not maps:
        return
    lo = float(min(m.min() for m in maps)) if lo is None else lo
    hi = float(max(m.max() for m in maps)) if hi is None else hi
    span = hi - lo
    for i, m in enumerate(maps):
        if span > 0:
            scaled = np.clip((m - lo) / span, 0.0, 1.0)
        else:
            scaled = np.zeros_like(m)
        write_pgm(directory / f"{i:06d}.pgm", np.floor(scaled * 255.0 + 0.5).astype(np.uint8))
