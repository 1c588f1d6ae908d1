"""Frame/detection loading and per-object patch extraction.

Inputs follow two on-disk formats:
  * frames: a directory of ``NNNNNN.pgm`` files (binary P5, maxval 255;
    P6 color accepted and converted to grayscale), zero-padded frame index
    starting at 0, no gaps;
  * detections: a JSONL file, one object per line:
    ``{"frame": int, "bbox": [x1, y1, x2, y2], "confidence": float,
    "label": str}`` with pixel coordinates, x2/y2 exclusive.

Each surviving detection becomes an ObjectSample: a 64x64 appearance crop
plus two 64x64 motion patches, the absolute temporal differences of the
same box cropped at frames t-3 and t+3 (indices clamped at video bounds).
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    FrameSequenceError,
    ParseError,
    SkipSample,
    ValidationError,
)
from .pnm import read_pnm

log = logging.getLogger(__name__)

PATCH_SIZE = 64
GRADIENT_STRIDE = 3  # motion is measured against frames t-3 and t+3


@dataclass
class Frame:
    index: int
    pixels: np.ndarray  # (height, width) uint8

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class Detection:
    frame_index: int
    x1: float
    y1: float
    x2: float
    y2: float
    confidence: float
    label: str = ""


@dataclass
class ObjectSample:
    detection: Detection
    appearance: np.ndarray  # (64, 64) in [0, 1]
    grad_before: np.ndarray
    grad_after: np.ndarray


def load_frames(path):
    """Load all ``*.pgm`` frames of one video, sorted by index.

    Raises FrameSequenceError when indices have gaps, do not start at 0,
    or frame geometry changes mid-video.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    entries = []
    for f in sorted(directory.glob("*.pgm")):
        if not f.stem.isdigit():
            raise ParseError(
                f"frame file name must be a zero-padded index, got {f.name!r}",
                path=directory,
            )
        entries.append((int(f.stem), f))
    if not entries:
        raise FrameSequenceError(f"no .pgm frames in {directory}")
    entries.sort()
    indices = [i for i, _ in entries]
    if indices != list(range(len(entries))):
        missing = sorted(set(range(indices[-1] + 1)) - set(indices))
        raise FrameSequenceError(
            f"frame indices must be 0..{len(entries) - 1} without gaps; "
            f"missing {missing[:5]}{'...' if len(missing) > 5 else ''} in {directory}"
        )
    frames = []
    shape = None
    for idx, f in entries:
        pixels = read_pnm(f)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise FrameSequenceError(
                f"frame {idx} has shape {pixels.shape}, expected {shape}"
            )
        frames.append(Frame(index=idx, pixels=pixels))
    return frames


def load_detections(path, threshold):
    """Parse a detections JSONL file, keeping confidence strictly above threshold.

    Returns detections sorted by frame index (input order preserved within a
    frame). Boxes are validated here and clamped to frame bounds later, at
    crop time, when the frame geometry is known.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"detections file not found: {path}")
    detections = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path=path, line=lineno) from exc
            try:
                frame = int(obj["frame"])
                x1, y1, x2, y2 = (float(v) for v in obj["bbox"])
                confidence = float(obj["confidence"])
                label = str(obj.get("label", ""))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed detection record: {exc}", path=path, line=lineno) from exc
            if not 0.0 <= confidence <= 1.0:
                raise ValidationError(
                    f"{path}:{lineno}: confidence {confidence} outside [0, 1]"
                )
            if frame < 0:
                raise ValidationError(f"{path}:{lineno}: negative frame index {frame}")
            if not (x1 < x2 and y1 < y2):
                raise ValidationError(
                    f"{path}:{lineno}: degenerate box [{x1}, {y1}, {x2}, {y2}]"
                )
            if confidence > threshold:
                detections.append(
                    Detection(frame, x1, y1, x2, y2, confidence, label)
                )
    detections.sort(key=lambda d: d.frame_index)
    return detections


def clamp_box(detection, height, width):
    """Integer pixel box covering the detection, clamped to the frame.

    Float coordinates are widened outward (floor/ceil) before clamping.
    Raises SkipSample if the clamped box has zero area.
    """
    x1 = max(0, math.floor(detection.x1))
    y1 = max(0, math.floor(detection.y1))
    x2 = min(width, math.ceil(detection.x2))
    y2 = min(height, math.ceil(detection.y2))
    if x2 <= x1 or y2 <= y1:
        raise SkipSample(
            f"detection at frame {detection.frame_index} has empty clamped box"
        )
    return x1, y1, x2, y2


def _bilinear_resize(crop, size=PATCH_SIZE):
    """Resize to size x size (align-corners-false, edge-clamped)."""
    src = crop.astype(np.float64)
    sh, sw = src.shape

    def axis_coords(n_src):
        coords = (np.arange(size) + 0.5) * (n_src / size) - 0.5
        lo = np.floor(coords).astype(np.int64)
        frac = coords - lo
        lo0 = np.clip(lo, 0, n_src - 1)
        lo1 = np.clip(lo + 1, 0, n_src - 1)
        return lo0, lo1, frac

    y0, y1, fy = axis_coords(sh)
    x0, x1, fx = axis_coords(sw)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def crop_resize(frame, detection):
    """Crop the detection box and resize to a 64x64 patch in [0, 1]."""
    x1, y1, x2, y2 = clamp_box(detection, frame.height, frame.width)
    crop = frame.pixels[y1:y2, x1:x2]
    if crop.shape == (PATCH_SIZE, PATCH_SIZE):
        patch = crop.astype(np.float64)
    else:
        patch = _bilinear_resize(crop)
    return patch / 255.0


def make_gradients(frames, detection):
    """Absolute temporal differences of the same box at t-3, t, t+3.

    Frame indices outside the video clamp to the nearest valid frame, so
    gradients at video boundaries degrade to zero rather than failing.
    """
    t = detection.frame_index
    if not 0 <= t < len(frames):
        raise ValidationError(
            f"detection frame {t} outside video of {len(frames)} frames"
        )
    t_before = max(0, t - GRADIENT_STRIDE)
    t_after = min(len(frames) - 1, t + GRADIENT_STRIDE)
    patch_t = crop_resize(frames[t], detection)
    patch_before = crop_resize(frames[t_before], detection)
    patch_after = crop_resize(frames[t_after], detection)
    grad_before = np.abs(patch_t - patch_before)
    grad_after = np.abs(patch_after - patch_t)
    return grad_before, grad_after


def build_samples(frames, detections):
    """One ObjectSample per detection; skip-sample signals are logged."""
    samples = []
    skipped = 0
    for det in detections:
        try:
            appearance = crop_resize(frames[det.frame_index], det)
            grad_before, grad_after = make_gradients(frames, det)
        except SkipSample as exc:
            skipped += 1
            log.warning("skipping sample: %s", exc)
            continue
        except IndexError as exc:
            raise ValidationError(
                f"detection frame {det.frame_index} outside video of "
                f"{len(frames)} frames"
            ) from exc
        samples.append(ObjectSample(det, appearance, grad_before, grad_after))
    if skipped:
        log.info("skipped %d of %d detections", skipped, len(detections))
    return samples


def load_frame_labels(path):
    """Frame-level ground truth: one 0/1 per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"labels file not found: {path}")
    labels = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {line!r}", path=path, line=lineno)
        labels.append(int(line))
    if not labels:
        raise ParseError("empty labels file", path=path)
    return np.asarray(labels, dtype=np.int64)
