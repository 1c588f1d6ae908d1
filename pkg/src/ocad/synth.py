"""Deterministic synthetic scenes: moving sprites over a static noise
background, with perfect detections and frame-level ground truth.

Sprites brighten the background additively (pixel = background +
intensity inside the sprite mask), so object crops keep the background's
noise texture and no two crops are pixel-identical; a flat stamp would
collapse every appearance patch of a square sprite to the same constant
image. Normal sprites are present in every frame; abnormal sprites are
rendered only inside the configured frame intervals and differ in both
shape and speed, so appearance-only and motion-only feature modes both
retain signal. All outputs are byte-reproducible for a fixed seed.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .pnm import write_pgm

SPRITE_SHAPES = ("square", "disk", "triangle")


@dataclass
class SpriteSpec:
    shape: str = "square"
    size: int = 12
    speed: float = 2.0
    intensity: int = 100  # brightness added over the background

    def __post_init__(self):
        if self.shape not in SPRITE_SHAPES:
            raise ValidationError(f"unknown sprite shape {self.shape!r}")
        if self.size < 2:
            raise ValidationError(f"sprite size must be >= 2, got {self.size}")
        if not 1 <= self.intensity <= 255:
            raise ValidationError(f"intensity must be in 1..255, got {self.intensity}")
        if self.speed < 0:
            raise ValidationError(f"speed must be >= 0, got {self.speed}")


@dataclass
class SceneConfig:
    frame_count: int = 100
    height: int = 160
    width: int = 240
    normal_sprites: list = field(default_factory=lambda: [SpriteSpec()])
    abnormal_sprites: list = field(default_factory=list)
    abnormal_intervals: list = field(default_factory=list)
    background_level: int = 96
    background_noise: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError("frame_count must be >= 1")
        bg_max = self.background_level + self.background_noise
        for spec in list(self.normal_sprites) + list(self.abnormal_sprites):
            if spec.size >= min(self.height, self.width):
                raise ValidationError(
                    f"sprite size {spec.size} does not fit in a "
                    f"{self.height}x{self.width} frame"
                )
            if bg_max + spec.intensity > 255:
                raise ValidationError(
                    f"sprite intensity {spec.intensity} over background up to "
                    f"{bg_max} would clip at 255"
                )
        for start, end in self.abnormal_intervals:
            if not (0 <= start < end <= self.frame_count):
                raise ValidationError(
                    f"interval [{start}, {end}) outside [0, {self.frame_count})"
                )
        if self.abnormal_intervals and not self.abnormal_sprites:
            raise ValidationError("abnormal intervals given but no abnormal sprites")


def sprite_mask(shape, size):
    """Boolean pixel mask of a sprite inside its size x size box."""
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "disk":
        c = (size - 1) / 2.0
        return (yy - c) ** 2 + (xx - c) ** 2 <= c * c + 1e-9
    # triangle: apex at top center, base at the bottom
    half = (size - 1) / 2.0
    spread = (yy + 1) / size * half
    return np.abs(xx - half) <= spread + 1e-9


class _Trajectory:
    """Closed-form bouncing motion of a sprite's top-left corner."""

    def __init__(self, spec, height, width, rng):
        self.spec = spec
        self.mask = sprite_mask(spec.shape, spec.size)
        self.boost = np.where(self.mask, spec.intensity, 0).astype(np.uint16)
        ys, xs = np.nonzero(self.mask)
        # tight extent of the rendered pixels inside the sprite box
        self.extent = (int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)
        self.limit_y = height - spec.size
        self.limit_x = width - spec.size
        self.y0 = rng.uniform(0, max(self.limit_y, 1e-9))
        self.x0 = rng.uniform(0, max(self.limit_x, 1e-9))
        angle = rng.uniform(0, 2 * math.pi)
        self.vy = spec.speed * math.sin(angle)
        self.vx = spec.speed * math.cos(angle)

    @staticmethod
    def _fold(p, limit):
        if limit <= 0:
            return 0.0
        u = math.fmod(p, 2.0 * limit)
        if u < 0:
            u += 2.0 * limit
        return u if u <= limit else 2.0 * limit - u

    def position(self, t):
        y = self._fold(self.y0 + self.vy * t, self.limit_y)
        x = self._fold(self.x0 + self.vx * t, self.limit_x)
        return int(round(y)), int(round(x))

    def render(self, frame, background, t):
        """Brighten the background under the sprite mask (max composition
        where sprites overlap); returns the tight bbox."""
        y, x = self.position(t)
        sl = np.s_[y:y + self.spec.size, x:x + self.spec.size]
        lit = np.minimum(background[sl].astype(np.uint16) + self.boost, 255)
        np.maximum(frame[sl], lit.astype(np.uint8), out=frame[sl])
        ey1, ex1, ey2, ex2 = self.extent
        return [x + ex1, y + ey1, x + ex2, y + ey2]  # x1, y1, x2, y2 exclusive


def _is_abnormal_frame(t, intervals):
    return any(start <= t < end for start, end in intervals)


def render_scene(config):
    """Render all frames in memory.

    Returns (frames, detections, labels): frames is a list of (H, W) uint8
    arrays, detections a list of dicts in the JSONL schema, labels a 0/1
    int array of length frame_count.
    """
    rng = np.random.default_rng(config.seed)
    lo = max(0, config.background_level - config.background_noise)
    hi = min(255, config.background_level + config.background_noise)
    background = rng.integers(lo, hi + 1, size=(config.height, config.width)).astype(np.uint8)
    normal = [_Trajectory(s, config.height, config.width, rng) for s in config.normal_sprites]
    abnormal = [_Trajectory(s, config.height, config.width, rng) for s in config.abnormal_sprites]

    frames = []
    detections = []
    labels = np.zeros(config.frame_count, dtype=np.int64)
    for t in range(config.frame_count):
        frame = background.copy()
        active = list(normal)
        if _is_abnormal_frame(t, config.abnormal_intervals):
            active += abnormal
            labels[t] = 1
        for traj in active:
            bbox = traj.render(frame, background, t)
            detections.append(
                {
                    "frame": t,
                    "bbox": bbox,
                    "confidence": 1.0,
                    "label": traj.spec.shape,
                }
            )
        frames.append(frame)
    return frames, detections, labels


def generate_scene(config, out_dir):
    """Write frames/, detections.jsonl and labels.txt; returns a summary."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    frames, detections, labels = render_scene(config)
    for t, frame in enumerate(frames):
        write_pgm(frames_dir / f"{t:06d}.pgm", frame)
    det_path = out_dir / "detections.jsonl"
    with det_path.open("w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(json.dumps(det) + "\n")
    labels_path = out_dir / "labels.txt"
    labels_path.write_text("".join(f"{v}\n" for v in labels))
    return {
        "frames_dir": str(frames_dir),
        "detections": str(det_path),
        "labels": str(labels_path),
        "n_frames": len(frames),
        "n_detections": len(detections),
        "n_abnormal_frames": int(labels.sum()),
    }
