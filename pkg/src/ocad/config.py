"""Run configuration: defaults, flat key=value config files, CLI overrides.

Precedence: built-in defaults < config file < command-line flags. Every
command echoes the fully resolved configuration into its output directory
as ``run_config.txt`` (the same key=value format it reads).
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ParseError, ValidationError

FEATURE_MODES = ("combined", "appearance", "motion")
SCORERS = ("ovr", "one-class")


@dataclass
class RunConfig:
    # paths
    frames_dir: str = ""
    detections: str = ""
    labels: str = ""
    model_dir: str = ""
    out_dir: str = ""
    # detection confidence thresholds (strict >)
    train_threshold: float = 0.5
    test_threshold: float = 0.4
    # normality model
    k: int = 10
    restarts: int = 10
    C: float = 1.0
    svm_epochs: int = 200
    # frame-score smoothing
    sigma: float = 5.0
    # auto-encoder schedule
    epochs_phase1: int = 100
    lr_phase1: float = 1e-3
    epochs_phase2: int = 100
    lr_phase2: float = 1e-4
    batch_size: int = 64
    # seeds
    init_seed: int = 7
    shuffle_seed: int = 11
    model_seed: int = 13
    # ablation switches
    feature_mode: str = "combined"
    scorer: str = "ovr"
    # execution
    threads: int = 0  # 0 = library default (machine parallelism)
    dtype: str = "float64"

    def validate(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ValidationError(
                f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}"
            )
        if self.scorer not in SCORERS:
            raise ValidationError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        for name in ("train_threshold", "test_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}")
        if self.C <= 0:
            raise ValidationError(f"C must be positive, got {self.C}")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if min(self.epochs_phase1, self.epochs_phase2) < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.epochs_phase1 + self.epochs_phase2 < 1:
            raise ValidationError("schedule must contain at least one epoch")
        return self

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def echo(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "run_config.txt").write_text(self.to_text())


def parse_config_file(path):
    """Flat ``key = value`` lines; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", path=path, line=lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ParseError(f"unknown config key {key!r}", path=path, line=lineno)
        values[key] = value.strip()
    return values


def _coerce(field, raw):
    if isinstance(raw, str):
        try:
            if field.type in ("int", int):
                return int(raw)
            if field.type in ("float", float):
                return float(raw)
        except ValueError as exc:
            raise ValidationError(f"config key {field.name}: {exc}") from exc
        return raw
    return raw


def resolve_config(config_file=None, **overrides):
    """Build a RunConfig from defaults, an optional file, and flag overrides.

    Overrides with value None are treated as "not given".
    """
    cfg = RunConfig()
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if config_file:
        for key, raw in parse_config_file(config_file).items():
            setattr(cfg, key, _coerce(fields[key], raw))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in fields:
            raise ValidationError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(fields[key], value))
    return cfg.validate()
