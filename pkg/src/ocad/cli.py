"""Command-line front end.

Exit codes are stable: 0 ok, 2 missing input, 3 validation/parse error,
4 model file or architecture mismatch, 5 undefined metric.
"""

import contextlib
import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .autoencoder import describe_model
from .config import resolve_config
from .evaluation import frame_auc
from .exceptions import (
    ModelFileError,
    UndefinedMetricError,
    ValidationError,
)
from .normality import NormalityModel
from .synth import SceneConfig, SpriteSpec, generate_scene

log = logging.getLogger("ocad")

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3
EXIT_MODEL = 4
EXIT_UNDEFINED_METRIC = 5


def _handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (FileNotFoundError, NotADirectoryError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MISSING_INPUT)
        except UndefinedMetricError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_UNDEFINED_METRIC)
        except ModelFileError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MODEL)
        except (ValidationError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


@contextlib.contextmanager
def _thread_limit(threads):
    if threads and threads > 0:
        import threadpoolctl

        with threadpoolctl.threadpool_limits(limits=threads):
            yield
    else:
        yield


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    """Object-centric video anomaly detection."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_sprite(text):
    parts = text.split(":")
    if len(parts) != 4:
        raise ValidationError(
            f"sprite spec must be shape:size:speed:intensity, got {text!r}"
        )
    return SpriteSpec(
        shape=parts[0], size=int(parts[1]), speed=float(parts[2]), intensity=int(parts[3])
    )


def _parse_interval(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise ValidationError(f"interval must be start:end, got {text!r}")
    return int(parts[0]), int(parts[1])


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output scene directory.")
@click.option("--frames", default=100, show_default=True, type=int)
@click.option("--height", default=160, show_default=True, type=int)
@click.option("--width", default=240, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--normal", "normal_specs", multiple=True,
              help="Normal sprite shape:size:speed:intensity (repeatable).")
@click.option("--abnormal", "abnormal_specs", multiple=True,
              help="Abnormal sprite shape:size:speed:intensity (repeatable).")
@click.option("--interval", "intervals", multiple=True,
              help="Abnormal frame interval start:end, end exclusive (repeatable).")
@click.option("--background-level", default=96, show_default=True, type=int)
@click.option("--background-noise", default=10, show_default=True, type=int)
@_handle_errors
def synth(out, frames, height, width, seed, normal_specs, abnormal_specs,
          intervals, background_level, background_noise):
    """Generate a synthetic scene (frames, detections, labels)."""
    normal = [_parse_sprite(s) for s in normal_specs] or [
        SpriteSpec("square", 12, 2.0, 100),
        SpriteSpec("disk", 10, 2.0, 120),
    ]
    parsed_intervals = [_parse_interval(s) for s in intervals]
    abnormal = [_parse_sprite(s) for s in abnormal_specs]
    if parsed_intervals and not abnormal:
        abnormal = [SpriteSpec("triangle", 12, 5.0, 140)]
    cfg = SceneConfig(
        frame_count=frames,
        height=height,
        width=width,
        normal_sprites=normal,
        abnormal_sprites=abnormal,
        abnormal_intervals=parsed_intervals,
        background_level=background_level,
        background_noise=background_noise,
        seed=seed,
    )
    summary = generate_scene(cfg, out)
    click.echo(json.dumps(summary, indent=2))


_config_options = [
    click.option("--config", "config_file", type=click.Path(), default=None,
                 help="Flat key=value config file; flags override it."),
    click.option("--threads", type=int, default=None,
                 help="Cap intra-stage parallelism (default: machine parallelism)."),
]


def _with_options(options):
    def deco(func):
        for opt in reversed(options):
            func = opt(func)
        return func
    return deco


@main.command()
@_with_options(_config_options)
@click.option("--frames-dir", default=None, type=click.Path(), help="Training frames directory.")
@click.option("--detections", default=None, type=click.Path(), help="Training detections JSONL.")
@click.option("--model-dir", default=None, type=click.Path(), help="Where model files go.")
@click.option("--train-threshold", default=None, type=float)
@click.option("--k", default=None, type=int, help="Number of normality clusters.")
@click.option("--restarts", default=None, type=int, help="k-means restarts.")
@click.option("--svm-c", "C", default=None, type=float, help="SVM regularization C.")
@click.option("--epochs1", "epochs_phase1", default=None, type=int)
@click.option("--lr1", "lr_phase1", default=None, type=float)
@click.option("--epochs2", "epochs_phase2", default=None, type=int)
@click.option("--lr2", "lr_phase2", default=None, type=float)
@click.option("--batch-size", default=None, type=int)
@click.option("--init-seed", default=None, type=int)
@click.option("--shuffle-seed", default=None, type=int)
@click.option("--model-seed", default=None, type=int)
@click.option("--feature-mode", default=None,
              type=click.Choice(["combined", "appearance", "motion"]))
@click.option("--scorer", default=None, type=click.Choice(["ovr", "one-class"]))
@click.option("--one-class", "one_class", is_flag=True, default=False,
              help="Shorthand for --scorer one-class.")
@click.option("--dtype", default=None, type=click.Choice(["float64", "float32"]))
@_handle_errors
def train(config_file, threads, one_class, **flags):
    """Train the auto-encoders and the normality model."""
    if one_class:
        flags["scorer"] = "one-class"
    cfg = resolve_config(config_file, threads=threads, **flags)
    _require(cfg.frames_dir, "--frames-dir")
    _require(cfg.detections, "--detections")
    _require(cfg.model_dir, "--model-dir")
    with _thread_limit(cfg.threads):
        result = pipeline.train(cfg)
    click.echo(json.dumps({"model_dir": result["model_dir"], "files": result["files"]}, indent=2))


def _require(value, flag):
    if not value:
        raise ValidationError(f"{flag} is required (flag or config file)")


@main.command()
@_with_options(_config_options)
@click.option("--frames-dir", default=None, type=click.Path(), help="Test frames directory.")
@click.option("--detections", default=None, type=click.Path(), help="Test detections JSONL.")
@click.option("--model-dir", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path(), help="Output directory.")
@click.option("--test-threshold", default=None, type=float)
@click.option("--sigma", default=None, type=float, help="Temporal Gaussian sigma (frames).")
@click.option("--feature-mode", default=None,
              type=click.Choice(["combined", "appearance", "motion"]))
@click.option("--video-id", default="video", show_default=True)
@click.option("--export-maps", is_flag=True, default=False,
              help="Also write per-frame anomaly maps as PGM heat images.")
@_handle_errors
def score(config_file, threads, video_id, export_maps, **flags):
    """Score a test video; writes the per-frame score CSV."""
    cfg = resolve_config(config_file, threads=threads, **flags)
    _require(cfg.frames_dir, "--frames-dir")
    _require(cfg.detections, "--detections")
    _require(cfg.model_dir, "--model-dir")
    _require(cfg.out_dir, "--out")
    with _thread_limit(cfg.threads):
        series, csv_path = pipeline.score(cfg, video_id=video_id, export_maps=export_maps)
    click.echo(json.dumps({
        "scores_csv": str(csv_path),
        "n_frames": len(series),
        "max_normalized": float(series.normalized.max()),
    }, indent=2))


@main.command("eval")
@click.option("--scores", "score_csvs", multiple=True, required=True,
              type=click.Path(), help="Frame-score CSV (repeat per video).")
@click.option("--labels", "label_files", multiple=True, required=True,
              type=click.Path(), help="Ground-truth labels file (repeat per video).")
@click.option("--mode", default="concat", show_default=True,
              type=click.Choice(["concat", "macro"]))
@click.option("--column", default="normalized", show_default=True,
              type=click.Choice(["raw", "smoothed", "normalized"]))
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the JSON report here (default: stdout only).")
@click.option("--roc-csv", default=None, type=click.Path(),
              help="Optionally dump pooled ROC points as CSV.")
@_handle_errors
def eval_cmd(score_csvs, label_files, mode, column, out_path, roc_csv):
    """Frame-level AUC report from score CSVs and ground-truth files."""
    for path in list(score_csvs) + list(label_files):
        if not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")
    report, pairs = pipeline.evaluate(score_csvs, label_files, mode=mode, column=column)
    if roc_csv:
        import numpy as np

        scores = np.concatenate([s for s, _ in pairs])
        labels = np.concatenate([l for _, l in pairs])
        roc = frame_auc(scores, labels)
        with open(roc_csv, "w") as fh:
            fh.write("threshold,fpr,tpr\n")
            for t, f, tp in zip(roc.thresholds, roc.fpr, roc.tpr):
                fh.write(f"{t!r},{f!r},{tp!r}\n")
    text = json.dumps(report, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
    click.echo(text)


@main.command("inspect-model")
@click.argument("path", type=click.Path())
@_handle_errors
def inspect_model(path):
    """Print a model file's header and shape summary."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    if p.suffix == ".nvm":
        info = NormalityModel.load(p).describe()
    else:
        info = describe_model(p)
    click.echo(json.dumps(info, indent=2))


if __name__ == "__main__":
    main()
