"""End-to-end orchestration of the training, scoring and evaluation stages.

The CLI is a thin wrapper around these functions; tests drive them
directly. All stages are deterministic for a fixed RunConfig.
"""

import json
import logging
from pathlib import Path

import numpy as np

from .autoencoder import (
    ConvAutoencoder,
    TrainingSchedule,
    cae_train,
    extract_features_batch,
    feature_dim,
    load_model,
    save_model,
)
from .evaluation import aggregate_auc, frame_auc
from .exceptions import IncompatibleModelError, ValidationError
from .ingest import build_samples, load_detections, load_frame_labels, load_frames
from .normality import NormalityModel
from .scoring import (
    FrameScoreSeries,
    build_map,
    frame_scores_from_objects,
    read_scores_csv,
    write_map_pgms,
    write_scores_csv,
)

log = logging.getLogger(__name__)

CAE_FILES = {
    "appearance": "appearance.cae",
    "before": "motion_before.cae",
    "after": "motion_after.cae",
}
NVM_FILE = "normality.nvm"

# which auto-encoders each feature mode needs
_MODE_STREAMS = {
    "combined": ("appearance", "before", "after"),
    "appearance": ("appearance",),
    "motion": ("before", "after"),
}

_SCORER_ALIAS = {"ovr": "ovr", "one-class": "centroid"}


def _load_training_data(config):
    frames = load_frames(config.frames_dir)
    detections = load_detections(config.detections, config.train_threshold)
    samples = build_samples(frames, detections)
    if not samples:
        raise ValidationError("no training samples survive the confidence threshold")
    return frames, samples


def _stream_patches(samples, stream):
    attr = {"appearance": "appearance", "before": "grad_before", "after": "grad_after"}[stream]
    return np.stack([getattr(s, attr) for s in samples])


def train(config):
    """Train the auto-encoders and the normality model; write model files.

    Returns a dict of written paths plus training metadata.
    """
    config.validate()
    model_dir = Path(config.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    _, samples = _load_training_data(config)
    log.info("training on %d object samples", len(samples))

    streams = _MODE_STREAMS[config.feature_mode]
    models = {}
    meta = {"n_samples": len(samples), "streams": {}}
    for offset, stream in enumerate(streams):
        schedule = TrainingSchedule(
            epochs_phase1=config.epochs_phase1,
            lr_phase1=config.lr_phase1,
            epochs_phase2=config.epochs_phase2,
            lr_phase2=config.lr_phase2,
            batch_size=config.batch_size,
            shuffle_seed=config.shuffle_seed + offset,
        )
        params, train_meta = cae_train(
            _stream_patches(samples, stream),
            schedule,
            init_seed=config.init_seed + offset,
            dtype=np.dtype(config.dtype),
        )
        models[stream] = params
        meta["streams"][stream] = train_meta
        save_model(model_dir / CAE_FILES[stream], params)
        log.info(
            "%s auto-encoder: final epoch loss %.6f",
            stream,
            train_meta["epoch_losses"][-1],
        )

    triple = tuple(models.get(s) for s in ("appearance", "before", "after"))
    features = extract_features_batch(triple, samples, mode=config.feature_mode)
    normality = NormalityModel(
        n_clusters=config.k,
        n_restarts=config.restarts,
        C=config.C,
        svm_epochs=config.svm_epochs,
        scorer=_SCORER_ALIAS[config.scorer],
        seed=config.model_seed,
    ).fit(features)
    normality.save(model_dir / NVM_FILE)
    meta["feature_mode"] = config.feature_mode
    meta["feature_dim"] = int(features.shape[1])
    meta["kmeans_energy"] = float(normality.energy_)
    meta["cluster_sizes"] = np.bincount(
        normality.labels_, minlength=config.k
    ).tolist()
    (model_dir / "training_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    config.echo(model_dir)
    return {
        "model_dir": str(model_dir),
        "files": [CAE_FILES[s] for s in streams] + [NVM_FILE, "training_meta.json"],
        "meta": meta,
    }


def load_models(config):
    """Load the auto-encoders required by the feature mode plus the
    normality model; verify that feature dimensions agree."""
    model_dir = Path(config.model_dir)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"model directory not found: {model_dir}")
    streams = _MODE_STREAMS[config.feature_mode]
    models = {}
    for stream in streams:
        path = model_dir / CAE_FILES[stream]
        if not path.is_file():
            raise FileNotFoundError(f"missing model file: {path}")
        models[stream] = load_model(path)
    nvm_path = model_dir / NVM_FILE
    if not nvm_path.is_file():
        raise FileNotFoundError(f"missing model file: {nvm_path}")
    normality = NormalityModel.load(nvm_path)
    expected = feature_dim(config.feature_mode)
    if normality.n_features_in_ != expected:
        raise IncompatibleModelError(
            f"{nvm_path}: model expects {normality.n_features_in_}-dim features but "
            f"feature mode {config.feature_mode!r} produces {expected}"
        )
    triple = tuple(models.get(s) for s in ("appearance", "before", "after"))
    return triple, normality


def score(config, video_id="video", export_maps=False):
    """Score one test video; writes the per-frame score CSV (and maps)."""
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    triple, normality = load_models(config)
    frames = load_frames(config.frames_dir)
    detections = load_detections(config.detections, config.test_threshold)
    samples = build_samples(frames, detections)
    if samples:
        features = extract_features_batch(triple, samples, mode=config.feature_mode)
        object_scores = normality.anomaly_score(features)
    else:
        object_scores = np.zeros(0)
    scored = list(zip((s.detection for s in samples), object_scores))
    raw, baseline = frame_scores_from_objects(len(frames), scored)
    series = FrameScoreSeries.from_raw(video_id, raw, config.sigma)
    csv_path = out_dir / f"{video_id}_scores.csv"
    write_scores_csv(csv_path, series)
    if export_maps:
        by_frame = {}
        for det, s in scored:
            by_frame.setdefault(det.frame_index, []).append((det, s))
        h, w = frames[0].height, frames[0].width
        maps = [
            build_map(h, w, by_frame.get(t, []), baseline)
            for t in range(len(frames))
        ]
        write_map_pgms(out_dir / "maps", maps)
    config.echo(out_dir)
    log.info("scored %d frames (%d objects) -> %s", len(frames), len(samples), csv_path)
    return series, csv_path


def evaluate(score_csvs, label_files, mode="concat", column="normalized"):
    """AUC report over (score CSV, labels file) pairs."""
    if len(score_csvs) != len(label_files):
        raise ValidationError(
            f"{len(score_csvs)} score files vs {len(label_files)} label files"
        )
    if not score_csvs:
        raise ValidationError("need at least one scores/labels pair")
    if column not in ("raw", "smoothed", "normalized"):
        raise ValidationError(f"unknown score column {column!r}")
    videos = []
    pairs = []
    for csv_path, labels_path in zip(score_csvs, label_files):
        series = read_scores_csv(csv_path)
        labels = load_frame_labels(labels_path)
        if len(labels) != len(series):
            raise ValidationError(
                f"{csv_path}: {len(series)} frames but {labels_path} has "
                f"{len(labels)} labels"
            )
        scores = getattr(series, column)
        entry = {"video_id": series.video_id, "n_frames": len(series)}
        if 0 < labels.sum() < labels.size:
            entry["auc"] = frame_auc(scores, labels).auc
        else:
            entry["auc"] = None
            entry["note"] = "single-class labels; per-video AUC undefined"
        videos.append(entry)
        pairs.append((scores, labels))
    report = {
        "column": column,
        "mode": mode,
        "videos": videos,
        "aggregate_auc": aggregate_auc(pairs, mode=mode),
    }
    return report, pairs
