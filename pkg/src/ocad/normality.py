"""Normality model: k-means clusters of normal features, one linear
classifier per cluster trained against the remaining clusters, and the
negated-max anomaly score.

A sample is scored by every per-cluster classifier g_i(x) = w_i . x + b_i;
its anomaly score is -max_i g_i(x). A positive anomaly score means no
normality cluster claims the sample. The alternative "centroid" scorer
(the ``--scorer one-class`` ablation) ranks samples by the euclidean
distance to the nearest cluster centroid instead; it is a simple novelty
baseline, not a real one-class SVM.
"""

import logging
import struct

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cluster import MinEnergyKMeans
from .exceptions import (
    CorruptModelError,
    IncompatibleModelError,
    ValidationError,
)
from .svm import N_EPOCHS, train_hinge_svm
from .validation import check_feature_matrix

log = logging.getLogger(__name__)

_MAGIC = b"OCADNVM1"
_FORMAT_VERSION = 1
_SCORER_CODES = {"ovr": 0, "centroid": 1}
_SCORER_NAMES = {v: k for k, v in _SCORER_CODES.items()}


def train_ovr(X, assignments, C=1.0, epochs=N_EPOCHS, seed=0):
    """One classifier per cluster; sibling clusters provide the negatives.

    Returns (weights (k, dim), biases (k,), histories). Cluster ids are the
    distinct values in ``assignments``; empty ids are skipped with a warning.
    """
    X = check_feature_matrix(X)
    assignments = np.asarray(assignments)
    if assignments.shape != (X.shape[0],):
        raise ValidationError("assignments must have one entry per row of X")
    k = int(assignments.max()) + 1 if assignments.size else 0
    counts = np.bincount(assignments, minlength=k)
    present = [i for i in range(k) if counts[i] > 0]
    if len(present) < 2:
        raise ValidationError(
            "one-versus-rest needs at least two non-empty clusters "
            f"(got {len(present)})"
        )
    for i in range(k):
        if counts[i] == 0:
            log.warning("cluster %d is empty; skipping its classifier", i)
    weights = np.zeros((len(present), X.shape[1]))
    biases = np.zeros(len(present))
    histories = []
    for row, i in enumerate(present):
        y = np.where(assignments == i, 1.0, -1.0)
        w, b, history = train_hinge_svm(X, y, C=C, epochs=epochs, seed=seed + i)
        weights[row] = w
        biases[row] = b
        histories.append(history)
    return weights, biases, histories


def ovr_score(weights, biases, X):
    """Anomaly scores s(x) = -max_i (w_i . x + b_i) for each row of X."""
    X = check_feature_matrix(X, n_features=weights.shape[1])
    return -(X @ weights.T + biases).max(axis=1)


class NormalityModel(BaseEstimator):
    """Clusters normal feature vectors and scores how far a sample falls
    outside every cluster's classifier.

    Follows the sklearn outlier-detector convention: decision_function is
    positive for inliers; predict returns +1 (normal) / -1 (abnormal).
    anomaly_score is the negated decision function, so higher = more
    abnormal.
    """

    def __init__(
        self,
        n_clusters=10,
        n_restarts=10,
        C=1.0,
        svm_epochs=N_EPOCHS,
        scorer="ovr",
        seed=0,
    ):
        self.n_clusters = n_clusters
        self.n_restarts = n_restarts
        self.C = C
        self.svm_epochs = svm_epochs
        self.scorer = scorer
        self.seed = seed

    def fit(self, X, y=None):
        if self.scorer not in _SCORER_CODES:
            raise ValidationError(f"unknown scorer {self.scorer!r}")
        X = check_feature_matrix(X)
        kmeans = MinEnergyKMeans(
            n_clusters=self.n_clusters,
            n_restarts=self.n_restarts,
            seed=self.seed,
        ).fit(X)
        self.cluster_centers_ = kmeans.cluster_centers_
        self.labels_ = kmeans.labels_
        self.energy_ = kmeans.inertia_
        self.n_features_in_ = X.shape[1]
        if self.scorer == "ovr":
            self.weights_, self.biases_, self.objective_histories_ = train_ovr(
                X,
                self.labels_,
                C=self.C,
                epochs=self.svm_epochs,
                seed=self.seed,
            )
        else:
            self.weights_ = np.zeros((0, X.shape[1]))
            self.biases_ = np.zeros(0)
            self.objective_histories_ = []
        return self

    def _check_fitted(self):
        if not hasattr(self, "cluster_centers_"):
            raise NotFittedError("NormalityModel is not fitted; call fit or load first")

    def decision_function(self, X):
        """Max classifier response (ovr) or negated centroid distance."""
        self._check_fitted()
        X = check_feature_matrix(X, n_features=self.n_features_in_)
        if self.scorer == "ovr":
            return (X @ self.weights_.T + self.biases_).max(axis=1)
        diff2 = (
            np.einsum("ij,ij->i", X, X)[:, None]
            - 2.0 * (X @ self.cluster_centers_.T)
            + np.einsum("ij,ij->i", self.cluster_centers_, self.cluster_centers_)[None, :]
        )
        return -np.sqrt(np.maximum(diff2, 0.0).min(axis=1))

    def anomaly_score(self, X):
        """Higher = more abnormal; for ovr this is -max_i g_i(x)."""
        return -self.decision_function(X)

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    # ------------------------------------------------------------------
    # model file (.nvm): little-endian binary
    #   magic(8) | version u32 | scorer u8 | k u32 | n_classifiers u32 |
    #   dim u32 | C f64 | seed i64 | energy f64 |
    #   centroids f64[k*dim] | per classifier: w f64[dim], b f64
    # ------------------------------------------------------------------

    def save(self, path):
        self._check_fitted()
        k, dim = self.cluster_centers_.shape
        blob = bytearray()
        blob += _MAGIC
        blob += struct.pack(
            "<IBIIIdqd",
            _FORMAT_VERSION,
            _SCORER_CODES[self.scorer],
            k,
            self.weights_.shape[0],
            dim,
            float(self.C),
            int(self.seed),
            float(self.energy_),
        )
        blob += self.cluster_centers_.astype("<f8").tobytes()
        for w, b in zip(self.weights_, self.biases_):
            blob += w.astype("<f8").tobytes()
            blob += struct.pack("<d", float(b))
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
        return self

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != _MAGIC:
            raise IncompatibleModelError(f"{path}: not a normality model file")
        header = struct.Struct("<IBIIIdqd")
        if len(data) < 8 + header.size:
            raise CorruptModelError(f"{path}: truncated model file")
        version, scorer_code, k, n_clf, dim, C, seed, energy = header.unpack_from(data, 8)
        if version != _FORMAT_VERSION:
            raise IncompatibleModelError(f"{path}: unsupported format version {version}")
        if scorer_code not in _SCORER_NAMES:
            raise IncompatibleModelError(f"{path}: unknown scorer code {scorer_code}")
        expected = 8 + header.size + 8 * (k * dim + n_clf * (dim + 1))
        if len(data) != expected:
            raise CorruptModelError(
                f"{path}: size {len(data)} != expected {expected} (truncated or corrupt)"
            )
        model = cls(
            n_clusters=k, C=C, scorer=_SCORER_NAMES[scorer_code], seed=seed
        )
        pos = 8 + header.size
        count = k * dim
        model.cluster_centers_ = (
            np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            .reshape(k, dim)
            .astype(np.float64)
        )
        pos += count * 8
        weights = np.empty((n_clf, dim))
        biases = np.empty(n_clf)
        for i in range(n_clf):
            weights[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=pos)
            pos += dim * 8
            (biases[i],) = struct.unpack_from("<d", data, pos)
            pos += 8
        model.weights_ = weights
        model.biases_ = biases
        model.energy_ = energy
        model.n_features_in_ = dim
        return model

    def describe(self):
        self._check_fitted()
        return {
            "kind": "normality",
            "format_version": _FORMAT_VERSION,
            "scorer": self.scorer,
            "n_clusters": int(self.cluster_centers_.shape[0]),
            "n_classifiers": int(self.weights_.shape[0]),
            "feature_dim": int(self.n_features_in_),
            "C": float(self.C),
            "seed": int(self.seed),
            "energy": float(self.energy_),
        }
