"""k-means with D^2 seeding, Lloyd iterations and min-energy restarts."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ValidationError
from .validation import check_feature_matrix

MAX_LLOYD_ITER = 100


def _sq_distances(X, centers):
    """(n, k) squared euclidean distances."""
    # ||x||^2 - 2 x.c + ||c||^2; clip tiny negatives from cancellation
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        - 2.0 * (X @ centers.T)
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(d2, 0.0)


def _energy(X, centers, labels):
    diff = X - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans_pp_init(X, k, rng):
    """k-means++ seeding: first center uniform, then D^2 sampling."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=X.dtype)
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = _sq_distances(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
        else:  # all remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        centers[j] = X[idx]
        d2 = np.minimum(d2, _sq_distances(X, centers[j:j + 1])[:, 0])
    return centers


def lloyd(X, centers, max_iter=MAX_LLOYD_ITER):
    """Lloyd iterations until assignments are stable or max_iter.

    Empty clusters are re-seeded with the point farthest from its current
    centroid. Returns (centers, labels, energy, energy_trace).
    """
    centers = centers.copy()
    labels = None
    trace = []
    for _ in range(max_iter):
        d2 = _sq_distances(X, centers)
        new_labels = d2.argmin(axis=1)
        own_d2 = d2[np.arange(len(new_labels)), new_labels].copy()
        for j in range(centers.shape[0]):
            members = new_labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                farthest = int(own_d2.argmax())
                centers[j] = X[farthest]
                new_labels[farthest] = j
                own_d2[farthest] = -1.0  # a re-seed point cannot be stolen twice
        trace.append(_energy(X, centers, new_labels))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return centers, labels, trace[-1], np.asarray(trace)


class MinEnergyKMeans(BaseEstimator):
    """k-means taking the minimum-energy partition over several restarts.

    Energy (``inertia_``) is the sum of squared distances of the points to
    their assigned centroids.
    """

    def __init__(self, n_clusters=10, n_restarts=10, max_iter=MAX_LLOYD_ITER, seed=0):
        self.n_clusters = n_clusters
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = check_feature_matrix(X)
        k = self.n_clusters
        if k < 2:
            raise ValidationError(f"n_clusters must be >= 2, got {k}")
        if self.n_restarts < 1:
            raise ValidationError(f"n_restarts must be >= 1, got {self.n_restarts}")
        if np.unique(X, axis=0).shape[0] < k:
            raise ValidationError(
                f"need at least {k} distinct points, got "
                f"{np.unique(X, axis=0).shape[0]}"
            )
        best = None
        traces = []
        for restart in range(self.n_restarts):
            rng = np.random.default_rng([self.seed, restart])
            init = kmeans_pp_init(X, k, rng)
            centers, labels, energy, trace = lloyd(X, init, self.max_iter)
            traces.append(trace)
            if best is None or energy < best[2]:
                best = (centers, labels, energy, len(trace))
        self.cluster_centers_, self.labels_, self.inertia_, self.n_iter_ = best
        self.energy_traces_ = traces
        return self

    def _check_fitted(self):
        if not hasattr(self, "cluster_centers_"):
            raise NotFittedError("MinEnergyKMeans is not fitted")

    def predict(self, X):
        self._check_fitted()
        X = check_feature_matrix(X, n_features=self.cluster_centers_.shape[1])
        return _sq_distances(X, self.cluster_centers_).argmin(axis=1)

    def transform(self, X):
        """Euclidean distances to each centroid, shape (n, k)."""
        self._check_fitted()
        X = check_feature_matrix(X, n_features=self.cluster_centers_.shape[1])
        return np.sqrt(_sq_distances(X, self.cluster_centers_))
