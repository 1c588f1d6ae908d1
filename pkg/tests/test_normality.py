import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from ocad.exceptions import (
    CorruptModelError,
    IncompatibleModelError,
    ValidationError,
)
from ocad.normality import NormalityModel, ovr_score, train_ovr


def clustered_features(rng, k=3, n_per=12, dim=24, sep=12.0):
    """k well-separated feature clusters."""
    chunks = []
    for i in range(k):
        c = rng.normal(0, 0.4, (n_per, dim))
        c[:, i] += sep
        chunks.append(c)
    return np.vstack(chunks)


def hand_model(weights, biases, scorer="ovr"):
    model = NormalityModel(n_clusters=len(weights), scorer=scorer)
    model.weights_ = np.asarray(weights, dtype=float)
    model.biases_ = np.asarray(biases, dtype=float)
    model.cluster_centers_ = np.zeros((len(weights), model.weights_.shape[1]))
    model.energy_ = 0.0
    model.n_features_in_ = model.weights_.shape[1]
    return model


class TestScoreSemantics:
    def test_negated_max_of_classifier_scores(self):
        # three classifiers returning +2.0, -1.0, +0.5 on x = [1]
        model = hand_model([[2.0], [-1.0], [0.5]], [0.0, 0.0, 0.0])
        assert model.anomaly_score(np.array([[1.0]]))[0] == pytest.approx(-2.0)

    def test_unclaimed_sample_scores_positive(self):
        model = hand_model([[-0.5], [-0.3], [-2.0]], [0.0, 0.0, 0.0])
        score = model.anomaly_score(np.array([[1.0]]))[0]
        assert score == pytest.approx(0.3)
        assert model.predict(np.array([[1.0]]))[0] == -1  # abnormal

    def test_invariant_under_classifier_permutation(self, rng):
        W = rng.standard_normal((5, 7))
        b = rng.standard_normal(5)
        X = rng.standard_normal((9, 7))
        base = ovr_score(W, b, X)
        perm = rng.permutation(5)
        np.testing.assert_allclose(ovr_score(W[perm], b[perm], X), base, atol=1e-12)

    def test_appending_lower_scoring_classifier_changes_nothing(self, rng):
        W = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        X = rng.standard_normal((5, 6))
        base = ovr_score(W, b, X)
        margin = (X @ W.T + b).max(axis=1)
        # a classifier scoring below every current max on these points
        w_new = np.zeros(6)
        b_new = margin.min() - 5.0
        W2 = np.vstack([W, w_new])
        b2 = np.append(b, b_new)
        np.testing.assert_allclose(ovr_score(W2, b2, X), base, atol=1e-12)

    def test_monotone_in_argmax_classifier(self, rng):
        W = rng.standard_normal((3, 4))
        b = rng.standard_normal(3)
        x = rng.standard_normal((1, 4))
        responses = (x @ W.T + b)[0]
        top = int(responses.argmax())
        before = ovr_score(W, b, x)[0]
        b2 = b.copy()
        b2[top] -= 1.0  # decrease the winning classifier's output
        after = ovr_score(W, b2, x)[0]
        assert after >= before


class TestTrainOvr:
    def test_separable_clusters(self, rng):
        X = clustered_features(rng, k=2, sep=20.0)
        labels = np.array([0] * 12 + [1] * 12)
        W, b, histories = train_ovr(X, labels, C=1.0, seed=0)
        scores = X @ W.T + b
        pred = scores.argmax(axis=1)
        assert (pred == labels).all()
        for h in histories:
            assert h[-1] <= h[0]

    def test_single_cluster_rejected(self, rng):
        X = rng.standard_normal((10, 5))
        with pytest.raises(ValidationError):
            train_ovr(X, np.zeros(10, dtype=int))

    def test_empty_cluster_skipped_with_warning(self, rng, caplog):
        X = clustered_features(rng, k=2, sep=15.0)
        labels = np.array([0] * 12 + [2] * 12)  # cluster id 1 is empty
        with caplog.at_level("WARNING"):
            W, b, _ = train_ovr(X, labels, C=1.0, seed=0)
        assert W.shape[0] == 2
        assert any("empty" in r.message for r in caplog.records)


class TestNormalityModel:
    def test_fit_and_score_separable(self, rng):
        X = clustered_features(rng, k=3)
        model = NormalityModel(n_clusters=3, n_restarts=5, C=1.0, seed=0).fit(X)
        train_scores = model.anomaly_score(X)
        assert (train_scores < 0).mean() > 0.9  # members look normal
        outlier = np.full((1, X.shape[1]), 40.0)
        assert model.anomaly_score(outlier)[0] > 0

    def test_unfitted(self, rng):
        with pytest.raises(NotFittedError):
            NormalityModel().anomaly_score(rng.standard_normal((2, 5)))

    def test_centroid_scorer(self, rng):
        X = clustered_features(rng, k=2)
        model = NormalityModel(n_clusters=2, n_restarts=4, scorer="centroid", seed=1).fit(X)
        d_member = model.anomaly_score(X[:1])[0]
        d_far = model.anomaly_score(np.full((1, X.shape[1]), 30.0))[0]
        assert d_far > d_member
        # score is the euclidean distance to the nearest centroid
        expected = np.sqrt(((X[0] - model.cluster_centers_) ** 2).sum(axis=1)).min()
        assert d_member == pytest.approx(expected, rel=1e-9)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        X = clustered_features(rng, k=2, dim=10)
        model = NormalityModel(n_clusters=2, n_restarts=3, seed=4).fit(X)
        path = tmp_path / "m.nvm"
        model.save(path)
        loaded = NormalityModel.load(path)
        np.testing.assert_array_equal(loaded.cluster_centers_, model.cluster_centers_)
        np.testing.assert_array_equal(loaded.weights_, model.weights_)
        np.testing.assert_array_equal(loaded.biases_, model.biases_)
        assert loaded.energy_ == model.energy_
        assert loaded.C == model.C and loaded.seed == model.seed
        probe = rng.standard_normal((4, 10))
        np.testing.assert_array_equal(loaded.anomaly_score(probe), model.anomaly_score(probe))

    def test_truncated_file(self, tmp_path, rng):
        X = clustered_features(rng, k=2, dim=6)
        model = NormalityModel(n_clusters=2, n_restarts=2, seed=0).fit(X)
        path = tmp_path / "m.nvm"
        model.save(path)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with pytest.raises(CorruptModelError):
            NormalityModel.load(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.nvm"
        path.write_bytes(b"JUNKJUNK" + bytes(64))
        with pytest.raises(IncompatibleModelError):
            NormalityModel.load(path)

    def test_describe(self, rng):
        X = clustered_features(rng, k=2, dim=8)
        model = NormalityModel(n_clusters=2, n_restarts=2, seed=0).fit(X)
        info = model.describe()
        assert info["n_clusters"] == 2 and info["feature_dim"] == 8
        assert info["scorer"] == "ovr"

    def test_unknown_scorer(self, rng):
        with pytest.raises(ValidationError):
            NormalityModel(scorer="mystery").fit(rng.standard_normal((10, 4)))
