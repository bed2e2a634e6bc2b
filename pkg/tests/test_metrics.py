import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.decomposition import PCA
from sklearn.metrics import f1_score

import oracles
from cellkit.errors import NumericalError, ShapeError, ValidationError
from cellkit.metrics import (
    Embedding,
    EvalReport,
    classification_metrics,
    delta_sknn,
    evaluate,
    knn_vote,
    median_bandwidth,
    mmd,
    mmd_gammas,
    pca_fit,
    pca_transform,
    pknn,
    sknn,
)
from cellkit.synthetic import zinb_dataset


def clustered(seed, n=40, dims=2, classes=("a", "b", "c")):
    rng = np.random.default_rng(seed)
    labels = [classes[i % len(classes)] for i in range(n)]
    centres = {c: rng.normal(0, 3, dims) for c in classes}
    pts = np.array([centres[lab] + rng.normal(0, 1, dims) for lab in labels])
    return Embedding(pts, labels)


class TestPca:
    def test_matches_sklearn(self):
        x = np.random.default_rng(0).normal(size=(30, 8)) @ np.diag([5, 4, 3, 2, 1, 1, 1, 1])
        m = pca_fit(x, 3)
        ref = PCA(3, svd_solver="full").fit(x)
        np.testing.assert_allclose(m.explained_variance, ref.explained_variance_, rtol=1e-10)
        np.testing.assert_allclose(np.abs(m.components), np.abs(ref.components_), atol=1e-9)
        np.testing.assert_allclose(m.explained_variance_ratio, ref.explained_variance_ratio_, rtol=1e-9)

    def test_sign_convention(self):
        x = np.random.default_rng(1).normal(size=(20, 5))
        m = pca_fit(x, 4)
        for row in m.components:
            assert row[np.argmax(np.abs(row))] > 0
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(4), atol=1e-12)
        m2 = pca_fit(-x, 4)
        np.testing.assert_allclose(m.components, m2.components, atol=1e-12)

    def test_projection_centred(self):
        x = np.random.default_rng(2).normal(size=(15, 4)) + 10
        z = pca_transform(pca_fit(x, 2), x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)

    @pytest.mark.parametrize("k", [0, 10, 6])
    def test_bad_k(self, k):
        with pytest.raises(ValidationError):
            pca_fit(np.ones((10, 5)), k)

    def test_embedding_validates(self):
        with pytest.raises(ShapeError):
            Embedding(np.ones((3, 2)), ["a", "b"])
        with pytest.raises(ValidationError):
            Embedding(np.array([[np.nan, 0.0]]), ["a"])


class TestMmd:
    def test_gammas(self):
        assert mmd_gammas(2.0) == (0.5, 0.25, 0.125)

    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force(self, seed):
        e = clustered(seed)
        g = clustered(seed + 100)
        omega = oracles.bandwidth(e.points.tolist())
        assert median_bandwidth(e) == pytest.approx(omega, abs=1e-12)
        assert mmd(g, e) == pytest.approx(oracles.mmd(g.points.tolist(), e.points.tolist(), omega), abs=1e-9)

    def test_identical_is_zero(self):
        e = clustered(0)
        assert mmd(e, e) == 0.0

    def test_shift_increases(self):
        e = clustered(0)
        near = Embedding(e.points + 0.1, e.labels)
        far = Embedding(e.points + 5.0, e.labels)
        assert mmd(near, e) < mmd(far, e)

    def test_zero_bandwidth(self):
        pts = np.zeros((30, 2))
        with pytest.raises(NumericalError):
            mmd(pts, pts)

    def test_unequal_sizes(self):
        with pytest.raises(ValidationError):
            mmd(np.zeros((3, 2)), np.zeros((4, 2)), omega=1.0)

    def test_too_few_for_bandwidth(self):
        with pytest.raises(ValidationError):
            median_bandwidth(np.zeros((25, 2)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(12, 2)), rng.normal(1.0, size=(12, 2))
        a, b = mmd(x, y, omega=1.3), mmd(y, x, omega=1.3)
        assert a >= 0 and a == pytest.approx(b, rel=1e-12)


class TestKnn:
    @pytest.mark.parametrize("k", [1, 5, 10])
    def test_sknn_brute_force(self, k):
        e = clustered(3)
        assert sknn(e, k) == pytest.approx(oracles.sknn(e.points.tolist(), e.labels, k), abs=1e-12)

    @pytest.mark.parametrize("k", [1, 4, 9])
    def test_pknn_brute_force(self, k):
        r, g = clustered(4), clustered(5, n=25)
        ref = oracles.pknn(r.points.tolist(), r.labels, g.points.tolist(), g.labels, k)
        assert pknn(r, g, k) == pytest.approx(ref, abs=1e-12)

    def test_ties_by_index(self):
        # point 0 sits at equal distance from points 1 (b) and 2 (a); index 1 wins
        e = Embedding(np.array([[0.0], [1.0], [-1.0], [5.0]]), ["a", "b", "a", "b"])
        assert sknn(e, 1) == (0 + 0 + 1 + 1) / 4

    def test_vote_tie_smallest_distance(self):
        real = Embedding(np.array([[1.0], [-2.0]]), ["b", "a"])
        assert knn_vote(real, np.array([[0.0]]), 2) == ["b"]

    def test_vote_tie_label_name(self):
        real = Embedding(np.array([[1.0], [-1.0]]), ["b", "a"])
        assert knn_vote(real, np.array([[0.0]]), 2) == ["a"]

    def test_k_bounds(self):
        e = clustered(0, n=6)
        with pytest.raises(ValidationError):
            sknn(e, 6)
        with pytest.raises(ValidationError):
            pknn(e, e, 7)
        assert 0 <= pknn(e, e, 6) <= 1

    def test_delta_zero_for_same_set(self):
        e = clustered(2)
        assert delta_sknn(e, e, 5) == 0.0

    def test_separated_clusters_score_one(self):
        pts = np.concatenate([np.zeros((10, 2)), np.full((10, 2), 100.0)]) + np.random.default_rng(0).normal(size=(20, 2))
        e = Embedding(pts, ["x"] * 10 + ["y"] * 10)
        assert sknn(e, 5) == 1.0 and pknn(e, e, 5) == 1.0


class TestClassification:
    def test_against_sklearn(self):
        rng = np.random.default_rng(0)
        classes = ["a", "b", "c", "d"]
        truth = [classes[i] for i in rng.integers(0, 4, 200)]
        pred = [t if rng.random() < 0.7 else classes[rng.integers(0, 4)] for t in truth]
        m = classification_metrics(pred, truth)
        assert m.weighted_f1 == pytest.approx(f1_score(truth, pred, average="weighted"), abs=1e-12)
        assert m.macro_f1 == pytest.approx(f1_score(truth, pred, average="macro"), abs=1e-12)
        assert m.true_accuracy == pytest.approx(np.mean(np.array(pred) == np.array(truth)), abs=1e-15)

    def test_unanswered(self):
        truth = ["a"] * 5 + ["b"] * 5
        pred = ["a"] * 5 + ["b"] * 4 + [None]
        m = classification_metrics(pred, truth)
        assert m.true_accuracy == 0.9
        assert m.n_unanswered == 1
        # F1 over the nine answered pairs is perfect
        assert m.weighted_f1 == 1.0 and m.macro_f1 == 1.0
        np.testing.assert_array_equal(m.confusion, [[5, 0, 0], [0, 4, 1]])

    def test_hand_f1(self):
        m = classification_metrics(["a", "a", "b", "b"], ["a", "b", "b", "b"])
        # a: tp1 fp1 fn0 -> 2/3; b: tp2 fp0 fn1 -> 4/5
        assert m.per_class_f1 == pytest.approx((2 / 3, 0.8))
        assert m.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2)
        assert m.weighted_f1 == pytest.approx((2 / 3 + 3 * 0.8) / 4)

    def test_fixed_labels(self):
        m = classification_metrics(["a"], ["a"], labels=["a", "z"])
        assert m.per_class_f1 == (1.0, 0.0)
        assert m.weighted_f1 == 1.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            classification_metrics(["a"], ["a", "b"])
        with pytest.raises(ValidationError):
            classification_metrics([], [])
        with pytest.raises(ValidationError):
            classification_metrics(["q"], ["a"], labels=["a"])


class TestReport:
    def test_identity_evaluation(self):
        d, _ = zinb_dataset(90, 30, 3, seed=1, log_lib_mean=6.0)
        rep = evaluate(d, d, k_list=(5, 10))
        assert rep["mmd"] == 0.0
        assert rep["delta_sknn.mean"] == 0.0
        assert rep["embedding"]["n_pcs"] == 30
        assert rep["n_real"] == rep["n_generated"] == 90

    def test_json_stable(self, tmp_path):
        d, _ = zinb_dataset(60, 20, 2, seed=2, log_lib_mean=6.0)
        g, _ = zinb_dataset(60, 20, 2, seed=3, log_lib_mean=6.0)
        rep = evaluate(d, g, k_list=(5,))
        rep.save(tmp_path / "r.json")
        text = (tmp_path / "r.json").read_text()
        assert text == evaluate(d, g, k_list=(5,)).to_json()
        data = json.loads(text)
        assert list(data) == sorted(data)
        assert {"mmd", "omega", "pknn.K5", "sknn.K5", "sknn_real.K5", "delta_sknn.K5", "pknn.mean"} <= set(data)

    def test_rounding(self):
        assert EvalReport({"x": 1 / 3}).to_dict()["x"] == 0.333333333333

    def test_vocabulary_mismatch(self):
        d, _ = zinb_dataset(40, 20, 2, seed=2)
        g, _ = zinb_dataset(40, 21, 2, seed=2)
        with pytest.raises(ValidationError):
            evaluate(d, g)
