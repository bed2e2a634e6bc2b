import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from cellkit.errors import ShapeError, ValidationError
from cellkit.expr import CellAnnotations, Dataset, ExpressionMatrix, normalize_log1p
from cellkit.interpret import (
    ClassifierConfig,
    ClassifierParams,
    aggregate_top_genes,
    cross_entropy,
    dataset_inputs,
    gene_mask,
    init_classifier,
    predict,
    predict_batch,
    rank_markers,
    saliency_scores,
    train_classifier,
    vanilla_gradient,
    welch_arrays,
    welch_t,
)
from cellkit.numkit import backward, check_gradients
from cellkit.synthetic import separable_dataset


class TestWelch:
    def test_worked_example(self):
        r = welch_t([1, 2, 3], [1, 2, 3, 4, 5, 6])
        assert r.t == pytest.approx(-1.5 * math.sqrt(12 / 11), abs=1e-12)
        assert r.df == pytest.approx(605 / 89, abs=1e-12)
        assert r.p == pytest.approx(0.16243478744179732, abs=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(0, rng.uniform(0.5, 3), rng.integers(2, 30))
            b = rng.normal(0.5, rng.uniform(0.5, 3), rng.integers(2, 30))
            ref = stats.ttest_ind(a, b, equal_var=False)
            r = welch_t(a, b)
            assert r.t == pytest.approx(ref.statistic, rel=1e-12)
            assert r.p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)
            assert r.df == pytest.approx(ref.df, rel=1e-12)

    def test_degenerate_equal(self):
        r = welch_t([2, 2, 2], [2, 2])
        assert (r.t, r.df, r.p) == (0.0, 3.0, 1.0)

    def test_degenerate_unequal(self):
        r = welch_t([1, 1], [0, 0, 0])
        assert r.t == math.inf and r.p == 0.0 and r.df == 3.0

    @pytest.mark.filterwarnings("ignore:Precision loss")
    def test_one_side_constant(self):
        ref = stats.ttest_ind([1.0, 1.0, 1.0], [0.0, 1.0, 2.0, 5.0], equal_var=False)
        assert welch_t([1, 1, 1], [0, 1, 2, 5]).p == pytest.approx(ref.pvalue, rel=1e-10)

    def test_needs_two_per_group(self):
        with pytest.raises(ValidationError):
            welch_t([1.0], [1.0, 2.0])

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(7, 5)), rng.normal(1.0, 2.0, size=(9, 5))
        t, df, p = welch_arrays(a, b)
        for j in range(5):
            r = welch_t(a[:, j], b[:, j])
            assert (t[j], df[j], p[j]) == pytest.approx((r.t, r.df, r.p), rel=1e-14)

    def test_tiny_variance_no_underflow(self):
        r = welch_t([0.0, 0.0], [6.2e-131, 0.0])
        assert r.df == pytest.approx(1.0) and r.p == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100)),
           hnp.arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100)))
    def test_antisymmetric_and_bounded(self, a, b):
        ab, ba = welch_t(a, b), welch_t(b, a)
        assert ab.t == pytest.approx(-ba.t, rel=1e-12, abs=1e-300) or (math.isinf(ab.t) and ab.t == -ba.t)
        assert ab.p == pytest.approx(ba.p, rel=1e-12)
        assert 0.0 <= ab.p <= 1.0


def marker_dataset():
    rng = np.random.default_rng(4)
    counts = rng.poisson(5.0, (40, 12))
    labels = ["a"] * 15 + ["b"] * 25
    counts[:15, 3] += 40
    counts[:15, 7] += 15
    counts[15:, 9] += 30
    m = ExpressionMatrix(counts, [f"g{j}" for j in range(12)])
    return Dataset(m, CellAnnotations.uniform(labels))


class TestMarkers:
    def test_brute_force_ranking(self):
        d = marker_dataset()
        x = normalize_log1p(d.matrix)
        sel = np.array(d.annotations.labels) == "a"
        res = []
        for j in range(12):
            r = welch_t(x[sel, j], x[~sel, j])
            res.append((r.p, -abs(r.t), j))
        expected = [f"g{j}" for _, _, j in sorted(res)[:3]]
        table = rank_markers(d, "a", top_k=3)
        assert table.genes() == expected
        assert table.genes()[0] == "g3"
        for row in table.rows:
            r = welch_t(x[sel, row.index], x[~sel, row.index])
            assert (row.t, row.p) == (r.t, r.p)

    def test_down_regulated_in_rest(self):
        d = marker_dataset()
        t = rank_markers(d, "b", top_k=None)
        assert len(t.rows) == 12
        assert t.rows[0].gene in {"g3", "g9"}

    def test_unknown_class(self):
        with pytest.raises(ValidationError):
            rank_markers(marker_dataset(), "zzz")

    def test_tsv(self):
        out = rank_markers(marker_dataset(), "a", top_k=2).to_tsv()
        lines = out.strip().split("\n")
        assert lines[0].split("\t")[:3] == ["gene", "class", "rank"]
        assert len(lines) == 3 and lines[1].startswith("g3\ta\t1\t")


class TestSaliency:
    def test_hand_example(self):
        g = np.array([-2.0, -1.0, 0.5, -3.0, -0.5])
        s = np.array([1.0, 2.0, 3.0, 0.0, 1.0])
        # masked: genes 0, 1, 4; o = [2, 1, 0, 0, 0.5]
        np.testing.assert_allclose(saliency_scores(g, s), [1.0, 0.5, 0.0, 0.0, 0.25])
        np.testing.assert_allclose(saliency_scores(g, s, gene_set=[1, 4]), [0.0, 1.0, 0.0, 0.0, 0.5])

    def test_constant_is_zero(self):
        np.testing.assert_array_equal(saliency_scores(np.ones(4), np.ones(4)), np.zeros(4))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gene_mask(np.ones(3), np.ones(4))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 16, elements=st.floats(-5, 5)),
           hnp.arrays(np.float64, 16, elements=st.floats(0, 5)),
           st.sets(st.integers(0, 15)))
    def test_mask_property(self, g, s, gset):
        out = saliency_scores(g, s, gene_set=gset)
        outside = np.ones(16, dtype=bool)
        outside[list(gset)] = False
        blocked = outside | (g >= 0) | (s == 0)
        assert np.all(out[blocked] == 0.0)
        assert np.all((out >= 0) & (out <= 1))

    def test_aggregate_ties_and_missing(self):
        scores = np.array([[0.5, 0.5, 0.1], [0.5, 0.5, 0.9], [0.0, 1.0, 0.0]])
        with pytest.warns(UserWarning, match="c"):
            r = aggregate_top_genes(scores, ["a", "a", "b"], n=2, classes=["a", "b", "c"])
        assert r.classes == ("a", "b")
        assert r.top_genes("a") == [0, 1]  # tie on 0.5 resolved by index
        assert r.top_genes("b", genes=["x", "y", "z"])[0] == "y"
        assert r.n_cells == (2, 1)


class TestClassifier:
    def test_gradients(self):
        p = init_classifier(5, ["a", "b", "c"], hidden=(4,), seed=1)
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(6, 5)), np.array([0, 1, 2, 0, 1, 2])
        grads = backward(cross_entropy(p, x, y), p.store)
        res = check_gradients(lambda: cross_entropy(p, x, y).item(), {k: t.data for k, t in p.store.items()}, grads)
        assert res.ok(), res

    def test_input_gradient(self):
        p = init_classifier(5, ["a", "b"], hidden=(4,), seed=2)
        s = np.abs(np.random.default_rng(1).normal(size=5))
        g = vanilla_gradient(p, s, "b")
        res = check_gradients(lambda: cross_entropy(p, s, [1]).item(), {"s": s}, {"s": g})
        assert res.ok(), res

    def test_predict_shapes(self):
        p = init_classifier(3, ["x", "y"], hidden=(2,))
        lab, probs = predict(p, np.ones(3))
        assert lab in ("x", "y") and probs.sum() == pytest.approx(1.0)
        with pytest.raises(ShapeError):
            predict(p, np.ones((2, 3)))
        with pytest.raises(ShapeError):
            predict(p, np.ones(4))

    def test_unknown_target(self):
        p = init_classifier(3, ["x", "y"], hidden=(2,))
        with pytest.raises(ValidationError):
            vanilla_gradient(p, np.ones(3), "z")

    def test_trains_on_separable(self, tmp_path):
        d = separable_dataset(150, 24, 3, seed=0)
        r = train_classifier(d, ClassifierConfig(epochs=30, hidden=(16,), lr=1e-2, seed=0))
        labels, _ = predict_batch(r.params, dataset_inputs(r.params, d))
        assert np.mean(np.array(labels) == np.array(d.annotations.labels)) >= 0.95
        r.params.save(tmp_path)
        back = ClassifierParams.load(tmp_path)
        np.testing.assert_array_equal(predict_batch(back, dataset_inputs(back, d))[1],
                                      predict_batch(r.params, dataset_inputs(r.params, d))[1])

    def test_needs_two_classes(self):
        d = separable_dataset(20, 8, 1, seed=0)
        with pytest.raises(ValidationError):
            train_classifier(d, ClassifierConfig(epochs=1))

    def test_vocabulary_checked(self):
        d = separable_dataset(20, 8, 2, seed=0)
        p = init_classifier(8, ["class_0", "class_1"], genes=[f"x{j}" for j in range(8)])
        with pytest.raises(ValidationError):
            dataset_inputs(p, d)
