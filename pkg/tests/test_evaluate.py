import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigilance.errors import ConfigError, FoldError, InputError
from vigilance.evaluate import (
    GridSpec,
    brier,
    confusion,
    cross_validate,
    cv_table_csv,
    metrics,
    reliability,
    stratified_kfold,
)


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2])
        assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]
        rep = metrics(cm)
        assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0

    def test_all_one_class(self):
        rep = metrics(confusion([0, 1, 2], [0, 0, 0]))
        np.testing.assert_allclose(rep.precision, [1 / 3, 0, 0], atol=1e-12)
        np.testing.assert_allclose(rep.recall, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(rep.f1, [0.5, 0, 0], atol=1e-12)
        assert rep.macro_f1 == pytest.approx(1 / 6, abs=1e-12)

    def test_hand_computed(self):
        y = [0, 0, 0, 1, 1, 2, 2, 2, 2, 2]
        p = [0, 0, 1, 1, 2, 2, 2, 2, 0, 2]
        rep = metrics(confusion(y, p))
        np.testing.assert_allclose(rep.precision, [2 / 3, 1 / 2, 4 / 5], atol=1e-12)
        np.testing.assert_allclose(rep.recall, [2 / 3, 1 / 2, 4 / 5], atol=1e-12)
        assert rep.accuracy == pytest.approx(0.7, abs=1e-12)
        assert rep.macro_f1 == pytest.approx((2 / 3 + 1 / 2 + 4 / 5) / 3, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(InputError, match="length"):
            confusion([0, 1], [0])

    def test_out_of_range(self):
        with pytest.raises(InputError):
            confusion([0, 3], [0, 1])

    def test_outputs(self):
        rep = metrics(confusion([0, 1, 2], [0, 1, 1]))
        assert "macro" in rep.as_table()
        lines = rep.as_csv().splitlines()
        assert lines[0] == "class,precision,recall,f1" and lines[1].startswith("Wake,")
        assert "np." not in rep.as_csv()

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40),
           st.permutations([0, 1, 2]))
    @settings(max_examples=60, deadline=None)
    def test_relabel_invariance(self, pairs, perm):
        y, p = np.array(pairs).T
        perm = np.array(perm)
        a = metrics(confusion(y, p))
        b = metrics(confusion(perm[y], perm[p]))
        assert a.accuracy == b.accuracy
        assert a.macro_f1 == pytest.approx(b.macro_f1, abs=1e-12)
        np.testing.assert_allclose(a.f1, b.f1[perm], atol=1e-12)


class TestProbabilistic:
    def test_brier_extremes(self):
        y = np.array([0, 1, 2, 1])
        assert brier(np.eye(3)[y], y) == 0.0
        assert brier(np.full((4, 3), 1 / 3), y) == pytest.approx(2 / 3, abs=1e-12)

    def test_brier_bad_rows(self):
        with pytest.raises(InputError, match="row 1"):
            brier(np.array([[1.0, 0, 0], [0.5, 0.6, 0.0]]), [0, 1])

    def test_reliability_confident_correct(self):
        y = np.array([0, 1, 2])
        rep = reliability(np.eye(3)[y], y)
        assert rep.count[-1] == 3 and rep.count[:-1].sum() == 0
        assert rep.mean_conf[-1] == 1.0 and rep.accuracy[-1] == 1.0 and rep.max_deviation == 0.0

    def test_reliability_overconfident(self):
        P = np.tile([0.95, 0.05, 0.0], (4, 1))
        rep = reliability(P, [0, 0, 1, 1])
        assert rep.count[9] == 4
        assert rep.accuracy[9] == 0.5
        assert rep.max_deviation == pytest.approx(0.45, abs=1e-12)

    def test_reliability_empty_bins_blank(self):
        rep = reliability(np.tile([0.55, 0.45, 0.0], (2, 1)), [0, 1])
        rows = rep.as_csv().splitlines()
        assert rows[0] == "bin_lo,bin_hi,count,mean_conf,accuracy"
        assert rows[1].endswith(",0,,") and len(rows) == 11

    def test_bins_partition_and_permutation(self, rng):
        P = rng.dirichlet(np.ones(3), size=200)
        y = rng.integers(0, 3, 200)
        a = reliability(P, y, n_bins=7)
        perm = rng.permutation(200)
        b = reliability(P[perm], y[perm], n_bins=7)
        assert a.count.sum() == 200 and np.array_equal(a.count, b.count)
        np.testing.assert_allclose(np.nan_to_num(a.accuracy), np.nan_to_num(b.accuracy), atol=1e-12)
        assert a.brier == pytest.approx(b.brier, abs=1e-12)

    def test_bad_bins(self):
        with pytest.raises(ConfigError):
            reliability(np.eye(3), [0, 1, 2], n_bins=0)


class TestCrossValidation:
    def test_folds_stratified(self, rng):
        y = np.repeat([0, 1, 2], [10, 7, 5])
        folds = stratified_kfold(y, 5, seed=1)
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(22))
        for f in folds:
            assert np.all(np.bincount(y[f], minlength=3) >= 1)

    def test_too_many_folds(self):
        with pytest.raises(FoldError, match="class 2"):
            stratified_kfold(np.repeat([0, 1, 2], [5, 5, 3]), 4)

    def test_single_config(self, compact_xy):
        X, y = compact_xy
        res = cross_validate(X, y, GridSpec({"n_rounds": [3]}, folds=2))
        assert len(res) == 1 and len(res[0].fold_f1) == 2
        table = cv_table_csv(res).splitlines()
        assert len(table) == 2 and table[0].endswith("mean_brier")

    def test_duplicate_configs_tie_in_grid_order(self, compact_xy):
        X, y = compact_xy
        res = cross_validate(X, y, GridSpec({"n_rounds": [2, 2]}, folds=3))
        assert res[0].fold_f1 == res[1].fold_f1
        assert [r.grid_index for r in res] == [0, 1]

    def test_threads_do_not_change_results(self, compact_xy):
        X, y = compact_xy
        grid = GridSpec({"n_rounds": [2], "max_depth": [1, 3]}, folds=3)
        a = cross_validate(X, y, grid)
        b = cross_validate(X, y, grid, threads=3)
        assert cv_table_csv(a) == cv_table_csv(b)

    def test_small_eta_underfits(self, compact_xy):
        # argmax labels hardly move with eta at 5 rounds, but probabilities do
        X, y = compact_xy
        res = cross_validate(X, y, GridSpec({"eta": [0.01, 0.1], "n_rounds": [5]}, folds=3))
        by_eta = {r.params["eta"]: r for r in res}
        assert by_eta[0.1].mean_brier < by_eta[0.01].mean_brier
        order = [(-r.mean_f1, -r.mean_accuracy, r.grid_index) for r in res]
        assert order == sorted(order)

    def test_logistic_and_mlp_trainers(self, compact_xy):
        X, y = compact_xy
        assert cross_validate(X, y, GridSpec({"max_iter": [50]}, folds=2), "logistic")[0].mean_f1 > 0.5
        res = cross_validate(X, y, GridSpec({"epochs": [2], "hidden": [(8,)]}, folds=2), "mlp")
        assert len(res[0].fold_f1) == 2

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            GridSpec({})
        with pytest.raises(ConfigError):
            GridSpec({"eta": [0.1]}, folds=1)
