"""Stage engine: candidate choice, early stopping, rollback, threading."""
import numpy as np
import pytest

from mbgam.boosting import StageParams, fit_interaction_stage, fit_main_stage
from mbgam.data import Dataset, Task
from mbgam.losses import init_offset, mean_loss
from mbgam.trees import TreeParams, predict_tree


def make_sets(seed=0, n=400, p=3, task=Task.CONTINUOUS, valid_noise=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    Xv = rng.normal(size=(n // 2, p))

    def signal(M):
        return np.sin(2.0 * M[:, 0]) + 0.5 * M[:, 1]

    if task is Task.CONTINUOUS:
        y = signal(X) + 0.3 * rng.normal(size=n)
        if valid_noise:
            yv = rng.normal(size=len(Xv))  # unrelated: no real improvement possible
        else:
            yv = signal(Xv) + 0.3 * rng.normal(size=len(Xv))
    else:
        y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-signal(X)))).astype(float)
        yv = (rng.uniform(size=len(Xv)) < 1.0 / (1.0 + np.exp(-signal(Xv)))).astype(float)
    names = tuple(f"x{j}" for j in range(p))
    train = Dataset(names, X, y, task)
    valid = Dataset(names, Xv, yv, task)
    g = np.full(n, init_offset(y, task))
    gv = np.full(len(Xv), init_offset(y, task))
    return train, valid, g, gv


def stage_params(iters=30, patience=10, threads=1, debug=False):
    return StageParams(
        tree=TreeParams(max_depth=2, min_leaf=20),
        max_iterations=iters,
        learning_rate=0.2,
        patience=patience,
        threads=threads,
        debug=debug,
    )


class TestMainStage:
    def test_training_and_validation_loss_drop(self):
        train, valid, g, gv = make_sets()
        res, g1, gv1 = fit_main_stage(train, valid, g, gv, stage_params())
        assert res.stop_iterations == len(res.trees) > 0
        assert mean_loss(train.target, g1, train.task) < mean_loss(
            train.target, g, train.task
        )
        assert res.validation_curve[res.stop_iterations] < res.validation_curve[0]

    def test_curve_starts_at_prestage_loss(self):
        train, valid, g, gv = make_sets()
        res, *_ = fit_main_stage(train, valid, g, gv, stage_params(iters=5))
        assert res.validation_curve[0] == mean_loss(valid.target, gv, valid.task)

    def test_predictions_are_offset_plus_scaled_trees(self):
        train, valid, g, gv = make_sets()
        res, g1, gv1 = fit_main_stage(train, valid, g, gv, stage_params(iters=8))
        rebuilt = g.copy()
        for tree, scale in res.trees:
            assert scale == 0.2
            rebuilt = rebuilt + scale * predict_tree(
                tree, train.column(tree.model_var), train.column(tree.split_var)
            )
        np.testing.assert_array_equal(rebuilt, g1)

    def test_threads_do_not_change_anything(self):
        train, valid, g, gv = make_sets(seed=4)
        r1, g1, gv1 = fit_main_stage(train, valid, g.copy(), gv.copy(), stage_params(iters=12, threads=1))
        r4, g4, gv4 = fit_main_stage(train, valid, g.copy(), gv.copy(), stage_params(iters=12, threads=4))
        assert r1.validation_curve == r4.validation_curve
        np.testing.assert_array_equal(g1, g4)
        np.testing.assert_array_equal(gv1, gv4)
        seq1 = [(t.model_var, t.split_var) for t, _ in r1.trees]
        seq4 = [(t.model_var, t.split_var) for t, _ in r4.trees]
        assert seq1 == seq4

    def test_binary_task_reduces_log_loss(self):
        train, valid, g, gv = make_sets(seed=7, task=Task.BINARY)
        res, g1, gv1 = fit_main_stage(train, valid, g, gv, stage_params())
        assert mean_loss(valid.target, gv1, Task.BINARY) < mean_loss(
            valid.target, gv, Task.BINARY
        )


class TestEarlyStopping:
    def test_unrelated_validation_target_stops_fast_and_rolls_back(self):
        train, valid, g, gv = make_sets(seed=11, valid_noise=True)
        res, g1, gv1 = fit_main_stage(
            train, valid, g.copy(), gv.copy(), stage_params(iters=200, patience=3)
        )
        # the stop must have triggered well before the iteration budget
        ran = len(res.validation_curve) - 1
        assert ran < 200
        assert res.stop_iterations == ran - 3
        assert len(res.trees) == res.stop_iterations
        # benchmark entry is no worse than everything recorded after it
        bench = res.validation_curve[res.stop_iterations]
        assert bench <= min(res.validation_curve[res.stop_iterations + 1 :])

    def test_rollback_matches_shorter_run_exactly(self):
        train, valid, g, gv = make_sets(seed=11, valid_noise=True)
        res, g1, gv1 = fit_main_stage(
            train, valid, g.copy(), gv.copy(), stage_params(iters=200, patience=3)
        )
        stop = res.stop_iterations
        res2, g2, gv2 = fit_main_stage(
            train, valid, g.copy(), gv.copy(), stage_params(iters=stop, patience=10**6)
        )
        assert res2.stop_iterations == stop
        np.testing.assert_array_equal(g1, g2)
        np.testing.assert_array_equal(gv1, gv2)
        assert res.validation_curve[: stop + 1] == res2.validation_curve

    def test_hopeless_validation_rolls_back_to_zero_iterations(self):
        # validation target is the exact negation of the signal: every boost
        # step moves validation loss up, so the stage keeps nothing
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 1))
        Xv = rng.normal(size=(150, 1))
        train = Dataset(("a",), X, 2.0 * X[:, 0], Task.CONTINUOUS)
        valid = Dataset(("a",), Xv, -2.0 * Xv[:, 0], Task.CONTINUOUS)
        g = np.zeros(300)
        gv = np.zeros(150)
        res, g1, gv1 = fit_main_stage(
            train, valid, g.copy(), gv.copy(), stage_params(iters=50, patience=4)
        )
        assert res.stop_iterations == 0
        assert res.trees == []
        assert len(res.validation_curve) == 5
        np.testing.assert_array_equal(g1, g)
        np.testing.assert_array_equal(gv1, gv)

    def test_budget_exhaustion_keeps_everything(self):
        train, valid, g, gv = make_sets(seed=5)
        res, *_ = fit_main_stage(train, valid, g, gv, stage_params(iters=6, patience=10**6))
        assert res.stop_iterations == len(res.trees) == 6
        assert len(res.validation_curve) == 7


class TestInteractionStage:
    def test_self_combo_rejected(self):
        train, valid, g, gv = make_sets()
        with pytest.raises(ValueError, match="models its split"):
            fit_interaction_stage(train, valid, g, gv, [(0, 1), (2, 2)], stage_params())

    def test_empty_combos_is_a_noop(self):
        train, valid, g, gv = make_sets()
        res, g1, gv1 = fit_interaction_stage(train, valid, g, gv, [], stage_params())
        assert res.trees == [] and res.stop_iterations == 0
        assert res.validation_curve == [mean_loss(valid.target, gv, valid.task)]
        assert g1 is g and gv1 is gv

    def test_sse_tie_prefers_smaller_combo(self):
        # columns 0 and 1 are identical, so (0, 2) and (1, 2) produce the
        # same SSE; listing the larger combo first must not win the tie
        rng = np.random.default_rng(9)
        n = 300
        x0 = rng.normal(size=n)
        x2 = rng.normal(size=n)
        X = np.column_stack([x0, x0, x2])
        y = x0 * x2 + 0.1 * rng.normal(size=n)
        train = Dataset(("a", "b", "c"), X, y, Task.CONTINUOUS)
        valid = train.take(np.arange(n // 2))
        g = np.zeros(n)
        gv = np.zeros(n // 2)
        res, *_ = fit_interaction_stage(
            train, valid, g, gv, [(1, 2), (0, 2)], stage_params(iters=1, patience=10**6)
        )
        tree, _ = res.trees[0]
        assert (tree.model_var, tree.split_var) == (0, 2)

    def test_interaction_stage_fits_product_signal(self):
        rng = np.random.default_rng(12)
        n = 500
        X = rng.normal(size=(n, 2))
        y = X[:, 0] * X[:, 1]
        Xv = rng.normal(size=(200, 2))
        yv = Xv[:, 0] * Xv[:, 1]
        train = Dataset(("a", "b"), X, y, Task.CONTINUOUS)
        valid = Dataset(("a", "b"), Xv, yv, Task.CONTINUOUS)
        g, gv = np.zeros(n), np.zeros(200)
        res, g1, gv1 = fit_interaction_stage(
            train, valid, g, gv, [(0, 1), (1, 0)], stage_params(iters=80)
        )
        assert mean_loss(yv, gv1, Task.CONTINUOUS) < 0.25 * mean_loss(
            yv, gv, Task.CONTINUOUS
        )

    def test_debug_records_candidate_sse(self):
        train, valid, g, gv = make_sets()
        res, *_ = fit_interaction_stage(
            train, valid, g, gv, [(0, 1), (1, 0)],
            stage_params(iters=3, patience=10**6, debug=True),
        )
        ran = len(res.validation_curve) - 1
        assert res.candidate_sse is not None
        assert len(res.candidate_sse) == ran
        assert all(len(row) == 2 for row in res.candidate_sse)
