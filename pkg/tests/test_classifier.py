from decimal import Decimal, getcontext

import numpy as np
import pytest

from spectree import (
    ArtifactFormatError,
    Dataset,
    SolverParams,
    SparseMatrix,
    SynthConfig,
    TrainConfig,
    TreeConfig,
    build_tree,
    deserialize_model,
    estimate_recall,
    make_synthetic,
    predict,
    predict_batch,
    restricted_softmax,
    serialize_model,
    train,
)
from spectree.metrics import evaluate

from conftest import binary_labels, clustered_dataset, one_hot_labels
from flat_oracle import flat_train_ilr, flat_train_softmax


def _single_leaf_tree(ds, k=None):
    cfg = TreeConfig(max_depth=0, leaf_budget=k or ds.c, recall_target=1.0,
                     solver=SolverParams(seed=0))
    tree, _ = build_tree(ds, cfg)
    return tree


def _small_tree(ds, depth=2, k=2, seed=0):
    cfg = TreeConfig(max_depth=depth, leaf_budget=k, recall_target=1.0,
                     min_node_mass=1e-9, solver=SolverParams(seed=seed))
    tree, _ = build_tree(ds, cfg)
    return tree


class TestRestrictedSoftmax:
    def test_singleton(self):
        np.testing.assert_array_equal(restricted_softmax([3.7]), [1.0])

    def test_equal_scores(self):
        np.testing.assert_allclose(restricted_softmax([2.0] * 4), [0.25] * 4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            restricted_softmax([])

    def test_sums_to_one(self, rng):
        for _ in range(50):
            p = restricted_softmax(rng.standard_normal(rng.integers(1, 9)))
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0)

    def test_matches_high_precision_oracle(self, rng):
        getcontext().prec = 60
        for _ in range(20):
            s = rng.standard_normal(6) * 5
            exps = [Decimal(float(x)).exp() for x in s]
            total = sum(exps)
            expected = np.asarray([float(e / total) for e in exps])
            np.testing.assert_allclose(restricted_softmax(s), expected, atol=1e-12)

    def test_extreme_scores_stable(self):
        p = restricted_softmax(np.array([1000.0, 0.0, -1000.0]))
        assert p[0] == pytest.approx(1.0)
        assert np.isfinite(p).all()


class TestTrainBasics:
    def test_zero_decay_tiny_lr_keeps_params_near_init(self, rng):
        # learning_rate must be > 0 by contract; a vanishing rate leaves
        # parameters unchanged up to float resolution
        ds = clustered_dataset(rng, 40, 5, 3)
        tree = _small_tree(ds)
        tiny = train(ds, tree, TrainConfig(epochs=1, learning_rate=1e-300, seed=1))
        init = train(ds, tree, TrainConfig(epochs=1, learning_rate=1e-300, seed=1))
        np.testing.assert_array_equal(tiny.W, init.W)
        # and the drift from the seeded init is bounded by eta * max|grad|
        rng2 = np.random.default_rng(1)
        W0 = rng2.standard_normal((ds.d, ds.c)) / np.sqrt(ds.d)
        assert np.max(np.abs(tiny.W - W0)) <= 1e-290

    def test_learning_rate_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, learning_rate=0.0)

    def test_deterministic_given_seed(self, rng):
        ds = clustered_dataset(rng, 60, 5, 4)
        tree = _small_tree(ds)
        cfg = TrainConfig(epochs=2, learning_rate=0.3, lr_decay=1e-3, seed=7)
        a = train(ds, tree, cfg)
        b = train(ds, tree, cfg)
        assert serialize_model(a) == serialize_model(b)

    def test_separable_two_class_depth_one(self, rng):
        from conftest import one_hot_labels as ohl

        n_half = 50
        centers = np.array([[5.0, 0.0], [-5.0, 0.0]])
        cls = np.array([0] * n_half + [1] * n_half)
        X = centers[cls] + rng.standard_normal((2 * n_half, 2)) * 0.2
        ds = Dataset(SparseMatrix.from_dense(X, keep_zeros=True), ohl(cls, 2), "multiclass")
        tree = _small_tree(ds, depth=1, k=1)
        model = train(ds, tree, TrainConfig(epochs=2, learning_rate=0.1, seed=0))
        rankings = predict_batch(model, tree, ds.features)
        acc = np.mean([int(r[0]) == int(c) for r, c in zip(rankings, cls)])
        assert acc == 1.0

    def test_skip_rate_reported(self, rng):
        ds = clustered_dataset(rng, 80, 5, 8, separation=1.0, noise=2.0)
        tree = _small_tree(ds, depth=3, k=1)
        model = train(ds, tree, TrainConfig(epochs=1, learning_rate=0.1, seed=0))
        rep = model.train_report
        assert rep.visits == 80
        assert 0.0 <= rep.skip_rate <= 1.0
        assert rep.skips == round(rep.skip_rate * rep.visits)

    def test_multilabel_training_runs_and_predicts(self, rng):
        feats = clustered_dataset(rng, 100, 6, 4).features
        labels = binary_labels(rng, 100, 6, avg_labels=2.0, ensure_nonempty=True)
        ds = Dataset(feats, labels, "multilabel")
        tree = _small_tree(ds, depth=2, k=3)
        model = train(ds, tree, TrainConfig(epochs=2, learning_rate=0.2, seed=3))
        ranked = predict(model, tree, ds.features.row(0))
        assert len(ranked) <= 3
        assert model.mode == "multilabel_ilr"

    def test_mode_mismatch_rejected(self, rng):
        ds = clustered_dataset(rng, 40, 5, 3)
        tree = _small_tree(ds)
        ml = Dataset(ds.features, ds.labels, "multilabel")
        with pytest.raises(ValueError):
            train(ml, tree, TrainConfig(epochs=1, learning_rate=0.1))


class TestFlatReduction:
    """Single-leaf tree with k=c: the composed trainer IS a flat trainer."""

    def test_multiclass_losses_match_flat_oracle_exactly(self, rng):
        ds = clustered_dataset(rng, 120, 7, 6, separation=2.0)
        tree = _single_leaf_tree(ds)
        assert len(tree.nodes) == 1
        cfg = TrainConfig(epochs=3, learning_rate=0.4, lr_decay=1e-3, seed=11)
        model = train(ds, tree, cfg, collect_losses=True)
        oracle = flat_train_softmax(ds, epochs=3, lr=0.4, lr_decay=1e-3, seed=11,
                                    collect_losses=True)
        assert model.train_report.losses == oracle["losses"]
        np.testing.assert_array_equal(model.W, oracle["W"])
        np.testing.assert_array_equal(model.global_bias, oracle["gb"])
        np.testing.assert_array_equal(model.node_bias[0], oracle["nb"])

    def test_multilabel_losses_match_flat_oracle_exactly(self, rng):
        feats = clustered_dataset(rng, 90, 6, 5).features
        labels = binary_labels(rng, 90, 5, avg_labels=2.0, ensure_nonempty=True)
        ds = Dataset(feats, labels, "multilabel")
        tree = _single_leaf_tree(ds)
        cfg = TrainConfig(epochs=2, learning_rate=0.3, lr_decay=0.0, seed=5)
        model = train(ds, tree, cfg, collect_losses=True)
        oracle = flat_train_ilr(ds, epochs=2, lr=0.3, lr_decay=0.0, seed=5,
                                collect_losses=True)
        assert model.train_report.losses == oracle["losses"]
        np.testing.assert_array_equal(model.W, oracle["W"])


class TestGradients:
    @pytest.mark.parametrize("mode", ["multiclass", "multilabel"])
    @pytest.mark.parametrize("rank,now", [(0, False), (3, False), (3, True)])
    def test_finite_differences(self, rng, mode, rank, now):
        from gradcheck import run_gradient_check

        checked = 0
        for _ in range(10):
            checked += run_gradient_check(rng, mode, rank, now)
            if checked:
                break
        assert checked > 0


class TestRestrictionSoundness:
    def test_step_touches_only_reachable_parameters(self, rng):
        ds = clustered_dataset(rng, 100, 6, 6, separation=3.0)
        tree = _small_tree(ds, depth=2, k=2, seed=1)
        leaves = [n.node_id for n in tree.leaves()]
        if len(leaves) < 2:
            pytest.skip("tree collapsed")
        cfg = TrainConfig(epochs=1, learning_rate=0.5, seed=9)
        from spectree.classifier import ClassifierModel

        before = ClassifierModel.initialize(
            "multiclass_softmax", tree, cfg, np.random.default_rng(9)
        )

        # replay exactly one update by training a single example for 1 epoch
        sub_ids = np.asarray([0], dtype=np.int64)
        sub = Dataset(ds.features.take_rows(sub_ids), ds.labels.take_rows(sub_ids),
                      "multiclass")
        model = train(sub, tree, cfg)
        if model.train_report.skips == 1:
            pytest.skip("visit skipped for this draw")

        changed_cols = np.nonzero(np.any(model.W != before.W, axis=0))[0]
        changed_rows = np.nonzero(np.any(model.W != before.W, axis=1))[0]
        # find which leaf the example was routed to: the one whose node_bias moved
        moved = [lid for lid in leaves if np.any(model.node_bias[lid] != 0.0)]
        assert len(moved) == 1
        cand = model.leaf_candidates[moved[0]]
        assert set(changed_cols.tolist()) <= set(cand.tolist())
        assert set(changed_rows.tolist()) <= set(int(x) for x in sub.features.row(0).cols)
        gb_moved = np.nonzero(model.global_bias != before.global_bias)[0]
        assert set(gb_moved.tolist()) <= set(cand.tolist())
        for lid in leaves:
            if lid != moved[0]:
                assert not np.any(model.node_bias[lid])


class TestPredict:
    def test_singleton_candidate_forced(self, rng):
        ds = clustered_dataset(rng, 60, 5, 4, separation=4.0)
        tree = _small_tree(ds, depth=2, k=1, seed=3)
        model = train(ds, tree, TrainConfig(epochs=1, learning_rate=0.1, seed=0))
        for i in range(10):
            row = ds.features.row(i)
            ranked = predict(model, tree, row)
            assert len(ranked) == 1

    def test_zero_weights_tie_break_smallest_class(self, rng):
        ds = clustered_dataset(rng, 60, 5, 4, separation=4.0)
        tree = _single_leaf_tree(ds, k=4)
        model = train(ds, tree, TrainConfig(epochs=1, learning_rate=1e-300, seed=0))
        model.W[:] = 0.0
        model.global_bias[:] = 0.0
        model.node_bias[0][:] = 0.0
        ranked = predict(model, tree, ds.features.row(0))
        np.testing.assert_array_equal(ranked, np.sort(model.leaf_candidates[0]))

    def test_matches_full_scoring_oracle(self, rng):
        ds = clustered_dataset(rng, 120, 6, 8, separation=3.0)
        tree = _small_tree(ds, depth=2, k=3, seed=5)
        model = train(ds, tree, TrainConfig(epochs=2, learning_rate=0.3, seed=2))
        from spectree.tree import route_deterministic

        for i in range(40):
            row = ds.features.row(i)
            leaf_id, cands = route_deterministic(tree, row)
            # oracle: score ALL classes densely, then mask to the candidates
            x = np.zeros(ds.d)
            x[row.cols] = row.vals
            full = x @ model.W + model.global_bias
            cand_sorted = model.leaf_candidates[leaf_id]
            masked = full[cand_sorted] + model.node_bias[leaf_id]
            order = np.argsort(-masked, kind="stable")
            expected = cand_sorted[order]
            got = predict(model, tree, row)
            np.testing.assert_array_equal(got, expected)

    def test_batch_equals_single(self, rng):
        ds = clustered_dataset(rng, 100, 6, 6, separation=3.0)
        tree = _small_tree(ds, depth=2, k=3, seed=5)
        model = train(ds, tree, TrainConfig(epochs=1, learning_rate=0.3, seed=2))
        batch = predict_batch(model, tree, ds.features)
        for i in range(ds.n):
            np.testing.assert_array_equal(batch[i], predict(model, tree, ds.features.row(i)))

    def test_accuracy_bounded_by_deterministic_recall(self, rng):
        cfg = SynthConfig(n_classes=16, dim=8, examples_per_class=50,
                          cluster_separation=6.0, noise_sigma=1.2, seed=13)
        tr, te = make_synthetic(cfg)
        tree = _small_tree(tr, depth=3, k=2, seed=1)
        model = train(tr, tree, TrainConfig(epochs=3, learning_rate=0.3, seed=0))
        rep = evaluate(model, tree, te)
        assert rep.accuracy <= rep.tree_recall_test + 1e-12


class TestLowRank:
    def test_low_rank_trains_and_predicts(self, rng):
        ds = clustered_dataset(rng, 150, 8, 6, separation=5.0, noise=0.5)
        tree = _small_tree(ds, depth=2, k=2, seed=1)
        cfg = TrainConfig(epochs=4, learning_rate=0.2, seed=3, rank=4,
                          node_output_weights=True)
        model = train(ds, tree, cfg)
        rep = evaluate(model, tree, ds)
        assert rep.accuracy >= 0.8

    def test_shared_output_variant(self, rng):
        ds = clustered_dataset(rng, 120, 8, 5, separation=5.0, noise=0.5)
        tree = _small_tree(ds, depth=2, k=2, seed=1)
        model = train(ds, tree, TrainConfig(epochs=4, learning_rate=0.2, seed=3, rank=4))
        assert model.V is not None and not model.node_output

    def test_node_output_requires_rank(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, learning_rate=0.1, rank=0, node_output_weights=True)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_run_raises_instead_of_returning_nan(self, rng):
        # low-rank coupling with an absurd learning rate compounds to
        # overflow; the finite-parameters contract must surface it
        ds = clustered_dataset(rng, 120, 8, 6, separation=40.0, noise=1.0)
        tree = _small_tree(ds, depth=2, k=3, seed=1)
        with pytest.raises(ValueError, match="diverged"):
            train(ds, tree, TrainConfig(epochs=3, learning_rate=50.0, seed=3,
                                        rank=4, node_output_weights=True))


class TestModelSerialization:
    def _model(self, rng, rank=0, now=False, mode="multiclass"):
        if mode == "multiclass":
            ds = clustered_dataset(rng, 80, 6, 5, separation=3.0)
        else:
            feats = clustered_dataset(rng, 80, 6, 5).features
            ds = Dataset(feats, binary_labels(rng, 80, 5, 2.0, True), "multilabel")
        tree = _small_tree(ds, depth=2, k=2, seed=1)
        cfg = TrainConfig(epochs=1, learning_rate=0.2, seed=2, rank=rank,
                          node_output_weights=now)
        return train(ds, tree, cfg)

    @pytest.mark.parametrize("rank,now,mode", [
        (0, False, "multiclass"),
        (3, False, "multiclass"),
        (3, True, "multilabel"),
    ])
    def test_round_trip(self, rng, rank, now, mode):
        model = self._model(rng, rank, now, mode)
        blob = serialize_model(model)
        again = deserialize_model(blob)
        assert serialize_model(again) == blob
        assert again.mode == model.mode
        if rank == 0:
            np.testing.assert_array_equal(again.W, model.W)
        else:
            np.testing.assert_array_equal(again.U, model.U)
        for lid, cand in model.leaf_candidates.items():
            np.testing.assert_array_equal(again.leaf_candidates[lid], cand)
            np.testing.assert_array_equal(again.node_bias[lid], model.node_bias[lid])

    def test_reloaded_artifacts_predict_identically(self, rng):
        from spectree import deserialize_tree, serialize_tree

        ds = clustered_dataset(rng, 120, 6, 6, separation=3.0)
        tree = _small_tree(ds, depth=2, k=3, seed=4)
        model = train(ds, tree, TrainConfig(epochs=2, learning_rate=0.3, seed=7))
        tree2 = deserialize_tree(serialize_tree(tree))
        model2 = deserialize_model(serialize_model(model))
        a = predict_batch(model, tree, ds.features)
        b = predict_batch(model2, tree2, ds.features)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_version_mismatch_rejected(self, rng):
        blob = bytearray(serialize_model(self._model(rng)))
        blob[4] = 0x7F
        with pytest.raises(ArtifactFormatError, match="version|checksum"):
            deserialize_model(bytes(blob))

    def test_corruption_rejected(self, rng):
        blob = bytearray(serialize_model(self._model(rng)))
        blob[-3] ^= 0x10
        with pytest.raises(ArtifactFormatError):
            deserialize_model(bytes(blob))

    def test_truncation_rejected(self, rng):
        blob = serialize_model(self._model(rng))
        with pytest.raises(ArtifactFormatError):
            deserialize_model(blob[:-10])

    def test_documented_byte_layout_bias_triples(self, rng):
        import struct

        model = self._model(rng)
        blob = serialize_model(model)
        # the node-bias table is the trailing section: u64 count then
        # (u32 leaf, u32 class, f64 value) triples in ascending order
        n_entries = sum(len(c) for c in model.leaf_candidates.values())
        tail = 8 + 16 * n_entries
        off = len(blob) - tail
        (count,) = struct.unpack_from("<Q", blob, off)
        assert count == n_entries
        off += 8
        expected = []
        for lid in sorted(model.leaf_candidates):
            for j, cid in enumerate(model.leaf_candidates[lid]):
                expected.append((lid, int(cid), float(model.node_bias[lid][j])))
        for exp in expected:
            got = struct.unpack_from("<IId", blob, off)
            assert got == exp
            off += 16
