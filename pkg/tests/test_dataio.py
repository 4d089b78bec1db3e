import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from spectree import (
    SynthConfig,
    hash_features,
    hellinger_transform,
    make_synthetic,
    parse_svmlight,
    rehash_features,
    serialize_svmlight,
)
from spectree.dataio import SvmlightParseError, fnv1a32


class TestParse:
    def test_minimal_two_line_multiclass(self):
        ds = parse_svmlight("0 1:1 2:1\n1 2:1 3:1\n")
        assert (ds.n, ds.d, ds.c, ds.mode) == (2, 3, 2, "multiclass")
        np.testing.assert_array_equal(ds.features.row(0).cols, [0, 1])
        np.testing.assert_array_equal(ds.labels.row(1).cols, [1])

    def test_comma_multilabel(self):
        ds = parse_svmlight("0,2 1:0.5\n1 1:1\n")
        assert ds.mode == "multilabel"
        np.testing.assert_array_equal(ds.labels.row(0).cols, [0, 2])

    def test_average_labels_per_example_summary(self):
        # 100 rows totalling 326 labels -> s = 3.26
        lines = []
        for i in range(100):
            n_lab = 4 if i < 26 else 3
            labs = ",".join(str(j) for j in range(n_lab))
            lines.append(f"{labs} 1:1.0")
        ds = parse_svmlight("\n".join(lines) + "\n")
        assert ds.summary()["s"] == pytest.approx(3.26)

    def test_malformed_token_reports_line(self):
        with pytest.raises(SvmlightParseError, match="line 2"):
            parse_svmlight("0 1:1\n1 2:abc\n")

    def test_duplicate_feature_index_rejected(self):
        with pytest.raises(SvmlightParseError, match="duplicate feature"):
            parse_svmlight("0 1:1 1:2\n")

    def test_out_of_order_feature_rejected(self):
        with pytest.raises(SvmlightParseError, match="out of order"):
            parse_svmlight("0 3:1 1:2\n")

    def test_negative_values_allowed(self):
        ds = parse_svmlight("0 1:-2.5\n1 1:1\n")
        assert ds.features.row(0).vals[0] == -2.5

    def test_header_declares_dimension(self):
        ds = parse_svmlight("#d 10\n0 1:1\n1 2:1\n")
        assert ds.d == 10

    def test_mode_override(self):
        ds = parse_svmlight("0 1:1\n1 2:1\n", mode="multilabel")
        assert ds.mode == "multilabel"

    def test_multiclass_override_rejects_multilabel_rows(self):
        with pytest.raises(ValueError):
            parse_svmlight("0,1 1:1\n", mode="multiclass")

    def test_comments_and_blank_lines_skipped(self):
        ds = parse_svmlight("# a comment\n\n0 1:1\n# more\n1 1:1\n")
        assert ds.n == 2

    def test_round_trip_identity(self, rng):
        lines = []
        for i in range(30):
            labs = sorted(rng.choice(12, size=rng.integers(1, 4), replace=False))
            cols = np.sort(rng.choice(20, size=rng.integers(0, 6), replace=False))
            vals = rng.standard_normal(len(cols))
            parts = [",".join(map(str, labs))]
            parts += [f"{c + 1}:{v:.17g}" for c, v in zip(cols, vals)]
            lines.append(" ".join(parts))
        ds = parse_svmlight("#d 20\n" + "\n".join(lines) + "\n")
        again = parse_svmlight(serialize_svmlight(ds))
        assert again.mode == ds.mode
        assert again.features.n_cols == ds.features.n_cols
        np.testing.assert_array_equal(again.labels.col_indices, ds.labels.col_indices)
        np.testing.assert_allclose(again.features.values, ds.features.values, rtol=1e-9)

    def test_parse_from_file(self, tmp_path):
        p = tmp_path / "data.svm"
        p.write_text("0 1:1\n1 2:1\n")
        assert parse_svmlight(str(p)).n == 2


class TestHellinger:
    def test_forced_arithmetic(self):
        ds = parse_svmlight("0 1:4 3:12\n1 1:1\n")
        out = hellinger_transform(ds)
        np.testing.assert_allclose(out.features.row(0).vals, [0.5, 0.8660254], atol=1e-7)

    def test_singleton_row(self):
        ds = parse_svmlight("0 1:1\n1 1:9\n")
        out = hellinger_transform(ds)
        assert out.features.row(0).vals[0] == 1.0
        assert out.features.row(1).vals[0] == 1.0

    def test_unit_euclidean_norm(self, rng):
        rows = ["0 " + " ".join(f"{j + 1}:{rng.random() * 5:.6f}" for j in range(8))]
        rows.append("1 2:3")
        ds = parse_svmlight("\n".join(rows) + "\n")
        out = hellinger_transform(ds)
        for i in range(out.n):
            v = out.features.row(i).vals
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_negative(self):
        ds = parse_svmlight("0 1:-1\n1 1:1\n")
        with pytest.raises(ValueError):
            hellinger_transform(ds)

    def test_zero_rows_unchanged(self):
        ds = parse_svmlight("#d 3\n0\n1 1:2\n", mode="multiclass")
        out = hellinger_transform(ds)
        assert out.features.row(0).cols.size == 0

    def test_squaring_output_recovers_l1_normalized_input(self, rng):
        # the defining identity: T(x)^2 == x / ||x||_1, elementwise
        ds = parse_svmlight("0 1:4 2:1 3:5\n1 2:2\n")
        out = hellinger_transform(ds)
        x = ds.features.row(0).vals
        t = out.features.row(0).vals
        np.testing.assert_allclose(t**2, x / x.sum(), rtol=1e-12)

    def test_scale_invariance(self):
        a = hellinger_transform(parse_svmlight("0 1:2 2:6\n1 1:1\n"))
        b = hellinger_transform(parse_svmlight("0 1:1 2:3\n1 1:1\n"))
        np.testing.assert_allclose(a.features.row(0).vals, b.features.row(0).vals, rtol=1e-12)

    def test_idempotent_on_uniform_rows(self):
        # uniform rows are the transform's fixed points
        ds = parse_svmlight("0 1:0.25 2:0.25 3:0.25 4:0.25\n1 1:1\n")
        once = hellinger_transform(ds)
        twice = hellinger_transform(once)
        np.testing.assert_allclose(
            once.features.row(0).vals, twice.features.row(0).vals, rtol=1e-12
        )


class TestHashFeatures:
    def test_fnv1a_published_vectors(self):
        assert fnv1a32(b"") == 0x811C9DC5
        assert fnv1a32(b"a") == 0xE40C292C
        assert fnv1a32(b"foobar") == 0xBF9CF968

    def test_empty_sequence(self):
        idx, cnt = hash_features([], 10)
        assert idx.size == 0 and cnt.size == 0

    def test_unigrams_and_bigram(self):
        idx, cnt = hash_features(["a", "b"], 20)
        expected = {fnv1a32(t.encode()) % 2**20 for t in ("a", "b", "a b")}
        assert set(int(i) for i in idx) == expected
        assert cnt.sum() == 3.0

    def test_collisions_sum(self):
        idx, cnt = hash_features(["x", "x", "x"], 16)
        by = dict(zip(idx.tolist(), cnt.tolist()))
        assert by[fnv1a32(b"x") % 2**16] == 3.0
        assert by[fnv1a32(b"x x") % 2**16] == 2.0

    def test_deterministic(self):
        corpus = ["the quick brown fox".split(), "jumps over".split()]
        a = [hash_features(t, 12) for t in corpus]
        b = [hash_features(t, 12) for t in corpus]
        for (i1, c1), (i2, c2) in zip(a, b):
            np.testing.assert_array_equal(i1, i2)
            np.testing.assert_array_equal(c1, c2)

    def test_bits_range(self):
        with pytest.raises(ValueError):
            hash_features(["a"], 0)
        with pytest.raises(ValueError):
            hash_features(["a"], 31)

    def test_rehash_preserves_row_sums(self, rng):
        ds = parse_svmlight("0 1:1 5:2 9:3\n1 2:4\n")
        out = rehash_features(ds, 4)
        assert out.d == 16
        assert out.features.row(0).vals.sum() == pytest.approx(6.0)
        assert out.features.row(1).vals.sum() == pytest.approx(4.0)


class TestSynthetic:
    def test_noiseless_examples_equal_centers_and_1nn_is_perfect(self):
        cfg = SynthConfig(n_classes=5, dim=6, examples_per_class=20,
                          cluster_separation=3.0, noise_sigma=0.0, seed=9)
        train, test = make_synthetic(cfg)
        Xtr = train.features.to_dense()
        cls_tr = train.class_ids()
        # noiseless: all examples of a class coincide
        for k in range(5):
            pts = Xtr[cls_tr == k]
            assert np.ptp(pts, axis=0).max() == 0.0
        # 1-NN oracle from train to test
        Xte = test.features.to_dense()
        cls_te = test.class_ids()
        d2 = ((Xte[:, None, :] - Xtr[None, :, :]) ** 2).sum(-1)
        pred = cls_tr[np.argmin(d2, axis=1)]
        assert np.all(pred == cls_te)

    def test_seed_reproducibility_is_byte_identical(self):
        cfg = SynthConfig(n_classes=4, dim=5, examples_per_class=30, seed=77)
        a_train, a_test = make_synthetic(cfg)
        b_train, b_test = make_synthetic(cfg)
        assert serialize_svmlight(a_train) == serialize_svmlight(b_train)
        assert serialize_svmlight(a_test) == serialize_svmlight(b_test)

    def test_split_ratio(self):
        cfg = SynthConfig(n_classes=3, dim=4, examples_per_class=200, seed=1)
        train, test = make_synthetic(cfg)
        assert train.n == 3 * 180 and test.n == 3 * 20

    def test_flat_softmax_sanity_small(self, rng):
        from flat_oracle import flat_accuracy, flat_train_softmax

        cfg = SynthConfig(n_classes=16, dim=8, examples_per_class=60,
                          cluster_separation=10.0, noise_sigma=1.0, seed=5)
        train, test = make_synthetic(cfg)
        params = flat_train_softmax(train, epochs=5, lr=0.5, lr_decay=1e-4, seed=2)
        assert flat_accuracy(test, params) >= 0.95

    def test_flat_softmax_full_scale(self):
        # the generator's reference config is learnable by a plain softmax
        from flat_oracle import flat_accuracy, flat_train_softmax

        cfg = SynthConfig(n_classes=256, dim=32, examples_per_class=200,
                          cluster_separation=10.0, noise_sigma=1.0, seed=42)
        train, test = make_synthetic(cfg)
        params = flat_train_softmax(train, epochs=5, lr=0.5, lr_decay=1e-4, seed=3)
        assert flat_accuracy(test, params) >= 0.95

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(n_classes=0, dim=3, examples_per_class=2)
        with pytest.raises(ValueError):
            SynthConfig(n_classes=2, dim=3, examples_per_class=2, noise_sigma=-1)


@given(
    rows=hst.lists(
        hst.tuples(
            hst.integers(0, 6),  # label
            hst.lists(hst.floats(-5, 5, allow_nan=False), min_size=0, max_size=4),
        ),
        min_size=1,
        max_size=12,
    )
)
@settings(max_examples=40, deadline=None)
def test_round_trip_property(rows):
    lines = []
    for lab, vals in rows:
        parts = [str(lab)] + [f"{j + 1}:{v:.17g}" for j, v in enumerate(vals)]
        lines.append(" ".join(parts))
    text = "\n".join(lines) + "\n"
    ds = parse_svmlight(text)
    again = parse_svmlight(serialize_svmlight(ds))
    assert again == ds
