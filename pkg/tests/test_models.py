"""Models, gradients vs finite differences, datasets, partitioning, CSV."""

import math

import numpy as np
import pytest

from sifl.errors import (
    DimensionError,
    EmptyBatch,
    InvalidArgs,
    ParseError,
    ShapeMismatch,
    TooManyClients,
)
from sifl.models import (
    CsvSchema,
    LinearRegression,
    LogisticRegression,
    Mlp,
    accuracy,
    flatten_params,
    load_csv,
    loss_and_grad,
    partition_iid,
    save_csv,
    synth_dataset,
    unflatten_params,
)


def finite_diff_grad(spec, w, X, y, h=1e-5):
    """Central-difference gradient oracle."""
    grad = np.zeros_like(w)
    for i in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wm[i] -= h
        lp, _ = loss_and_grad(spec, wp, X, y)
        lm, _ = loss_and_grad(spec, wm, X, y)
        grad[i] = (lp - lm) / (2 * h)
    return grad


class TestLossAndGrad:
    def test_linear_regression_hand_values(self):
        spec = LinearRegression(d=1)
        loss, grad = loss_and_grad(spec, np.array([0.0]), np.array([[1.0]]), np.array([1.0]))
        assert loss == 0.5
        assert np.array_equal(grad, [-1.0])

    def test_logistic_at_zero_is_log2(self):
        spec = LogisticRegression(d=4, classes=2)
        X = np.random.default_rng(0).standard_normal((20, 4))
        y = np.random.default_rng(1).integers(0, 2, 20)
        loss, _ = loss_and_grad(spec, np.zeros(spec.n), X, y)
        assert abs(loss - math.log(2)) < 1e-12

    @pytest.mark.parametrize("spec", [
        LinearRegression(d=4),
        LogisticRegression(d=4, classes=3),
        Mlp(layers=(2, 3, 2)),
        Mlp(layers=(5, 8, 4, 3)),
    ])
    def test_grad_matches_finite_differences(self, spec):
        rng = np.random.default_rng(42)
        w = 0.5 * rng.standard_normal(spec.n)
        X = rng.standard_normal((12, spec.layer_shapes[0][1]))
        if isinstance(spec, LinearRegression):
            y = rng.standard_normal(12)
        else:
            classes = spec.layer_shapes[-1][0]
            y = rng.integers(0, classes, 12)
        _, grad = loss_and_grad(spec, w, X, y)
        fd = finite_diff_grad(spec, w, X, y)
        denom = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(grad - fd) / denom) < 1e-5

    def test_empty_batch(self):
        spec = LinearRegression(d=2)
        with pytest.raises(EmptyBatch):
            loss_and_grad(spec, np.zeros(2), np.zeros((0, 2)), np.zeros(0))

    def test_dimension_error(self):
        spec = LogisticRegression(d=3, classes=2)
        with pytest.raises(DimensionError):
            loss_and_grad(spec, np.zeros(spec.n + 1), np.zeros((2, 3)), np.zeros(2, dtype=int))


class TestFlatten:
    def test_mlp_wide_param_count(self):
        # the 784-200-200-10 feed-forward network flattens to 199,210 values
        assert Mlp(layers=(784, 200, 200, 10)).n == 199210

    def test_roundtrip(self):
        spec = Mlp(layers=(4, 5, 3))
        rng = np.random.default_rng(3)
        layers = [(rng.standard_normal((5, 4)), rng.standard_normal(5)),
                  (rng.standard_normal((3, 5)), rng.standard_normal(3))]
        flat = flatten_params(spec, layers)
        back = unflatten_params(spec, flat)
        for (W, b), (W2, b2) in zip(layers, back):
            np.testing.assert_array_equal(W, W2)
            np.testing.assert_array_equal(b, b2)

    def test_wrong_length(self):
        spec = Mlp(layers=(4, 5, 3))
        with pytest.raises(ShapeMismatch):
            unflatten_params(spec, np.zeros(spec.n + 1))


class TestAccuracy:
    def test_perfect_separable(self):
        ds = synth_dataset("blobs", 200, 2, seed=5, classes=2, noise=0.05)
        spec = LogisticRegression(d=2, classes=2)
        w = np.zeros(spec.n)
        # one crude least-squares-ish fit: blobs this clean separate linearly
        from sifl.optim import LocalRunConfig, Sgd, init_state, plain_local_run
        w = plain_local_run(spec, init_state(Sgd(eta=0.5), spec.n), w, ds,
                            LocalRunConfig(local_iters=200), np.random.default_rng(0))
        assert accuracy(spec, w, ds) == 1.0

    def test_chance_level_at_zero(self):
        ds = synth_dataset("blobs", 5000, 3, seed=6, classes=10, noise=0.3)
        spec = LogisticRegression(d=3, classes=10)
        acc = accuracy(spec, np.zeros(spec.n), ds)
        assert abs(acc - 0.1) < 0.05

    def test_regression_rejected(self):
        ds = synth_dataset("linear", 10, 2, seed=0)
        with pytest.raises(InvalidArgs):
            accuracy(LinearRegression(d=2), np.zeros(2), ds)


class TestPartition:
    def test_even_split(self):
        ds = synth_dataset("blobs", 60000, 2, seed=1, classes=10)
        part = partition_iid(ds, 10, seed=2)
        assert part.sizes == [6000] * 10

    def test_uneven_split_and_exact_weights(self):
        ds = synth_dataset("blobs", 10, 2, seed=1)
        part = partition_iid(ds, 3, seed=2)
        assert sorted(part.sizes, reverse=True) == [4, 3, 3]
        assert sum(part.weights_exact) == 1
        assert abs(math.fsum(part.weights) - 1.0) <= np.spacing(1.0)

    def test_disjoint_cover(self):
        ds = synth_dataset("blobs", 101, 2, seed=1)
        part = partition_iid(ds, 7, seed=9)
        all_idx = np.concatenate(part.client_indices)
        assert len(all_idx) == 101
        assert len(np.unique(all_idx)) == 101

    def test_too_many_clients(self):
        ds = synth_dataset("blobs", 5, 2, seed=1)
        with pytest.raises(TooManyClients):
            partition_iid(ds, 6, seed=0)


class TestCsv:
    def test_roundtrip_bit_exact(self, tmp_path):
        ds = synth_dataset("blobs", 50, 7, seed=11, classes=3)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        back = load_csv(path, CsvSchema(label_col=0))
        np.testing.assert_array_equal(ds.features, back.features)
        np.testing.assert_array_equal(ds.labels, back.labels)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0,oops\n")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.line == 2

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1.0,2.0,3.0\n1.0,2.0\n")
        with pytest.raises(ParseError) as err:
            load_csv(path)
        assert err.value.line == 2

    def test_header_and_label_column(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("a,b,label\n1.0,2.0,1\n3.0,4.0,0\n")
        ds = load_csv(path, CsvSchema(has_header=True, label_col=-1))
        assert ds.m == 2 and ds.d == 2
        np.testing.assert_array_equal(ds.labels, [1, 0])

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_csv(tmp_path / "nope.csv")


def test_dataset_immutable():
    ds = synth_dataset("blobs", 5, 2, seed=0)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 99.0
