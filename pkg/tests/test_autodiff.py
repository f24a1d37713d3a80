import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpcgcn import autodiff as ad
from tpcgcn.autodiff import Tensor
from tpcgcn.gradcheck import finite_diff_check
from tpcgcn.rng import SeededRng
from tpcgcn.sparse import ShapeError, SparseMatrix, sparse_identity


def leaf(values, seed=None, shape=None):
    if values is None:
        arr = SeededRng(seed).normal(shape[0] * shape[1]).reshape(shape)
    else:
        arr = np.asarray(values, dtype=np.float64)
    return Tensor(arr, requires_grad=True)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    a = leaf(np.eye(2))
    b = leaf([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(a, b).value, b.value)


def test_matmul_forced_arithmetic():
    out = ad.matmul(leaf([[1.0, 2.0]]), leaf([[3.0], [4.0]]))
    assert np.array_equal(out.value, [[11.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2\).*\(3, 1\)"):
        ad.matmul(leaf([[1.0, 2.0]]), leaf([[1.0], [2.0], [3.0]]))


def test_matmul_gradcheck():
    a = leaf(None, seed=1, shape=(3, 4))
    b = leaf(None, seed=2, shape=(4, 2))
    err = finite_diff_check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])
    assert err < 1e-6


# ---------------------------------------------------------------- spmm


def test_spmm_identity():
    d = leaf(None, seed=3, shape=(4, 3))
    assert np.array_equal(ad.spmm(sparse_identity(4), d).value, d.value)


def test_spmm_backward_is_transpose_product():
    s = SparseMatrix(3, 2, [(0, 0, 2.0), (1, 1, 3.0), (2, 0, 1.0)])
    d = leaf(None, seed=4, shape=(2, 2))
    err = finite_diff_check(lambda: ad.sum_all(ad.spmm(s, d)), [d])
    assert err < 1e-6


# ---------------------------------------------------------------- elementwise


def test_relu_values():
    assert np.array_equal(ad.relu(leaf([[1.0, -2.0]])).value, [[1.0, 0.0]])


def test_relu_subgradient_zero_at_zero():
    x = leaf([[0.0, 2.0]])
    ad.sum_all(ad.relu(x)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0]])


def test_tanh_odd_at_zero():
    assert np.array_equal(ad.tanh_elem(leaf([[0.0]])).value, [[0.0]])


@pytest.mark.parametrize("op", [ad.relu, ad.tanh_elem, ad.sigmoid])
def test_elementwise_gradchecks(op):
    x = leaf(None, seed=5, shape=(2, 3))
    err = finite_diff_check(lambda: ad.sum_all(op(x)), [x])
    assert err < 1e-6


def test_sigmoid_extreme_values_stable():
    out = ad.sigmoid(leaf([[800.0, -800.0]]))
    assert np.all(np.isfinite(out.value))
    assert out.value[0, 0] == pytest.approx(1.0)
    assert out.value[0, 1] == pytest.approx(0.0)


# ---------------------------------------------------------------- softmax CE


def test_ce_symmetric_logits():
    loss, probs = ad.softmax_cross_entropy(leaf([[0.0, 0.0]]), [1])
    assert loss.value[0, 0] == pytest.approx(np.log(2.0), abs=1e-12)
    assert np.allclose(probs, [[0.5, 0.5]])


def test_ce_extreme_logits_no_overflow():
    loss, probs = ad.softmax_cross_entropy(leaf([[1000.0, 0.0]]), [0])
    assert loss.value[0, 0] == pytest.approx(0.0, abs=1e-10)
    assert np.all(np.isfinite(probs))


def test_ce_matches_naive_oracle():
    rng = SeededRng(6)
    logits = rng.normal(12).reshape(4, 3) * 2
    labels = [0, 2, 1, 2]
    # naive formula on safe-range inputs
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    expected = -np.mean([np.log(p[i, labels[i]]) for i in range(4)])
    loss, probs = ad.softmax_cross_entropy(leaf(logits), labels)
    assert abs(loss.value[0, 0] - expected) < 1e-10
    assert np.allclose(probs, p, atol=1e-12)


def test_ce_gradcheck():
    x = leaf(None, seed=7, shape=(4, 3))
    labels = [0, 2, 1, 1]
    err = finite_diff_check(lambda: ad.softmax_cross_entropy(x, labels)[0], [x])
    assert err < 1e-6


def test_ce_label_out_of_range():
    with pytest.raises(ValueError, match="label out of range"):
        ad.softmax_cross_entropy(leaf([[0.0, 0.0]]), [2])


def test_ce_empty_batch():
    with pytest.raises(ValueError, match="label"):
        ad.softmax_cross_entropy(Tensor(np.zeros((0, 2)), requires_grad=True), [])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 10_000))
def test_softmax_rows_sum_to_one_and_ce_nonnegative(n, k, seed):
    logits = SeededRng(seed).normal(n * k).reshape(n, k) * 5
    labels = (SeededRng(seed + 1).uniform(n) * k).astype(int)
    loss, probs = ad.softmax_cross_entropy(leaf(logits), labels)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert loss.value[0, 0] >= 0.0


# ---------------------------------------------------------------- dropout


def test_dropout_rate_zero_identity():
    x = leaf(None, seed=8, shape=(3, 3))
    out = ad.dropout(x, 0.0, SeededRng(0), training=True)
    assert out is x


def test_dropout_inference_identity():
    x = leaf(None, seed=9, shape=(3, 3))
    out = ad.dropout(x, 0.35, SeededRng(0), training=False)
    assert out is x


def test_dropout_preserves_expectation():
    x = Tensor(np.ones((100, 1000)))
    out = ad.dropout(x, 0.35, SeededRng(123), training=True)
    assert abs(out.value.mean() - 1.0) < 0.01


def test_dropout_invalid_rate():
    x = leaf([[1.0]])
    with pytest.raises(ValueError, match="rate"):
        ad.dropout(x, 1.0, SeededRng(0), training=True)


def test_dropout_gradcheck_with_frozen_mask():
    x = leaf(None, seed=10, shape=(3, 4))
    err = finite_diff_check(
        lambda: ad.sum_all(ad.dropout(x, 0.4, SeededRng(77), training=True)), [x]
    )
    assert err < 1e-6


# ---------------------------------------------------------------- structure ops


def test_mean_rows_values_and_permutation():
    x = leaf([[1.0, 3.0], [3.0, 1.0], [2.0, 2.0], [9.0, 9.0]])
    a = ad.mean_rows(x, [0, 1, 2])
    b = ad.mean_rows(x, [2, 0, 1])
    assert np.array_equal(a.value, [[2.0, 2.0]])
    assert np.array_equal(a.value, b.value)


def test_mean_rows_single_row():
    x = leaf([[1.0, 2.0], [5.0, 6.0]])
    assert np.array_equal(ad.mean_rows(x, [1]).value, [[5.0, 6.0]])


def test_take_rows_and_duplicates():
    x = leaf([[1.0], [2.0], [3.0]])
    out = ad.take_rows(x, [2, 0, 2])
    assert np.array_equal(out.value, [[3.0], [1.0], [3.0]])
    ad.sum_all(out).backward()
    assert np.array_equal(x.grad, [[1.0], [0.0], [2.0]])


@pytest.mark.parametrize(
    "build",
    [
        lambda x, y: ad.add(x, y),
        lambda x, y: ad.sub(x, y),
        lambda x, y: ad.mul(x, y),
    ],
)
def test_binary_op_gradchecks(build):
    x = leaf(None, seed=11, shape=(2, 3))
    y = leaf(None, seed=12, shape=(2, 3))
    err = finite_diff_check(lambda: ad.sum_all(build(x, y)), [x, y])
    assert err < 1e-6


def test_misc_op_gradchecks():
    x = leaf(None, seed=13, shape=(3, 4))
    bias = leaf(None, seed=14, shape=(1, 4))
    scale = leaf(None, seed=15, shape=(3, 1))
    checks = [
        (lambda: ad.sum_all(ad.add_bias(x, bias)), [x, bias]),
        (lambda: ad.sum_all(ad.row_scale(x, scale)), [x, scale]),
        (lambda: ad.sum_all(ad.mean_rows(x, [0, 2])), [x]),
        (lambda: ad.sum_all(ad.take_rows(x, [1, 1, 0])), [x]),
        (lambda: ad.sum_all(ad.neg(x)), [x]),
        (lambda: ad.sum_all(ad.mul_const(x, -2.5)), [x]),
        (lambda: ad.sum_all(ad.add_const(x, 3.0)), [x]),
    ]
    for loss_fn, params in checks:
        assert finite_diff_check(loss_fn, params) < 1e-6


def test_grad_accumulates_until_zeroed():
    x = leaf([[1.0, 1.0]])
    ad.sum_all(x).backward()
    ad.sum_all(x).backward()
    assert np.array_equal(x.grad, [[2.0, 2.0]])


def test_backward_requires_scalar():
    x = leaf([[1.0, 2.0]])
    with pytest.raises(ShapeError, match="1x1"):
        ad.relu(x).backward()


def test_quadratic_loss_analytic_gradient():
    w = leaf(None, seed=16, shape=(4, 4))
    err = finite_diff_check(lambda: ad.sum_all(ad.mul(w, w)), [w])
    assert err < 1e-8
    w.grad = np.zeros_like(w.value)
    ad.sum_all(ad.mul(w, w)).backward()
    assert np.allclose(w.grad, 2 * w.value, atol=1e-12)
