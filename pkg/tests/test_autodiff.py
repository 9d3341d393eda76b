import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pathctx import autodiff as ad
from pathctx.errors import ContractError, ShapeError


def t64(values, requires_grad=False):
    return ad.Tensor(np.asarray(values, dtype=np.float64), requires_grad=requires_grad)


def param(values, name="w"):
    return ad.Parameter(np.asarray(values, dtype=np.float64), name)


def check_op(build, params, tol=1e-4, coords=200):
    """Gradient-check an op via a scalar sum-of-outputs loss."""
    err = ad.finite_diff_check(lambda: ad.sum_(build()), params, max_coords_per_param=coords)
    assert err < tol, err


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_gelu_and_sigmoid_fixed_points():
    assert float(ad.gelu(t64([0.0])).data[0]) == 0.0
    assert float(ad.sigmoid(t64([0.0])).data[0]) == 0.5


def test_softmax_symmetry():
    out = ad.softmax(t64([[0.0, 0.0, 0.0]])).data
    np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.integers(-3, 4, (2, 3)).astype(np.float64)
    b = rng.integers(-3, 4, (3, 2)).astype(np.float64)
    expected = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_array_equal(ad.matmul(ad.Tensor(a), ad.Tensor(b)).data, expected)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as info:
        ad.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))
    assert "(2, 3)" in str(info.value)


def test_softmax_masked_rows():
    x = t64([[1.0, 5.0, 2.0]])
    mask = np.array([[True, False, True]])
    out = ad.softmax(x, mask=mask).data
    assert out[0, 1] == 0.0
    assert abs(out[0].sum() - 1.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.data())
def test_softmax_rows_are_distributions(rows, cols, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    x = np.random.default_rng(seed).normal(0, 5, (rows, cols))
    out = ad.softmax(ad.Tensor(x)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(rows), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.data())
def test_layer_norm_standardizes(rows, cols, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    x = np.random.default_rng(seed).normal(3.0, 2.0, (rows, cols))
    assume(x.var(axis=-1).min() > 0.05)  # eps swamps near-constant rows
    gain = param(np.ones(cols), "g")
    bias = param(np.zeros(cols), "b")
    out = ad.layer_norm(ad.Tensor(x), gain, bias).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


def test_dropout_inference_is_identity():
    x = t64(np.random.default_rng(0).normal(size=(4, 4)))
    assert ad.dropout(x, 0.5, None, training=False) is x


def test_dropout_training_scales_kept_values():
    rng = np.random.default_rng(0)
    x = t64(np.ones((1000,)))
    out = ad.dropout(x, 0.25, rng, training=True).data
    kept = out != 0
    np.testing.assert_allclose(out[kept], 1 / 0.75)
    assert 0.6 < kept.mean() < 0.9


def test_embedding_lookup():
    table = param(np.arange(12, dtype=np.float64).reshape(4, 3), "emb")
    out = ad.embedding(table, np.array([[0, 2], [3, 3]]))
    np.testing.assert_array_equal(out.data[0, 1], [6, 7, 8])
    np.testing.assert_array_equal(out.data[1, 0], [9, 10, 11])


# ---------------------------------------------------------------------------
# backward: trivial closed forms
# ---------------------------------------------------------------------------


def test_backward_of_sum_is_ones():
    w = param(np.random.default_rng(0).normal(size=(3, 4)))
    ad.backward(ad.sum_(w))
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_backward_sigmoid_at_zero():
    w = param([0.0])
    ad.backward(ad.sum_(ad.sigmoid(w)))
    np.testing.assert_allclose(w.grad, [0.25])


def test_backward_requires_scalar():
    w = param(np.ones(3))
    with pytest.raises(ContractError):
        ad.backward(w + w)


def test_gradients_accumulate_until_zeroed():
    w = param([2.0])
    ad.backward(ad.sum_(w * w))
    ad.backward(ad.sum_(w * w))
    np.testing.assert_allclose(w.grad, [8.0])
    ad.zero_grad([w])
    assert w.grad is None


def test_embedding_gradient_scatter_adds():
    table = param(np.zeros((3, 2)), "emb")
    out = ad.embedding(table, np.array([1, 1, 0]))
    ad.backward(ad.sum_(out))
    np.testing.assert_array_equal(table.grad, [[1, 1], [2, 2], [0, 0]])


# ---------------------------------------------------------------------------
# per-op gradient checks vs central differences (the checker is the oracle)
# ---------------------------------------------------------------------------


def rand(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


@pytest.mark.parametrize(
    "build_params",
    [
        lambda: ([param(rand((3, 4), 0), "a"), param(rand((3, 4), 1), "b")], lambda p: p[0] + p[1]),
        lambda: ([param(rand((3, 1), 2), "a"), param(rand((1, 4), 3), "b")], lambda p: p[0] * p[1]),
        lambda: ([param(rand((2, 3), 4), "a"), param(rand((3, 4), 5), "b")], lambda p: p[0] @ p[1]),
        lambda: (
            [param(rand((2, 2, 3), 6), "a"), param(rand((3, 5), 7), "b")],
            lambda p: p[0] @ p[1],
        ),
        lambda: ([param(rand((4, 5), 8), "x")], lambda p: ad.softmax(p[0])),
        lambda: (
            [param(rand((2, 6), 9), "x")],
            lambda p: ad.softmax(p[0], mask=np.array([[True] * 4 + [False] * 2, [True] * 6])),
        ),
        lambda: ([param(rand((3, 4), 10), "x")], lambda p: ad.gelu(p[0])),
        lambda: ([param(rand((3, 4), 11), "x")], lambda p: ad.sigmoid(p[0])),
        lambda: (
            [param(rand((4, 6), 12), "x"), param(np.abs(rand(6, 13)) + 0.5, "g"), param(rand(6, 14), "b")],
            lambda p: ad.layer_norm(p[0], p[1], p[2]),
        ),
        lambda: ([param(rand((5, 3), 15), "emb")], lambda p: ad.embedding(p[0], np.array([[0, 4], [2, 2]]))),
        lambda: (
            [param(rand((2, 3), 16), "a"), param(rand((2, 2), 17), "b")],
            lambda p: ad.concat([p[0], p[1]], axis=1),
        ),
        lambda: ([param(rand((3, 4), 18), "x")], lambda p: ad.reshape(p[0], (2, 6))),
        lambda: ([param(rand((2, 3, 4), 19), "x")], lambda p: ad.transpose(p[0], (2, 0, 1))),
        lambda: ([param(rand((3, 5), 20), "x")], lambda p: p[0][:, 1:3]),
        lambda: ([param(np.abs(rand((3, 3), 21)) + 0.5, "x")], lambda p: ad.log(p[0])),
        lambda: ([param(rand((4, 4), 22), "x")], lambda p: ad.clip(p[0], -10.0, 10.0)),
        lambda: ([param(rand((2, 3, 4), 23), "x")], lambda p: ad.sum_(p[0], axis=1)),
    ],
    ids=[
        "add",
        "mul_broadcast",
        "matmul2d",
        "matmul_batched",
        "softmax",
        "softmax_masked",
        "gelu",
        "sigmoid",
        "layer_norm",
        "embedding",
        "concat",
        "reshape",
        "transpose",
        "slice",
        "log",
        "clip",
        "sum_axis",
    ],
)
def test_op_gradients_match_finite_differences(build_params):
    params, build = build_params()
    check_op(lambda: build(params), params)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.data())
def test_matmul_gradient_random_shapes(n, k, m, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    a = param(rng.normal(size=(n, k)), "a")
    b = param(rng.normal(size=(k, m)), "b")
    check_op(lambda: a @ b, [a, b], coords=30)


def test_dropout_gradient_with_frozen_mask():
    # reuse one mask across closure calls so the check sees a deterministic fn
    x = param(rand((4, 4), 30), "x")
    mask = (np.random.default_rng(9).random((4, 4)) >= 0.5) / 0.5

    class FixedRng:
        def random(self, shape):
            return np.where(mask > 0, 0.9, 0.1)

    check_op(lambda: ad.dropout(x, 0.5, FixedRng(), training=True), [x])


# ---------------------------------------------------------------------------
# finite_diff_check on closed forms
# ---------------------------------------------------------------------------


def test_quadratic_check_is_exact():
    w = param([1.0, -2.0, 0.5], "w")
    err = ad.finite_diff_check(lambda: ad.sum_(w * w), [w])
    assert err < 1e-8


def test_check_rejects_float32():
    w = ad.Parameter(np.ones(2, dtype=np.float32), "w")
    with pytest.raises(ContractError):
        ad.finite_diff_check(lambda: ad.sum_(w), [w])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameters():
    w = param([1.0, 2.0], "w")
    w.grad = np.zeros(2)
    state = ad.AdamState(lr=0.1)
    ad.adam_step([w], state)
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_adam_first_step_moves_by_lr():
    w = param([0.0], "w")
    w.grad = np.ones(1)
    ad.adam_step([w], ad.AdamState(lr=1e-3))
    np.testing.assert_allclose(w.data, [-1e-3], atol=1e-9)


def test_adam_missing_gradient_is_contract_error():
    w = param([0.0], "w")
    with pytest.raises(ContractError):
        ad.adam_step([w], ad.AdamState())


def test_adam_descends_scalar_quadratic():
    w = param([0.0], "w")
    state = ad.AdamState(lr=0.1)
    for _ in range(100):
        ad.zero_grad([w])
        diff = w - 3.0
        ad.backward(ad.sum_(diff * diff))
        ad.adam_step([w], state)
    assert abs(float(w.data[0]) - 3.0) < 0.5


def test_no_grad_suppresses_tape():
    w = param([1.0], "w")
    with ad.no_grad():
        out = w * w
    assert out._parents == () and not out.requires_grad
