"""Engine-level checks: hand values, finite-difference oracles, error paths.

Every differentiable op is compared against central finite differences
computed by re-evaluating the forward function, never by reusing the
engine's own backward pass.
"""

import math

import numpy as np
import pytest

from diffrank import autodiff as ad
from diffrank.errors import DomainError, ShapeError
from diffrank.gradcheck import check_gradients, relative_error

TOL = 1e-4


def _leaf(arr):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestForwardValues:
    def test_softplus_zero_is_log_two(self):
        out = ad.softplus(ad.Tensor([0.0]))
        assert out.data[0] == pytest.approx(math.log(2.0), abs=1e-12)

    def test_softplus_gradient_at_zero_is_half(self):
        x = _leaf([0.0])
        ad.backward(ad.tensor_sum(ad.softplus(x)))
        assert x.grad[0] == pytest.approx(0.5, abs=1e-12)

    def test_softmax_equal_logits_uniform(self):
        out = ad.softmax(ad.Tensor(np.full((1, 5), 3.7)))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-12)

    def test_softmax_rows_sum_to_one(self, rng):
        out = ad.softmax(ad.Tensor(rng.standard_normal((6, 9)) * 30))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_sigmoid_zero(self):
        assert ad.sigmoid(ad.Tensor([0.0])).data[0] == pytest.approx(0.5)

    def test_mean_square_gradient_hand_value(self):
        # d/dx mean(x^2) = 2x/n
        x = _leaf([1.0, -2.0, 3.0])
        ad.backward(ad.tensor_mean(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2.0 * x.data / 3.0, atol=1e-12)

    def test_linear_matches_numpy(self, rng):
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal((1, 5))
        out = ad.linear(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
        np.testing.assert_allclose(out.data, x @ w + b, atol=1e-12)

    def test_embedding_lookup_rows(self, rng):
        table = rng.standard_normal((7, 4))
        out = ad.embedding_lookup(ad.Tensor(table), [5, 0, 5])
        np.testing.assert_allclose(out.data, table[[5, 0, 5]])


class TestErrors:
    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            ad.log(ad.Tensor([1.0, 0.0]))

    def test_sqrt_domain_error(self):
        with pytest.raises(DomainError):
            ad.sqrt(ad.Tensor([-1.0]))

    def test_reciprocal_zero(self):
        with pytest.raises(DomainError):
            ad.reciprocal(ad.Tensor([0.0]))

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)

    def test_add_shape_error(self):
        with pytest.raises(ShapeError):
            ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 2))))

    def test_backward_rejects_non_scalar(self):
        x = _leaf(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            ad.backward(ad.mul(x, x))

    def test_dropout_rejects_bad_probability(self):
        with pytest.raises(DomainError):
            ad.dropout(ad.Tensor([1.0]), 1.0, True, np.random.default_rng(0))


class TestDropout:
    def test_p_zero_is_identity_bitwise(self, rng):
        x = ad.Tensor(rng.standard_normal((5, 3)))
        out = ad.dropout(x, 0.0, True, rng)
        assert out is x

    def test_eval_mode_is_identity(self, rng):
        x = ad.Tensor(rng.standard_normal((5, 3)))
        assert ad.dropout(x, 0.5, False) is x

    def test_training_keeps_expected_scale(self):
        rng = np.random.default_rng(7)
        x = ad.Tensor(np.ones((200, 50)))
        out = ad.dropout(x, 0.3, True, rng)
        kept = out.data != 0
        assert abs(kept.mean() - 0.7) < 0.02
        np.testing.assert_allclose(out.data[kept], 1.0 / 0.7)

    def test_gradient_follows_mask(self):
        rng = np.random.default_rng(3)
        x = _leaf(np.ones((10, 10)))
        out = ad.dropout(x, 0.4, True, rng)
        mask = (out.data != 0).astype(float)
        ad.backward(ad.tensor_sum(out))
        np.testing.assert_allclose(x.grad, mask / 0.6, atol=1e-12)


class TestDeterminism:
    def test_forward_backward_bit_identical(self):
        def run():
            r = np.random.default_rng(99)
            x = _leaf(r.standard_normal((4, 6)))
            w = _leaf(r.standard_normal((6, 3)))
            out = ad.softmax(ad.matmul(ad.softplus(x), w))
            loss = ad.tensor_mean(ad.mul(out, out))
            ad.backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        a = run()
        b = run()
        for u, v in zip(a, b):
            assert np.array_equal(u, v)

    def test_no_grad_blocks_graph(self):
        x = _leaf(np.ones((2, 2)))
        with ad.no_grad():
            out = ad.mul(x, x)
        assert not out.requires_grad and out._parents == ()


def _op_cases(rng):
    """(name, forward over raw arrays, input shapes) for every op."""
    n, d = 4, 5
    return [
        ("add", lambda xs: float((xs[0] + xs[1]).sum()), [(n, d), (n, d)]),
        ("add_scalar", lambda xs: float((xs[0] + xs[1]).sum()), [(n, d), (1, 1)]),
        ("sub", lambda xs: float((xs[0] - xs[1]).sum()), [(n, d), (n, d)]),
        ("mul", lambda xs: float((xs[0] * xs[1]).sum()), [(n, d), (n, d)]),
        ("matmul", lambda xs: float((xs[0] @ xs[1]).sum()), [(n, d), (d, 3)]),
        ("scale", lambda xs: float((xs[0] * -1.7).sum()), [(n, d)]),
        (
            "concat",
            lambda xs: float(np.concatenate(xs, axis=-1).sum() ** 2) / 50.0,
            [(n, 2), (n, 3)],
        ),
        ("slice_cols", lambda xs: float((xs[0][:, 1:4] ** 2).sum()), [(n, d)]),
        ("transpose", lambda xs: float((xs[0].T @ xs[0]).sum()), [(n, d)]),
        ("reshape", lambda xs: float((xs[0].reshape(d, n) ** 2).sum()), [(n, d)]),
        (
            "broadcast_rows",
            lambda xs: float((np.broadcast_to(xs[0], (n, d)) * np.arange(n * d).reshape(n, d)).sum()),
            [(1, d)],
        ),
        (
            "embedding_lookup",
            lambda xs: float((xs[0][[2, 0, 2, 3]] ** 2).sum()),
            [(n, d)],
        ),
        ("softplus", lambda xs: float(np.logaddexp(0, xs[0]).sum()), [(n, d)]),
        (
            "sigmoid",
            lambda xs: float((0.5 * (1 + np.tanh(0.5 * xs[0]))).sum() ** 2) / 10.0,
            [(n, d)],
        ),
        ("exp", lambda xs: float(np.exp(xs[0]).sum()), [(n, d)]),
        (
            "softmax",
            lambda xs: float(
                (_np_softmax(xs[0]) * np.arange(n * d).reshape(n, d)).sum()
            ),
            [(n, d)],
        ),
        ("sum_all", lambda xs: float((xs[0].sum()) ** 2) / 10.0, [(n, d)]),
        ("sum_axis0", lambda xs: float((xs[0].sum(axis=0) ** 2).sum()), [(n, d)]),
        ("mean_axis1", lambda xs: float((xs[0].mean(axis=1) ** 2).sum()), [(n, d)]),
    ]


def _np_softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _graph_for(name, leaves):
    n = leaves[0].data.shape[0] if leaves[0].data.ndim == 2 else 4
    if name in ("add", "add_scalar"):
        return ad.tensor_sum(ad.add(leaves[0], leaves[1]))
    if name == "sub":
        return ad.tensor_sum(ad.sub(leaves[0], leaves[1]))
    if name == "mul":
        return ad.tensor_sum(ad.mul(leaves[0], leaves[1]))
    if name == "matmul":
        return ad.tensor_sum(ad.matmul(leaves[0], leaves[1]))
    if name == "scale":
        return ad.tensor_sum(ad.scale(leaves[0], -1.7))
    if name == "concat":
        s = ad.tensor_sum(ad.concat(leaves))
        return ad.scale(ad.mul(s, s), 1.0 / 50.0)
    if name == "slice_cols":
        z = ad.slice_cols(leaves[0], 1, 4)
        return ad.tensor_sum(ad.mul(z, z))
    if name == "transpose":
        return ad.tensor_sum(ad.matmul(ad.transpose(leaves[0]), leaves[0]))
    if name == "reshape":
        z = ad.reshape(leaves[0], (leaves[0].data.shape[1], leaves[0].data.shape[0]))
        return ad.tensor_sum(ad.mul(z, z))
    if name == "broadcast_rows":
        d = leaves[0].data.shape[1]
        coef = ad.Tensor(np.arange(4 * d, dtype=np.float64).reshape(4, d))
        return ad.tensor_sum(ad.mul(ad.broadcast_rows(leaves[0], 4), coef))
    if name == "embedding_lookup":
        z = ad.embedding_lookup(leaves[0], [2, 0, 2, 3])
        return ad.tensor_sum(ad.mul(z, z))
    if name == "softplus":
        return ad.tensor_sum(ad.softplus(leaves[0]))
    if name == "sigmoid":
        s = ad.tensor_sum(ad.sigmoid(leaves[0]))
        return ad.scale(ad.mul(s, s), 0.1)
    if name == "exp":
        return ad.tensor_sum(ad.exp(leaves[0]))
    if name == "softmax":
        shp = leaves[0].data.shape
        coef = ad.Tensor(np.arange(shp[0] * shp[1], dtype=np.float64).reshape(shp))
        return ad.tensor_sum(ad.mul(ad.softmax(leaves[0]), coef))
    if name == "sum_all":
        s = ad.tensor_sum(leaves[0])
        return ad.scale(ad.mul(s, s), 0.1)
    if name == "sum_axis0":
        z = ad.tensor_sum(leaves[0], axis=0)
        return ad.tensor_sum(ad.mul(z, z))
    if name == "mean_axis1":
        z = ad.tensor_mean(leaves[0], axis=1)
        return ad.tensor_sum(ad.mul(z, z))
    raise AssertionError(name)


@pytest.mark.parametrize("case", _op_cases(None), ids=lambda c: c[0])
def test_op_gradients_match_finite_differences(case):
    name, f, shapes = case
    rng = np.random.default_rng(abs(hash(name)) % (2**32))
    worst = 0.0
    for _ in range(5):
        arrays = [rng.standard_normal(s) for s in shapes]
        leaves = [_leaf(a) for a in arrays]
        ad.backward(_graph_for(name, leaves))
        worst = max(
            worst, check_gradients(f, arrays, [leaf.grad for leaf in leaves])
        )
    assert worst < TOL


def test_log_gradient_matches_finite_differences(rng):
    arrays = [rng.random((4, 5)) + 0.5]
    x = _leaf(arrays[0])
    ad.backward(ad.tensor_sum(ad.log(x)))
    assert check_gradients(lambda xs: float(np.log(xs[0]).sum()), arrays, [x.grad]) < TOL


def test_sqrt_gradient_matches_finite_differences(rng):
    arrays = [rng.random((4, 5)) + 0.5]
    x = _leaf(arrays[0])
    ad.backward(ad.tensor_sum(ad.sqrt(x)))
    assert (
        check_gradients(lambda xs: float(np.sqrt(xs[0]).sum()), arrays, [x.grad]) < TOL
    )


def test_reciprocal_gradient_matches_finite_differences(rng):
    arrays = [rng.random((4, 5)) + 0.5]
    x = _leaf(arrays[0])
    ad.backward(ad.tensor_sum(ad.reciprocal(x)))
    assert (
        check_gradients(lambda xs: float((1.0 / xs[0]).sum()), arrays, [x.grad]) < TOL
    )


def test_layer_norm_gradient_matches_finite_differences(rng):
    n, d = 5, 8

    def f(xs):
        x, g, b = xs
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        out = g * (x - mu) / np.sqrt(var + 1e-5) + b
        return float((out * coef).sum())

    worst = 0.0
    for _ in range(5):
        coef = rng.standard_normal((n, d))
        arrays = [
            rng.standard_normal((n, d)),
            rng.standard_normal((1, d)),
            rng.standard_normal((1, d)),
        ]
        leaves = [_leaf(a) for a in arrays]
        out = ad.layer_norm(*leaves)
        ad.backward(ad.tensor_sum(ad.mul(out, ad.Tensor(coef))))
        worst = max(worst, check_gradients(f, arrays, [leaf.grad for leaf in leaves]))
    assert worst < TOL


def test_composed_three_layer_network_gradient(rng):
    """softplus MLP into softmax, checked end to end against FD."""
    n, k, h = 3, 4, 6
    coef = rng.standard_normal((n, 2))

    def f(xs):
        x, w1, b1, w2, b2 = xs
        z = np.logaddexp(0, x @ w1 + b1)
        p = _np_softmax(z @ w2 + b2)
        return float((p * coef).sum())

    arrays = [
        rng.standard_normal((n, k)),
        rng.standard_normal((k, h)),
        rng.standard_normal((1, h)),
        rng.standard_normal((h, 2)),
        rng.standard_normal((1, 2)),
    ]
    leaves = [_leaf(a) for a in arrays]
    x, w1, b1, w2, b2 = leaves
    z = ad.softplus(ad.linear(x, w1, b1))
    p = ad.softmax(ad.linear(z, w2, b2))
    ad.backward(ad.tensor_sum(ad.mul(p, ad.Tensor(coef))))
    assert check_gradients(f, arrays, [leaf.grad for leaf in leaves]) < TOL


def test_gradients_accumulate_across_graphs(rng):
    x = _leaf(rng.standard_normal((3, 3)))
    ad.backward(ad.tensor_sum(x))
    first = x.grad.copy()
    ad.backward(ad.tensor_sum(x))
    np.testing.assert_allclose(x.grad, 2 * first)


def test_relative_error_uses_unit_floor():
    assert relative_error(np.array([1e-6]), np.array([0.0])) == pytest.approx(1e-6)
