import numpy as np
import pytest

from src.autodiff import ComputationTape, ContractError, NumericError, ShapeError, Tensor, no_grad, ops
from src.autodiff.gradcheck import check_gradients, numerical_gradient, relative_error
from src.autodiff.module import Module, Parameter


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def assert_gradients(loss_fn, params, tol=1e-3):
    errors = check_gradients(loss_fn, params)
    assert max(errors.values()) < tol, errors


class TestElementwise:
    def test_add_broadcasts_bias_row(self, rng):
        x = leaf(rng, 2, 3, 4)
        b = leaf(rng, 4)
        y = ops.add(x, b)
        np.testing.assert_array_equal(y.data, x.data + b.data)
        ops.sum(y).backward()
        np.testing.assert_allclose(b.grad, np.full(4, 6.0))
        np.testing.assert_allclose(x.grad, np.ones((2, 3, 4)))

    def test_trailing_mismatch_raises(self, rng):
        with pytest.raises(ShapeError):
            ops.add(leaf(rng, 3, 4), leaf(rng, 5))

    def test_scale_sub_mul_square(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
        assert_gradients(lambda: ops.sum(ops.square(ops.mul(ops.sub(a, b), ops.scale(a, 0.5)))), {"a": a, "b": b})


class TestMatmul:
    def test_values(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        np.testing.assert_allclose(ops.matmul(a, b).data, a.data @ b.data)

    def test_shared_weight_gradient(self, rng):
        x, w = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        weights = Tensor(rng.standard_normal((2, 3, 5)))
        assert_gradients(lambda: ops.sum(ops.mul(ops.matmul(x, w), weights)), {"x": x, "w": w})

    def test_inner_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ops.matmul(leaf(rng, 3, 4), leaf(rng, 3, 4))

    def test_transpose(self, rng):
        x = leaf(rng, 2, 3, 4)
        assert ops.transpose(x).shape == (2, 4, 3)


class TestNonlinear:
    @pytest.mark.parametrize("shape", [(3, 5), (2, 3, 6)])
    def test_gelu_layernorm_gradients(self, rng, shape):
        x = leaf(rng, *shape)
        weights = Tensor(rng.standard_normal(shape))
        assert_gradients(lambda: ops.sum(ops.mul(ops.layernorm(ops.gelu(x)), weights)), {"x": x})

    def test_layernorm_statistics(self, rng):
        y = ops.layernorm(leaf(rng, 4, 16)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-4)

    def test_layernorm_rejects_nonpositive_eps(self, rng):
        with pytest.raises(ContractError):
            ops.layernorm(leaf(rng, 2, 3), eps=0.0)

    @pytest.mark.parametrize("axis", [0, 1, -1])
    def test_softmax_and_log_softmax(self, rng, axis):
        x = leaf(rng, 4, 5)
        np.testing.assert_allclose(ops.softmax(x, axis).data.sum(axis=axis), 1.0)
        np.testing.assert_allclose(np.exp(ops.log_softmax(x, axis).data), ops.softmax(x, axis).data)
        weights = Tensor(rng.standard_normal((4, 5)))
        assert_gradients(lambda: ops.sum(ops.mul(ops.log_softmax(x, axis), weights)), {"x": x})

    def test_softmax_is_shift_stable(self):
        x = Tensor(np.array([[1000.0, 1000.0, 999.0]]))
        assert np.isfinite(ops.softmax(x).data).all()

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            ops.gelu(Tensor(np.array([[np.nan, 1.0]])))

    @pytest.mark.parametrize(
        "apply",
        [
            lambda bad, ok: ops.add(bad, ok),
            lambda bad, ok: ops.add(ok, bad),
            lambda bad, ok: ops.sub(ok, bad),
            lambda bad, ok: ops.mul(bad, ok),
            lambda bad, ok: ops.matmul(bad, ok),
            lambda bad, ok: ops.matmul(ok, bad),
            lambda bad, ok: ops.scale(bad, 2.0),
            lambda bad, ok: ops.square(bad),
        ],
        ids=["add", "add-right", "sub", "mul", "matmul", "matmul-right", "scale", "square"],
    )
    @pytest.mark.parametrize("value", [np.nan, np.inf])
    def test_arithmetic_rejects_non_finite(self, apply, value):
        bad = Tensor(np.array([[value, 1.0], [0.5, 2.0]]))
        ok = Tensor(np.ones((2, 2)))
        with pytest.raises(NumericError):
            apply(bad, ok)

    def test_l2_normalize(self, rng):
        x = leaf(rng, 3, 4)
        np.testing.assert_allclose(np.linalg.norm(ops.l2_normalize(x).data, axis=-1), 1.0)
        weights = Tensor(rng.standard_normal((3, 4)))
        assert_gradients(lambda: ops.sum(ops.mul(ops.l2_normalize(x), weights)), {"x": x})

    def test_l2_normalize_zero_row(self):
        with pytest.raises(NumericError):
            ops.l2_normalize(Tensor(np.zeros((2, 3))))


class TestReductionsAndIndexing:
    def test_mean_axis(self, rng):
        x = leaf(rng, 2, 3, 4)
        np.testing.assert_allclose(ops.mean(x, axis=1).data, x.data.mean(axis=1))
        weights = Tensor(rng.standard_normal((2, 4)))
        assert_gradients(lambda: ops.sum(ops.mul(ops.mean(x, axis=1), weights)), {"x": x})

    def test_gather_rows_batched_repeats_accumulate(self, rng):
        x = leaf(rng, 2, 4, 3)
        index = np.array([[0, 0, 3], [2, 1, 2]])
        y = ops.gather_rows(x, index)
        np.testing.assert_array_equal(y.data[1, 2], x.data[1, 2])
        ops.sum(y).backward()
        assert x.grad[0, 0, 0] == 2.0
        assert x.grad[0, 1, 0] == 0.0

    def test_gather_rows_out_of_range(self, rng):
        with pytest.raises(ShapeError):
            ops.gather_rows(leaf(rng, 4, 3), np.array([4]))

    def test_concat_and_slice(self, rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 4, 3)
        joined = ops.concat([a, b], axis=0)
        np.testing.assert_array_equal(ops.slice(joined, 0, 2, 6).data, b.data)
        weights = Tensor(rng.standard_normal((3, 3)))
        assert_gradients(lambda: ops.sum(ops.mul(ops.slice(ops.concat([a, b], 0), 0, 1, 4), weights)), {"a": a, "b": b})

    def test_concat_off_axis_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ops.concat([leaf(rng, 2, 3), leaf(rng, 2, 4)], axis=0)


class TestTape:
    def test_backward_needs_scalar(self, rng):
        with pytest.raises(ContractError):
            ops.add(leaf(rng, 2, 2), leaf(rng, 2, 2)).backward()

    def test_backward_on_leaf(self):
        with pytest.raises(ContractError):
            Tensor(np.asarray(1.0), requires_grad=True).backward()

    def test_shared_subexpression_visited_once(self, rng):
        x = leaf(rng, 2, 2)
        h = ops.square(x)
        loss = ops.sum(ops.add(h, h))
        tape = ComputationTape.from_root(loss)
        assert len(tape) == 3
        loss.backward()
        np.testing.assert_allclose(x.grad, 4.0 * x.data)

    def test_gradients_accumulate_across_calls(self, rng):
        x = leaf(rng, 2, 2)
        ops.sum(x).backward()
        ops.sum(x).backward()
        np.testing.assert_allclose(x.grad, 2.0)

    def test_no_grad_records_nothing(self, rng):
        x = leaf(rng, 2, 2)
        with no_grad():
            y = ops.square(x)
        assert not y.requires_grad
        assert y.is_leaf

    def test_operators_match_ops(self, rng):
        x, y = leaf(rng, 3, 4), leaf(rng, 3, 4)
        w = leaf(rng, 4, 2)
        np.testing.assert_array_equal((x + y).data, ops.add(x, y).data)
        np.testing.assert_array_equal((x - y).data, ops.sub(x, y).data)
        np.testing.assert_array_equal((x * y).data, ops.mul(x, y).data)
        np.testing.assert_array_equal((2.0 * x).data, ops.scale(x, 2.0).data)
        np.testing.assert_array_equal((-x).data, -x.data)
        np.testing.assert_allclose((x / 4.0).data, x.data / 4.0)
        np.testing.assert_array_equal((x @ w).data, ops.matmul(x, w).data)

    def test_detach_cuts_history(self, rng):
        x = leaf(rng, 2, 2)
        y = ops.square(x).detach()
        assert y.is_leaf and not y.requires_grad
        ops.sum(ops.mul(x, y)).backward()
        np.testing.assert_allclose(x.grad, y.data)


class TestGradcheck:
    def test_numerical_gradient_restores_data(self, rng):
        x = leaf(rng, 2, 3)
        before = x.data.copy()
        grad = numerical_gradient(lambda: ops.sum(ops.square(x)), x)
        np.testing.assert_allclose(grad, 2 * before, rtol=1e-6, atol=1e-8)
        np.testing.assert_array_equal(x.data, before)

    def test_relative_error_floor(self):
        assert relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)


class Pair(Module):
    def __init__(self):
        self.a = Parameter(np.ones((2, 2)))
        self.children = [Parameter(np.zeros(3))]


class TestModule:
    def test_named_parameters_recurse_lists(self):
        names = [name for name, _ in Pair().named_parameters()]
        assert names == ["a", "children.0"]

    def test_state_dict_round_trip(self):
        source, target = Pair(), Pair()
        source.a.data[:] = 5.0
        target.load_state_dict(source.state_dict())
        np.testing.assert_array_equal(target.a.data, source.a.data)
        assert source.num_parameters() == 7


UNARY_OPS = {
    "scale": lambda x: ops.scale(x, -1.7),
    "square": ops.square,
    "transpose": ops.transpose,
    "mean": lambda x: ops.mean(x, axis=0),
    "softmax": lambda x: ops.softmax(x, axis=-1),
    "log_softmax": lambda x: ops.log_softmax(x, axis=0),
    "gelu": ops.gelu,
    "layernorm": ops.layernorm,
    "l2_normalize": ops.l2_normalize,
    "gather_rows": lambda x: ops.gather_rows(x, np.array([2, 0, 2])),
    "slice": lambda x: ops.slice(x, 1, 1, 3),
}
BINARY_OPS = {
    "add": ops.add,
    "sub": ops.sub,
    "mul": ops.mul,
    "matmul": lambda a, b: ops.matmul(a, ops.transpose(b)),
    "concat": lambda a, b: ops.concat([a, b], axis=0),
}


class TestGradientsAcrossSeeds:
    """Every op against central differences on inputs drawn from [-1, 1]."""

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("name", sorted(UNARY_OPS))
    def test_unary(self, name, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-1.0, 1.0, (3, 4)), requires_grad=True)
        weights = rng.uniform(-1.0, 1.0, UNARY_OPS[name](x).shape)
        assert_gradients(lambda: ops.sum(ops.mul(UNARY_OPS[name](x), Tensor(weights))), {"x": x}, tol=1e-4)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("name", sorted(BINARY_OPS))
    def test_binary(self, name, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.uniform(-1.0, 1.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-1.0, 1.0, (3, 4)), requires_grad=True)
        weights = rng.uniform(-1.0, 1.0, BINARY_OPS[name](a, b).shape)
        assert_gradients(lambda: ops.sum(ops.mul(BINARY_OPS[name](a, b), Tensor(weights))), {"a": a, "b": b}, tol=1e-4)
