import numpy as np
import numpy.testing as npt
import pytest

from numerion.autodiff import (
    Tensor,
    backward,
    build_tape,
    grad_check,
    no_grad,
    op_abs,
    op_add,
    op_concat,
    op_dropout,
    op_gather,
    op_gelu,
    op_index,
    op_matmul,
    op_mean,
    op_mul,
    op_pad_last,
    op_reshape,
    op_scale,
    op_softmax,
    op_square,
    op_stack,
    op_sum,
    op_tanh,
    op_transpose,
)


def rnd(*shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def weighted(out, seed=99):
    """Scalar loss with distinct weights so each output entry matters differently."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return op_sum(op_mul(out, Tensor(w)))


class TestForward:
    def test_matmul_identity(self):
        out = op_matmul(Tensor(np.eye(2)), Tensor([[5.0], [7.0]]))
        npt.assert_array_equal(out.data, [[5.0], [7.0]])

    def test_matmul_dot(self):
        assert op_matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.item() == 11.0

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError):
            op_matmul(rnd(2, 3), rnd(2, 3))

    def test_gather(self):
        npt.assert_array_equal(op_gather(Tensor([10.0, 20.0, 30.0]), [2, 0]).data, [30.0, 10.0])
        a = rnd(4)
        npt.assert_array_equal(op_gather(a, np.arange(4)).data, a.data)

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            op_gather(Tensor([1.0, 2.0]), [2])

    def test_softmax_uniform(self):
        npt.assert_allclose(op_softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-15)

    def test_softmax_large_inputs_stay_finite(self):
        out = op_softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        npt.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)

    def test_softmax_axis_error(self):
        with pytest.raises(ValueError):
            op_softmax(rnd(2, 3), axis=2)

    def test_gelu_values(self):
        # x * Phi(x) with the exact normal CDF
        npt.assert_allclose(op_gelu(Tensor([0.0, 1.0, -1.0])).data,
                            [0.0, 0.8413447460685429, -0.15865525393145707], rtol=1e-14)

    def test_dropout_rate_zero_is_identity(self):
        a = rnd(5, 3)
        assert op_dropout(a, 0.0, True, np.random.default_rng(0)) is a

    def test_dropout_eval_is_identity(self):
        a = rnd(5, 3)
        assert op_dropout(a, 0.5, False) is a

    def test_dropout_rescales_survivors(self):
        a = Tensor(np.ones((2000,)))
        out = op_dropout(a, 0.25, True, np.random.default_rng(1)).data
        assert set(np.unique(out)) == {0.0, 1 / 0.75}
        assert abs((out == 0).mean() - 0.25) < 0.03

    def test_dropout_mask_granularity(self):
        a = Tensor(np.ones((50, 4)))
        out = op_dropout(a, 0.5, True, np.random.default_rng(2), mask_shape=(50, 1)).data
        assert all(len(set(row)) == 1 for row in out)

    def test_dropout_bad_rate(self):
        with pytest.raises(ValueError):
            op_dropout(rnd(2), 1.0, True)

    def test_concat_stack(self):
        a, b = rnd(2, 3), rnd(1, 3, seed=1)
        npt.assert_array_equal(op_concat([a, b]).data, np.concatenate([a.data, b.data]))
        npt.assert_array_equal(op_stack([a, a]).data, np.stack([a.data, a.data]))

    def test_pad_last(self):
        npt.assert_array_equal(op_pad_last(Tensor([[1.0, 2.0]]), 2).data, [[1.0, 2.0, 0.0, 0.0]])


class TestBackward:
    def test_sum(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(op_sum(x))
        npt.assert_array_equal(x.grad, np.ones(4))

    def test_square(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        backward(op_sum(op_mul(x, x)))
        npt.assert_array_equal(x.grad, [2.0, -4.0, 6.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            backward(op_scale(x, 2.0))

    def test_leaf_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(op_sum(x))
        backward(op_sum(x))
        npt.assert_array_equal(x.grad, [2.0, 2.0])

    def test_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        y = op_mul(x, x)
        backward(op_sum(op_add(y, y)))
        npt.assert_array_equal(x.grad, [12.0])

    def test_gather_repeated_indices_accumulate(self):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(op_sum(op_mul(op_gather(a, [0, 0, 2]), Tensor([1.0, 10.0, 100.0]))))
        npt.assert_array_equal(a.grad, [11.0, 0.0, 100.0])

    def test_matmul_grad_is_b_transpose(self):
        a = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        b = np.random.default_rng(1).standard_normal((4, 2))
        backward(op_sum(op_matmul(a, Tensor(b))))
        npt.assert_allclose(a.grad, np.broadcast_to(b.sum(axis=1), (3, 4)), rtol=1e-14)

    def test_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = op_mul(x, x)
        assert not y.requires_grad

    def test_tape_is_topological(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = op_sum(op_tanh(op_mul(x, x)))
        tape = build_tape(loss)
        pos = {id(t): i for i, t in enumerate(tape)}
        for t in tape:
            for p in t._parents:
                if id(p) in pos:
                    assert pos[id(p)] < pos[id(t)]

    def test_deep_chain_does_not_recurse(self):
        x = Tensor([0.5], requires_grad=True)
        y = x
        for _ in range(5000):
            y = op_scale(y, 1.0)
        backward(op_sum(y))
        npt.assert_array_equal(x.grad, [1.0])


UNARY_OPS = [
    ("tanh", lambda a: op_tanh(a), (30,)),
    ("gelu", lambda a: op_gelu(a), (100,)),
    ("softmax axis 0", lambda a: op_softmax(a, axis=0), (4, 5)),
    ("softmax axis -1", lambda a: op_softmax(a, axis=-1), (4, 5)),
    ("square", op_square, (6,)),
    ("abs", op_abs, (6,)),
    ("mean axis", lambda a: op_mean(a, axis=1, keepdims=True), (3, 4)),
    ("transpose", lambda a: op_transpose(a, (2, 0, 1)), (2, 3, 4)),
    ("reshape", lambda a: op_reshape(a, (6, 2)), (3, 4)),
    ("index", lambda a: op_index(a, (slice(None), slice(1, 3))), (3, 4)),
    ("gather", lambda a: op_gather(a, [1, 1, 0, 3], axis=1), (2, 4)),
    ("concat", lambda a: op_concat([a, op_scale(a, 2.0)], axis=1), (2, 3)),
    ("stack", lambda a: op_stack([a, op_tanh(a)], axis=0), (2, 3)),
    ("batched matmul", lambda a: op_matmul(a, Tensor(np.ones((3, 2)) * 0.3)), (4, 5, 3)),
    ("broadcast add", lambda a: op_add(a, Tensor(np.ones((1, 3)))), (4, 3)),
    ("broadcast mul", lambda a: op_mul(a, op_sum(a, axis=0, keepdims=True)), (4, 3)),
]


class TestGradCheck:
    @pytest.mark.parametrize("name,fn,shape", UNARY_OPS, ids=[h[0] for h in UNARY_OPS])
    def test_op(self, name, fn, shape):
        x = rnd(*shape, seed=5)
        if name == "abs":
            x.data += np.sign(x.data) * 0.1  # stay away from the kink
        assert grad_check(lambda a: weighted(fn(a)), x) < 1e-6

    def test_matmul_right_operand(self):
        a = rnd(4, 5, 3)
        assert grad_check(lambda b: weighted(op_matmul(a, b)), rnd(3, 2, seed=1)) < 1e-6

    def test_constant_function(self):
        assert grad_check(lambda a: Tensor(3.0), rnd(4)) == 0.0

    def test_tanh_sum(self):
        assert grad_check(lambda a: op_sum(op_tanh(a)), rnd(50)) < 1e-6

    def test_dropout_fixed_mask(self):
        x = rnd(8)

        def f(a):
            return weighted(op_dropout(a, 0.5, True, np.random.default_rng(3)))

        assert grad_check(f, x) < 1e-6

    def test_detects_wrong_gradient(self):
        from numerion.autodiff import _make

        def bad(a):
            return _make(a.data ** 2, (a,), lambda g: (g * a.data,), "bad_square")

        assert grad_check(lambda a: op_sum(bad(a)), rnd(5)) > 0.4
