"""
Tests for the tensor kernel: forward values, error contracts and tape behaviour.
"""
import math

import numpy as np
import pytest

from app.errors import DataError, DimensionError, DomainError, ParameterError, ShapeError, UsageError
from app.kernel import NARROW, WIDE, Tape, Tensor, backward
from app.kernel import ops
from app.kernel.nn import Conv2d, LayerNorm, Linear, Module, trunc_normal
from app.services import oracles


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(eye, m).data, m.data)

    proj = Tensor([[1.0, 0.0], [0.0, 0.0]])
    out = ops.matmul(proj, Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for m, k, n in [(4, 3, 5), (1, 1, 1), (7, 32, 2)]:
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        got = ops.matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - oracles.matmul_oracle(a, b)).max() <= 1e-12


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_softmax_rows_examples():
    out = ops.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data
    np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    big = ops.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(1.0)
    assert big[0, 1] == pytest.approx(0.0, abs=1e-300)

    direct = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
    got = ops.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0]
    assert np.abs(got - direct).max() <= 1e-12
    assert np.abs(got - oracles.softmax_oracle([1.0, 2.0, 3.0])).max() <= 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        rows, cols = rng.integers(1, 6, size=2)
        x = rng.normal(scale=rng.uniform(0.1, 50.0), size=(rows, cols))
        sums = ops.softmax_rows(Tensor(x)).data.sum(axis=-1)
        assert np.abs(sums - 1.0).max() <= 1e-9


def test_exp_decay_values():
    g = Tensor([[0.0, 2.0], [1.0, 0.0]])
    out = ops.exp_decay(g, 0.75).data
    assert out[0, 0] == 1.0 and out[1, 1] == 1.0
    assert out[0, 1] == pytest.approx(0.5625, abs=1e-15)
    np.testing.assert_array_equal(ops.exp_decay(Tensor([[3.0, 7.5]]), 1.0).data, [[1.0, 1.0]])


def test_exp_decay_range_and_ones_only_at_zero():
    rng = np.random.default_rng(2)
    g = rng.uniform(0.0, 30.0, size=(8, 8))
    g[rng.random((8, 8)) < 0.3] = 0.0
    out = ops.exp_decay(Tensor(g), 0.6).data
    assert np.all(out > 0) and np.all(out <= 1)
    np.testing.assert_array_equal(out == 1.0, g == 0.0)


def test_exp_decay_per_head_rates():
    g = Tensor(np.full((3, 3), 2.0))
    rates = np.array([0.5, 0.75]).reshape(2, 1, 1)
    out = ops.exp_decay(g, rates).data
    assert out.shape == (2, 3, 3)
    np.testing.assert_allclose(out[0], 0.25)
    np.testing.assert_allclose(out[1], 0.5625)


@pytest.mark.parametrize("beta", [0.0, -0.5, 1.25, float("nan")])
def test_exp_decay_rejects_bad_rate(beta):
    with pytest.raises(ParameterError):
        ops.exp_decay(Tensor([[1.0]]), beta)


def test_exp_decay_rejects_negative_exponent():
    with pytest.raises(DomainError):
        ops.exp_decay(Tensor([[0.0, -1.0]]), 0.5)


def test_avg_pool2d_examples():
    np.testing.assert_array_equal(ops.avg_pool2d(Tensor(np.full((4, 6), 3.5)), 2, 2, 2, 2).data, np.full((2, 3), 3.5))
    np.testing.assert_array_equal(ops.avg_pool2d(Tensor([[1.0, 2.0], [3.0, 4.0]]), 2, 2, 2, 2).data, [[2.5]])
    ramp = np.arange(16.0).reshape(4, 4)
    got = ops.avg_pool2d(Tensor(ramp), 2, 2, 2, 2).data
    np.testing.assert_array_equal(got, oracles.avg_pool_oracle(ramp, 2, 2, 2, 2))


def test_avg_pool2d_overlapping_matches_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(9, 11))
    got = ops.avg_pool2d(Tensor(x), 3, 2, 2, 1).data
    assert np.abs(got - oracles.avg_pool_oracle(x, 3, 2, 2, 1)).max() <= 1e-12


def test_avg_pool2d_requires_divisible_input():
    with pytest.raises(ShapeError):
        ops.avg_pool2d(Tensor(np.ones((5, 4))), 2, 2, 2, 2)


def test_conv2d_identity_and_box_kernels():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 5, 6))
    delta = np.zeros((1, 1, 3, 3))
    delta[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(Tensor(x), Tensor(delta), stride=1, pad=1).data, x)

    const = Tensor(np.full((1, 6, 6), 2.0))
    out = ops.conv2d(const, Tensor(np.ones((1, 1, 3, 3))), stride=1, pad=1).data
    np.testing.assert_array_equal(out[0, 1:-1, 1:-1], np.full((4, 4), 18.0))


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(5)
    x, w, b = rng.normal(size=(2, 8, 8)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
    assert got.shape == (3, 4, 4)
    assert np.abs(got - oracles.conv2d_oracle(x, w, b, stride=2, pad=1)).max() <= 1e-12


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), pad=1)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_array_equal(ops.layer_norm(Tensor([[4.0, 4.0]]), one, zero).data, [[0.0, 0.0]])
    np.testing.assert_allclose(ops.layer_norm(Tensor([[1.0, 3.0]]), one, zero).data, [[-1.0, 1.0]], atol=1e-5)
    shift = Tensor([0.25, -2.0])
    np.testing.assert_array_equal(ops.layer_norm(Tensor([[1.0, 3.0]]), zero, shift).data, [[0.25, -2.0]])


def test_cross_entropy_examples():
    confident = Tensor([[100.0, 0.0, 0.0], [0.0, 0.0, 100.0]])
    assert ops.cross_entropy(confident, [0, 2]).item() == pytest.approx(0.0, abs=1e-12)
    assert ops.cross_entropy(Tensor(np.zeros((5, 4))), [0, 1, 2, 3, 1]).item() == pytest.approx(math.log(4))


def test_cross_entropy_ignores_labels():
    logits = np.random.default_rng(6).normal(size=(4, 3))
    full = ops.cross_entropy(Tensor(logits[:2]), [1, 2]).item()
    partial = ops.cross_entropy(Tensor(logits), [1, 2, 255, 255]).item()
    assert partial == pytest.approx(full, abs=1e-15)


def test_cross_entropy_all_ignored_is_zero_with_zero_gradient():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ops.cross_entropy(x, [255, 255, 255])
    backward(loss, tape)
    assert loss.item() == 0.0
    np.testing.assert_array_equal(x.grad, np.zeros((3, 4)))


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(DataError):
        ops.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_backward_linear_and_quadratic():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    x.zero_grad()
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_accumulates_fan_out_and_across_calls():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.add(ops.scale(x, 3.0), x))
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])
    with Tape() as tape:
        loss = ops.sum(x)
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [5.0, 5.0])


def test_backward_usage_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(UsageError):
        backward(y, tape)

    with Tape() as tape:
        loss = ops.sum(x)
    backward(loss, tape)
    with pytest.raises(UsageError):
        backward(loss, tape)

    with Tape() as other:
        pass
    with Tape() as tape:
        loss = ops.sum(x)
    with pytest.raises(UsageError):
        backward(loss, other)


def test_backward_is_deterministic():
    rng = np.random.default_rng(7)
    a0, b0 = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))

    def grads():
        a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.softmax_rows(ops.matmul(a, b)))
        backward(loss, tape)
        return a.grad, b.grad

    ga1, gb1 = grads()
    ga2, gb2 = grads()
    np.testing.assert_array_equal(ga1, ga2)
    np.testing.assert_array_equal(gb1, gb2)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ops.sum(x)
    assert y.requires_grad
    with Tape() as tape:
        z = ops.sum(Tensor(np.ones(2)))
    assert len(tape) == 0 and not z.requires_grad


def test_numeric_modes():
    assert Tensor([1.0], mode=NARROW).data.dtype == np.float32
    assert Tensor([1.0], mode=WIDE).data.dtype == np.float64
    out = ops.add(Tensor([1.0], mode=NARROW), 2.0)
    assert out.mode == NARROW and out.data.dtype == np.float32
    with pytest.raises(ParameterError):
        Tensor([1.0], mode="half")


def test_resize_bilinear_identity_and_constant():
    x = Tensor(np.random.default_rng(8).normal(size=(2, 3, 4)))
    assert ops.resize_bilinear(x, 3, 4) is x
    const = ops.resize_bilinear(Tensor(np.full((1, 2, 2), 7.0)), 5, 3).data
    np.testing.assert_allclose(const, 7.0, atol=1e-14)


def test_trunc_normal_stays_inside_two_sigma():
    values = trunc_normal(np.random.default_rng(9), (200, 50), std=0.02)
    assert np.abs(values).max() <= 0.04


def test_module_parameters_and_state_dict():
    class Tiny(Module):
        def __init__(self):
            rng = np.random.default_rng(0)
            self.fc = Linear(4, 3, rng)
            self.blocks = [[LayerNorm(3)], [Conv2d(3, 2, 3, 1, 1, rng)]]

    m = Tiny()
    names = [n for n, _ in m.named_parameters()]
    assert names[:2] == ["fc.weight", "fc.bias"]
    assert "blocks.0.0.gamma" in names and "blocks.1.0.weight" in names
    state = m.state_dict()
    other = Tiny()
    for p in other.parameters():
        p.data = np.zeros_like(p.data)
    other.load_state_dict(state)
    for (_, a), (_, b) in zip(m.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)
