import math

import numpy as np
import numpy.testing as npt
import pytest

from panelrep.autodiff import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    clamp_max,
    clamp_min,
    concat,
    exp,
    gather_rows,
    grad_check,
    log,
    matmul,
    sigmoid,
    slice_axis0,
    slice_cols,
    slice_rows,
    softmax_rows,
    sqrt,
    std_rows,
    tanh,
    transpose,
    tsum,
)

rng = np.random.default_rng(20240811)


def randt(*shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, dtype=np.float64)


class TestTensorBasics:
    def test_dims_match_data(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert t.dims == (2, 3)
        assert t.size == 6

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.inf])
        with pytest.raises(NonFiniteError):
            Tensor([[np.nan]])

    def test_op_surfacing_non_finite(self):
        x = Tensor([[800.0]])
        with pytest.raises(NonFiniteError):
            exp(x)

    def test_detach_is_constant(self):
        x = Tensor([[1.0]], requires_grad=True)
        assert not x.detach().requires_grad

    def test_shape_mismatch_reports_both_shapes(self):
        a, b = Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 4)))
        with pytest.raises(ShapeError) as err:
            a + b
        assert "(2, 3)" in str(err.value) and "(3, 4)" in str(err.value)


class TestActivations:
    def test_sigmoid_symmetry_point(self):
        assert sigmoid(Tensor([[0.0]])).item() == 0.5

    def test_sigmoid_closed_form(self):
        npt.assert_allclose(
            sigmoid(Tensor([[10.0]], dtype=np.float64)).item(),
            0.9999546021312976,
            rtol=1e-12,
        )

    def test_sigmoid_extreme_inputs_stable(self):
        out = sigmoid(Tensor([[-500.0, 500.0]], dtype=np.float64))
        assert np.all(np.isfinite(out.data))

    def test_softmax_equal_logits(self):
        npt.assert_allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_softmax_exp_normalize(self):
        out = softmax_rows(Tensor([[math.log(3.0), 0.0]], dtype=np.float64))
        npt.assert_allclose(out.data, [[0.75, 0.25]], atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        x = randt(7, 11, scale=5.0)
        y = softmax_rows(x)
        npt.assert_allclose(y.data.sum(axis=1), np.ones(7), atol=1e-6)
        assert np.all(y.data > 0) and np.all(y.data < 1)

    def test_softmax_shift_invariance_at_argmax(self):
        x = rng.normal(size=(5, 9))
        base = np.argmax(softmax_rows(Tensor(x)).data, axis=1)
        shifted = np.argmax(softmax_rows(Tensor(x + 123.4)).data, axis=1)
        npt.assert_array_equal(base, shifted)

    def test_softmax_requires_rank2(self):
        with pytest.raises(ShapeError):
            softmax_rows(Tensor([1.0, 2.0]))


class TestLinalg:
    def test_matmul_identity(self):
        x = rng.normal(size=(2, 5))
        out = matmul(Tensor(np.eye(2)), Tensor(x))
        npt.assert_allclose(out.data, x)

    def test_matmul_inner_dim_checked(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_std_rows_constant_row(self):
        out = std_rows(Tensor([[4.0, 4.0, 4.0]], dtype=np.float64))
        npt.assert_allclose(out.data, [[math.sqrt(1e-12)]], atol=1e-15)

    def test_std_rows_population(self):
        out = std_rows(Tensor([[0.0, 1.0]], dtype=np.float64))
        npt.assert_allclose(out.item(), 0.5, atol=1e-9)

    def test_concat_and_slices_roundtrip(self):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(1, 3))
        joined = concat([Tensor(a), Tensor(b)], axis=0)
        npt.assert_allclose(slice_rows(joined, 2, 3).data, b)
        npt.assert_allclose(slice_cols(joined, 1, 3).data, np.vstack([a, b])[:, 1:3])

    def test_slice_axis0_rank3(self):
        x = rng.normal(size=(3, 4, 5))
        npt.assert_allclose(slice_axis0(Tensor(x), 1).data, x[1])

    def test_gather_rows_lookup(self):
        table = rng.normal(size=(6, 4))
        out = gather_rows(Tensor(table), [2, 3])
        npt.assert_allclose(out.data, table[[2, 3]])

    def test_gather_rows_out_of_range(self):
        with pytest.raises(ShapeError):
            gather_rows(Tensor(np.zeros((4, 2))), [4])

    def test_max_first_tie_wins(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            out = x.max(axis=1)
        grads = backward(tape, out)
        npt.assert_allclose(grads[x], [[0.0, 1.0, 0.0]])

    def test_clamp_min_gradient_gate(self):
        x = Tensor(np.array([[0.5, 2.0]]), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            out = tsum(clamp_min(x, 1.0))
        grads = backward(tape, out)
        npt.assert_allclose(grads[x], [[0.0, 1.0]])

    def test_clamp_max_gradient_gate(self):
        x = Tensor(np.array([[0.5, 2.0]]), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            out = tsum(clamp_max(x, 1.0))
        grads = backward(tape, out)
        npt.assert_allclose(grads[x], [[1.0, 0.0]])


class TestBackward:
    def test_identity_gradient(self):
        x = Tensor([[2.0]], requires_grad=True)
        with Tape() as tape:
            y = x
        grads = backward(tape, y)
        npt.assert_allclose(grads[x], [[1.0]])

    def test_square_gradient(self):
        x = Tensor([[3.0]], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            y = x * x
        grads = backward(tape, y)
        npt.assert_allclose(grads[x], [[6.0]], rtol=1e-12)

    def test_softmax_cross_entropy_gradient_is_p_minus_y(self):
        logits = randt(1, 5)
        target = 2
        with Tape() as tape:
            p = softmax_rows(logits)
            loss = -log(slice_cols(p, target, target + 1))
        grads = backward(tape, loss)
        expected = softmax_rows(Tensor(logits.data)).data.copy()
        expected[0, target] -= 1.0
        npt.assert_allclose(grads[logits], expected, atol=1e-10)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = x * x
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_empty_tape_rejected(self):
        tape = Tape()
        with pytest.raises(TapeError):
            backward(tape, Tensor([[1.0]]))

    def test_single_backward_per_tape(self):
        x = Tensor([[1.0]], requires_grad=True)
        with Tape() as tape:
            y = x * x
        backward(tape, y)
        with pytest.raises(TapeError):
            backward(tape, y)

    def test_no_recording_without_tape(self):
        x = Tensor([[1.0]], requires_grad=True)
        y = x * x
        assert not y.requires_grad

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor([[2.0]], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            y = x * x + x * x
        grads = backward(tape, y)
        npt.assert_allclose(grads[x], [[8.0]])


class TestGradCheck:
    def test_constant_function_zero_error(self):
        params = {"x": randt(2, 2)}
        assert grad_check(lambda p: Tensor(1.5), params) == 0.0

    def test_square_small_error(self):
        params = {"x": Tensor([[3.0]], requires_grad=True, dtype=np.float64)}
        err = grad_check(lambda p: p["x"] * p["x"], params)
        assert err < 1e-8

    @pytest.mark.parametrize(
        "name,fn",
        [
            ("sigmoid", lambda p: tsum(sigmoid(p["x"]))),
            ("tanh", lambda p: tsum(tanh(p["x"]))),
            ("softmax_rows", lambda p: tsum(softmax_rows(p["x"]) * p["w"])),
            ("matmul", lambda p: tsum(matmul(p["x"], p["y"]))),
            ("mul", lambda p: tsum(p["x"] * p["w"])),
            ("div", lambda p: tsum(p["x"] / (p["w"] * p["w"] + 1.0))),
            ("sub_neg", lambda p: tsum(-(p["x"] - p["w"]))),
            ("exp_log", lambda p: tsum(log(exp(p["x"]) + 1.0))),
            ("sqrt", lambda p: tsum(sqrt(p["x"] * p["x"] + 1.0))),
            ("std_rows", lambda p: tsum(std_rows(p["x"]))),
            ("mean_axes", lambda p: tsum(p["x"].mean(axis=0) * p["b"])),
            ("max_axis", lambda p: tsum(p["x"].max(axis=1, keepdims=True))),
            ("transpose", lambda p: tsum(transpose(p["x"]) * transpose(p["w"]))),
            ("concat", lambda p: tsum(concat([p["x"], p["w"]], axis=1))),
            ("slices", lambda p: tsum(slice_rows(p["x"], 0, 2) * slice_rows(p["w"], 1, 3))),
            ("gather", lambda p: tsum(gather_rows(p["x"], [0, 2, 2]))),
            ("row_broadcast_add", lambda p: tsum(sigmoid(p["x"] + p["b"]))),
        ],
    )
    def test_every_op_matches_finite_differences(self, name, fn):
        params = {
            "x": randt(3, 4),
            "w": randt(3, 4),
            "y": randt(4, 2),
            "b": randt(1, 4),
        }
        err = grad_check(fn, params)
        assert err < 1e-4, f"{name}: {err}"

    def test_rank3_ops_match_finite_differences(self):
        params = {"a": randt(2, 3, 4)}

        def fn(p):
            sliced = slice_axis0(p["a"], 1)
            pooled = p["a"].mean(axis=0)
            return tsum(sliced * pooled) + tsum(p["a"].sum(axis=2))

        assert grad_check(fn, params) < 1e-4
