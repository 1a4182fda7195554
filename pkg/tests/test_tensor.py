import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_difference
from cyclewave import tensor as tc
from cyclewave.errors import ContractError, DimensionError, TapeError
from oracles import adam_reference, conv1d_reference, conv_transpose1d_reference


def t(data, rg=False):
    return tc.Tensor(np.asarray(data, dtype=float), requires_grad=rg)


class TestConv1d:
    def test_sliding_window_example(self):
        out = tc.conv1d(t([[1, 2, 3]]), t([[[1, 1]]]), t([0]))
        assert np.allclose(out.data, [[3, 5]])

    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(3, 17))
        out = tc.conv1d(t(x), t(np.eye(3)[:, :, None]), None)
        assert np.allclose(out.data, x)

    def test_dilated_example(self):
        out = tc.conv1d(t([[1, 2, 3, 4]]), t([[[1, 1]]]), None, dilation=2)
        assert np.allclose(out.data, [[4, 6]])

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 20))
        w = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=4)
        for stride, pad, dil in [(1, 0, 1), (2, 3, 1), (1, (1, 2), 2), (3, 4, 3)]:
            got = tc.conv1d(t(x), t(w), t(b), stride, pad, dil)
            pad_t = pad if isinstance(pad, tuple) else (pad, pad)
            want = conv1d_reference(x, w, b, stride, pad_t, dil)
            assert np.allclose(got.data, want, atol=1e-12)

    def test_grouped_matches_blockwise(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 30))
        w = rng.normal(size=(6, 2, 5))
        got = tc.conv1d(t(x), t(w), None, stride=2, padding=2, groups=2)
        top = conv1d_reference(x[:2], w[:3], None, 2, (2, 2))
        bot = conv1d_reference(x[2:], w[3:], None, 2, (2, 2))
        assert np.allclose(got.data, np.concatenate([top, bot]), atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(DimensionError):
            tc.conv1d(t(np.zeros((3, 8))), t(np.zeros((2, 4, 3))), None)

    def test_output_length_contract(self):
        rng = np.random.default_rng(3)
        for T in (1, 7, 64):
            for k, d in [(2, 1), (7, 3), (11, 5), (3, 1)]:
                left = d * (k - 1) // 2
                right = d * (k - 1) - left
                x = rng.normal(size=(2, T))
                out = tc.conv1d(t(x), t(rng.normal(size=(2, 2, k))), None, padding=(left, right), dilation=d)
                assert out.shape == (2, T)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 2, 16))
        w = rng.normal(size=(5, 2, 3))
        b = rng.normal(size=5)
        batched = tc.conv1d(t(x), t(w), t(b), stride=2, padding=1)
        for i in range(3):
            single = tc.conv1d(t(x[i]), t(w), t(b), stride=2, padding=1)
            assert np.allclose(batched.data[i], single.data)


class TestConv2d:
    def test_sum_example(self):
        out = tc.conv2d(t(np.ones((1, 2, 2))), t(np.ones((1, 1, 2, 2))), None)
        assert np.allclose(out.data, [[[4.0]]])

    def test_identity_kernel(self):
        x = np.random.default_rng(5).normal(size=(2, 6, 7))
        out = tc.conv2d(t(x), t(np.eye(2)[:, :, None, None]), None)
        assert np.allclose(out.data, x)

    def test_zero_weight_constant_bias(self):
        out = tc.conv2d(t(np.random.default_rng(6).normal(size=(3, 5, 5))),
                        t(np.zeros((2, 3, 3, 3))), t([1.5, -0.5]), padding=(1, 1))
        assert np.allclose(out.data[0], 1.5) and np.allclose(out.data[1], -0.5)

    def test_strided_shape(self):
        out = tc.conv2d(t(np.zeros((1, 20, 3))), t(np.zeros((4, 1, 5, 1))),
                        None, stride=(3, 1), padding=(2, 0))
        assert out.shape == (4, 7, 3)


class TestConvTranspose1d:
    def test_upsample_length(self):
        x = np.zeros((2, 64))
        w = np.zeros((2, 1, 16))
        out = tc.conv_transpose1d(t(x), t(w), None, stride=8, padding=4)
        assert out.shape == (1, 512)

    def test_identity(self):
        x = np.random.default_rng(7).normal(size=(1, 9))
        out = tc.conv_transpose1d(t(x), t(np.ones((1, 1, 1))), None, stride=1, padding=0)
        assert np.allclose(out.data, x)

    def test_matches_transpose_of_conv_matrix(self):
        y = np.array([[1.0, 0.0, 0.0]])
        w = np.ones((1, 1, 4))
        got = tc.conv_transpose1d(t(y), t(w), None, stride=2, padding=1)
        want = conv_transpose1d_reference(y, w, stride=2, padding=1)
        assert np.allclose(got.data, want)

    def test_random_matches_matrix_oracle(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 2, 6))
        got = tc.conv_transpose1d(t(y), t(w), None, stride=2, padding=2)
        want = conv_transpose1d_reference(y, w, stride=2, padding=2)
        assert np.allclose(got.data, want, atol=1e-12)

    def test_adjoint_identity_with_tied_weights(self):
        # the conv's [C_out, C_in, k] array reads as [C_in, C_out, k] here
        rng = np.random.default_rng(9)
        w = rng.normal(size=(4, 3, 8))
        x = rng.normal(size=(3, 32))
        y = rng.normal(size=(4, 16))   # conv output length for stride 2, pad 3
        cx = tc.conv1d(t(x), t(w), None, stride=2, padding=3)
        assert cx.shape == (4, 16)
        ty = tc.conv_transpose1d(t(y), t(w), None, stride=2, padding=3)
        lhs = float(np.sum(cx.data * y))
        rhs = float(np.sum(x * ty.data))
        assert abs(lhs - rhs) < 1e-10


class TestElementwise:
    def test_leaky_relu(self):
        out = tc.leaky_relu(t([-1.0, 0.0, 2.0]), 0.1)
        assert np.allclose(out.data, [-0.1, 0.0, 2.0])

    def test_tanh_odd(self):
        assert tc.tanh(t([0.0])).data[0] == 0.0

    def test_avg_pool_example(self):
        out = tc.avg_pool1d(t([[1.0, 3.0, 5.0, 7.0]]), 2, 2)
        assert np.allclose(out.data, [[2.0, 6.0]])

    def test_glu_zero_gate(self):
        out = tc.glu(t([[2.0], [0.0]]))
        assert np.allclose(out.data, [[1.0]])

    def test_glu_saturated_gate(self):
        out = tc.glu(t([[3.0], [50.0]]))
        assert np.allclose(out.data, [[3.0]], atol=1e-12)

    def test_glu_log3_gate(self):
        out = tc.glu(t([[2.0], [np.log(3.0)]]))
        assert np.allclose(out.data, [[1.5]])

    def test_glu_odd_channels_raises(self):
        with pytest.raises(DimensionError):
            tc.glu(t(np.zeros((3, 4))))

    def test_pad_reflect_values(self):
        out = tc.pad1d(t([[1.0, 2.0, 3.0]]), (2, 1), mode="reflect")
        assert np.allclose(out.data, [[3, 2, 1, 2, 3, 2]])

    def test_concat_channels_mismatch(self):
        with pytest.raises(DimensionError):
            tc.concat_channels([t(np.zeros((2, 3))), t(np.zeros((2, 4)))], axis=0)

    def test_frame_signal_shapes(self):
        out = tc.frame_signal(t(np.arange(32.0)), 8, 4)
        assert out.shape == (7, 8)
        assert np.allclose(out.data[1], np.arange(4.0, 12.0))
        limited = tc.frame_signal(t(np.arange(32.0)), 8, 4, num_frames=3)
        assert limited.shape == (3, 8)

    def test_rdft_magnitude_matches_numpy(self):
        x = np.random.default_rng(10).normal(size=(3, 16))
        out = tc.rdft_magnitude(t(x))
        assert np.allclose(out.data, np.abs(np.fft.rfft(x, axis=-1)))


class TestBackward:
    def test_linear_map_grad(self):
        w = t([1.0, 2.0, 3.0], rg=True)
        x = np.array([4.0, 5.0, 6.0])
        loss = tc.tsum(tc.mul(w, x))
        tc.backward(loss)
        assert np.allclose(w.grad, x)

    def test_quadratic_grad(self):
        w = t([3.0], rg=True)
        loss = tc.tsum(tc.square(w))
        tc.backward(loss)
        assert np.allclose(w.grad, [6.0])

    def test_non_scalar_loss_rejected(self):
        w = t([1.0, 2.0], rg=True)
        y = tc.square(w)
        with pytest.raises(ContractError):
            tc.backward(y)

    def test_backward_twice_rejected(self):
        w = t([1.0], rg=True)
        loss = tc.tsum(tc.square(w))
        tape = tc.active_tape()
        tc.backward(loss)
        with pytest.raises(TapeError):
            tape.replay()
        with pytest.raises(TapeError):
            tc.backward(loss)

    def test_empty_tape_rejected(self):
        with pytest.raises(TapeError):
            tc.backward(t([1.0], rg=True))

    def test_no_grad_detaches(self):
        w = t([2.0], rg=True)
        with tc.no_grad():
            y = tc.square(w)
        assert not y.requires_grad
        assert tc.active_tape() is None or len(tc.active_tape()) == 0

    def test_reuse_accumulates(self):
        w = t([1.5], rg=True)
        loss = tc.tsum(tc.add(tc.square(w), tc.square(w)))
        tc.backward(loss)
        assert np.allclose(w.grad, [6.0])


class TestGradientsAgainstFiniteDifferences:
    """Central-difference checks for every differentiable operation."""

    def test_conv1d(self):
        rng = np.random.default_rng(20)
        x = t(rng.normal(size=(2, 3, 12)), rg=True)
        w = t(rng.normal(size=(4, 3, 5)), rg=True)
        b = t(rng.normal(size=4), rg=True)
        finite_difference(
            lambda: tc.mean(tc.square(tc.conv1d(x, w, b, stride=2, padding=(1, 2), dilation=1))),
            {"x": x, "w": w, "b": b}, rng)

    def test_conv1d_dilated_grouped(self):
        rng = np.random.default_rng(21)
        x = t(rng.normal(size=(4, 16)), rg=True)
        w = t(rng.normal(size=(6, 2, 3)), rg=True)
        finite_difference(
            lambda: tc.mean(tc.square(tc.conv1d(x, w, None, padding=2, dilation=2, groups=2))),
            {"x": x, "w": w}, rng)

    def test_conv2d(self):
        rng = np.random.default_rng(22)
        x = t(rng.normal(size=(2, 7, 6)), rg=True)
        w = t(rng.normal(size=(3, 2, 3, 2)), rg=True)
        b = t(rng.normal(size=3), rg=True)
        finite_difference(
            lambda: tc.mean(tc.square(tc.conv2d(x, w, b, stride=(2, 1), padding=(1, 1)))),
            {"x": x, "w": w, "b": b}, rng)

    def test_conv_transpose1d(self):
        rng = np.random.default_rng(23)
        x = t(rng.normal(size=(3, 6)), rg=True)
        w = t(rng.normal(size=(3, 2, 8)), rg=True)
        b = t(rng.normal(size=2), rg=True)
        finite_difference(
            lambda: tc.mean(tc.square(tc.conv_transpose1d(x, w, b, stride=4, padding=2))),
            {"x": x, "w": w, "b": b}, rng)

    def test_activations(self):
        rng = np.random.default_rng(24)
        x = t(rng.normal(size=(2, 9)) + 0.05, rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.leaky_relu(x, 0.1))), {"x": x}, rng)
        finite_difference(lambda: tc.mean(tc.square(tc.tanh(x))), {"x": x}, rng)
        finite_difference(lambda: tc.mean(tc.square(tc.sigmoid(x))), {"x": x}, rng)

    def test_glu(self):
        rng = np.random.default_rng(25)
        x = t(rng.normal(size=(4, 5)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.glu(x))), {"x": x}, rng)

    def test_pads_and_pools(self):
        rng = np.random.default_rng(26)
        x = t(rng.normal(size=(2, 12)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.pad1d(x, (3, 2), "constant"))), {"x": x}, rng)
        finite_difference(lambda: tc.mean(tc.square(tc.pad1d(x, (3, 2), "reflect"))), {"x": x}, rng)
        finite_difference(lambda: tc.mean(tc.square(tc.avg_pool1d(x, 4, 2))), {"x": x}, rng)

    def test_shape_ops(self):
        rng = np.random.default_rng(27)
        x = t(rng.normal(size=(3, 4, 5)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.reshape(x, (3, 20)))), {"x": x}, rng)
        finite_difference(lambda: tc.mean(tc.square(tc.transpose(x, (2, 0, 1)))), {"x": x}, rng)
        y = t(rng.normal(size=(3, 4, 5)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.concat_channels([x, y], axis=1))), {"x": x, "y": y}, rng)

    def test_frame_and_rdft(self):
        rng = np.random.default_rng(28)
        x = t(rng.normal(size=40), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.frame_signal(x, 8, 4))), {"x": x}, rng)
        z = t(rng.normal(size=(3, 16)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.rdft_magnitude(z))), {"z": z}, rng)

    def test_log_and_matmul(self):
        rng = np.random.default_rng(29)
        x = t(rng.uniform(0.5, 2.0, size=(4, 6)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.log_clamped(x, 1e-5))), {"x": x}, rng)
        a = t(rng.normal(size=(2, 5, 3)), rg=True)
        b = t(rng.normal(size=(3, 4)), rg=True)
        finite_difference(lambda: tc.mean(tc.square(tc.matmul(a, b))), {"a": a, "b": b}, rng)

    def test_elementwise_binary(self):
        rng = np.random.default_rng(30)
        a = t(rng.normal(size=(3, 4)), rg=True)
        b = t(rng.normal(size=(3, 4)), rg=True)
        c = t(rng.normal(size=4), rg=True)  # broadcast
        finite_difference(lambda: tc.mean(tc.square(a * b + a - 0.3)), {"a": a, "b": b}, rng)
        finite_difference(lambda: tc.mean(tc.absolute(a * c)), {"a": a, "c": c}, rng)


class TestAdam:
    def test_first_step_magnitude(self):
        p = {"w": t([1.0], rg=True)}
        state = tc.AdamState(p)
        tc.adam_step(p, {"w": np.array([1.0])}, state, lr=2e-4)
        assert np.isclose(p["w"].data[0], 1.0 - 2e-4, atol=1e-8)

    def test_zero_gradient_keeps_params(self):
        p = {"w": t([1.0, -2.0], rg=True)}
        state = tc.AdamState(p)
        tc.adam_step(p, {"w": np.zeros(2)}, state, lr=1e-2)
        assert np.allclose(p["w"].data, [1.0, -2.0])

    def test_two_steps_match_reference(self):
        theta0 = np.array([0.5, -1.0, 2.0])
        g = np.array([0.3, -0.2, 0.1])
        p = {"w": t(theta0.copy(), rg=True)}
        state = tc.AdamState(p)
        for _ in range(2):
            tc.adam_step(p, {"w": g}, state, lr=1e-3, beta1=0.5, beta2=0.99, eps=1e-8)
        want = adam_reference(theta0, [g, g], lr=1e-3, beta1=0.5, beta2=0.99, eps=1e-8)
        assert np.allclose(p["w"].data, want, atol=1e-12)

    def test_shape_mismatch_raises(self):
        p = {"w": t([1.0, 2.0], rg=True)}
        state = tc.AdamState(p)
        with pytest.raises(DimensionError):
            tc.adam_step(p, {"w": np.zeros(3)}, state, lr=1e-3)


@given(st.integers(1, 40), st.integers(1, 8), st.integers(1, 4), st.integers(1, 3), st.integers(0, 6))
@settings(max_examples=60, deadline=None)
def test_conv1d_length_formula(T, k, stride, dilation, pad):
    span = dilation * (k - 1) + 1
    if T + 2 * pad < span:
        return
    out = tc.conv1d(tc.Tensor(np.zeros((1, T))), tc.Tensor(np.zeros((1, 1, k))), None,
                    stride=stride, padding=pad, dilation=dilation)
    assert out.shape[1] == (T + 2 * pad - span) // stride + 1


@given(st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_conv_transpose_upsample_exact(T):
    for u, k in [(8, 16), (2, 4)]:
        out = tc.conv_transpose1d(tc.Tensor(np.zeros((1, T))), tc.Tensor(np.zeros((1, 1, k))),
                                  None, stride=u, padding=(k - u) // 2)
        assert out.shape[1] == T * u
