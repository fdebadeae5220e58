"""Engine tests: forward semantics against loop oracles, gradient rules
against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from salientfeat.tensor import (Tensor, bilinear_sample, conv2d, depthwise_conv2d,
                                depthwise_separable_conv, extract_patches,
                                gather_pixels, grad_check, l2_normalize, matmul,
                                no_grad, slice_channels)

from naive import conv2d_loops, dsc_loops, matmul_loops, sum_loops


# ----------------------------------------------------------------------
# elementwise and reductions
# ----------------------------------------------------------------------
def test_square_and_relu_values():
    assert np.array_equal(Tensor([-2.0, 3.0]).square().data, [4.0, 9.0])
    assert np.array_equal(Tensor([-1.0, 0.0, 2.0]).relu().data, [0.0, 0.0, 2.0])


def test_abs_gradient_zero_at_zero():
    x = Tensor([0.0, -1.5, 2.0], requires_grad=True)
    x.abs().sum().backward()
    assert np.array_equal(x.grad, [0.0, -1.0, 1.0])


def test_binary_ops_reject_shape_mismatch():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((3, 2)))
    for op in (lambda: a + b, lambda: a - b, lambda: a * b, lambda: a / b):
        with pytest.raises(ValueError):
            op()


def test_mean_full_reduction():
    assert Tensor([1.0, 2.0, 3.0]).mean().item() == 2.0


def test_empty_axis_tuple_is_full_reduction():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert x.sum(axis=()).item() == 15.0


def test_max_backward_first_max_tie_break():
    x = Tensor([1.0, 5.0, 5.0], requires_grad=True)
    x.max().backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_max_axis_first_max_row_major():
    data = np.array([[2.0, 2.0, 1.0], [0.0, 3.0, 3.0]])
    x = Tensor(data, requires_grad=True)
    x.max(axis=1).sum().backward()
    expect = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.array_equal(x.grad, expect)


def test_sum_axis_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 4))
    for axis in (0, 1):
        got = Tensor(x).sum(axis=axis).data
        np.testing.assert_allclose(got, sum_loops(x, axis), atol=1e-12)


# ----------------------------------------------------------------------
# backward mechanics
# ----------------------------------------------------------------------
def test_sum_backward_ones():
    x = Tensor(np.arange(3.0), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones(3))


def test_square_sum_backward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.square().sum().backward()
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_fanout_accumulates_exactly():
    x = Tensor([1.0, -2.0], requires_grad=True)
    y = x + x
    y.sum().backward()
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_second_backward_raises():
    x = Tensor([1.0], requires_grad=True)
    loss = x.square().sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_no_grad_blocks_recording():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x.square().sum()
    assert not y.requires_grad


def test_backward_visits_each_node_once():
    from salientfeat.tensor import make_node
    x = Tensor([1.0, 2.0], requires_grad=True)
    calls = []

    def bw(g):
        calls.append(1)
        x._accum(g)

    node = make_node(x.data * 1.0, (x,), bw)
    ((node + node) * 3.0).sum().backward()  # two consumers, one visit
    assert len(calls) == 1
    assert np.array_equal(x.grad, [6.0, 6.0])


def test_grad_check_validates_step():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), [x], h=0.0)


# ----------------------------------------------------------------------
# matmul
# ----------------------------------------------------------------------
def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    got = matmul(Tensor(np.eye(4)), Tensor(a)).data
    np.testing.assert_allclose(got, a, atol=0)


def test_matmul_hand_case():
    got = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]])).data
    assert np.array_equal(got, [[3.0], [7.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(42)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data,
                               matmul_loops(a, b), atol=1e-9)


def test_matmul_rejects_bad_inner_dim():
    with pytest.raises(ValueError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# ----------------------------------------------------------------------
# conv2d
# ----------------------------------------------------------------------
def test_conv_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 6, 7))
    k = np.ones((1, 1, 1, 1))
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(k)).data, x, atol=0)


def test_conv_box_filter_on_constant():
    x = np.full((1, 8, 8), 0.37)
    k = np.full((1, 1, 3, 3), 1.0 / 9.0)
    out = conv2d(Tensor(x), Tensor(k)).data
    np.testing.assert_allclose(out, np.full((1, 6, 6), 0.37), atol=1e-12)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(w)).data,
                               conv2d_loops(x, w), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_conv_random_shapes_match_oracle(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
    c_in = data.draw(st.integers(1, 3))
    c_out = data.draw(st.integers(1, 3))
    k = data.draw(st.sampled_from([1, 3, 5]))
    stride = data.draw(st.integers(1, 2))
    pad = data.draw(st.integers(0, 2))
    dil = data.draw(st.integers(1, 2))
    span = (k - 1) * dil + 1
    extra = data.draw(st.integers(0, 3))
    h = span + extra * stride - 2 * pad
    if h < 1:
        h += ((1 - h) // stride + 1) * stride
    w = h + data.draw(st.integers(0, 2)) * stride
    x = rng.normal(size=(c_in, h, w))
    wt = rng.normal(size=(c_out, c_in, k, k))
    b = rng.normal(size=c_out)
    got = conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad,
                 dilation=dil).data
    ref = conv2d_loops(x, wt, b, stride=stride, padding=pad, dilation=dil)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_conv_rejects_inexact_output():
    x = Tensor(np.zeros((1, 6, 6)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        conv2d(x, w, stride=2)  # (6 - 3) % 2 != 0


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))


# ----------------------------------------------------------------------
# depthwise separable
# ----------------------------------------------------------------------
def test_dsc_identity_composition():
    rng = np.random.default_rng(3)
    c = 3
    x = rng.normal(size=(c, 6, 6))
    dw = np.zeros((c, 1, 3, 3))
    dw[:, 0, 1, 1] = 1.0
    pw = np.eye(c).reshape(c, c, 1, 1)
    out = depthwise_separable_conv(Tensor(x), Tensor(dw), Tensor(pw)).data
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_dsc_parameter_count_formula():
    c_in, c_out, k = 64, 128, 3
    dw = np.zeros((c_in, 1, k, k))
    pw = np.zeros((c_out, c_in, 1, 1))
    assert dw.size + pw.size == 64 * 9 + 64 * 128 == 8768
    assert c_out * c_in * k * k == 73728
    assert dw.size + pw.size < c_out * c_in * k * k


def test_dsc_matches_two_stage_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 7, 7))
    dw = rng.normal(size=(3, 1, 3, 3))
    pw = rng.normal(size=(5, 3, 1, 1))
    got = depthwise_separable_conv(Tensor(x), Tensor(dw), Tensor(pw)).data
    np.testing.assert_allclose(got, dsc_loops(x, dw, pw), atol=1e-6)


def test_dsc_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        depthwise_separable_conv(Tensor(np.zeros((3, 5, 5))),
                                 Tensor(np.zeros((4, 1, 3, 3))),
                                 Tensor(np.zeros((2, 3, 1, 1))))


# ----------------------------------------------------------------------
# l2 normalize
# ----------------------------------------------------------------------
def test_l2_normalize_345_triangle():
    x = Tensor(np.array([3.0, 4.0]).reshape(2, 1, 1))
    np.testing.assert_allclose(l2_normalize(x).data.reshape(2), [0.6, 0.8], atol=1e-12)


def test_l2_normalize_idempotent_on_unit_vectors():
    v = np.array([0.6, 0.8]).reshape(2, 1, 1)
    np.testing.assert_allclose(l2_normalize(Tensor(v)).data, v, atol=1e-12)


def test_l2_normalize_zero_vector_guarded():
    out = l2_normalize(Tensor(np.zeros((3, 2, 2)))).data
    assert np.all(out == 0.0) and np.all(np.isfinite(out))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_l2_normalize_norms_unit_or_zero(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 4, 3))
    norms = np.sqrt((l2_normalize(Tensor(x)).data ** 2).sum(axis=0))
    assert np.all((norms == 0) | (np.abs(norms - 1) < 1e-6))


# ----------------------------------------------------------------------
# sampling ops
# ----------------------------------------------------------------------
def test_gather_pixels_values_and_grad():
    x = Tensor(np.arange(12.0).reshape(1, 3, 4), requires_grad=True)
    out = gather_pixels(x, np.array([0, 2, 2]), np.array([1, 3, 3]))
    assert np.array_equal(out.data.reshape(-1), [1.0, 11.0, 11.0])
    out.sum().backward()
    assert x.grad[0, 2, 3] == 2.0 and x.grad[0, 0, 1] == 1.0


def test_bilinear_sample_exact_at_integers():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 5))
    us = np.array([0.0, 4.0, 2.0])
    vs = np.array([0.0, 3.0, 1.0])
    out = bilinear_sample(Tensor(x), us, vs).data
    for n, (u, v) in enumerate(zip(us, vs)):
        np.testing.assert_allclose(out[n], x[:, int(v), int(u)], atol=0)


def test_bilinear_sample_midpoint():
    x = Tensor(np.array([[[0.0, 2.0], [4.0, 6.0]]]))
    out = bilinear_sample(x, np.array([0.5]), np.array([0.5])).data
    assert out[0, 0] == 3.0


def test_bilinear_sample_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        bilinear_sample(Tensor(np.zeros((1, 3, 3))), np.array([2.5]), np.array([0.0]))


def test_extract_patches_roundtrip_grad():
    x = Tensor(np.arange(36.0).reshape(1, 6, 6), requires_grad=True)
    tiles = extract_patches(x, 3)
    assert tiles.shape == (4, 9)
    np.testing.assert_allclose(tiles.data[0], x.data[0, :3, :3].reshape(-1), atol=0)
    tiles.sum().backward()
    assert np.array_equal(x.grad, np.ones((1, 6, 6)))


def test_slice_channels_grad_routes_to_range():
    x = Tensor(np.ones((4, 2, 2)), requires_grad=True)
    slice_channels(x, 1, 3).sum().backward()
    expect = np.zeros((4, 2, 2))
    expect[1:3] = 1.0
    assert np.array_equal(x.grad, expect)


# ----------------------------------------------------------------------
# finite differences
# ----------------------------------------------------------------------
def test_grad_check_quadratic_trivial():
    x = Tensor([3.0], requires_grad=True)
    err = grad_check(lambda t: t.square().sum(), [x], h=1e-4)
    assert err < 1e-6


def test_grad_check_l2_normalize():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(0.5, 1.5, size=(3, 2, 2)) * rng.choice([-1, 1], size=(3, 2, 2)),
               requires_grad=True)
    err = grad_check(lambda t: l2_normalize(t).square().sum(), [x])
    assert err < 1e-4


def test_grad_check_conv2d():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)

    def fn(xx, ww, bb):
        return conv2d(xx, ww, bb, padding=1).square().sum()

    assert grad_check(fn, [x, w, b]) < 1e-4


def test_grad_check_depthwise():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
    dw = Tensor(rng.normal(size=(3, 1, 3, 3)), requires_grad=True)
    assert grad_check(lambda a, b: depthwise_conv2d(a, b).square().sum(), [x, dw]) < 1e-4


def test_grad_check_bilinear_sample():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
    us = rng.uniform(0.2, 3.8, size=6)
    vs = rng.uniform(0.2, 3.8, size=6)
    assert grad_check(lambda t: bilinear_sample(t, us, vs).square().sum(), [x]) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_grad_check_mixed_pipeline(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.3, 1.0, size=(2, 3, 3)) * rng.choice([-1, 1], (2, 3, 3)),
               requires_grad=True)

    def fn(t):
        a = t.square().mean(axis=0)
        b = (t.sum(axis=(1, 2)) * 0.5).square().sum()
        return a.sum() + b

    assert grad_check(fn, [x]) < 1e-4
