import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import gradcheck
from fusenet.errors import NumericError, ShapeError
from fusenet.ops import (
    ConvSpec,
    concat_channels,
    conv2d,
    init_conv,
    interp_matrix,
    maxpool2,
    nuclear_norm,
    relu,
    same_padding,
    sigmoid,
    upsample_bilinear,
)
from fusenet.tensor import Tensor, backward, no_grad

SEEDS = range(20)


def naive_conv(x, w, b, dilation, padding):
    """Direct nested-loop cross-correlation, stride 1."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = h + 2 * padding - dilation * (k - 1)
    wo = wd + 2 * padding - dilation * (k - 1)
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, c, u, v] * xp[c, i + u * dilation, j + v * dilation]
                out[o, i, j] = acc
    return out


def mp_nuclear_norm(m):
    """Singular values from mpmath at 50 digits (independent of LAPACK)."""
    with mpmath.workdps(50):
        s = mpmath.svd_r(mpmath.matrix(m.tolist()), compute_uv=False)
        return float(sum(s))


# -- conv2d -----------------------------------------------------------------

def test_same_padding_keeps_size():
    spec = ConvSpec(64, 64, kernel=3, dilation=1)
    assert spec.padding == 1
    assert spec.output_size(256, 256) == (256, 256)


@pytest.mark.parametrize("d", [1, 3, 5])
def test_dilated_conv_matches_loop_oracle(rng, d):
    spec = ConvSpec(2, 3, kernel=3, dilation=d)
    x = rng.standard_normal((2, 12, 12))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
    assert out.shape == (3, 12, 12)
    np.testing.assert_allclose(out, naive_conv(x, w, b, d, spec.padding), rtol=1e-12, atol=1e-12)


def test_dilation_five_receptive_extent():
    spec = ConvSpec(1, 1, kernel=3, dilation=5)
    assert spec.effective_kernel == 11
    assert spec.padding == 5
    # an impulse spreads to exactly the 3x3 taps spaced 5 apart
    x = np.zeros((1, 21, 21))
    x[0, 10, 10] = 1.0
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), None, spec).data[0]
    rows, cols = np.nonzero(out)
    assert sorted(set(rows)) == [5, 10, 15] and sorted(set(cols)) == [5, 10, 15]


def test_identity_kernel():
    x = np.random.default_rng(0).random((1, 7, 5))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), ConvSpec(1, 1, kernel=1))
    np.testing.assert_array_equal(out.data, x)


def test_strided_conv_shape(rng):
    spec = ConvSpec(1, 2, kernel=3, stride=2)
    out = conv2d(Tensor(rng.random((1, 9, 9))), Tensor(rng.random((2, 1, 3, 3))), None, spec)
    assert out.shape == (2, 5, 5)


def test_conv_shape_errors_name_shapes(rng):
    spec = ConvSpec(3, 2)
    with pytest.raises(ShapeError, match=r"\(2, 8, 8\)"):
        conv2d(Tensor(rng.random((2, 8, 8))), Tensor(rng.random((2, 3, 3, 3))), None, spec)
    with pytest.raises(ShapeError, match=r"\(2, 3, 5, 5\)"):
        conv2d(Tensor(rng.random((3, 8, 8))), Tensor(rng.random((2, 3, 5, 5))), None, spec)


def test_even_kernel_has_no_same_padding():
    with pytest.raises(ValueError):
        same_padding(4)


def test_init_conv_bounds():
    spec = ConvSpec(8, 4)
    w, b = init_conv(spec, np.random.default_rng(0))
    assert w.dtype == np.float32 and np.all(b == 0)
    assert np.abs(w).max() <= math.sqrt(6 / (8 * 9))


# -- activations, pooling, upsampling, concat ----------------------------------

def test_relu_sigmoid_values():
    np.testing.assert_array_equal(relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])
    assert sigmoid(Tensor(0.0)).item() == 0.5
    assert sigmoid(Tensor(math.log(3))).item() == pytest.approx(0.75, abs=1e-15)


def test_sigmoid_extremes_are_finite():
    y = sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
    assert np.all(np.isfinite(y))
    np.testing.assert_array_equal(y, [0.0, 1.0])


def test_maxpool_values():
    assert maxpool2(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data.item() == 4.0
    const = maxpool2(Tensor(np.full((2, 6, 4), 0.3)))
    assert const.shape == (2, 3, 2) and np.all(const.data == 0.3)
    with pytest.raises(ShapeError):
        maxpool2(Tensor(np.zeros((1, 3, 4))))


def test_upsample_constant_and_corners(rng):
    up = upsample_bilinear(Tensor(np.full((3, 4, 5), 0.7)), 8, 10).data
    assert up.shape == (3, 8, 10)
    np.testing.assert_allclose(up, 0.7, atol=1e-15)
    x = rng.random((1, 4, 4))
    y = upsample_bilinear(Tensor(x), 8, 8).data
    for i, j in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert y[0, i, j] == pytest.approx(x[0, i, j])


def test_interp_matrix_rows_are_convex():
    m = interp_matrix(5, 11)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert m.min() >= 0


def test_concat_channels():
    xs = [Tensor(np.full((64, 4, 4), i, dtype=float)) for i in range(3)]
    out = concat_channels(xs)
    assert out.shape == (192, 4, 4)
    assert np.all(out.data[64:128] == 1)
    assert concat_channels(xs[:1]) is xs[0]
    with pytest.raises(ShapeError):
        concat_channels([Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 5, 4)))])


# -- autodiff basics -----------------------------------------------------------

def test_square_sum_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_constant_loss_has_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    (x * 0.0 + 5.0).sum().backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        backward(Tensor(np.ones(2), requires_grad=True) * 2.0)


def test_gradients_accumulate_and_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x  # x used twice
    y.sum().backward()
    y2 = x * 2.0
    y2.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0 + 2.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad and y._parents == ()


def test_scalar_operands_keep_float32():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    assert (x * 0.5 + 1.0).dtype == np.float32


# -- finite-difference checks, 20 seeds each --------------------------------------

def _conv_case(seed, dilation):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(2, 3, kernel=3, dilation=dilation)
    x, w, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    r = rng.standard_normal((3, 8, 8))
    return gradcheck(lambda x, w, b: (conv2d(x, w, b, spec) * r).sum(), [x, w, b])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("dilation", [1, 3])
def test_gradcheck_conv2d(seed, dilation):
    assert _conv_case(seed, dilation) <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_strided_conv(seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(1, 2, kernel=3, stride=2)
    r = rng.standard_normal((2, 4, 4))
    err = gradcheck(lambda x, w: (conv2d(x, w, None, spec) * r).sum(),
                    [rng.standard_normal((1, 8, 8)), rng.standard_normal((2, 1, 3, 3))])
    assert err <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_conv_relu_sum(seed):
    # conv -> relu -> sum on a 1x4x4 input
    rng = np.random.default_rng(seed)
    spec = ConvSpec(1, 2)
    err = gradcheck(lambda x, w: relu(conv2d(x, w, None, spec)).sum(),
                    [rng.standard_normal((1, 4, 4)), rng.standard_normal((2, 1, 3, 3))])
    assert err <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_elementwise(seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((2, 8, 8))
    a, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 8, 8))
    # keep relu inputs off the kink, where the difference quotient is meaningless
    kinkless = np.where(np.abs(a) < 1e-2, 0.1, a)
    assert gradcheck(lambda x: (relu(x) * r).sum(), [kinkless]) <= 1e-3
    assert gradcheck(lambda x: (sigmoid(x) * r).sum(), [a]) <= 1e-3
    assert gradcheck(lambda x, y: ((x - y) * (x + y) * r).sum(), [a, b]) <= 1e-3
    assert gradcheck(lambda x: (x.square() * r).mean(), [a]) <= 1e-3
    assert gradcheck(lambda x: (x[:, 1:, :] - x[:, :-1, :]).square().sum(), [a]) <= 1e-3
    assert gradcheck(lambda x: (x.reshape(16, 8) * r.reshape(16, 8)).sum(), [a]) <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_broadcast(seed):
    rng = np.random.default_rng(seed)
    err = gradcheck(lambda x, y: (x * y).square().sum(),
                    [rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 1, 1))])
    assert err <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_pool_upsample_concat(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 8, 8))
    r4, r8, r16 = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 8, 8)), rng.standard_normal((4, 8, 8))
    # distinct values 0.05 apart so no 2x2 block has a near-tie for its maximum
    spaced = rng.permutation(128).reshape(2, 8, 8) * 0.05
    assert gradcheck(lambda x: (maxpool2(x) * r4).sum(), [spaced]) <= 1e-3
    assert gradcheck(lambda x: (upsample_bilinear(x[:, :4, :4], 8, 8) * r8).sum(), [a]) <= 1e-3
    assert gradcheck(lambda x, y: (concat_channels([x, y]) * r16).sum(), [a, rng.standard_normal((2, 8, 8))]) <= 1e-3


# -- nuclear norm ------------------------------------------------------------------

def test_nuclear_norm_analytic():
    assert nuclear_norm(np.eye(2)) == pytest.approx(2.0, abs=1e-12)
    assert nuclear_norm(np.diag([3.0, -4.0])) == pytest.approx(7.0, abs=1e-12)
    assert nuclear_norm(np.array([[1.0, 0.0], [1.0, 0.0]])) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_nuclear_norm_matches_mpmath_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = rng.standard_normal((rng.integers(1, 9), rng.integers(1, 9)))
        assert nuclear_norm(m) == pytest.approx(mp_nuclear_norm(m), rel=1e-9)


def test_nuclear_norm_errors():
    with pytest.raises(ShapeError):
        nuclear_norm(np.ones(3))
    with pytest.raises(NumericError):
        nuclear_norm(np.array([[np.nan, 0.0], [0.0, 1.0]]))


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       st.floats(-10, 10, allow_nan=False))
def test_nuclear_norm_properties(m, c):
    n = nuclear_norm(m)
    assert n >= 0
    assert nuclear_norm(m.T) == pytest.approx(n, rel=1e-9, abs=1e-9)
    assert nuclear_norm(c * m) == pytest.approx(abs(c) * n, rel=1e-9, abs=1e-6)
    # bounded by Frobenius norm times sqrt(rank bound)
    assert n <= math.sqrt(min(m.shape)) * np.linalg.norm(m) * (1 + 1e-12) + 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.just(4), st.just(6)), elements=st.floats(-50, 50)))
def test_maxpool_and_upsample_properties(x):
    pooled = maxpool2(Tensor(x)).data
    assert pooled.max() == x.max()
    up = upsample_bilinear(Tensor(x), 9, 11).data
    # interpolation never leaves the input range
    assert up.min() >= x.min() - 1e-9 and up.max() <= x.max() + 1e-9
