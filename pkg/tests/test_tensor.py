import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepmix.tensor import (
    PreparedInput,
    SgdState,
    ShapeError,
    adaptive_avg_pool,
    adaptive_avg_pool_grad,
    argmax2d,
    conv2d,
    conv2d_avg_pool,
    conv2d_avg_pool_grad,
    conv2d_grad,
    conv2d_grad_input,
    conv2d_grad_kernel,
    elementwise,
    gaussian_map,
    make_rng,
    pool_bins,
    sgd_step,
)
from oracles import central_fd, naive_conv2d, rel_err


def test_conv2d_ones_kernel_counts_neighbours():
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    y = conv2d(x, np.ones((1, 1, 3, 3), dtype=np.float32), padding=1)
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float32)
    np.testing.assert_array_equal(y[0, 0], expected)


def test_conv2d_output_shape_for_template_sized_kernel():
    x = np.zeros((15, 256, 29, 29), dtype=np.float32)
    k = np.zeros((1, 15, 3, 3), dtype=np.float32)
    y = conv2d(x.transpose(1, 0, 2, 3), k, padding=1)
    assert y.shape == (256, 1, 29, 29)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        conv2d(np.zeros((1, 3, 5, 5)), np.zeros((2, 4, 3, 3)))


def test_conv2d_rejects_kernel_larger_than_input():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)))


@pytest.mark.parametrize("padding", [0, 1, 2])
def test_conv2d_matches_loop_oracle(rng, padding):
    for _ in range(10):
        n, c, co = rng.integers(1, 4, size=3)
        h, w = rng.integers(3, 7, size=2)
        kh = int(rng.choice([1, 3, 5]))
        if h + 2 * padding < kh or w + 2 * padding < kh:
            continue
        x = rng.standard_normal((n, c, h, w))
        k = rng.standard_normal((co, c, kh, kh))
        np.testing.assert_allclose(conv2d(x, k, padding), naive_conv2d(x, k, padding), atol=1e-12)


@pytest.mark.parametrize("cin,cout,expect_im2col", [(2, 8, True), (24, 1, False)])
def test_both_conv_strategies_match_oracle(rng, cin, cout, expect_im2col):
    from deepmix.tensor import _use_im2col

    x = rng.standard_normal((2, cin, 5, 5))
    k = rng.standard_normal((cout, cin, 3, 3))
    assert _use_im2col(2, cin, cout, 3, 3, 5, 5, 7, 7) is expect_im2col
    np.testing.assert_allclose(conv2d(x, k, 1), naive_conv2d(x, k, 1), atol=1e-12)
    g = rng.standard_normal((2, cout, 5, 5))
    gk = conv2d_grad_kernel(x, g, k.shape, 1)
    assert rel_err(gk, central_fd(lambda v: float(np.sum(conv2d(x, v, 1) * g)), k)) < 1e-7


def test_prepared_input_matches_plain_array(rng):
    x = rng.standard_normal((3, 4, 6, 6))
    k = rng.standard_normal((2, 4, 3, 3))
    prep = PreparedInput(x, 1)
    np.testing.assert_array_equal(conv2d(prep, k, 1), conv2d(x, k, 1))
    g = rng.standard_normal((3, 2, 6, 6))
    np.testing.assert_array_equal(conv2d_grad_kernel(prep, g, k.shape, 1), conv2d_grad_kernel(x, g, k.shape, 1))
    with pytest.raises(ValueError, match="padding"):
        conv2d(prep, k, 0)


def test_conv2d_grad_against_finite_differences(rng):
    for _ in range(5):
        x = rng.standard_normal((2, 2, 5, 4))
        k = rng.standard_normal((3, 2, 3, 3))
        g = rng.standard_normal((2, 3, 5, 4))
        gi, gk = conv2d_grad(x, k, g, 1)
        fd_x = central_fd(lambda v: float(np.sum(conv2d(v, k, 1) * g)), x)
        fd_k = central_fd(lambda v: float(np.sum(conv2d(x, v, 1) * g)), k)
        assert rel_err(gi, fd_x) < 1e-7
        assert rel_err(gk, fd_k) < 1e-7


def test_conv2d_grad_input_adjoint_without_flip_path(rng):
    # Non-square kernel uses the scatter path.
    x = rng.standard_normal((2, 3, 6, 7))
    k = rng.standard_normal((2, 3, 3, 1))
    g = rng.standard_normal(conv2d(x, k, 1).shape)
    gx = conv2d_grad_input(x.shape, k, g, 1)
    assert abs(np.sum(gx * x) - np.sum(conv2d(x, k, 1) * g)) < 1e-10


def test_pool_bins_cover_input():
    assert pool_bins(4, 2) == [(0, 2), (2, 4)]
    assert pool_bins(5, 3) == [(0, 2), (1, 4), (3, 5)]


def test_adaptive_pool_example():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(adaptive_avg_pool(x, 2, 2)[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_adaptive_pool_identity_when_output_equals_input(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(adaptive_avg_pool(x, 4, 5), x)


def test_adaptive_pool_rejects_upsampling():
    with pytest.raises(ShapeError):
        adaptive_avg_pool(np.zeros((1, 1, 2, 2)), 3, 3)


def test_adaptive_pool_grad_is_adjoint(rng):
    x = rng.standard_normal((2, 2, 7, 5))
    g = rng.standard_normal((2, 2, 3, 3))
    gx = adaptive_avg_pool_grad(x.shape, g)
    assert abs(np.sum(adaptive_avg_pool(x, 3, 3) * g) - np.sum(gx * x)) < 1e-12


def test_fused_conv_pool_matches_composition(rng):
    x = rng.standard_normal((1, 3, 7, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    direct = adaptive_avg_pool(conv2d(x, k, 1) + b[None, :, None, None], 3, 3)
    np.testing.assert_allclose(conv2d_avg_pool(x, k, b, 1, 3, 3), direct, atol=1e-12)


def test_fused_conv_pool_grad_against_finite_differences(rng):
    x = rng.standard_normal((1, 2, 5, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    g = rng.standard_normal((1, 3, 3, 3))
    gx, gk, gb = conv2d_avg_pool_grad(x, k, g, 1)
    f = lambda xx, kk, bb: float(np.sum(conv2d_avg_pool(xx, kk, bb, 1, 3, 3) * g))
    assert rel_err(gx, central_fd(lambda v: f(v, k, b), x)) < 1e-7
    assert rel_err(gk, central_fd(lambda v: f(x, v, b), k)) < 1e-7
    assert rel_err(gb, central_fd(lambda v: f(x, k, v), b)) < 1e-7


def test_elementwise_ops_and_shape_check():
    a = np.array([1.0, 2.0])
    b = np.array([3.0, 5.0])
    np.testing.assert_array_equal(elementwise(a, b, "add"), [4, 7])
    np.testing.assert_array_equal(elementwise(a, b, "sub"), [-2, -3])
    np.testing.assert_array_equal(elementwise(a, b, "mul"), [3, 10])
    np.testing.assert_array_equal(elementwise(a, 2.0, "scale"), [2, 4])
    with pytest.raises(ShapeError):
        elementwise(a, np.ones(3), "add")


def test_argmax2d_takes_first_in_row_major_order():
    m = np.zeros((1, 1, 3, 4))
    m[0, 0, 1, 3] = 1.0
    m[0, 0, 2, 0] = 1.0
    assert argmax2d(m) == (1, 3)
    assert argmax2d(np.zeros((2, 2))) == (0, 0)


def test_gaussian_map_peak_and_sigma_falloff():
    g = gaussian_map(9, 9, (4, 4), 2.0, dtype=np.float64)
    assert g.shape == (1, 1, 9, 9)
    assert g[0, 0, 4, 4] == 1.0
    assert g[0, 0, 4, 6] == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert argmax2d(g) == (4, 4)


def test_gaussian_map_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_map(3, 3, (1, 1), 0.0)


def test_sgd_two_steps_with_momentum():
    p = {"w": np.array([0.0])}
    st_ = SgdState(learning_rate=0.1, momentum=0.9)
    g = {"w": np.array([1.0])}
    p = sgd_step(p, g, st_)
    p = sgd_step(p, g, st_)
    assert p["w"][0] == pytest.approx(-0.1 * 1.0 * (1 + 1.9), abs=1e-15)


def test_sgd_weight_decay_pulls_towards_zero():
    st_ = SgdState(learning_rate=0.5, weight_decay=0.1)
    p = sgd_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, st_)
    assert p["w"][0] == pytest.approx(2.0 - 0.5 * 0.2)


def test_sgd_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        SgdState(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdState(learning_rate=0.1, momentum=1.0)


def test_make_rng_is_reproducible():
    assert make_rng(5).standard_normal(3).tolist() == make_rng(5).standard_normal(3).tolist()


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 3), c=st.integers(1, 3), co=st.integers(1, 3),
    h=st.integers(3, 6), w=st.integers(3, 6), seed=st.integers(0, 10_000),
)
def test_conv2d_is_linear_in_input(n, c, co, h, w, seed):
    r = np.random.default_rng(seed)
    x1, x2 = r.standard_normal((2, n, c, h, w))
    k = r.standard_normal((co, c, 3, 3))
    np.testing.assert_allclose(conv2d(x1 + 2 * x2, k, 1), conv2d(x1, k, 1) + 2 * conv2d(x2, k, 1), atol=1e-10)
