import numpy as np
import pytest

from bladeseg import tensor as T
from bladeseg.errors import OddSpatialDims, ShapeMismatch
from bladeseg.kernels import conv

from oracles import central_diff, max_rel_error, naive_conv

LAYER_TOL = 1e-5
N_INSTANCES = 20


def random_conv_case(rng):
    c_in, c_out = rng.integers(1, 4, 2)
    h, w = rng.integers(2, 7, 2)
    k = int(rng.choice([1, 3]))
    pad = (k - 1) // 2 if rng.random() < 0.7 else 0
    if pad == 0 and k == 3:
        h, w = h + 2, w + 2
    x = rng.standard_normal((c_in, h, w))
    wt = rng.standard_normal((c_out, c_in, k, k))
    b = rng.standard_normal(c_out)
    return x, wt, b, pad


# ---------------------------------------------------------------- conv2d

def test_delta_kernel_is_identity(rng):
    x = rng.standard_normal((1, 6, 5))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(T.conv2d_fwd(x, w, np.zeros(1)), x)


def test_scalar_affine():
    out = T.conv2d_fwd(np.array([[[2.0]]]), np.array([[[[3.0]]]]), np.array([1.0]))
    assert out.tolist() == [[[7.0]]]


@pytest.mark.parametrize("seed", range(5))
def test_conv_forward_matches_naive_loops(seed):
    rng = np.random.default_rng(seed)
    x, w, b, pad = random_conv_case(rng)
    assert np.allclose(T.conv2d_fwd(x, w, b, pad=pad), naive_conv(x, w, b, pad), atol=1e-12)


def test_conv_backends_agree(rng):
    xp = rng.standard_normal((5, 20, 131))
    w = rng.standard_normal((4, 5, 3, 3))
    b = rng.standard_normal(4)
    out_a, out_b = np.empty((4, 18, 129)), np.empty((4, 18, 129))
    conv.conv2d_forward_numba(xp, w, b, out_a)
    conv.conv2d_forward_numpy(xp, w, b, out_b)
    assert np.allclose(out_a, out_b, atol=1e-12)
    dout = rng.standard_normal((4, 18, 129))
    dw_a, dw_b = np.empty(w.shape), np.empty(w.shape)
    conv.conv2d_weight_grad_numba(xp, dout, dw_a)
    conv.conv2d_weight_grad_numpy(xp, dout, dw_b)
    assert np.allclose(dw_a, dw_b, atol=1e-10)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(N_INSTANCES):
        x, w, b, pad = random_conv_case(rng)
        r = rng.standard_normal(T.conv2d_fwd(x, w, b, pad=pad).shape)

        def loss():
            return float(np.sum(T.conv2d_fwd(x, w, b, pad=pad) * r))

        dx, dw, db = T.conv2d_bwd(r, x, w, pad=pad)
        for analytic, var in ((dx, x), (dw, w), (db, b)):
            worst = max(worst, max_rel_error(analytic, central_diff(loss, var)))
    assert worst <= LAYER_TOL


def test_conv_weight_gradient_with_coarse_step(rng):
    x = rng.standard_normal((2, 8, 8))
    w = rng.standard_normal((4, 2, 3, 3))
    b = rng.standard_normal(4)
    r = rng.standard_normal((4, 8, 8))
    _, dw, _ = T.conv2d_bwd(r, x, w)
    numeric = central_diff(lambda: float(np.sum(T.conv2d_fwd(x, w, b) * r)), w, h=1e-3)
    assert max_rel_error(dw, numeric) <= 1e-5


@pytest.mark.parametrize("kw", [
    dict(weight=np.zeros((1, 1, 5, 5))),
    dict(weight=np.zeros((1, 2, 3, 3))),
    dict(bias=np.zeros(2)),
    dict(stride=2),
    dict(pad=2),
])
def test_conv_argument_errors(kw):
    args = dict(x=np.zeros((1, 4, 4)), weight=np.zeros((1, 1, 3, 3)), bias=np.zeros(1))
    args.update(kw)
    with pytest.raises(ShapeMismatch):
        T.conv2d_fwd(**args)


def test_conv_rejects_integer_input():
    with pytest.raises(ShapeMismatch):
        T.conv2d_fwd(np.zeros((1, 4, 4), int), np.zeros((1, 1, 3, 3)), np.zeros(1))


# ---------------------------------------------------------------- upconv

def test_upconv_single_tap_broadcast():
    out = T.upconv2x2_fwd(np.array([[[1.0]]]), np.ones((1, 2, 2, 2)), np.zeros(2))
    assert out.shape == (2, 2, 2) and np.all(out == 1.0)


def test_upconv_shape_rule(rng):
    out = T.upconv2x2_fwd(rng.standard_normal((3, 5, 7)), rng.standard_normal((3, 4, 2, 2)), np.zeros(4))
    assert out.shape == (4, 10, 14)


def test_upconv_matches_definition(rng):
    x = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((2, 3, 2, 2))
    b = rng.standard_normal(3)
    out = T.upconv2x2_fwd(x, w, b)
    ref = np.zeros((3, 6, 8))
    for o in range(3):
        for i in range(3):
            for j in range(4):
                for a in range(2):
                    for bb in range(2):
                        ref[o, 2 * i + a, 2 * j + bb] = b[o] + np.dot(x[:, i, j], w[:, o, a, bb])
    assert np.allclose(out, ref, atol=1e-12)


def test_upconv_gradients_match_finite_differences():
    rng = np.random.default_rng(200)
    worst = 0.0
    for _ in range(N_INSTANCES):
        c, o = rng.integers(1, 4, 2)
        h, w_ = rng.integers(1, 5, 2)
        x = rng.standard_normal((c, h, w_))
        w = rng.standard_normal((c, o, 2, 2))
        b = rng.standard_normal(o)
        r = rng.standard_normal((o, 2 * h, 2 * w_))
        dx, dw, db = T.upconv2x2_bwd(r, x, w)

        def loss():
            return float(np.sum(T.upconv2x2_fwd(x, w, b) * r))

        for analytic, var in ((dx, x), (dw, w), (db, b)):
            worst = max(worst, max_rel_error(analytic, central_diff(loss, var)))
    assert worst <= LAYER_TOL


# ---------------------------------------------------------------- maxpool

def test_maxpool_basic():
    out, arg = T.maxpool2x2_fwd(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.tolist() == [[[4.0]]]
    assert arg.tolist() == [[[3]]]


def test_maxpool_ties_route_to_first_element():
    x = np.full((2, 4, 4), 0.5)
    out, arg = T.maxpool2x2_fwd(x)
    assert np.all(arg == 0)
    dx = T.maxpool2x2_bwd(np.ones_like(out), arg)
    assert np.array_equal(dx[:, ::2, ::2], np.ones((2, 2, 2)))
    assert dx.sum() == out.size


def test_maxpool_odd_dims():
    with pytest.raises(OddSpatialDims):
        T.maxpool2x2_fwd(np.zeros((1, 3, 4)))


def test_maxpool_gradients_match_finite_differences():
    rng = np.random.default_rng(300)
    worst = 0.0
    h = 1e-6
    for _ in range(N_INSTANCES):
        c = int(rng.integers(1, 4))
        hh, ww = 2 * rng.integers(1, 5, 2)
        # distinct values spaced well above the step keep perturbations away from ties
        x = rng.permutation(c * hh * ww).reshape(c, hh, ww) * 0.01 + rng.uniform(0, 1e-3)
        out, arg = T.maxpool2x2_fwd(x)
        r = rng.standard_normal(out.shape)
        dx = T.maxpool2x2_bwd(r, arg)
        numeric = central_diff(lambda: float(np.sum(T.maxpool2x2_fwd(x)[0] * r)), x, h)
        worst = max(worst, max_rel_error(dx, numeric))
    assert worst <= LAYER_TOL


# ---------------------------------------------------------------- elementwise / concat

def test_relu_and_sigmoid_values():
    assert T.relu_fwd(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert T.sigmoid_fwd(np.array([0.0]))[0] == 0.5
    big = T.sigmoid_fwd(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(big)) and big[0] >= 0.0 and big[1] <= 1.0


def test_relu_and_sigmoid_gradients_match_finite_differences():
    rng = np.random.default_rng(400)
    worst = 0.0
    for _ in range(N_INSTANCES):
        shape = tuple(rng.integers(1, 5, 3))
        x = rng.standard_normal(shape) * 3
        x[np.abs(x) < 1e-3] = 0.5          # keep away from the ReLU kink
        r = rng.standard_normal(shape)
        num_relu = central_diff(lambda: float(np.sum(T.relu_fwd(x) * r)), x)
        worst = max(worst, max_rel_error(T.relu_bwd(r, x), num_relu))
        num_sig = central_diff(lambda: float(np.sum(T.sigmoid_fwd(x) * r)), x)
        worst = max(worst, max_rel_error(T.sigmoid_bwd(r, T.sigmoid_fwd(x)), num_sig))
    assert worst <= LAYER_TOL


def test_concat_forward_and_backward(rng):
    a, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 4, 4))
    cat = T.concat_channels(a, b)
    assert cat.shape == (5, 4, 4)
    d = rng.standard_normal(cat.shape)
    da, db = T.concat_bwd(d, 2)
    assert np.array_equal(da, d[:2]) and np.array_equal(db, d[2:])
    with pytest.raises(ShapeMismatch):
        T.concat_channels(a, np.zeros((1, 4, 5)))


def test_concat_gradients_match_finite_differences():
    rng = np.random.default_rng(500)
    worst = 0.0
    for _ in range(N_INSTANCES):
        c1, c2, h, w = rng.integers(1, 4, 4)
        a, b = rng.standard_normal((c1, h, w)), rng.standard_normal((c2, h, w))
        r = rng.standard_normal((c1 + c2, h, w))
        da, db = T.concat_bwd(r, c1)

        def loss():
            return float(np.sum(T.concat_channels(a, b) * r))

        worst = max(worst, max_rel_error(da, central_diff(loss, a)), max_rel_error(db, central_diff(loss, b)))
    assert worst <= LAYER_TOL


# ---------------------------------------------------------------- float32

def test_float32_gradients_track_float64(rng):
    x = rng.standard_normal((3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    r = rng.standard_normal((4, 8, 8))
    ref = T.conv2d_bwd(r, x, w)
    low = T.conv2d_bwd(r.astype(np.float32), x.astype(np.float32), w.astype(np.float32))
    for a, b in zip(low, ref):
        assert a.dtype == np.float32
        assert np.max(np.abs(a - b)) <= 1e-3 * np.max(np.abs(b))


def test_ops_do_not_modify_inputs(rng):
    x = rng.standard_normal((2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    keep = x.copy(), w.copy()
    T.conv2d_bwd(rng.standard_normal((3, 4, 4)), x, w)
    T.maxpool2x2_fwd(x)
    assert np.array_equal(x, keep[0]) and np.array_equal(w, keep[1])
