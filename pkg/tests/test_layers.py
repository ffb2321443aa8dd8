"""Operator layers: spectral conv, Fourier/U-Fourier, U-Net, projection, CNN."""
import numpy as np
import pytest

from fmionet import tensor as T
from fmionet.fft import ComplexSpectrum, irfft2, rfft2
from fmionet.layers import (
    CNNEncoder,
    FNN,
    FourierLayer2d,
    Linear,
    Projection,
    SpectralConv2d,
    UFourierLayer2d,
    UNet2d,
    count_params,
)

from oracles import directional_grad_check, naive_rfft2


def rng64(seed=0):
    return np.random.default_rng(seed)


def t64(x, rg=False):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


def cast64(module):
    for p in module.parameters():
        p.data = p.data.astype(np.float64)
    return module


# ---------------------------------------------------------------- lift / Linear

def test_lift_identity_initialized():
    lin = cast64(Linear(3, 3, rng64()))
    lin.w.data = np.eye(3)
    lin.b.data[:] = 0.0
    x = t64(rng64(1).standard_normal((2, 4, 5, 3)))
    assert np.allclose(lin(x).data, x.data)


def test_lift_zero_input_broadcasts_bias():
    lin = cast64(Linear(4, 6, rng64(2)))
    lin.b.data = rng64(3).standard_normal(6)
    out = lin(t64(np.zeros((2, 3, 3, 4))))
    assert np.allclose(out.data, np.broadcast_to(lin.b.data, (2, 3, 3, 6)))


def test_lift_matches_per_point_matmul():
    lin = cast64(Linear(5, 7, rng64(4)))
    x = rng64(5).standard_normal((2, 3, 4, 5))
    got = lin(t64(x)).data
    for idx in np.ndindex(2, 3, 4):
        want = x[idx] @ lin.w.data + lin.b.data
        assert np.allclose(got[idx], want, atol=1e-12)


# ---------------------------------------------------------------- spectral conv

def spectral_identity(width, h, w):
    """R = identity on every retainable mode, full retention."""
    sc = SpectralConv2d(width, width, h // 2 + 1, w // 2 + 1, rng64(6), dtype=np.float64)
    sc.r_re.data[:] = 0.0
    sc.r_im.data[:] = 0.0
    for c in range(width):
        sc.r_re.data[c, c] = 1.0
    return sc


def test_spectral_conv_identity_full_modes():
    for h, w in [(8, 8), (6, 10), (5, 7)]:
        sc = spectral_identity(3, h, w)
        x = t64(rng64(7).standard_normal((2, h, w, 3)))
        assert np.abs(sc(x).data - x.data).max() < 1e-5


def test_spectral_conv_zero_weights():
    sc = SpectralConv2d(3, 4, 3, 3, rng64(8), dtype=np.float64)
    sc.r_re.data[:] = 0.0
    sc.r_im.data[:] = 0.0
    x = t64(rng64(9).standard_normal((1, 8, 8, 3)))
    assert np.abs(sc(x).data).max() == 0.0


def test_spectral_conv_shift_equivariance():
    sc = SpectralConv2d(2, 2, 3, 4, rng64(10))
    x = rng64(11).standard_normal((1, 16, 16, 2)).astype(np.float32)
    y = sc(T.Tensor(x)).data
    for shift in [(3, 5), (7, 1)]:
        xs = np.roll(x, shift, axis=(1, 2))
        ys = sc(T.Tensor(xs)).data
        assert np.abs(ys - np.roll(y, shift, axis=(1, 2))).max() < 1e-4


def reference_spectral(sc: SpectralConv2d, x: np.ndarray) -> np.ndarray:
    """rfft2 -> retain/mix modes -> zero the rest -> irfft2, via the FFT ops."""
    n, h, w, cin = x.shape
    mh, mw = sc.modes_h, sc.modes_w
    ml = min(mh - 1, h - mh)
    r = sc.r_re.data + 1j * sc.r_im.data
    spec = np.fft.rfft2(np.transpose(x, (0, 3, 1, 2)), axes=(-2, -1))
    out = np.zeros((n, sc.c_out) + spec.shape[2:], dtype=spec.dtype)
    out[:, :, :mh, :mw] = np.einsum("nixy,ioxy->noxy", spec[:, :, :mh, :mw], r[:, :, :mh, :mw])
    if ml:
        mirror = r[:, :, 1:ml + 1, :][:, :, ::-1]  # rows h-ml .. h-1 share R rows ml .. 1
        out[:, :, h - ml:, :mw] = np.einsum("nixy,ioxy->noxy", spec[:, :, h - ml:, :mw], mirror)
    y = np.fft.irfft2(out, s=(h, w), axes=(-2, -1))
    return np.transpose(y, (0, 2, 3, 1))


def test_spectral_conv_equals_fft_reference():
    for h, w, mh, mw in [(8, 8, 3, 3), (8, 8, 5, 5), (6, 10, 2, 4), (5, 7, 3, 4)]:
        sc = SpectralConv2d(3, 2, mh, mw, rng64(12), dtype=np.float64)
        x = rng64(13).standard_normal((2, h, w, 3))
        got = sc(t64(x)).data
        want = reference_spectral(sc, x)
        assert np.abs(got - want).max() < 1e-12


def test_spectral_conv_matches_naive_dft_oracle():
    # single channel in/out so the naive path is a plain spectrum filter
    sc = SpectralConv2d(1, 1, 3, 3, rng64(14), dtype=np.float64)
    x = rng64(15).standard_normal((8, 8))
    got = sc(t64(x[None, :, :, None])).data[0, :, :, 0]
    spec = naive_rfft2(x)
    r = sc.r_re.data[0, 0] + 1j * sc.r_im.data[0, 0]
    filt = np.zeros_like(spec)
    filt[:3, :3] = spec[:3, :3] * r
    filt[-2:, :3] = spec[-2:, :3] * r[1:3][::-1]
    want = np.fft.irfft2(filt, s=(8, 8))
    assert np.abs(got - want).max() < 1e-10


def test_spectral_conv_is_linear_in_input():
    sc = SpectralConv2d(2, 2, 3, 3, rng64(16), dtype=np.float64)
    x, y = rng64(17).standard_normal((2, 1, 8, 8, 2))
    a, b = 1.7, -0.4
    lhs = sc(t64(a * x + b * y)).data
    rhs = a * sc(t64(x)).data + b * sc(t64(y)).data
    assert np.abs(lhs - rhs).max() < 1e-12


def test_spectral_conv_mode_bounds_error():
    sc = SpectralConv2d(2, 2, 6, 3, rng64(18))
    with pytest.raises(ValueError):
        sc(T.Tensor(np.zeros((1, 8, 8, 2), dtype=np.float32)))


# ---------------------------------------------------------------- Fourier layer

def test_fourier_layer_passthrough():
    fl = FourierLayer2d(3, 2, 2, rng64(19), dtype=np.float64)
    fl.spectral.r_re.data[:] = 0.0
    fl.spectral.r_im.data[:] = 0.0
    fl.w.data = np.eye(3)
    fl.b.data[:] = 0.0
    z = t64(np.abs(rng64(20).standard_normal((1, 8, 8, 3))))  # nonnegative
    assert np.allclose(fl(z).data, z.data)


def test_fourier_layer_zero_input_gives_sigma_b():
    fl = FourierLayer2d(3, 2, 2, rng64(21), dtype=np.float64)
    fl.b.data = rng64(22).standard_normal(3)
    out = fl(t64(np.zeros((2, 8, 8, 3))))
    want = np.maximum(fl.b.data, 0.0)
    assert np.allclose(out.data, np.broadcast_to(want, out.shape))


def test_fourier_layer_equals_component_composition():
    fl = FourierLayer2d(3, 2, 3, rng64(23), dtype=np.float64)
    z = rng64(24).standard_normal((2, 8, 10, 3))
    got = fl(t64(z)).data
    want = np.maximum(fl.spectral(t64(z)).data + z @ fl.w.data + fl.b.data, 0.0)
    assert np.abs(got - want).max() < 1e-12


# ---------------------------------------------------------------- U-Net / U-Fourier

def test_unet_preserves_shape():
    unet = UNet2d(4, rng64(25))
    x = T.Tensor(rng64(26).standard_normal((2, 8, 12, 4)).astype(np.float32))
    assert unet(x).shape == x.shape


def test_unet_rejects_indivisible_dims():
    unet = UNet2d(4, rng64(27))
    with pytest.raises(ValueError):
        unet(T.Tensor(np.zeros((1, 6, 8, 4), dtype=np.float32)))


def test_ufourier_zero_unet_reduces_to_fourier_layer():
    rng = rng64(28)
    ufl = UFourierLayer2d(3, 2, 2, rng, dtype=np.float64)
    ufl.unet.dec2[0].data[:] = 0.0  # final U-Net conv kernel
    ufl.unet.dec2[1].data[:] = 0.0
    fl = FourierLayer2d(3, 2, 2, rng64(99), dtype=np.float64)
    fl.spectral.r_re.data = ufl.spectral.r_re.data.copy()
    fl.spectral.r_im.data = ufl.spectral.r_im.data.copy()
    fl.w.data = ufl.w.data.copy()
    fl.b.data = ufl.b.data.copy()
    z = t64(rng64(29).standard_normal((1, 8, 8, 3)))
    assert np.allclose(ufl(z).data, fl(z).data, atol=1e-12)


def test_ufourier_all_zero_gives_zero():
    ufl = UFourierLayer2d(2, 2, 2, rng64(30), dtype=np.float64)
    for p in ufl.parameters():
        p.data[:] = 0.0
    z = t64(rng64(31).standard_normal((1, 8, 8, 2)))
    assert np.abs(ufl(z).data).max() == 0.0


def test_ufourier_gradient_finite_differences():
    ufl = UFourierLayer2d(2, 2, 2, rng64(32), dtype=np.float64)
    x = T.param(rng64(33).standard_normal((1, 8, 8, 2)), dtype=np.float64)
    c = rng64(34).standard_normal((1, 8, 8, 2))
    leaves = ufl.parameters() + [x]

    def loss_fn():
        return T.tsum(T.mul(ufl(x), T.Tensor(c, dtype=np.float64)))

    for seed in range(3):
        err = directional_grad_check(loss_fn, leaves, rng64(100 + seed))
        assert err < 1e-5


# ---------------------------------------------------------------- projection

def test_projection_zero_input_composed_bias():
    proj = Projection(6, rng64(35), hidden=8, n_out=1, dtype=np.float64)
    proj.fc1.b.data = rng64(36).standard_normal(8)
    proj.fc2.b.data = rng64(37).standard_normal(1)
    out = proj(t64(np.zeros((2, 3, 6))))
    want = np.maximum(proj.fc1.b.data, 0.0) @ proj.fc2.w.data + proj.fc2.b.data
    assert np.allclose(out.data, np.broadcast_to(want, (2, 3, 1)))


def test_projection_paper_shape():
    proj = Projection(36, rng64(38))
    z = T.Tensor(np.zeros((2, 104, 208, 36), dtype=np.float32))
    assert proj(z).shape == (2, 104, 208, 1)


def test_projection_linear_regime_matches_matrix_oracle():
    proj = Projection(5, rng64(39), hidden=7, n_out=1, dtype=np.float64)
    proj.fc1.b.data[:] = 10.0  # keep every ReLU active for small inputs
    x = 0.1 * rng64(40).standard_normal((4, 5))
    got = proj(t64(x)).data
    want = (x @ proj.fc1.w.data + proj.fc1.b.data) @ proj.fc2.w.data + proj.fc2.b.data
    assert np.allclose(got, want, atol=1e-12)


def test_projection_param_count_contract():
    proj = Projection(36, rng64(41))
    assert proj.fc1.w.size + proj.fc1.b.size == 36 * 128 + 128 == 4736


# ---------------------------------------------------------------- CNN encoder

def test_cnn_encoder_paper_shape_and_count():
    enc = CNNEncoder((96, 200), 12, rng64(42))
    x = T.Tensor(np.zeros((2, 96, 200, 12), dtype=np.float32))
    out = enc(x)
    assert out.shape == (2, 512)


def test_cnn_encoder_zero_input_deterministic():
    enc = CNNEncoder((32, 64), 5, rng64(43))
    x = T.Tensor(np.zeros((1, 32, 64, 5), dtype=np.float32))
    a = enc(x).data.copy()
    b = enc(x).data.copy()
    assert np.array_equal(a, b)


def test_cnn_encoder_rejects_wrong_spatial_dims():
    enc = CNNEncoder((96, 200), 5, rng64(44))
    with pytest.raises(ValueError):
        enc(T.Tensor(np.zeros((1, 32, 64, 5), dtype=np.float32)))


def test_leaky_slope_is_0p2():
    # a unit receiving -1 pre-activation contributes -0.2
    assert T.leaky_relu(T.Tensor(np.array([-1.0]), dtype=np.float64), 0.2).data[0] == -0.2


# ---------------------------------------------------------------- layer gradients

@pytest.mark.parametrize("factory", [
    lambda rng: (Linear(3, 4, rng, dtype=np.float64), (2, 5, 3)),
    lambda rng: (FNN([3, 8, 4], rng, dtype=np.float64), (6, 3)),
    lambda rng: (SpectralConv2d(2, 3, 2, 3, rng, dtype=np.float64), (1, 8, 8, 2)),
    lambda rng: (FourierLayer2d(2, 2, 2, rng, dtype=np.float64), (1, 8, 8, 2)),
    lambda rng: (UNet2d(2, rng, dtype=np.float64), (1, 8, 8, 2)),
    lambda rng: (Projection(4, rng, hidden=6, dtype=np.float64), (3, 4)),
    lambda rng: (CNNEncoder((8, 12), 2, rng, dtype=np.float64), (1, 8, 12, 2)),
])
def test_layer_gradients_vs_finite_differences(factory):
    for seed in range(3):
        layer, in_shape = factory(rng64(50 + seed))
        x = T.param(rng64(60 + seed).standard_normal(in_shape), dtype=np.float64)
        c = rng64(70 + seed).standard_normal(1)

        def loss_fn():
            y = layer(x)
            return T.tsum(T.mul(T.mul(y, y), float(c[0])))

        err = directional_grad_check(loss_fn, layer.parameters() + [x], rng64(80 + seed))
        assert err < 1e-5


def test_count_params_linear():
    lin = Linear(36, 128, rng64(90))
    assert count_params(lin) == 36 * 128 + 128
