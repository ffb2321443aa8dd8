"""Real 2D Fourier transforms over the trailing two axes, with autodiff.

Convention: unnormalized forward transform, 1/N inverse (NumPy's default),
so ``irfft2(rfft2(x)) == x``. Spectra are stored as separate real/imaginary
tensors so the autodiff core stays real-valued.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make


@dataclass
class ComplexSpectrum:
    """Half-plane spectrum of a real 2D field: last axis has W//2+1 bins."""

    re: Tensor
    im: Tensor
    spatial_shape: tuple  # (H, W) of the originating real field

    @property
    def shape(self):
        return self.re.shape


def rfft2(x: Tensor) -> ComplexSpectrum:
    """Real-to-complex FFT over the trailing two axes of ``x``."""
    if x.ndim < 2:
        raise ValueError(f"rfft2 needs at least 2 trailing spatial axes, got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    if h < 2 or w < 2:
        raise ValueError(f"spatial axes must be >= 2, got ({h}, {w})")
    spec = np.fft.rfft2(x.data, axes=(-2, -1))
    k = spec.shape[-1]

    def bw_re(g):
        buf = np.zeros(x.shape, dtype=np.complex128 if g.dtype == np.float64 else np.complex64)
        buf[..., :k] = g
        return ((x, np.fft.fft2(buf, axes=(-2, -1)).real.astype(g.dtype)),)

    def bw_im(g):
        buf = np.zeros(x.shape, dtype=np.complex128 if g.dtype == np.float64 else np.complex64)
        buf[..., :k] = -1j * g  # conj of (i*g)
        return ((x, np.fft.fft2(buf, axes=(-2, -1)).real.astype(g.dtype)),)

    re = _make(np.ascontiguousarray(spec.real), (x,), bw_re)
    im = _make(np.ascontiguousarray(spec.imag), (x,), bw_im)
    return ComplexSpectrum(re=re, im=im, spatial_shape=(h, w))


def irfft2(spec: ComplexSpectrum, s=None) -> Tensor:
    """Complex-to-real inverse FFT over the trailing two axes (1/N scaling)."""
    h, w = s if s is not None else spec.spatial_shape
    re, im = spec.re, spec.im
    k = re.shape[-1]
    if k != w // 2 + 1:
        raise ValueError(f"spectrum last axis {k} inconsistent with width {w}")
    z = re.data + 1j * im.data
    out = np.fft.irfft2(z, s=(h, w), axes=(-2, -1)).astype(re.dtype)

    # adjoint: fft over axis -2 of (col_weights * rfft(cotangent)) / (H*W)
    wts = np.full(k, 2.0)
    wts[0] = 1.0
    if w % 2 == 0:
        wts[-1] = 1.0

    def bw(g):
        t = np.fft.rfft(g, axis=-1) * (wts / (h * w))
        gz = np.fft.fft(t, axis=-2)
        return ((re, gz.real.astype(g.dtype)), (im, gz.imag.astype(g.dtype)))

    # route gradients to both re and im through a single two-parent closure
    def bw_pair(g):
        return bw(g)

    return _make(out, (re, im), bw_pair)


def parseval_ratio(x: np.ndarray) -> float:
    """||x||^2 * N / ||F(x)||^2 for the half-spectrum with symmetry weights."""
    h, w = x.shape[-2:]
    spec = np.fft.rfft2(x, axes=(-2, -1))
    wts = np.full(spec.shape[-1], 2.0)
    wts[0] = 1.0
    if w % 2 == 0:
        wts[-1] = 1.0
    power = (np.abs(spec) ** 2 * wts).sum()
    return float((x ** 2).sum() * (h * w) / power)


def dft_matrices(n: int, modes: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables E[m, k] = exp(-2i*pi*k*m/n) for k < modes, split re/im."""
    m = np.arange(n)[:, None]
    k = np.arange(modes)[None, :]
    ang = 2.0 * np.pi * m * k / n
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)
