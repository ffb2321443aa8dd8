"""Neural building blocks: lifting, spectral convolution, Fourier and
U-Fourier layers, U-Net block, projection head, FNN, and the CNN encoder
used by the pointwise-product baselines.

All spatial tensors are channels-last (N, H, W, C). Layers are pure
functions of (input, parameters) and safe for concurrent forward passes on
distinct tapes.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .fft import dft_matrices
from .tensor import Tensor


class Module:
    """Base with recursive parameter discovery in attribute order."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        seen: set[int] = set()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            out.extend(_collect(full, value, seen))
        return out

    def count_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _collect(name, value, seen):
    if isinstance(value, Tensor):
        if value.requires_grad and id(value) not in seen:
            seen.add(id(value))
            return [(name, value)]
        return []
    if isinstance(value, Module):
        out = []
        for sub, p in value.named_parameters(prefix=f"{name}."):
            if id(p) not in seen:
                seen.add(id(p))
                out.append((sub, p))
        return out
    if isinstance(value, (list, tuple)):
        out = []
        for i, item in enumerate(value):
            out.extend(_collect(f"{name}.{i}", item, seen))
        return out
    return []


def count_params(model: Module) -> int:
    """Number of trainable scalars in a model."""
    return model.count_params()


def _glorot(rng: np.random.Generator, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """Pointwise linear map over the trailing axis: y = x @ w + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.w = T.param(_glorot(rng, (n_in, n_out), n_in, n_out, dtype))
        self.b = T.param(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class FNN(Module):
    """Fully connected net; hidden activations, linear output layer."""

    def __init__(self, widths: list[int], rng: np.random.Generator,
                 activation: str = "relu", dtype=np.float32):
        if len(widths) < 2:
            raise ValueError("FNN needs at least input and output widths")
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(widths, widths[1:])]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = _activate(layer(x), self.activation)
        return self.layers[-1](x)


def _activate(x: Tensor, tag: str | None) -> Tensor:
    if tag is None or tag == "none":
        return x
    if tag == "relu":
        return T.relu(x)
    if tag == "leaky_relu":
        return T.leaky_relu(x, 0.2)
    raise ValueError(f"unknown activation {tag!r}")


class SpectralConv2d(Module):
    """Linear map on retained low-frequency modes of the real 2D spectrum.

    Equals irfft2(R applied to the retained modes of rfft2(x), all other
    modes zeroed). Retention keeps rows with |frequency| < modes_h (the
    complex weight R is shared between a row frequency and its negative)
    and the first modes_w half-spectrum columns. Implemented as truncated
    DFT matrix contractions, which is much cheaper than full FFTs when few
    modes are kept.
    """

    def __init__(self, c_in: int, c_out: int, modes_h: int, modes_w: int,
                 rng: np.random.Generator, dtype=np.float32):
        if modes_h < 1 or modes_w < 1:
            raise ValueError("mode counts must be positive")
        self.c_in = c_in
        self.c_out = c_out
        self.modes_h = modes_h
        self.modes_w = modes_w
        scale = 1.0 / (c_in * c_out)
        self.r_re = T.param(scale * rng.standard_normal((c_in, c_out, modes_h, modes_w)).astype(dtype))
        self.r_im = T.param(scale * rng.standard_normal((c_in, c_out, modes_h, modes_w)).astype(dtype))
        self._tables: dict = {}

    def _plan(self, h: int, w: int, dtype):
        key = (h, w, dtype)
        plan = self._tables.get(key)
        if plan is None:
            if self.modes_h > h // 2 + 1 or self.modes_w > w // 2 + 1:
                raise ValueError(
                    f"mode counts ({self.modes_h}, {self.modes_w}) exceed retainable "
                    f"modes ({h // 2 + 1}, {w // 2 + 1}) for input ({h}, {w})")
            ml = min(self.modes_h - 1, h - self.modes_h)
            freqs = np.concatenate([np.arange(self.modes_h), np.arange(h - ml, h)])
            m = np.arange(h)[:, None]
            ang = 2.0 * np.pi * m * freqs[None, :] / h
            ch = Tensor(np.cos(ang).astype(dtype))
            sh = Tensor(np.sin(ang).astype(dtype))
            cw_np, sw_np = dft_matrices(w, self.modes_w, dtype)
            cw, sw = Tensor(cw_np), Tensor(sw_np)
            # R row index for each retained row: mirror row h-j shares index j
            rmap = np.concatenate([np.arange(self.modes_h), np.arange(ml, 0, -1)])
            wts = np.full(self.modes_w, 2.0)
            wts[0] = 1.0
            if w % 2 == 0 and self.modes_w == w // 2 + 1:
                wts[-1] = 1.0
            scale = Tensor((wts / (h * w)).astype(dtype))
            plan = (ch, sh, cw, sw, rmap, scale)
            self._tables[key] = plan
        return plan

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"channel mismatch: got {c}, expected {self.c_in}")
        ch, sh, cw, sw, rmap, scale = self._plan(h, w, x.dtype.type)
        z = T.transpose(x, (0, 3, 1, 2))  # (N, C, H, W)
        # forward transform, W axis then H axis (exp(-i t))
        g1r = T.matmul(z, cw)
        g1i = T.neg(T.matmul(z, sw))
        g2r = T.add(T.einsum("nchk,hr->ncrk", g1r, ch), T.einsum("nchk,hr->ncrk", g1i, sh))
        g2i = T.sub(T.einsum("nchk,hr->ncrk", g1i, ch), T.einsum("nchk,hr->ncrk", g1r, sh))
        # complex per-mode channel mixing, weight shared between +/- rows
        rre = T.getitem(self.r_re, (slice(None), slice(None), rmap, slice(None)))
        rim = T.getitem(self.r_im, (slice(None), slice(None), rmap, slice(None)))
        outr = T.sub(T.einsum("nirk,iork->nork", g2r, rre), T.einsum("nirk,iork->nork", g2i, rim))
        outi = T.add(T.einsum("nirk,iork->nork", g2r, rim), T.einsum("nirk,iork->nork", g2i, rre))
        # inverse transform with symmetry column weights and 1/(HW)
        outr = T.mul(outr, scale)
        outi = T.mul(outi, scale)
        yr = T.sub(T.einsum("nork,hr->nohk", outr, ch), T.einsum("nork,hr->nohk", outi, sh))
        yi = T.add(T.einsum("nork,hr->nohk", outr, sh), T.einsum("nork,hr->nohk", outi, ch))
        y = T.sub(T.matmul(yr, T.transpose(cw, (1, 0))), T.matmul(yi, T.transpose(sw, (1, 0))))
        return T.transpose(y, (0, 2, 3, 1))


class FourierLayer2d(Module):
    """sigma(spectral(z) + z W + b) with a pointwise channel-mixing W."""

    def __init__(self, width: int, modes_h: int, modes_w: int,
                 rng: np.random.Generator, activation: str = "relu", dtype=np.float32):
        self.spectral = SpectralConv2d(width, width, modes_h, modes_w, rng, dtype)
        self.w = T.param(_glorot(rng, (width, width), width, width, dtype))
        self.b = T.param(np.zeros(width, dtype=dtype))
        self.activation = activation

    def __call__(self, z: Tensor) -> Tensor:
        y = T.add(T.add(self.spectral(z), T.matmul(z, self.w)), self.b)
        return _activate(y, self.activation)


class UNet2d(Module):
    """Two stride-2 encoder stages, bottleneck, two upsample stages with
    concatenation skips. Preserves (H, W, width); needs H, W divisible by 4.
    """

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float32):
        w = width
        self.enc1 = _conv_init(rng, 3, 3, w, 2 * w, dtype)
        self.enc2 = _conv_init(rng, 3, 3, 2 * w, 4 * w, dtype)
        self.mid = _conv_init(rng, 3, 3, 4 * w, 4 * w, dtype)
        self.dec1 = _conv_init(rng, 3, 3, 6 * w, 2 * w, dtype)
        self.dec2 = _conv_init(rng, 3, 3, 3 * w, w, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"U-Net needs spatial dims divisible by 4, got ({h}, {w})")
        e1 = T.leaky_relu(_conv(x, self.enc1, stride=(2, 2), padding=(1, 1)), 0.2)
        e2 = T.leaky_relu(_conv(e1, self.enc2, stride=(2, 2), padding=(1, 1)), 0.2)
        m = T.leaky_relu(_conv(e2, self.mid, stride=(1, 1), padding=(1, 1)), 0.2)
        d1 = T.concat([T.upsample2x(m), e1], axis=3)
        d1 = T.leaky_relu(_conv(d1, self.dec1, stride=(1, 1), padding=(1, 1)), 0.2)
        d2 = T.concat([T.upsample2x(d1), x], axis=3)
        return T.leaky_relu(_conv(d2, self.dec2, stride=(1, 1), padding=(1, 1)), 0.2)


def _conv_init(rng, kh, kw, cin, cout, dtype):
    fan_in = kh * kw * cin
    fan_out = kh * kw * cout
    w = T.param(_glorot(rng, (kh, kw, cin, cout), fan_in, fan_out, dtype))
    b = T.param(np.zeros(cout, dtype=dtype))
    return (w, b)


def _conv(x, wb, stride, padding):
    return T.conv2d(x, wb[0], wb[1], stride=stride, padding=padding)


class UFourierLayer2d(Module):
    """sigma(spectral(z) + U(z) + z W + b); the additive U-Net branch."""

    def __init__(self, width: int, modes_h: int, modes_w: int,
                 rng: np.random.Generator, unet_width: int | None = None,
                 activation: str = "relu", dtype=np.float32):
        uw = width if unet_width is None else unet_width
        self.spectral = SpectralConv2d(width, width, modes_h, modes_w, rng, dtype)
        if uw == width:
            self.unet_in = None
            self.unet_out = None
        else:
            self.unet_in = Linear(width, uw, rng, bias=False, dtype=dtype)
            self.unet_out = Linear(uw, width, rng, bias=False, dtype=dtype)
        self.unet = UNet2d(uw, rng, dtype)
        self.w = T.param(_glorot(rng, (width, width), width, width, dtype))
        self.b = T.param(np.zeros(width, dtype=dtype))
        self.activation = activation

    def __call__(self, z: Tensor) -> Tensor:
        u = z if self.unet_in is None else self.unet_in(z)
        u = self.unet(u)
        if self.unet_out is not None:
            u = self.unet_out(u)
        y = T.add(T.add(T.add(self.spectral(z), u), T.matmul(z, self.w)), self.b)
        return _activate(y, self.activation)


class Projection(Module):
    """Pointwise two-layer head: width -> hidden (ReLU) -> n_out (linear)."""

    def __init__(self, width: int, rng: np.random.Generator, hidden: int = 128,
                 n_out: int = 1, dtype=np.float32):
        self.fc1 = Linear(width, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, n_out, rng, dtype=dtype)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(z)))


class CNNEncoder(Module):
    """Strided-convolution encoder mapping an input field stack to a vector.

    For the reference 96x200 grid the stage ladder reproduces the published
    shape sequence (96,100) -> (48,50) -> (24,25) -> (12,13) -> (6,7) -> flat.
    Other grids get a generic stride-2 ladder down to a small footprint.
    All activations are leaky ReLU with negative slope 0.2.
    """

    def __init__(self, spatial_shape: tuple, in_channels: int,
                 rng: np.random.Generator, out_dim: int = 512, dtype=np.float32):
        self.spatial_shape = tuple(spatial_shape)
        h, w = self.spatial_shape
        self.stages: list = []

        def stage(cin, cout, stride):
            self.stages.append((_conv_init(rng, 3, 3, cin, cout, dtype), stride))

        if (h, w) == (96, 200):
            stage(in_channels, 32, (1, 2))
            widths = [(32, 64, 2), (64, 64, 1), (64, 64, 2), (64, 64, 1),
                      (64, 128, 2), (128, 128, 1), (128, 256, 2), (256, 256, 1)]
            for cin, cout, s in widths:
                stage(cin, cout, (s, s))
            fh, fw, fc = 6, 7, 256
        else:
            cin, cout = in_channels, 32
            while min(h, w) > 8:
                stage(cin, cout, (2, 2))
                h, w = (h + 1) // 2, (w + 1) // 2
                cin, cout = cout, min(cout * 2, 256)
            fh, fw, fc = h, w, cin
        self.final_conv = _conv_init(rng, fh, fw, fc, out_dim, dtype)
        self.fc1 = Linear(out_dim, 2048, rng, dtype=dtype)
        self.fc2 = Linear(2048, out_dim, rng, dtype=dtype)
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1:3] != self.spatial_shape:
            raise ValueError(
                f"expected spatial dims {self.spatial_shape}, got {x.shape[1:3]}")
        for wb, stride in self.stages:
            x = T.leaky_relu(_conv(x, wb, stride=stride, padding=(1, 1)), 0.2)
        x = T.leaky_relu(_conv(x, self.final_conv, stride=(1, 1), padding=(0, 0)), 0.2)
        x = T.reshape(x, (x.shape[0], self.out_dim))
        x = T.leaky_relu(self.fc1(x), 0.2)
        return self.fc2(x)
