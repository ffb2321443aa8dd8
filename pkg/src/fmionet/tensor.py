"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every tensor wraps a NumPy buffer (float32 or float64). Operations record
backward closures on the output node; ``Tensor.backward`` runs the chain rule
over a topological ordering of the graph. First-order derivatives only.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

ALLOWED_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32

_grad_enabled = True


def _tune_allocator():
    """Keep large heap blocks mapped between allocations.

    Autodiff churns many MB-sized temporaries; with glibc's default mmap
    threshold every one costs fresh zeroed pages, which dominates runtime on
    low-memory-bandwidth hosts. Raising the thresholds makes the heap reuse
    those blocks. Best effort: silently skipped off glibc.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 2 ** 31 - 1)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 2 ** 31 - 1)  # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class GraphFreedError(RuntimeError):
    """Raised when backward is called through an explicitly freed graph."""


class Tensor:
    """N-dimensional array node in the autodiff graph.

    ``requires_grad`` marks leaves that accumulate gradients; interior nodes
    created by ops carry backward closures. ``grad`` is allocated lazily and
    always shape/dtype-matches ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_freed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._freed = False

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    # -- gradient plumbing ---------------------------------------------------
    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def _accumulate(self, g: np.ndarray) -> None:
        self._ensure_grad()
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def free_graph(self) -> None:
        """Sever backward closures reachable from this node."""
        for node in _toposort(self):
            node._backward = None
            node._parents = ()
            node._freed = True

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be scalar. Calling twice without zeroing accumulates.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._freed:
            raise GraphFreedError("backward through a freed graph")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not (parent.requires_grad or parent._backward is not None):
                    continue
                key = id(parent)
                if key in grads:
                    # closures may hand out shared buffers or views; never
                    # accumulate in place
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtypes(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"mixed dtypes {a.dtype.name} vs {b.dtype.name}; cast explicitly")


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    data = a.data + b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    data = a.data - b.data

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    data = a.data * b.data

    def bw(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(data, (a, b), bw)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    data = a.data / b.data

    def bw(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _make(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return ((a, -g),)

    return _make(-a.data, (a,), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise a**exponent for a scalar exponent."""
    data = a.data ** exponent

    def bw(g):
        return ((a, g * exponent * a.data ** (exponent - 1.0)),)

    return _make(data, (a,), bw)


def absolute(a: Tensor) -> Tensor:
    """|a| with sign subgradient (0 at 0)."""
    def bw(g):
        return ((a, g * np.sign(a.data)),)

    return _make(np.abs(a.data), (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bw(g):
        return ((a, g * (0.5 / np.maximum(data, np.finfo(data.dtype).tiny))),)

    return _make(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def bw(g):
        return ((a, g * mask),)

    return _make(data, (a,), bw)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, a.data * slope)

    def bw(g):
        return ((a, np.where(mask, g, g * slope)),)

    return _make(data, (a,), bw)


# -- shape ops -----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return _make(data, (a,), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def bw(g):
        return ((a, np.transpose(g, inv)),)

    return _make(data, (a,), bw)


def _index_is_plain(idx) -> bool:
    """True when the index selects disjoint cells (no integer arrays)."""
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    plain = _index_is_plain(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if plain:
            full[idx] = g
        else:
            np.add.at(full, idx, g)  # fancy indices may repeat targets
        return ((a, full),)

    return _make(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError("concat requires uniform dtype")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        sl = [slice(None)] * g.ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return tuple(out)

    return _make(data, tuple(tensors), bw)


def pad(a: Tensor, widths: Sequence[tuple]) -> Tensor:
    """Zero-pad; ``widths`` is the per-axis (before, after) list."""
    widths = tuple(tuple(w) for w in widths)
    data = np.pad(a.data, widths)

    def bw(g):
        sl = tuple(slice(b, g.shape[i] - e if e else None) for i, (b, e) in enumerate(widths))
        return ((a, g[sl]),)

    return _make(data, (a,), bw)


# -- reductions ------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return _make(data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in ax]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- contractions ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b)
    # stacked batches against a plain matrix flatten to one GEMM
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        data = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        data = np.matmul(a.data, b.data)

    def bw(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g2
            return ((a, ga), (b, gb))
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _make(data, (a, b), bw)


_einsum_paths: dict = {}


def _einsum_cached(spec, a, b):
    key = (spec, a.shape, b.shape)
    path = _einsum_paths.get(key)
    if path is None:
        path = np.einsum_path(spec, a, b, optimize="optimal")[0]
        _einsum_paths[key] = path
    return np.einsum(spec, a, b, optimize=path)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with autodiff.

    Every index of each operand must appear in the output or in the other
    operand (no diagonal/implicit-broadcast patterns).
    """
    _check_dtypes(a, b)
    lhs, sout = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s in (sa, sb, sout):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index within one operand unsupported: {spec}")
    if not set(sa) <= set(sout) | set(sb) or not set(sb) <= set(sout) | set(sa):
        raise ValueError(f"einsum pattern not VJP-safe: {spec}")
    data = _einsum_cached(spec, a.data, b.data)

    def bw(g):
        ga = _einsum_cached(f"{sout},{sb}->{sa}", g, b.data)
        gb = _einsum_cached(f"{sa},{sout}->{sb}", a.data, g)
        return ((a, ga), (b, gb))

    return _make(data, (a, b), bw)


# -- spatial ops (channels-last NHWC) ----------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2D convolution, channels-last. ``w`` has shape (kh, kw, c_in, c_out).

    Computed as one GEMM per kernel offset on strided input slices, which
    keeps the inner copies 4D-friendly (much faster than explicit im2col
    window gathers on this backend).
    """
    _check_dtypes(x, w)
    kh, kw, cin, cout = w.shape
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NHWC input, got shape {x.shape}")
    if x.shape[3] != cin:
        raise ValueError(f"channel mismatch: input has {x.shape[3]}, kernel expects {cin}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if x.shape[1] + 2 * ph < kh or x.shape[2] + 2 * pw < kw:
        raise ValueError("spatial dims smaller than kernel extent after padding")

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    n, hp, wp, _ = xp.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    def shifted(buf, a, bb):
        return buf[:, a:a + (ho - 1) * sh + 1:sh, bb:bb + (wo - 1) * sw + 1:sw, :]

    def build_col(buf):
        # patch matrix assembled from per-offset 4D slices: the copies stay
        # stride-friendly and the whole conv becomes a single GEMM
        col = np.empty((n, ho, wo, kh * kw, cin), dtype=buf.dtype)
        for a in range(kh):
            for bb in range(kw):
                col[:, :, :, a * kw + bb, :] = shifted(buf, a, bb)
        return col.reshape(n * ho * wo, kh * kw * cin)

    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (build_col(xp) @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        _check_dtypes(x, b)
        out = out + b.data

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(-1, cout)
        xp2 = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
        gw = (build_col(xp2).T @ g2).reshape(w.shape)
        gcol = (g2 @ wmat.T).reshape(n, ho, wo, kh * kw, cin)
        gxp = np.zeros_like(xp2)
        for a in range(kh):
            for bb in range(kw):
                shifted(gxp, a, bb)[...] += gcol[:, :, :, a * kw + bb, :]
        gx = gxp[:, ph:hp - ph if ph else None, pw:wp - pw if pw else None] \
            if (ph or pw) else gxp
        grads = [(x, gx), (w, gw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 1, 2))))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an NHWC tensor."""
    if x.ndim != 4:
        raise ValueError(f"upsample2x expects NHWC input, got shape {x.shape}")
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bw(g):
        n, h2, w2, c = g.shape
        return ((x, g.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))),)

    return _make(data, (x,), bw)


# -- constructors -------------------------------------------------------------------

def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def param(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
