"""Dense float64 tensor arithmetic with reverse-mode gradients.

Everything in this module is 64-bit and CPU-only. Convolutions use the
cross-correlation convention (no kernel flip) with stride 1. Each
differentiable operation builds a node holding a vector-Jacobian product
closure; `Tensor.backward()` walks the recorded graph in reverse
topological order. When no input of an op requires gradients the op
returns a detached tensor and caches nothing, so inference runs without
graph overhead.

Internally the convolution/pooling kernels work on channels-last arrays
(spatial axes first, channel axis last) because the per-tap GEMM
decomposition is fastest in that layout. The public `conv2d`, `conv3d`
and `maxpool2` wrappers accept the channels-first shapes used elsewhere
in the package and transpose at the boundary.
"""

from __future__ import annotations

import zlib
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientDataError, NumericError, ShapeError

Array = np.ndarray


# ---------------------------------------------------------------------------
# Seeded random numbers


class Rng:
    """Deterministic random stream backed by numpy's PCG64 generator.

    PCG64 is a permuted congruential generator with a documented, frozen
    bit stream: two instances built from the same seed produce identical
    draws on every platform. Independent substreams are derived with
    `child`, which feeds the parent seed plus the key path into a
    SeedSequence spawn key, so substream layout is stable too.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_spawn_key))
        )

    def child(self, *keys: int | str) -> "Rng":
        """Derive an independent, reproducible substream."""
        mapped = tuple(
            zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys
        )
        return Rng(self.seed, self._spawn_key + mapped)

    def random(self, shape=None) -> Array:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=None) -> Array:
        return self._gen.uniform(low, high, shape)

    def normal(self, mean: float = 0.0, sd: float = 1.0, shape=None) -> Array:
        return self._gen.normal(mean, sd, shape)

    def integers(self, low: int, high: int, shape=None) -> Array:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> Array:
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# Autograd tensor


class Tensor:
    """A float64 array plus an optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple["Tensor", ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable input."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # intermediate grads are not needed once consumed
            node.grad = None

    # convenience arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes numpy broadcast when producing it."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def ensure_finite(name: str, arr: Array) -> None:
    """Raise NumericError if `arr` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# Elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _node(out, (a, b), vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _node(out, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(old),)

    return _node(out, (x,), vjp)


def flatten(x) -> Tensor:
    """Collapse a tensor to one dimension."""
    return reshape(x, (-1,))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _node(out, (x,), vjp)


def take_step(x, t: int) -> Tensor:
    """Select time step `t` from axis 1 of a (batch, time, ...) tensor."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[:, t])
    shape = x.data.shape

    def vjp(g):
        dx = np.zeros(shape)
        dx[:, t] = g
        return (dx,)

    return _node(out, (x,), vjp)


def stack_steps(steps: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack per-step tensors along a new time axis."""
    steps = [as_tensor(s) for s in steps]
    out = np.stack([s.data for s in steps], axis=axis)

    def vjp(g):
        return tuple(np.ascontiguousarray(a) for a in np.moveaxis(g, axis, 0))

    return _node(out, tuple(steps), vjp)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along their last axis."""
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(a) for a in np.split(g, splits, axis=-1))

    return _node(out, tuple(parts), vjp)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Select [start, stop) along the last axis."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[..., start:stop])
    shape = x.data.shape

    def vjp(g):
        dx = np.zeros(shape)
        dx[..., start:stop] = g
        return (dx,)

    return _node(out, (x,), vjp)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())
    shape = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (x,), vjp)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean())
    shape = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _node(out, (x,), vjp)


def dense(x, w, b) -> Tensor:
    """Affine map on the last axis: out[..., j] = sum_i x[..., i] w[i, j] + b[j]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
        raise ShapeError("dense expects w of shape (in, out) and matching bias")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"dense input width {x.shape[-1]} != weight rows {w.shape[0]}"
        )
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = (x2 @ w.data + b.data).reshape(*lead, w.shape[1])

    def vjp(g):
        g2 = g.reshape(-1, w.shape[1])
        dx = (g2 @ w.data.T).reshape(x.data.shape)
        dw = x2.T @ g2
        db = g2.sum(axis=0)
        return dx, dw, db

    return _node(out, (x, w, b), vjp)


def dropout(x, rate: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def vjp(g):
        return (g * keep,)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# Convolution and pooling (channels-last cores)


def _pad_spatial(x: Array, pads: Sequence[int]) -> Array:
    if not any(pads):
        return x
    width = [(0, 0)] + [(p, p) for p in pads] + [(0, 0)]
    return np.pad(x, width)


def _conv_core(x, w, b, pads: tuple[int, ...], ksizes: tuple[int, ...]) -> Tensor:
    """Shared n-dimensional stride-1 cross-correlation.

    x: (N, *spatial, C) tensor; w: (*ksizes, C, F); b: (F,).
    Decomposes the kernel into taps; each tap contributes one GEMM of the
    shifted input slab against a (C, F) weight slice. The shifted slabs
    are cached for the weight/input VJPs when gradients are required.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xd, wd, bd = x.data, w.data, b.data
    nd = len(ksizes)
    if wd.shape[:nd] != ksizes or wd.shape[nd] != xd.shape[-1]:
        raise ShapeError(
            f"kernel shape {wd.shape} incompatible with input {xd.shape}"
        )
    if bd.shape != (wd.shape[-1],):
        raise ShapeError("bias length must equal output channel count")
    spatial = xd.shape[1 : 1 + nd]
    outs = tuple(
        spatial[i] + 2 * pads[i] - ksizes[i] + 1 for i in range(nd)
    )
    if any(o < 1 for o in outs):
        raise ShapeError(f"kernel {ksizes} larger than padded input {spatial}")

    N = xd.shape[0]
    C = xd.shape[-1]
    F = wd.shape[-1]
    xp = _pad_spatial(xd, pads)
    rows = N * int(np.prod(outs))
    track = x.requires_grad or w.requires_grad or b.requires_grad

    y2 = np.zeros((rows, F))
    taps: list[Array] = []
    for tap in np.ndindex(*ksizes):
        sl = (slice(None),) + tuple(
            slice(tap[i], tap[i] + outs[i]) for i in range(nd)
        ) + (slice(None),)
        t2 = xp[sl].reshape(rows, C)
        y2 += t2 @ wd[tap]
        if track:
            taps.append(t2)
    y2 += bd
    out = y2.reshape(N, *outs, F)

    if not track:
        return Tensor(out)

    def vjp(g):
        g2 = g.reshape(rows, F)
        db = g2.sum(axis=0)
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp) if x.requires_grad else None
        for i, tap in enumerate(np.ndindex(*ksizes)):
            dw[tap] = taps[i].T @ g2
            if dxp is not None:
                sl = (slice(None),) + tuple(
                    slice(tap[j], tap[j] + outs[j]) for j in range(nd)
                ) + (slice(None),)
                dxp[sl] += (g2 @ wd[tap].T).reshape(N, *outs, C)
        dx = None
        if dxp is not None:
            crop = (slice(None),) + tuple(
                slice(pads[i], pads[i] + spatial[i]) for i in range(nd)
            ) + (slice(None),)
            dx = np.ascontiguousarray(dxp[crop])
        return dx, dw, db

    return _node(out, (x, w, b), vjp)


def conv2d_nhwc(x, w, b, padding: str = "same") -> Tensor:
    """2-D convolution on (N, H, W, C) input with (kh, kw, C, F) kernels."""
    w = as_tensor(w)
    kh, kw = int(w.shape[0]), int(w.shape[1])
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("same-padding requires odd kernel extents")
        pads = (kh // 2, kw // 2)
    elif padding == "valid":
        pads = (0, 0)
    else:
        raise ShapeError(f"unknown padding mode {padding!r}")
    return _conv_core(x, w, b, pads, (kh, kw))


def conv3d_nthwc(x, w, b) -> Tensor:
    """3-D same-padded convolution on (N, T, H, W, C) input with (kt, kh, kw, C, F) kernels."""
    w = as_tensor(w)
    kt, kh, kw = int(w.shape[0]), int(w.shape[1]), int(w.shape[2])
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("same-padding requires odd kernel extents")
    return _conv_core(x, w, b, (kt // 2, kh // 2, kw // 2), (kt, kh, kw))


def maxpool2_nhwc(x) -> Tensor:
    """2x2 stride-2 max pooling on (N, H, W, C); ragged edges keep their max."""
    x = as_tensor(x)
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError("maxpool2_nhwc expects a 4-D tensor")
    N, H, W, C = xd.shape
    Ho, Wo = (H + 1) // 2, (W + 1) // 2
    xp = xd
    if H % 2 or W % 2:
        xp = np.full((N, 2 * Ho, 2 * Wo, C), -np.inf)
        xp[:, :H, :W, :] = xd
    win = np.ascontiguousarray(
        xp.reshape(N, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(N, Ho, Wo, 4, C)
    # argmax over the 4 window cells in row-major order -> first-index ties
    am = win.argmax(axis=3)
    out = np.take_along_axis(win, am[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    if not x.requires_grad:
        return Tensor(out)

    def vjp(g):
        dxp = np.zeros((N, 2 * Ho, 2 * Wo, C))
        n, ho, wo, c = np.indices(am.shape, sparse=True)
        dxp[n, 2 * ho + am // 2, 2 * wo + am % 2, c] = g
        return (np.ascontiguousarray(dxp[:, :H, :W, :]),)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# Channels-first public wrappers


def _promote(x, want: int) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == want - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == want:
        return x, False
    raise ShapeError(f"expected {want - 1}- or {want}-D input, got {x.ndim}-D")


def conv2d(x, kernels, bias, padding: str = "same") -> Tensor:
    """Convolve (C_in, H, W) or (N, C_in, H, W) input with (C_out, C_in, kh, kw) kernels."""
    x, squeezed = _promote(x, 4)
    kernels = as_tensor(kernels)
    if kernels.ndim != 4:
        raise ShapeError("conv2d kernels must be 4-D (C_out, C_in, kh, kw)")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} != kernel channels {kernels.shape[1]}"
        )
    y = conv2d_nhwc(
        transpose(x, (0, 2, 3, 1)),
        transpose(kernels, (2, 3, 1, 0)),
        bias,
        padding,
    )
    y = transpose(y, (0, 3, 1, 2))
    return reshape(y, y.shape[1:]) if squeezed else y


def conv3d(x, kernels, bias, padding: str = "same") -> Tensor:
    """Convolve (C_in, T, H, W) or (N, C_in, T, H, W) input with (C_out, C_in, kt, kh, kw) kernels."""
    if padding != "same":
        raise ShapeError("conv3d supports same-padding only")
    x, squeezed = _promote(x, 5)
    kernels = as_tensor(kernels)
    if kernels.ndim != 5:
        raise ShapeError("conv3d kernels must be 5-D (C_out, C_in, kt, kh, kw)")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} != kernel channels {kernels.shape[1]}"
        )
    y = conv3d_nthwc(
        transpose(x, (0, 2, 3, 4, 1)),
        transpose(kernels, (2, 3, 4, 1, 0)),
        bias,
    )
    y = transpose(y, (0, 4, 1, 2, 3))
    return reshape(y, y.shape[1:]) if squeezed else y


def maxpool2(x) -> Tensor:
    """2x2 stride-2 max pooling on (C, H, W) or (N, C, H, W) input."""
    x, squeezed = _promote(x, 4)
    y = maxpool2_nhwc(transpose(x, (0, 2, 3, 1)))
    y = transpose(y, (0, 3, 1, 2))
    return reshape(y, y.shape[1:]) if squeezed else y


# ---------------------------------------------------------------------------
# Real FFT


def rfft(signal) -> Array:
    """Real-input DFT returning the N//2+1 nonnegative-frequency coefficients."""
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError("rfft expects a 1-D signal")
    if arr.size == 0:
        raise InsufficientDataError("rfft of an empty signal")
    if arr.size < 2:
        raise InsufficientDataError("rfft needs at least 2 samples")
    return np.fft.rfft(arr)


def irfft(coefficients, n: int) -> Array:
    """Inverse of `rfft` for a known output length `n`."""
    coef = np.asarray(coefficients, dtype=np.complex128)
    if coef.ndim != 1:
        raise ShapeError("irfft expects a 1-D coefficient vector")
    if n < 2:
        raise InsufficientDataError("irfft needs output length >= 2")
    if coef.size != n // 2 + 1:
        raise ShapeError(
            f"expected {n // 2 + 1} coefficients for length {n}, got {coef.size}"
        )
    return np.fft.irfft(coef, n)


# ---------------------------------------------------------------------------
# Gradient verification


def numeric_gradient(loss_fn: Callable[[], float], arr: Array, h: float = 1e-5) -> Array:
    """Central finite differences of `loss_fn` with respect to `arr` in place."""
    grad = np.empty_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_error(analytic: Array, numeric: Array) -> float:
    """Max elementwise error, relative where gradients are larger than one."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Compare analytic gradients of a scalar loss against finite differences.

    `build_loss` must rebuild the forward graph from the live `params`
    tensors on every call. Returns the max error per parameter name.
    """
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    def scalar() -> float:
        return float(build_loss().data)

    errors = {}
    for name, p in params.items():
        numeric = numeric_gradient(scalar, p.data, h)
        errors[name] = gradient_error(analytic[name], numeric)
    return errors
