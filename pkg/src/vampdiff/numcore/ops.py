"""Differentiable operations over :class:`~vampdiff.numcore.tensor.Tensor`.

Conventions fixed here:
  * conv1d uses the cross-correlation convention (no kernel flip);
  * max/min reductions route the gradient to the first attaining index;
  * std uses the population convention and returns zero gradient where
    the standard deviation is exactly zero;
  * broadcasting follows numpy over leading axes and size-1 axes.
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    DimensionError,
    DomainError,
    Tensor,
    accumulate,
    make_node,
)

# ---------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backward():
            accumulate(a, out.grad)
            accumulate(b, out.grad)
        return backward
    return make_node(a.data + b.data, (a, b), factory)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backward():
            accumulate(a, out.grad)
            accumulate(b, -out.grad)
        return backward
    return make_node(a.data - b.data, (a, b), factory)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backward():
            accumulate(a, out.grad * b.data)
            accumulate(b, out.grad * a.data)
        return backward
    return make_node(a.data * b.data, (a, b), factory)


def negate(a: Tensor) -> Tensor:
    def factory(out):
        def backward():
            accumulate(a, -out.grad)
        return backward
    return make_node(-a.data, (a,), factory)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def factory(out):
        def backward():
            accumulate(a, out.grad * c)
        return backward
    return make_node(a.data * c, (a,), factory)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    val = a.data * sig

    def factory(out):
        def backward():
            accumulate(a, out.grad * (sig * (1.0 + a.data * (1.0 - sig))))
        return backward
    return make_node(val, (a,), factory)


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)

    def factory(out):
        def backward():
            accumulate(a, out.grad * val)
        return backward
    return make_node(val, (a,), factory)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")

    def factory(out):
        def backward():
            accumulate(a, out.grad / a.data)
        return backward
    return make_node(np.log(a.data), (a,), factory)


def log1p(a: Tensor) -> Tensor:
    if np.any(a.data < -1):
        raise DomainError("log1p requires input >= -1")

    def factory(out):
        def backward():
            accumulate(a, out.grad / (1.0 + a.data))
        return backward
    return make_node(np.log1p(a.data), (a,), factory)


def square(a: Tensor) -> Tensor:
    def factory(out):
        def backward():
            accumulate(a, out.grad * (2.0 * a.data))
        return backward
    return make_node(a.data * a.data, (a,), factory)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt requires nonnegative input")
    val = np.sqrt(a.data)

    def factory(out):
        def backward():
            accumulate(a, out.grad * (0.5 / val))
        return backward
    return make_node(val, (a,), factory)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes through the interior only."""
    mask = (a.data >= lo) & (a.data <= hi)

    def factory(out):
        def backward():
            accumulate(a, out.grad * mask)
        return backward
    return make_node(np.clip(a.data, lo, hi), (a,), factory)


def huber(a: Tensor) -> Tensor:
    """Elementwise SmoothL1: 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise."""
    absa = np.abs(a.data)
    val = np.where(absa < 1.0, 0.5 * a.data * a.data, absa - 0.5)

    def factory(out):
        def backward():
            accumulate(a, out.grad * np.clip(a.data, -1.0, 1.0))
        return backward
    return make_node(val, (a,), factory)


# ---------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def factory(out):
        def backward():
            accumulate(a, out.grad.reshape(a.data.shape))
        return backward
    return make_node(a.data.reshape(shape), (a,), factory)


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) % ndim for ax in axes)
    if len(set(axes)) != len(axes):
        raise DimensionError(f"duplicate reduction axes {axes}")
    for ax in axes:
        if not 0 <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for ndim {ndim}")
    return axes


def _check_nonempty(a: Tensor, axes):
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    if count == 0:
        raise DomainError("empty reduction")
    return count


def rsum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axes, a.ndim)
    _check_nonempty(a, axes)

    def factory(out):
        def backward():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            accumulate(a, np.broadcast_to(g, a.data.shape))
        return backward
    return make_node(a.data.sum(axis=axes, keepdims=keepdims), (a,), factory)


def rmean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axes, a.ndim)
    count = _check_nonempty(a, axes)

    def factory(out):
        def backward():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            accumulate(a, np.broadcast_to(g, a.data.shape) / count)
        return backward
    return make_node(a.data.mean(axis=axes, keepdims=keepdims), (a,), factory)


def _extreme(a: Tensor, axes, keepdims: bool, mode: str) -> Tensor:
    axes = _normalize_axes(axes, a.ndim)
    _check_nonempty(a, axes)
    kept = tuple(i for i in range(a.ndim) if i not in axes)
    perm = kept + axes
    moved = np.transpose(a.data, perm)
    outer_shape = moved.shape[: len(kept)]
    flat = moved.reshape(outer_shape + (-1,))
    idx = np.argmax(flat, axis=-1) if mode == "max" else np.argmin(flat, axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def factory(out):
        def backward():
            g = out.grad
            if keepdims:
                g = g.reshape(outer_shape)
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
            gmoved = gflat.reshape(moved.shape)
            accumulate(a, np.transpose(gmoved, np.argsort(perm)))
        return backward

    out_data = vals
    if keepdims:
        out_data = np.expand_dims(vals, tuple(range(len(kept), a.ndim)))
        out_data = np.transpose(out_data, np.argsort(perm))
    return make_node(out_data, (a,), factory)


def rmax(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axes, keepdims, "max")


def rmin(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axes, keepdims, "min")


def rstd(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation; zero gradient where std == 0."""
    axes = _normalize_axes(axes, a.ndim)
    count = _check_nonempty(a, axes)
    mean = a.data.mean(axis=axes, keepdims=True)
    std_kd = np.sqrt(((a.data - mean) ** 2).mean(axis=axes, keepdims=True))

    def factory(out):
        def backward():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            safe = np.where(std_kd > 0, std_kd, 1.0)
            grad = np.where(std_kd > 0, (a.data - mean) / (count * safe), 0.0)
            accumulate(a, g * grad)
        return backward

    data = std_kd if keepdims else std_kd.squeeze(axis=axes)
    return make_node(data, (a,), factory)


_REDUCERS = {"sum": rsum, "mean": rmean, "max": rmax, "min": rmin, "std": rstd}


def reduce(op: str, a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    try:
        fn = _REDUCERS[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}") from None
    return fn(a, axes, keepdims)


# ---------------------------------------------------------------------
# linear algebra / convolution
# ---------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[B,N] @ weight[M,N]^T + bias[M]."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(
            f"linear expects 2-D input/weight and 1-D bias, got "
            f"{x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[1] or weight.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"linear shape mismatch: input {x.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )

    def factory(out):
        def backward():
            g = out.grad
            accumulate(x, g @ weight.data)
            accumulate(weight, g.T @ x.data)
            accumulate(bias, g.sum(axis=0))
        return backward
    return make_node(x.data @ weight.data.T + bias.data, (x, weight, bias), factory)


def conv1d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of x[B,Cin,L] with kernel[Cout,Cin,K] -> [B,Cout,L']."""
    if x.ndim != 3 or kernel.ndim != 3 or bias.ndim != 1:
        raise DimensionError(
            f"conv1d expects 3-D input/kernel and 1-D bias, got "
            f"{x.shape}, {kernel.shape}, {bias.shape}"
        )
    B, cin, L = x.shape
    cout, cin_k, K = kernel.shape
    if cin != cin_k:
        raise DimensionError(
            f"conv1d channel mismatch: input Cin={cin}, kernel Cin={cin_k}"
        )
    if bias.shape[0] != cout:
        raise DimensionError(
            f"conv1d bias length {bias.shape[0]} != Cout {cout}"
        )
    if K < 1 or stride < 1 or dilation < 1:
        raise DimensionError("K, stride and dilation must be >= 1")
    span = dilation * (K - 1) + 1
    if L + 2 * padding < span:
        raise DimensionError(
            f"conv1d receptive span {span} exceeds padded length {L + 2 * padding}"
        )
    L_out = (L + 2 * padding - span) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    idx = np.arange(L_out)[:, None] * stride + np.arange(K)[None, :] * dilation
    windows = xp[:, :, idx]  # [B, Cin, L_out, K]
    # contract (Cin, K) against the kernel via BLAS: [B, L_out, Cin*K] @
    # [Cin*K, Cout] -> [B, L_out, Cout]
    w2 = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        B, L_out, cin * K)
    k2 = kernel.data.reshape(cout, cin * K)
    val = (w2 @ k2.T).transpose(0, 2, 1) + bias.data[None, :, None]

    def factory(out):
        def backward():
            g = out.grad  # [B, Cout, L_out]
            g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(
                B * L_out, cout)
            accumulate(kernel,
                       (g2.T @ w2.reshape(B * L_out, cin * K)).reshape(
                           cout, cin, K))
            accumulate(bias, g.sum(axis=(0, 2)))
            if x.requires_grad:
                contrib = (g2 @ k2).reshape(B, L_out, cin, K).transpose(
                    0, 2, 1, 3)  # [B, Cin, L_out, K]
                gxp = np.zeros((B, cin, L + 2 * padding))
                for k in range(K):
                    start = k * dilation
                    gxp[:, :, start:start + (L_out - 1) * stride + 1:stride] \
                        += contrib[:, :, :, k]
                gx = gxp[:, :, padding:padding + L] if padding else gxp
                accumulate(x, gx)
        return backward
    return make_node(val, (x, kernel, bias), factory)


def groupnorm(
    x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Per-(batch, group) normalization with affine scale/shift."""
    if x.ndim != 3:
        raise DimensionError(f"groupnorm expects [B,C,L], got {x.shape}")
    B, C, L = x.shape
    if C % groups != 0:
        raise DimensionError(f"channels {C} not divisible by groups {groups}")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError("gamma/beta must have shape [C]")
    grouped = reshape(x, (B, groups, (C // groups) * L))
    mean = rmean(grouped, axes=2, keepdims=True)
    centered = sub(grouped, mean)
    var = rmean(square(centered), axes=2, keepdims=True)
    inv = exp(scale(log(add(var, Tensor(np.full_like(var.data, eps)))), -0.5))
    normed = reshape(mul(centered, inv), (B, C, L))
    g = reshape(gamma, (1, C, 1))
    b = reshape(beta, (1, C, 1))
    return add(mul(normed, g), b)


def rdft(x: Tensor) -> tuple[Tensor, Tensor]:
    """Real DFT of x[..., L] -> (real, imag), each [..., floor(L/2)+1].

    X_f = sum_n x_n exp(-2*pi*i*f*n/L); backward is the adjoint map.
    """
    L = x.shape[-1]
    if L < 2:
        raise DimensionError("rdft requires length >= 2")
    spec = np.fft.rfft(x.data, axis=-1)

    def adjoint(gr, gi):
        c = gr + 1j * gi
        padded = np.zeros(x.data.shape[:-1] + (L,), dtype=complex)
        padded[..., : c.shape[-1]] = c
        return np.real(L * np.fft.ifft(padded, axis=-1))

    def factory_re(out):
        def backward():
            accumulate(x, adjoint(out.grad, np.zeros_like(out.grad)))
        return backward

    def factory_im(out):
        def backward():
            accumulate(x, adjoint(np.zeros_like(out.grad), out.grad))
        return backward

    re = make_node(np.real(spec), (x,), factory_re)
    im = make_node(np.imag(spec), (x,), factory_im)
    return re, im


def resample_linear(x: Tensor, t_out: int) -> Tensor:
    """Endpoint-aligned linear resampling of x[B,C,T] to [B,C,t_out]."""
    if x.ndim != 3:
        raise DimensionError(f"resample_linear expects [B,C,T], got {x.shape}")
    t_out = int(t_out)
    if t_out < 1:
        raise DimensionError("t_out must be >= 1")
    T = x.shape[2]
    if t_out == T:
        def factory_id(out):
            def backward():
                accumulate(x, out.grad)
            return backward
        return make_node(x.data.copy(), (x,), factory_id)

    if t_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(t_out) * ((T - 1) / (t_out - 1))
    i0 = np.floor(pos).astype(int)
    i0 = np.minimum(i0, T - 1)
    i1 = np.minimum(i0 + 1, T - 1)
    w = pos - i0
    val = x.data[:, :, i0] * (1.0 - w) + x.data[:, :, i1] * w

    def factory(out):
        def backward():
            g = out.grad
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), slice(None), i0), g * (1.0 - w))
            np.add.at(gx, (slice(None), slice(None), i1), g * w)
            accumulate(x, gx)
        return backward
    return make_node(val, (x,), factory)


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sub": sub,
    "silu": silu,
    "exp": exp,
    "log1p": log1p,
    "square": square,
    "sqrt": sqrt,
    "negate": negate,
    "scale": scale,
}


def elementwise(op: str, *args):
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)
