"""Strided 2-D convolution and its adjoint (transposed convolution).

Layout is N,C,H,W for activations, O,C,kh,kw for conv2d weights and C,O,kh,kw
for conv_transpose2d weights. conv2d is a cross-correlation (no kernel flip)
and only zero padding is supported.

Both directions are written with two primitives: ``_windows`` gathers strided
kh x kw patches (im2col, as a view) and ``_fold`` scatter-adds patch
contributions back onto an image (col2im). The forward pass of one operator
is the input-gradient of the other.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryError, ShapeError
from .tensor import Tensor, _result

__all__ = ["conv2d", "conv_transpose2d", "conv2d_output_size", "conv_transpose2d_output_size"]


def conv2d_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose2d_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _check_args(stride: int, padding: int) -> None:
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(padding, (int, np.integer)) or padding < 0:
        raise ValueError(f"padding must be a non-negative int, got {padding!r}")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, C, Ho, Wo, kh, kw) over a padded input."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _fold(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Scatter-add cols (C, kh, kw, N, Ho, Wo) into an (N, C, hp, wp) image."""
    c, kh, kw, n, ho, wo = cols.shape
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hspan:stride, j:j + wspan:stride] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _crop(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.ascontiguousarray(x[:, :, p:x.shape[2] - p, p:x.shape[3] - p])


def _check_bias(bias: Optional[Tensor], channels: int, op: str) -> None:
    if bias is not None and bias.shape != (channels,):
        raise ShapeError(f"{op}: bias shape {bias.shape} does not match {channels} output channels")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlate ``x`` [N,C,H,W] with ``weight`` [O,C,kh,kw]."""
    _check_args(stride, padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: padded input {h + 2 * padding}x{w + 2 * padding} smaller than kernel {kh}x{kw}"
        )
    _check_bias(bias, o, "conv2d")
    xp = _pad(x.data, padding)
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        gx = gw = gb = None
        if needs[0]:
            cols = np.tensordot(weight.data, g, axes=([0], [1]))  # C,kh,kw,N,Ho,Wo
            gx = _crop(_fold(cols, xp.shape[2], xp.shape[3], stride), padding)
        if needs[1]:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,kh,kw
        if bias is not None and needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)[: len(parents)]

    assert out.shape == (n, o, ho, wo)
    return _result("conv2d", out, parents, bw)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Fractionally strided convolution of ``x`` [N,C,H,W] with ``weight`` [C,O,kh,kw].

    This is the adjoint of :func:`conv2d` with the same stride and padding;
    output extent is (H - 1) * stride - 2 * padding + kh.
    """
    _check_args(stride, padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    n, c, h, w = x.shape
    wc, o, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels but weight expects {wc}")
    ho = conv_transpose2d_output_size(h, kh, stride, padding)
    wo = conv_transpose2d_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise GeometryError(
            f"conv_transpose2d: output extent {ho}x{wo} is not positive "
            f"(input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding})"
        )
    _check_bias(bias, o, "conv_transpose2d")
    hp, wp = ho + 2 * padding, wo + 2 * padding
    cols = np.tensordot(weight.data, x.data, axes=([0], [1]))  # O,kh,kw,N,H,W
    out = _crop(_fold(cols, hp, wp, stride), padding)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = out.astype(x.dtype, copy=False)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        gx = gw = gb = None
        win = _windows(_pad(g, padding), kh, kw, stride)  # N,O,H,W,kh,kw
        if needs[0]:
            gx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx)
        if needs[1]:
            gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))  # C,O,kh,kw
        if bias is not None and needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)[: len(parents)]

    return _result("conv_transpose2d", out, parents, bw)
