"""Convolution, pooling and layer ops built on :class:`Tensor`.

Convolutions use an im2col layout: every output pixel becomes one row of a
``(B*H'*W', Cin*kH*kW)`` matrix so the heavy lifting is a single matmul.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, matmul


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_shape(h: int, w: int, kh: int, kw: int, stride=1, padding=0) -> tuple[int, int]:
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride, padding) -> tuple[np.ndarray, int, int]:
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(d: np.ndarray, x_shape, kh: int, kw: int, ho: int, wo: int, stride, padding) -> np.ndarray:
    """Scatter-add ``d`` of layout (kH, kW, Cin, B, H', W') back onto the padded input grid."""
    b, c, h, w = x_shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dx = np.zeros((c, b, h + 2 * ph, w + 2 * pw), dtype=d.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += d[i, j]
    return dx[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3)


def _is_pointwise(w_shape, stride, padding) -> bool:
    return w_shape[2:] == (1, 1) and _pair(stride) == (1, 1) and _pair(padding) == (0, 0)


def _conv_forward(x: np.ndarray, w: np.ndarray, stride, padding):
    cout, cin, kh, kw = w.shape
    if _is_pointwise(w.shape, stride, padding):
        b, _, h, wd = x.shape
        return (w.reshape(cout, cin) @ x.reshape(b, cin, h * wd)).reshape(b, cout, h, wd), None
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    out = cols @ w.reshape(cout, -1).T
    return out.reshape(x.shape[0], ho, wo, cout).transpose(0, 3, 1, 2), cols


def _conv_grad_input(g: np.ndarray, w: np.ndarray, x_shape, stride, padding) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    b, _, ho, wo = g.shape
    if _is_pointwise(w.shape, stride, padding):
        return (w.reshape(cout, cin).T @ g.reshape(b, cout, ho * wo)).reshape(x_shape)
    wt = w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    d = wt @ g.transpose(1, 0, 2, 3).reshape(cout, b * ho * wo)
    return _col2im(d.reshape(kh, kw, cin, b, ho, wo), x_shape, kh, kw, ho, wo, stride, padding)


def _conv_grad_weight(cols: np.ndarray | None, g: np.ndarray, w_shape, x: np.ndarray | None = None) -> np.ndarray:
    cout = w_shape[0]
    if cols is None:
        b, _, h, wd = g.shape
        gw = np.matmul(g.reshape(b, cout, h * wd), x.reshape(b, w_shape[1], h * wd).transpose(0, 2, 1))
        return gw.sum(axis=0).reshape(w_shape)
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
    return (g2.T @ cols).reshape(w_shape)


def _check_conv(x_shape, w_shape, stride, padding, name="conv2d"):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"{name} expects 4-d input and kernel, got {x_shape} and {w_shape}")
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ShapeError(f"{name} stride must be positive, got {(sh, sw)}")
    _, _, kh, kw = w_shape
    h, w = x_shape[2:]
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(
            f"{name}: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation. ``x``: (B, Cin, H, W), ``weight``: (Cout, Cin, kH, kW)."""
    _check_conv(x.shape, weight.shape, stride, padding)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    out, cols = _conv_forward(x.data, weight.data, stride, padding)
    x_shape, w_data, x_data = x.shape, weight.data, x.data

    def backward(g):
        gx = _conv_grad_input(g, w_data, x_shape, stride, padding) if x.requires_grad else None
        gw = _conv_grad_weight(cols, g, w_data.shape, x_data) if weight.requires_grad else None
        return gx, gw

    y = Tensor._make(out, (x, weight), backward, "conv2d")
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
                      output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d` for the same ``weight`` (Cout, Cin, kH, kW).

    ``x`` has ``Cout`` channels and the result has ``Cin`` channels, so that
    ``<conv2d(a, k), b> == <a, transposed_conv2d(b, k)>``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cout:
        raise ShapeError(f"transposed_conv2d: input has {x.shape[1]} channels, kernel expects {cout}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    if oph >= sh or opw >= sw:
        raise ShapeError("transposed_conv2d: output_padding must be smaller than stride")
    b, _, hi, wi = x.shape
    ho = (hi - 1) * sh - 2 * ph + kh + oph
    wo = (wi - 1) * sw - 2 * pw + kw + opw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed_conv2d: non-positive output size {(ho, wo)}")
    out_shape = (b, cin, ho, wo)
    out = _conv_grad_input(x.data, weight.data, out_shape, stride, padding)
    w_data, x_data = weight.data, x.data

    def backward(g):
        gx, cols = _conv_forward(g, w_data, stride, padding)
        gw = _conv_grad_weight(cols, x_data, w_data.shape, g) if weight.requires_grad else None
        return gx, gw

    y = Tensor._make(out, (x, weight), backward, "transposed_conv2d")
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


def depthwise_conv2d(x: Tensor, kernel: Tensor, padding=0) -> Tensor:
    """Apply one (kH, kW) kernel to every channel of ``x`` independently."""
    b, c, h, w = x.shape
    kh, kw = kernel.shape[-2:]
    y = conv2d(x.reshape(b * c, 1, h, w), kernel.reshape(1, 1, kh, kw), padding=padding)
    return y.reshape(b, c, y.shape[2], y.shape[3])


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects a 4-d tensor, got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d: window {k} larger than input {h}x{w}")
    crop = x.data[:, :, :ho * k, :wo * k]
    out = crop.reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))
    dtype = x.dtype

    def backward(g):
        full = np.zeros((b, c, h, w), dtype=dtype)
        full[:, :, :ho * k, :wo * k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (full,)

    return Tensor._make(out, (x,), backward, "avg_pool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects a 4-d tensor, got {x.shape}")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), backward, "upsample_nearest")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y


def pad2d(x: Tensor, pad: int | tuple[int, int]) -> Tensor:
    ph, pw = _pair(pad)
    out = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    h, w = x.shape[2:]
    return Tensor._make(out, (x,), lambda g: (g[:, :, ph:ph + h, pw:pw + w],), "pad2d")
