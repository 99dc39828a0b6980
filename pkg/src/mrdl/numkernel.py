"""Dense numeric primitives with hand-derived backward passes.

Layouts are plain float64 ndarrays:

* images / feature maps: ``(B, C, H, W)``, batch-major contiguous
* matrices: ``(rows, cols)``, row-major
* kernels: ``(C_out, C_in, kh, kw)``

Every forward op is a pure function; every backward op consumes exactly
what its forward saved and is validated against central finite
differences in the test suite. Convolution is cross-correlation (no
kernel flip) with zero padding. The per-output summation order is fixed
(kernel row, then column), so results do not depend on how the batch is
chunked.
"""

from __future__ import annotations

import numpy as np

from .validation import as_f64, check_labels

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "conv2d_output_shape",
    "avgpool2_forward",
    "avgpool2_backward",
    "relu",
    "relu_backward",
    "affine_forward",
    "affine_backward",
    "softmax",
    "softmax_xent",
]


def conv2d_output_shape(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _check_conv_args(x, kernels, bias, stride):
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError(
            f"conv2d: expected 4-d input and kernels, got {x.shape} and {kernels.shape}"
        )
    if kernels.shape[1] != x.shape[1]:
        raise ValueError(
            f"conv2d: kernel channels {kernels.shape[1]} do not match "
            f"input channels {x.shape[1]} (input {x.shape}, kernels {kernels.shape})"
        )
    if bias.shape != (kernels.shape[0],):
        raise ValueError(
            f"conv2d: bias shape {bias.shape} does not match {kernels.shape[0]} output channels"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")


def conv2d_forward(x, kernels, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (B,Cin,H,W) with ``kernels`` (Cout,Cin,kh,kw).

    Output spatial dims are ``floor((in + 2*pad - k)/stride) + 1``.
    """
    x = as_f64(x, "input")
    kernels = as_f64(kernels, "kernels")
    bias = as_f64(bias, "bias", ndim=1)
    _check_conv_args(x, kernels, bias, stride)

    b, cin, h, w = x.shape
    cout, _, kh, kw = kernels.shape
    ho, wo = conv2d_output_shape(h, w, kh, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} with pad {pad} does not fit input {h}x{w}"
        )

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.empty((b, cout, ho, wo))
    out[:] = bias[None, :, None, None]
    # One tensordot per kernel tap; accumulation order over (u, v) is fixed.
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            out += np.einsum("bchw,oc->bohw", patch, kernels[:, :, u, v], optimize=True)
    return out


def conv2d_backward(grad_out, saved_input, kernels, stride: int = 1, pad: int = 0):
    """Gradients of conv2d w.r.t. input, kernels and bias.

    ``saved_input`` is the unpadded forward input. Returns
    ``(grad_input, grad_kernels, grad_bias)`` with matching shapes.
    """
    grad_out = as_f64(grad_out, "grad_out", ndim=4)
    x = as_f64(saved_input, "saved_input", ndim=4)
    kernels = as_f64(kernels, "kernels", ndim=4)

    b, cin, h, w = x.shape
    cout, kcin, kh, kw = kernels.shape
    ho, wo = conv2d_output_shape(h, w, kh, stride, pad)
    if kcin != cin:
        raise ValueError(
            f"conv2d_backward: kernel channels {kcin} do not match input channels {cin}"
        )
    if grad_out.shape != (b, cout, ho, wo):
        raise ValueError(
            f"conv2d_backward: grad_out shape {grad_out.shape} does not match "
            f"forward output shape {(b, cout, ho, wo)}"
        )

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    grad_xp = np.zeros_like(xp)
    grad_kernels = np.empty_like(kernels)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            grad_kernels[:, :, u, v] = np.einsum(
                "bohw,bchw->oc", grad_out, patch, optimize=True
            )
            grad_xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                np.einsum("bohw,oc->bchw", grad_out, kernels[:, :, u, v], optimize=True)
            )
    grad_input = grad_xp[:, :, pad : pad + h, pad : pad + w] if pad else grad_xp
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernels, grad_bias


def avgpool2_forward(x) -> np.ndarray:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    x = as_f64(x, "input", ndim=4)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2: spatial dims must be even, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(grad_out) -> np.ndarray:
    """Distribute each output gradient evenly over its 2x2 input block."""
    grad_out = as_f64(grad_out, "grad_out", ndim=4)
    g = np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3)
    g *= 0.25
    return g


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, saved_input) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    saved_input = np.asarray(saved_input, dtype=np.float64)
    if grad_out.shape != saved_input.shape:
        raise ValueError(
            f"relu_backward: grad shape {grad_out.shape} != input shape {saved_input.shape}"
        )
    return grad_out * (saved_input > 0)


def affine_forward(x, weight, bias) -> np.ndarray:
    """Row-wise affine map ``y = x @ weight + bias``."""
    x = as_f64(x, "x", ndim=2)
    weight = as_f64(weight, "weight", ndim=2)
    bias = as_f64(bias, "bias", ndim=1)
    if x.shape[1] != weight.shape[0]:
        raise ValueError(
            f"affine: inner dims do not match, x {x.shape} vs weight {weight.shape}"
        )
    if bias.shape[0] != weight.shape[1]:
        raise ValueError(
            f"affine: bias shape {bias.shape} does not match weight {weight.shape}"
        )
    return x @ weight + bias


def affine_backward(grad_out, saved_x, weight):
    grad_out = as_f64(grad_out, "grad_out", ndim=2)
    saved_x = as_f64(saved_x, "saved_x", ndim=2)
    weight = as_f64(weight, "weight", ndim=2)
    if grad_out.shape != (saved_x.shape[0], weight.shape[1]):
        raise ValueError(
            f"affine_backward: grad_out shape {grad_out.shape} does not match "
            f"output shape {(saved_x.shape[0], weight.shape[1])}"
        )
    grad_x = grad_out @ weight.T
    grad_w = saved_x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max-shift for overflow safety."""
    logits = as_f64(logits, "logits", ndim=2)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Returns ``(loss, grad_logits)`` with ``grad = (softmax - onehot) / B``.
    """
    logits = as_f64(logits, "logits", ndim=2)
    b, c = logits.shape
    labels = check_labels(labels, c)
    if labels.shape[0] != b:
        raise ValueError(f"softmax_xent: {labels.shape[0]} labels for {b} rows")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return loss, grad
