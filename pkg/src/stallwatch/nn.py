"""Dense-tensor layer math: forward and backward passes for the detector network.

Tensors are numpy arrays in NCHW layout (row-major). float32 is the working
precision; passing float64 arrays keeps every op in float64, which is what the
gradient-check tests use. Backward ops accumulate into ``grad_weights`` /
``grad_bias`` until :func:`sgd_update` consumes and zeroes them, so multiple
backward calls within one step add up.

All ops are deterministic and single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, TrainingError, ValidationError


@dataclass
class LayerParams:
    """One layer's weights and bias plus their gradient accumulators.

    ``frozen`` excludes the layer from optimizer updates; gradients may still
    be written but :func:`sgd_update` will not touch the parameter values.
    """

    weights: np.ndarray
    bias: np.ndarray
    grad_weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None)  # type: ignore[assignment]
    frozen: bool = False

    def __post_init__(self):
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.grad_weights.shape != self.weights.shape:
            raise DimensionError(
                f"grad_weights shape {self.grad_weights.shape} != weights shape {self.weights.shape}"
            )
        if self.grad_bias.shape != self.bias.shape:
            raise DimensionError(
                f"grad_bias shape {self.grad_bias.shape} != bias shape {self.bias.shape}"
            )

    def zero_grads(self):
        self.grad_weights[...] = 0
        self.grad_bias[...] = 0


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Window view of the padded input, shape [N, C, H', W', kh, kw]."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: np.ndarray, params: LayerParams, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2D cross-correlation with zero padding: out[n,k] = bias[k] + sum_c x[n,c] * w[k,c]."""
    if x.ndim != 4 or params.weights.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {params.weights.shape}"
        )
    n, c, h, w = x.shape
    k, ck, kh, kw = params.weights.shape
    if ck != c:
        raise DimensionError(f"input channel axis {c} != kernel channel axis {ck}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    # [N*H'*W', C*kh*kw] @ [C*kh*kw, K], one BLAS call
    m = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = m @ params.weights.reshape(k, -1).T + params.bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, k).transpose(0, 3, 1, 2))


def conv2d_backward(
    x: np.ndarray, params: LayerParams, grad_output: np.ndarray, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """Accumulate weight/bias grads for conv2d and return the gradient w.r.t. the input."""
    n, c, h, w = x.shape
    k, _, kh, kw = params.weights.shape
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)
    if grad_output.shape != (n, k, oh, ow):
        raise DimensionError(
            f"grad_output shape {grad_output.shape} != conv output shape {(n, k, oh, ow)}"
        )
    cols = _im2col(x, kh, kw, stride, pad)
    m = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    go = grad_output.transpose(0, 2, 3, 1).reshape(n * oh * ow, k)
    params.grad_weights += (go.T @ m).reshape(params.weights.shape)
    params.grad_bias += grad_output.sum(axis=(0, 2, 3))
    # scatter the per-window gradient back onto the (padded) input plane
    d = np.tensordot(grad_output, params.weights, axes=([1], [0]))  # [N,H',W',C,kh,kw]
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += d[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w])
    return gxp


def maxpool2d(x: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling; returns (output, argmax) where argmax holds flat H*W indices.

    Ties go to the first element in row-major scan order of the window.
    """
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} larger than input {h}x{w}")
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, window * window)
    rel = flat.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(flat, rel[..., None], axis=-1)[..., 0]
    base_i = (np.arange(oh) * stride)[None, None, :, None]
    base_j = (np.arange(ow) * stride)[None, None, None, :]
    argmax = (base_i + rel // window) * w + (base_j + rel % window)
    return np.ascontiguousarray(out), argmax


def maxpool2d_backward(
    argmax: np.ndarray, grad_output: np.ndarray, input_shape: tuple[int, ...]
) -> np.ndarray:
    """Route gradient to the winning positions; overlapping windows accumulate."""
    if argmax.shape != grad_output.shape:
        raise DimensionError(
            f"argmax shape {argmax.shape} != grad_output shape {grad_output.shape}"
        )
    n, c, h, w = input_shape
    if argmax.shape[:2] != (n, c):
        raise DimensionError(f"argmax batch/channel {argmax.shape[:2]} != input {(n, c)}")
    if argmax.size and argmax.max() >= h * w:
        raise DimensionError("argmax indices exceed input plane; stale argmax?")
    grad = np.zeros((n * c, h * w), dtype=grad_output.dtype)
    np.add.at(
        grad,
        (np.arange(n * c)[:, None], argmax.reshape(n * c, -1)),
        grad_output.reshape(n * c, -1),
    )
    return grad.reshape(n, c, h, w)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Subgradient 0 at exactly 0: gradient passes only where the input was > 0."""
    if x.shape != grad_output.shape:
        raise DimensionError(f"input shape {x.shape} != grad_output shape {grad_output.shape}")
    return np.where(x > 0, grad_output, 0)


def linear(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """Affine map: x[N,D] @ weights[D,M] + bias[M]."""
    if x.ndim != 2 or params.weights.ndim != 2:
        raise DimensionError(f"linear expects 2-d input and weights, got {x.shape} and {params.weights.shape}")
    if x.shape[1] != params.weights.shape[0]:
        raise DimensionError(
            f"input feature axis {x.shape[1]} != weight input axis {params.weights.shape[0]}"
        )
    return x @ params.weights + params.bias


def linear_backward(x: np.ndarray, params: LayerParams, grad_output: np.ndarray) -> np.ndarray:
    """Accumulate grads (inputT @ grad, column sums) and return grad @ weightsT."""
    n, m = grad_output.shape if grad_output.ndim == 2 else (None, None)
    if grad_output.ndim != 2 or n != x.shape[0] or m != params.weights.shape[1]:
        raise DimensionError(
            f"grad_output shape {grad_output.shape} != linear output shape "
            f"{(x.shape[0], params.weights.shape[1])}"
        )
    params.grad_weights += x.T @ grad_output
    params.grad_bias += grad_output.sum(axis=0)
    return grad_output @ params.weights.T


def softmax_cross_entropy(
    logits: np.ndarray, labels
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch; returns (loss, grad_logits, probs).

    Stabilized by max-subtraction, so huge logits cannot overflow.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [N,K], got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValidationError(f"need {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k}), got {sorted(set(labels.tolist()))}")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    loss = float(-logp[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, grad, probs


def sgd_update(params: LayerParams, lr: float, weight_decay: float = 0.0):
    """One SGD step: w -= lr*(grad + wd*w), bias without decay; grads are zeroed.

    Frozen params are left bit-identical (the arrays are not written at all).
    """
    if not (np.isfinite(params.grad_weights).all() and np.isfinite(params.grad_bias).all()):
        raise TrainingError("non-finite gradients: training diverged")
    if not params.frozen:
        params.weights -= lr * (params.grad_weights + weight_decay * params.weights)
        params.bias -= lr * params.grad_bias
    params.zero_grads()
