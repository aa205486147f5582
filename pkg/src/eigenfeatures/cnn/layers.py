"""Layer kernels with forward and backward passes.

Inside the network activations are kept channels-last, ``(N, H, W, C)``,
so that every convolution tap is one contiguous matrix product. The
module-level functions at the bottom expose the same kernels with the
channels-first ``(C, H, W)`` / ``(N, C, H, W)`` convention used elsewhere.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError, ShapeMismatchError
from .config import output_size, pool_output_size


def _conv_taps(kernel: int, stride: int, ho: int, wo: int):
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            yield i, j, (slice(None), slice(i, i + span_h, stride), slice(j, j + span_w, stride))


# below this many input taps (C*k*k) an explicit im2col matrix beats per-tap products
IM2COL_MAX_TAPS = 64


def conv_nhwc(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int, stride: int):
    """Cross-correlation of ``x`` (N,H,W,C) with ``w`` (F,C,k,k).

    Returns the output and a cache for :func:`conv_nhwc_backward`.
    """
    n, h, wd, c = x.shape
    f, cw, k, _ = w.shape
    if cw != c:
        raise ShapeMismatchError(f"input has {c} channels, kernel expects {cw}")
    ho = output_size(h, k, pad, stride)
    wo = output_size(wd, k, pad, stride)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # k, k, C, F
    if c * k * k <= IM2COL_MAX_TAPS:
        cols = np.empty((n, ho, wo, k, k, c))
        for i, j, sl in _conv_taps(k, stride, ho, wo):
            cols[:, :, :, i, j, :] = xp[sl]
        cols = cols.reshape(-1, k * k * c)
        out = (cols @ wt.reshape(-1, f) + b).reshape(n, ho, wo, f)
        return out, (xp.shape, cols)
    out = np.empty((n, ho, wo, f))
    out[...] = b
    for i, j, sl in _conv_taps(k, stride, ho, wo):
        out += xp[sl] @ wt[i, j]
    return out, (xp, None)


def conv_nhwc_backward(dout, cache, w, pad, stride, in_shape, need_dx=True):
    f, c, k, _ = w.shape
    n, ho, wo, _ = dout.shape
    xp, cols = cache
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    dflat = dout.reshape(-1, f)
    db = dflat.sum(axis=0)
    if cols is not None:
        dw = (cols.T @ dflat).reshape(k, k, c, f).transpose(3, 2, 0, 1)
        if not need_dx:
            return None, dw, db
        dcols = (dflat @ wt.reshape(-1, f).T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros(xp)
        for i, j, sl in _conv_taps(k, stride, ho, wo):
            dxp[sl] += dcols[:, :, :, i, j, :]
    else:
        dwt = np.empty((k, k, c, f))
        dxp = np.zeros(xp.shape) if need_dx else None
        for i, j, sl in _conv_taps(k, stride, ho, wo):
            dwt[i, j] = xp[sl].reshape(-1, c).T @ dflat
            if need_dx:
                dxp[sl] += dout @ wt[i, j].T
        dw = dwt.transpose(3, 2, 0, 1)
        if not need_dx:
            return None, dw, db
    h, wd = in_shape[1], in_shape[2]
    dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
    return dx, dw, db


def maxpool_nhwc(x: np.ndarray, size: int, stride: int):
    """Max pooling; returns output and the flat in-window argmax used by backward."""
    n, h, w, c = x.shape
    ho = pool_output_size(h, size, stride)
    wo = pool_output_size(w, size, stride)
    if size == stride:
        win = x[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c)
        win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    else:
        win = np.empty((n, ho, wo, c, size * size))
        for i in range(size):
            for j in range(size):
                win[..., i * size + j] = x[:, i:i + stride * (ho - 1) + 1:stride,
                                           j:j + stride * (wo - 1) + 1:stride, :]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_nhwc_backward(dout, arg, size, stride, in_shape):
    n, ho, wo, c = dout.shape
    dx = np.zeros(in_shape)
    for i in range(size):
        for j in range(size):
            routed = np.where(arg == i * size + j, dout, 0.0)
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += routed
    return dx


def batchnorm_train(x, gamma, beta, eps):
    """Per-channel normalization over every axis but the last."""
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    xc = x - mu
    var = (xc * xc).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv), mu, var


def batchnorm_train_backward(dout, cache, gamma):
    xhat, inv = cache
    c = dout.shape[-1]
    d2 = dout.reshape(-1, c)
    x2 = xhat.reshape(-1, c)
    m = d2.shape[0]
    dbeta = d2.sum(axis=0)
    dgamma = np.einsum("ij,ij->j", d2, x2)
    dx = d2 - dbeta / m
    dx -= x2 * (dgamma / m)
    dx *= gamma * inv
    return dx.reshape(dout.shape), dgamma, dbeta


def batchnorm_infer(x, gamma, beta, running_mean, running_var, eps):
    return (x - running_mean) / np.sqrt(running_var + eps) * gamma + beta


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# channels-first functional API
# ---------------------------------------------------------------------------

def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatchError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def conv_forward(x, weights, bias, pad: int = 0, stride: int = 1) -> np.ndarray:
    """Windowed weighted sum plus bias; ``weights`` is (F, C, k, k)."""
    xb, single = _batched(x)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatchError(f"weights must be (F, C, k, k), got {w.shape}")
    b = np.broadcast_to(np.asarray(bias, dtype=np.float64), (w.shape[0],))
    out, _ = conv_nhwc(xb.transpose(0, 2, 3, 1), w, b, pad, stride)
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else out


def maxpool_forward(x, size: int = 2, stride: int = 2) -> np.ndarray:
    xb, single = _batched(x)
    out, _ = maxpool_nhwc(xb.transpose(0, 2, 3, 1), size, stride)
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else out


def fc_forward(x, weights, bias) -> np.ndarray:
    """``h_j = sum_i x_i w_ij + b_j`` on the flattened input; ``weights`` is (in, out)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    single = x.ndim == 1
    flat = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[0]:
        raise ShapeMismatchError(f"input length {flat.shape[1]} does not match weights {w.shape}")
    out = flat @ w + bias
    return out[0] if single else out


def batchnorm_forward(batch, scale, shift, eps: float = 1e-5, mode: str = "train",
                      running_stats=None, momentum: float = 0.9) -> np.ndarray:
    """Batch normalization with channels on the LAST axis.

    ``running_stats`` is a dict with ``mean`` and ``var`` arrays. In train mode
    they are updated in place when given; infer mode requires them.
    """
    x = np.asarray(batch, dtype=np.float64)
    if mode == "train":
        out, _, mu, var = batchnorm_train(x, scale, shift, eps)
        if running_stats is not None:
            running_stats["mean"] = momentum * running_stats["mean"] + (1 - momentum) * mu
            running_stats["var"] = momentum * running_stats["var"] + (1 - momentum) * var
        return out
    if mode != "infer":
        raise ConfigError(f"mode must be 'train' or 'infer', not {mode!r}")
    if running_stats is None or running_stats.get("mean") is None or running_stats.get("var") is None:
        raise ConfigError("infer mode needs populated running statistics")
    return batchnorm_infer(x, scale, shift, running_stats["mean"], running_stats["var"], eps)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax(z) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    return softmax_rows(z)


def cross_entropy(predictions, labels, clamp: float = 1e-12) -> float:
    """Batch-summed cross entropy ``-sum t ln y`` with one-hot ``labels``."""
    y = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    t = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if y.shape != t.shape:
        raise ShapeMismatchError(f"predictions {y.shape} and labels {t.shape} differ")
    if not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
        raise DataError("labels must be one-hot rows")
    picked = y[t == 1]
    return float(-np.log(np.maximum(picked, clamp)).sum())


def l2_regularized_loss(j: float, weights, lam: float) -> float:
    """``J + lam * 1/2 * ||w||^2`` over the given weight arrays."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    return float(j + lam * 0.5 * sum(float(np.sum(np.square(w))) for w in weights))


def sgd_step(params: dict, grads: dict, learning_rate: float) -> dict:
    """Plain SGD, ``theta <- theta - lr * grad``; returns new arrays."""
    if set(params) != set(grads):
        raise ShapeMismatchError("parameter and gradient names differ")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(p) != np.shape(g):
            raise ShapeMismatchError(f"{name}: parameter {np.shape(p)} vs gradient {np.shape(g)}")
        out[name] = p - learning_rate * g
    return out
