"""A network assembled from a :class:`NetworkConfig` with explicit backprop."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ConfigError, ShapeMismatchError
from . import layers as K
from .config import BatchNorm, Conv, Dropout, FullyConnected, MaxPool, NetworkConfig, ReLU, Softmax


def param_names(config: NetworkConfig) -> list[str]:
    """Parameter names in declaration order."""
    names = []
    for i, layer in enumerate(config.layers):
        if isinstance(layer, (Conv, FullyConnected)):
            names += [f"{i}.weight", f"{i}.bias"]
        elif isinstance(layer, BatchNorm):
            names += [f"{i}.gamma", f"{i}.beta", f"{i}.running_mean", f"{i}.running_var"]
    return names


def param_shapes(config: NetworkConfig) -> dict[str, tuple]:
    shapes = {}
    prev = (config.input_shape[1], config.input_shape[0], config.input_shape[2])
    for i, (layer, out) in enumerate(zip(config.layers, config.shapes())):
        if isinstance(layer, Conv):
            shapes[f"{i}.weight"] = (layer.filters, prev[2], layer.kernel, layer.kernel)
            shapes[f"{i}.bias"] = (layer.filters,)
        elif isinstance(layer, FullyConnected):
            shapes[f"{i}.weight"] = (int(np.prod(prev)), layer.outputs)
            shapes[f"{i}.bias"] = (layer.outputs,)
        elif isinstance(layer, BatchNorm):
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"{i}.{name}"] = (prev[-1],)
        prev = out
    return shapes


def trainable(name: str) -> bool:
    return not name.endswith(("running_mean", "running_var"))


def regularized(name: str) -> bool:
    """Only conv and FC weights carry the L2 penalty."""
    return name.endswith(".weight")


def init_params(config: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights uniform in +-sqrt(6 / fan_in); biases and shifts zero; scales one."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith((".gamma", ".running_var")):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


class Network:
    """Forward/backward evaluation of ``config`` over parameters ``params``.

    Parameters live in one flat dict keyed ``"<layer>.<name>"``. Training-mode
    forward passes update batch-norm running statistics in place.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            raise ShapeMismatchError("parameter set does not match the configuration")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeMismatchError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params
        # set to keep d(loss)/d(input) in ``input_grad`` after each backward pass
        self.need_input_grad = False
        self.input_grad: Optional[np.ndarray] = None
        self._cache: Optional[list] = None

    # -- forward ---------------------------------------------------------

    def _to_nhwc(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        w, h, c = self.config.input_shape
        if x.ndim == 3 and c == 1:
            x = x[..., None]
        if x.ndim != 4 or x.shape[1:] != (h, w, c):
            raise ShapeMismatchError(
                f"network expects inputs of {w}x{h}x{c}, got array of shape {x.shape}")
        return x

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None,
                until: Optional[int] = None, dropout_rate: Optional[float] = None) -> np.ndarray:
        """Run the layers on ``x`` of shape (N, H, W) or (N, H, W, C).

        Returns class probabilities, or the NHWC output of layer ``until``.
        In train mode the per-layer state needed by :meth:`backward` is kept.
        """
        a = self._to_nhwc(x)
        p = self.params
        cache = []
        stop = len(self.config.layers) - 1 if until is None else until
        if not 0 <= stop < len(self.config.layers):
            raise ConfigError(f"layer index {until} out of range")
        for i, layer in enumerate(self.config.layers[:stop + 1]):
            if isinstance(layer, Conv):
                a, c = K.conv_nhwc(a, p[f"{i}.weight"], p[f"{i}.bias"], layer.pad, layer.stride)
                cache.append(c if train else None)
            elif isinstance(layer, BatchNorm):
                g, b = p[f"{i}.gamma"], p[f"{i}.beta"]
                if train:
                    a, c, mu, var = K.batchnorm_train(a, g, b, layer.epsilon)
                    m = layer.momentum
                    p[f"{i}.running_mean"] = m * p[f"{i}.running_mean"] + (1 - m) * mu
                    p[f"{i}.running_var"] = m * p[f"{i}.running_var"] + (1 - m) * var
                    cache.append(c)
                else:
                    a = K.batchnorm_infer(a, g, b, p[f"{i}.running_mean"], p[f"{i}.running_var"],
                                          layer.epsilon)
                    cache.append(None)
            elif isinstance(layer, ReLU):
                mask = a > 0
                a = np.where(mask, a, 0.0)
                cache.append(mask)
            elif isinstance(layer, MaxPool):
                shape = a.shape
                a, arg = K.maxpool_nhwc(a, layer.size, layer.stride)
                cache.append((arg, shape))
            elif isinstance(layer, Dropout):
                rate = layer.rate if dropout_rate is None else dropout_rate
                if train and rate > 0:
                    if rng is None:
                        raise ConfigError("train-mode dropout needs a random generator")
                    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
                    a = a * keep
                    cache.append(keep)
                else:
                    cache.append(None)
            elif isinstance(layer, FullyConnected):
                shape = a.shape
                flat = a.reshape(shape[0], -1)
                a = flat @ p[f"{i}.weight"] + p[f"{i}.bias"]
                cache.append((flat, shape))
            elif isinstance(layer, Softmax):
                a = K.softmax_rows(a)
                cache.append(None)
        self._cache = cache if train else None
        return a

    # -- backward --------------------------------------------------------

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Back-propagate the gradient w.r.t. the FC output (pre-softmax logits)."""
        if self._cache is None:
            raise RuntimeError("backward needs a cached train-mode forward pass")
        p = self.params
        grads: dict[str, np.ndarray] = {}
        d = dlogits
        layers = self.config.layers
        for i in range(len(layers) - 2, -1, -1):
            layer, c = layers[i], self._cache[i]
            if isinstance(layer, FullyConnected):
                flat, shape = c
                grads[f"{i}.weight"] = flat.T @ d
                grads[f"{i}.bias"] = d.sum(axis=0)
                d = (d @ p[f"{i}.weight"].T).reshape(shape)
            elif isinstance(layer, Dropout):
                if c is not None:
                    d = d * c
            elif isinstance(layer, MaxPool):
                arg, shape = c
                d = K.maxpool_nhwc_backward(d, arg, layer.size, layer.stride, shape)
            elif isinstance(layer, ReLU):
                d = np.where(c, d, 0.0)
            elif isinstance(layer, BatchNorm):
                d, grads[f"{i}.gamma"], grads[f"{i}.beta"] = K.batchnorm_train_backward(
                    d, c, p[f"{i}.gamma"])
            elif isinstance(layer, Conv):
                n, h, w = d.shape[0], *self._input_hw(i)
                in_shape = (n, h, w, p[f"{i}.weight"].shape[1])
                d, grads[f"{i}.weight"], grads[f"{i}.bias"] = K.conv_nhwc_backward(
                    d, c, p[f"{i}.weight"], layer.pad, layer.stride, in_shape,
                    need_dx=i > 0 or self.need_input_grad)
        self._cache = None
        self.input_grad = d if self.need_input_grad else None
        return grads

    def _input_hw(self, i: int) -> tuple[int, int]:
        if i == 0:
            w, h, _ = self.config.input_shape
            return h, w
        prev = self.config.shapes()[i - 1]
        return prev[0], prev[1]

    # -- loss ------------------------------------------------------------

    def l2_penalty(self) -> float:
        return 0.5 * sum(float(np.sum(v * v)) for k, v in self.params.items() if regularized(k))

    def loss_and_grads(self, x, labels, l2_lambda: float = 0.0,
                       rng: Optional[np.random.Generator] = None,
                       dropout_rate: Optional[float] = None):
        """Regularized loss ``J_R = J + lam/2 ||w||^2`` and its exact gradient.

        ``J`` is the batch SUM of cross entropy. Returns ``(J_R, J, probs, grads)``;
        only trainable parameters appear in ``grads``.
        """
        labels = np.asarray(labels)
        probs = self.forward(x, train=True, rng=rng, dropout_rate=dropout_rate)
        n = probs.shape[0]
        picked = probs[np.arange(n), labels]
        j = float(-np.log(np.maximum(picked, 1e-12)).sum())
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), labels] = 1.0
        dlogits = probs - onehot
        # the clamp is a constant region: no gradient flows through it
        clamped = picked < 1e-12
        if np.any(clamped):
            dlogits[clamped] = 0.0
        grads = self.backward(dlogits)
        if l2_lambda:
            for k in grads:
                if regularized(k):
                    grads[k] = grads[k] + l2_lambda * self.params[k]
        return j + l2_lambda * self.l2_penalty(), j, probs, grads

    def predict_proba(self, x, batch: int = 128) -> np.ndarray:
        x = self._to_nhwc(x)
        return np.concatenate([self.forward(x[s:s + batch]) for s in range(0, len(x), batch)])
