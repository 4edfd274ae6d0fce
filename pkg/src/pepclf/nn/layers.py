"""Feed-forward layers with exact backward passes.

Every layer follows the same protocol: ``forward(x, mask=None,
training=False)`` caches whatever the backward pass needs, ``backward(grad)``
accumulates parameter gradients and returns the gradient with respect to the
layer input.  Parameters are float64 and live in ``Parameter`` holders so an
optimizer can walk them uniformly.
"""

import numpy as np

from .activations import activation


class ShapeError(ValueError):
    """Raised when an input shape does not match the layer's parameters."""


class Parameter:
    """A trainable tensor with an accumulated gradient of the same shape."""

    def __init__(self, value, name: str):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


class Layer:
    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x, mask=None, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    """Affine map plus activation: y = act(x @ W + b)."""

    def __init__(self, in_dim, out_dim, act="identity", rng=None, name="dense"):
        rng = rng or np.random.default_rng()
        limit = 1.0 / np.sqrt(in_dim)
        self.W = Parameter(rng.uniform(-limit, limit, (in_dim, out_dim)), f"{name}.W")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b")
        self.act_kind = act
        self._act, self._dact = activation(act)
        self._cache = None

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x, mask=None, training=False):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ShapeError(
                f"dense expects input (batch, {self.W.shape[0]}), got {x.shape}"
            )
        z = x @ self.W.value + self.b.value
        y = self._act(z)
        self._cache = (x, z, y)
        return y

    def backward(self, grad):
        x, z, y = self._cache
        dz = self._dact(grad, z, y)
        self.W.grad += x.T @ dz
        self.b.grad += dz.sum(axis=0)
        return dz @ self.W.value.T


class Conv1D(Layer):
    """Cross-correlation over the time axis of a (batch, time, channels) input.

    Output length is floor((T - K) / stride) + 1 for valid padding and
    ceil(T / stride) for same padding (zero pads split symmetrically, the
    odd one on the right).
    """

    def __init__(self, kernel, in_channels, filters, stride=1, padding="valid",
                 act="identity", rng=None, name="conv"):
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        rng = rng or np.random.default_rng()
        limit = 1.0 / np.sqrt(kernel * in_channels)
        self.W = Parameter(
            rng.uniform(-limit, limit, (kernel, in_channels, filters)), f"{name}.W"
        )
        self.b = Parameter(np.zeros(filters), f"{name}.b")
        self.stride = stride
        self.padding = padding
        self.act_kind = act
        self._act, self._dact = activation(act)
        self._cache = None

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x, mask=None, training=False):
        kernel, in_ch, filters = self.W.shape
        if x.ndim != 3 or x.shape[2] != in_ch:
            raise ShapeError(
                f"conv1d expects input (batch, time, {in_ch}), got {x.shape}"
            )
        batch, time, _ = x.shape
        if self.padding == "valid":
            if kernel > time:
                raise ShapeError(
                    f"kernel {kernel} exceeds input length {time} with valid padding"
                )
            t_out = (time - kernel) // self.stride + 1
            xp = x
            pad_left = 0
        else:
            t_out = -(-time // self.stride)  # ceil
            pad_total = max((t_out - 1) * self.stride + kernel - time, 0)
            pad_left = pad_total // 2
            xp = np.pad(x, ((0, 0), (pad_left, pad_total - pad_left), (0, 0)))

        z = np.broadcast_to(self.b.value, (batch, t_out, filters)).copy()
        span = (t_out - 1) * self.stride + 1
        for k in range(kernel):
            z += xp[:, k : k + span : self.stride, :] @ self.W.value[k]
        y = self._act(z)
        self._cache = (x, xp, pad_left, z, y)
        return y

    def backward(self, grad):
        x, xp, pad_left, z, y = self._cache
        kernel = self.W.shape[0]
        dz = self._dact(grad, z, y)
        t_out = dz.shape[1]
        span = (t_out - 1) * self.stride + 1

        self.b.grad += dz.sum(axis=(0, 1))
        dxp = np.zeros_like(xp)
        for k in range(kernel):
            window = xp[:, k : k + span : self.stride, :]
            self.W.grad[k] += np.einsum("bti,btf->if", window, dz)
            dxp[:, k : k + span : self.stride, :] += dz @ self.W.value[k].T
        if self.padding == "same":
            return dxp[:, pad_left : pad_left + x.shape[1], :]
        return dxp


class MaxPool1D(Layer):
    """Non-overlapping max pooling over time; trailing partial window dropped.

    Ties route the gradient to the first maximal position in the window.
    """

    def __init__(self, pool):
        if pool < 1:
            raise ValueError(f"pool size must be >= 1, got {pool}")
        self.pool = pool
        self._cache = None

    def forward(self, x, mask=None, training=False):
        batch, time, channels = x.shape
        if self.pool > time:
            raise ShapeError(f"pool size {self.pool} exceeds input length {time}")
        t_out = time // self.pool
        windows = x[:, : t_out * self.pool, :].reshape(batch, t_out, self.pool, channels)
        argmax = windows.argmax(axis=2)  # first occurrence on ties
        out = np.take_along_axis(windows, argmax[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (x.shape, argmax)
        return out

    def backward(self, grad):
        (batch, time, channels), argmax = self._cache
        t_out = argmax.shape[1]
        dwin = np.zeros((batch, t_out, self.pool, channels))
        np.put_along_axis(dwin, argmax[:, :, None, :], grad[:, :, None, :], axis=2)
        dx = np.zeros((batch, time, channels))
        dx[:, : t_out * self.pool, :] = dwin.reshape(batch, t_out * self.pool, channels)
        return dx


class GlobalMaxPool1D(Layer):
    """Max over the whole time axis: (batch, time, channels) -> (batch, channels)."""

    def __init__(self):
        self._cache = None

    def forward(self, x, mask=None, training=False):
        argmax = x.argmax(axis=1)
        self._cache = (x.shape, argmax)
        return np.take_along_axis(x, argmax[:, None, :], axis=1)[:, 0, :]

    def backward(self, grad):
        shape, argmax = self._cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, argmax[:, None, :], grad[:, None, :], axis=1)
        return dx


class BatchNorm(Layer):
    """Batch normalization over the batch axis of a (batch, features) input."""

    def __init__(self, features, momentum=0.9, eps=1e-5, name="bn"):
        self.gamma = Parameter(np.ones(features), f"{name}.gamma")
        self.beta = Parameter(np.zeros(features), f"{name}.beta")
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, mask=None, training=False):
        if x.ndim != 2 or x.shape[1] != self.gamma.shape[0]:
            raise ShapeError(
                f"batchnorm expects input (batch, {self.gamma.shape[0]}), got {x.shape}"
            )
        if training:
            if x.shape[0] < 2:
                raise ShapeError("batchnorm training requires batch size >= 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xn = (x - mean) * inv
        self._cache = (xn, inv, training, x.shape[0])
        return self.gamma.value * xn + self.beta.value

    def backward(self, grad):
        xn, inv, training, batch = self._cache
        self.gamma.grad += (grad * xn).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        if not training:
            return grad * self.gamma.value * inv
        # batch statistics depend on x, hence the two correction terms
        g = grad * self.gamma.value
        return (inv / batch) * (
            batch * g - g.sum(axis=0) - xn * (g * xn).sum(axis=0)
        )


class Dropout(Layer):
    """Inverted dropout: scales survivors at train time, identity at inference."""

    def __init__(self, rate, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng()
        self._mask = None

    def forward(self, x, mask=None, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Embedding(Layer):
    """Index lookup into a (vocab, dim) table, optionally fine-tuned."""

    def __init__(self, weights, trainable=True, name="embedding"):
        self.W = Parameter(np.array(weights, dtype=np.float64), f"{name}.W")
        self.trainable = trainable
        self._ids = None

    def parameters(self):
        return [self.W] if self.trainable else []

    def forward(self, ids, mask=None, training=False):
        ids = np.asarray(ids)
        if ids.max(initial=0) >= self.W.shape[0]:
            raise ShapeError(
                f"index {ids.max()} out of range for vocabulary of {self.W.shape[0]}"
            )
        self._ids = ids
        return self.W.value[ids]

    def backward(self, grad):
        if self.trainable:
            np.add.at(self.W.grad, self._ids, grad)
        return None
