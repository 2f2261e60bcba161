"""Differentiable layers with hand-derived backward passes.

Every layer caches what its backward pass needs during forward, so the
usage pattern is strictly forward-then-backward per batch. Convolutional
layers operate on (batch, time, freq, channels) arrays; recurrent and
dense layers on (batch, time, features). All math is float64, and each
backward is exact for the forward map (finite differences agree to
roundoff; see the test suite).

Parameter gradients accumulate across backward calls until
``zero_grads()``; the inputs' gradient is returned.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "sigmoid",
    "glorot_uniform",
    "Layer",
    "Conv2d",
    "BatchNorm",
    "ReLU",
    "MaxPool2d",
    "Dropout",
    "GruDirection",
    "BiGru",
    "TimeDense",
    "MaxoutSigmoidHead",
    "Merge",
]


class ShapeError(ValueError):
    """Input shape incompatible with a layer's configuration."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base contract: named parameter and gradient arrays."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0


class Conv2d(Layer):
    """3x3 convolution with 'same' zero padding and unit stride.

    Input (B, T, F, Cin) -> output (B, T, F, Cout). Kernels are stored as
    (3, 3, Cin, Cout).
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = 9 * in_channels
        fan_out = 9 * out_channels
        self.kernels = glorot_uniform(rng, (3, 3, in_channels, out_channels), fan_in, fan_out)
        self.bias = np.zeros(out_channels)
        self.g_kernels = np.zeros_like(self.kernels)
        self.g_bias = np.zeros_like(self.bias)
        self._x_padded: np.ndarray | None = None

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def grads(self):
        return {"kernels": self.g_kernels, "bias": self.g_bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"conv expected (B, T, F, {self.in_channels}), got {x.shape}"
            )
        b, t, f, cin = x.shape
        xp = np.zeros((b, t + 2, f + 2, cin))
        xp[:, 1 : t + 1, 1 : f + 1, :] = x
        out = np.tile(self.bias, (b, t, f, 1))
        for dt in range(3):
            for df in range(3):
                out += xp[:, dt : dt + t, df : df + f, :] @ self.kernels[dt, df]
        self._x_padded = xp
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xp = self._x_padded
        if xp is None:
            raise RuntimeError("backward called before forward")
        b, t, f = grad.shape[0], grad.shape[1], grad.shape[2]
        self.g_bias += grad.sum(axis=(0, 1, 2))
        gxp = np.zeros_like(xp)
        for dt in range(3):
            for df in range(3):
                patch = xp[:, dt : dt + t, df : df + f, :]
                self.g_kernels[dt, df] += np.tensordot(patch, grad, axes=([0, 1, 2], [0, 1, 2]))
                gxp[:, dt : dt + t, df : df + f, :] += grad @ self.kernels[dt, df].T
        return gxp[:, 1 : t + 1, 1 : f + 1, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over the (batch, time, freq) axes.

    Train mode normalizes with batch statistics and folds them into the
    running averages (momentum 0.99); inference uses the running averages
    and fails loudly if no training update ever happened.
    """

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.g_gamma = np.zeros(channels)
        self.g_beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.n_updates = 0
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.g_gamma, "beta": self.g_beta}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(f"batch norm expected (B, T, F, {self.channels}), got {x.shape}")
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch norm needs a batch of at least 2 samples in train mode")
            mu = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * ivar
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mu
            self.running_var *= m
            self.running_var += (1.0 - m) * var
            self.n_updates += 1
            self._cache = (xhat, ivar)
            return self.gamma * xhat + self.beta
        if self.n_updates == 0:
            raise RuntimeError(
                "batch norm statistics are uninitialized: run at least one training step first"
            )
        xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return self.gamma * xhat + self.beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before a train-mode forward")
        xhat, ivar = self._cache
        axes = (0, 1, 2)
        self.g_gamma += (grad * xhat).sum(axis=axes)
        self.g_beta += grad.sum(axis=axes)
        # Gradient through the batch statistics themselves:
        return self.gamma * ivar * (
            grad - grad.mean(axis=axes) - xhat * (grad * xhat).mean(axis=axes)
        )


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, 0.0)


class MaxPool2d(Layer):
    """Non-overlapping max pooling by (pool_t, pool_f).

    The pooled axes must divide exactly. Backward routes each output
    gradient to the first maximal element of its block in scan order
    (time-major within the block).
    """

    def __init__(self, pool_t: int, pool_f: int):
        if pool_t < 1 or pool_f < 1:
            raise ValueError("pool factors must be positive")
        self.pool_t = pool_t
        self.pool_f = pool_f

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, t, f, c = x.shape
        pt, pf = self.pool_t, self.pool_f
        if t % pt:
            raise ShapeError(f"time axis {t} is not divisible by pool factor {pt}")
        if f % pf:
            raise ShapeError(f"frequency axis {f} is not divisible by pool factor {pf}")
        to, fo = t // pt, f // pf
        blocks = (
            x.reshape(b, to, pt, fo, pf, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, to, fo, c, pt * pf)
        )
        self._argmax = blocks.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(blocks, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        b, t, f, c = self._in_shape
        pt, pf = self.pool_t, self.pool_f
        to, fo = t // pt, f // pf
        blocks = np.zeros((b, to, fo, c, pt * pf))
        np.put_along_axis(blocks, self._argmax[..., None], grad[..., None], axis=-1)
        return (
            blocks.reshape(b, to, fo, c, pt, pf)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, t, f, c)
        )


class Dropout(Layer):
    """Inverted dropout: survivors are rescaled by 1/(1-rate) at train time
    so inference is the plain identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None = None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode requires a random generator")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad
        return grad * self._mask


class GruDirection(Layer):
    """Single-direction GRU over (B, T, D) inputs, initial state zero.

        z_t = sigmoid(W_z x_t + U_z h_prev + b_z)
        r_t = sigmoid(W_r x_t + U_r h_prev + b_r)
        hc_t = tanh(W_h x_t + U_h (r_t * h_prev) + b_h)
        h_t = (1 - z_t) * h_prev + z_t * hc_t

    Backward is full backpropagation through time.
    """

    def __init__(self, input_size: int, units: int, rng: np.random.Generator):
        self.input_size = input_size
        self.units = units

        def w():
            return glorot_uniform(rng, (units, input_size), input_size, units)

        def u():
            return glorot_uniform(rng, (units, units), units, units)

        self.W_z, self.U_z, self.b_z = w(), u(), np.zeros(units)
        self.W_r, self.U_r, self.b_r = w(), u(), np.zeros(units)
        self.W_h, self.U_h, self.b_h = w(), u(), np.zeros(units)
        self._g = {name: np.zeros_like(arr) for name, arr in self.params().items()}
        self._cache = None

    def params(self):
        return {
            "W_z": self.W_z, "U_z": self.U_z, "b_z": self.b_z,
            "W_r": self.W_r, "U_r": self.U_r, "b_r": self.b_r,
            "W_h": self.W_h, "U_h": self.U_h, "b_h": self.b_h,
        }

    def grads(self):
        return self._g

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"GRU expected (B, T, {self.input_size}), got {x.shape}")
        b, t, _ = x.shape
        u = self.units
        h = np.zeros((b, u))
        zs = np.empty((t, b, u))
        rs = np.empty((t, b, u))
        hcs = np.empty((t, b, u))
        hs = np.empty((t, b, u))
        for step in range(t):
            xt = x[:, step]
            z = sigmoid(xt @ self.W_z.T + h @ self.U_z.T + self.b_z)
            r = sigmoid(xt @ self.W_r.T + h @ self.U_r.T + self.b_r)
            hc = np.tanh(xt @ self.W_h.T + (r * h) @ self.U_h.T + self.b_h)
            h = (1.0 - z) * h + z * hc
            zs[step], rs[step], hcs[step], hs[step] = z, r, hc, h
        self._cache = (np.ascontiguousarray(x), zs, rs, hcs, hs)
        return hs.transpose(1, 0, 2)

    def backward(self, grad_seq: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, zs, rs, hcs, hs = self._cache
        b, t, _ = x.shape
        g = self._g
        dx = np.zeros_like(x)
        dh_next = np.zeros((b, self.units))
        for step in reversed(range(t)):
            xt = x[:, step]
            z, r, hc = zs[step], rs[step], hcs[step]
            h_prev = hs[step - 1] if step > 0 else np.zeros((b, self.units))
            dh = grad_seq[:, step] + dh_next

            dz = dh * (hc - h_prev)
            dhc = dh * z
            dh_prev = dh * (1.0 - z)

            da_hc = dhc * (1.0 - hc**2)
            g["W_h"] += da_hc.T @ xt
            g["U_h"] += da_hc.T @ (r * h_prev)
            g["b_h"] += da_hc.sum(axis=0)
            dx[:, step] += da_hc @ self.W_h
            drh = da_hc @ self.U_h
            dr = drh * h_prev
            dh_prev += drh * r

            da_r = dr * r * (1.0 - r)
            g["W_r"] += da_r.T @ xt
            g["U_r"] += da_r.T @ h_prev
            g["b_r"] += da_r.sum(axis=0)
            dx[:, step] += da_r @ self.W_r
            dh_prev += da_r @ self.U_r

            da_z = dz * z * (1.0 - z)
            g["W_z"] += da_z.T @ xt
            g["U_z"] += da_z.T @ h_prev
            g["b_z"] += da_z.sum(axis=0)
            dx[:, step] += da_z @ self.W_z
            dh_prev += da_z @ self.U_z

            dh_next = dh_prev
        return dx


class BiGru(Layer):
    """Bidirectional GRU; the two directions' outputs are concatenated,
    giving (B, T, 2 * units)."""

    def __init__(self, input_size: int, units: int, rng: np.random.Generator):
        self.units = units
        self.fwd = GruDirection(input_size, units, rng)
        self.bwd = GruDirection(input_size, units, rng)

    def params(self):
        out = {f"fwd.{k}": v for k, v in self.fwd.params().items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.params().items()})
        return out

    def grads(self):
        out = {f"fwd.{k}": v for k, v in self.fwd.grads().items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.grads().items()})
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        hf = self.fwd.forward(x)
        hb = self.bwd.forward(np.ascontiguousarray(x[:, ::-1]))[:, ::-1]
        return np.concatenate([hf, hb], axis=2)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        u = self.units
        dxf = self.fwd.backward(np.ascontiguousarray(grad[:, :, :u]))
        dxb = self.bwd.backward(np.ascontiguousarray(grad[:, ::-1, u:]))[:, ::-1]
        return dxf + dxb


class TimeDense(Layer):
    """One affine map plus activation applied independently per time step."""

    ACTIVATIONS = ("linear", "relu", "tanh")

    def __init__(self, in_features: int, units: int, rng: np.random.Generator,
                 activation: str = "relu"):
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = in_features
        self.units = units
        self.activation = activation
        self.W = glorot_uniform(rng, (units, in_features), in_features, units)
        self.b = np.zeros(units)
        self.g_W = np.zeros_like(self.W)
        self.g_b = np.zeros_like(self.b)

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.g_W, "b": self.g_b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeError(f"dense expected (B, T, {self.in_features}), got {x.shape}")
        pre = x @ self.W.T + self.b
        if self.activation == "relu":
            out = np.where(pre > 0, pre, 0.0)
        elif self.activation == "tanh":
            out = np.tanh(pre)
        else:
            out = pre
        self._cache = (x, pre, out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, pre, out = self._cache
        if self.activation == "relu":
            dpre = np.where(pre > 0, grad, 0.0)
        elif self.activation == "tanh":
            dpre = grad * (1.0 - out**2)
        else:
            dpre = grad
        self.g_W += np.tensordot(dpre, x, axes=([0, 1], [0, 1]))
        self.g_b += dpre.sum(axis=(0, 1))
        return dpre @ self.W


class MaxoutSigmoidHead(Layer):
    """Scalar output head: mean over time, max over affine pieces, sigmoid.

    Input (B, T, F) -> probability (B,) strictly inside (0, 1). Backward
    routes the gradient through each sample's active piece only.
    """

    def __init__(self, in_features: int, pieces: int, rng: np.random.Generator):
        if pieces < 2:
            raise ValueError("maxout needs at least 2 pieces")
        self.in_features = in_features
        self.pieces = pieces
        self.W = glorot_uniform(rng, (pieces, in_features), in_features, 1)
        self.b = np.zeros(pieces)
        self.g_W = np.zeros_like(self.W)
        self.g_b = np.zeros_like(self.b)

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.g_W, "b": self.g_b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeError(f"head expected (B, T, {self.in_features}), got {x.shape}")
        v = x.mean(axis=1)
        scores = v @ self.W.T + self.b
        active = scores.argmax(axis=1)
        smax = scores[np.arange(v.shape[0]), active]
        out = sigmoid(smax)
        self._cache = (v, active, out, x.shape[1])
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        v, active, out, t = self._cache
        b = v.shape[0]
        ds = dout * out * (1.0 - out)
        onehot = np.zeros((b, self.pieces))
        onehot[np.arange(b), active] = 1.0
        self.g_W += (onehot * ds[:, None]).T @ v
        self.g_b += onehot.T @ ds
        dv = ds[:, None] * self.W[active]
        return np.repeat(dv[:, None, :], t, axis=1) / t


class Merge(Layer):
    """Elementwise product of two same-shape feature maps."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise ShapeError(f"merge shape mismatch: {a.shape} vs {b.shape}")
        self._cache = (a, b)
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self._cache
        return grad * b, grad * a
