"""Multilayer-perceptron autoencoder written directly in numpy.

Training runs batched forward/backward passes with batch-norm on minibatch
statistics. Inference (``encode``/``decode``/``decoder_jacobian``) runs one
sample at a time through a folded copy of the network in which every
batch-norm has been merged into the preceding affine map, so

* a batch of inputs gives bit-identical results to encoding them one by one,
* the decoder is a plain composition of affine maps and smooth activations
  whose Jacobian is accumulated exactly in forward mode.

Batch-norm running statistics are recomputed from the whole training set at
the end of every epoch rather than tracked with a moving average, which
makes them a deterministic function of the parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .descriptors import chamfer_with_grad
from .shapes import NormalizationRecord, ShapeDataset

ACTIVATIONS = ("sigmoid", "relu", "tanh", "identity")


class TrainingError(RuntimeError):
    pass


def _sigmoid(x):
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name, x):
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x.copy()
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name, pre, post):
    """Derivative at pre-activation ``pre`` (``post`` is the activation value).

    ReLU uses the subgradient 0 at 0.
    """
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


# --------------------------------------------------------------------------
# layers (training path)

class Layer:
    kind = ""
    param_names: tuple = ()

    def spec(self) -> dict:
        return {"kind": self.kind}

    def init(self, rng):
        pass

    def out_shape(self, in_shape):
        return in_shape


class Dense(Layer):
    kind = "affine"
    param_names = ("W", "b")

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.W = np.zeros((self.n_out, self.n_in))
        self.b = np.zeros(self.n_out)

    def spec(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out}

    def init(self, rng):
        limit = math.sqrt(6.0 / (self.n_in + self.n_out))
        self.W = rng.uniform(-limit, limit, size=(self.n_out, self.n_in))
        self.b = np.zeros(self.n_out)

    def out_shape(self, in_shape):
        if in_shape[-1] != self.n_in:
            raise ValueError(f"affine layer expects {self.n_in} inputs, got shape {in_shape}")
        return in_shape[:-1] + (self.n_out,)

    def forward(self, x, train=True):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        x = self._x
        self.dW = dy.reshape(-1, self.n_out).T @ x.reshape(-1, self.n_in)
        self.db = dy.reshape(-1, self.n_out).sum(axis=0)
        return dy @ self.W


class Pointwise(Dense):
    """Kernel-size-1 convolution: one affine map shared by every point."""

    kind = "conv1d-pointwise"


class BatchNorm(Layer):
    kind = "batch-norm"
    param_names = ("gamma", "beta")
    eps = 1e-5

    def __init__(self, n):
        self.n = int(n)
        self.gamma = np.ones(self.n)
        self.beta = np.zeros(self.n)
        self.running_mean = np.zeros(self.n)
        self.running_var = np.ones(self.n)

    def spec(self):
        return {"kind": self.kind, "size": self.n}

    def init(self, rng):
        self.gamma = np.ones(self.n)
        self.beta = np.zeros(self.n)

    def out_shape(self, in_shape):
        if in_shape[-1] != self.n:
            raise ValueError(f"batch-norm expects {self.n} features, got shape {in_shape}")
        return in_shape

    def forward(self, x, train=True):
        if not train:
            return (x - self.running_mean) / np.sqrt(self.running_var + self.eps) * self.gamma + self.beta
        axes = tuple(range(x.ndim - 1))
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        self._m = x.size // self.n
        return self._xhat * self.gamma + self.beta

    def backward(self, dy):
        axes = tuple(range(dy.ndim - 1))
        xhat, m = self._xhat, self._m
        self.dgamma = (dy * xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        dxhat = dy * self.gamma
        return (self._inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))


class Activation(Layer):
    kind = "activation"

    def __init__(self, name):
        if name not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {name!r}")
        self.name = name

    def spec(self):
        return {"kind": self.kind, "name": self.name}

    def forward(self, x, train=True):
        self._x = x
        self._y = activate(self.name, x)
        return self._y

    def backward(self, dy):
        return dy * activation_grad(self.name, self._x, self._y)


class MaxPool(Layer):
    """Max over the point axis: ``(..., P, c) -> (..., c)``."""

    kind = "max-pool-over-points"

    def out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ValueError(f"max pool expects (points, channels) input, got {in_shape}")
        return in_shape[1:]

    def forward(self, x, train=True):
        self._shape = x.shape
        self._idx = np.argmax(x, axis=-2)
        return np.take_along_axis(x, self._idx[..., None, :], axis=-2)[..., 0, :]

    def backward(self, dy):
        dx = np.zeros(self._shape)
        np.put_along_axis(dx, self._idx[..., None, :], dy[..., None, :], axis=-2)
        return dx


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def out_shape(self, in_shape):
        if math.prod(in_shape) != math.prod(self.shape):
            raise ValueError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, train=True):
        self._in = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, dy):
        return dy.reshape(self._in)


def layer_from_spec(spec) -> Layer:
    kind = spec["kind"]
    if kind == "affine":
        return Dense(spec["in"], spec["out"])
    if kind == "conv1d-pointwise":
        return Pointwise(spec["in"], spec["out"])
    if kind == "batch-norm":
        return BatchNorm(spec["size"])
    if kind == "activation":
        return Activation(spec["name"])
    if kind == "max-pool-over-points":
        return MaxPool()
    if kind == "reshape":
        return Reshape(spec["shape"])
    raise ValueError(f"unknown layer kind {kind!r}")


# --------------------------------------------------------------------------
# presets

def _block(n_in, n_out, act, bn=True, pointwise=False):
    out = [(Pointwise if pointwise else Dense)(n_in, n_out)]
    if bn:
        out.append(BatchNorm(n_out))
    out.append(Activation(act))
    return out


def preset_layers(name: str, latent_dim: Optional[int] = None, q: int = 8, resolution: int = 512):
    """Encoder/decoder layer lists and the input shape of a named preset.

    ``marker``: 3q -> FC8 -> FC4 (code) -> FC8 -> FC3q, batch-norm after every
    hidden affine map, ReLU in the encoder, sigmoid in the decoder.
    ``marker-smooth``: same with tanh in the encoder.
    ``cloud``: pointwise 3 -> 8 -> 32 -> 64 (ReLU), max pool (code, 64),
    FC256 -> FC512 -> FC3N with sigmoid, reshaped to N x 3.
    """
    if name in ("marker", "marker-smooth"):
        k = 4 if latent_dim is None else int(latent_dim)
        act = "relu" if name == "marker" else "tanh"
        n = 3 * q
        enc = _block(n, 8, act) + _block(8, k, act)
        dec = _block(k, 8, "sigmoid") + _block(8, n, "sigmoid", bn=False)
        return enc, dec, (n,)
    if name == "cloud":
        k = 64 if latent_dim is None else int(latent_dim)
        enc = (_block(3, 8, "relu", pointwise=True) + _block(8, 32, "relu", pointwise=True)
               + _block(32, k, "relu", pointwise=True) + [MaxPool()])
        dec = (_block(k, 256, "sigmoid") + _block(256, 512, "sigmoid")
               + _block(512, 3 * resolution, "sigmoid", bn=False) + [Reshape((resolution, 3))])
        return enc, dec, (resolution, 3)
    raise ValueError(f"unknown preset {name!r}; expected marker, marker-smooth or cloud")


# --------------------------------------------------------------------------
# folded inference network

def _fold(layers):
    """Merge each affine/pointwise + batch-norm pair into one affine op."""
    ops = []
    i = 0
    while i < len(layers):
        lay = layers[i]
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if isinstance(lay, Dense):
            W, b = lay.W.copy(), lay.b.copy()
            if isinstance(nxt, BatchNorm):
                s = nxt.gamma / np.sqrt(nxt.running_var + nxt.eps)
                W = s[:, None] * W
                b = s * (b - nxt.running_mean) + nxt.beta
                i += 1
            ops.append(("pointwise" if isinstance(lay, Pointwise) else "affine", W, b))
        elif isinstance(lay, BatchNorm):
            s = lay.gamma / np.sqrt(lay.running_var + lay.eps)
            ops.append(("scale", s, lay.beta - s * lay.running_mean))
        elif isinstance(lay, Activation):
            ops.append(("act", lay.name))
        elif isinstance(lay, MaxPool):
            ops.append(("maxpool",))
        elif isinstance(lay, Reshape):
            ops.append(("reshape", lay.shape))
        i += 1
    return ops


def _pointwise_exact(x, W, b):
    # fixed channel-by-channel accumulation: each point's result is independent
    # of its row position, so point permutations permute the output exactly
    out = np.broadcast_to(b, x.shape[:-1] + (W.shape[0],)).copy()
    for j in range(W.shape[1]):
        out += x[..., j, None] * W[:, j]
    return out


def _run_single(ops, x):
    for op in ops:
        tag = op[0]
        if tag == "affine":
            x = op[1] @ x + op[2]
        elif tag == "pointwise":
            x = _pointwise_exact(x, op[1], op[2])
        elif tag == "scale":
            x = x * op[1] + op[2]
        elif tag == "act":
            x = activate(op[1], x)
        elif tag == "maxpool":
            x = x.max(axis=0)
        elif tag == "reshape":
            x = x.reshape(op[1])
    return x


# --------------------------------------------------------------------------
# model

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    validation_fraction: float = 0.1
    loss: Optional[str] = None  # defaults to the model's loss

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ValueError("learning rate must be nonnegative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.optimizer not in ("sgd", "sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")


@dataclass
class TrainingLog:
    initial_train_loss: float = float("nan")
    initial_val_loss: Optional[float] = None
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss

    @property
    def train_losses(self):
        return [e["train_loss"] for e in self.epochs]

    @property
    def val_losses(self):
        return [e["val_loss"] for e in self.epochs]

    @property
    def final_train_loss(self):
        return self.epochs[-1]["train_loss"] if self.epochs else self.initial_train_loss


class AutoencoderModel:
    """Encoder ``h`` and decoder/generator ``g`` with exact decoder Jacobians."""

    is_linear = False

    def __init__(self, encoder, decoder, input_shape, loss="mse", preset=None, seed=0):
        self.encoder = list(encoder)
        self.decoder = list(decoder)
        self.input_shape = tuple(input_shape)
        if loss not in ("mse", "chamfer"):
            raise ValueError(f"loss must be mse or chamfer, got {loss!r}")
        self.loss = loss
        self.preset = preset
        self.seed = seed
        self.normalization: Optional[NormalizationRecord] = None
        self.log = TrainingLog()
        shape = self.input_shape
        for lay in self.encoder:
            shape = lay.out_shape(shape)
        if len(shape) != 1:
            raise ValueError(f"encoder must end in a flat code, got shape {shape}")
        self.latent_dim = shape[0]
        for lay in self.decoder:
            shape = lay.out_shape(shape)
        self.output_shape = shape
        if math.prod(self.output_shape) != math.prod(self.input_shape):
            raise ValueError(f"decoder output {self.output_shape} does not match input {self.input_shape}")
        self._ops = None

    # parameters ----------------------------------------------------------
    @property
    def layers(self):
        return self.encoder + self.decoder

    def parameters(self):
        """``(layer, name)`` pairs in a fixed order."""
        return [(lay, n) for lay in self.layers for n in lay.param_names]

    def n_parameters(self) -> int:
        return sum(getattr(lay, n).size for lay, n in self.parameters())

    def get_vector(self) -> np.ndarray:
        return np.concatenate([getattr(lay, n).ravel() for lay, n in self.parameters()])

    def set_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for lay, n in self.parameters():
            cur = getattr(lay, n)
            setattr(lay, n, vec[pos:pos + cur.size].reshape(cur.shape).copy())
            pos += cur.size
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")
        self.invalidate()

    def gradient_vector(self) -> np.ndarray:
        return np.concatenate([getattr(lay, "d" + n).ravel() for lay, n in self.parameters()])

    def invalidate(self):
        self._ops = None

    def _folded(self):
        if self._ops is None:
            self._ops = (_fold(self.encoder), _fold(self.decoder))
        return self._ops

    # inference -------------------------------------------------------------
    def _prep_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x, False
        if x.ndim == len(self.input_shape) + 1 and x.shape[1:] == self.input_shape:
            return x, True
        if len(self.input_shape) == 1 and x.shape[-2:] != () and x.ndim >= 2:
            # (q, 3) marker arrays for a flattened-input model
            if math.prod(x.shape) == self.input_shape[0]:
                return x.reshape(self.input_shape), False
            if x.ndim == 3 and math.prod(x.shape[1:]) == self.input_shape[0]:
                return x.reshape(x.shape[0], -1), True
        raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")

    def encode(self, x) -> np.ndarray:
        """Latent code(s). Batches are encoded sample by sample."""
        x, batch = self._prep_input(x)
        ops = self._folded()[0]
        if batch:
            return np.stack([_run_single(ops, xi) for xi in x])
        return _run_single(ops, x)

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim or z.ndim > 2:
            raise ValueError(f"expected {self.latent_dim}-dim code(s), got shape {z.shape}")
        ops = self._folded()[1]
        if z.ndim == 2:
            return np.stack([_run_single(ops, zi) for zi in z])
        return _run_single(ops, z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def decoder_jacobian(self, z) -> np.ndarray:
        """``n x k`` Jacobian of the flattened decoder output at ``z`` (forward mode)."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ValueError(f"expected a {self.latent_dim}-dim code, got shape {z.shape}")
        x = z
        J = np.eye(self.latent_dim)
        for op in self._folded()[1]:
            tag = op[0]
            if tag == "affine":
                x = op[1] @ x + op[2]
                J = op[1] @ J
            elif tag == "scale":
                x = x * op[1] + op[2]
                J = op[1][:, None] * J
            elif tag == "act":
                pre = x
                x = activate(op[1], pre)
                J = activation_grad(op[1], pre, x)[:, None] * J
            elif tag == "reshape":
                pass
            else:
                raise ValueError(f"decoder op {tag!r} has no Jacobian rule")
        return J

    # Decoder protocol used by the geometry module
    def jacobian(self, z):
        return self.decoder_jacobian(z)

    def decode_flat(self, z):
        return self.decode(z).reshape(-1)

    # training-mode passes ---------------------------------------------------
    def forward_train(self, x, train=True):
        h = x
        for lay in self.encoder:
            h = lay.forward(h, train)
        code = h
        for lay in self.decoder:
            h = lay.forward(h, train)
        return code, h

    def backward(self, dout):
        g = dout
        for lay in reversed(self.decoder):
            g = lay.backward(g)
        for lay in reversed(self.encoder):
            g = lay.backward(g)
        return g

    def batch_loss(self, x, loss=None, train=True):
        """Mean reconstruction loss of a batch and its gradient w.r.t. the output."""
        loss = loss or self.loss
        _, y = self.forward_train(x, train)
        B = x.shape[0]
        if loss == "mse":
            diff = y - x
            return float((diff**2).mean()), 2.0 * diff / diff.size
        total = 0.0
        grad = np.empty_like(y)
        for b in range(B):
            val, g, _ = chamfer_with_grad(y[b], x[b])
            total += val
            grad[b] = g / B
        return total / B, grad

    def loss_and_grad(self, x, loss=None):
        """Training-mode loss on a batch; parameter gradients land in ``layer.d<name>``."""
        val, dout = self.batch_loss(x, loss, train=True)
        self.backward(dout)
        return val

    def recalibrate_batchnorm(self, x, chunk=256):
        """Set every batch-norm's running statistics to its population statistics on ``x``."""
        layers = self.layers
        for li, lay in enumerate(layers):
            if not isinstance(lay, BatchNorm):
                continue
            s1 = np.zeros(lay.n)
            s2 = np.zeros(lay.n)
            count = 0
            for lo in range(0, x.shape[0], chunk):
                h = x[lo:lo + chunk]
                for prev in layers[:li]:
                    h = prev.forward(h, train=False)
                flat = h.reshape(-1, lay.n)
                s1 += flat.sum(axis=0)
                count += flat.shape[0]
            mean = s1 / count
            for lo in range(0, x.shape[0], chunk):
                h = x[lo:lo + chunk]
                for prev in layers[:li]:
                    h = prev.forward(h, train=False)
                s2 += ((h.reshape(-1, lay.n) - mean) ** 2).sum(axis=0)
            lay.running_mean = mean
            lay.running_var = s2 / count
        self.invalidate()

    def eval_loss(self, x, loss=None, chunk=256) -> float:
        loss = loss or self.loss
        total = 0.0
        for lo in range(0, x.shape[0], chunk):
            xb = x[lo:lo + chunk]
            val, _ = self.batch_loss(xb, loss, train=False)
            total += val * xb.shape[0]
        return total / x.shape[0]

    # serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        params = []
        for lay in self.layers:
            entry = {n: {"shape": list(getattr(lay, n).shape), "data": getattr(lay, n).ravel().tolist()}
                     for n in lay.param_names}
            if isinstance(lay, BatchNorm):
                entry["running_mean"] = lay.running_mean.tolist()
                entry["running_var"] = lay.running_var.tolist()
            params.append(entry)
        return {
            "format": "softshape-autoencoder",
            "arch": {
                "preset": self.preset,
                "encoder": [lay.spec() for lay in self.encoder],
                "decoder": [lay.spec() for lay in self.decoder],
                "input_shape": list(self.input_shape),
                "latent_dim": self.latent_dim,
                "loss": self.loss,
                "seed": self.seed,
            },
            "params": params,
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
            "training_log": asdict(self.log),
        }

    @classmethod
    def from_dict(cls, d) -> "AutoencoderModel":
        arch = d["arch"]
        model = cls([layer_from_spec(s) for s in arch["encoder"]],
                    [layer_from_spec(s) for s in arch["decoder"]],
                    arch["input_shape"], arch["loss"], arch.get("preset"), arch.get("seed", 0))
        for lay, entry in zip(model.layers, d["params"]):
            for n in lay.param_names:
                setattr(lay, n, np.asarray(entry[n]["data"], dtype=np.float64).reshape(entry[n]["shape"]))
            if isinstance(lay, BatchNorm):
                lay.running_mean = np.asarray(entry["running_mean"], dtype=np.float64)
                lay.running_var = np.asarray(entry["running_var"], dtype=np.float64)
        if d.get("normalization"):
            model.normalization = NormalizationRecord.from_dict(d["normalization"])
        if d.get("training_log"):
            model.log = TrainingLog(**d["training_log"])
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_model(arch="marker", latent_dim=None, seed=0, q=8, resolution=512, loss=None) -> AutoencoderModel:
    """Build a preset by name or a custom ``{"encoder": [...], "decoder": [...], "input_shape": ...}``.

    Parameters are initialized from ``seed`` with Glorot-uniform weights, zero
    biases and unit batch-norm scales.
    """
    if isinstance(arch, str):
        enc, dec, in_shape = preset_layers(arch, latent_dim, q, resolution)
        preset = arch
        loss = loss or ("chamfer" if arch == "cloud" else "mse")
    else:
        enc = [lay if isinstance(lay, Layer) else layer_from_spec(lay) for lay in arch["encoder"]]
        dec = [lay if isinstance(lay, Layer) else layer_from_spec(lay) for lay in arch["decoder"]]
        in_shape = tuple(arch["input_shape"])
        preset = None
        loss = loss or "mse"
    model = AutoencoderModel(enc, dec, in_shape, loss, preset, seed)
    rng = np.random.default_rng(seed)
    for lay in model.layers:
        lay.init(rng)
    return model


# --------------------------------------------------------------------------
# optimizers

class _Optimizer:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr


class SGD(_Optimizer):
    def step(self, grads):
        for (lay, n), g in zip(self.params, grads):
            setattr(lay, n, getattr(lay, n) - self.lr * g)


class Momentum(_Optimizer):
    def __init__(self, params, lr, beta=0.9):
        super().__init__(params, lr)
        self.beta = beta
        self.v = [np.zeros_like(getattr(lay, n)) for lay, n in params]

    def step(self, grads):
        for i, ((lay, n), g) in enumerate(zip(self.params, grads)):
            self.v[i] = self.beta * self.v[i] + g
            setattr(lay, n, getattr(lay, n) - self.lr * self.v[i])


class Adam(_Optimizer):
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(getattr(lay, n)) for lay, n in params]
        self.v = [np.zeros_like(getattr(lay, n)) for lay, n in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, ((lay, n), g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            setattr(lay, n, getattr(lay, n) - upd)


def _make_optimizer(name, params, lr):
    return {"sgd": SGD, "sgd-momentum": Momentum, "adam": Adam}[name](params, lr)


def _training_array(model, data):
    if isinstance(data, ShapeDataset):
        if data.kind == "markers":
            if model.loss == "chamfer":
                raise ValueError("chamfer loss is for point-cloud models")
            x = data.feature_matrix()
        else:
            x = data.point_tensor()
    else:
        x = np.asarray(data, dtype=np.float64)
    x, batch = model._prep_input(x)
    if not batch:
        x = x[None]
    return x


def train(model: AutoencoderModel, data, config: TrainConfig = None, callback=None) -> TrainingLog:
    """Minibatch gradient descent on the mean reconstruction loss.

    ``data`` must already be normalized into the decoder's output range
    (``(0, 1)`` for the sigmoid presets). The log records the
    inference-mode loss on the training and validation splits before
    training and after every epoch.
    """
    config = config or TrainConfig()
    loss = config.loss or model.loss
    if loss == "chamfer" and len(model.input_shape) != 2:
        raise ValueError("chamfer loss requested for a marker model; use mse")
    x = _training_array(model, data)
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        if isinstance(model.decoder[-1], Activation) and model.decoder[-1].name == "sigmoid" or (
            isinstance(model.decoder[-1], Reshape) and isinstance(model.decoder[-2], Activation)
                and model.decoder[-2].name == "sigmoid"):
            raise ValueError("training data lies outside the sigmoid output range (0, 1); normalize it first")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(x.shape[0])
    n_val = int(round(config.validation_fraction * x.shape[0]))
    if n_val and x.shape[0] - n_val < 2:
        raise ValueError("not enough samples left for training after the validation split")
    x_val = x[order[:n_val]] if n_val else None
    x_tr = x[order[n_val:]]

    params = model.parameters()
    opt = _make_optimizer(config.optimizer, params, config.learning_rate)
    log = TrainingLog()

    def _record(epoch):
        model.recalibrate_batchnorm(x_tr)
        tr = model.eval_loss(x_tr, loss)
        va = model.eval_loss(x_val, loss) if x_val is not None else None
        if not np.isfinite(tr) or (va is not None and not np.isfinite(va)):
            raise TrainingError(f"non-finite loss at epoch {epoch}: train={tr}, val={va}")
        return tr, va

    log.initial_train_loss, log.initial_val_loss = _record(0)
    n_batches = max(1, math.ceil(x_tr.shape[0] / config.batch_size))
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(x_tr.shape[0])
        for bi, idx in enumerate(np.array_split(perm, n_batches)):
            val = model.loss_and_grad(x_tr[idx], loss)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite loss {val} at epoch {epoch}, batch {bi}")
            opt.step([getattr(lay, "d" + n) for lay, n in params])
        tr, va = _record(epoch)
        log.epochs.append({"epoch": epoch, "train_loss": tr, "val_loss": va})
        if callback is not None:
            callback(epoch, tr, va)
    model.log = log
    model.invalidate()
    return log


def pointnet_features(model: AutoencoderModel, cloud) -> np.ndarray:
    """Permutation-invariant global feature of a cloud (the cloud model's code)."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    if len(model.input_shape) != 2:
        raise ValueError("pointnet_features needs a point-cloud model")
    if pts.shape != model.input_shape:
        raise ValueError(f"cloud has shape {pts.shape}; model expects {model.input_shape}")
    return model.encode(pts)


def encode(model, x):
    return model.encode(x)


def decode(model, z):
    return model.decode(z)


def decoder_jacobian(model, z):
    return model.decoder_jacobian(z)
