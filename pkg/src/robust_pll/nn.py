"""Minimal dense feed-forward network with reverse-mode gradients.

Arrays are plain C-contiguous float64 ndarrays; a model is a stack of
fully-connected layers with ReLU hidden activations and either a ReLU or
a softmax output head.  The ReLU head keeps outputs non-negative, which
downstream code relies on when interpreting them as class evidence.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError

_MAGIC = b"RPLLMDL1"
_ACTIVATION_CODES = {"relu": 0, "softmax": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "relu"

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray


def init_mlp(layer_dims, seed=0, output_activation="relu", rng=None):
    """Create a model with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    weights and zero biases.  Small initial weights keep initial evidence
    small, so fresh models start out close to maximally uncertain."""
    if len(layer_dims) < 2:
        raise ShapeError("need at least an input and an output dimension")
    if any(int(d) < 1 for d in layer_dims):
        raise ShapeError(f"layer dims must be positive, got {layer_dims}")
    if output_activation not in _ACTIVATION_CODES:
        raise ValueError(f"unknown output activation {output_activation!r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, output_activation)


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} features, model expects {model.input_dim}"
        )
    return batch


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_cached(model, batch):
    """Forward pass returning (output, cache); the cache holds the
    pre-activations and activations needed by the backward pass."""
    batch = _check_batch(model, batch)
    activations = [batch]
    pre = []
    a = batch
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
        elif model.output_activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = _softmax(z)
        activations.append(a)
    return activations[-1], (pre, activations)


def forward(model, batch):
    """Batch of inputs -> batch of outputs (non-negative for the ReLU
    head, a probability row for the softmax head)."""
    out, _ = forward_cached(model, batch)
    return out


def backward_from_cache(model, cache, loss_grad):
    """Reverse-mode pass given a forward cache and the gradient of a
    scalar loss w.r.t. the model output."""
    pre, activations = cache
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != activations[-1].shape:
        raise ShapeError(
            f"loss_grad shape {loss_grad.shape} does not match output "
            f"shape {activations[-1].shape}"
        )
    if model.output_activation == "relu":
        dz = loss_grad * (pre[-1] > 0.0)
    else:
        s = activations[-1]
        dz = s * (loss_grad - (loss_grad * s).sum(axis=1, keepdims=True))
    return _backprop_linear(model, cache, dz)


def _backprop_linear(model, cache, dz):
    """Backward pass from the gradient w.r.t. the last pre-activation."""
    pre, activations = cache
    n_layers = len(model.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        d_weights[l] = activations[l].T @ dz
        d_biases[l] = dz.sum(axis=0)
        da = dz @ model.weights[l].T
        if l > 0:
            dz = da * (pre[l - 1] > 0.0)
        else:
            dz = da
    return Gradients(d_weights, d_biases, dz)


def backward(model, batch, loss_grad):
    """Gradients of a scalar loss w.r.t. every parameter tensor (and the
    input batch), given the loss gradient w.r.t. the model output."""
    _, cache = forward_cached(model, batch)
    return backward_from_cache(model, cache, loss_grad)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m_weights: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)


def init_adam(model, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    state = AdamState(learning_rate, beta1, beta2, epsilon)
    state.m_weights = [np.zeros_like(w) for w in model.weights]
    state.v_weights = [np.zeros_like(w) for w in model.weights]
    state.m_biases = [np.zeros_like(b) for b in model.biases]
    state.v_biases = [np.zeros_like(b) for b in model.biases]
    return state


def adam_step(state, model, grads, context=None):
    """One bias-corrected Adam update, in place."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            where = f" ({context})" if context else ""
            raise TrainingError(f"non-finite gradient{where}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for m, v, p, g in (
        list(zip(state.m_weights, state.v_weights, model.weights, grads.weights))
        + list(zip(state.m_biases, state.v_biases, model.biases, grads.biases))
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def num_params(model):
    return sum(w.size for w in model.weights) + sum(b.size for b in model.biases)


def get_flat_params(model):
    return np.concatenate(
        [w.ravel() for w in model.weights] + [b.ravel() for b in model.biases]
    )


def set_flat_params(model, flat):
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != num_params(model):
        raise ShapeError(f"expected {num_params(model)} params, got {flat.size}")
    pos = 0
    for w in model.weights:
        w[...] = flat[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    for b in model.biases:
        b[...] = flat[pos : pos + b.size].reshape(b.shape)
        pos += b.size


def save_model(model, path):
    """Checkpoint layout: magic, u32 layer count, u32 layer dims, u8
    output-activation code, then per layer the weight matrix (row-major)
    and bias vector as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(model.layer_dims)))
        for d in model.layer_dims:
            fh.write(struct.pack("<I", d))
        fh.write(struct.pack("<B", _ACTIVATION_CODES[model.output_activation]))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path):
    from .errors import FormatError

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    pos = 8
    (n_dims,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if n_dims < 2 or n_dims > 1000:
        raise FormatError(f"{path}: implausible layer count {n_dims} at offset 8")
    dims = []
    for _ in range(n_dims):
        (d,) = struct.unpack_from("<I", blob, pos)
        dims.append(d)
        pos += 4
    (act_code,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if act_code not in _ACTIVATION_NAMES:
        raise FormatError(f"{path}: unknown activation code {act_code} at offset {pos - 1}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n_bytes = fan_in * fan_out * 8
        if pos + n_bytes + fan_out * 8 > len(blob):
            raise FormatError(f"{path}: truncated parameter block at offset {pos}")
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=pos)
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        pos += n_bytes
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos)
        biases.append(b.astype(np.float64))
        pos += fan_out * 8
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes at offset {pos}")
    return MlpModel(dims, weights, biases, _ACTIVATION_NAMES[act_code])
