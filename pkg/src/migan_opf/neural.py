"""Dense MLPs with hand-written backprop, RMSProp and weight clipping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEAKY_RELU = "leaky_relu"
LINEAR = "linear"


@dataclass
class TrainHyper:
    learning_rate: float = 5e-5
    rms_decay: float = 0.9
    clip_value: float = 0.01
    batch_size: int = 50
    iterations: int = 2000
    leaky_slope: float = 0.2
    noise_dim: int = 32
    hidden: int = 64
    n_critic: int = 1
    eps: float = 1e-8

    def __post_init__(self):
        if self.clip_value <= 0:
            raise ValueError("clip_value must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    biases: np.ndarray  # (fan_out,)
    activation: str = LEAKY_RELU
    slope: float = 0.2
    grad_w: np.ndarray = field(default=None, repr=False)
    grad_b: np.ndarray = field(default=None, repr=False)
    rms_w: np.ndarray = field(default=None, repr=False)
    rms_b: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        self.grad_w = np.zeros_like(self.weights)
        self.grad_b = np.zeros_like(self.biases)
        self.rms_w = np.zeros_like(self.weights)
        self.rms_b = np.zeros_like(self.biases)

    def params(self):
        return ((self.weights, self.grad_w, self.rms_w), (self.biases, self.grad_b, self.rms_b))


class MlpNet:
    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers
        self._cache = None

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input has shape {x.shape}, expected (batch, {self.in_dim})")
        cache = []
        a = x
        for layer in self.layers:
            z = a @ layer.weights + layer.biases
            cache.append((a, z))
            if layer.activation == LEAKY_RELU:
                a = np.where(z > 0, z, layer.slope * z)
            else:
                a = z
        self._cache = cache
        return a

    __call__ = forward

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Fill parameter gradients from ``dL/d(output)``; return ``dL/d(input)``."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        g = np.asarray(grad_out, dtype=float)
        for layer, (a, z) in zip(reversed(self.layers), reversed(self._cache)):
            if layer.activation == LEAKY_RELU:
                g = g * np.where(z > 0, 1.0, layer.slope)
            layer.grad_w[...] = a.T @ g
            layer.grad_b[...] = g.sum(axis=0)
            g = g @ layer.weights.T
        return g

    def parameters(self):
        for layer in self.layers:
            yield from layer.params()

    def clip(self, value: float) -> None:
        for p, _, _ in self.parameters():
            np.clip(p, -value, value, out=p)

    def copy(self) -> MlpNet:
        return MlpNet([
            Layer(l.weights.copy(), l.biases.copy(), l.activation, l.slope) for l in self.layers
        ])

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p, _, _ in self.parameters()])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([g.ravel() for _, g, _ in self.parameters()])


def build_mlp(sizes, activations, rng: np.random.Generator, leaky_slope: float = 0.2) -> MlpNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised dense net."""
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Layer(w, b, act, leaky_slope))
    return MlpNet(layers)


def make_generator(noise_dim: int, out_dim: int, rng, hidden: int = 64, leaky_slope: float = 0.2) -> MlpNet:
    # five dense layers, linear output
    sizes = [noise_dim] + [hidden] * 4 + [out_dim]
    return build_mlp(sizes, [LEAKY_RELU] * 4 + [LINEAR], rng, leaky_slope)


def make_discriminator(in_dim: int, rng, hidden: int = 64, leaky_slope: float = 0.2) -> MlpNet:
    # three dense layers, all leaky
    sizes = [in_dim, hidden, hidden, 1]
    return build_mlp(sizes, [LEAKY_RELU] * 3, rng, leaky_slope)


def rmsprop_step(net: MlpNet, hyper: TrainHyper, clip: bool = False) -> None:
    lr, decay, eps = hyper.learning_rate, hyper.rms_decay, hyper.eps
    for p, g, cache in net.parameters():
        cache *= decay
        cache += (1.0 - decay) * g * g
        p -= lr * g / (np.sqrt(cache) + eps)
    if clip:
        net.clip(hyper.clip_value)


def save_checkpoint(net: MlpNet, path: str | Path) -> None:
    doc = {
        "layers": [
            {
                "shape": list(l.weights.shape),
                "activation": l.activation,
                "slope": l.slope,
                "weights": l.weights.ravel().tolist(),
                "biases": l.biases.tolist(),
            }
            for l in net.layers
        ]
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> MlpNet:
    doc = json.loads(Path(path).read_text())
    layers = [
        Layer(np.array(d["weights"]).reshape(d["shape"]), np.array(d["biases"]), d["activation"], d["slope"])
        for d in doc["layers"]
    ]
    return MlpNet(layers)
