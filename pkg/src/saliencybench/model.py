"""Reference micro-CNN and the abstract classifier contract.

The network vocabulary is fixed (conv 3x3 pad 1, relu, maxpool 2, flatten,
dense, softmax head) but depth and width are configurable. Everything runs on
numpy, single image or small batch, so every propagation rule (plain backward,
guided backward, excitation) is fully introspectable.

Weights live in float64 in memory; the on-disk format (magic ``SBMC0001``)
stores float32 blobs after a JSON header.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapabilityMissingError,
    ClassOutOfRangeError,
    DivergedError,
    IOFormatError,
    ShapeMismatchError,
    UnknownLayerError,
)
from .tensors import Image, as_f64, require_finite

MODEL_MAGIC = b"SBMC0001"


class Capability(str, enum.Enum):
    PREDICT = "PREDICT"
    INPUT_GRAD = "INPUT_GRAD"
    LAYER_INTROSPECT = "LAYER_INTROSPECT"
    GUIDED = "GUIDED"
    EXCITATION = "EXCITATION"


def require_capability(model: "ModelHandle", cap: Capability) -> None:
    if cap not in model.capabilities:
        raise CapabilityMissingError(f"model lacks capability {cap.value}")


def check_class_index(model: "ModelHandle", class_index: int) -> None:
    if not 0 <= class_index < model.num_classes:
        raise ClassOutOfRangeError(
            f"class {class_index} out of range [0, {model.num_classes})"
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ModelHandle:
    """Opaque classifier contract: predict always, the rest by capability."""

    num_classes: int = 0
    capabilities: frozenset = frozenset({Capability.PREDICT})
    input_shape: tuple = ()
    target_layer: str | None = None
    model_id: str = "model"

    @property
    def layer_names(self) -> tuple:
        return ()

    def predict(self, image: Image) -> np.ndarray:
        raise NotImplementedError

    def input_gradient(self, image: Image, class_index: int, post_softmax: bool = False) -> np.ndarray:
        raise CapabilityMissingError("INPUT_GRAD not available")

    def layer_activations_and_gradients(self, image: Image, class_index: int, layer_name: str):
        raise CapabilityMissingError("LAYER_INTROSPECT not available")

    def guided_backward(self, image: Image, class_index: int) -> np.ndarray:
        raise CapabilityMissingError("GUIDED not available")

    def excitation_propagate(self, image: Image, class_index: int, layer_name: str,
                             contrastive: bool = False, counters: dict | None = None) -> np.ndarray:
        raise CapabilityMissingError("EXCITATION not available")

    def _check_image(self, image: Image) -> np.ndarray:
        arr = image.array if isinstance(image, Image) else as_f64(image)
        if tuple(arr.shape) != tuple(self.input_shape):
            raise ShapeMismatchError(
                f"image shape {tuple(arr.shape)} != model input {tuple(self.input_shape)}"
            )
        return arr


class FunctionModel(ModelHandle):
    """PREDICT-only handle wrapping a plain callable on the pixel array.

    Used for hand-constructed "models" in tests and baselines; the callable
    defines its own output semantics (no softmax is applied).
    """

    def __init__(self, fn, num_classes: int, input_shape: tuple, model_id: str = "fn"):
        self.fn = fn
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)
        self.capabilities = frozenset({Capability.PREDICT})
        self.model_id = model_id

    def predict(self, image: Image) -> np.ndarray:
        arr = self._check_image(image)
        out = np.asarray(self.fn(arr), dtype=np.float64).reshape(-1)
        if out.shape[0] != self.num_classes:
            raise ShapeMismatchError(
                f"callable returned {out.shape[0]} scores, expected {self.num_classes}"
            )
        return out


# ---------------------------------------------------------------------------
# conv plumbing (stride 1 only; pad chosen per layer)

def _im2col_indices(h: int, w: int, k: int):
    i0 = np.repeat(np.arange(k), k)
    j0 = np.tile(np.arange(k), k)
    oh, ow = h - k + 1, w - k + 1
    i1 = np.repeat(np.arange(oh), ow)
    j1 = np.tile(np.arange(ow), oh)
    rows = i1[:, None] + i0[None, :]
    cols = j1[:, None] + j0[None, :]
    return rows, cols, oh, ow


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, pad: int):
    """x: [n, cin, h, w]; weight: [cout, cin, k, k]. Returns (out, cols)."""
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    rows, cols_idx, oh, ow = _im2col_indices(h + 2 * pad, w + 2 * pad, k)
    cols = xp[:, :, rows, cols_idx]                      # [n, cin, oh*ow, k*k]
    cols = cols.transpose(0, 2, 1, 3).reshape(n, oh * ow, cin * k * k)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += bias
    out = out.transpose(0, 2, 1).reshape(n, cout, oh, ow)
    return out, cols


def conv2d_input_grad(grad_out: np.ndarray, weight: np.ndarray, pad: int) -> np.ndarray:
    """Stride-1 trick: d(input) is a conv of grad_out with rotated kernels."""
    k = weight.shape[2]
    w_rot = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [cin, cout, k, k]
    out, _ = conv2d_forward(grad_out, np.ascontiguousarray(w_rot), None, k - 1 - pad)
    return out


# ---------------------------------------------------------------------------
# layers

class _Layer:
    name: str
    kind: str

    def params(self) -> dict:
        return {}

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, cache):
        """Returns (grad_in, param_grads dict)."""
        raise NotImplementedError


class Conv2d(_Layer):
    kind = "conv"

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int = 3, pad: int = 1):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.pad = pad
        self.weight = np.zeros((out_channels, in_channels, kernel, kernel))
        self.bias = np.zeros(out_channels)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def init(self, rng: np.random.Generator):
        fan_in = self.in_channels * self.kernel * self.kernel
        self.weight = rng.standard_normal(self.weight.shape) * np.sqrt(2.0 / fan_in)
        self.bias = np.zeros(self.out_channels)

    def forward(self, x):
        out, cols = conv2d_forward(x, self.weight, self.bias, self.pad)
        return out, (cols, x.shape)

    def backward(self, grad_out, cache):
        cols, x_shape = cache
        n = x_shape[0]
        g = grad_out.reshape(n, self.out_channels, -1).transpose(0, 2, 1)  # [n, oh*ow, cout]
        dw = np.einsum("npo,npc->oc", g, cols).reshape(self.weight.shape)
        db = g.sum(axis=(0, 1))
        dx = conv2d_input_grad(grad_out, self.weight, self.pad)
        return dx, {"weight": dw, "bias": db}


class ReLU(_Layer):
    kind = "relu"

    def __init__(self, name: str):
        self.name = name

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad_out, cache):
        return grad_out * cache, {}


class MaxPool2d(_Layer):
    kind = "maxpool"

    def __init__(self, name: str, size: int = 2):
        self.name = name
        self.size = size

    def forward(self, x):
        n, c, h, w = x.shape
        s = self.size
        if h % s or w % s:
            raise ShapeMismatchError(f"pool input {h}x{w} not divisible by {s}")
        v = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        v = v.reshape(n, c, h // s, w // s, s * s)
        idx = v.argmax(axis=-1)
        out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, grad_out, cache):
        idx, x_shape = cache
        n, c, h, w = x_shape
        s = self.size
        flat = np.zeros((n, c, h // s, w // s, s * s))
        np.put_along_axis(flat, idx[..., None], grad_out[..., None], axis=-1)
        dx = flat.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(x_shape), {}

    def route_signal(self, signal, cache):
        """Winner-take-all routing used by excitation propagation."""
        dx, _ = self.backward(signal, cache)
        return dx


class Flatten(_Layer):
    kind = "flatten"

    def __init__(self, name: str):
        self.name = name

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache), {}


class Dense(_Layer):
    kind = "dense"

    def __init__(self, name: str, in_dim: int, out_dim: int):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = np.zeros((out_dim, in_dim))
        self.bias = np.zeros(out_dim)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def init(self, rng: np.random.Generator):
        self.weight = rng.standard_normal(self.weight.shape) * np.sqrt(2.0 / self.in_dim)
        self.bias = np.zeros(self.out_dim)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, grad_out, cache):
        dw = grad_out.T @ cache
        db = grad_out.sum(axis=0)
        dx = grad_out @ self.weight
        return dx, {"weight": dw, "bias": db}


# ---------------------------------------------------------------------------
# excitation propagation primitives (top-down probability flow)

def ebp_unit_distribution(weight_row: np.ndarray, child_activations: np.ndarray) -> np.ndarray:
    """Per-child probability row for one parent unit.

    Children with negative weight get zero; the rest share mass in proportion
    to activation * weight. Returns the zero row when no nonnegative-weight
    child carries activation mass (degenerate unit).
    """
    wp = np.maximum(weight_row, 0.0)
    scores = child_activations * wp
    denom = scores.sum()
    if denom <= 0.0:
        return np.zeros_like(scores)
    return scores / denom


def _ebp_dense(signal: np.ndarray, weight: np.ndarray, child_acts: np.ndarray,
               counters: dict | None) -> np.ndarray:
    """signal: [out]; weight: [out, in]; child_acts: [in] (>= 0)."""
    wp = np.maximum(weight, 0.0)
    denom = wp @ child_acts
    live = denom > 0.0
    dead = int(np.count_nonzero((~live) & (signal != 0)))
    if counters is not None and dead:
        counters["degenerate_units"] = counters.get("degenerate_units", 0) + dead
    ratio = np.where(live, signal / np.where(live, denom, 1.0), 0.0)
    return child_acts * (ratio @ wp)


def _ebp_conv(signal: np.ndarray, layer: Conv2d, child_acts: np.ndarray,
              counters: dict | None) -> np.ndarray:
    """signal: [cout, oh, ow]; child_acts: [cin, h, w] (>= 0), both unbatched."""
    wp = np.maximum(layer.weight, 0.0)
    denom, _ = conv2d_forward(child_acts[None], wp, None, layer.pad)
    denom = denom[0]
    live = denom > 0.0
    dead = int(np.count_nonzero((~live) & (signal != 0)))
    if counters is not None and dead:
        counters["degenerate_units"] = counters.get("degenerate_units", 0) + dead
    ratio = np.where(live, signal / np.where(live, denom, 1.0), 0.0)
    spread = conv2d_input_grad(ratio[None], wp, layer.pad)[0]
    return child_acts * spread


# ---------------------------------------------------------------------------
# the micro-CNN

@dataclass(frozen=True)
class MicroCnnConfig:
    in_channels: int = 3
    image_size: int = 64
    conv_channels: tuple = (8, 16)
    dense_units: tuple = (64,)
    num_classes: int = 10

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ShapeMismatchError("in_channels must be 1 or 3")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.conv_channels:
            raise ValueError("need at least one conv block")
        if self.image_size % (2 ** len(self.conv_channels)):
            raise ShapeMismatchError(
                f"image_size {self.image_size} not divisible by 2^{len(self.conv_channels)}"
            )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "image_size": self.image_size,
            "conv_channels": list(self.conv_channels),
            "dense_units": list(self.dense_units),
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "MicroCnnConfig":
        return MicroCnnConfig(
            in_channels=int(d["in_channels"]),
            image_size=int(d["image_size"]),
            conv_channels=tuple(d["conv_channels"]),
            dense_units=tuple(d["dense_units"]),
            num_classes=int(d["num_classes"]),
        )


@dataclass
class LayerTrace:
    """Activations and backward signals from one forward/backward pass."""

    layer_names: list
    activations: dict
    backward_signals: dict


class MicroCnn(ModelHandle):
    """Conv/relu/pool stack + dense head with a softmax output.

    Layer names run conv1, relu1, pool1, conv2, ... flatten, dense1, ...
    ``target_layer`` defaults to the last conv (used by the layer-space
    explainers).
    """

    def __init__(self, config: MicroCnnConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.layers: list = []
        relu_count = 0

        in_ch = config.in_channels
        size = config.image_size
        for i, out_ch in enumerate(config.conv_channels, start=1):
            self.layers.append(Conv2d(f"conv{i}", in_ch, out_ch))
            relu_count += 1
            self.layers.append(ReLU(f"relu{relu_count}"))
            self.layers.append(MaxPool2d(f"pool{i}"))
            in_ch = out_ch
            size //= 2
        self.layers.append(Flatten("flatten"))
        in_dim = in_ch * size * size
        for j, units in enumerate(config.dense_units, start=1):
            self.layers.append(Dense(f"dense{j}", in_dim, units))
            relu_count += 1
            self.layers.append(ReLU(f"relu{relu_count}"))
            in_dim = units
        self.layers.append(Dense(f"dense{len(config.dense_units) + 1}", in_dim, config.num_classes))

        self._by_name = {layer.name: i for i, layer in enumerate(self.layers)}
        self.num_classes = config.num_classes
        self.input_shape = (config.in_channels, config.image_size, config.image_size)
        self.capabilities = frozenset(Capability)
        self.target_layer = f"conv{len(config.conv_channels)}"
        self.model_id = f"microcnn-s{seed}-c{config.num_classes}"

        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if hasattr(layer, "init"):
                layer.init(rng)

    # -- introspection -----------------------------------------------------

    @property
    def layer_names(self) -> tuple:
        return tuple(layer.name for layer in self.layers)

    def layer(self, name: str) -> _Layer:
        if name not in self._by_name:
            raise UnknownLayerError(f"no layer named {name!r}")
        return self.layers[self._by_name[name]]

    def weights_in_order(self):
        """(label, array) pairs in declaration order; the save format order."""
        out = []
        for layer in self.layers:
            for pname, arr in layer.params().items():
                out.append((f"{layer.name}.{pname}", arr))
        return out

    def set_weights(self, named: dict) -> None:
        for layer in self.layers:
            for pname in layer.params():
                key = f"{layer.name}.{pname}"
                arr = as_f64(named[key])
                if arr.shape != layer.params()[pname].shape:
                    raise ShapeMismatchError(f"weight {key}: shape {arr.shape}")
                setattr(layer, pname, arr)

    # -- forward / backward ------------------------------------------------

    def _forward(self, x: np.ndarray):
        caches = []
        acts = [x]
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
            acts.append(x)
        return x, caches, acts

    def _backward(self, grad_logits: np.ndarray, caches, guided: bool = False):
        grad = grad_logits
        signals = [grad]
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            if guided and isinstance(layer, ReLU):
                grad = grad * cache * (grad > 0)
            else:
                grad, _ = layer.backward(grad, cache)
            signals.append(grad)
        signals.reverse()
        return grad, signals

    def logits(self, image: Image) -> np.ndarray:
        arr = self._check_image(image)
        out, _, _ = self._forward(arr[None])
        return out[0]

    def logits_batch(self, batch: np.ndarray) -> np.ndarray:
        out, _, _ = self._forward(as_f64(batch))
        return out

    def predict(self, image: Image) -> np.ndarray:
        return softmax(self.logits(image))

    def input_gradient(self, image: Image, class_index: int, post_softmax: bool = False) -> np.ndarray:
        """Gradient of the class score w.r.t. input pixels.

        The score is the pre-softmax logit by default; ``post_softmax=True``
        differentiates the softmax probability instead.
        """
        check_class_index(self, class_index)
        arr = self._check_image(image)
        logits, caches, _ = self._forward(arr[None])
        seed = np.zeros((1, self.num_classes))
        if post_softmax:
            p = softmax(logits[0])
            seed[0] = p[class_index] * (np.eye(self.num_classes)[class_index] - p)
        else:
            seed[0, class_index] = 1.0
        grad, _ = self._backward(seed, caches)
        return grad[0]

    def layer_activations_and_gradients(self, image: Image, class_index: int, layer_name: str):
        """Output activations of the named layer and d(logit_c)/d(those)."""
        check_class_index(self, class_index)
        idx = self._by_name.get(layer_name)
        if idx is None:
            raise UnknownLayerError(f"no layer named {layer_name!r}")
        arr = self._check_image(image)
        _, caches, acts = self._forward(arr[None])
        grad = np.zeros((1, self.num_classes))
        grad[0, class_index] = 1.0
        for layer, cache in zip(reversed(self.layers[idx + 1:]), reversed(caches[idx + 1:])):
            grad, _ = layer.backward(grad, cache)
        return acts[idx + 1][0], grad[0]

    def forward_from(self, layer_name: str, activations: np.ndarray) -> np.ndarray:
        """Run the layers after ``layer_name`` on given activations (unbatched)."""
        idx = self._by_name.get(layer_name)
        if idx is None:
            raise UnknownLayerError(f"no layer named {layer_name!r}")
        x = as_f64(activations)[None]
        for layer in self.layers[idx + 1:]:
            x, _ = layer.forward(x)
        return x[0]

    def guided_backward(self, image: Image, class_index: int) -> np.ndarray:
        """Backward pass that zeroes negative flows at every relu."""
        check_class_index(self, class_index)
        arr = self._check_image(image)
        _, caches, _ = self._forward(arr[None])
        seed = np.zeros((1, self.num_classes))
        seed[0, class_index] = 1.0
        grad, _ = self._backward(seed, caches, guided=True)
        return grad[0]

    def trace(self, image: Image, class_index: int) -> LayerTrace:
        check_class_index(self, class_index)
        arr = self._check_image(image)
        _, caches, acts = self._forward(arr[None])
        seed = np.zeros((1, self.num_classes))
        seed[0, class_index] = 1.0
        _, signals = self._backward(seed, caches)
        names = self.layer_names
        # activations[i] is the output of layer i; signals[i] the gradient there
        return LayerTrace(
            layer_names=list(names),
            activations={n: acts[i + 1][0] for i, n in enumerate(names)},
            backward_signals={n: signals[i + 1][0] for i, n in enumerate(names)},
        )

    # -- excitation --------------------------------------------------------

    def _propagate_excitation(self, class_index: int, stop_idx: int, acts, caches,
                              top_weight: np.ndarray, counters: dict | None) -> np.ndarray:
        top = self.layers[-1]
        signal = _ebp_dense(
            np.eye(self.num_classes)[class_index], top_weight, acts[-2][0], counters,
        )
        for i in range(len(self.layers) - 2, stop_idx, -1):
            layer = self.layers[i]
            if isinstance(layer, ReLU):
                continue  # excitation treats the nonlinearity as part of the unit
            if isinstance(layer, Dense):
                signal = _ebp_dense(signal, layer.weight, acts[i][0], counters)
            elif isinstance(layer, Conv2d):
                signal = _ebp_conv(signal, layer, acts[i][0], counters)
            elif isinstance(layer, MaxPool2d):
                signal = layer.route_signal(signal[None], caches[i])[0]
            elif isinstance(layer, Flatten):
                signal = signal.reshape(acts[i][0].shape)
        return signal

    def excitation_propagate(self, image: Image, class_index: int, layer_name: str | None = None,
                             contrastive: bool = False, counters: dict | None = None) -> np.ndarray:
        """Top-down probability signal at the named layer, channel-summed.

        Mass flows only through nonnegative weights; a unit whose outgoing
        row cannot be normalized loses its mass (counted in ``counters``
        under ``degenerate_units``). With ``contrastive`` the signal from a
        dual output unit (negated final-layer weights for the class) is
        subtracted.
        """
        check_class_index(self, class_index)
        layer_name = layer_name or self.target_layer
        idx = self._by_name.get(layer_name)
        if idx is None:
            raise UnknownLayerError(f"no layer named {layer_name!r}")
        arr = self._check_image(image)
        _, caches, acts = self._forward(arr[None])

        top = self.layers[-1]
        if not isinstance(top, Dense):
            raise UnknownLayerError("excitation needs a dense output layer")
        signal = self._propagate_excitation(class_index, idx, acts, caches, top.weight, counters)
        if contrastive:
            dual_weight = top.weight.copy()
            dual_weight[class_index] = -dual_weight[class_index]
            dual = self._propagate_excitation(class_index, idx, acts, caches, dual_weight, counters)
            signal = signal - dual
        if signal.ndim == 3:  # [c, h, w] -> channel sum
            return signal.sum(axis=0)
        return signal


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    model: MicroCnn
    train_accuracy: float
    epoch_losses: list = field(default_factory=list)


def _xent_and_grad(logits: np.ndarray, labels: np.ndarray):
    n = logits.shape[0]
    p = softmax(logits)
    eps = 1e-12
    loss = -np.log(p[np.arange(n), labels] + eps).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train_micro_cnn(images: np.ndarray, labels: np.ndarray, epochs: int,
                    learning_rate: float, seed: int,
                    config: MicroCnnConfig | None = None,
                    batch_size: int = 32) -> TrainResult:
    """Plain SGD with cross-entropy, deterministic for a fixed seed.

    ``images`` is [n, ch, h, w] in [0, 1]; raises DIVERGED if the loss goes
    non-finite.
    """
    images = as_f64(images)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("images must be a nonempty [n, ch, h, w] array")
    if images.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("images / labels length mismatch")

    if config is None:
        config = MicroCnnConfig(
            in_channels=images.shape[1],
            image_size=images.shape[2],
            num_classes=int(labels.max()) + 1,
        )
    if labels.min() < 0 or labels.max() >= config.num_classes:
        raise ClassOutOfRangeError("label outside [0, num_classes)")

    model = MicroCnn(config, seed=seed)
    rng = np.random.default_rng(seed + 1)  # shuffle stream separate from init
    n = images.shape[0]
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            x, y = images[sel], labels[sel]
            logits, caches, _ = model._forward(x)
            loss, grad = _xent_and_grad(logits, y)
            if not np.isfinite(loss):
                raise DivergedError(f"loss became non-finite ({loss})")
            total += loss * len(sel)
            for layer, cache in zip(reversed(model.layers), reversed(caches)):
                grad, pgrads = layer.backward(grad, cache)
                for pname, g in pgrads.items():
                    setattr(layer, pname, getattr(layer, pname) - learning_rate * g)
        epoch_losses.append(total / n)
        for _, arr in model.weights_in_order():
            require_finite(arr, "weights")

    correct = 0
    for start in range(0, n, 256):
        logits = model.logits_batch(images[start:start + 256])
        correct += int((logits.argmax(axis=1) == labels[start:start + 256]).sum())
    return TrainResult(model=model, train_accuracy=correct / n, epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# persistence: magic + u32 header length + JSON header + float32 LE blobs

def save_model(model: MicroCnn, path) -> None:
    blobs = []
    entries = []
    offset = 0
    for label, arr in model.weights_in_order():
        raw = np.asarray(arr, dtype="<f4").tobytes()
        entries.append({"name": label, "shape": list(arr.shape), "offset": offset,
                        "size": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": MODEL_MAGIC.decode(),
        "config": model.config.to_dict(),
        "seed": model.seed,
        "target_layer": model.target_layer,
        "model_id": model.model_id,
        "weights": entries,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        for raw in blobs:
            f.write(raw)


def load_model(path) -> MicroCnn:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MODEL_MAGIC:
        raise IOFormatError(f"bad magic in {path}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen])
    body = blob[12 + hlen:]
    model = MicroCnn(MicroCnnConfig.from_dict(header["config"]), seed=int(header["seed"]))
    model.target_layer = header.get("target_layer", model.target_layer)
    model.model_id = header.get("model_id", model.model_id)
    named = {}
    for entry in header["weights"]:
        raw = body[entry["offset"]: entry["offset"] + entry["size"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        named[entry["name"]] = arr
    model.set_weights(named)
    return model
