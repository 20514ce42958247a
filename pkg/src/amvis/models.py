"""Small CNN and tiny ViT with named activation taps, plus training and weight I/O.

A :class:`ModelGraph` is an ordered list of layers. Some layers carry a tap
name, and :meth:`ModelGraph.activations_at` runs the forward pass only as far
as that tap. The result stays attached to the autodiff graph, so gradients
with respect to the input are available.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lmt
from . import tensor as T
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


class CorruptWeightsError(ValueError):
    """Weight file is truncated, fails its checksum, or does not match the model."""


class TrainingDiverged(RuntimeError):
    pass


# -- layers ------------------------------------------------------------------------------


class Layer:
    tap: str | None = None

    def params(self) -> dict[str, Tensor]:
        return {}

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name: str, cin: int, cout: int, k: int, padding: int, rng: np.random.Generator):
        std = math.sqrt(2.0 / (cin * k * k))
        self.weight = Tensor(rng.normal(0.0, std, (cout, cin, k, k)).astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        self.name, self.padding, self.k, self.cout = name, padding, k, cout

    def params(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def out_shape(self, s):
        n, c, h, w = s
        return (n, self.cout, h + 2 * self.padding - self.k + 1, w + 2 * self.padding - self.k + 1)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class InputNorm(Layer):
    """Fixed affine ``(x - mean) / std``; constants live in the arch, not the weights."""

    def __init__(self, mean: float, std: float):
        if not std > 0:
            raise ValueError("input std must be > 0")
        self.mean, self.std = float(mean), float(std)

    def out_shape(self, s):
        return s

    def __call__(self, x):
        return T.scale(x - self.mean, 1.0 / self.std)


class ReLU(Layer):
    def __init__(self, tap: str | None = None):
        self.tap = tap

    def out_shape(self, s):
        return s

    def __call__(self, x):
        return T.relu(x)


class MaxPool(Layer):
    def __init__(self, size: int = 2):
        self.size = size

    def out_shape(self, s):
        n, c, h, w = s
        return (n, c, h // self.size, w // self.size)

    def __call__(self, x):
        return T.max_pool2d(x, self.size)


class Flatten(Layer):
    def out_shape(self, s):
        return (s[0], int(np.prod(s[1:])))

    def __call__(self, x):
        return x.reshape(x.shape[0], -1)


class Linear(Layer):
    def __init__(self, name: str, fin: int, fout: int, rng: np.random.Generator, tap: str | None = None, std: float | None = None):
        std = math.sqrt(1.0 / fin) if std is None else std
        self.weight = Tensor(rng.normal(0.0, std, (fout, fin)).astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(fout, np.float32), requires_grad=True)
        self.name, self.fout, self.tap = name, fout, tap

    def params(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def out_shape(self, s):
        return s[:-1] + (self.fout,)

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class PatchEmbed(Layer):
    """Split [N,C,H,W] into non-overlapping patches, project them, add learned positions."""

    def __init__(self, cin: int, height: int, width: int, patch: int, dim: int, rng: np.random.Generator):
        self.patch, self.dim = patch, dim
        self.grid = (height // patch, width // patch)
        fin = cin * patch * patch
        self.proj = Linear("patch_embed", fin, dim, rng)
        tokens = self.grid[0] * self.grid[1]
        self.pos = Tensor(rng.normal(0.0, 0.02, (tokens, dim)).astype(np.float32), requires_grad=True)

    def params(self):
        return {**self.proj.params(), "pos_embed": self.pos}

    def out_shape(self, s):
        return (s[0], self.grid[0] * self.grid[1], self.dim)

    def __call__(self, x):
        n, c, h, w = x.shape
        p = self.patch
        gh, gw = self.grid
        x = x.reshape(n, c, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5).reshape(n, gh * gw, c * p * p)
        return self.proj(x) + self.pos


class LayerNorm(Layer):
    def __init__(self, name: str, dim: int):
        self.name = name
        self.gamma = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, np.float32), requires_grad=True)

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def out_shape(self, s):
        return s

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class TransformerBlock(Layer):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, name: str, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, tap: str | None = None):
        self.name, self.dim, self.heads, self.tap = name, dim, heads, tap
        self.ln1 = LayerNorm(f"{name}.ln1", dim)
        self.qkv = Linear(f"{name}.qkv", dim, 3 * dim, rng)
        self.out = Linear(f"{name}.attn_out", dim, dim, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", dim)
        self.fc1 = Linear(f"{name}.fc1", dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(f"{name}.fc2", mlp_ratio * dim, dim, rng)

    def params(self):
        out = {}
        for part in (self.ln1, self.qkv, self.out, self.ln2, self.fc1, self.fc2):
            out.update(part.params())
        return out

    def out_shape(self, s):
        return s

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Multi-head self-attention on [N,T,D]; returns (output, probabilities [N,heads,T,T])."""
        n, t, d = x.shape
        hd = d // self.heads
        qkv = self.qkv(x).reshape(n, t, 3, self.heads, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(hd))
        probs = T.softmax(scores, axis=-1)
        mixed = (probs @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
        return self.out(mixed), probs

    def __call__(self, x):
        attn, _ = self.attention(self.ln1(x))
        x = x + attn
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))


class TokenMean(Layer):
    def out_shape(self, s):
        return (s[0], s[2])

    def __call__(self, x):
        return x.mean(axis=1)


# -- model graph -------------------------------------------------------------------------


@dataclass
class TrainReport:
    epochs: int
    train_accuracy: float
    test_accuracy: float | None
    loss_curve: list[float] = field(default_factory=list)


class ModelGraph:
    """A frozen-able network f with named taps.

    Args:
        layers: layers applied in order.
        input_shape: (C, H, W) of one input image.
        classes: number of output logits.
        arch: the builder arguments, kept so weight files can rebuild the model.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], classes: int, arch: dict):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.arch = arch
        self.taps: dict[str, tuple[int, tuple[int, ...]]] = {}
        shape: tuple[int, ...] = (1,) + self.input_shape
        for i, layer in enumerate(layers):
            shape = layer.out_shape(shape)
            if layer.tap is not None:
                if layer.tap in self.taps:
                    raise ValueError(f"duplicate tap name {layer.tap!r}")
                self.taps[layer.tap] = (i, shape[1:])

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def tap_shape(self, tap: str, batch: int = 1) -> tuple[int, ...]:
        """Statically derived activation shape at ``tap`` for a batch of ``batch``."""
        if tap not in self.taps:
            raise KeyError(f"unknown tap {tap!r}; available: {', '.join(self.taps)}")
        return (batch,) + self.taps[tap][1]

    def _as_batch(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape == self.input_shape:
            x = x.reshape((1,) + self.input_shape)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise T.ShapeError(f"input of shape {x.shape} does not match model input {self.input_shape}")
        return x

    def activations_at(self, x, tap: str) -> Tensor:
        if tap not in self.taps:
            raise KeyError(f"unknown tap {tap!r}; available: {', '.join(self.taps)}")
        stop = self.taps[tap][0]
        h = self._as_batch(x)
        for layer in self.layers[: stop + 1]:
            h = layer(h)
        return h

    def forward(self, x) -> Tensor:
        h = self._as_batch(x)
        for layer in self.layers:
            h = layer(h)
        return h

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        preds = []
        with no_grad(), self.frozen():
            for i in range(0, len(images), batch_size):
                preds.append(self.forward(images[i : i + batch_size]).data.argmax(axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    def accuracy(self, images: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict(images) == labels).mean())

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily stop parameters from collecting gradients."""
        params = list(self.parameters().values())
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
            p.grad = None
        try:
            yield self
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag

    def checksum(self) -> str:
        return T.parameters_checksum(p.data for p in self.parameters().values())

    def astype(self, dtype) -> "ModelGraph":
        """A rebuilt copy with parameters cast to ``dtype`` (used by float64 gradient oracles)."""
        clone = build(self.arch)
        for (name, src), dst in zip(self.parameters().items(), clone.parameters().values()):
            dst.data = src.data.astype(dtype)
        return clone

    def copy(self) -> "ModelGraph":
        return self.astype(np.float32)


def build_small_cnn(input_shape=(3, 32, 32), classes: int = 6, seed: int = 0, widths=(16, 32, 64, 64)) -> ModelGraph:
    """Stack of conv(3x3, same) -> relu -> maxpool(2) blocks, then a linear logits head.

    Taps ``conv_pw_k`` sit on each block's post-relu activation, before pooling.
    """
    c, h, w = input_shape
    depth = len(widths)
    if h < 16 or w < 16 or (h >> depth) < 1 or (w >> depth) < 1:
        raise ValueError(f"input {h}x{w} too small for {depth} pooling stages (need >= 16 and >= {2 ** depth})")
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    cin = c
    for k, cout in enumerate(widths, start=1):
        layers.append(Conv2d(f"conv_pw_{k}", cin, cout, 3, 1, rng))
        layers.append(ReLU(tap=f"conv_pw_{k}"))
        layers.append(MaxPool(2))
        cin = cout
    layers.append(Flatten())
    feat = cin * (h >> depth) * (w >> depth)
    layers.append(Linear("logits", feat, classes, rng, tap="logits"))
    arch = {"kind": "cnn", "input_shape": list(input_shape), "classes": classes, "seed": seed, "widths": list(widths)}
    return ModelGraph(layers, input_shape, classes, arch)


def build_tiny_vit(
    input_shape=(3, 32, 32),
    patch: int = 8,
    dim: int = 64,
    heads: int = 4,
    layers: int = 4,
    classes: int = 6,
    seed: int = 0,
    mlp_ratio: int = 4,
    input_mean: float = 0.5,
    input_std: float = 0.25,
) -> ModelGraph:
    """Input standardization, patch embedding, ``layers`` pre-norm transformer blocks tapped ``hidden_k``,
    token mean-pooling and a linear logits head."""
    c, h, w = input_shape
    if h % patch or w % patch:
        raise ValueError(f"patch size {patch} must divide input {h}x{w}")
    if dim % heads:
        raise ValueError(f"dim {dim} is not divisible by heads {heads}")
    rng = np.random.default_rng(seed)
    # Without standardization the low-contrast shapes leave training stuck at chance.
    stack: list[Layer] = [InputNorm(input_mean, input_std), PatchEmbed(c, h, w, patch, dim, rng)]
    for k in range(1, layers + 1):
        stack.append(TransformerBlock(f"block_{k}", dim, heads, mlp_ratio, rng, tap=f"hidden_{k}"))
    stack.append(LayerNorm("final_norm", dim))
    stack.append(TokenMean())
    stack.append(Linear("logits", dim, classes, rng, tap="logits"))
    arch = {
        "kind": "vit",
        "input_shape": list(input_shape),
        "patch": patch,
        "dim": dim,
        "heads": heads,
        "layers": layers,
        "classes": classes,
        "seed": seed,
        "mlp_ratio": mlp_ratio,
        "input_mean": input_mean,
        "input_std": input_std,
    }
    return ModelGraph(stack, input_shape, classes, arch)


def build(arch: dict) -> ModelGraph:
    arch = dict(arch)
    kind = arch.pop("kind")
    arch["input_shape"] = tuple(arch["input_shape"])
    if kind == "cnn":
        arch["widths"] = tuple(arch["widths"])
        return build_small_cnn(**arch)
    if kind == "vit":
        return build_tiny_vit(**arch)
    raise ValueError(f"unknown architecture kind {kind!r}")


def attention_maps(model: ModelGraph, x) -> list[np.ndarray]:
    """Attention probabilities of every transformer block for input ``x``."""
    maps = []
    with no_grad():
        h = model._as_batch(x)
        for layer in model.layers:
            if isinstance(layer, TransformerBlock):
                _, probs = layer.attention(layer.ln1(h))
                maps.append(probs.data)
            h = layer(h)
    return maps


# -- training ----------------------------------------------------------------------------


def train(
    model: ModelGraph,
    dataset,
    epochs: int,
    lr: float,
    seed: int = 0,
    test=None,
    batch_size: int = 32,
    momentum: float = 0.9,
) -> TrainReport:
    """Minibatch SGD with momentum on the cross-entropy loss; updates ``model`` in place."""
    images, labels = dataset.images, np.asarray(dataset.labels)
    if len(labels) == 0:
        raise ValueError("empty training set")
    if labels.min() < 0 or labels.max() >= model.classes:
        raise ValueError(f"labels must lie in [0, {model.classes}), got range [{labels.min()}, {labels.max()}]")
    rng = np.random.default_rng(seed)
    params = list(model.parameters().values())
    velocity = [np.zeros_like(p.data) for p in params]
    curve: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(labels))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = T.cross_entropy(model(images[idx]), labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"loss became {float(loss.data)} at epoch {epoch + 1}")
            for p in params:
                p.grad = None
            loss.backward()
            for p, v in zip(params, velocity):
                v *= momentum
                v -= lr * p.grad
                p.data += v
            total += float(loss.data) * len(idx)
            count += len(idx)
        curve.append(total / count)
        logger.info("epoch %d loss %.4f", epoch + 1, curve[-1])
    for p in params:
        p.grad = None
    train_acc = model.accuracy(images, labels)
    test_acc = model.accuracy(test.images, test.labels) if test is not None else None
    return TrainReport(epochs, train_acc, test_acc, curve)


# -- weight files ------------------------------------------------------------------------
#
# A weight file is a UTF-8 manifest followed by an empty line and then the
# concatenated LMT1 tensors in manifest order:
#
#   # lmtw 1
#   # arch {"kind": "cnn", ...}
#   # sha256 <hex digest of everything after the blank line>
#   conv_pw_1.weight 16 3 3 3
#   ...


def save_weights(model: ModelGraph, path) -> None:
    params = model.parameters()
    payload = b"".join(lmt.to_bytes(p.data) for p in params.values())
    lines = [
        "# lmtw 1",
        "# arch " + json.dumps(model.arch, sort_keys=True),
        "# sha256 " + hashlib.sha256(payload).hexdigest(),
    ]
    lines += [" ".join([name, *map(str, p.shape)]) for name, p in params.items()]
    blob = ("\n".join(lines) + "\n\n").encode("utf-8") + payload
    Path(path).write_bytes(blob)


def _read_weight_file(path) -> tuple[dict, list[tuple[str, tuple[int, ...]]], list[np.ndarray]]:
    blob = Path(path).read_bytes()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CorruptWeightsError(f"{path}: missing manifest terminator")
    try:
        lines = blob[:sep].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise CorruptWeightsError(f"{path}: manifest is not UTF-8") from None
    payload = blob[sep + 2 :]
    header = {}
    entries = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition(" ")
            header[key] = value
        elif line:
            name, *dims = line.split()
            entries.append((name, tuple(int(d) for d in dims)))
    if header.get("lmtw") != "1" or "arch" not in header or "sha256" not in header:
        raise CorruptWeightsError(f"{path}: incomplete manifest header")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptWeightsError(f"{path}: checksum mismatch (file truncated or modified)")
    stream = io.BytesIO(payload)
    arrays = []
    for name, shape in entries:
        try:
            arr = lmt.read_from(stream)
        except lmt.LMTFormatError as exc:
            raise CorruptWeightsError(f"{path}: tensor {name}: {exc}") from None
        if arr.shape != shape:
            raise CorruptWeightsError(f"{path}: tensor {name} has shape {arr.shape}, manifest says {shape}")
        arrays.append(arr)
    return json.loads(header["arch"]), entries, arrays


def load_weights(model: ModelGraph, path) -> ModelGraph:
    """Load parameters into ``model``. Nothing is modified unless the whole file validates."""
    _, entries, arrays = _read_weight_file(path)
    params = model.parameters()
    names = list(params)
    for i, (name, shape) in enumerate(entries):
        if i >= len(names) or names[i] != name or params[name].shape != shape:
            expected = f"{names[i]} {params[names[i]].shape}" if i < len(names) else "nothing"
            raise CorruptWeightsError(f"manifest mismatch at tensor {name} {shape}: model expects {expected}")
    if len(entries) != len(names):
        raise CorruptWeightsError(f"manifest mismatch at tensor {names[len(entries)]}: missing from file")
    for name, arr in zip(names, arrays):
        params[name].data = arr.copy()
    return model


def load_model(path) -> ModelGraph:
    """Rebuild the architecture recorded in a weight file and load its parameters."""
    arch, _, _ = _read_weight_file(path)
    return load_weights(build(arch), path)
