"""Minimal deterministic training stack: MLP and toy conv nets on numpy.

Everything is float64 and seeded; a fixed seed reproduces the training
trajectory bit for bit.  The proximal group-lasso update is applied after
every optimizer step on layers with a nonzero regularization weight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .pruning import GroupStructure, block_soft_threshold

__all__ = [
    "Layer",
    "ModelParams",
    "TrainConfig",
    "Dataset",
    "init_mlp",
    "init_conv_net",
    "forward",
    "loss_ce",
    "backward",
    "sgd_momentum_step",
    "adam_step",
    "lr_at_epoch",
    "minibatch_indices",
    "train",
    "top1_accuracy",
    "load_mnist_idx",
    "write_idx_files",
    "synthetic_dataset",
]


@dataclass
class Layer:
    """One layer: dense weights (N, K) or conv kernels (N, K, O, O) plus bias (N,).

    ``kind`` is ``dense``, ``conv_fk`` or ``conv_pk``; the conv variants share
    the same forward math and differ only in how they are grouped for pruning
    and lowered for deployment.
    """

    W: np.ndarray
    b: np.ndarray
    kind: str = "dense"
    activation: str = "relu"

    def group_structure(self) -> GroupStructure:
        kind = "dense" if self.kind == "dense" else self.kind
        return GroupStructure(kind, tuple(self.W.shape))

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.kind, self.activation)


@dataclass
class ModelParams:
    layers: list[Layer]

    def __post_init__(self) -> None:
        for layer in self.layers:
            if layer.activation not in ("relu", "identity"):
                raise ValueError(f"unsupported activation {layer.activation!r}")
            if layer.kind not in ("dense", "conv_fk", "conv_pk"):
                raise ValueError(f"unsupported layer kind {layer.kind!r}")

    def copy(self) -> "ModelParams":
        return ModelParams([layer.copy() for layer in self.layers])


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; learning rate decays by ``lr_decay`` every ``decay_interval`` epochs."""

    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    momentum: float = 0.9
    lr_decay: float = 0.95
    decay_interval: int = 10
    seed: int = 0
    lam: tuple[float, ...] = ()  # per-layer group-lasso weight, 0 = unregularized
    optimizer: str = "sgd"  # "sgd" | "adam"

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must be in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Dataset:
    x: np.ndarray  # (n, features) or (n, K, Z, Z)
    y: np.ndarray  # (n,) integer labels

    @property
    def n(self) -> int:
        return len(self.y)


def init_mlp(sizes: list[int], seed: int = 0, activation: str = "relu") -> ModelParams:
    """Dense stack with uniform +-sqrt(6/(fan_in+fan_out)) init; identity on the last layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "identity" if i == len(sizes) - 2 else activation
        layers.append(Layer(W, np.zeros(fan_out), "dense", act))
    return ModelParams(layers)


def init_conv_net(
    in_maps: int,
    image: int,
    out_maps: int,
    kernel: int,
    n_classes: int,
    seed: int = 0,
    method: str = "fk",
) -> ModelParams:
    """Toy conv net: one conv layer (ReLU), then a dense classifier head."""
    rng = np.random.default_rng(seed)
    fan_in = in_maps * kernel * kernel
    fan_out = out_maps * kernel * kernel
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    kernels = rng.uniform(-bound, bound, size=(out_maps, in_maps, kernel, kernel))
    P = image - kernel + 1
    flat = out_maps * P * P
    bound2 = np.sqrt(6.0 / (flat + n_classes))
    Wd = rng.uniform(-bound2, bound2, size=(n_classes, flat))
    return ModelParams(
        [
            Layer(kernels, np.zeros(out_maps), f"conv_{method}", "relu"),
            Layer(Wd, np.zeros(n_classes), "dense", "identity"),
        ]
    )


def _conv_batch(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    O = kernels.shape[2]
    win = sliding_window_view(x, (O, O), axis=(2, 3))
    return np.einsum("bkrcuv,nkuv->bnrc", win, kernels)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def forward(model: ModelParams, x: np.ndarray):
    """Batched forward pass; returns (per-layer caches, logits).

    Conv outputs are flattened after their activation so a dense head can
    follow.  Caches hold what backward needs: layer input and preactivation.
    """
    a = np.asarray(x, dtype=float)
    caches = []
    for layer in model.layers:
        if layer.kind == "dense":
            if a.ndim != 2 or a.shape[1] != layer.W.shape[1]:
                raise ValueError(f"dense layer expected (B, {layer.W.shape[1]}), got {a.shape}")
            z = a @ layer.W.T + layer.b
        else:
            if a.ndim != 4 or a.shape[1] != layer.W.shape[1]:
                raise ValueError("conv layer input shape mismatch")
            z = _conv_batch(a, layer.W) + layer.b[None, :, None, None]
        caches.append((a, z))
        a = _activate(z, layer.activation)
        if layer.kind != "dense":
            a = a.reshape(a.shape[0], -1)
    return caches, a


def loss_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy; max-subtraction guards the exponentials."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


def _softmax_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def backward(model: ModelParams, x: np.ndarray, labels: np.ndarray):
    """Gradients of the mean cross-entropy for every layer; returns (grads, loss).

    grads is a list of (dW, db) matching model.layers.
    """
    caches, logits = forward(model, x)
    labels = np.asarray(labels)
    loss = loss_ce(logits, labels)
    delta = _softmax_grad(logits, labels)  # gradient wrt flattened layer output
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        a_in, z = caches[idx]
        if layer.kind != "dense":
            delta = delta.reshape(z.shape)
        if layer.activation == "relu":
            delta = delta * (z > 0)
        if layer.kind == "dense":
            dW = delta.T @ a_in
            db = delta.sum(axis=0)
            delta = delta @ layer.W
        else:
            O = layer.W.shape[2]
            win = sliding_window_view(a_in, (O, O), axis=(2, 3))
            dW = np.einsum("bkrcuv,bnrc->nkuv", win, delta)
            db = delta.sum(axis=(0, 2, 3))
            pad = O - 1
            dzp = np.pad(delta, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            winp = sliding_window_view(dzp, (O, O), axis=(2, 3))
            delta = np.einsum("bnijuv,nkuv->bkij", winp, layer.W[:, :, ::-1, ::-1])
        grads[idx] = (dW, db)
    return grads, loss


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float):
    """Heavy-ball update: v <- mu*v + g; p <- p - lr*v.  Returns (param, velocity)."""
    if param.shape != grad.shape:
        raise ValueError("gradient shape mismatch")
    velocity = momentum * velocity + grad
    return param - lr * velocity, velocity


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam with bias correction; ``state`` is (m, v, t)."""
    m, v, t = state
    t += 1
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    return param - lr * mhat / (np.sqrt(vhat) + eps), (m, v, t)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_interval)


def minibatch_indices(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    """One epoch's shuffled batches (the trailing partial batch included)."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _prox_layer(layer: Layer, lam: float, lr_now: float) -> None:
    gs = layer.group_structure()
    layer.W = gs.from_groups(block_soft_threshold(gs.to_groups(layer.W), lr_now * lam))


def train(model: ModelParams, data: Dataset, cfg: TrainConfig):
    """Seeded minibatch training; returns (model, history of per-epoch mean loss).

    Layers whose ``cfg.lam`` entry is positive get the group-lasso proximal
    map after every optimizer step, evaluated at the epoch's learning rate.
    """
    model = model.copy()
    lam = cfg.lam if cfg.lam else (0.0,) * len(model.layers)
    if len(lam) != len(model.layers):
        raise ValueError("cfg.lam must have one entry per layer")
    rng = np.random.default_rng(cfg.seed)
    if cfg.optimizer == "sgd":
        state = [
            {"W": np.zeros_like(l.W), "b": np.zeros_like(l.b)} for l in model.layers
        ]
    else:
        state = [
            {
                "W": (np.zeros_like(l.W), np.zeros_like(l.W), 0),
                "b": (np.zeros_like(l.b), np.zeros_like(l.b), 0),
            }
            for l in model.layers
        ]
    history = []
    for epoch in range(cfg.epochs):
        lr_now = lr_at_epoch(cfg, epoch)
        losses = []
        for batch in minibatch_indices(rng, data.n, cfg.batch_size):
            grads, loss = backward(model, data.x[batch], data.y[batch])
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch} (loss={loss})")
            losses.append(loss)
            for layer, (dW, db), st, lam_l in zip(model.layers, grads, state, lam):
                if cfg.optimizer == "sgd":
                    layer.W, st["W"] = sgd_momentum_step(layer.W, dW, st["W"], lr_now, cfg.momentum)
                    layer.b, st["b"] = sgd_momentum_step(layer.b, db, st["b"], lr_now, cfg.momentum)
                else:
                    layer.W, st["W"] = adam_step(layer.W, dW, st["W"], lr_now)
                    layer.b, st["b"] = adam_step(layer.b, db, st["b"], lr_now)
                if lam_l > 0.0:
                    _prox_layer(layer, lam_l, lr_now)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr_now})
    return model, history


def top1_accuracy(model: ModelParams, data: Dataset, batch_size: int = 512) -> float:
    """Fraction of samples whose argmax logit (ties to the lowest index) equals the label."""
    if data.n == 0:
        raise ValueError("accuracy undefined on an empty dataset")
    hits = 0
    for i in range(0, data.n, batch_size):
        _, logits = forward(model, data.x[i : i + batch_size])
        hits += int(np.sum(np.argmax(logits, axis=1) == data.y[i : i + batch_size]))
    return hits / data.n


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


def load_mnist_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read IDX image/label files (big-endian headers), scale to [0, 1], flatten.

    ``limit`` keeps only the first records.  Magic numbers, record counts, and
    payload lengths are validated.
    """
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError("image file too short for an IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != _IMAGE_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x}")
        raw = fh.read()
    if len(raw) != n * rows * cols:
        raise ValueError("image payload length does not match header")
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError("label file too short for an IDX header")
        magic, n_lbl = struct.unpack(">II", header)
        if magic != _LABEL_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x}")
        raw_lbl = fh.read()
    if len(raw_lbl) != n_lbl:
        raise ValueError("label payload length does not match header")
    if n != n_lbl:
        raise ValueError(f"image/label count mismatch: {n} vs {n_lbl}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    labels = np.frombuffer(raw_lbl, dtype=np.uint8).astype(np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images.astype(np.float64) / 255.0, labels)


def write_idx_files(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, r, c) and labels in the IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABEL_MAGIC, n))
        fh.write(labels.tobytes())


# Seven-segment glyphs on a 16x12 box: (row0, row1, col0, col1) spans per segment.
_SEGS = {
    "top": (0, 2, 1, 11),
    "mid": (7, 9, 1, 11),
    "bot": (14, 16, 1, 11),
    "tl": (1, 8, 0, 2),
    "tr": (1, 8, 10, 12),
    "bl": (8, 15, 0, 2),
    "br": (8, 15, 10, 12),
}
_DIGIT_SEGS = [
    ("top", "tl", "tr", "bl", "br", "bot"),
    ("tr", "br"),
    ("top", "tr", "mid", "bl", "bot"),
    ("top", "tr", "mid", "br", "bot"),
    ("tl", "tr", "mid", "br"),
    ("top", "tl", "mid", "br", "bot"),
    ("top", "tl", "mid", "bl", "br", "bot"),
    ("top", "tr", "br"),
    ("top", "tl", "tr", "mid", "bl", "br", "bot"),
    ("top", "tl", "tr", "mid", "br", "bot"),
]


def _glyphs() -> np.ndarray:
    g = np.zeros((10, 16, 12))
    for d, segs in enumerate(_DIGIT_SEGS):
        for s in segs:
            r0, r1, c0, c1 = _SEGS[s]
            g[d, r0:r1, c0:c1] = 1.0
    return g


def synthetic_digit_images(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 28x28 digit corpus: jittered seven-segment glyphs plus pixel noise.

    A stand-in with MNIST-like shape (uint8 images, labels 0-9) for
    environments without the real files; most border columns carry noise only
    and are therefore prunable.
    """
    rng = np.random.default_rng(seed)
    glyphs = _glyphs()
    labels = rng.integers(0, 10, size=n)
    shifts = rng.integers(-2, 3, size=(n, 2))
    scales = rng.uniform(0.75, 1.0, size=n)
    noise = rng.normal(0.0, 0.08, size=(n, 28, 28))
    images = np.zeros((n, 28, 28))
    for i in range(n):
        r, c = 6 + shifts[i, 0], 8 + shifts[i, 1]
        images[i, r : r + 16, c : c + 12] = scales[i] * glyphs[labels[i]]
    images = np.clip(images + noise, 0.0, 1.0)
    return np.round(images * 255).astype(np.uint8), labels.astype(np.uint8)


def synthetic_dataset(n_train: int, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Train/test split of the synthetic corpus, flattened and scaled like the IDX loader."""
    images, labels = synthetic_digit_images(n_train + n_test, seed)
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(x[:n_train], y[:n_train]), Dataset(x[n_train:], y[n_train:])
