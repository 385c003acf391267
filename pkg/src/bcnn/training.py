"""Training runtime: schedules, Adam, model builders, train/eval loops,
gradient checking and the checkpoint format.

Feature maps are plain (batch, height, width, channels) float arrays; double
precision is the default (and the deterministic mode), single precision is
allowed for speed in training runs.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .basis import build_basis
from .layers import (
    AvgPool2,
    BConv2D,
    Conv2D,
    Dense,
    GlobalAvgPool,
    Layer,
    ReLU,
    Sequential,
    Softsign,
    Standardize,
)

BCNN_CHANNEL_PLAN = (8, 16, 24, 24, 32, 40)
KERNEL_PLAN = (9, 7, 7, 7, 7, 7)
MNIST_PADDINGS = ("same", "same", "same", "same", "same", "valid")
POOL_AFTER = (1, 3)  # average pools after the 2nd and 4th conv layer
PARAM_BUDGET_TOL = 0.10


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message records the offending batch."""


@dataclass
class TrainConfig:
    epochs: int = 50
    warmup_epochs: int = 10
    peak_lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_width: float = 1.0
    regime: str = "high"
    augmentation: str = "none"  # none | online-rotations | rotations-reflections
    precision: str = "double"
    normalize: bool = False
    weight_decay: float = 0.0
    eval_every: int = 1

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be < epochs")
        if self.precision not in ("double", "single"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


def config_for_regime(regime: str, **overrides) -> TrainConfig:
    """Paper protocol: 50/10 epochs (high, inter), 150/30 for the low regime."""
    base = dict(epochs=50, warmup_epochs=10, regime=regime)
    if regime == "low":
        base.update(epochs=150, warmup_epochs=30)
    elif regime not in ("high", "inter"):
        raise ValueError(f"unknown regime {regime!r}")
    base.update(overrides)
    return TrainConfig(**base)


def warmup_cosine_lr(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear 0 -> peak over the warmup, then cosine peak -> 0."""
    if step < 0 or step > total_steps:
        raise ValueError("step outside [0, total_steps]")
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    if total_steps == warmup_steps:
        return peak
    t = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * t))


class Adam:
    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def scaled_channels(lambda_width: float) -> list[int]:
    return [max(1, round(c * lambda_width)) for c in BCNN_CHANNEL_PLAN]


def bcnn_param_count(lambda_width: float, cutoff: str) -> int:
    """Closed-form trainable-parameter count of the equivariant model."""
    chans = scaled_channels(lambda_width)
    m9 = build_basis(9, cutoff).mode_count
    m7 = build_basis(7, cutoff).mode_count
    modes = [m9, m7, m7, m7, m7, m7]
    c_in = 1
    total = 0
    for m, c_out in zip(modes, chans):
        total += 2 * m * c_in * c_out
        c_in = c_out
    total += chans[-1] * 10 + 10  # dense softmax head
    return total


def vanilla_param_count(lambda_width: float) -> int:
    chans = scaled_channels(lambda_width)
    c_in = 1
    total = 0
    for k, c_out in zip(KERNEL_PLAN, chans):
        total += k * k * c_in * c_out + c_out
        c_in = c_out
    total += chans[-1] * 10 + 10
    return total


def fit_lambda(count_fn, target: int) -> float:
    """Smallest-error width multiplier hitting the parameter budget."""
    best, best_err = None, None
    for lam in np.arange(0.05, 3.01, 0.01):
        err = abs(count_fn(float(lam)) - target)
        if best_err is None or err < best_err:
            best, best_err = float(lam), err
    if abs(count_fn(best) - target) > PARAM_BUDGET_TOL * target:
        raise ValueError("could not fit parameter budget within 10%")
    return round(best, 2)


def count_params(model: Sequential) -> int:
    total = 0
    for layer in model.layers:
        if isinstance(layer, BConv2D):
            total += 2 * int(layer.mask.sum()) * layer.c_in * layer.c_out
        else:
            total += sum(p.data.size for p in layer.params())
    return total


def build_model(
    dataset_tag: str,
    method_tag: str,
    lambda_width=1.0,
    group: str = "so2",
    cutoff: str = "half",
    multiscale: bool = False,
    seed: int = 0,
    dtype=np.float64,
    normalize: bool = False,
) -> Sequential:
    """Six conv layers (9,7,7,7,7,7), two 2x2 average pools, global average
    pool and a dense softmax head; channel widths (8,16,24,24,32,40) scaled
    by the width multiplier. The equivariant variant uses softsign after each
    conv, the vanilla baseline uses ReLU and auto-fits its width to the
    equivariant reference budget."""
    if not dataset_tag.startswith("mnist"):
        raise ValueError(f"unknown dataset tag {dataset_tag!r}")
    if method_tag not in ("bcnn", "vanilla"):
        raise ValueError(f"unknown method tag {method_tag!r}")

    if method_tag == "vanilla" and (lambda_width == "auto" or lambda_width is None):
        lambda_width = fit_lambda(vanilla_param_count, bcnn_param_count(1.0, "full"))
    chans = scaled_channels(float(lambda_width))

    layers: list[Layer] = []
    c_in = 1
    for i, (k, c_out, padding) in enumerate(zip(KERNEL_PLAN, chans, MNIST_PADDINGS)):
        layer_seed = seed * 1000 + i
        if method_tag == "bcnn":
            if multiscale and padding == "same":
                sizes = (k - 2, k, k + 2)
            else:
                sizes = (k,)
            layers.append(
                BConv2D(c_in, c_out, sizes, group=group, cutoff_policy=cutoff,
                        padding=padding, seed=layer_seed, dtype=dtype)
            )
        else:
            layers.append(
                Conv2D(c_in, c_out, k, padding=padding, seed=layer_seed, dtype=dtype)
            )
        if normalize:
            layers.append(Standardize(c_out, dtype=dtype))
        layers.append(Softsign() if method_tag == "bcnn" else ReLU())
        if i in POOL_AFTER:
            layers.append(AvgPool2())
        c_in = c_out
    layers.append(GlobalAvgPool())
    layers.append(Dense(c_in, 10, seed=seed * 1000 + 99, dtype=dtype))
    return Sequential(layers)


def make_rotation_demo_model(
    seed: int = 0,
    group: str = "so2",
    channels=(4, 8, 8, 8, 8, 8),
    dtype=np.float64,
) -> Sequential:
    """All-equivariant valid-padding stack mapping 29x29 inputs to 1x1 maps.

    Kernel sizes (9,7,7,5,3,3) keep every intermediate size odd so quarter
    turns of the input permute each feature map exactly.
    """
    sizes = (9, 7, 7, 5, 3, 3)
    layers: list[Layer] = []
    c_in = 1
    for i, (k, c_out) in enumerate(zip(sizes, channels)):
        layers.append(
            BConv2D(c_in, c_out, (k,), group=group, cutoff_policy="full",
                    padding="valid", seed=seed * 100 + i, dtype=dtype)
        )
        layers.append(Softsign())
        c_in = c_out
    return Sequential(layers)


def calibrate_standardization(model: Sequential, images: np.ndarray,
                              passes: int = 25) -> None:
    """Settle the running statistics of any standardization layers.

    Squared-modulus responses shrink quadratically with their input scale,
    so an unnormalized deep stack collapses to ~0; repeated forward passes
    (no weight updates) let the per-layer running stats converge before the
    first optimizer step.
    """
    standardizers = [l for l in model.layers if isinstance(l, Standardize)]
    if not standardizers:
        return
    model.set_training(True)
    for layer in standardizers:
        layer.calibration_momentum = 0.3
    try:
        for _ in range(passes):
            model(Tensor(images))
    finally:
        for layer in standardizers:
            layer.calibration_momentum = None
        model.set_training(False)


def _zero_masked_grads(model: Sequential) -> None:
    for layer in model.layers:
        if isinstance(layer, BConv2D):
            for p in (layer.kre, layer.kim):
                if p.grad is not None:
                    p.grad[~layer.mask] = 0.0


def masked_entries_are_zero(model: Sequential) -> bool:
    for layer in model.layers:
        if isinstance(layer, BConv2D):
            for p in (layer.kre, layer.kim):
                if not np.all(p.data[~layer.mask] == 0.0):
                    return False
    return True


def evaluate(model: Sequential, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> tuple[float, np.ndarray]:
    """Top-1 accuracy and per-class accuracy."""
    model.set_training(False)
    n_classes = int(labels.max()) + 1
    hits = np.zeros(n_classes)
    counts = np.zeros(n_classes)
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        pred = model(Tensor(batch)).data.argmax(axis=1)
        truth = labels[start : start + batch_size]
        for cls in range(n_classes):
            sel = truth == cls
            counts[cls] += sel.sum()
            hits[cls] += (pred[sel] == cls).sum()
    per_class = np.divide(hits, counts, out=np.zeros_like(hits), where=counts > 0)
    return float(hits.sum() / max(1, counts.sum())), per_class


def train(
    model: Sequential,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    test_images: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
    augment_fn=None,
    checkpoint_path=None,
    log_fn=None,
) -> list[dict]:
    """Adam + warmup-cosine training loop; returns per-epoch history rows.

    Deterministic given the config seed (double precision, fixed thread
    count). augment_fn(epoch_rng, batch) may replace each batch (online
    rotation augmentation); with policy "none" every epoch sees identical
    batches. Non-finite loss aborts with the offending batch index.
    """
    dtype = config.dtype
    images = np.asarray(images, dtype=dtype)
    labels = np.asarray(labels)
    n = len(images)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch

    calibrate_standardization(model, images[order[: config.batch_size]])
    params = model.params()
    optimizer = Adam(params, config.beta1, config.beta2, config.eps,
                     config.weight_decay)
    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        model.set_training(True)
        epoch_rng = np.random.default_rng((config.seed, epoch))
        losses = []
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = images[idx]
            if augment_fn is not None:
                batch = augment_fn(epoch_rng, batch).astype(dtype)
            lr = warmup_cosine_lr(step, total_steps, warmup_steps, config.peak_lr)
            logits = model(Tensor(batch))
            loss = ad.softmax_cross_entropy(logits, labels[idx])
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch index {b}"
                )
            for p in params:
                p.zero_grad()
            loss.backward()
            _zero_masked_grads(model)
            optimizer.step(lr)
            losses.append(loss_val)
            step += 1
        row = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "lr": lr,
            "train_accuracy": None,
            "test_accuracy": None,
        }
        last = epoch == config.epochs - 1
        if last or epoch % config.eval_every == 0:
            row["train_accuracy"], _ = evaluate(model, images, labels)
            if test_images is not None:
                row["test_accuracy"], _ = evaluate(model, test_images, test_labels)
        history.append(row)
        if log_fn is not None:
            log_fn(row)
        model.set_training(False)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return history


def grad_check_model(
    model: Sequential,
    images: np.ndarray,
    labels: np.ndarray,
    n_samples: int = 50,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Finite-difference audit of the whole model; max relative error."""
    model.set_training(False)

    def loss_fn():
        return ad.softmax_cross_entropy(model(Tensor(images)), labels)

    return ad.grad_check(loss_fn, model.params(), n_samples=n_samples,
                         step=step, seed=seed)


def history_to_csv(history: list[dict], path, header: dict | None = None) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy", "lr"])
        for row in history:
            writer.writerow([row["epoch"], "train", row["loss"],
                             _fmt(row["train_accuracy"]), row["lr"]])
            if row["test_accuracy"] is not None:
                writer.writerow([row["epoch"], "test", "", row["test_accuracy"], row["lr"]])


def _fmt(value):
    return "" if value is None else value


_CKPT_MAGIC = b"BCKP"
_CKPT_VERSION = 1


def save_checkpoint(model: Sequential, path, extra: dict | None = None) -> None:
    """Versioned binary: magic, version, JSON layer manifest, f64 blobs (LE)."""
    manifest = {
        "layers": [type(layer).__name__ for layer in model.layers],
        "extra": extra or {},
    }
    mbytes = json.dumps(manifest).encode()
    params = model.params()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _CKPT_MAGIC, _CKPT_VERSION, len(mbytes)))
        fh.write(mbytes)
        fh.write(struct.pack("<I", len(params)))
        for i, p in enumerate(params):
            name = f"param{i}".encode()
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint_manifest(path) -> dict:
    """Manifest only, without touching any model."""
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sII"))
        magic, version, mlen = struct.unpack("<4sII", head)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return json.loads(fh.read(mlen).decode())


def load_checkpoint(model: Sequential, path) -> dict:
    """Restore parameters in place; returns the stored manifest."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, mlen = struct.unpack_from("<4sII", blob, 0)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = struct.calcsize("<4sII")
    manifest = json.loads(blob[off : off + mlen].decode())
    off += mlen
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = model.params()
    if n_params != len(params):
        raise ValueError(f"checkpoint has {n_params} tensors, model has {len(params)}")
    for p in params:
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2 + name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        if tuple(shape) != p.data.shape:
            raise ValueError(f"shape mismatch: checkpoint {shape} vs model {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    return manifest
