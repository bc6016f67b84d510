"""Fully-connected ReLU networks trained with momentum SGD.

Parameters live in one flat float64 vector laid out layer by layer as
``W_1, b_1, W_2, b_2, ...`` with ``W_l`` stored row-major with shape
(fan_in, fan_out). ``num_classes == 1`` selects a scalar output head trained
with squared loss on +/-1 targets (labels 0/1 map to -1/+1); otherwise the
head is softmax cross-entropy.
"""

import csv
import functools
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .seeding import rng as make_rng

PARAMS_MAGIC = "effcap-mlp-v1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = (512,)
    num_classes: int = 10
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValidationError(f"input_dim must be positive, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValidationError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be nonnegative, got {self.weight_decay}")

    @classmethod
    def parse(cls, text, input_dim, num_classes, weight_decay=0.0):
        """Build from the ``"3x512"`` / ``"512,256"`` notation."""
        text = text.strip().lower()
        if "x" in text:
            depth, width = text.split("x")
            widths = (int(width),) * int(depth)
        else:
            widths = tuple(int(t) for t in text.split(",") if t)
        return cls(input_dim, widths, num_classes, weight_decay)

    @property
    def scalar_head(self):
        return self.num_classes == 1

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_widths, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    def describe(self):
        hidden = ",".join(str(w) for w in self.hidden_widths)
        return f"{self.input_dim}-[{hidden}]-{self.num_classes}"


def param_count(spec):
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in spec.layer_dims)


@dataclass
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (param_count(self.spec),):
            raise ValidationError(f"flat vector has length {self.flat.size}, spec needs {param_count(self.spec)}")

    def layers(self, flat=None):
        """(W, b) views into ``flat`` (defaults to this object's vector)."""
        flat = self.flat if flat is None else flat
        out, pos = [], 0
        for fan_in, fan_out in self.spec.layer_dims:
            w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = flat[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    def weight_mask(self):
        return _weight_mask(self.spec)

    def copy(self):
        return MlpParams(self.spec, self.flat.copy())


@functools.lru_cache(maxsize=32)
def _weight_mask(spec):
    mask = np.zeros(param_count(spec), dtype=bool)
    pos = 0
    for fan_in, fan_out in spec.layer_dims:
        mask[pos : pos + fan_in * fan_out] = True
        pos += fan_in * fan_out + fan_out
    mask.flags.writeable = False
    return mask


def init_mlp(spec, seed):
    """He-style Gaussian weights (std sqrt(2/fan_in)), zero biases."""
    gen = make_rng(seed)
    params = MlpParams(spec, np.zeros(param_count(spec)))
    for w, _ in params.layers():
        w[...] = gen.normal(0.0, np.sqrt(2.0 / w.shape[0]), size=w.shape)
    return params


def _forward(params, x):
    acts = [x]
    layers = params.layers()
    for w, b in layers[:-1]:
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    w, b = layers[-1]
    return acts, acts[-1] @ w + b


def _scalar_targets(labels):
    return 2.0 * np.asarray(labels, dtype=np.float64) - 1.0


def _head_loss(spec, out, labels):
    """Mean data loss and its gradient w.r.t. the output pre-activations."""
    m = out.shape[0]
    if spec.scalar_head:
        err = out[:, 0] - _scalar_targets(labels)
        return 0.5 * np.mean(err**2), (err / m)[:, None]
    shifted = out - out.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(logsum - shifted[np.arange(m), labels])
    grad = np.exp(shifted - logsum[:, None])
    grad[np.arange(m), labels] -= 1.0
    return loss, grad / m


def loss_and_grad(params, features, labels, weight_decay=None):
    """Mean loss plus (weight_decay/2)*||weights||^2 and its flat gradient.

    Biases are excluded from the penalty.
    """
    if weight_decay is None:
        weight_decay = params.spec.weight_decay
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != params.spec.input_dim:
        raise ValidationError(f"batch shape {x.shape} does not match input_dim {params.spec.input_dim}")
    with np.errstate(over="ignore", invalid="ignore"):
        acts, out = _forward(params, x)
        loss, delta = _head_loss(params.spec, out, labels)
        grad = np.empty_like(params.flat)
        grads = params.layers(grad)
        layers = params.layers()
        for i in range(len(layers) - 1, -1, -1):
            gw, gb = grads[i]
            np.matmul(acts[i].T, delta, out=gw)
            gb[...] = delta.sum(axis=0)
            if i:
                delta = (delta @ layers[i][0].T) * (acts[i] > 0)
        if weight_decay:
            mask = params.weight_mask()
            loss += 0.5 * weight_decay * float(params.flat[mask] @ params.flat[mask])
            grad[mask] += weight_decay * params.flat[mask]
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient (numeric overflow); lower the learning rate")
    return float(loss), grad


def predict(params, features):
    _, out = _forward(params, np.asarray(features, dtype=np.float64))
    return out


def evaluate(params, ds, batch_size=4096):
    """(mean loss, accuracy) on ``ds``; no weight-decay term.

    Ties in the argmax go to the smallest class index. For a scalar head the
    prediction is sign(f) with sign(0) = +1.
    """
    total_loss, correct = 0.0, 0
    for start in range(0, ds.n, batch_size):
        x = ds.features[start : start + batch_size]
        y = ds.labels[start : start + batch_size]
        out = predict(params, x)
        loss, _ = _head_loss(params.spec, out, y)
        total_loss += loss * len(y)
        if params.spec.scalar_head:
            correct += int(np.sum((out[:, 0] >= 0) == (y == 1)))
        else:
            correct += int(np.sum(np.argmax(out, axis=1) == y))
    return total_loss / ds.n, correct / ds.n


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.01
    lr_decay_per_epoch: float = 0.95
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 1000
    fit_threshold: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValidationError("initial_lr must be positive")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValidationError("lr_decay_per_epoch must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be positive")
        if not 0 <= self.fit_threshold <= 1:
            raise ValidationError("fit_threshold must be in [0, 1]")

    def learning_rate(self, epoch):
        """Rate used during 0-based training epoch ``epoch``."""
        return self.initial_lr * self.lr_decay_per_epoch**epoch


@dataclass
class TrainTrace:
    """Per-epoch training record.

    Row 0 is the untrained network (lr 0, no time spent); row e >= 1 holds
    the metrics after e epochs, trained at ``cfg.learning_rate(e - 1)``.
    ``steps_to_fit`` is the first e with train accuracy >= fit_threshold at
    both e and e + 1, or None.
    """

    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    steps_to_fit: int = None
    fit_threshold: float = 0.999
    params: MlpParams = None

    columns = ("epoch", "lr", "train_loss", "train_acc", "seconds")

    def rows(self):
        return list(zip(self.epoch, self.lr, self.train_loss, self.train_acc, self.seconds))

    @property
    def fitted(self):
        return self.steps_to_fit is not None

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.columns)
            for e, lr, loss, acc, sec in self.rows():
                writer.writerow([e, f"{lr:.9g}", f"{loss:.9g}", f"{acc:.9g}", f"{sec:.9g}"])


def train(params, ds, cfg, log=None):
    """Mini-batch SGD with heavy-ball momentum and per-epoch rate decay.

    ``params`` is not modified; the trained copy is ``trace.params``. The data
    order is reshuffled every epoch from ``cfg.seed``; the last short batch
    is used at its true size. Training stops after ``cfg.max_epochs`` or once
    the fit threshold has held for two consecutive epochs.
    """
    if ds.d != params.spec.input_dim:
        raise ValidationError(f"dataset d={ds.d} does not match input_dim {params.spec.input_dim}")
    params = params.copy()
    gen = make_rng(cfg.seed)
    velocity = np.zeros_like(params.flat)
    trace = TrainTrace(fit_threshold=cfg.fit_threshold)

    def record(epoch, lr, seconds):
        loss, acc = evaluate(params, ds)
        trace.epoch.append(epoch)
        trace.lr.append(lr)
        trace.train_loss.append(loss)
        trace.train_acc.append(acc)
        trace.seconds.append(seconds)
        if log:
            log(f"epoch {epoch:4d} lr {lr:.3g} loss {loss:.4f} acc {acc:.4f}")

    record(0, 0.0, 0.0)
    for epoch in range(1, cfg.max_epochs + 1):
        prev_ok = trace.train_acc[-1] >= cfg.fit_threshold
        lr = cfg.learning_rate(epoch - 1)
        start = time.perf_counter()
        order = gen.permutation(ds.n)
        for lo in range(0, ds.n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            _, grad = loss_and_grad(params, ds.features[idx], ds.labels[idx])
            velocity *= cfg.momentum
            velocity -= lr * grad
            params.flat += velocity
        record(epoch, lr, time.perf_counter() - start)
        if prev_ok and trace.train_acc[-1] >= cfg.fit_threshold:
            trace.steps_to_fit = epoch - 1
            break
    trace.params = params
    return trace


def save_params(path, params, seed):
    """Text header line, then the flat vector as little-endian float64."""
    spec = params.spec
    hidden = ",".join(str(w) for w in spec.hidden_widths)
    header = (
        f"{PARAMS_MAGIC} input_dim={spec.input_dim} hidden={hidden} classes={spec.num_classes} "
        f"weight_decay={spec.weight_decay!r} seed={seed}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(params.flat.astype("<f8").tobytes())


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, seed)``."""
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    fields = raw[:cut].decode("ascii").split()
    if not fields or fields[0] != PARAMS_MAGIC:
        raise ValidationError(f"{path}: not an {PARAMS_MAGIC} file")
    meta = dict(f.split("=", 1) for f in fields[1:])
    widths = tuple(int(w) for w in meta["hidden"].split(",") if w)
    spec = MlpSpec(int(meta["input_dim"]), widths, int(meta["classes"]), float(meta["weight_decay"]))
    flat = np.frombuffer(raw[cut + 1 :], dtype="<f8").astype(np.float64)
    return MlpParams(spec, flat), int(meta["seed"])
