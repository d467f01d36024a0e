"""Training protocol: cross-entropy, Adam, plateau LR schedule, epoch loop.

`fit` trains for a fixed number of epochs, monitors validation overall
accuracy after each one, halves the learning rate after `lr_patience`
epochs without strict improvement (never below `lr_min`), and finally
restores the weights of the best validation epoch (earliest on ties).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .numerics import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_init: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_min: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    seed: int = 0

    def validate(self):
        if not 0 < self.lr_factor < 1:
            raise ValueError(f"lr_factor must be in (0,1), got {self.lr_factor}")
        if self.lr_min > self.lr_init:
            raise ValueError(f"lr_min {self.lr_min} > lr_init {self.lr_init}")
        if self.lr_patience < 1:
            raise ValueError(f"lr_patience must be >= 1, got {self.lr_patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def cross_entropy(probs: Tensor, labels) -> float:
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    labels = np.asarray(labels)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels outside [0,{c}): min {labels.min()}, max {labels.max()}")
    picked = np.maximum(probs[np.arange(n), labels], 1e-12)
    loss = float(-np.mean(np.log(picked)))
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite cross-entropy loss: {loss}")
    return loss


def cross_entropy_with_logit_grad(probs: Tensor, labels):
    """Loss plus the fused softmax+CE gradient w.r.t. logits: (probs - onehot)/n."""
    loss = cross_entropy(probs, labels)
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), np.asarray(labels)] -= 1.0
    grad /= n
    return loss, grad


class AdamState:
    """First/second moment buffers mirroring a parameter dict, plus step count."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-7):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One in-place Adam update with bias correction. Aborts on non-finite grads."""
    for name in params:
        if not np.isfinite(grads[name]).all():
            raise FloatingPointError(f"non-finite gradient for {name}; aborting training")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class PlateauScheduler:
    """Multiply lr by `factor` after `patience` epochs without strict
    improvement of the monitored accuracy; clamp at `lr_min`."""

    def __init__(self, lr_init: float, factor: float = 0.5, patience: int = 10, lr_min: float = 5e-5):
        self.current_lr = lr_init
        self.factor = factor
        self.patience = patience
        self.lr_min = lr_min
        self.best_metric = -math.inf
        self.epochs_since_improvement = 0

    def update(self, val_oa: float) -> float:
        if val_oa > self.best_metric:
            self.best_metric = val_oa
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
            if self.epochs_since_improvement >= self.patience:
                self.current_lr = max(self.current_lr * self.factor, self.lr_min)
                self.epochs_since_improvement = 0
        return self.current_lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_oa: float
    val_loss: float
    val_oa: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 until the first epoch completes

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_oa,val_loss,val_oa,lr"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{float(r.train_loss)!r},{float(r.train_oa)!r},"
                f"{float(r.val_loss)!r},{float(r.val_oa)!r},{float(r.lr)!r}"
            )
        return "\n".join(lines) + "\n"

    def save_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())


def train_epoch(model, x: Tensor, y, adam_state: AdamState, lr: float, batch_size: int, shuffle_seed):
    """One pass over the data: deterministic shuffle, sequential minibatches
    (final partial batch included), train-mode forward/backward/Adam."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("train_epoch: empty dataset")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(shuffle_seed)))
    order = rng.permutation(n)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        xb, yb = x[idx], y[idx]
        probs, caches = model_mod.forward(model, xb, "train")
        loss, dlogits = cross_entropy_with_logit_grad(probs, yb)
        grads, _ = model_mod.backward(model, caches, dlogits)
        adam_step(model.params, grads, adam_state, lr)
        total_loss += loss * len(idx)
        correct += int(np.sum(np.argmax(probs, axis=1) == yb))
    return total_loss / n, correct / n


def evaluate(model, x: Tensor, y, batch_size: int = 64):
    """Infer-mode mean loss and overall accuracy."""
    n = x.shape[0]
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        probs, _ = model_mod.forward(model, xb, "infer")
        total_loss += cross_entropy(probs, yb) * len(yb)
        correct += int(np.sum(np.argmax(probs, axis=1) == yb))
    return total_loss / n, correct / n


def fit(model, train_set, val_set, cfg: TrainConfig, log=None):
    """Train up to cfg.epochs epochs and restore the best-validation weights.

    train_set/val_set are (images, labels) pairs. Returns (model, history)
    with the model holding the snapshot of the highest validation OA
    (earliest epoch on ties).
    """
    cfg.validate()
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("fit: empty train or validation split")
    adam = AdamState(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = PlateauScheduler(cfg.lr_init, cfg.lr_factor, cfg.lr_patience, cfg.lr_min)
    history = TrainHistory()
    best_snapshot = None
    best_val_oa = -math.inf
    for epoch in range(1, cfg.epochs + 1):
        lr = sched.current_lr
        train_loss, train_oa = train_epoch(
            model, x_train, y_train, adam, lr, cfg.batch_size, shuffle_seed=(cfg.seed, epoch)
        )
        val_loss, val_oa = evaluate(model, x_val, y_val)
        history.records.append(EpochRecord(epoch, train_loss, train_oa, val_loss, val_oa, lr))
        if val_oa > best_val_oa:
            best_val_oa = val_oa
            best_snapshot = model.snapshot()
            history.best_epoch = epoch
        sched.update(val_oa)
        if log is not None:
            log(f"epoch {epoch}/{cfg.epochs}: loss {train_loss:.4f} oa {train_oa:.4f} "
                f"| val loss {val_loss:.4f} oa {val_oa:.4f} | lr {lr:g}")
    model.restore(best_snapshot)
    return model, history
