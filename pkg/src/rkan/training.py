"""Optimizer, schedule, metrics, gradient checking, and the epoch loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, NumericError
from .ops import softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.005
    peak_lr: float = 0.05
    final_lr: float = 1e-5
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def violations(self):
        problems = []
        if not 0 < self.base_lr <= self.peak_lr:
            problems.append(
                f"need 0 < base_lr <= peak_lr, got {self.base_lr}, {self.peak_lr}")
        if self.final_lr > self.peak_lr:
            problems.append(
                f"final_lr {self.final_lr} exceeds peak_lr {self.peak_lr}")
        if self.epochs > 0 and not self.warmup_epochs < self.epochs:
            problems.append(
                f"warmup_epochs {self.warmup_epochs} must be < epochs {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        return problems


def lr_at(epoch, cfg: TrainConfig):
    """Learning rate for an epoch: linear warmup, then cosine decay.

    Warmup runs base_lr -> peak_lr over ``warmup_epochs``; the cosine phase
    is parameterized so the final epoch lands exactly on ``final_lr``.
    """
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * epoch / cfg.warmup_epochs
    span = cfg.epochs - 1 - cfg.warmup_epochs
    tau = (epoch - cfg.warmup_epochs) / span if span > 0 else 1.0
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * (1 + math.cos(math.pi * tau)) / 2


def scaled_peak_lr(batch_size):
    """Linear-scaling-rule peak learning rate, ``0.1 * B / 256``."""
    if batch_size < 1:
        raise InputError(f"batch size must be >= 1, got {batch_size}")
    return 0.1 * batch_size / 256


def sgd_step(params, velocities, lr, momentum=0.9, weight_decay=0.0):
    """One Nesterov SGD update, no dampening.

    Per parameter: ``g = grad + wd * w``; ``v = mu * v + g``;
    ``w -= lr * (g + mu * v)``. Aborts without mutating anything if any
    gradient is non-finite.
    """
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError("non-finite gradient, step aborted")
    for p, v in zip(params, velocities):
        g = p.grad + weight_decay * p.data
        v *= momentum
        v += g
        p.data -= lr * (g + momentum * v)


def coefficient_of_variation(values):
    """Population standard deviation over mean, as a percentage."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("coefficient of variation needs a nonempty window")
    mean = values.mean()
    if mean == 0:
        raise InputError("coefficient of variation undefined for zero mean")
    return float(values.std() / mean * 100.0)


def throughput(n_images, seconds):
    """Images processed per second, ``N / t``."""
    if seconds <= 0:
        raise InputError(f"elapsed time must be positive, got {seconds}")
    return n_images / seconds


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    coords: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-2)


def gradcheck(module, x, rng=None, tolerance=1e-4, step=1e-5,
              max_param_coords=200, max_input_coords=None):
    """Compare analytic adjoints against central finite differences.

    A fixed random probe turns the module output into a scalar; analytic
    gradients come from one backward pass, numeric ones from perturbing
    sampled parameter coordinates (and input coordinates; all of them unless
    ``max_input_coords`` caps the sample). Failures are report entries, not
    exceptions.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    y = module.forward(x)
    probe = rng.standard_normal(y.shape)

    module.zero_grad()
    module.forward(x)
    grad_x = module.backward(probe)
    analytic = {name: p.grad.copy() for name, p in module.named_parameters()}

    def scalar():
        return float((module.forward(x) * probe).sum())

    entries = []
    for name, p in module.named_parameters():
        flat = p.data.reshape(-1)
        n = flat.size
        if n > max_param_coords:
            coords = rng.choice(n, size=max_param_coords, replace=False)
        else:
            coords = np.arange(n)
        worst = 0.0
        aflat = analytic[name].reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            up = scalar()
            flat[c] = keep - step
            down = scalar()
            flat[c] = keep
            worst = max(worst, _rel_err(aflat[c], (up - down) / (2 * step)))
        entries.append(GradCheckEntry(name, len(coords), worst))

    xflat = x.reshape(-1)
    n = xflat.size
    if max_input_coords is not None and n > max_input_coords:
        coords = rng.choice(n, size=max_input_coords, replace=False)
    else:
        coords = np.arange(n)
    gflat = grad_x.reshape(-1)
    worst = 0.0
    for c in coords:
        keep = xflat[c]
        xflat[c] = keep + step
        up = scalar()
        xflat[c] = keep - step
        down = scalar()
        xflat[c] = keep
        worst = max(worst, _rel_err(gflat[c], (up - down) / (2 * step)))
    entries.append(GradCheckEntry("input", len(coords), worst))
    return GradCheckReport(entries, tolerance)


# ---------------------------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_top1: float
    lr: float
    epoch_seconds: float
    throughput: float


@dataclass
class RunMetrics:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def best_top1(self):
        return max((r.val_top1 for r in self.records), default=math.nan)

    def _cv(self, window):
        try:
            return coefficient_of_variation([r.val_top1 for r in window])
        except InputError:
            return math.nan

    @property
    def cv_full(self):
        return self._cv(self.records)

    @property
    def cv_last_half(self):
        half = math.ceil(len(self.records) / 2)
        return self._cv(self.records[len(self.records) - half:])


METRICS_HEADER = "epoch,train_loss,val_top1,lr,epoch_seconds,throughput"


def write_metrics_csv(metrics: RunMetrics, path):
    with open(path, "w") as f:
        f.write(METRICS_HEADER + "\n")
        for r in metrics.records:
            f.write(f"{r.epoch},{r.train_loss:.6g},{r.val_top1:.6g},"
                    f"{r.lr:.6g},{r.epoch_seconds:.6g},{r.throughput:.6g}\n")


def evaluate_top1(model, inputs, labels, batch_size=64):
    """Top-1 accuracy over a preprocessed split, single deterministic pass."""
    hits = 0
    for start in range(0, len(inputs), batch_size):
        logits = model.forward(inputs[start:start + batch_size])
        hits += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return hits / len(inputs)


def train_run(model, train_ds, val_ds, cfg: TrainConfig, augment=True,
              checkpoint_path=None):
    """Run the epoch loop; deterministic given ``cfg.seed``.

    Returns :class:`RunMetrics`. A numeric failure restores the last
    epoch-end parameter state (writing it to ``checkpoint_path`` when given)
    and re-raises naming the epoch.
    """
    from .backbone import save_checkpoint
    from .data import Standardizer

    problems = cfg.violations()
    if problems:
        raise ConfigError("invalid train config: " + "; ".join(problems))
    n = len(train_ds.images)
    if n == 0:
        raise InputError("training split is empty")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    std = Standardizer.fit(train_ds.images)
    val_x = std.transform(val_ds.images)
    val_y = val_ds.labels

    params = model.parameters()
    velocities = [np.zeros_like(p.data) for p in params]
    snapshot = [p.data.copy() for p in params]
    metrics = RunMetrics()

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        loss_sum = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                flips = rng.random(len(idx)) < 0.5 if augment else None
                x = std.transform(train_ds.images[idx], flips)
                model.zero_grad()
                logits = model.forward(x)
                loss, grad = softmax_cross_entropy(logits, train_ds.labels[idx])
                if not math.isfinite(loss):
                    raise NumericError("non-finite loss")
                model.backward(grad)
                sgd_step(params, velocities, lr, cfg.momentum, cfg.weight_decay)
                loss_sum += loss * len(idx)
        except NumericError as err:
            for p, saved in zip(params, snapshot):
                p.data = saved
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
            raise NumericError(f"aborted at epoch {epoch}: {err}") from err

        seconds = time.perf_counter() - t0
        val_top1 = evaluate_top1(model, val_x, val_y, cfg.batch_size)
        metrics.records.append(EpochRecord(
            epoch=epoch, train_loss=loss_sum / n, val_top1=val_top1, lr=lr,
            epoch_seconds=seconds, throughput=throughput(n, seconds)))
        snapshot = [p.data.copy() for p in params]

    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return metrics
