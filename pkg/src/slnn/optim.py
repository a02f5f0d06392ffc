"""Adam, the decaying learning-rate schedule, masked MSE, and the
teacher-forced epoch training loop."""

import csv
from dataclasses import dataclass, field

import numpy as np

from slnn.autodiff import Tensor


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite; carries the epoch."""

    def __init__(self, epoch, detail):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass
class TrainSchedule:
    """Training hyperparameters.

    The learning rate steps down by ``decay_factor`` every
    ``decay_interval`` epochs from ``base_lr``.  One-step models train on
    ``bptt_window``-month windows; sequence models use their own 9-month
    window regardless.
    """

    epochs: int = 150
    base_lr: float = 1e-3
    decay_factor: float = 0.5
    decay_interval: int = 50
    bptt_window: int = 12
    batch_size: int = 4
    window_stride: int = 1


def lr_at_epoch(schedule, epoch):
    if not 0 <= epoch < schedule.epochs:
        raise ValueError(f"epoch {epoch} outside schedule range [0, {schedule.epochs})")
    return schedule.base_lr * schedule.decay_factor ** (epoch // schedule.decay_interval)


def masked_mse(pred, truth, mask):
    """Mean squared error over the cells where mask == 1.

    Returns a scalar graph tensor; the gradient flows only through the
    non-masked cells of ``pred``.
    """
    truth = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    mask = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, truth {truth.shape}, mask {mask.shape}"
        )
    n = mask.sum()
    if n == 0:
        raise ValueError("masked_mse needs at least one non-masked cell")
    diff = pred - truth
    return (diff * diff * mask).sum() * (1.0 / n)


class Adam:
    """Adam with bias correction; refuses a step on non-finite gradients."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, params, lr):
        grads = []
        for p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter {p.name or '<unnamed>'}; step refused"
                )
            grads.append(g)
        self.t += 1
        c1 = 1.0 - self.BETA1**self.t
        c2 = 1.0 - self.BETA2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


@dataclass
class History:
    """Per-epoch losses in m**2, exported as epoch,train_mse,val_mse CSV."""

    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)

    def append(self, epoch, train, val):
        self.epochs.append(epoch)
        self.train_mse.append(train)
        self.val_mse.append(val)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_mse", "val_mse"])
            for e, tr, va in zip(self.epochs, self.train_mse, self.val_mse):
                writer.writerow([e, repr(tr), repr(va)])


def fit(model, train, val, schedule, seed, stop_train_mse=None):
    """Teacher-forced training: inputs are always true months, targets the
    true next months.  Deterministic given the seed; the parameters from
    the epoch with the lowest validation loss are retained.

    ``model`` is a ``slnn.models.ForecastModel``; ``train``/``val`` are
    GridSeries sharing the model's grid geometry and mask.

    ``stop_train_mse``, when set, ends training early once the epoch train
    loss (m**2) falls below it; by default the history spans all epochs.
    """
    if train.mask.shape != val.mask.shape or not np.array_equal(train.mask, val.mask):
        raise ValueError("train and val partitions must share grid geometry and mask")
    rng = np.random.default_rng(seed)
    params = model.params()
    adam = Adam(params)
    history = History()
    best_val = np.inf
    best_state = model.get_state()
    for epoch in range(schedule.epochs):
        lr = lr_at_epoch(schedule, epoch)
        starts = model.window_starts(train.months, schedule)
        order = rng.permutation(len(starts))
        loss_sum = 0.0
        for lo in range(0, len(order), schedule.batch_size):
            batch = order[lo : lo + schedule.batch_size]
            for p in params:
                p.zero_grad()
            for widx in batch:
                loss, m2_scale = model.window_loss(
                    train, int(starts[widx]), rng, True, schedule
                )
                (loss * (1.0 / len(batch))).backward()
                loss_sum += loss.item() * m2_scale
            try:
                adam.step(params, lr)
            except FloatingPointError as err:
                raise TrainingDiverged(epoch, str(err)) from err
        train_mse = loss_sum / len(starts)
        val_mse = model.partition_loss(val)
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingDiverged(epoch, f"loss train={train_mse} val={val_mse}")
        history.append(epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_state = model.get_state()
        if stop_train_mse is not None and train_mse < stop_train_mse:
            break
    model.set_state(best_state)
    return history
