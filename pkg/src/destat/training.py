"""Training loop: first-order moment-corrected optimization, early
stopping on validation loss, best-checkpoint restore, and evaluation.

The loss is mean squared error computed by default in the ORIGINAL
(de-normalized) scale of the data, so the optimizer competes on the
quantity the evaluation reports; `loss_space="normalized"` switches the
objective to the normalized scale for comparison runs.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConfigurationError,
    DataValidationError,
    DegenerateSeriesError,
    TrainingDivergenceError,
)
from .data import stack_windows
from .metrics import EvalReport, mae, mse, relative_stationarity

LOSS_SPACES = ("original", "normalized")


@dataclass
class OptimState:
    """Per-parameter first/second moment buffers and the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


class Adam:
    """Moment-corrected stochastic gradient descent.

    update = -lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected
    exponential moving averages of the gradient and its square.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigurationError("betas must lie in [0, 1)")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = OptimState(
            m={path: np.zeros_like(t.data) for path, t in params.items()},
            v={path: np.zeros_like(t.data) for path, t in params.items()},
        )

    def step(self):
        """Apply one update from the gradients currently on the parameters.

        Parameters whose gradient is None are treated as zero-gradient
        (their moments still decay).
        """
        self.state.t += 1
        t = self.state.t
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for path, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.state.m[path]
            v = self.state.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        self.params.zero_grad()


@dataclass
class TrainConfig:
    """Knobs of the optimization loop."""

    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    loss_space: str = "original"
    lr_decay: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ConfigurationError(f"patience must be >= 0, got {self.patience}")
        if self.loss_space not in LOSS_SPACES:
            raise ConfigurationError(f"loss_space must be one of {LOSS_SPACES}")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")


@dataclass
class TrainResult:
    """History rows plus the restored-best validation loss."""

    history: list                     # dicts: epoch, train_loss, val_mse, val_mae, lr
    best_val_mse: float
    best_epoch: int
    stopped_early: bool


def batch_loss(model, x, target, loss_space="original", train=True):
    """Forward one batch and return the scalar training loss Tensor."""
    out = model.forward(x, train=train)
    if loss_space == "original" or out.y_prime is None:
        return ad.mse_loss(out.y_hat, Tensor(target))
    stats = out.stats
    target_norm = (target - stats.mu.data) / stats.sigma.data
    return ad.mse_loss(out.y_prime, Tensor(target_norm))


def train(model, train_windows, val_windows, config, log=None):
    """Optimize `model` with shuffled mini-batches and early stopping.

    Stops after `patience` consecutive epochs without validation
    improvement (patience=0 stops at the first non-improving epoch) and
    restores the best parameters before returning. `log`, when given, is
    called with each finished epoch's history row.
    """
    if not train_windows or not val_windows:
        raise ConfigurationError("need non-empty train and validation window lists")
    opt = Adam(model.params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    x_all, y_all = stack_windows(train_windows)
    n = x_all.shape[0]

    history = []
    best_val = np.inf
    best_epoch = -1
    best_state = None
    bad_epochs = 0
    stopped_early = False

    for epoch in range(config.max_epochs):
        if config.lr_decay and epoch > 0:
            opt.lr = opt.lr * 0.5
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss = batch_loss(model, x_all[idx], y_all[idx],
                              loss_space=config.loss_space, train=True)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergenceError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch {lo // config.batch_size}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        train_loss = total / seen

        val_mse, val_mae = _window_metrics(model, val_windows, config.batch_size)
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_mse": val_mse,
            "val_mae": val_mae,
            "lr": opt.lr,
        })
        if log is not None:
            log(history[-1])
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_state = model.params.state_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                stopped_early = True
                break

    if best_state is not None:
        model.params.load_arrays(best_state)
    return TrainResult(
        history=history,
        best_val_mse=best_val,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
    )


def _window_metrics(model, windows, batch_size):
    """(MSE, MAE) of original-scale predictions over a window list."""
    preds, truths = predict_windows(model, windows, batch_size)
    return mse(preds, truths), mae(preds, truths)


def predict_windows(model, windows, batch_size=64):
    """Stacked `[n, O, C]` predictions and targets, evaluation mode."""
    x_all, y_all = stack_windows(windows)
    preds = np.empty_like(y_all)
    with ad.no_grad():
        for lo in range(0, x_all.shape[0], batch_size):
            out = model.forward(x_all[lo:lo + batch_size], train=False)
            preds[lo:lo + out.y_hat.shape[0]] = out.y_hat.data
    return preds, y_all


def evaluate(model, windows, batch_size=64, with_stationarity=True, max_lag=None):
    """Full evaluation report over a window list.

    Relative stationarity arranges all predicted (and true) windows in
    chronological order into one long sequence per variable before
    applying the unit-root statistic; it is skipped when the
    concatenated sequence is too short.
    """
    ordered = sorted(windows, key=lambda w: w.start)
    preds, truths = predict_windows(model, ordered, batch_size)
    diff = preds - truths
    report = EvalReport(
        mse=float(np.mean(diff * diff)),
        mae=float(np.mean(np.abs(diff))),
        mse_per_step=[float(v) for v in np.mean(diff * diff, axis=(0, 2))],
        mae_per_step=[float(v) for v in np.mean(np.abs(diff), axis=(0, 2))],
        n_windows=len(windows),
    )
    if with_stationarity:
        pred_seq = preds.reshape(-1, preds.shape[-1])
        truth_seq = truths.reshape(-1, truths.shape[-1])
        try:
            per_var, aggregate = relative_stationarity(pred_seq, truth_seq,
                                                       max_lag=max_lag)
            report.relative_stationarity = aggregate
            report.relative_stationarity_per_variable = [float(v) for v in per_var]
        except (DegenerateSeriesError, DataValidationError):
            report.relative_stationarity = None
    return report


def write_history_csv(history, path):
    """Persist epoch history rows as CSV (pure numbers, reproducible)."""
    fields = ["epoch", "train_loss", "val_mse", "val_mae", "lr"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in fields})
