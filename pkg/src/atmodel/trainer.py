"""Mini-batch Adam training with chronological early stopping."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .core import ModelSpec, ParamVector, RowSet, as_rowset, forward, init_params
from .likelihood import loss_and_grad, nll

MIN_DELTA = 1e-6
CLIP_NORM = 10.0


class DivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 2500
    batch_size: int = 50
    learning_rate: float = 0.01
    val_fraction: float = 0.1
    patience: int = 200

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class FitResult:
    params: ParamVector
    train_loss_trace: np.ndarray
    val_loss_trace: np.ndarray
    best_epoch: int
    converged: bool
    spec: ModelSpec | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss_trace)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are untouched."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or np.shape(params) != grad.shape:
        raise ValueError("dimension mismatch between parameters, gradient and optimizer state")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def chronological_split(rows: RowSet, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices of training rows and of the last ``val_fraction`` of each series."""
    train, val = [], []
    for s in np.unique(rows.series_idx):
        idx = np.flatnonzero(rows.series_idx == s)
        idx = idx[np.argsort(rows.time[idx], kind="stable")]
        n_val = int(np.floor(val_fraction * idx.size))
        train.append(idx[: idx.size - n_val])
        val.append(idx[idx.size - n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _probe_monotone(u: np.ndarray, spec: ModelSpec) -> None:
    lo, w = spec.bounds.lower, spec.bounds.width
    grid = np.linspace(lo - w, lo + 2 * w, 64)
    probe = RowSet(grid, np.zeros((grid.size, spec.p)), np.zeros((grid.size, spec.n_exog)),
                   np.zeros(grid.size, dtype=np.int64))
    forward(ParamVector.from_flat(u, spec), probe, spec)  # raises if slope <= 0


def fit(spec: ModelSpec, rows, config: TrainConfig, init: ParamVector | None = None,
        progress: bool = False) -> FitResult:
    rows = as_rowset(rows, spec)
    tr_idx, va_idx = chronological_split(rows, config.val_fraction)
    if tr_idx.size == 0:
        raise ValueError("no training rows left after the validation split")
    train = rows.subset(tr_idx)
    val = rows.subset(va_idx) if va_idx.size else None

    rng = np.random.default_rng(config.seed)
    u = (init if init is not None else init_params(spec)).to_flat()
    state = AdamState.zeros(u.size)
    n = len(train)
    bs = config.batch_size

    train_trace, val_trace = [], []
    best_u, best_val, best_epoch, stale = u.copy(), np.inf, 0, 0
    converged = False
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            batch = train.subset(perm[start:start + bs])
            with np.errstate(over="ignore", invalid="ignore"):  # checked just below
                loss, grad = loss_and_grad(u, batch, spec)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergedError(epoch)
            norm = np.sqrt(grad @ grad)
            if norm > CLIP_NORM:
                grad = grad * (CLIP_NORM / norm)
            u, state = adam_step(u, grad, state, config.learning_rate)
        with np.errstate(over="ignore", invalid="ignore"):
            tr_loss = nll(u, train, spec)
            va_loss = nll(u, val, spec) if val is not None else tr_loss
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise DivergedError(epoch)
        train_trace.append(tr_loss)
        val_trace.append(va_loss)
        if progress and epoch % 10 == 0:
            print(f"epoch={epoch} train_nll={tr_loss:.6f} val_nll={va_loss:.6f}", file=sys.stderr)
        if epoch % 100 == 0:
            _probe_monotone(u, spec)
        if va_loss < best_val - MIN_DELTA or epoch == 1:
            best_u, best_val, best_epoch, stale = u.copy(), va_loss, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                converged = True
                break

    return FitResult(ParamVector.from_flat(best_u, spec), np.array(train_trace),
                     np.array(val_trace), best_epoch, converged, spec)
