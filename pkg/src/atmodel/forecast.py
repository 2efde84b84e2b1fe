"""Conditional distributions, Monte-Carlo path forecasts and log-scores."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ATModel, RowSet, SupervisedRow, as_rowset, forward
from .likelihood import BaseDistribution, per_row_nll
from .uq import _context_rows, invert_transform, solve_increasing

GRID_POINTS = 512


@dataclass
class ForecastDistribution:
    """Law of the next observation given lags, exogenous features and series."""

    model: ATModel
    conditioning: SupervisedRow

    @property
    def _dist(self) -> BaseDistribution:
        return BaseDistribution(self.model.spec.base)

    def _forward(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite outcome")
        rows = _context_rows(y, self.conditioning, self.model.spec)
        return forward(self.model.params, rows, self.model.spec)

    def logpdf(self, y):
        fw = self._forward(y)
        out = self._dist.logpdf(fw.h) + np.log(fw.dh_dy)
        return float(out[0]) if np.ndim(y) == 0 else out

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        out = self._dist.cdf(self._forward(y).h)
        return float(out[0]) if np.ndim(y) == 0 else out

    def quantile(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if np.any((a <= 0.0) | (a >= 1.0)):
            raise ValueError("alpha must lie in (0, 1)")
        return invert_transform(self._dist.quantile(a), self.conditioning,
                                self.model.params, self.model.spec)

    def sample(self, rng: np.random.Generator, size: int):
        return invert_transform(self._dist.sample(rng, size), self.conditioning,
                                self.model.params, self.model.spec)


def cond_density(y, conditioning: SupervisedRow, model: ATModel):
    return ForecastDistribution(model, conditioning).pdf(y)


def cond_cdf(y, conditioning: SupervisedRow, model: ATModel):
    return ForecastDistribution(model, conditioning).cdf(y)


def cond_quantile(alpha, conditioning: SupervisedRow, model: ATModel):
    return ForecastDistribution(model, conditioning).quantile(alpha)


def report_grid(model: ATModel, n: int = GRID_POINTS) -> np.ndarray:
    b = model.spec.bounds
    return np.linspace(b.lower - 0.5 * b.width, b.upper + 0.5 * b.width, n)


def support_grid(model: ATModel, conditioning: SupervisedRow, n: int = GRID_POINTS,
                 tail: float = 1e-8) -> np.ndarray:
    """Report grid widened to the conditional ``tail`` and ``1 - tail`` quantiles."""
    lo, hi = cond_quantile([tail, 1.0 - tail], conditioning, model)
    base = report_grid(model, 2)
    return np.linspace(min(lo, base[0]), max(hi, base[1]), n)


@dataclass
class PathForecast:
    horizon: int
    samples: np.ndarray              # (n_samples, horizon)
    quantile_levels: tuple[float, ...]
    quantile_summary: np.ndarray     # (horizon, n_levels)

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def _invert_paths(z, windows, exog, series_idx, model: ATModel) -> np.ndarray:
    """Invert h for many paths at once, each with its own lag window."""
    spec, params = model.spec, model.params
    n = z.size
    rows_exog = np.tile(exog, (n, 1))
    sidx = np.full(n, series_idx)

    def h(y):
        return forward(params, RowSet(y, windows, rows_exog, sidx), spec).h

    return solve_increasing(h, z, spec)


def forecast_paths(model: ATModel, initial_lags, exog_schedule=None, horizon: int = 1,
                   n_samples: int = 1000, seed: int = 0, series_idx: int = 0,
                   levels=(0.05, 0.5, 0.95)) -> PathForecast:
    """Monte-Carlo rollout: draw from the one-step law and feed draws back as lags.

    ``initial_lags`` is ordered most recent first. ``exog_schedule`` has one
    row per step; ``None`` means no exogenous features.
    """
    spec = model.spec
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    window0 = np.asarray(initial_lags, dtype=float).reshape(spec.p)
    if exog_schedule is None:
        exog_schedule = np.zeros((horizon, spec.n_exog))
    exog_schedule = np.asarray(exog_schedule, dtype=float).reshape(horizon, spec.n_exog)
    rng = np.random.default_rng(seed)
    dist = BaseDistribution(spec.base)
    z = dist.sample(rng, (n_samples, horizon))
    windows = np.tile(window0, (n_samples, 1))
    samples = np.empty((n_samples, horizon))
    for k in range(horizon):
        y = _invert_paths(z[:, k], windows, exog_schedule[k], series_idx, model)
        samples[:, k] = y
        if spec.p:
            windows = np.column_stack([y, windows[:, :-1]])
    levels = tuple(float(a) for a in levels)
    summary = np.quantile(samples, levels, axis=0).T if levels else np.zeros((horizon, 0))
    return PathForecast(horizon, samples, levels, summary)


def write_forecast_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def forecast_records(series_id: str, fc: PathForecast):
    for k in range(fc.horizon):
        yield {"series_id": series_id, "step": k + 1,
               "quantiles": {f"{a:g}": float(q) for a, q in zip(fc.quantile_levels, fc.quantile_summary[k])},
               "mean": float(fc.samples[:, k].mean()),
               "n_samples": int(fc.samples.shape[0])}


def log_score(model: ATModel, rows) -> float:
    """Mean one-step log predictive density using the observed lags."""
    rows = as_rowset(rows, model.spec)
    return float(-np.mean(per_row_nll(model.params, rows, model.spec)))


def rollout_log_score(model: ATModel, rows, n_samples: int = 200, seed: int = 0) -> float:
    """Mean log predictive density when lags inside each series come from simulation.

    For each series the first row's observed lags are the forecast origin.
    The k-step density is the Monte-Carlo mixture of one-step densities over
    simulated lag windows.
    """
    spec = model.spec
    rows = as_rowset(rows, spec)
    dist = BaseDistribution(spec.base)
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    for s in np.unique(rows.series_idx):
        idx = np.flatnonzero(rows.series_idx == s)
        idx = idx[np.argsort(rows.time[idx], kind="stable")]
        windows = np.tile(rows.lags[idx[0]], (n_samples, 1))
        for i in idx:
            ex = np.tile(rows.exog[i], (n_samples, 1))
            at_obs = RowSet(np.full(n_samples, rows.y[i]), windows, ex, np.full(n_samples, s))
            fw = forward(model.params, at_obs, spec)
            logf = dist.logpdf(fw.h) + np.log(fw.dh_dy)
            total += float(logsumexp(logf) - np.log(n_samples))
            count += 1
            if spec.p:
                y = _invert_paths(dist.sample(rng, n_samples), windows, rows.exog[i], int(s), model)
                windows = np.column_stack([y, windows[:, :-1]])
    return total / count


def local_maxima(density) -> np.ndarray:
    """Indices of strict interior local maxima of a density on a grid (plateaus count once)."""
    d = np.asarray(density, dtype=float)
    keep = np.r_[True, np.diff(d) != 0]
    idx = np.flatnonzero(keep)
    v = d[idx]
    peak = np.r_[False, (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]), False] if v.size > 2 else np.zeros(v.size, bool)
    return idx[peak]


def is_bimodal(density, depth: float = 0.2) -> bool:
    """Exactly two local maxima with a trough at least ``depth`` below the lower peak."""
    d = np.asarray(density, dtype=float)
    peaks = local_maxima(d)
    if peaks.size != 2:
        return False
    trough = d[peaks[0]:peaks[1] + 1].min()
    return bool(trough <= (1.0 - depth) * d[peaks].min())


def marginal_density(model: ATModel, rows, y_grid) -> np.ndarray:
    """Average of the one-step predictive densities over the observed conditioning rows."""
    rows = as_rowset(rows, model.spec)
    y_grid = np.asarray(y_grid, dtype=float)
    total = np.zeros_like(y_grid)
    for row in rows:
        total += cond_density(y_grid, row, model)
    return total / len(rows)
