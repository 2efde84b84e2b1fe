"""Sandwich covariance, delta-method bands for h, and the parametric bootstrap."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson

from .core import (ModelSpec, ParamVector, RowSet, SupervisedRow, as_rowset, forward,
                   h_jacobian)
from .likelihood import BaseDistribution, nll_grad, per_row_score
from .trainer import DivergedError, FitResult, TrainConfig, fit

MAX_CONDITION = 1e12
MAX_DOUBLINGS = 60


class InversionError(RuntimeError):
    pass


@dataclass
class CovarianceEstimate:
    I_hat: np.ndarray
    J_hat: np.ndarray
    sandwich: np.ndarray
    n_obs: int
    fixed: tuple[int, ...] = ()

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sandwich), 0.0, None))


def _theta_information(params: ParamVector, rows: RowSet, spec: ModelSpec):
    """Per-row scores and analytic observed information with ``theta`` in place of ``gamma``."""
    fw = forward(params, rows, spec)
    dist = BaseDistribution(spec.base)
    n, s = len(rows), spec.slices()
    g1 = -dist.dlogpdf(fw.h)
    g2 = -dist.d2logpdf(fw.h)
    dh = np.zeros((n, spec.n_params))
    dh[:, s["gamma"]] = fw.A + (np.einsum("npm,p->nm", fw.LA, params.phi) if spec.p else 0.0)
    dh[:, s["phi"]] = fw.lag_h
    if spec.n_series:
        dh[np.arange(n), s["beta_series"].start + rows.series_idx] = 1.0
    dh[:, s["beta_exog"]] = rows.exog
    Dn = fw.D / fw.slope[:, None]
    scores = g1[:, None] * dh
    scores[:, s["gamma"]] -= Dn
    I = (dh * g2[:, None]).T @ dh
    I[s["gamma"], s["gamma"]] += Dn.T @ Dn
    if spec.p:
        cross = np.einsum("n,npm->mp", g1, fw.LA)
        I[s["gamma"], s["phi"]] += cross
        I[s["phi"], s["gamma"]] += cross.T
    return scores, I / n


def information_estimates(params: ParamVector, rows, spec: ModelSpec, fixed=(),
                          step: float = 1e-5, coords: str = "unconstrained") -> CovarianceEstimate:
    """Observed information, outer-product score matrix and their sandwich.

    Coordinates listed in ``fixed`` are held at their values: their rows and
    columns of the sandwich are zero. Fixing ``gamma[0]`` removes the
    redundancy between the basis intercept and per-series shifts.

    With ``coords="theta"`` the basis block is expressed in the monotone
    coefficients themselves and the information is analytic. The blocks of
    ``phi`` and the shifts are the same in both coordinate systems, but the
    theta version stays well conditioned when some increments collapse to
    zero and the softplus curvature vanishes.
    """
    rows = as_rowset(rows, spec)
    u = params.to_flat()
    v = u.size
    T = len(rows)
    if coords == "theta":
        scores, I = _theta_information(params, rows, spec)
    elif coords == "unconstrained":
        scores = per_row_score(params, rows, spec)
        I = np.empty((v, v))
        for k in range(v):
            e = np.zeros(v)
            e[k] = step
            I[:, k] = (nll_grad(u + e, rows, spec) - nll_grad(u - e, rows, spec)) / (2 * step)
    else:
        raise ValueError(f"unknown coordinates {coords!r}")
    J = scores.T @ scores / T
    I = 0.5 * (I + I.T)
    J = 0.5 * (J + J.T)

    free = np.setdiff1d(np.arange(v), np.asarray(fixed, dtype=int))
    If, Jf = I[np.ix_(free, free)], J[np.ix_(free, free)]
    if not np.all(np.isfinite(If)) or np.linalg.cond(If) > MAX_CONDITION:
        raise np.linalg.LinAlgError("information singular")
    left = np.linalg.solve(If, Jf)
    sw = np.linalg.solve(If, left.T).T / T
    sandwich = np.zeros((v, v))
    sandwich[np.ix_(free, free)] = 0.5 * (sw + sw.T)
    return CovarianceEstimate(I, J, sandwich, T, tuple(int(k) for k in fixed))


def _context_rows(y_grid, context: SupervisedRow, spec: ModelSpec) -> RowSet:
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))
    n = y_grid.size
    lags = np.tile(np.asarray(context.lags, float).reshape(1, spec.p), (n, 1))
    exog = np.tile(np.asarray(context.exog, float).reshape(1, spec.n_exog), (n, 1))
    return RowSet(y_grid, lags, exog, np.full(n, int(context.series_idx)))


def h_covariance(cov: CovarianceEstimate, y_grid, context: SupervisedRow, params: ParamVector,
                 spec: ModelSpec) -> np.ndarray:
    """Delta-method covariance of h over ``y_grid`` under a fixed conditioning context."""
    rows = _context_rows(y_grid, context, spec)
    ups = h_jacobian(forward(params, rows, spec), params, rows, spec)
    return ups @ cov.sandwich @ ups.T


def _h_values(y, context: SupervisedRow, params: ParamVector, spec: ModelSpec) -> np.ndarray:
    return forward(params, _context_rows(y, context, spec), spec).h


def solve_increasing(f, z: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Elementwise root of ``f(y) = z`` for increasing ``f`` by bracketed bisection.

    The bracket starts at the support widened by one width per side and is
    doubled until it contains the root.
    """
    w = spec.bounds.width
    lo = np.full(z.shape, spec.bounds.lower - w)
    hi = np.full(z.shape, spec.bounds.upper + w)
    for _ in range(MAX_DOUBLINGS + 1):
        bad_lo = f(lo) > z
        bad_hi = f(hi) < z
        if not (bad_lo.any() or bad_hi.any()):
            break
        span = hi - lo
        lo = np.where(bad_lo, lo - span, lo)
        hi = np.where(bad_hi, hi + span, hi)
    else:
        raise InversionError("inversion failed")
    tol = 1e-9 * w
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        hm = f(mid)
        above = hm >= z
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        # the h-tolerance matters for steep transforms
        if np.all(hi - lo < tol) and np.all(np.abs(hm - z) < 1e-8):
            break
    return 0.5 * (lo + hi)


def invert_transform(z, context: SupervisedRow, params: ParamVector, spec: ModelSpec):
    """Smallest y with h(y) >= z under a fixed conditioning context; vectorized over ``z``."""
    z = np.asarray(z, dtype=float)
    out = solve_increasing(lambda y: _h_values(y, context, params, spec), np.atleast_1d(z), spec)
    return float(out[0]) if z.ndim == 0 else out


def density_on_grid(params: ParamVector, spec: ModelSpec, context: SupervisedRow, y_grid) -> np.ndarray:
    fw = forward(params, _context_rows(y_grid, context, spec), spec)
    return np.exp(BaseDistribution(spec.base).logpdf(fw.h)) * fw.dh_dy


def simulate_like(params: ParamVector, spec: ModelSpec, rows: RowSet,
                  rng: np.random.Generator) -> RowSet:
    """Synthetic rows with the layout of ``rows``, generated by inverting h.

    Each series starts from the real lags of its first row; simulated values
    are fed back as lags afterwards. Exogenous values are reused.
    """
    dist = BaseDistribution(spec.base)
    y_new = np.empty(len(rows))
    lags_new = np.empty_like(rows.lags)
    for s in np.unique(rows.series_idx):
        idx = np.flatnonzero(rows.series_idx == s)
        idx = idx[np.argsort(rows.time[idx], kind="stable")]
        window = rows.lags[idx[0]].copy()
        z = dist.sample(rng, idx.size)
        for k, i in enumerate(idx):
            ctx = SupervisedRow(0.0, window, rows.exog[i], int(s))
            y = invert_transform(z[k], ctx, params, spec)
            y_new[i] = y
            lags_new[i] = window
            if spec.p:
                window = np.concatenate([[y], window[:-1]])
    return RowSet(y_new, lags_new, rows.exog.copy(), rows.series_idx.copy(), rows.time.copy())


@dataclass
class BootstrapResult:
    replicate_params: list
    replicate_density_grids: list
    failed: list = field(default_factory=list)
    y_grid: np.ndarray | None = None

    def records(self):
        for nu, (p, d, bad) in enumerate(zip(self.replicate_params, self.replicate_density_grids,
                                             self.failed), start=1):
            yield {"nu": nu,
                   "params": None if p is None else p.to_flat().tolist(),
                   "density_grid": None if d is None else d.tolist(),
                   "failed": bool(bad)}

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    def bands(self, level: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
        grids = np.array([d for d in self.replicate_density_grids if d is not None])
        a = (1.0 - level) / 2.0
        return np.quantile(grids, a, axis=0), np.quantile(grids, 1.0 - a, axis=0)


def parametric_bootstrap(fit_result: FitResult, cov: CovarianceEstimate, rows, spec: ModelSpec,
                         N: int, seed: int, y_grid, context: SupervisedRow,
                         config: TrainConfig | None = None) -> BootstrapResult:
    """Draw parameters from the limiting normal, simulate, refit, evaluate densities.

    Refits warm-start at the original estimate with a fifth of the epochs.
    Replicate ``nu`` uses the random stream ``(seed, nu)``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rows = as_rowset(rows, spec)
    y_grid = np.asarray(y_grid, dtype=float)
    base_cfg = config or TrainConfig(seed=seed)
    u_hat = fit_result.params.to_flat()
    params_out, grids, failed = [], [], []
    for nu in range(1, N + 1):
        rng = np.random.default_rng([seed, nu])
        draw = rng.multivariate_normal(u_hat, cov.sandwich, method="eigh")
        try:
            theta_nu = ParamVector.from_flat(draw, spec)
            sim = simulate_like(theta_nu, spec, rows, rng)
            cfg = replace(base_cfg, epochs=max(1, base_cfg.epochs // 5),
                          seed=int(rng.integers(2**31)))
            refit = fit(spec, sim, cfg, init=fit_result.params)
            params_out.append(refit.params)
            grids.append(density_on_grid(refit.params, spec, context, y_grid))
            failed.append(False)
        except (DivergedError, InversionError, AssertionError, ValueError):
            params_out.append(None)
            grids.append(None)
            failed.append(True)
    if sum(failed) > 0.1 * N:
        raise RuntimeError(f"{sum(failed)} of {N} bootstrap replicates failed")
    return BootstrapResult(params_out, grids, failed, y_grid)


def grid_mass(density: np.ndarray, y_grid: np.ndarray) -> float:
    return float(simpson(density, x=y_grid))
