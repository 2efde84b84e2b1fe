"""Base distributions and the exact negative log-likelihood with its gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, logit, ndtr, ndtri

from .core import (ModelSpec, ParamVector, RowSet, as_rowset, forward,
                   theta_to_gamma_grad)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BaseDistribution:
    kind: str = "standard_normal"

    def __post_init__(self):
        if self.kind not in ("standard_normal", "standard_logistic"):
            raise ValueError(f"unknown base distribution {self.kind!r}")

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "standard_normal":
            return -0.5 * z * z - _HALF_LOG_2PI
        a = np.abs(z)
        return -a - 2.0 * np.log1p(np.exp(-a))

    def dlogpdf(self, z):
        """Derivative of the log density."""
        z = np.asarray(z, dtype=float)
        if self.kind == "standard_normal":
            return -z
        return -np.tanh(0.5 * z)

    def d2logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "standard_normal":
            return -np.ones_like(z)
        return -0.5 / np.cosh(0.5 * z) ** 2

    def cdf(self, z):
        return ndtr(z) if self.kind == "standard_normal" else expit(z)

    def logcdf(self, z):
        if self.kind == "standard_normal":
            return log_ndtr(z)
        return -np.logaddexp(0.0, -np.asarray(z, dtype=float))

    def quantile(self, u):
        return ndtri(u) if self.kind == "standard_normal" else logit(u)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "standard_normal":
            return rng.standard_normal(size)
        return rng.logistic(size=size)


def base_logpdf(z: float, dist: BaseDistribution) -> float:
    if not math.isfinite(z):
        raise ValueError("non-finite z")
    return float(dist.logpdf(z))


def _resolve(params, spec: ModelSpec) -> ParamVector:
    if isinstance(params, ParamVector):
        params.check(spec)
        return params
    return ParamVector.from_flat(params, spec)


def per_row_nll(params, rows, spec: ModelSpec) -> np.ndarray:
    params = _resolve(params, spec)
    rows = as_rowset(rows, spec)
    fw = forward(params, rows, spec)
    return -BaseDistribution(spec.base).logpdf(fw.h) - np.log(fw.dh_dy)


def nll(params, rows, spec: ModelSpec) -> float:
    """Mean negative log-likelihood per row."""
    return float(np.mean(per_row_nll(params, rows, spec)))


def per_row_score(params, rows, spec: ModelSpec) -> np.ndarray:
    """Gradient of each row's negative log-likelihood, shape (n, v)."""
    params = _resolve(params, spec)
    rows = as_rowset(rows, spec)
    fw = forward(params, rows, spec)
    n = len(rows)
    g = -BaseDistribution(spec.base).dlogpdf(fw.h)
    dtheta = fw.A.copy()
    if spec.p:
        dtheta += np.einsum("npm,p->nm", fw.LA, params.phi)
    g_theta = g[:, None] * dtheta - fw.D / fw.slope[:, None]
    s = spec.slices()
    out = np.zeros((n, spec.n_params))
    out[:, s["gamma"]] = theta_to_gamma_grad(g_theta, params.gamma)
    out[:, s["phi"]] = g[:, None] * fw.lag_h
    if spec.n_series:
        out[np.arange(n), s["beta_series"].start + rows.series_idx] = g
    out[:, s["beta_exog"]] = g[:, None] * rows.exog
    return out


def loss_and_grad(u: np.ndarray, rows: RowSet, spec: ModelSpec) -> tuple[float, np.ndarray]:
    """Mean NLL and its gradient at the flat unconstrained vector ``u``.

    Same quantities as ``nll``/``nll_grad`` but reduces over rows before
    the chain rule, which is what the optimizer calls per mini-batch.
    """
    params = ParamVector.from_flat(u, spec)
    fw = forward(params, rows, spec)
    n = len(rows)
    dist = BaseDistribution(spec.base)
    loss = float(np.mean(-dist.logpdf(fw.h) - np.log(fw.dh_dy)))
    g = -dist.dlogpdf(fw.h) / n
    g_theta = g @ fw.A - (fw.D / fw.slope[:, None]).sum(0) / n
    grad = np.empty(spec.n_params)
    s = spec.slices()
    if spec.p:
        g_theta += params.phi @ np.einsum("n,npm->pm", g, fw.LA)
        grad[s["phi"]] = g @ fw.lag_h
    grad[s["gamma"]] = theta_to_gamma_grad(g_theta, params.gamma)
    if spec.n_series:
        grad[s["beta_series"]] = np.bincount(rows.series_idx, weights=g, minlength=spec.n_series)
    if spec.n_exog:
        grad[s["beta_exog"]] = g @ rows.exog
    return loss, grad


def nll_grad(params, rows, spec: ModelSpec) -> np.ndarray:
    params = _resolve(params, spec)
    return loss_and_grad(params.to_flat(), as_rowset(rows, spec), spec)[1]
