"""Model specification, parameters and the AT(p) transformation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .bernstein import MAX_ORDER, SupportBounds, basis_matrix, rescale

BASES = ("standard_normal", "standard_logistic")
MAX_LAGS = 32


@dataclass(frozen=True)
class ModelSpec:
    M: int
    p: int
    bounds: SupportBounds
    base: str = "standard_normal"
    n_series: int = 0
    n_exog: int = 0

    def __post_init__(self):
        if not 1 <= self.M <= MAX_ORDER:
            raise ValueError(f"unsupported order M={self.M}")
        if not 0 <= self.p <= MAX_LAGS:
            raise ValueError(f"lag order p={self.p} outside [0, {MAX_LAGS}]")
        if self.base not in BASES:
            raise ValueError(f"unknown base distribution {self.base!r}")
        if self.n_series < 0 or self.n_exog < 0:
            raise ValueError("n_series and n_exog must be non-negative")

    @property
    def n_params(self) -> int:
        return self.M + 1 + self.p + self.n_series + self.n_exog

    def slices(self) -> dict[str, slice]:
        sizes = {"gamma": self.M + 1, "phi": self.p,
                 "beta_series": self.n_series, "beta_exog": self.n_exog}
        out, start = {}, 0
        for name, size in sizes.items():
            out[name] = slice(start, start + size)
            start += size
        return out

    def to_dict(self) -> dict:
        return {"M": self.M, "p": self.p, "base": self.base,
                "bounds": [self.bounds.lower, self.bounds.upper],
                "n_series": self.n_series, "n_exog": self.n_exog}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        lo, hi = d["bounds"]
        return cls(M=int(d["M"]), p=int(d["p"]), bounds=SupportBounds(float(lo), float(hi)),
                   base=d["base"], n_series=int(d["n_series"]), n_exog=int(d["n_exog"]))


@dataclass
class ParamVector:
    """Unconstrained trainable parameters.

    ``gamma`` holds raw basis coefficients; the monotone coefficients are
    ``constrain(gamma)``. Lag weights ``phi`` multiply the transformed lags.
    """

    gamma: np.ndarray
    phi: np.ndarray
    beta_series: np.ndarray
    beta_exog: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "phi", "beta_series", "beta_exog"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            setattr(self, name, arr)

    @property
    def theta(self) -> np.ndarray:
        return constrain(self.gamma)

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.phi, self.beta_series, self.beta_exog])

    @classmethod
    def from_flat(cls, vec, spec: ModelSpec) -> "ParamVector":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got shape {vec.shape}")
        s = spec.slices()
        return cls(vec[s["gamma"]], vec[s["phi"]], vec[s["beta_series"]], vec[s["beta_exog"]])

    @classmethod
    def from_theta(cls, theta, phi=(), beta_series=(), beta_exog=()) -> "ParamVector":
        return cls(unconstrain(theta), np.asarray(phi, float), np.asarray(beta_series, float),
                   np.asarray(beta_exog, float))

    def check(self, spec: ModelSpec) -> None:
        if self.to_flat().shape != (spec.n_params,) or self.gamma.size != spec.M + 1 \
                or self.phi.size != spec.p or self.beta_series.size != spec.n_series:
            raise ValueError("parameter layout does not match the model spec")


def softplus(x):
    return np.logaddexp(0.0, x)


def constrain(gamma) -> np.ndarray:
    """Cumulative softplus map onto strictly increasing coefficient vectors."""
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise ValueError("non-finite raw coefficients")
    theta = np.empty_like(gamma)
    theta[0] = gamma[0]
    theta[1:] = gamma[0] + np.cumsum(softplus(gamma[1:]))
    return theta


def unconstrain(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    d = np.diff(theta)
    if np.any(d <= 0):
        raise ValueError("coefficients must be strictly increasing")
    gamma = np.empty_like(theta)
    gamma[0] = theta[0]
    # log(expm1(d)), written to stay finite for large d
    gamma[1:] = np.where(d > 30.0, d + np.log1p(-np.exp(-np.minimum(d, 700.0))),
                         np.log(np.expm1(np.minimum(d, 30.0))))
    return gamma


def constrain_jacobian_factors(gamma) -> np.ndarray:
    """d theta_m / d gamma_k equals this factor for every k <= m."""
    gamma = np.asarray(gamma, dtype=float)
    out = np.ones_like(gamma)
    out[1:] = expit(gamma[1:])
    return out


@dataclass(frozen=True)
class SupervisedRow:
    y: float
    lags: np.ndarray = field(default_factory=lambda: np.zeros(0))
    exog: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series_idx: int = 0


def _as_matrix(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if n == 0:
        return a.reshape(0, a.shape[-1] if a.ndim > 1 else 0)
    return a.reshape(n, -1)


@dataclass
class RowSet:
    """Column-oriented collection of supervised rows.

    ``lags[:, j]`` holds ``y[t-j-1]``. ``time`` is only used to order rows
    when splitting off a validation tail.
    """

    y: np.ndarray
    lags: np.ndarray
    exog: np.ndarray
    series_idx: np.ndarray
    time: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n = self.y.size
        self.lags = _as_matrix(self.lags, n)
        self.exog = _as_matrix(self.exog, n)
        self.series_idx = np.asarray(self.series_idx, dtype=np.int64).reshape(n)
        if self.time is None:
            self.time = np.arange(n)
        self.time = np.asarray(self.time).reshape(n)

    def __len__(self) -> int:
        return self.y.size

    def subset(self, idx) -> "RowSet":
        return RowSet(self.y[idx], self.lags[idx], self.exog[idx], self.series_idx[idx], self.time[idx])

    def row(self, i: int) -> SupervisedRow:
        return SupervisedRow(float(self.y[i]), self.lags[i].copy(), self.exog[i].copy(),
                             int(self.series_idx[i]))

    def __iter__(self) -> Iterator[SupervisedRow]:
        for i in range(len(self)):
            yield self.row(i)

    @classmethod
    def from_rows(cls, rows: Sequence[SupervisedRow], p: int | None = None,
                  n_exog: int | None = None) -> "RowSet":
        rows = list(rows)
        if not rows:
            raise ValueError("empty rows")
        p = len(rows[0].lags) if p is None else p
        n_exog = len(rows[0].exog) if n_exog is None else n_exog
        y = np.array([r.y for r in rows], dtype=float)
        lags = np.array([np.asarray(r.lags, float).reshape(p) for r in rows]).reshape(len(rows), p)
        exog = np.array([np.asarray(r.exog, float).reshape(n_exog) for r in rows]).reshape(len(rows), n_exog)
        sidx = np.array([r.series_idx for r in rows], dtype=np.int64)
        return cls(y, lags, exog, sidx)


def as_rowset(rows, spec: ModelSpec) -> RowSet:
    if isinstance(rows, RowSet):
        out = rows
    elif isinstance(rows, SupervisedRow):
        out = RowSet.from_rows([rows], spec.p, spec.n_exog)
    else:
        out = RowSet.from_rows(rows, spec.p, spec.n_exog)
    if len(out) == 0:
        raise ValueError("empty rows")
    if out.lags.shape[1] != spec.p or out.exog.shape[1] != spec.n_exog:
        raise ValueError(f"rows carry {out.lags.shape[1]} lags / {out.exog.shape[1]} exog, "
                         f"model expects {spec.p} / {spec.n_exog}")
    if spec.n_series and (np.any(out.series_idx < 0) or np.any(out.series_idx >= spec.n_series)):
        raise ValueError("series index out of range")
    return out


@dataclass
class Forward:
    """Intermediate quantities of one transformation pass over a row set."""

    theta: np.ndarray
    A: np.ndarray          # basis of the outcome, (n, M+1)
    D: np.ndarray          # basis derivative w.r.t. the unit-scale outcome
    LA: np.ndarray | None  # basis of each lag, (n, p, M+1)
    lag_h: np.ndarray      # transformed lags, (n, p)
    h: np.ndarray
    slope: np.ndarray      # dh / d(unit-scale y)
    dh_dy: np.ndarray


def forward(params: ParamVector, rows: RowSet, spec: ModelSpec) -> Forward:
    theta = constrain(params.gamma)
    n = len(rows)
    A, D = basis_matrix(rescale(rows.y, spec.bounds), spec.M)
    h = A @ theta
    if spec.p:
        LA = basis_matrix(rescale(rows.lags.reshape(-1), spec.bounds), spec.M)[0]
        LA = LA.reshape(n, spec.p, spec.M + 1)
        lag_h = LA @ theta
        h = h + lag_h @ params.phi
    else:
        LA, lag_h = None, np.zeros((n, 0))
    if spec.n_series:
        h = h + params.beta_series[rows.series_idx]
    if spec.n_exog:
        h = h + rows.exog @ params.beta_exog
    slope = D @ theta
    if np.any(slope <= 0):
        raise AssertionError("transformation lost monotonicity")
    return Forward(theta, A, D, LA, lag_h, h, slope, slope / spec.bounds.width)


def h_jacobian(fw: Forward, params: ParamVector, rows: RowSet, spec: ModelSpec) -> np.ndarray:
    """Rows of d h / d(unconstrained parameters), shape (n, v)."""
    n = len(rows)
    dtheta = fw.A.copy()
    if spec.p:
        dtheta += np.einsum("npm,p->nm", fw.LA, params.phi)
    out = np.zeros((n, spec.n_params))
    s = spec.slices()
    out[:, s["gamma"]] = theta_to_gamma_grad(dtheta, params.gamma)
    out[:, s["phi"]] = fw.lag_h
    if spec.n_series:
        out[np.arange(n), s["beta_series"].start + rows.series_idx] = 1.0
    out[:, s["beta_exog"]] = rows.exog
    return out


def theta_to_gamma_grad(g_theta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Chain rule through ``constrain`` for gradients stacked along the last axis."""
    rc = np.flip(np.cumsum(np.flip(g_theta, -1), -1), -1)
    return rc * constrain_jacobian_factors(gamma)


def transform(y: float, lags, exog, series_idx: int, params: ParamVector,
              spec: ModelSpec) -> tuple[float, float]:
    """Value of the AT(p) transformation and its derivative in outcome units."""
    vals = [y, *np.ravel(lags), *np.ravel(exog)]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite input")
    row = SupervisedRow(float(y), np.asarray(lags, float), np.asarray(exog, float), int(series_idx))
    fw = forward(params, as_rowset(row, spec), spec)
    return float(fw.h[0]), float(fw.dh_dy[0])


def init_params(spec: ModelSpec) -> ParamVector:
    """Near-identity start: coefficients evenly spaced from -2 to 2."""
    theta = -2.0 + 4.0 * np.arange(spec.M + 1) / spec.M
    return ParamVector(unconstrain(theta), np.zeros(spec.p), np.zeros(spec.n_series),
                       np.zeros(spec.n_exog))


def at_to_ar(params: ParamVector, spec: ModelSpec, series_idx: int = 0,
             units: str = "rescaled") -> tuple[float, np.ndarray, float]:
    """Equivalent Gaussian-style AR(p) parameters of an M=1 model.

    Returns ``(intercept, ar_coefs, sigma)`` such that
    ``y_t = intercept + sum_j ar_coefs[j] y_{t-j} + sigma * eps_t`` with
    ``eps_t ~ F_Z``. ``units="rescaled"`` works on the unit-scale outcome,
    ``units="outcome"`` on the original one. The series shift, if any, is
    folded into the intercept; exogenous shifts are not.
    """
    if spec.M != 1:
        raise ValueError("mapping defined only for M=1")
    theta = constrain(params.gamma)
    slope = theta[1] - theta[0]
    shift = params.beta_series[series_idx] if spec.n_series else 0.0
    sigma = 1.0 / slope
    intercept = -(theta[0] * (1.0 + params.phi.sum()) + shift) / slope
    ar = -params.phi.copy()
    if units == "outcome":
        w, lo = spec.bounds.width, spec.bounds.lower
        intercept = lo * (1.0 - ar.sum()) + w * intercept
        sigma = w * sigma
    elif units != "rescaled":
        raise ValueError(f"unknown units {units!r}")
    return float(intercept), ar, float(sigma)


@dataclass
class ATModel:
    """A model spec with fitted parameters, serializable to JSON."""

    spec: ModelSpec
    params: ParamVector
    training_meta: dict = field(default_factory=dict)
    series_levels: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        spec = self.spec.to_dict()
        if self.series_levels:
            spec["series_levels"] = list(self.series_levels)
        doc = {
            "spec": spec,
            "gamma": self.params.gamma.tolist(),
            "phi": self.params.phi.tolist(),
            "beta_series": self.params.beta_series.tolist(),
            "beta_exog": self.params.beta_exog.tolist(),
            "bounds": [self.spec.bounds.lower, self.spec.bounds.upper],
            "training_meta": {k: self.training_meta.get(k) for k in ("seed", "epochs_run", "final_nll")},
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ATModel":
        doc = json.loads(text)
        spec = ModelSpec.from_dict({**doc["spec"], "bounds": doc["bounds"]})
        params = ParamVector(doc["gamma"], doc["phi"], doc["beta_series"], doc["beta_exog"])
        params.check(spec)
        return cls(spec, params, dict(doc.get("training_meta") or {}),
                   list(doc["spec"].get("series_levels", [])))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ATModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
