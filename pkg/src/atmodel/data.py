"""Panel CSV input/output, lag-window rows and simulation generators."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import RowSet

BURN_IN = 200
AR_COEFFICIENTS = (0.4, 0.2, 0.1, 0.05, 0.025)


class PanelFormatError(ValueError):
    pass


@dataclass
class PanelDataset:
    """Long-format observations, sorted by series then time.

    ``series`` holds dense integer codes into ``series_ids`` (first-appearance
    order).
    """

    series_ids: list[str]
    series: np.ndarray
    time: np.ndarray
    y: np.ndarray
    exog: np.ndarray
    exog_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.int64)
        self.time = np.asarray(self.time, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        self.exog = np.asarray(self.exog, dtype=float).reshape(self.y.size, -1)
        if not self.exog_names:
            self.exog_names = [f"x{j + 1}" for j in range(self.exog.shape[1])]

    def __len__(self) -> int:
        return self.y.size

    @property
    def series_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.series_ids)}

    @property
    def records(self) -> list[tuple[str, int, float, np.ndarray]]:
        return [(self.series_ids[s], int(t), float(y), x)
                for s, t, y, x in zip(self.series, self.time, self.y, self.exog)]

    def series_values(self, code: int) -> np.ndarray:
        return self.y[self.series == code]

    @classmethod
    def single(cls, y, series_id: str = "0") -> "PanelDataset":
        y = np.asarray(y, dtype=float)
        return cls([series_id], np.zeros(y.size), np.arange(1, y.size + 1), y, np.zeros((y.size, 0)))


def load_panel_csv(path) -> PanelDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        if header[:3] != ["series_id", "time", "y"]:
            raise PanelFormatError(f"{path}: header must start with series_id,time,y; got {header}")
        exog_names = header[3:]
        ids: dict[str, int] = {}
        seen: set[tuple[str, int]] = set()
        codes, times, ys, xs = [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            sid = row[0]
            try:
                t = int(row[1])
            except ValueError:
                raise PanelFormatError(f"line {line}: non-integer time {row[1]!r}") from None
            try:
                y = float(row[2])
                x = [float(v) for v in row[3:]]
            except ValueError:
                raise PanelFormatError(f"line {line}: non-numeric value") from None
            if not math.isfinite(y):
                raise PanelFormatError(f"line {line}: non-finite y")
            if (sid, t) in seen:
                raise PanelFormatError(f"line {line}: duplicate time {t} for series {sid!r}")
            seen.add((sid, t))
            codes.append(ids.setdefault(sid, len(ids)))
            times.append(t)
            ys.append(y)
            xs.append(x)
    codes_a = np.array(codes, dtype=np.int64)
    times_a = np.array(times, dtype=np.int64)
    order = np.lexsort((times_a, codes_a))
    exog = np.array(xs, dtype=float).reshape(len(ys), len(exog_names))
    return PanelDataset(list(ids), codes_a[order], times_a[order], np.array(ys)[order],
                        exog[order], exog_names)


def write_panel_csv(data: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series_id", "time", "y", *data.exog_names])
        for s, t, y, x in zip(data.series, data.time, data.y, data.exog):
            writer.writerow([data.series_ids[s], int(t), repr(float(y)), *(repr(float(v)) for v in x)])


def build_rows(data: PanelDataset, p: int) -> RowSet:
    """Lag windows ``(y[t-1], ..., y[t-p])`` that never cross series boundaries."""
    if p < 0:
        raise ValueError("p must be non-negative")
    ys, lags, exog, sidx, times = [], [], [], [], []
    for code, sid in enumerate(data.series_ids):
        mask = data.series == code
        y = data.y[mask]
        n = y.size
        if n <= p:
            warnings.warn(f"series {sid!r} has {n} observations, needs more than p={p}; skipped")
            continue
        ys.append(y[p:])
        lags.append(np.column_stack([y[p - j - 1:n - j - 1] for j in range(p)]) if p else np.zeros((n - p, 0)))
        exog.append(data.exog[mask][p:])
        sidx.append(np.full(n - p, code))
        times.append(data.time[mask][p:])
    if not ys:
        return RowSet(np.zeros(0), np.zeros((0, p)), np.zeros((0, data.exog.shape[1])), np.zeros(0))
    return RowSet(np.concatenate(ys), np.concatenate(lags), np.concatenate(exog),
                  np.concatenate(sidx), np.concatenate(times))


def _simulate_ar(coefs, T: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    coefs = np.asarray(coefs, dtype=float)
    p = coefs.size
    eps = sigma * rng.standard_normal(T + BURN_IN)
    y = np.zeros(T + BURN_IN + p)
    for t in range(T + BURN_IN):
        y[p + t] = coefs @ y[p + t - 1::-1][:p] + eps[t] if p else eps[t]
    return y[p + BURN_IN:]


def gen_ar(p: int, coefs, T: int, sigma: float = 1.0, seed: int = 0) -> PanelDataset:
    """Zero-mean Gaussian AR(p) series of length T after a 200-step burn-in."""
    coefs = tuple(coefs)
    if len(coefs) != p:
        raise ValueError(f"need {p} coefficients, got {len(coefs)}")
    return PanelDataset.single(_simulate_ar(coefs, T, sigma, np.random.default_rng(seed)))


def gen_exp_ar(p: int, coefs, T: int, sigma: float = 1.0, seed: int = 0) -> PanelDataset:
    """``exp`` of ``gen_ar`` with the same arguments."""
    base = gen_ar(p, coefs, T, sigma, seed)
    if np.any(np.abs(base.y) > 700):
        raise OverflowError("generator overflow")
    return PanelDataset.single(np.exp(base.y))


def gen_bimodal(T: int = 1000, rho: float = 2.0, phi1: float = 0.1, seed: int = 0) -> PanelDataset:
    """Latent-sign mixture: y_t ~ N(phi1 * y_{t-1} + x_t, 1), x_t = +-rho equiprobable."""
    rng = np.random.default_rng(seed)
    x = rng.choice([-rho, rho], size=T)
    eps = rng.standard_normal(T)
    y = np.empty(T)
    prev = 0.0
    for t in range(T):
        prev = phi1 * prev + x[t] + eps[t]
        y[t] = prev
    return PanelDataset.single(y)
