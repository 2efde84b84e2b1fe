"""Simulation studies: AR recovery, multiplicative AR recovery and QQ calibration."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .bernstein import SupportBounds
from .core import ModelSpec, at_to_ar
from .data import AR_COEFFICIENTS, build_rows, gen_ar, gen_exp_ar
from .trainer import TrainConfig, chronological_split, fit
from .uq import information_estimates

# AT(p) rows of the published tables: (T, p) -> (mean, sd) of 100 * MSE
TABLE_D1 = {
    (200, 1): (0.73, 1.0), (200, 2): (0.68, 0.6), (200, 5): (0.69, 0.42),
    (1000, 1): (0.17, 0.25), (1000, 2): (0.15, 0.16), (1000, 5): (0.17, 0.11),
    (5000, 1): (0.06, 0.09), (5000, 2): (0.05, 0.05), (5000, 5): (0.05, 0.03),
}
TABLE_D2 = {
    (200, 1): (0.49, 0.62), (200, 2): (0.57, 0.76), (200, 4): (0.65, 0.45),
    (400, 1): (0.52, 0.46), (400, 2): (0.33, 0.3), (400, 4): (0.34, 0.23),
    (800, 1): (0.26, 0.36), (800, 2): (0.17, 0.17), (800, 4): (0.18, 0.12),
}
QQ_COEFFICIENTS = (0.3, 0.2, 0.1)
TOLERANCE_FACTOR = 3.0
DEFAULT_REPS = {"table-d1": 20, "table-d2": 20, "qq": 200}


@dataclass
class ReportRow:
    experiment: str
    cell: str
    metric: str
    paper_mean: float | None
    paper_sd: float | None
    run_mean: float
    run_sd: float
    n_reps: int
    passed: bool


def _map(fn, tasks):
    workers = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def recovery_mse(task) -> float:
    """100 * MSE of recovered AR coefficients for one simulated dataset."""
    kind, T, p, M, seed = task
    coefs = np.array(AR_COEFFICIENTS[:p])
    gen = gen_ar if kind == "ar" else gen_exp_ar
    data = gen(p, coefs, T, 1.0, seed)
    spec = ModelSpec(M=M, p=p, bounds=SupportBounds.from_data(data.y))
    res = fit(spec, build_rows(data, p), TrainConfig(seed=seed))
    est = at_to_ar(res.params, spec)[1] if M == 1 else -res.params.phi
    return float(100.0 * np.mean((est - coefs) ** 2))


def recovery_table(kind: str, cells: dict, M: int, reps: int, seed0: int = 0) -> list[ReportRow]:
    name = "table_d1" if kind == "ar" else "table_d2"
    tasks = [(kind, T, p, M, seed0 + 1000 * T + 100 * p + r) for (T, p) in cells for r in range(reps)]
    mses = np.array(_map(recovery_mse, tasks)).reshape(len(cells), reps)
    rows = []
    for (T, p), vals in zip(cells, mses):
        pm, psd = cells[(T, p)]
        rows.append(ReportRow(name, f"T={T},p={p}", "mse_x100", pm, psd, float(vals.mean()),
                              float(vals.std(ddof=1)) if reps > 1 else 0.0, reps,
                              bool(vals.mean() <= TOLERANCE_FACTOR * pm)))
    return rows


def calibration_replicate(task):
    """Lag-weight estimates and sandwich standard errors for one exp-AR(3) dataset."""
    T, M, seed = task
    p = len(QQ_COEFFICIENTS)
    data = gen_exp_ar(p, QQ_COEFFICIENTS, T, 1.0, seed)
    spec = ModelSpec(M=M, p=p, bounds=SupportBounds.from_data(data.y))
    rows = build_rows(data, p)
    cfg = TrainConfig(seed=seed)
    res = fit(spec, rows, cfg)
    est = -res.params.phi
    train_idx, _ = chronological_split(rows, cfg.val_fraction)
    try:
        # the estimator only saw the training rows
        cov = information_estimates(res.params, rows.subset(train_idx), spec)
    except np.linalg.LinAlgError:
        return est, np.full(p, np.nan)
    return est, cov.std_errors()[spec.slices()["phi"]]


def qq_correlation(z: np.ndarray) -> float:
    z = np.sort(z)
    n = z.size
    theo = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return float(np.corrcoef(z, theo)[0, 1])


def calibration_study(reps: int, T: int = 1000, M: int = 30, seed0: int = 500_000,
                      level: float = 0.9) -> tuple[list[ReportRow], dict]:
    out = _map(calibration_replicate, [(T, M, seed0 + r) for r in range(reps)])
    est = np.array([o[0] for o in out])
    se = np.array([o[1] for o in out])
    ok = np.all(np.isfinite(se), axis=1)
    truth = np.array(QQ_COEFFICIENTS)
    z = (est[ok] - truth) / se[ok]
    crit = norm.ppf(0.5 + level / 2)
    rows = []
    for j in range(truth.size):
        corr = qq_correlation(z[:, j])
        cover = float(np.mean(np.abs(z[:, j]) <= crit))
        cell = f"lag{j + 1}"
        rows.append(ReportRow("qq", cell, "qq_correlation", None, None, corr, 0.0, int(ok.sum()), corr > 0.99))
        rows.append(ReportRow("qq", cell, f"wald_coverage_{level:g}", level, None, cover, 0.0,
                              int(ok.sum()), 0.85 <= cover <= 0.95))
    return rows, {"estimates": est, "std_errors": se, "z": z, "singular": int((~ok).sum())}


def run_experiment(name: str, reps: int | None = None) -> list[ReportRow]:
    reps = reps or DEFAULT_REPS[name]
    if name == "table-d1":
        return recovery_table("ar", TABLE_D1, 1, reps)
    if name == "table-d2":
        return recovery_table("expar", TABLE_D2, 30, reps)
    if name == "qq":
        return calibration_study(reps)[0]
    raise ValueError(f"unknown experiment {name!r}")


def write_report(rows: list[ReportRow], path) -> None:
    fields = ["experiment", "cell", "metric", "paper_mean", "paper_sd", "run_mean", "run_sd",
              "n_reps", "pass"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r.experiment, r.cell, r.metric,
                        "" if r.paper_mean is None else r.paper_mean,
                        "" if r.paper_sd is None else r.paper_sd,
                        f"{r.run_mean:.6g}", f"{r.run_sd:.6g}", r.n_reps, int(r.passed)])
