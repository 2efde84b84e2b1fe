"""Command-line interface: simulate, fit, forecast, evaluate, bootstrap, reproduce."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .bernstein import SupportBounds
from .core import ATModel, ModelSpec, RowSet, SupervisedRow
from .data import (AR_COEFFICIENTS, PanelDataset, build_rows, gen_ar, gen_bimodal, gen_exp_ar,
                   load_panel_csv, write_panel_csv)
from .forecast import (forecast_paths, forecast_records, log_score, report_grid,
                       rollout_log_score, write_forecast_jsonl)
from .likelihood import per_row_nll
from .repro import DEFAULT_REPS, run_experiment, write_report
from .trainer import FitResult, TrainConfig, chronological_split, fit
from .uq import density_on_grid, information_estimates, parametric_bootstrap

BASE_NAMES = {"normal": "standard_normal", "logistic": "standard_logistic"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _series_codes(model: ATModel, data: PanelDataset) -> np.ndarray:
    """Map the data's series codes onto the model's shift coefficients."""
    if model.spec.n_series == 0:
        return np.zeros(len(data.series_ids), dtype=np.int64)
    lookup = {s: i for i, s in enumerate(model.series_levels)}
    missing = [s for s in data.series_ids if s not in lookup]
    if missing:
        raise ValueError(f"series not seen in training: {missing[:3]}")
    return np.array([lookup[s] for s in data.series_ids], dtype=np.int64)


def _model_rows(model: ATModel, data: PanelDataset) -> RowSet:
    rows = build_rows(data, model.spec.p)
    rows.series_idx = _series_codes(model, data)[rows.series_idx]
    if rows.exog.shape[1] != model.spec.n_exog:
        raise ValueError(f"data has {rows.exog.shape[1]} exogenous columns, model expects {model.spec.n_exog}")
    return rows


def _next_context(model: ATModel, data: PanelDataset, code: int) -> SupervisedRow:
    y = data.series_values(code)
    p = model.spec.p
    if y.size < p:
        raise ValueError(f"series {data.series_ids[code]!r} is shorter than p={p}")
    lags = y[::-1][:p].copy()
    exog = data.exog[data.series == code][-1] if len(y) else np.zeros(model.spec.n_exog)
    return SupervisedRow(0.0, lags, exog, int(_series_codes(model, data)[code]))


def cmd_simulate(args) -> None:
    if args.kind == "bimodal":
        data = gen_bimodal(args.T, seed=args.seed)
    else:
        if args.p > len(AR_COEFFICIENTS):
            raise UsageError(f"--p at most {len(AR_COEFFICIENTS)} for --kind {args.kind}")
        gen = gen_ar if args.kind == "ar" else gen_exp_ar
        data = gen(args.p, AR_COEFFICIENTS[:args.p], args.T, 1.0, args.seed)
    write_panel_csv(data, args.out)


def cmd_fit(args) -> None:
    data = load_panel_csv(args.data)
    n_levels = len(data.series_ids)
    # one series: the basis intercept already plays the role of the shift
    n_series = n_levels if n_levels > 1 else 0
    spec = ModelSpec(M=args.M, p=args.p, bounds=SupportBounds.from_data(data.y),
                     base=BASE_NAMES[args.base], n_series=n_series, n_exog=data.exog.shape[1])
    rows = build_rows(data, args.p)
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, val_fraction=args.val_frac, patience=args.patience)
    res = fit(spec, rows, cfg, progress=True)
    losses = per_row_nll(res.params, rows, spec)
    model = ATModel(spec, res.params,
                    {"seed": args.seed, "epochs_run": res.epochs_run, "final_nll": float(losses.mean())},
                    list(data.series_ids) if n_series else [])
    model.save(args.out)
    print(f"final_nll={losses.mean():.10g} final_nll_sum={losses.sum():.10g} "
          f"epochs_run={res.epochs_run} best_epoch={res.best_epoch}")


def cmd_forecast(args) -> None:
    try:
        levels = tuple(float(q) for q in args.quantiles.split(",") if q.strip())
    except ValueError:
        raise UsageError(f"--quantiles: cannot parse {args.quantiles!r}") from None
    if any(not 0 < q < 1 for q in levels):
        raise UsageError("--quantiles must lie strictly between 0 and 1")
    model = ATModel.load(args.model)
    data = load_panel_csv(args.data)
    records = []
    for code, sid in enumerate(data.series_ids):
        ctx = _next_context(model, data, code)
        schedule = np.tile(ctx.exog, (args.horizon, 1))
        fc = forecast_paths(model, ctx.lags, schedule, args.horizon, args.samples,
                            seed=[args.seed, code], series_idx=ctx.series_idx, levels=levels)
        records.extend(forecast_records(sid, fc))
    write_forecast_jsonl(args.out, records)


def cmd_evaluate(args) -> None:
    model = ATModel.load(args.model)
    rows = _model_rows(model, load_panel_csv(args.data))
    if args.mode == "teacher":
        score = log_score(model, rows)
    else:
        score = rollout_log_score(model, rows, seed=0)
    print(f"logscore={score:.10g}")


def cmd_bootstrap(args) -> None:
    model = ATModel.load(args.model)
    data = load_panel_csv(args.data)
    rows = _model_rows(model, data)
    spec = model.spec
    fixed = (0,) if spec.n_series else ()
    cfg = TrainConfig(seed=args.seed)
    train_idx, _ = chronological_split(rows, cfg.val_fraction)
    cov = information_estimates(model.params, rows.subset(train_idx), spec, fixed=fixed)
    grid = report_grid(model)
    ctx = _next_context(model, data, 0)
    fitted = FitResult(model.params, np.zeros(0), np.zeros(0), 0, True, spec)
    result = parametric_bootstrap(fitted, cov, rows, spec, args.replicates, args.seed, grid, ctx, cfg)
    result.write_jsonl(args.out)
    lower, upper = result.bands(0.9)
    dens = density_on_grid(model.params, spec, ctx, grid)
    out = Path(args.out)
    with open(out.with_name(out.stem + ".density.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "density", "lower_band", "upper_band"])
        for row in zip(grid, dens, lower, upper):
            w.writerow([repr(float(v)) for v in row])


def cmd_reproduce(args) -> None:
    reps = args.seeds or DEFAULT_REPS[args.experiment]
    rows = run_experiment(args.experiment, reps)
    write_report(rows, args.out)
    for r in rows:
        print(f"{r.experiment} {r.cell} {r.metric} run={r.run_mean:.4g} "
              f"paper={'' if r.paper_mean is None else r.paper_mean} pass={int(r.passed)}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atmodel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a simulated panel CSV")
    p.add_argument("--kind", choices=["ar", "expar", "bimodal"], required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="train an AT(p) model")
    p.add_argument("--data", required=True)
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--base", choices=sorted(BASE_NAMES), default="normal")
    p.add_argument("--epochs", type=int, default=2500)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("forecast", help="Monte-Carlo path forecasts as JSON lines")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--quantiles", default="0.05,0.5,0.95")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="mean log-score on a data file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["teacher", "rollout"], default="teacher")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bootstrap", help="parametric bootstrap of the fitted density")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("reproduce", help="rerun a simulation study and write a report CSV")
    p.add_argument("--experiment", choices=["table-d1", "table-d2", "qq"], required=True)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name in ("T", "epochs", "horizon", "samples", "replicates", "seeds", "batch_size", "patience"):
            value = getattr(args, name, None)
            if value is not None and value < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        args.func(args)
    except UsageError as exc:
        print(f"atmodel: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"atmodel: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
