"""Command-line entry point: ``hetgp-forecast {fit,forecast,score,pit,report}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import load_config
from .evaluate import ScoreTable, first_weeks_cuts, mae_and_ranks, pit_histogram
from .features import INPUT_SCALE, build_features
from .gp_core import write_model_file
from .hetgp_mle import fit
from .pipeline import collect, load_inputs, read_pit, run_season, season_ensembles
from .targets import extract_targets, substitute_observed


def _common(p: argparse.ArgumentParser, data=True):
    p.add_argument("--config", help="INI run configuration")
    if data:
        p.add_argument("--data", help="incidence CSV")
        p.add_argument("--covariates", help="covariate CSV")
        p.add_argument("--locale", help="locale code, e.g. sj or iq")
        p.add_argument("--method", help="hetgp, glm, hybrid, or a comma-separated list")
        p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetgp-forecast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the GP on historical seasons and write a model file")
    _common(p)
    p.add_argument("--season", help="fit on the seasons before this label (default: all)")

    p = sub.add_parser("forecast", help="write one forecast JSON")
    _common(p)
    p.add_argument("--season", required=True, help="season to forecast")
    p.add_argument("--week", type=int, required=True, help="forecast week (weeks observed)")

    p = sub.add_parser("score", help="rolling forecasts and scores for the test seasons")
    _common(p)

    p = sub.add_parser("pit", help="PIT histograms from a score run")
    _common(p, data=False)
    p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("report", help="average log score, rank and MAE from a score run")
    _common(p, data=False)
    return parser


def _config(args, **extra):
    overrides = dict(incidence=getattr(args, "data", None), covariates=getattr(args, "covariates", None),
                     locale=getattr(args, "locale", None), method=getattr(args, "method", None),
                     seed=getattr(args, "seed", None))
    overrides.update(extra)
    return load_config(args.config, **overrides)


def cmd_fit(args) -> int:
    cfg = _config(args)
    inputs = load_inputs(cfg)
    series = inputs.series
    s = series.index(args.season) if args.season else series.n_seasons
    history = series.head(s)
    fm = build_features(history, cfg.thresholds, cfg.phase)
    res = fit(fm.X, fm.y, cfg.mle_config(INPUT_SCALE))
    ref = {"data": cfg.incidence, "locale": series.locale, "first_season": history.labels[0],
           "last_season": history.labels[-1], "mild_max": cfg.thresholds.mild_max,
           "severe_min": cfg.thresholds.severe_min, "loglik": repr(res.loglik),
           "converged": res.converged}
    write_model_file(res.model, args.out, ref)
    print(f"theta={np.array2string(res.model.theta, precision=4)} eta={np.array2string(res.model.eta, precision=5)} "
          f"tau2={res.model.tau2:.5g} loglik={res.loglik:.4f} converged={res.converged}")
    return 0


def cmd_forecast(args) -> int:
    cfg = _config(args)
    if args.week not in cfg.weeks:
        # the latent path depends on the cadence, so run every cadence week up to the requested one
        cfg = _config(args, first_week=args.week % cfg.forecast_step, last_week=args.week)
    else:
        cfg = _config(args, last_week=args.week)
    inputs = load_inputs(cfg)
    series = inputs.series
    s = series.index(args.season)
    for week, by_method in season_ensembles(cfg, inputs, s):
        if week != args.week:
            continue
        out = Path(args.out)
        for method, ens in by_method.items():
            ens = substitute_observed(ens, series.counts[s, :week])
            dist = extract_targets(ens, cfg.buckets)
            meta = {"locale": series.locale, "season": series.labels[s], "forecast_week": week,
                    "method": method, "draws": cfg.draws, "seed": cfg.seed, "provenance": ens.provenance}
            path = out if len(by_method) == 1 else out.with_name(f"{out.stem}_{method}{out.suffix}")
            path.write_text(dist.to_json(cfg.level, meta), encoding="utf-8")
            print(path)
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    table = run_season(cfg, args.out)
    _print_summary(table)
    return 0


def cmd_pit(args) -> int:
    rows = read_pit(collect(args.out, "pit.csv"))
    if not rows:
        print(f"no pit.csv files under {args.out}", file=sys.stderr)
        return 1
    groups = defaultdict(list)
    for r in rows:
        groups[(r["method"], r["locale"], r["target"])].append(r["pit"])
    path = Path(args.out) / "pit_histogram.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "locale", "target"] + [f"bin{i + 1}" for i in range(args.bins)])
        for key in sorted(groups):
            counts = pit_histogram(groups[key], args.bins)
            w.writerow(list(key) + counts.tolist())
            print(" ".join(key), counts.tolist())
    return 0


def _print_summary(table: ScoreTable, out=None):
    rows = []
    for cut, sub in first_weeks_cuts(table).items():
        if not sub.rows:
            continue
        for (method, locale, target), v in mae_and_ranks(sub).items():
            rows.append([cut, method, locale, target, v["n"], v["avg_score"], v["avg_rank"], v["mae"]])
    print(f"{'cut':<12}{'method':<8}{'locale':<8}{'target':<17}{'n':>4}{'score':>10}{'rank':>7}{'mae':>10}")
    for r in rows:
        print(f"{r[0]:<12}{r[1]:<8}{r[2]:<8}{r[3]:<17}{r[4]:>4}{r[5]:>10.3f}{r[6]:>7.2f}{r[7]:>10.2f}")
    if out is not None:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cut", "method", "locale", "target", "n", "avg_log_score", "avg_rank", "mae"])
            w.writerows([r[:5] + [repr(r[5]), repr(r[6]), repr(r[7])] for r in rows])


def cmd_report(args) -> int:
    paths = collect(args.out, "scores.csv")
    if not paths:
        print(f"no scores.csv files under {args.out}", file=sys.stderr)
        return 1
    table = ScoreTable()
    for p in paths:
        table.extend(ScoreTable.from_csv(p))
    _print_summary(table, Path(args.out) / "report.csv")
    return 0


COMMANDS = {"fit": cmd_fit, "forecast": cmd_forecast, "score": cmd_score, "pit": cmd_pit, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
