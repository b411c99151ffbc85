"""Rolling within-season forecasts, scoring and output files."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import glm
from .config import RunConfig
from .evaluate import PIT_COLUMNS, ScoreTable, log_score, pit_values
from .features import INPUT_SCALE, build_features
from .hetgp_mle import MleResult, fit
from .ingest import WEEKS, CovariateFrame, SeasonSeries, load_covariates, load_incidence
from .latent import LatentState, forecast_week, initial_prior
from .targets import (
    TARGETS, ForecastEnsemble, extract_targets, mix_hybrid, observed_targets, substitute_observed,
    weighted_quantile,
)

log = logging.getLogger(__name__)

METHOD_CODES = {"hetgp": 1, "glm": 2}


class InsufficientHistoryError(ValueError):
    pass


@dataclass
class Inputs:
    series: SeasonSeries
    covariates: dict  # name -> weekly array aligned with series.counts.ravel()


def load_inputs(cfg: RunConfig) -> Inputs:
    if not cfg.incidence:
        raise ValueError("no incidence file configured")
    series = load_incidence(cfg.incidence, cfg.locale, cfg.season_column, cfg.week_column,
                            cfg.cases_column, cfg.locale_column or None)
    covs: dict = {}
    if cfg.covariates:
        frame: CovariateFrame = load_covariates(
            cfg.covariates, cfg.season_column, cfg.week_column,
            exclude=tuple(c for c in (cfg.locale_column, cfg.cases_column) if c),
        ).align_to(series)
        if cfg.traits and cfg.temperature_column in frame.columns:
            curves = glm.load_trait_curves(cfg.traits)
            raw = glm.r0_from_temperature(frame[cfg.temperature_column], curves)
            ok = np.isfinite(raw)
            scaled = np.full(raw.size, np.nan)
            scaled[ok] = glm.r0_scaled(raw[ok])
            frame = frame.with_column("r0", scaled)
        covs = dict(frame.columns)
    return Inputs(series, covs)


def season_position(cfg: RunConfig, series: SeasonSeries) -> list:
    """Indices of the test seasons."""
    if cfg.test_seasons:
        return [series.index(label) for label in cfg.test_seasons]
    n = min(cfg.n_test, series.n_seasons)
    return list(range(series.n_seasons - n, series.n_seasons))


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", text).strip("-")


def fit_history(cfg: RunConfig, series: SeasonSeries, s: int) -> MleResult:
    """Fit the heteroskedastic GP on the seasons before position ``s``."""
    if s < 2:
        raise InsufficientHistoryError(f"season {series.labels[s]!r} has {s} prior seasons; need at least 2")
    fm = build_features(series.head(s), cfg.thresholds, cfg.phase)
    res = fit(fm.X, fm.y, cfg.mle_config(INPUT_SCALE))
    log.info("fitted %s on %d rows: theta=%s eta=%s converged=%s", series.labels[s], fm.n,
             np.round(res.model.theta, 4), np.round(res.model.eta, 5), res.converged)
    return res


def _seed(cfg, s, week, method):
    return [cfg.seed, s, week, METHOD_CODES[method]]


def hetgp_ensembles(cfg: RunConfig, series: SeasonSeries, s: int, fit_result: MleResult | None = None):
    """Yield ``(week, ensemble)`` for the hetGP method over the configured weeks.

    The latent state is updated at each forecast week, so weeks are visited
    in order.
    """
    fit_result = fit_result or fit_history(cfg, series, s)
    history = series.head(s)
    x3_new = float(series.transformed[s - 1, -1])
    prior = initial_prior(history, x3_new, cfg.prior, cfg.thresholds)
    state = LatentState.start(prior)
    fc = cfg.forecast_config()
    for week in cfg.weeks:
        ens, state = forecast_week(fit_result.model, series.counts[s, :week], x3_new, state, prior,
                                   cfg.draws, _seed(cfg, s, week, "hetgp"), fc,
                                   locale=series.locale, season_label=series.labels[s])
        ens.provenance["loglik"] = float(fit_result.loglik)
        ens.provenance["converged"] = bool(fit_result.converged)
        yield week, ens


def glm_ensemble(cfg: RunConfig, inputs: Inputs, s: int, week: int) -> ForecastEnsemble:
    if s < 2:
        raise InsufficientHistoryError(f"season position {s} has fewer than 2 prior seasons")
    series = inputs.series
    uni = glm.PredictorUniverse.for_locale(cfg.locale)
    ens, model = glm.forecast_season(series.counts.ravel(), inputs.covariates, uni, s, week, cfg.draws,
                                     _seed(cfg, s, week, "glm"), series.locale, series.labels[s])
    ens.provenance.update(terms=list(model.names), dispersion=float(model.dispersion), bic=float(model.bic))
    return ens


def season_ensembles(cfg: RunConfig, inputs: Inputs, s: int, fit_result: MleResult | None = None):
    """Yield ``(week, {method: ensemble})`` for every configured method."""
    methods = cfg.methods
    need_gp = "hetgp" in methods or "hybrid" in methods
    need_glm = "glm" in methods or "hybrid" in methods
    if s < 2:
        raise InsufficientHistoryError(f"season {inputs.series.labels[s]!r} has {s} prior seasons; need at least 2")
    gp_iter = hetgp_ensembles(cfg, inputs.series, s, fit_result) if need_gp else None
    for idx, week in enumerate(cfg.weeks):
        out = {}
        if need_gp:
            _, out["hetgp"] = next(gp_iter)
        if need_glm:
            out["glm"] = glm_ensemble(cfg, inputs, s, week)
        if "hybrid" in methods:
            hy = mix_hybrid(out["hetgp"], out["glm"], s, idx, cfg.min_years, cfg.gp_only_forecasts)
            out["hybrid"] = hy.replace(provenance=dict(hy.provenance, method="hybrid"))
        yield week, {m: out[m] for m in methods}


def fan_chart_data(ens: ForecastEnsemble) -> np.ndarray:
    """Rows of (week, mean, q05, q95) from the weighted trajectories."""
    traj, w = ens.trajectories, ens.weights
    rows = []
    for k in range(WEEKS):
        col = traj[:, k]
        rows.append((k + 1, float(w @ col), weighted_quantile(col, w, 0.05), weighted_quantile(col, w, 0.95)))
    return np.array(rows)


def fan_chart_svg(data: np.ndarray, observed, title: str, width: int = 640, height: int = 360) -> str:
    """Standalone SVG: 5-95% band, mean line and observed points."""
    observed = np.asarray(observed, dtype=float)
    top = max(float(data[:, 3].max()), float(observed.max()) if observed.size else 0.0, 1.0)
    pad = 40

    def px(week):
        return pad + (week - 1) / (WEEKS - 1) * (width - 2 * pad)

    def py(v):
        return height - pad - v / top * (height - 2 * pad)

    upper = " ".join(f"{px(r[0]):.2f},{py(r[3]):.2f}" for r in data)
    lower = " ".join(f"{px(r[0]):.2f},{py(r[2]):.2f}" for r in data[::-1])
    mean = " ".join(f"{px(r[0]):.2f},{py(r[1]):.2f}" for r in data)
    dots = "".join(f'<circle cx="{px(i + 1):.2f}" cy="{py(v):.2f}" r="2.5" fill="black"/>'
                   for i, v in enumerate(observed))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="100%" height="100%" fill="white"/>'
        f'<text x="{pad}" y="20" font-family="sans-serif" font-size="13">{title}</text>'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="gray"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="gray"/>'
        f'<text x="{pad}" y="{height - 10}" font-family="sans-serif" font-size="11">week 1</text>'
        f'<text x="{width - pad - 40}" y="{height - 10}" font-family="sans-serif" font-size="11">week {WEEKS}</text>'
        f'<text x="4" y="{pad}" font-family="sans-serif" font-size="11">{top:.0f}</text>'
        f'<polygon points="{upper} {lower}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>'
        f'<polyline points="{mean}" fill="none" stroke="#08519c" stroke-width="2"/>'
        f"{dots}</svg>\n"
    )


def run_season(cfg: RunConfig, out_dir, inputs: Inputs | None = None) -> ScoreTable:
    """Forecast, score and write outputs for every test season.

    Layout under ``out_dir``: one ``<locale>_<season>`` directory per test
    season with ``forecasts/<method>_week_NN.json``, ``scores.csv``,
    ``pit.csv`` and, if enabled, ``fan/<method>_week_NN.{csv,svg}``.
    """
    inputs = inputs or load_inputs(cfg)
    series = inputs.series
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    buckets = cfg.buckets
    table = ScoreTable()
    for s in season_position(cfg, series):
        label = series.labels[s]
        season_dir = out_dir / safe_name(f"{series.locale}_{label}")
        (season_dir / "forecasts").mkdir(parents=True, exist_ok=True)
        truth = observed_targets(series.counts[s])
        season_table = ScoreTable()
        pit_rows = []
        for week, by_method in season_ensembles(cfg, inputs, s):
            observed = series.counts[s, :week]
            for method, ens in by_method.items():
                ens = substitute_observed(ens, observed)
                dist = extract_targets(ens, buckets)
                meta = {"locale": series.locale, "season": label, "forecast_week": week,
                        "method": method, "draws": cfg.draws, "seed": cfg.seed,
                        "provenance": ens.provenance}
                name = f"{method}_week_{week:02d}"
                (season_dir / "forecasts" / f"{name}.json").write_text(dist.to_json(cfg.level, meta), encoding="utf-8")
                for t in TARGETS:
                    season_table.add(method, series.locale, t, label, week,
                                     log_score(dist, t, truth[t], cfg.log_floor),
                                     abs(dist.point[t] - truth[t]))
                pits = pit_values(dist, truth)
                pit_rows += [(method, series.locale, t, label, week, pits[t]) for t in TARGETS]
                if cfg.fan_charts:
                    fan_dir = season_dir / "fan"
                    fan_dir.mkdir(exist_ok=True)
                    data = fan_chart_data(ens)
                    np.savetxt(fan_dir / f"{name}.csv", data, delimiter=",", fmt="%.6g",
                               header="week,mean,q05,q95", comments="")
                    (fan_dir / f"{name}.svg").write_text(
                        fan_chart_svg(data, series.counts[s], f"{series.locale} {label} {method} week {week}"),
                        encoding="utf-8")
        season_table.to_csv(season_dir / "scores.csv")
        with open(season_dir / "pit.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PIT_COLUMNS)
            w.writerows([r[:5] + (repr(float(r[5])),) for r in pit_rows])
        table.extend(season_table)
    return table


def collect(out_dir, name: str) -> list:
    """Paths of every ``name`` file one level below ``out_dir``."""
    return sorted(Path(out_dir).glob(f"*/{name}"))


def read_pit(paths) -> list:
    rows = []
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                r["week"] = int(r["week"])
                r["pit"] = float(r["pit"])
                rows.append(r)
    return rows


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"

