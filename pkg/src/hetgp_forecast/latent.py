"""Within-season forecasting with a latent severity input.

Three hypotheses run side by side, one per nugget regime. Each keeps its own
latent severity value, started at the regime's label and moved within a small
window to maximize the predictive log likelihood (PLL) of the weeks observed
so far. The regimes are then weighted by prior times PLL and their joint
predictive draws are pooled.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import transform
from .features import SeverityThresholds, classify_severity, season_inputs, starting_levels
from .gp_core import REGIMES, HetGPModel, PredictiveMVN, pll, predict, sample_joint
from .ingest import WEEKS, SeasonSeries
from .targets import ForecastEnsemble

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RegimePrior:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("regime prior must be a 3-simplex")
        object.__setattr__(self, "p", p)

    @classmethod
    def uniform(cls) -> "RegimePrior":
        return cls(np.full(3, 1.0 / 3.0))


@dataclass
class LatentState:
    x4_hat: np.ndarray = field(default_factory=lambda: np.array(REGIMES, dtype=float))
    weights: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    week: int = 0
    updates: int = 0
    pll: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def start(cls, prior: RegimePrior) -> "LatentState":
        return cls(weights=prior.p.copy())


def initial_prior(series: SeasonSeries, x3_new: float, mode: str = "uniform",
                  thresholds: SeverityThresholds | None = None) -> RegimePrior:
    """Start-of-season regime probabilities.

    ``"x3-linear"`` regresses each historical season's transformed peak on
    its starting level, classifies the fitted peak at ``x3_new`` and gives
    that regime 0.5 and the other two 0.25 each. Too little or degenerate
    history falls back to uniform.
    """
    if mode == "uniform":
        return RegimePrior.uniform()
    if mode != "x3-linear":
        raise ValueError(f"unknown prior mode {mode!r}")
    if thresholds is None:
        raise ValueError("x3-linear prior needs severity thresholds")
    if series.n_seasons < 3:
        warnings.warn("x3-linear prior needs 3 seasons; using uniform", RuntimeWarning)
        return RegimePrior.uniform()
    x3 = starting_levels(series)
    if np.ptp(x3) == 0:
        warnings.warn("constant starting levels; using uniform prior", RuntimeWarning)
        return RegimePrior.uniform()
    peak = series.transformed.max(axis=1)
    slope, intercept = np.polyfit(x3, peak, 1)
    fitted = transform.inverse(intercept + slope * x3_new)
    regime = classify_severity([fitted], thresholds)
    p = np.full(3, 0.25)
    p[REGIMES.index(regime)] = 0.5
    return RegimePrior(p)


def _pll_at(model: HetGPModel, x3: float, y_obs, regime, x4: float, phase: float) -> float:
    X = season_inputs(x3, x4, phase)[: y_obs.size]
    return pll(model, X, y_obs, regime)


def _golden_max(f, a: float, b: float, iters: int = 20):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def update_latent(model: HetGPModel, state: LatentState, y_obs, regime, x3: float,
                  window: float = 0.25, grid: int = 51, phase: float = 0.0) -> float:
    """Maximize the PLL of the observed weeks over ``prev +/- window``.

    A uniform grid is searched first, then refined by golden section around
    the best grid point. Ties go to the value closest to the previous latent.
    Returns the new latent for ``regime``; ``state`` is not modified.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    prev = float(state.x4_hat[REGIMES.index(regime)])
    if y_obs.size == 0 or window <= 0:
        return prev

    def f(x4):
        return _pll_at(model, x3, y_obs, regime, x4, phase)

    cand = np.linspace(prev - window, prev + window, grid)
    vals = np.array([f(x) for x in cand])
    top = np.flatnonzero(vals == vals.max())
    i = int(top[np.argmin(np.abs(cand[top] - prev))])
    best_x, best_v = float(cand[i]), float(vals[i])
    step = cand[1] - cand[0]
    lo, hi = max(cand[0], best_x - step), min(cand[-1], best_x + step)
    x_ref, v_ref = _golden_max(f, lo, hi)
    if v_ref > best_v:
        best_x = float(x_ref)
    return best_x


def damped_prior(prior: RegimePrior, weeks_observed: int) -> np.ndarray:
    """Prior carried with unit information: ``p ** (1 / (j + 1))``, unnormalized."""
    return prior.p ** (1.0 / (weeks_observed + 1.0))


def combine_weights(prior: RegimePrior, plls, weeks_observed: int) -> np.ndarray:
    plls = np.asarray(plls, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(damped_prior(prior, weeks_observed)) + plls
    if not np.any(np.isfinite(logw)):
        warnings.warn("no regime has finite predictive likelihood; using uniform weights", RuntimeWarning)
        return np.full(3, 1.0 / 3.0)
    logw -= logw[np.isfinite(logw)].max()
    w = np.where(np.isfinite(logw), np.exp(logw), 0.0)
    return w / w.sum()


def regime_plls(model: HetGPModel, state: LatentState, y_obs, x3: float, phase: float = 0.0) -> np.ndarray:
    y_obs = np.asarray(y_obs, dtype=float)
    if y_obs.size == 0:
        return np.zeros(3)
    return np.array([_pll_at(model, x3, y_obs, r, state.x4_hat[k], phase) for k, r in enumerate(REGIMES)])


def regime_weights(model: HetGPModel, state: LatentState, prior: RegimePrior, y_obs,
                   x3: float, phase: float = 0.0) -> np.ndarray:
    """Posterior-style regime weights: damped prior times exp(PLL), normalized."""
    y_obs = np.asarray(y_obs, dtype=float)
    return combine_weights(prior, regime_plls(model, state, y_obs, x3, phase), y_obs.size)


def season_predictive(model: HetGPModel, y_obs, x3: float, x4: float, regime,
                      include_nugget: bool = True, phase: float = 0.0) -> PredictiveMVN:
    """Joint predictive over all 52 weeks given history and the observed weeks.

    Observed weeks always carry the regime's nugget; the 52 predicted weeks
    carry it only if ``include_nugget``.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    j = y_obs.size
    rows = season_inputs(x3, x4, phase)
    X = np.vstack([rows[:j], rows])
    p = predict(model, X, regime, include_nugget=False)
    cov = p.cov.copy()
    nug = model.tau2 * model.eta[REGIMES.index(regime)]
    cov[np.arange(j), np.arange(j)] += nug
    if include_nugget:
        cov[np.arange(j, j + WEEKS), np.arange(j, j + WEEKS)] += nug
    return PredictiveMVN(p.mean, cov).condition(np.arange(j), y_obs)


@dataclass
class ForecastConfig:
    window: float = 0.25
    grid: int = 51
    include_nugget: bool = True
    phase: float = 0.0


def forecast_week(model: HetGPModel, observed_counts, x3_new: float, state: LatentState,
                  prior: RegimePrior, m: int, seed=0, config: ForecastConfig | None = None,
                  update: bool = True, locale: str = "", season_label: str = ""):
    """Pooled ensemble over the three regimes at one forecast week.

    ``observed_counts`` are the raw counts of the weeks seen so far this
    season (length = forecast week). Latents are updated first when
    ``update`` is true. Regime ``r`` contributes ``ceil(m * w_r)`` joint draws
    whose weights sum to ``w_r``.

    Returns:
        (ForecastEnsemble on the count scale, updated LatentState)
    """
    config = config or ForecastConfig()
    observed_counts = np.asarray(observed_counts, dtype=float)
    y_obs = transform.forward(observed_counts) if observed_counts.size else observed_counts
    j = y_obs.size
    x4_hat = state.x4_hat.copy()
    updates = state.updates
    if update and j > 0:
        for k, r in enumerate(REGIMES):
            x4_hat[k] = update_latent(model, state, y_obs, r, x3_new, config.window, config.grid, config.phase)
        updates += 1
    new_state = LatentState(x4_hat=x4_hat, week=j, updates=updates)
    plls = regime_plls(model, new_state, y_obs, x3_new, config.phase)
    weights = combine_weights(prior, plls, j)
    new_state.pll = plls
    new_state.weights = weights

    seed_seq = np.random.SeedSequence(seed)
    children = seed_seq.spawn(len(REGIMES))
    blocks, wblocks = [], []
    for k, r in enumerate(REGIMES):
        n_r = int(math.ceil(m * weights[k] - 1e-9))
        if n_r <= 0:
            continue
        p = season_predictive(model, y_obs, x3_new, x4_hat[k], r, config.include_nugget, config.phase)
        draws = sample_joint(p, n_r, np.random.default_rng(children[k]))
        blocks.append(transform.inverse(draws))
        wblocks.append(np.full(n_r, weights[k] / n_r))
    ens = ForecastEnsemble(
        np.vstack(blocks), np.concatenate(wblocks), locale=locale, season_label=season_label,
        forecast_week=j,
        provenance={
            "method": "hetgp",
            "regime_weights": [float(w) for w in weights],
            "latent_x4": [float(x) for x in x4_hat],
        },
    )
    return ens, new_state

