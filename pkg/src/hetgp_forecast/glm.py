"""Negative-binomial GLM comparator.

Weekly counts are regressed on deterministic terms, case-derived
autoregressive terms and smoothed, lagged covariates through a log link.
Terms are chosen by bidirectional stepwise BIC. Covariates needed beyond the
forecast week are simulated from small Gaussian time-series models, and
trajectories are drawn week by week so the autoregressive term sees the
previous simulated count.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .ingest import WEEKS, interpolate_linear
from .targets import ForecastEnsemble

log = logging.getLogger(__name__)

SMOOTH_WINDOW = 10
SIZE_BOUNDS = (1e-2, 1e6)
MU_CAP = 1e9


class NegBinFitError(RuntimeError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


# -- smoothing and R0 --------------------------------------------------------


def smooth(series, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """One-sided moving average over the current and previous ``window - 1`` weeks.

    The first ``window - 1`` entries are NaN.
    """
    x = np.asarray(series, dtype=float)
    if x.size < window:
        raise ValueError(f"need at least {window} values to smooth")
    out = np.full(x.size, np.nan)
    out[window - 1:] = np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=1)
    return out


@dataclass(frozen=True)
class MosquitoTraits:
    a: float
    bc: float
    mu: float
    PDR: float
    EFD: float
    pEA: float
    MDR: float
    N: float = 1.0
    r: float = 1.0


def mosquito_density(t: MosquitoTraits) -> float:
    """Adult mosquito density ``EFD * pEA * MDR / mu^2``."""
    if t.mu <= 0:
        raise ValueError("mortality rate must be positive")
    return t.EFD * t.pEA * t.MDR / t.mu ** 2


def r0(t: MosquitoTraits) -> float:
    """Basic reproductive rate from mosquito and human traits."""
    if t.mu <= 0 or t.PDR <= 0 or t.N <= 0 or t.r <= 0:
        raise ValueError("mu, PDR, N and r must be positive")
    if min(t.a, t.bc, t.EFD, t.pEA, t.MDR) < 0:
        raise ValueError("trait values must be nonnegative")
    M = mosquito_density(t)
    return math.sqrt(M / (t.N * t.r) * t.a ** 2 * t.bc * math.exp(-t.mu / t.PDR) / t.mu)


def r0_scaled(values) -> np.ndarray:
    """Min-max rescale of a weekly R0 series to [0, 1]; constant series -> 0.5."""
    v = np.asarray(
        [r0(x) if isinstance(x, MosquitoTraits) else float(x) for x in np.atleast_1d(values)],
        dtype=float,
    )
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("need at least one finite R0 value")
    span = v.max() - v.min()
    if span == 0:
        return np.full(v.size, 0.5)
    return (v - v.min()) / span


TRAIT_COLUMNS = ("a", "bc", "mu", "PDR", "EFD", "pEA", "MDR")


def load_trait_curves(path) -> dict:
    """Read trait values tabulated by temperature (columns ``temperature`` + traits)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no trait rows")
    cols = ("temperature",) + TRAIT_COLUMNS
    missing = [c for c in cols if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    data = {c: np.array([float(r[c]) for r in rows]) for c in cols}
    order = np.argsort(data["temperature"])
    return {c: v[order] for c, v in data.items()}


def r0_from_temperature(temps, curves: dict, N: float = 1.0, r: float = 1.0) -> np.ndarray:
    """R0 at each temperature, interpolating every trait curve linearly."""
    temps = np.asarray(temps, dtype=float)
    out = np.full(temps.size, np.nan)
    for i, T in enumerate(temps):
        if np.isnan(T):
            continue
        vals = {c: float(np.interp(T, curves["temperature"], curves[c])) for c in TRAIT_COLUMNS}
        out[i] = r0(MosquitoTraits(N=N, r=r, **vals))
    return out


# -- negative binomial regression -------------------------------------------


def nb_loglik(y, mu, size) -> float:
    """Log likelihood with variance ``mu + mu^2 / size``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(
        gammaln(y + size) - gammaln(size) - gammaln(y + 1.0)
        + size * np.log(size / (size + mu)) + y * np.log(mu / (size + mu))
    ))


def nb_deviance(y, mu, size) -> float:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y + size) * np.log((y + size) / (mu + size))))


@dataclass
class NegBinModel:
    names: tuple
    coefficients: np.ndarray
    dispersion: float  # the size parameter
    loglik: float
    n: int
    iterations: int = 0
    cov: np.ndarray | None = field(default=None, repr=False)
    path: list = field(default_factory=list, repr=False)

    @property
    def selected(self) -> frozenset:
        return frozenset(n for n in self.names if n != "(intercept)")

    @property
    def n_params(self) -> int:
        return len(self.names) + 1

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * math.log(self.n)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov)) if self.cov is not None else np.full(len(self.names), np.nan)

    def mean(self, design) -> np.ndarray:
        return np.exp(np.clip(np.asarray(design, float) @ self.coefficients, -700, 700))

    def report(self) -> dict:
        return {
            "terms": list(self.names),
            "coefficients": {n: float(b) for n, b in zip(self.names, self.coefficients)},
            "dispersion": float(self.dispersion),
            "loglik": float(self.loglik),
            "bic": float(self.bic),
            "n": int(self.n),
        }


def _irls(X, y, size, beta, tol, max_iter, trace):
    eta = X @ beta
    mu = np.exp(eta)
    dev = nb_deviance(y, mu, size)
    for it in range(1, max_iter + 1):
        w = mu / (1.0 + mu / size)
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = new - beta
        for _ in range(30):
            eta_new = X @ (beta + step)
            if np.all(np.isfinite(eta_new)) and eta_new.max() < 700:
                mu_new = np.exp(eta_new)
                dev_new = nb_deviance(y, mu_new, size)
                if np.isfinite(dev_new) and dev_new <= dev + 1e-10 * (abs(dev) + 1):
                    break
            step *= 0.5
        else:
            raise NegBinFitError("IRLS step halving failed", trace)
        beta, eta, mu = beta + step, eta_new, mu_new
        change = abs(dev - dev_new)
        dev = dev_new
        trace.append(("irls", it, dev))
        if change <= tol * (abs(dev) + 0.1):
            return beta, mu, it
    raise NegBinFitError(f"IRLS did not converge in {max_iter} iterations", trace)


def _golden_min(f, a, b, tol=1e-7):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    fa, fb = f(a), f(b)
    return min((fc, c), (fd, d), (fa, a), (fb, b))[1]


def fit_negbin(design, y, names=None, tol: float = 1e-8, max_iter: int = 100) -> NegBinModel:
    """Maximum-likelihood negative-binomial regression with log link.

    Alternates IRLS for the coefficients at fixed size with a golden-section
    search of the profile likelihood over log size in [1e-2, 1e6], until the
    deviance changes by less than ``tol`` (relative).

    Raises:
        NegBinFitError: on rank deficiency or divergence, with the iteration trace.
    """
    X = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(p))
    if n <= p:
        raise NegBinFitError(f"need more rows ({n}) than columns ({p})")
    if np.linalg.matrix_rank(X) < p:
        raise NegBinFitError("design matrix is rank deficient")
    if np.any(y < 0) or not np.all(np.isfinite(X)):
        raise NegBinFitError("counts must be nonnegative and design finite")

    trace: list = []
    beta, *_ = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)
    m, v = y.mean(), y.var()
    size = float(np.clip(m * m / (v - m), *SIZE_BOUNDS)) if v > m else SIZE_BOUNDS[1]
    lo, hi = np.log(SIZE_BOUNDS)
    # -2 loglik tracks the deviance across changes of size
    dev_prev = math.inf
    total = 0
    for outer in range(1, max_iter + 1):
        beta, mu, it = _irls(X, y, size, beta, tol, max_iter, trace)
        total += it
        size = math.exp(_golden_min(lambda ls: -nb_loglik(y, mu, math.exp(ls)), lo, hi))
        dev = -2.0 * nb_loglik(y, mu, size)
        trace.append(("size", outer, size))
        if abs(dev - dev_prev) <= tol * (abs(dev) + 0.1):
            break
        dev_prev = dev
    else:
        raise NegBinFitError("dispersion alternation did not converge", trace)
    beta, mu, it = _irls(X, y, size, beta, tol, max_iter, trace)
    w = mu / (1.0 + mu / size)
    try:
        cov = np.linalg.inv(X.T @ (X * w[:, None]))
    except np.linalg.LinAlgError:
        cov = None
    return NegBinModel(names, beta, size, nb_loglik(y, mu, size), n, total + it, cov)


# -- predictor universe -------------------------------------------------------


@dataclass(frozen=True)
class PredictorDef:
    """A smoothed, lagged, transformed covariate column."""

    name: str
    source: str
    transform: str = "identity"  # identity | log | log1p | sq | log1p_sq
    lag: int = 1

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.transform == "identity":
                return x
            if self.transform == "log":
                return np.log(x)
            if self.transform == "log1p":
                return np.log1p(np.maximum(x, 0.0))
            if self.transform == "sq":
                return x * x
            if self.transform == "log1p_sq":
                return np.log1p(np.maximum(x, 0.0)) ** 2
        raise ValueError(f"unknown transform {self.transform!r}")


DETERMINISTIC = ("t", "ci", "sin52", "cos52", "sin26", "cos26")


def _defs(spec):
    out = []
    for base, source, tr, lags in spec:
        for lag in lags:
            out.append(PredictorDef(f"{base}_l{lag}", source, tr, lag))
    return tuple(out)


@dataclass(frozen=True)
class PredictorUniverse:
    """Deterministic terms plus smoothed candidate predictors.

    ``ly`` (lagged smoothed log cases) and ``lgm`` (historical same-week log
    mean) are built from the incidence series; every other smoothed term
    reads a covariate column named by its ``source``.
    """

    deterministic: tuple = DETERMINISTIC
    ly_lags: tuple = (1,)
    use_lgm: bool = True
    smoothed: tuple = ()

    @classmethod
    def for_locale(cls, locale: str) -> "PredictorUniverse":
        if locale.lower() in ("iq", "iquitos"):
            spec = [
                ("lp", "precipitation", "log1p", (1,)),
                ("lp2", "precipitation", "log1p_sq", (1,)),
                ("tavg", "tavg", "identity", (1, 11)),
                ("tavg2", "tavg", "sq", (1, 11)),
                ("ndvi_avg", "ndvi_avg", "identity", (1,)),
                ("r0", "r0", "identity", (1, 11)),
                ("nino12", "nino12", "identity", (1,)),
                ("soi", "soi", "identity", (1,)),
            ]
        else:
            spec = [
                ("lpop", "population", "log", (1,)),
                ("lp", "precipitation", "log1p", (1,)),
                ("lp2", "precipitation", "log1p_sq", (1,)),
                ("tavg", "tavg", "identity", (1, 11)),
                ("tavg2", "tavg", "sq", (1, 11)),
                ("ndvi45", "ndvi_45", "identity", (1, 16)),
                ("ndvi50", "ndvi_50", "identity", (1, 11)),
                ("r0", "r0", "identity", (1, 11)),
                ("nino12", "nino12", "identity", (1, 6, 32)),
                ("soi", "soi", "identity", (1, 24)),
            ]
        return cls(smoothed=_defs(spec))

    def available(self, covariates: dict) -> "PredictorUniverse":
        """Drop candidates whose source column is absent."""
        keep = tuple(d for d in self.smoothed if d.source in covariates)
        dropped = sorted({d.source for d in self.smoothed} - {d.source for d in keep})
        if dropped:
            log.info("no covariate columns for %s; those terms are not entertained", dropped)
        return PredictorUniverse(self.deterministic, self.ly_lags, self.use_lgm, keep)

    @property
    def candidate_names(self) -> tuple:
        names = [f"ly_l{L}" for L in self.ly_lags]
        if self.use_lgm:
            names.append("lgm")
        return tuple(names) + tuple(d.name for d in self.smoothed)

    @property
    def names(self) -> tuple:
        return tuple(self.deterministic) + self.candidate_names


def _trig(t, name):
    period = 52.0 if name.endswith("52") else 26.0
    f = np.sin if name.startswith("sin") else np.cos
    return f(2 * np.pi * np.asarray(t, float) / period)


def _lagged(x, lag):
    out = np.full(x.size, np.nan)
    if lag < x.size:
        out[lag:] = x[: x.size - lag]
    return out


def _lgm_raw(cases, T):
    # mean of log1p(cases) at the same season week over all previous complete seasons
    logc = np.log1p(np.asarray(cases, float))
    out = np.full(T, np.nan)
    for t in range(WEEKS, T):
        s, w = divmod(t, WEEKS)
        prev = logc[w: s * WEEKS: WEEKS]
        if prev.size:
            out[t] = prev.mean()
    return out


def build_columns(universe: PredictorUniverse, cases, covariates: dict, T: int | None = None) -> dict:
    """All universe columns for times ``0..T-1`` (default: ``len(cases)``).

    Case-derived columns only read counts strictly before each time; times
    past the end of ``cases`` get NaN in those columns.
    """
    cases = np.asarray(cases, dtype=float)
    T = cases.size if T is None else T
    t = np.arange(T, dtype=float)
    full = np.full(T, np.nan)
    full[: min(T, cases.size)] = cases[:T]
    cols = {}
    for name in universe.deterministic:
        if name == "t":
            cols[name] = t
        elif name == "ci":
            c = np.concatenate([[0.0], np.cumsum(full)])
            ci = np.full(T, np.nan)
            ci[WEEKS:] = c[WEEKS:T] - c[: T - WEEKS]
            cols[name] = ci
        else:
            cols[name] = _trig(t, name)
    logc = np.log1p(full)
    if T >= SMOOTH_WINDOW:
        sm = smooth(logc)
        for L in universe.ly_lags:
            cols[f"ly_l{L}"] = _lagged(sm, L)
        if universe.use_lgm:
            cols["lgm"] = smooth(_lgm_raw(cases, T))
        for d in universe.smoothed:
            x = np.asarray(covariates[d.source], dtype=float)[:T]
            cols[d.name] = _lagged(smooth(d.apply(x)), d.lag)
    return cols


def _design(cols, names, rows):
    return np.column_stack([np.ones(rows.size)] + [cols[n][rows] for n in names])


def step_bic(universe: PredictorUniverse, y, columns: dict, rows=None, start=None) -> NegBinModel:
    """Bidirectional stepwise search minimizing ``-2 loglik + k log n``.

    Starts from the deterministic terms (or ``start``); each step tries adding
    any absent term and dropping any present one, in universe order, and
    takes the best strict improvement. The intercept-only model is always
    considered, so the result never has higher BIC than it.
    """
    y = np.asarray(y, dtype=float)
    names_all = [n for n in universe.names if n in columns]
    if rows is None:
        ok = np.isfinite(y)
        for n in names_all:
            ok &= np.isfinite(columns[n])
        rows = np.flatnonzero(ok)
    rows = np.asarray(rows, dtype=int)
    yr = y[rows]
    cache: dict = {}

    def fit(terms):
        key = tuple(n for n in names_all if n in terms)
        if key not in cache:
            try:
                cache[key] = fit_negbin(_design(columns, key, rows), yr, ("(intercept)",) + key)
            except NegBinFitError as err:
                log.debug("skipping %s: %s", key, err)
                cache[key] = None
        return cache[key]

    current = set(universe.deterministic if start is None else start) & set(names_all)
    best = fit(current)
    if best is None:
        current = set()
        best = fit(current)
    path = [(tuple(sorted(current)), best.bic)]
    while True:
        moves = [current | {n} for n in names_all if n not in current]
        moves += [current - {n} for n in names_all if n in current]
        scored = [(m.bic, i, terms, m) for i, terms in enumerate(moves) if (m := fit(terms)) is not None]
        if not scored:
            break
        bic, _, terms, model = min(scored, key=lambda s: (s[0], s[1]))
        if bic >= best.bic - 1e-9:
            break
        current, best = terms, model
        path.append((tuple(sorted(current)), bic))
    null = fit(set())
    if null is not None and null.bic < best.bic:
        best = null
        path.append(((), null.bic))
    best.path = path
    return best


# -- covariate sub-models ------------------------------------------------------


@dataclass
class SubModel:
    """Gaussian AR(1) + trend + annual harmonic model for one covariate."""

    name: str
    coef: np.ndarray  # intercept, lag-1, [trend], sin52, cos52
    sigma: float
    has_trend: bool
    last_value: float
    last_t: int

    def _row(self, prev, t):
        prev = np.asarray(prev, dtype=float)
        parts = [np.ones_like(prev), prev]
        if self.has_trend:
            parts.append(np.full_like(prev, t))
        parts += [np.full_like(prev, _trig(t, "sin52")), np.full_like(prev, _trig(t, "cos52"))]
        return np.stack(parts, axis=-1)

    def step_mean(self, prev, t) -> np.ndarray:
        return self._row(prev, t) @ self.coef

    def simulate(self, horizon: int, m: int, rng, noise: bool = True) -> np.ndarray:
        """``(m, horizon)`` paths for times ``last_t + 1 ...``."""
        out = np.empty((m, horizon))
        prev = np.full(m, self.last_value)
        for h in range(horizon):
            t = self.last_t + 1 + h
            cur = self.step_mean(prev, t)
            if noise and self.sigma > 0:
                cur = cur + self.sigma * rng.standard_normal(m)
            out[:, h] = cur
            prev = cur
        return out


def fit_submodel(name: str, x, min_weeks: int = 2 * WEEKS) -> SubModel:
    x = np.asarray(x, dtype=float)
    if x.size < min_weeks:
        raise ValueError(f"{name}: need at least {min_weeks} weeks, got {x.size}")
    t = np.arange(x.size, dtype=float)
    ok = np.isfinite(x[1:]) & np.isfinite(x[:-1])
    tt = t[1:][ok]
    target = x[1:][ok]
    for has_trend in (True, False):
        parts = [np.ones(tt.size), x[:-1][ok]]
        if has_trend:
            parts.append(tt)
        parts += [_trig(tt, "sin52"), _trig(tt, "cos52")]
        A = np.column_stack(parts)
        if np.linalg.cond(A) < 1e10 or not has_trend:
            break
        log.debug("%s: near-singular design, dropping trend", name)
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    resid = target - A @ coef
    sigma = float(np.sqrt(resid @ resid / max(target.size - A.shape[1], 1)))
    last = np.flatnonzero(np.isfinite(x))[-1]
    return SubModel(name, coef, sigma, has_trend, float(x[last]), int(last))


def fit_submodels(frame, columns=None) -> dict:
    """One :class:`SubModel` per covariate column (``frame`` maps name -> series)."""
    cols = frame.columns if hasattr(frame, "columns") else frame
    names = [n for n in cols if columns is None or n in columns]
    return {n: fit_submodel(n, cols[n]) for n in names}


# -- trajectory simulation ---------------------------------------------------


@dataclass
class GlmHistory:
    """Everything observed up to the forecast time ``t0 = len(cases)``."""

    cases: np.ndarray
    covariates: dict
    universe: PredictorUniverse

    @property
    def t0(self) -> int:
        return int(np.asarray(self.cases).size)


def _sources(model: NegBinModel, universe: PredictorUniverse) -> dict:
    by_name = {d.name: d for d in universe.smoothed}
    return {n: by_name[n] for n in model.names if n in by_name}


def _simulate_chunk(model, submodels, hist: GlmHistory, horizon, m, rng, noise):
    t0 = hist.t0
    cases = np.asarray(hist.cases, dtype=float)
    coef = dict(zip(model.names, model.coefficients))
    eta = np.full((m, horizon), coef.get("(intercept)", 0.0))
    times = np.arange(t0, t0 + horizon, dtype=float)

    # terms that do not depend on simulated counts
    for n in model.names:
        if n in ("t", "sin52", "cos52", "sin26", "cos26"):
            eta += coef[n] * (times if n == "t" else _trig(times, n))
    if "lgm" in coef:
        lgm = smooth(_lgm_raw(cases, t0 + horizon))[t0:]
        eta += coef["lgm"] * lgm
    for n, d in _sources(model, hist.universe).items():
        x_obs = np.asarray(hist.covariates[d.source], dtype=float)[:t0]
        if d.source in submodels:
            sim = submodels[d.source].simulate(horizon, m, rng, noise)
        else:
            sim = np.full((m, horizon), x_obs[-1])
        back = SMOOTH_WINDOW - 1 + d.lag
        hist_part = np.broadcast_to(d.apply(x_obs[t0 - back:]), (m, back))
        full = np.concatenate([hist_part, d.apply(sim)], axis=1)
        c = np.concatenate([np.zeros((m, 1)), np.cumsum(full, axis=1)], axis=1)
        sm = (c[:, SMOOTH_WINDOW:] - c[:, :-SMOOTH_WINDOW]) / SMOOTH_WINDOW
        # sm[:, k] is the smoothed value at time t0 - back + SMOOTH_WINDOW - 1 + k
        eta += coef[n] * sm[:, :horizon]

    ly = [(L, coef[f"ly_l{L}"]) for L in hist.universe.ly_lags if f"ly_l{L}" in coef]
    use_ci = "ci" in coef
    need = max([WEEKS if use_ci else 0] + [L + SMOOTH_WINDOW - 1 for L, _ in ly])
    buf = np.empty((m, need + horizon))
    buf[:, :need] = cases[t0 - need:] if need else 0.0
    out = np.empty((m, horizon))
    capped = np.zeros(m, dtype=bool)
    for h in range(horizon):
        e = eta[:, h].copy()
        pos = need + h
        for L, b in ly:
            window = buf[:, pos - L - SMOOTH_WINDOW + 1: pos - L + 1]
            e += b * np.log1p(window).mean(axis=1)
        if use_ci:
            e += coef["ci"] * buf[:, pos - WEEKS: pos].sum(axis=1)
        mu = np.exp(np.minimum(e, 700.0))
        over = mu > MU_CAP
        capped |= over
        mu = np.minimum(mu, MU_CAP)
        if noise:
            k = model.dispersion
            draw = rng.negative_binomial(k, k / (k + mu)).astype(float)
        else:
            draw = mu
        buf[:, pos] = draw
        out[:, h] = draw
    return out, capped


def glm_forecast(model: NegBinModel, submodels: dict, history: GlmHistory, weeks_observed: int,
                 horizon: int, m: int, seed=0, noise: bool = True, chunk: int = 20000,
                 locale: str = "", season_label: str = "") -> ForecastEnsemble:
    """Simulate ``m`` trajectories for the rest of the season.

    The first ``weeks_observed`` columns hold the observed counts (the last
    entries of ``history.cases``); the remaining ``horizon`` weeks are drawn
    one step at a time. Trajectories whose linked mean overflows are redrawn
    once; a second overflow is capped at 1e9.
    """
    if weeks_observed + horizon != WEEKS:
        raise ValueError("weeks_observed + horizon must cover the 52-week season")
    cases = np.asarray(history.cases, dtype=float)
    prefix = cases[cases.size - weeks_observed:] if weeks_observed else np.empty(0)
    if horizon == 0:
        traj = np.tile(prefix, (m, 1))
    else:
        ss = np.random.SeedSequence(seed)
        blocks = []
        for start, child in zip(range(0, m, chunk), ss.spawn((m + chunk - 1) // chunk)):
            size = min(chunk, m - start)
            rng = np.random.default_rng(child)
            sim, capped = _simulate_chunk(model, submodels, history, horizon, size, rng, noise)
            if capped.any():
                log.warning("%d trajectories overflowed; redrawing once", int(capped.sum()))
                redo, _ = _simulate_chunk(model, submodels, history, horizon, int(capped.sum()), rng, noise)
                sim[capped] = redo
            blocks.append(sim)
        sim = np.vstack(blocks)
        traj = np.hstack([np.tile(prefix, (m, 1)), sim])
    return ForecastEnsemble(traj, locale=locale, season_label=season_label,
                            forecast_week=weeks_observed, provenance={"method": "glm"})


def forecast_season(cases_all, covariates: dict, universe: PredictorUniverse, season_index: int,
                    week: int, m: int, seed=0, locale: str = "", season_label: str = ""):
    """Refit the GLM on everything up to ``week`` of season ``season_index`` and simulate.

    ``cases_all`` is the concatenated weekly series (52 weeks per season).
    Returns ``(ensemble, model)``.
    """
    t0 = season_index * WEEKS + week
    cases = np.asarray(cases_all, dtype=float)[:t0]
    covs = {k: np.asarray(v, dtype=float) for k, v in covariates.items()}
    # smoothing windows in the simulation cannot skip gaps
    covs = {k: interpolate_linear(v) if np.isnan(v[:t0]).any() else v for k, v in covs.items()}
    uni = universe.available(covs)
    cols = build_columns(uni, cases, covs)
    model = step_bic(uni, cases, cols)
    needed = {d.source for d in _sources(model, uni).values()}
    subs = {name: fit_submodel(name, covs[name][:t0]) for name in sorted(needed)}
    hist = GlmHistory(cases, {k: v[:t0] for k, v in covs.items()}, uni)
    ens = glm_forecast(model, subs, hist, week, WEEKS - week, m, seed, locale=locale, season_label=season_label)
    return ens, model
