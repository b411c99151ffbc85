"""Season targets from Monte Carlo trajectories.

A trajectory is one simulated season of 52 weekly counts. Each trajectory
yields a peak week, a peak incidence and a total incidence; weighted
frequencies over the ensemble give the target distributions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import WEEKS

TARGETS = ("peak_week", "peak_incidence", "total_incidence")


@dataclass(frozen=True)
class ForecastEnsemble:
    """``m`` weighted trajectories over all 52 weeks, on the count scale."""

    trajectories: np.ndarray
    weights: np.ndarray | None = None
    locale: str = ""
    season_label: str = ""
    forecast_week: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        traj = np.atleast_2d(np.asarray(self.trajectories, dtype=float))
        if traj.shape[1] != WEEKS:
            raise ValueError(f"trajectories must have {WEEKS} columns")
        if self.weights is None:
            w = np.full(traj.shape[0], 1.0 / max(traj.shape[0], 1))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (traj.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be one nonnegative value per trajectory")
            total = w.sum()
            if traj.shape[0] and total <= 0:
                raise ValueError("weights must not all be zero")
            w = w / total if traj.shape[0] else w
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.trajectories.shape[0]

    def replace(self, **changes) -> "ForecastEnsemble":
        fields = dict(
            trajectories=self.trajectories, weights=self.weights, locale=self.locale,
            season_label=self.season_label, forecast_week=self.forecast_week,
            provenance=dict(self.provenance),
        )
        fields.update(changes)
        return ForecastEnsemble(**fields)


@dataclass(frozen=True)
class BucketSpec:
    """Equal-width incidence buckets with an open-ended top bucket.

    Peak week always uses 52 single-week buckets. Incidence bucket ``i``
    covers ``[i * width, (i + 1) * width)`` for ``i * width < top``; the last
    bucket is ``[top, inf)``.
    """

    peak_width: float = 50.0
    peak_top: float = 500.0
    total_width: float = 1000.0
    total_top: float = 10000.0

    def __post_init__(self):
        for w, t in ((self.peak_width, self.peak_top), (self.total_width, self.total_top)):
            if w <= 0 or t <= 0:
                raise ValueError("bucket widths and tops must be positive")

    @classmethod
    def for_locale(cls, locale: str) -> "BucketSpec":
        if locale.lower() in ("iq", "iquitos"):
            return cls(peak_width=10.0, peak_top=150.0, total_width=100.0, total_top=1500.0)
        return cls()

    def lower_bounds(self, target: str) -> np.ndarray:
        if target == "peak_week":
            return np.arange(1, WEEKS + 1, dtype=float)
        width, top = self._wt(target)
        return np.append(np.arange(0.0, top, width), top)

    def _wt(self, target):
        if target == "peak_incidence":
            return self.peak_width, self.peak_top
        if target == "total_incidence":
            return self.total_width, self.total_top
        raise KeyError(target)

    def index(self, target: str, values) -> np.ndarray:
        """Bucket index of each value; incidence values are rounded first."""
        v = np.asarray(values, dtype=float)
        if target == "peak_week":
            idx = np.rint(v).astype(int) - 1
            if np.any((idx < 0) | (idx >= WEEKS)):
                raise ValueError("peak week outside 1..52")
            return idx
        if np.any(~np.isfinite(v)) or np.any(np.rint(v) < 0):
            raise ValueError(f"{target} value outside the bucket range")
        lb = np.asarray(self.lower_bounds(target))
        return np.searchsorted(lb, np.rint(v), side="right") - 1


@dataclass
class TargetDistribution:
    """Bucketed target distributions plus the weighted samples behind them."""

    probs: dict
    lower_bounds: dict
    point: dict
    samples: dict = field(repr=False)
    buckets: BucketSpec = field(default_factory=BucketSpec)

    @property
    def peak_week(self) -> np.ndarray:
        return self.probs["peak_week"]

    @property
    def peak_incidence(self) -> np.ndarray:
        return self.probs["peak_incidence"]

    @property
    def total_incidence(self) -> np.ndarray:
        return self.probs["total_incidence"]

    def to_dict(self, level: float = 0.95, meta: dict | None = None) -> dict:
        iv = interval(self, level)
        out = dict(meta or {})
        out["targets"] = {
            t: {
                "point": _num(self.point[t]),
                "interval": {"level": level, "lo": _num(iv[t][0]), "hi": _num(iv[t][1])},
                "buckets": [[_num(lb), float(p)] for lb, p in zip(self.lower_bounds[t], self.probs[t])],
            }
            for t in TARGETS
        }
        return out

    def to_json(self, level: float = 0.95, meta: dict | None = None) -> str:
        return json.dumps(self.to_dict(level, meta), indent=1, sort_keys=True) + "\n"


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def substitute_observed(ens: ForecastEnsemble, observed) -> ForecastEnsemble:
    """Overwrite weeks ``1..j`` of every trajectory with the observed counts."""
    observed = np.asarray(observed, dtype=float)
    j = observed.size
    if j > WEEKS:
        raise ValueError(f"at most {WEEKS} observed weeks")
    if j == 0:
        return ens
    traj = ens.trajectories.copy()
    traj[:, :j] = observed
    return ens.replace(trajectories=traj)


def target_samples(trajectories) -> dict:
    """Per-trajectory peak week (1-based, earliest on ties), peak and total."""
    traj = np.clip(np.atleast_2d(np.asarray(trajectories, dtype=float)), 0.0, None)
    week = np.argmax(traj, axis=1)
    return {
        "peak_week": week + 1.0,
        "peak_incidence": traj[np.arange(traj.shape[0]), week],
        "total_incidence": traj.sum(axis=1),
    }


def weighted_quantile(values, weights, q: float) -> float:
    """Smallest sample value ``v`` with weighted CDF ``F(v) >= q``."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cdf = np.cumsum(w) / w.sum()
    i = int(np.searchsorted(cdf, q - 1e-12, side="left"))
    return float(v[min(i, v.size - 1)])


def _upper_quantile(values, weights, q: float) -> float:
    # smallest v with F(v) > q
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    v, w = values[order], np.asarray(weights, dtype=float)[order]
    cdf = np.cumsum(w) / w.sum()
    i = int(np.searchsorted(cdf, q + 1e-12, side="right"))
    return float(v[min(i, v.size - 1)])


def extract_targets(ens: ForecastEnsemble, buckets: BucketSpec | None = None) -> TargetDistribution:
    """Weighted empirical target distributions and point estimates."""
    if ens.m == 0:
        raise ValueError("empty ensemble")
    buckets = buckets or BucketSpec()
    s = target_samples(ens.trajectories)
    w = ens.weights
    probs, lbs = {}, {}
    for t in TARGETS:
        lb = np.asarray(buckets.lower_bounds(t), dtype=float)
        p = np.bincount(buckets.index(t, s[t]), weights=w, minlength=lb.size)
        probs[t] = p / p.sum()
        lbs[t] = lb
    point = {
        "peak_week": float(np.argmax(probs["peak_week"]) + 1),
        "peak_incidence": weighted_quantile(s["peak_incidence"], w, 0.5),
        "total_incidence": weighted_quantile(s["total_incidence"], w, 0.5),
    }
    samples = {t: (s[t], w) for t in TARGETS}
    return TargetDistribution(probs, lbs, point, samples, buckets)


def interval(dist: TargetDistribution, level: float = 0.95) -> dict:
    """Central ``level`` interval of each target's weighted sample distribution.

    ``lo`` is the smallest value whose CDF exceeds ``(1 - level) / 2`` and
    ``hi`` the smallest whose CDF reaches ``(1 + level) / 2``. The set of
    plausible values need not be connected; this is only its hull.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = (1.0 - level) / 2.0
    out = {}
    for t in TARGETS:
        values, weights = dist.samples[t]
        out[t] = (_upper_quantile(values, weights, a), weighted_quantile(values, weights, 1.0 - a))
    return out


def mix_hybrid(gp: ForecastEnsemble, glm: ForecastEnsemble, history_years: int, forecast_index: int,
               min_years: int = 7, gp_only_forecasts: int = 3) -> ForecastEnsemble:
    """Pool GP and GLM trajectories half and half, or use the GP alone.

    The GLM is ignored with fewer than ``min_years`` years of history and for
    the first ``gp_only_forecasts`` forecasts of a season.
    """
    if (gp.locale, gp.season_label, gp.forecast_week) != (glm.locale, glm.season_label, glm.forecast_week):
        raise ValueError("GP and GLM ensembles are not aligned")
    if history_years < min_years or forecast_index < gp_only_forecasts:
        prov = dict(gp.provenance, mixing="gp-only", history_years=history_years)
        return gp.replace(provenance=prov)
    traj = np.vstack([gp.trajectories, glm.trajectories])
    w = np.concatenate([0.5 * gp.weights, 0.5 * glm.weights])
    prov = dict(gp.provenance, mixing="gp+glm", history_years=history_years)
    return gp.replace(trajectories=traj, weights=w, provenance=prov)


def observed_targets(counts) -> dict:
    """Realized targets of a complete observed season."""
    s = target_samples(np.asarray(counts, dtype=float)[None, :])
    return {t: float(s[t][0]) for t in TARGETS}
