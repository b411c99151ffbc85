"""Forecast scoring: bucket log scores, absolute errors, ranks and PIT values."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .targets import TARGETS, TargetDistribution

SCORE_COLUMNS = ("method", "locale", "target", "season", "week", "log_score", "abs_error")
PIT_COLUMNS = ("method", "locale", "target", "season", "week", "pit")


class GridMismatchError(ValueError):
    """Methods were not scored on the same (season, week) grid."""


def log_score(dist: TargetDistribution, target: str, truth: float, floor: float | None = None) -> float:
    """Natural log of the probability in the bucket holding ``truth``.

    Returns -inf for an empty bucket unless ``floor`` is given, in which case
    probabilities are clamped below at ``floor``.

    Raises:
        ValueError: if ``truth`` falls outside every bucket.
    """
    idx = int(dist.buckets.index(target, [truth])[0])
    probs = dist.probs[target]
    if not 0 <= idx < probs.size:
        raise ValueError(f"truth {truth!r} outside the {target} buckets")
    p = float(probs[idx])
    if floor is not None:
        p = max(p, floor)
    return math.log(p) if p > 0 else -math.inf


def pit(samples, truth: float, weights=None) -> float:
    """Empirical CDF of the (weighted) samples evaluated at ``truth``."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one sample")
    if weights is None:
        return float(np.mean(samples <= truth))
    weights = np.asarray(weights, dtype=float)
    return float(np.clip(weights[samples <= truth].sum() / weights.sum(), 0.0, 1.0))


def pit_values(dist: TargetDistribution, truths: dict) -> dict:
    """PIT value of each target's realized value under its weighted samples."""
    return {t: pit(dist.samples[t][0], truths[t], dist.samples[t][1]) for t in TARGETS}


@dataclass
class ScoreTable:
    rows: list = field(default_factory=list)

    def add(self, method, locale, target, season, week, log_score, abs_error):
        self.rows.append({
            "method": method, "locale": locale, "target": target, "season": season,
            "week": int(week), "log_score": float(log_score), "abs_error": float(abs_error),
        })

    def extend(self, other: "ScoreTable"):
        self.rows.extend(other.rows)

    def filter(self, pred) -> "ScoreTable":
        return ScoreTable([r for r in self.rows if pred(r)])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCORE_COLUMNS)
            for r in self.rows:
                w.writerow([r["method"], r["locale"], r["target"], r["season"], r["week"],
                            repr(r["log_score"]), repr(r["abs_error"])])

    @classmethod
    def from_csv(cls, path) -> "ScoreTable":
        table = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                table.add(r["method"], r["locale"], r["target"], r["season"], int(r["week"]),
                          float(r["log_score"]), float(r["abs_error"]))
        return table


def mae_and_ranks(table: ScoreTable) -> dict:
    """Average log score, average rank and MAE per (method, locale, target).

    Ranks are computed among methods within each (locale, target, season,
    week) cell; the best score gets rank k for k methods and ties share
    the mean rank. Average scores keep -inf.

    Raises:
        GridMismatchError: if methods do not cover the same cells.
    """
    cells = defaultdict(dict)
    for r in table.rows:
        key = (r["locale"], r["target"], r["season"], r["week"])
        if r["method"] in cells[key]:
            raise GridMismatchError(f"duplicate score for {r['method']} at {key}")
        cells[key][r["method"]] = r
    methods_by_lt = defaultdict(set)
    for (loc, tgt, _, _), by_method in cells.items():
        methods_by_lt[(loc, tgt)].update(by_method)
    for (loc, tgt, season, week), by_method in cells.items():
        if set(by_method) != methods_by_lt[(loc, tgt)]:
            raise GridMismatchError(f"methods differ at {(loc, tgt, season, week)}")

    acc = defaultdict(lambda: {"scores": [], "ranks": [], "errors": []})
    for (loc, tgt, _, _), by_method in cells.items():
        names = sorted(by_method)
        scores = np.array([by_method[m]["log_score"] for m in names])
        ranks = rankdata(scores, method="average")
        for m, rk in zip(names, ranks):
            a = acc[(m, loc, tgt)]
            a["scores"].append(by_method[m]["log_score"])
            a["ranks"].append(float(rk))
            a["errors"].append(by_method[m]["abs_error"])
    out = {}
    for key, a in sorted(acc.items()):
        out[key] = {
            "avg_score": float(np.mean(a["scores"])),
            "avg_rank": float(np.mean(a["ranks"])),
            "mae": float(np.mean(a["errors"])),
            "n": len(a["scores"]),
        }
    return out


def first_weeks_cuts(table: ScoreTable, limit: int = 24) -> dict:
    """Two readings of "the first 24 weeks": forecast weeks <= 24 and < 24."""
    return {
        "full": table,
        f"weeks_le_{limit}": table.filter(lambda r: r["week"] <= limit),
        f"weeks_lt_{limit}": table.filter(lambda r: r["week"] < limit),
    }


def pit_histogram(values, bins: int = 10) -> np.ndarray:
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts
