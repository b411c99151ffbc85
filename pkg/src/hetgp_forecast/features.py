"""Four-column GP design built from the incidence series alone.

Columns: week of season, a 52-week sine wave, the season's starting level
(transformed scale) and a severity label in {-1, 0, +1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import WEEKS, SeasonSeries

# kernel inputs are X / INPUT_SCALE: week of season rescaled to (0, 1]
INPUT_SCALE = (float(WEEKS), 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class SeverityThresholds:
    """Weekly-case thresholds separating mild, intermediate and severe seasons."""

    mild_max: float
    severe_min: float

    def __post_init__(self):
        if not self.mild_max < self.severe_min:
            raise ValueError("mild_max must be below severe_min")


SAN_JUAN = SeverityThresholds(mild_max=25, severe_min=100)
IQUITOS = SeverityThresholds(mild_max=10, severe_min=25)


def classify_severity(season_counts, thresholds: SeverityThresholds) -> int:
    """+1 if any week exceeds ``severe_min``, -1 if every week is below
    ``mild_max``, else 0. Uses raw counts."""
    peak = float(np.max(season_counts))
    if peak > thresholds.severe_min:
        return 1
    if peak < thresholds.mild_max:
        return -1
    return 0


def season_wave(weeks, phase: float = 0.0) -> np.ndarray:
    return np.sin(2 * np.pi * (np.asarray(weeks, dtype=float) - 1.0) / WEEKS + phase)


@dataclass(frozen=True)
class FeatureMatrix:
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    y: np.ndarray
    season_of: np.ndarray  # row -> season position in the source series
    phase: float = 0.0

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2, self.x3, self.x4])

    @property
    def n(self) -> int:
        return self.y.size

    def season_rows(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.season_of == s)


def starting_levels(series: SeasonSeries) -> np.ndarray:
    """Transformed final week of the previous season (first season: its own week 1)."""
    ty = series.transformed
    x3 = np.empty(series.n_seasons)
    x3[0] = ty[0, 0]
    x3[1:] = ty[:-1, -1]
    return x3


def build_features(series: SeasonSeries, thresholds: SeverityThresholds, phase: float = 0.0) -> FeatureMatrix:
    """Stack one 52-row block per season."""
    S = series.n_seasons
    if S == 0:
        raise ValueError("series has no seasons")
    weeks = np.arange(1, WEEKS + 1, dtype=float)
    x3 = starting_levels(series)
    x4 = np.array([classify_severity(c, thresholds) for c in series.counts], dtype=float)
    return FeatureMatrix(
        x1=np.tile(weeks, S),
        x2=np.tile(season_wave(weeks, phase), S),
        x3=np.repeat(x3, WEEKS),
        x4=np.repeat(x4, WEEKS),
        y=series.transformed.ravel(),
        season_of=np.repeat(np.arange(S), WEEKS),
        phase=phase,
    )


def season_inputs(x3: float, x4: float, phase: float = 0.0, weeks=None) -> np.ndarray:
    """Input rows for weeks of a new season with fixed level and severity."""
    weeks = np.arange(1, WEEKS + 1, dtype=float) if weeks is None else np.asarray(weeks, float)
    return np.column_stack([weeks, season_wave(weeks, phase), np.full(weeks.size, x3), np.full(weeks.size, x4)])


def extend_for_forecast(fm: FeatureMatrix, new_y, x3_new: float, latent_x4: float):
    """Training and prediction inputs for a season in progress.

    ``new_y`` holds the transformed values of the weeks already observed
    (possibly none). Returns ``(train_X, train_y, predict_X)``: the
    historical rows followed by the observed new-season rows, and inputs for
    all 52 weeks of the new season. Every new-season row carries
    ``latent_x4``.
    """
    if not np.isfinite(latent_x4):
        raise ValueError("latent_x4 must be finite")
    new_y = np.asarray(new_y, dtype=float)
    j = new_y.size
    if j > WEEKS:
        raise ValueError(f"at most {WEEKS} observed weeks")
    predict_X = season_inputs(x3_new, latent_x4, fm.phase)
    train_X = np.vstack([fm.X, predict_X[:j]])
    train_y = np.concatenate([fm.y, new_y])
    return train_X, train_y, predict_X
