"""CSV ingestion of weekly incidence and covariate series.

Incidence files are partitioned into 52-week seasons. Real calendars give an
occasional week 53; its count is folded into week 52 so season totals are
conserved. Covariate files share the (season, week) index and keep missing
values as NaN until :func:`impute_missing` fills them.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import transform

WEEKS = 52
MISSING_TOKENS = {"", "na", "nan"}


class ParseError(ValueError):
    """Malformed incidence or covariate file."""


class AlignmentError(ValueError):
    """Covariate rows cannot be aligned with the incidence week index."""


def _season_key(label: str, position: int):
    m = re.match(r"\s*(\d{4})", label)
    return (int(m.group(1)) if m else float("inf"), position)


@dataclass(frozen=True)
class SeasonSeries:
    """One locale's weekly counts, one row of 52 values per season."""

    locale: str
    labels: tuple
    counts: np.ndarray  # (n_seasons, 52)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 2 or counts.shape[1] != WEEKS:
            raise ValueError(f"counts must have shape (n_seasons, {WEEKS})")
        if len(self.labels) != counts.shape[0]:
            raise ValueError("one label per season required")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_seasons(self) -> int:
        return self.counts.shape[0]

    @property
    def transformed(self) -> np.ndarray:
        return transform.forward(self.counts)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown season {label!r}") from None

    def head(self, n: int) -> "SeasonSeries":
        """The first ``n`` seasons."""
        return SeasonSeries(self.locale, self.labels[:n], self.counts[:n])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["locale", "season", "season_week", "total_cases"])
            for label, row in zip(self.labels, self.counts):
                for week, value in enumerate(row, start=1):
                    w.writerow([self.locale, label, week, _fmt(value)])


def _fmt(value: float) -> str:
    if np.isnan(value):
        return "NA"
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        # line 1 is the header
        rows = [(i + 2, row) for i, row in enumerate(reader)]
    return header, rows


def load_incidence(
    path,
    locale: str,
    season_col: str = "season",
    week_col: str = "season_week",
    cases_col: str = "total_cases",
    locale_col: str | None = None,
) -> SeasonSeries:
    """Parse an incidence CSV into a :class:`SeasonSeries`.

    If ``locale_col`` is given, only rows whose value matches ``locale`` are
    kept. Every season must supply weeks 1..52; a week-53 row is added into
    week 52.

    Raises:
        ParseError: on missing columns, non-numeric or negative counts,
            duplicate (season, week) pairs, or incomplete seasons. The message
            names the offending line.
    """
    header, rows = _read_rows(path)
    needed = [season_col, week_col, cases_col] + ([locale_col] if locale_col else [])
    missing = [c for c in needed if c not in header]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")

    seasons: dict[str, dict[int, float]] = {}
    order: list[str] = []
    for line, row in rows:
        if locale_col and row[locale_col].strip() != locale:
            continue
        label = row[season_col].strip()
        try:
            week = int(row[week_col])
        except (TypeError, ValueError):
            raise ParseError(f"line {line}: non-integer week {row[week_col]!r}") from None
        raw = (row[cases_col] or "").strip()
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(f"line {line}: non-numeric count {raw!r}") from None
        if not np.isfinite(value) or value < 0:
            raise ParseError(f"line {line}: invalid count {raw!r}")
        if not 1 <= week <= WEEKS + 1:
            raise ParseError(f"line {line}: week {week} outside 1..{WEEKS + 1}")
        weeks = seasons.get(label)
        if weeks is None:
            weeks = seasons[label] = {}
            order.append(label)
        if week in weeks:
            raise ParseError(f"line {line}: duplicate ({label}, week {week})")
        weeks[week] = value

    if not seasons:
        raise ParseError(f"{path}: no rows for locale {locale!r}")

    labels = sorted(order, key=lambda s: _season_key(s, order.index(s)))
    counts = np.empty((len(labels), WEEKS))
    for i, label in enumerate(labels):
        weeks = seasons[label]
        absent = [w for w in range(1, WEEKS + 1) if w not in weeks]
        if absent:
            raise ParseError(f"season {label}: missing weeks {absent[:5]}")
        counts[i] = [weeks[w] for w in range(1, WEEKS + 1)]
        counts[i, -1] += weeks.get(WEEKS + 1, 0.0)
    return SeasonSeries(locale, tuple(labels), counts)


@dataclass(frozen=True)
class CovariateFrame:
    """Named weekly covariate columns on a (season, week) index.

    ``index`` has one ``(season_label, week)`` pair per row, weeks 1..52 for
    every season. Missing values are NaN.
    """

    index: tuple
    columns: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.index)

    @property
    def labels(self) -> tuple:
        seen = []
        for label, _ in self.index:
            if not seen or seen[-1] != label:
                seen.append(label)
        return tuple(seen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def with_column(self, name: str, values) -> "CovariateFrame":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_rows,):
            raise ValueError(f"column {name!r} must have {self.n_rows} values")
        cols = dict(self.columns)
        cols[name] = values
        return CovariateFrame(self.index, cols)

    def align_to(self, series: SeasonSeries) -> "CovariateFrame":
        """Restrict rows to the seasons of ``series``, in the same order."""
        rows = {}
        for i, (label, week) in enumerate(self.index):
            rows.setdefault(label, []).append(i)
        take = []
        for label in series.labels:
            if label not in rows or len(rows[label]) != WEEKS:
                raise AlignmentError(f"covariates lack season {label!r}")
            take.extend(rows[label])
        take = np.asarray(take, dtype=int)
        return CovariateFrame(
            tuple(self.index[i] for i in take),
            {k: v[take] for k, v in self.columns.items()},
        )

    def to_csv(self, path) -> None:
        names = sorted(self.columns)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["season", "season_week"] + names)
            for i, (label, week) in enumerate(self.index):
                w.writerow([label, week] + [_fmt(self.columns[n][i]) for n in names])


def _parse_value(raw: str | None, line: int, name: str) -> float:
    token = (raw or "").strip()
    if token.lower() in MISSING_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"line {line}: non-numeric {name} value {token!r}") from None


def load_covariates(
    path,
    season_col: str = "season",
    week_col: str = "season_week",
    yearly_columns=("population",),
    exclude=(),
) -> CovariateFrame:
    """Parse a covariate CSV onto a complete (season, week 1..52) grid.

    Weeks absent from the file become NaN rows. Week-53 rows are averaged
    into week 52. Columns named in ``yearly_columns`` hold sparse anchors
    (e.g. one population figure per year) and are filled by linear
    interpolation over the week index.

    Raises:
        AlignmentError: duplicate (season, week) rows or weeks outside 1..53.
    """
    header, rows = _read_rows(path)
    for c in (season_col, week_col):
        if c not in header:
            raise ParseError(f"{path}: missing column {c!r}")
    names = [h for h in header if h not in (season_col, week_col) and h not in exclude]

    cells: dict[str, dict[int, list]] = {}
    order: list[str] = []
    for line, row in rows:
        label = row[season_col].strip()
        try:
            week = int(row[week_col])
        except (TypeError, ValueError):
            raise AlignmentError(f"line {line}: bad week {row[week_col]!r}") from None
        if not 1 <= week <= WEEKS + 1:
            raise AlignmentError(f"line {line}: week {week} outside 1..{WEEKS + 1}")
        weeks = cells.get(label)
        if weeks is None:
            weeks = cells[label] = {}
            order.append(label)
        if week in weeks:
            raise AlignmentError(f"line {line}: duplicate ({label}, week {week})")
        weeks[week] = [_parse_value(row.get(n), line, n) for n in names]

    labels = sorted(order, key=lambda s: _season_key(s, order.index(s)))
    index = [(label, w) for label in labels for w in range(1, WEEKS + 1)]
    data = np.full((len(index), len(names)), np.nan)
    for s, label in enumerate(labels):
        weeks = cells[label]
        for w, values in weeks.items():
            if w <= WEEKS:
                data[s * WEEKS + w - 1] = values
        if WEEKS + 1 in weeks:
            both = np.vstack([data[s * WEEKS + WEEKS - 1], weeks[WEEKS + 1]])
            with np.errstate(invalid="ignore"):
                data[s * WEEKS + WEEKS - 1] = np.nanmean(both, axis=0)

    columns = {n: data[:, j].copy() for j, n in enumerate(names)}
    for n in yearly_columns:
        if n in columns:
            columns[n] = interpolate_linear(columns[n])
    return CovariateFrame(tuple(index), columns)


def interpolate_linear(values) -> np.ndarray:
    """Fill NaNs by linear interpolation between anchors; ends held constant."""
    values = np.asarray(values, dtype=float)
    ok = ~np.isnan(values)
    if not ok.any():
        return values.copy()
    t = np.arange(values.size)
    return np.interp(t, t[ok], values[ok])


def impute_missing(frame: CovariateFrame, column: str, min_observed: int = 10) -> CovariateFrame:
    """Replace NaNs in ``column`` by a 1-D GP predictive mean on week index.

    The GP has a zero mean after centering on the observed average; its
    lengthscale and nugget are fitted by maximum likelihood. Predictive
    uncertainty is discarded.
    """
    from .gp_core import correlation
    from .hetgp_mle import MleConfig, fit_groups

    values = frame[column]
    miss = np.isnan(values)
    if not miss.any():
        return frame
    n_obs = int((~miss).sum())
    if n_obs == 0:
        raise ValueError(f"column {column!r} is entirely missing")
    if n_obs < min_observed:
        raise ValueError(f"column {column!r} needs at least {min_observed} observed values")

    t = np.arange(values.size, dtype=float)[:, None] / values.size
    y = values[~miss]
    center = y.mean()
    resid = y - center
    filled = values.copy()
    if np.allclose(resid, 0.0, atol=1e-12 * max(1.0, abs(center))):
        filled[miss] = center
        return frame.with_column(column, filled)

    scale = resid.std()
    config = MleConfig(
        theta_bounds=[(1e-6, 10.0)],
        eta_bounds=(1e-8, 10.0),
        multistarts=2,
    )
    res = fit_groups(t[~miss], resid / scale, np.zeros(n_obs, dtype=int), 1, config)
    k = correlation(t[miss], t[~miss], res.theta)
    filled[miss] = center + scale * (k @ res.alpha)
    return frame.with_column(column, filled)
