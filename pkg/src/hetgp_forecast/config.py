"""Run configuration stored as a sectioned key=value file."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .features import IQUITOS, SAN_JUAN, SeverityThresholds
from .hetgp_mle import MleConfig
from .latent import ForecastConfig
from .targets import BucketSpec

METHODS = ("hetgp", "glm", "hybrid")

# INI section of every field
SECTIONS = {
    "data": ("incidence", "covariates", "traits", "locale", "locale_column", "season_column",
             "week_column", "cases_column", "temperature_column"),
    "run": ("method", "test_seasons", "n_test", "draws", "seed", "first_week", "last_week",
            "forecast_step", "level", "fan_charts", "log_floor"),
    "severity": ("mild_max", "severe_min"),
    "buckets": ("peak_width", "peak_top", "total_width", "total_top"),
    "hetgp": ("window", "grid", "prior", "include_nugget", "phase", "multistarts", "theta_lo",
              "theta_hi", "eta_lo", "eta_hi", "gtol", "ftol", "max_iters", "mle_seed"),
    "hybrid": ("min_years", "gp_only_forecasts"),
}


@dataclass
class RunConfig:
    incidence: str = ""
    covariates: str = ""
    traits: str = ""
    locale: str = "sj"
    locale_column: str = ""
    season_column: str = "season"
    week_column: str = "season_week"
    cases_column: str = "total_cases"
    temperature_column: str = "tavg"

    method: str = "hetgp"  # one method or a comma-separated list
    test_seasons: tuple = ()  # empty -> the last n_test seasons
    n_test: int = 1
    draws: int = 100_000
    seed: int = 1
    first_week: int = 0
    last_week: int = 48
    forecast_step: int = 4
    level: float = 0.95
    fan_charts: bool = False
    log_floor: float | None = None

    mild_max: float | None = None  # None -> locale default
    severe_min: float | None = None
    peak_width: float | None = None
    peak_top: float | None = None
    total_width: float | None = None
    total_top: float | None = None

    window: float = 0.25
    grid: int = 51
    prior: str = "uniform"
    include_nugget: bool = True
    phase: float = 0.0
    multistarts: int = 4
    theta_lo: float = 1e-2
    theta_hi: float = 1e4
    eta_lo: float = 1e-6
    eta_hi: float = 1e2
    gtol: float = 1e-6
    ftol: float = 1e-9
    max_iters: int = 200
    mle_seed: int = 0

    min_years: int = 7
    gp_only_forecasts: int = 3

    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if self.draws < 1:
            raise ValueError("draws must be positive")
        if self.forecast_step < 1 or not 0 <= self.first_week <= self.last_week < 52:
            raise ValueError("forecast weeks must satisfy 0 <= first <= last < 52 with step >= 1")

    @property
    def methods(self) -> tuple:
        return tuple(m.strip() for m in self.method.split(",") if m.strip())

    @property
    def weeks(self) -> tuple:
        return tuple(range(self.first_week, self.last_week + 1, self.forecast_step))

    @property
    def thresholds(self) -> SeverityThresholds:
        base = IQUITOS if self.locale.lower() in ("iq", "iquitos") else SAN_JUAN
        return SeverityThresholds(
            base.mild_max if self.mild_max is None else self.mild_max,
            base.severe_min if self.severe_min is None else self.severe_min,
        )

    @property
    def buckets(self) -> BucketSpec:
        base = BucketSpec.for_locale(self.locale)
        overrides = {k: getattr(self, k) for k in ("peak_width", "peak_top", "total_width", "total_top")
                     if getattr(self, k) is not None}
        return replace(base, **overrides)

    def mle_config(self, input_scale) -> MleConfig:
        return MleConfig(
            theta_bounds=[(self.theta_lo, self.theta_hi)] * 4,
            eta_bounds=(self.eta_lo, self.eta_hi),
            multistarts=self.multistarts, gtol=self.gtol, ftol=self.ftol,
            max_iters=self.max_iters, seed=self.mle_seed, input_scale=input_scale,
        )

    def forecast_config(self) -> ForecastConfig:
        return ForecastConfig(self.window, self.grid, self.include_nugget, self.phase)

    def to_ini(self) -> str:
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            for k in keys:
                v = getattr(self, k)
                if v is None:
                    continue
                if isinstance(v, tuple):
                    v = ", ".join(v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    raw = raw.strip()
    if kind == "tuple":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if raw.lower() in ("", "none", "off") and "None" in kind:
        return None
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def load_config(path=None, **overrides) -> RunConfig:
    """Read an INI file (optional) and apply keyword overrides that are not None.

    Raises:
        ValueError: on unknown sections or keys, or unparsable values.
    """
    values = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in SECTIONS:
                raise ValueError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
                values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
