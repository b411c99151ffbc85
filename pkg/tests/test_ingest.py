import numpy as np
import pytest

from hetgp_forecast.ingest import (
    AlignmentError,
    CovariateFrame,
    ParseError,
    SeasonSeries,
    impute_missing,
    interpolate_linear,
    load_covariates,
    load_incidence,
)
from synth import season_labels, write_incidence


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def two_seasons(tmp_path):
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 200, size=(2, 52))
    path = tmp_path / "inc.csv"
    write_incidence(path, counts, ("1990/1991", "1991/1992"))
    return path, counts


def test_two_seasons_shape(two_seasons):
    path, counts = two_seasons
    s = load_incidence(path, "sj")
    assert s.n_seasons == 2
    assert s.labels == ("1990/1991", "1991/1992")
    np.testing.assert_array_equal(s.counts, counts)
    np.testing.assert_allclose(s.transformed, np.sqrt(counts + 1.0) - 1.0, rtol=1e-14)


def test_week_53_folded_into_week_52(tmp_path):
    rows = ["season,season_week,total_cases"] + [f"1990/1991,{w},{w}" for w in range(1, 54)]
    s = load_incidence(_write(tmp_path / "a.csv", "\n".join(rows) + "\n"), "sj")
    assert s.counts.shape == (1, 52)
    assert s.counts[0, -1] == 52 + 53
    assert s.counts.sum() == sum(range(1, 54))


def test_negative_count_names_row(tmp_path):
    rows = ["season,season_week,total_cases"] + [f"1990/1991,{w},3" for w in range(1, 53)]
    rows[5] = "1990/1991,5,-2"
    with pytest.raises(ParseError, match="line 6"):
        load_incidence(_write(tmp_path / "a.csv", "\n".join(rows) + "\n"), "sj")


def test_non_numeric_and_duplicate_and_missing_column(tmp_path):
    base = ["season,season_week,total_cases"] + [f"1990/1991,{w},3" for w in range(1, 53)]
    bad = list(base)
    bad[3] = "1990/1991,3,abc"
    with pytest.raises(ParseError, match="line 4"):
        load_incidence(_write(tmp_path / "a.csv", "\n".join(bad) + "\n"), "sj")
    dup = base + ["1990/1991,7,1"]
    with pytest.raises(ParseError, match="duplicate"):
        load_incidence(_write(tmp_path / "b.csv", "\n".join(dup) + "\n"), "sj")
    with pytest.raises(ParseError, match="missing columns"):
        load_incidence(_write(tmp_path / "c.csv", "season,week,cases\n"), "sj")


def test_incomplete_season_rejected(tmp_path):
    rows = ["season,season_week,total_cases"] + [f"1990/1991,{w},3" for w in range(1, 50)]
    with pytest.raises(ParseError, match="missing weeks"):
        load_incidence(_write(tmp_path / "a.csv", "\n".join(rows) + "\n"), "sj")


def test_locale_column_filters_and_sorts(tmp_path):
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 50, size=(3, 52))
    path = tmp_path / "both.csv"
    labels = ("1992/1993", "1990/1991", "1991/1992")
    write_incidence(path, counts, labels, locale="sj")
    s = load_incidence(path, "sj", locale_col="city")
    assert s.labels == ("1990/1991", "1991/1992", "1992/1993")
    np.testing.assert_array_equal(s.counts[0], counts[1])
    with pytest.raises(ParseError, match="no rows"):
        load_incidence(path, "iq", locale_col="city")


def test_reserialization_idempotent(tmp_path, two_seasons):
    path, _ = two_seasons
    s1 = load_incidence(path, "sj")
    out = tmp_path / "re.csv"
    s1.to_csv(out)
    s2 = load_incidence(out, "sj", locale_col="locale")
    assert s2.labels == s1.labels
    np.testing.assert_array_equal(s2.counts, s1.counts)
    out2 = tmp_path / "re2.csv"
    s2.to_csv(out2)
    assert out.read_bytes() == out2.read_bytes()


def test_series_validation():
    with pytest.raises(ValueError):
        SeasonSeries("sj", ("a",), np.zeros((1, 51)))
    with pytest.raises(ValueError):
        SeasonSeries("sj", ("a", "b"), np.zeros((1, 52)))
    s = SeasonSeries("sj", ("a", "b"), np.ones((2, 52)))
    assert s.head(1).labels == ("a",)
    assert s.index("b") == 1
    with pytest.raises(KeyError):
        s.index("zz")


def _cov_csv(tmp_path, rows, header="season,season_week,precipitation"):
    return _write(tmp_path / "cov.csv", "\n".join([header] + rows) + "\n")


def test_covariates_single_column(tmp_path):
    rows = [f"1990/1991,{w},{w * 0.5}" for w in range(1, 53)]
    f = load_covariates(_cov_csv(tmp_path, rows))
    assert list(f.columns) == ["precipitation"]
    assert f.n_rows == 52
    np.testing.assert_allclose(f["precipitation"], np.arange(1, 53) * 0.5)


def test_covariates_gap_week_and_na_are_missing(tmp_path):
    rows = [f"1990/1991,{w},{w}" for w in range(1, 53) if w != 10]
    rows[3] = "1990/1991,4,NA"
    f = load_covariates(_cov_csv(tmp_path, rows))
    col = f["precipitation"]
    assert np.isnan(col[9]) and np.isnan(col[3])
    assert np.isfinite(np.delete(col, [3, 9])).all()


def test_yearly_population_linear_interpolation(tmp_path):
    rows = []
    for s, label in enumerate(season_labels(2)):
        for w in range(1, 53):
            pop = {0: 1000, 1: 2040}.get(s) if w == 1 else ""
            rows.append(f"{label},{w},{pop}")
    f = load_covariates(_cov_csv(tmp_path, rows, "season,season_week,population"))
    pop = f["population"]
    # anchors at rows 0 and 52, 1040 apart -> 20 per week; held flat after the last anchor
    np.testing.assert_allclose(pop[:53], 1000 + 20 * np.arange(53))
    np.testing.assert_allclose(pop[53:], 2040)


def test_covariate_alignment_errors(tmp_path):
    rows = [f"1990/1991,{w},1" for w in range(1, 53)] + ["1990/1991,3,2"]
    with pytest.raises(AlignmentError, match="duplicate"):
        load_covariates(_cov_csv(tmp_path, rows))
    with pytest.raises(AlignmentError, match="outside"):
        load_covariates(_cov_csv(tmp_path, ["1990/1991,54,1"]))


def test_align_to_series():
    index = tuple((label, w) for label in season_labels(3) for w in range(1, 53))
    f = CovariateFrame(index, {"x": np.arange(156.0)})
    s = SeasonSeries("sj", season_labels(3)[1:], np.zeros((2, 52)))
    g = f.align_to(s)
    np.testing.assert_array_equal(g["x"], np.arange(52.0, 156.0))
    with pytest.raises(AlignmentError):
        f.align_to(SeasonSeries("sj", ("2000/2001",), np.zeros((1, 52))))


def test_interpolate_linear():
    np.testing.assert_allclose(interpolate_linear([np.nan, 1.0, np.nan, 3.0, np.nan]), [1, 1, 2, 3, 3])


def _frame(values):
    index = tuple(("1990/1991", w) for w in range(1, len(values) + 1))
    return CovariateFrame(index, {"x": np.asarray(values, dtype=float)})


def test_impute_no_missing_is_identity():
    f = _frame(np.sin(np.arange(52) / 5))
    assert impute_missing(f, "x") is f


def test_impute_between_equal_neighbours():
    # smooth series, flat at 7 around the hole with a bump far away so the
    # constant-column shortcut is not what gets exercised
    t = np.arange(60.0)
    v = 7.0 + 3.0 * np.exp(-(((t - 48.0) / 6.0) ** 2))
    assert v[9] == v[11] == 7.0
    v[10] = np.nan
    out = impute_missing(_frame(v), "x")["x"]
    assert abs(out[10] - 7.0) <= 1e-6 * 7.0


def test_impute_constant_neighbours():
    v = np.full(30, 4.0)
    v[12] = np.nan
    out = impute_missing(_frame(v), "x")["x"]
    assert abs(out[12] - 4.0) <= 1e-6 * 4.0


def test_impute_run_at_end_finite():
    v = np.sin(np.arange(60) / 4.0) + 2.0
    v[50:] = np.nan
    out = impute_missing(_frame(v), "x")["x"]
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out[:50], v[:50])


def test_impute_errors():
    with pytest.raises(ValueError, match="entirely missing"):
        impute_missing(_frame(np.full(20, np.nan)), "x")
    v = np.full(20, np.nan)
    v[:3] = 1.0
    with pytest.raises(ValueError, match="at least"):
        impute_missing(_frame(v), "x")
