import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_te, daily_dates, make_markets
from immcausal.errors import ConfigError, InsufficientDataError
from immcausal.market_data import MarketMeta, ReturnPanel, Segment, Zone, load_market_meta, segment_by_calendar
from immcausal.synthetic import CouplingSpec, generate_var_returns
from immcausal.te import (
    LagPolicy,
    TEConfig,
    conditional_entropy,
    discretize,
    lag_for_pair,
    read_te_series,
    te_from_symbols,
    te_matrix,
    te_series,
    transfer_entropy,
    write_te_series,
)


# -- discretize ---------------------------------------------------------------


def test_discretize_thirds():
    s = discretize([1, 2, 3, 4, 5, 6], 3, "quantile")
    assert s.symbols.tolist() == [0, 0, 1, 1, 2, 2]
    assert s.n_bins == 3 and s.scheme == "quantile"


@pytest.mark.parametrize("scheme", ["quantile", "equal-width"])
def test_discretize_constant(scheme):
    assert discretize([4.2] * 17, 5, scheme).symbols.tolist() == [0] * 17


def test_discretize_quantile_balance(rng):
    x = rng.standard_normal(1000)
    counts = np.bincount(discretize(x, 3).symbols, minlength=3)
    assert np.all(np.abs(counts - 1000 / 3) <= 1)


def test_discretize_equal_width():
    s = discretize([0.0, 0.1, 0.5, 0.9, 1.0], 2, "equal-width")
    assert s.symbols.tolist() == [0, 0, 1, 1, 1]


def test_discretize_errors():
    with pytest.raises(InsufficientDataError):
        discretize([], 3)
    with pytest.raises(ConfigError):
        discretize([1, 2, 3], 1)
    with pytest.raises(ConfigError):
        discretize([1, 2, 3], 2, "kmeans")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=200), st.integers(2, 6))
def test_discretize_symbol_range(x, q):
    s = discretize(x, q)
    assert len(s) == len(x)
    assert s.symbols.min() >= 0 and s.symbols.max() < q
    # monotone: larger value never gets a smaller symbol
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(s.symbols[order]) >= 0)


# -- conditional entropy -----------------------------------------------------------


def test_conditional_entropy_examples():
    assert conditional_entropy([[5, 5], [5, 5]]) == pytest.approx(math.log(2), abs=1e-15)
    assert conditional_entropy([[4, 0, 7], [0, 9, 0]]) == 0.0
    # hand value: -(6/8 ln 3/4 + 2/8 ln 1/4)
    assert conditional_entropy([[3, 1], [1, 3]]) == pytest.approx(0.5623351446188083, abs=1e-15)
    with pytest.raises(InsufficientDataError):
        conditional_entropy([[0, 0], [0, 0]])


def test_miller_madow_adds_bias_term():
    raw = conditional_entropy([[3, 1], [1, 3]])
    # 4 occupied joint cells, 2 occupied conditions, N = 8
    assert conditional_entropy([[3, 1], [1, 3]], miller_madow=True) == pytest.approx(raw + 2 / 16)


# -- transfer entropy ---------------------------------------------------------------


def test_constant_source_gives_zero(rng):
    y = rng.standard_normal(300)
    for lag in (0, 1):
        assert transfer_entropy(np.ones(300), y, lag) == 0.0


def test_lagged_copy_approaches_log_q(rng):
    x = rng.uniform(size=10_000)
    y = np.empty_like(x)
    y[1:] = x[:-1]
    y[0] = 0.5
    assert transfer_entropy(x, y, 1, 3) == pytest.approx(math.log(3), abs=0.02)


def test_transfer_entropy_is_symbol_te(rng):
    x, y = rng.standard_normal((2, 400))
    xs, ys = discretize(x, 4).symbols, discretize(y, 4).symbols
    assert transfer_entropy(x, y, 0, 4) == te_from_symbols(xs, ys, 0, 4)


@settings(max_examples=300, deadline=None)
@given(
    st.integers(2, 4).flatmap(
        lambda q: st.tuples(
            st.just(q),
            st.integers(2, 200).flatmap(
                lambda n: st.tuples(
                    st.lists(st.integers(0, q - 1), min_size=n, max_size=n),
                    st.lists(st.integers(0, q - 1), min_size=n, max_size=n),
                )
            ),
        )
    ),
    st.sampled_from([0, 1]),
)
def test_oracle_equivalence(qxy, lag):
    q, (xs, ys) = qxy
    got = te_from_symbols(xs, ys, lag, q, min_samples=1)
    assert got >= 0.0
    assert abs(got - brute_force_te(xs, ys, lag)) <= 1e-12


def test_minimum_samples():
    xs = [0, 1, 2] * 10
    with pytest.raises(InsufficientDataError):
        te_from_symbols(xs, xs, 1, 3, min_samples=30)
    assert te_from_symbols(xs + [0], xs + [0], 1, 3, min_samples=30) >= 0.0


def test_time_translation(rng):
    x, y = rng.standard_normal((2, 500))
    xs, ys = discretize(x, 3).symbols, discretize(y, 3).symbols
    pad_x = np.concatenate([rng.integers(0, 3, 37), xs])
    pad_y = np.concatenate([rng.integers(0, 3, 37), ys])
    # same aligned samples once the common offset is stripped
    assert te_from_symbols(pad_x[37:], pad_y[37:], 1, 3) == te_from_symbols(xs, ys, 1, 3)


def test_shuffle_destroys_causality():
    rng = np.random.default_rng(7)
    n = 500
    x = rng.standard_normal(n)
    y = np.empty(n)
    y[0] = 0.0
    y[1:] = 0.8 * x[:-1] + rng.standard_normal(n - 1)
    coupled = transfer_entropy(x, y, 1)
    null = [transfer_entropy(rng.permutation(x), y, 1) for _ in range(200)]
    assert coupled > max(null)

    z = rng.standard_normal(n)
    indep = transfer_entropy(z, y, 1)
    null = [transfer_entropy(rng.permutation(z), y, 1) for _ in range(200)]
    assert indep <= np.quantile(null, 0.99)
    assert np.median(null) < coupled


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(35, 300), st.sampled_from([0, 1]), st.integers(2, 5))
def test_non_negative(seed, n, lag, q):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, n))
    assert transfer_entropy(x, y, lag, q) >= 0.0


# -- lag policy ------------------------------------------------------------------------


def test_lag_examples():
    ms = {m.market_id: m for m in load_market_meta()}
    pol = LagPolicy.immediate()
    assert lag_for_pair(ms["DAX"], ms["DJI"], pol) == 0
    assert lag_for_pair(ms["SHI"], ms["NIKK"], pol) == 1
    assert lag_for_pair(ms["DJI"], ms["DAX"], pol) == 1


def test_lag_policy_rule():
    pol = LagPolicy.immediate()
    zero = {(Zone.ASIA, Zone.EUROPE), (Zone.ASIA, Zone.AMERICA), (Zone.EUROPE, Zone.AMERICA)}
    for a in Zone:
        for b in Zone:
            assert pol.lag(a, b) == (0 if (a, b) in zero else 1)
    assert LagPolicy.from_dict(pol.to_dict()) == pol
    custom = LagPolicy.from_dict({"Europe->America": 1})
    assert custom.lag(Zone.EUROPE, Zone.AMERICA) == 1
    with pytest.raises(ConfigError):
        LagPolicy.from_dict({"Europe->Mars": 0})
    with pytest.raises(ConfigError):
        LagPolicy.from_dict({"Europe->America": 2})


# -- matrices and series --------------------------------------------------------------


def _segment(returns, index=1):
    dates = daily_dates("2001-01-01", "2003-12-31")[: returns.shape[1]]
    return Segment(index, dates[0].astype("datetime64[M]"), dates[-1].astype("datetime64[M]"), dates, returns)


def test_matrix_constant_rows():
    seg = _segment(np.zeros((2, 100)))
    mat = te_matrix(seg, make_markets(2))
    assert mat.values[0, 1] == 0.0 and mat.values[1, 0] == 0.0
    assert np.isnan(mat.values[0, 0]) and not mat.valid[0, 0]


def test_matrix_planted_direction():
    spec0 = np.zeros((3, 3))
    spec0[0, 1] = 0.8
    wins = 0
    for seed in range(100):
        spec = CouplingSpec(spec0, 0.0, 1.0, (Zone.AMERICA,) * 3, seed)
        rp = generate_var_returns(spec, 1000)
        mat = te_matrix(_segment(rp.returns), rp.markets)
        others = mat.values[mat.valid & ~np.eye(3, dtype=bool)]
        wins += mat.values[0, 1] >= others.max()
    assert wins >= 95


def test_matrix_ten_markets(rng):
    ms = load_market_meta()
    mat = te_matrix(_segment(rng.standard_normal((10, 250))), ms)
    off = ~np.eye(10, dtype=bool)
    assert mat.valid[off].all() and not mat.valid[~off].any()
    assert np.all(np.isfinite(mat.values[off])) and np.all(mat.values[off] >= 0)
    assert mat.off_diagonal().size == 90


def test_matrix_uses_lag_policy(rng):
    # B copies A's same-day return: only visible at lag 0 (Asia -> America)
    a = rng.standard_normal(400)
    b = a + 0.1 * rng.standard_normal(400)
    ms = (MarketMeta("A", "A", Zone.ASIA, 1), MarketMeta("B", "B", Zone.AMERICA, 2))
    mat = te_matrix(_segment(np.vstack([a, b])), ms)
    assert mat.values[0, 1] > 0.5
    assert mat.values[1, 0] < 0.05


def test_short_segment_flags_cells(rng):
    mat = te_matrix(_segment(rng.standard_normal((3, 20))), make_markets(3))
    assert not mat.valid.any()
    assert np.all(np.isnan(mat.values))


def _panel(rng, n_markets=4):
    dates = daily_dates("2000-01-03", "2001-06-29")
    return ReturnPanel(make_markets(n_markets), dates, rng.standard_normal((n_markets, len(dates))))


def test_series_single_segment(rng):
    dates = daily_dates("2000-01-03", "2000-12-29")
    rp = ReturnPanel(make_markets(3), dates, rng.standard_normal((3, len(dates))))
    segs = segment_by_calendar(rp)
    series = te_series(segs)
    assert len(series) == 1
    direct = te_matrix(segs[0], rp.markets)
    np.testing.assert_array_equal(series.matrices[0].values, direct.values)
    assert series.provenance["n_bins"] == 3 and series.provenance["scheme"] == "quantile"
    assert series.provenance["lag_policy"]["Asia->Europe"] == 0


def test_series_permutation_equivariance(rng):
    rp = _panel(rng)
    perm = [2, 0, 3, 1]
    ms = tuple(MarketMeta(rp.markets[p].market_id, "", rp.markets[p].zone, k + 1) for k, p in enumerate(perm))
    rp2 = ReturnPanel(ms, rp.dates, rp.returns[perm])
    a = te_series(segment_by_calendar(rp)).stack()
    b = te_series(segment_by_calendar(rp2)).stack()
    np.testing.assert_array_equal(b, a[:, perm][:, :, perm])


def test_series_deterministic_across_workers(rng):
    segs = segment_by_calendar(_panel(rng))
    a = te_series(segs, workers=1).stack()
    b = te_series(segs, workers=4).stack()
    assert a.tobytes() == b.tobytes()


def test_series_serialization_round_trip(tmp_path, rng):
    segs = segment_by_calendar(_panel(rng))
    series = te_series(segs, config=TEConfig(n_bins=4))
    series.matrices[2].valid[1, 2] = False
    series.matrices[2].values[1, 2] = np.nan
    write_te_series(tmp_path / "a.jsonl", series)
    back = read_te_series(tmp_path / "a.jsonl")
    assert back.ids == series.ids
    assert back.provenance == series.provenance
    np.testing.assert_array_equal(back.stack(), series.stack())
    assert [m.end_date for m in back] == [m.end_date for m in series]
    write_te_series(tmp_path / "b.jsonl", back)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_series_empty():
    from immcausal.market_data import SegmentSeries

    with pytest.raises(InsufficientDataError):
        te_series(SegmentSeries(make_markets(2), []))
