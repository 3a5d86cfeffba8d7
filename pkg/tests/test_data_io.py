import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exactsr.bounds import ZeroTarget
from exactsr.data_io import (G, Dataset, MissingColumn, ParseError, ZeroDivisor, load_csv, normalize,
                             pendulum_time, synth_kepler, synth_pendulum, write_csv)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_columns(tmp_path):
    ds = load_csv(write(tmp_path, "tau,M,d\n1,2,3\n4,5,6\n"), "d")
    assert ds.m == 2 and ds.n == 2
    assert ds.variable_names == ("tau", "M")
    np.testing.assert_array_equal(ds.y, [3.0, 6.0])
    np.testing.assert_array_equal(ds.X, [[1.0, 2.0], [4.0, 5.0]])


def test_target_may_be_any_column(tmp_path):
    ds = load_csv(write(tmp_path, "y,a,b\n1,2,3\n"), "y")
    assert ds.variable_names == ("a", "b")
    assert ds.rows == [((2.0, 3.0), 1.0)]


def test_non_numeric_cell(tmp_path):
    with pytest.raises(ParseError) as err:
        load_csv(write(tmp_path, "a,d\n1,2\nabc,3\n"), "d")
    assert (err.value.row, err.value.col) == (3, 1)


def test_zero_target_row(tmp_path):
    with pytest.raises(ZeroTarget) as err:
        load_csv(write(tmp_path, "a,d\n1,2\n2,0\n"), "d")
    assert err.value.row == 3


def test_missing_column_and_ragged_rows(tmp_path):
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path, "a,b\n1,2\n"), "d")
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "a,d\n1,2,3\n"), "d")
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, ""), "d")
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "a,d\n"), "d")


def test_dataset_is_immutable():
    ds = Dataset(("x",), [[1.0]], [2.0])
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0


def test_roundtrip(tmp_path):
    ds = synth_kepler(8, 0.01, 42)
    p = tmp_path / "k.csv"
    write_csv(ds, p)
    back = load_csv(p, "d")
    assert back.variable_names == ds.variable_names
    np.testing.assert_allclose(back.X, ds.X, rtol=1e-12)
    np.testing.assert_allclose(back.y, ds.y, rtol=1e-12)


# --- normalize ----------------------------------------------------------------

def test_normalize_identity():
    ds = synth_kepler()
    same = normalize(ds, {"tau": 1.0, "M": 1.0, "m": 1.0, "d": 1.0})
    np.testing.assert_array_equal(same.X, ds.X)
    np.testing.assert_array_equal(same.y, ds.y)


def test_normalize_scales_and_records():
    ds = synth_kepler()
    days = normalize(ds, {"tau": 365.25})
    np.testing.assert_allclose(days.column("tau"), ds.column("tau") / 365.25)
    assert dict(days.normalization) == {"tau": 365.25}
    twice = normalize(days, {"tau": 2.0, "d": 3.0})
    assert dict(twice.normalization) == {"tau": 730.5, "d": 3.0}


def test_normalize_errors():
    ds = synth_kepler()
    with pytest.raises(ZeroDivisor):
        normalize(ds, {"tau": 0.0})
    with pytest.raises(MissingColumn):
        normalize(ds, {"nope": 2.0})


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_normalize_is_invertible(a, b):
    ds = synth_kepler()
    back = normalize(normalize(ds, {"tau": a, "d": b}), {"tau": 1 / a, "d": 1 / b})
    np.testing.assert_allclose(back.X, ds.X, rtol=1e-12)
    np.testing.assert_allclose(back.y, ds.y, rtol=1e-12)


# --- generators ---------------------------------------------------------------

def test_kepler_reproducible():
    a, b = synth_kepler(8, 0.01, 42), synth_kepler(8, 0.01, 42)
    assert a.n == 8
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, synth_kepler(8, 0.01, 43).y)


def test_kepler_law_without_noise():
    ds = synth_kepler(50, 0.0, 1)
    tau, M = ds.column("tau"), ds.column("M")
    np.testing.assert_allclose(ds.y ** 3, tau ** 2 * M, rtol=1e-12)
    assert np.all(ds.column("m") <= 1e-3 * M)
    assert np.cbrt(8.0 ** 2 * 1.0) == pytest.approx(4.0)


def test_kepler_noise_is_bounded():
    ds = synth_kepler(200, 0.01, 3)
    rel = ds.y / np.cbrt(ds.column("tau") ** 2 * ds.column("M")) - 1
    assert np.all(np.abs(rel) <= 0.01 + 1e-12)


def test_pendulum_law():
    assert pendulum_time(0.3, 10) == pytest.approx(math.pi * 10 * math.sqrt(0.3 / 9.81))
    assert pendulum_time(0.3, 10) == pytest.approx(5.494, abs=1e-3)


def test_pendulum_without_noise():
    ds = synth_pendulum(40, 0.0, 5)
    l, i, ti, j = (ds.column(c) for c in ("l", "i", "t_i", "j"))
    np.testing.assert_allclose(ds.y, math.pi * j * np.sqrt(l / G), rtol=1e-12)
    np.testing.assert_allclose(ti, math.pi * i * np.sqrt(l / G), rtol=1e-12)
    assert np.all((1 <= i) & (i < j) & (j <= 60))


def test_pendulum_reproducible():
    np.testing.assert_array_equal(synth_pendulum(10, 0.005, 7).X, synth_pendulum(10, 0.005, 7).X)


def test_generator_argument_checks():
    with pytest.raises(ValueError):
        synth_kepler(2)
    with pytest.raises(ValueError):
        synth_kepler(8, -0.1)
    with pytest.raises(ValueError):
        synth_pendulum(1)
