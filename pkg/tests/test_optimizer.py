import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdc_forge import jsa, optimizer, poling
from spdc_forge.errors import ConfigError, NumericError


@pytest.fixture(scope="module")
def grid128():
    return jsa.FrequencyGrid.symmetric(128)


@pytest.fixture(scope="module")
def ideal(dk0):
    return poling.NonlinearityTarget.gaussian(30.0, dk0, 1 / 6.04)


def test_matched_width_formula(crystal, model):
    assert optimizer.matched_pump_width(30.0 / 6.04, crystal, model) == pytest.approx(0.308, abs=0.002)
    # sigma_w scales as 1/sigma
    a = optimizer.matched_pump_width(4.0, crystal, model)
    b = optimizer.matched_pump_width(8.0, crystal, model)
    assert a / b == pytest.approx(2.0, rel=1e-12)


def test_optimum_matches_analytic_for_ideal(ideal, grid128, crystal, model):
    res = optimizer.optimize_pump_width(ideal, (0.25, 0.37), n_coarse=13, grid=grid128, crystal=crystal, model=model)
    assert res.optimum == pytest.approx(optimizer.matched_pump_width(30 / 6.04, crystal, model), abs=3e-3)
    assert res.optimum_purity >= res.purities.max()
    assert res.metadata["grid"] == [128, 128]


def test_edge_maximum_is_an_error(ideal, grid128, crystal, model):
    with pytest.raises(NumericError, match="edge"):
        optimizer.optimize_pump_width(ideal, (0.40, 0.45), n_coarse=5, grid=grid128, crystal=crystal, model=model)
    with pytest.raises(ConfigError):
        optimizer.optimize_pump_width(ideal, (0.4, 0.3), grid=grid128)


def test_sweep_widths_decrease(grid128, crystal, model):
    pur, wid = optimizer.sweep_sigma_ratio([1 / 7, 1 / 6.04, 1 / 5], grid=grid128, crystal=crystal, model=model,
                                           n_coarse=7)
    assert np.all(np.diff(wid.purities) < 0)
    assert pur.purities[1] > pur.purities[2]
    assert pur.optimum in pur.values


def test_sweep_workers_match_serial(grid128, crystal, model):
    r = [1 / 7, 1 / 6.04]
    serial = optimizer.sweep_sigma_ratio(r, grid=grid128, crystal=crystal, model=model, n_coarse=5)
    pooled = optimizer.sweep_sigma_ratio(r, grid=grid128, crystal=crystal, model=model, n_coarse=5, workers=2)
    np.testing.assert_array_equal(serial[0].purities, pooled[0].purities)
    np.testing.assert_array_equal(serial[1].purities, pooled[1].purities)


def test_sweep_rejects_bad_ratio(grid128):
    with pytest.raises(ConfigError):
        optimizer.sweep_sigma_ratio([0.6], grid=grid128)


def test_unknown_generator():
    with pytest.raises(ConfigError):
        optimizer.make_source(1 / 6, "zigzag")


def test_fwhm_curve_quadratic_near_optimum(layout604, grid128, crystal, model):
    fw = np.linspace(0.69, 0.77, 9)
    res = optimizer.purity_vs_fwhm(layout604, fw, grid128, crystal, model)
    assert res.metadata["curvature_per_nm2"] < 0
    assert 0.69 < res.optimum < 0.77


def test_sweep_result_csv(tmp_path, ideal, grid128, crystal, model):
    res = optimizer.purity_vs_gdd(ideal, [-0.1, 0.0, 0.1], 0.321, grid128, crystal, model)
    p = tmp_path / "gdd.csv"
    res.to_csv(p, {"duration_ps": res.metadata["duration_ps"]})
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["gdd", "purity", "duration_ps"]
    assert len(rows) == 4


def test_gdd_curve_peaks_at_zero(ideal, grid128, crystal, model):
    g = np.linspace(-0.2, 0.2, 5)
    res = optimizer.purity_vs_gdd(ideal, g, 0.321, grid128, crystal, model)
    assert res.optimum == 0.0
    # a real symmetric PMF gives complex-conjugate JSAs for +-GDD
    assert res.purities[0] == pytest.approx(res.purities[-1], abs=1e-12)
    assert res.metadata["duration_ps"][2] == pytest.approx(res.metadata["tau0_ps"])


def test_purity_bound_intervals(ideal, grid128, crystal, model):
    b = optimizer.purity_bound_from_duration(ideal, 1.21, 0.02, 0.321, 1.17, grid128, crystal, model)
    (n_lo, n_hi), (p_lo, p_hi) = b.intervals
    assert n_lo == -p_hi and n_hi == -p_lo
    assert p_lo < b.gdd_ps2 < p_hi
    assert b.purity_low <= b.purity <= b.purity_high


def test_stretched_duration_value():
    assert optimizer.stretched_duration(1.17, 0.13) == pytest.approx(1.21, abs=0.005)
    assert optimizer.stretched_duration(1.17, 0.0) == 1.17


def test_transform_limit():
    assert optimizer.transform_limited_duration(0.755) == pytest.approx(1.17, abs=0.01)


def test_gdd_for_duration_below_limit():
    with pytest.raises(ConfigError):
        optimizer.gdd_for_duration(1.0, 1.17)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-2.0, 2.0))
def test_duration_inversion_roundtrip(tau0, gdd):
    tau = optimizer.stretched_duration(tau0, gdd)
    # near zero the inverse goes through sqrt(tau^2/tau0^2 - 1): error ~ tau0^2 sqrt(eps)
    assert optimizer.gdd_for_duration(tau, tau0) == pytest.approx(abs(gdd), rel=1e-7, abs=1e-7 * tau0**2)


def test_shaper_gdd_odd_and_invertible():
    plus = optimizer.gdd_from_displacement(optimizer.ShaperModel(displacement_mm=1.7))
    minus = optimizer.gdd_from_displacement(optimizer.ShaperModel(displacement_mm=-1.7))
    assert plus == pytest.approx(-minus)
    assert abs(plus) == pytest.approx(0.13, rel=0.25)
    assert optimizer.displacement_from_gdd(plus) == pytest.approx(1.7)


def test_shaper_hand_computed():
    # Littrow at 775 nm on 2400 l/mm: sin(theta) = 0.93; GDD = 2 D lam^3 / (2 pi c^2 d^2 cos^2)
    lam, d, c = 775e-9, 1e-3 / 2400, 299792458.0
    cos2 = 1 - (lam / (2 * d)) ** 2
    expect = 2 * 1e-3 * lam**3 / (2 * math.pi * c * c * d * d * cos2) * 1e24
    assert optimizer.gdd_from_displacement(optimizer.ShaperModel(displacement_mm=1.0)) == pytest.approx(expect)


def test_shaper_validation():
    with pytest.raises(ConfigError):
        optimizer.ShaperModel(lines_per_mm=4000).diffraction_angle()
    with pytest.raises(ConfigError):
        optimizer.ShaperModel(littrow=False)
    with pytest.raises(ConfigError):
        optimizer.ShaperModel(displacement_mm=600.0)


def test_sweep_is_deterministic(ideal, grid128, crystal, model):
    a = optimizer.optimize_pump_width(ideal, (0.25, 0.37), n_coarse=7, grid=grid128, crystal=crystal, model=model)
    b = optimizer.optimize_pump_width(ideal, (0.25, 0.37), n_coarse=7, grid=grid128, crystal=crystal, model=model)
    assert a.optimum == b.optimum
    np.testing.assert_array_equal(a.purities, b.purities)
