import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdc_forge import jsa, poling
from spdc_forge.errors import ConfigError, NumericError


def bivariate(grid, a, b, c, phase=0.0):
    """exp(-(a x^2 + b y^2 + 2 c x y)) in detuning units of 1e12 rad/s."""
    x = (grid.omega_s - grid.omega_s.mean())[:, None] * 1e-12
    y = (grid.omega_i - grid.omega_i.mean())[None, :] * 1e-12
    return np.exp(-(a * x * x + b * y * y + 2 * c * x * y) + 1j * phase * x * y)


def test_bivariate_gaussian_purity_1024():
    # the intensity has correlation coefficient -c/sqrt(ab), so P = sqrt(1 - c^2/(ab))
    grid = jsa.FrequencyGrid.symmetric(1024, 6.0)
    a, b, c = 1.0, 1.4, 0.6
    js = jsa.JointSpectrum.from_density(bivariate(grid, a, b, c), grid)
    assert jsa.purity(js) == pytest.approx(math.sqrt(1 - c * c / (a * b)), abs=1e-8)


def test_separable_is_pure(grid256):
    js = jsa.JointSpectrum.from_density(bivariate(grid256, 1.0, 2.0, 0.0), grid256)
    assert jsa.purity(js) == pytest.approx(1.0, abs=1e-12)
    sch = jsa.schmidt(js)
    assert sch.schmidt_number == pytest.approx(1.0, abs=1e-12)


def test_chirp_reduces_purity(grid256):
    plain = jsa.JointSpectrum.from_density(bivariate(grid256, 1.0, 1.0, 0.0), grid256)
    chirped = jsa.JointSpectrum.from_density(bivariate(grid256, 1.0, 1.0, 0.0, phase=1.5), grid256)
    assert jsa.purity(chirped) < jsa.purity(plain) - 1e-3


def test_visibility_direct_trace(grid256):
    # Tr(rho1 rho2) from explicitly formed reduced density matrices
    j1 = jsa.JointSpectrum.from_density(bivariate(grid256, 1.0, 1.3, 0.4), grid256)
    j2 = jsa.JointSpectrum.from_density(bivariate(grid256, 1.2, 1.0, -0.2, phase=0.3), grid256)
    r1 = jsa.reduced_density(j1, "idler")
    r2 = jsa.reduced_density(j2, "idler")
    direct = float(np.real(np.trace(r1 @ r2)))
    assert jsa.heralded_visibility(j1, j2) == pytest.approx(direct, abs=1e-12)
    assert jsa.heralded_visibility(j1, j1) == pytest.approx(jsa.purity(j1), abs=1e-12)


def test_visibility_interfering_signal_uses_transpose(grid256):
    j1 = jsa.JointSpectrum.from_density(bivariate(grid256, 1.0, 1.3, 0.4), grid256)
    j2 = jsa.JointSpectrum.from_density(bivariate(grid256, 1.1, 0.9, 0.1), grid256)
    r1 = jsa.reduced_density(j1, "signal")
    r2 = jsa.reduced_density(j2, "signal")
    direct = float(np.real(np.trace(r1 @ r2)))
    assert jsa.heralded_visibility(j1, j2, "signal") == pytest.approx(direct, abs=1e-12)


def test_visibility_grid_mismatch(grid256, grid512):
    a = jsa.JointSpectrum.from_density(bivariate(grid256, 1, 1, 0), grid256)
    b = jsa.JointSpectrum.from_density(bivariate(grid512, 1, 1, 0), grid512)
    with pytest.raises(ConfigError):
        jsa.heralded_visibility(a, b)


def test_swap_symmetry(working_jsa):
    assert jsa.purity(working_jsa.transposed()) == pytest.approx(jsa.purity(working_jsa), abs=1e-13)


def test_working_point_normalised(working_jsa):
    assert working_jsa.norm() == pytest.approx(1.0, abs=1e-12)
    w = jsa.schmidt(working_jsa).weights
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(w) <= 0)


def test_normalisation_on_covering_grid(dk0, crystal, model):
    # the ideal profile has no domain-noise pedestal, so a wide grid covers it to 1e-6
    target = poling.NonlinearityTarget.gaussian(30.0, dk0, 1 / 6.04)
    grid = jsa.FrequencyGrid.symmetric(384, 12.0)
    js = jsa.build_jsa(jsa.PumpEnvelope.gaussian(0.308), target, grid, crystal, model)
    assert js.provenance["edge_fraction"] < 1e-6
    assert js.norm() == pytest.approx(1.0, abs=1e-12)


def test_correlated_gaussian_grid_refinement():
    # r = 0.6 on 256^2 against the 1024^2 SVD
    a, b = 1.0, 1.0
    c = -0.6  # intensity correlation -c/sqrt(ab) = 0.6
    coarse = jsa.FrequencyGrid.symmetric(256, 6.0)
    fine = jsa.FrequencyGrid.symmetric(1024, 6.0)
    p_c = jsa.purity(jsa.JointSpectrum.from_density(bivariate(coarse, a, b, c), coarse))
    p_f = jsa.purity(jsa.JointSpectrum.from_density(bivariate(fine, a, b, c), fine))
    assert abs(p_c - p_f) < 1e-4
    assert p_f == pytest.approx(0.8, abs=1e-6)


def test_grid_convergence(layout604, grid256, grid512, crystal, model):
    pump = jsa.PumpEnvelope.gaussian(0.308)
    p256 = jsa.purity(jsa.build_jsa(pump, layout604, grid256, crystal, model, warn=False))
    p512 = jsa.purity(jsa.build_jsa(pump, layout604, grid512, crystal, model, warn=False))
    assert abs(p256 - p512) < 1e-6


def test_coverage_warning(layout604, crystal, model):
    narrow = jsa.FrequencyGrid.symmetric(128, 0.6)
    with pytest.warns(UserWarning, match="grid may not cover"):
        jsa.build_jsa(jsa.PumpEnvelope.gaussian(0.308), layout604, narrow, crystal, model)


def test_no_warning_on_default_grid(working_jsa, layout604, grid256, crystal, model):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        jsa.build_jsa(jsa.PumpEnvelope.gaussian(0.308), layout604, grid256, crystal, model)


def test_gdd_lowers_purity(layout604, grid256, crystal, model):
    base = jsa.PumpEnvelope.gaussian(0.321)
    p0 = jsa.purity(jsa.build_jsa(base, layout604, grid256, crystal, model, warn=False))
    p1 = jsa.purity(jsa.build_jsa(base.with_gdd(0.13), layout604, grid256, crystal, model, warn=False))
    assert p1 < p0 - 1e-3


def test_ideal_target_vs_layout(dk0, layout604, grid256, crystal, model):
    target = poling.NonlinearityTarget.gaussian(30.0, dk0, 1 / 6.04)
    pump = jsa.PumpEnvelope.gaussian(0.308)
    ideal = jsa.build_jsa(pump, target, grid256, crystal, model, warn=False)
    real = jsa.build_jsa(pump, layout604, grid256, crystal, model, warn=False)
    assert jsa.purity(ideal) > 0.9999
    assert abs(jsa.purity(ideal) - jsa.purity(real)) < 1e-4


def test_pump_fwhm_conversions():
    g = jsa.PumpEnvelope.gaussian(0.321)
    assert g.fwhm_nm == pytest.approx(0.321 * 2 * math.sqrt(2 * math.log(2)))
    s = jsa.PumpEnvelope.sech(0.2)
    # sech^2 intensity half maximum at x = acosh(sqrt 2)
    assert s.fwhm_nm == pytest.approx(2 * 0.2 * math.acosh(math.sqrt(2)))


def test_pump_intensity_sigma():
    # the intensity |alpha|^2 has rms width sigma in angular frequency
    p = jsa.PumpEnvelope.gaussian(0.3)
    w0 = 2 * math.pi * 299792458.0 / 775e-9
    sig = jsa.nm_to_angular_width(0.3, 775.0)
    det = np.linspace(-10 * sig, 10 * sig, 20001)
    inten = np.abs(p.amplitude(w0 + det)) ** 2
    rms = math.sqrt(np.sum(inten * det**2) / np.sum(inten))
    assert rms == pytest.approx(sig, rel=1e-6)


def test_pump_validation():
    with pytest.raises(ConfigError):
        jsa.PumpEnvelope("lorentz")
    with pytest.raises(ConfigError):
        jsa.PumpEnvelope.gaussian(-1.0)


def test_grid_validation():
    with pytest.raises(ConfigError):
        jsa.FrequencyGrid(np.linspace(1549, 1551, 10), np.linspace(1549, 1551, 100), 775.0)
    with pytest.raises(ConfigError):
        jsa.FrequencyGrid(np.geomspace(1549, 1551, 100), np.linspace(1549, 1551, 100), 775.0)


def test_non_finite_and_zero(grid256):
    f = np.zeros(grid256.shape)
    with pytest.raises(NumericError):
        jsa.JointSpectrum.from_density(f, grid256)
    f[0, 0] = np.nan
    with pytest.raises(NumericError):
        jsa.JointSpectrum.from_density(f, grid256)


def test_negative_intensity_rejected(grid256):
    with pytest.raises(ConfigError):
        jsa.sqrt_jsi(-np.ones(grid256.shape), grid256)


def test_matrix_csv_roundtrip_complex(tmp_path, working_jsa):
    p = tmp_path / "jsa.csv"
    jsa.save_matrix_csv(p, working_jsa.amplitude, working_jsa.grid)
    p.write_text("# config_hash=0123\n" + p.read_text())
    mat, grid = jsa.load_matrix_csv(p)
    assert grid.same_as(working_jsa.grid)
    np.testing.assert_allclose(mat, working_jsa.amplitude, rtol=1e-14, atol=1e-300)


def test_matrix_csv_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,1,2\n1,a,b\n")
    with pytest.raises(ConfigError):
        jsa.load_matrix_csv(p)


def test_from_modes_inverts_modes(working_jsa):
    back = jsa.JointSpectrum.from_modes(working_jsa.modes(), working_jsa.grid)
    np.testing.assert_allclose(back.amplitude, working_jsa.amplitude, rtol=1e-12, atol=1e-18)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(-0.9, 0.9))
def test_purity_bounds_and_swap(a, b, r):
    grid = jsa.FrequencyGrid.symmetric(96, 6.0)
    c = r * math.sqrt(a * b)
    js = jsa.JointSpectrum.from_density(bivariate(grid, a, b, c), grid)
    p = jsa.purity(js)
    assert 0.0 < p <= 1.0 + 1e-12
    assert jsa.purity(js.transposed()) == pytest.approx(p, abs=1e-12)
