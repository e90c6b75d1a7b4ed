from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasesim.lineshape import (
    GridTooCoarseError,
    LineshapeScan,
    MultipleCrossingsWarning,
    RangeTooNarrowError,
    fit_voigt,
    fwhm,
    gaussian,
    lorentzian,
    voigt_profile,
    voigt_width,
)


def test_fwhm_of_sampled_lorentzian():
    x = np.arange(-50, 51) * 0.1
    assert fwhm(x, lorentzian(x, 1.0)) == pytest.approx(1.0, rel=0.005)


def test_fwhm_of_sampled_gaussian():
    x = np.arange(-60, 61) * 0.1
    assert fwhm(x, gaussian(x, 2.0)) == pytest.approx(2.0, rel=0.005)


def test_half_scan_doubles_the_right_crossing():
    x = np.linspace(0.0, 3.0, 31)
    scan = LineshapeScan(x, lorentzian(x, 1.4), half=True)
    assert scan.fwhm == pytest.approx(1.4, rel=0.005)
    full = scan.mirrored()
    assert len(full) == 2 * len(scan) - 1 and not full.half
    assert full.fwhm == pytest.approx(scan.fwhm, rel=1e-12)


def test_fwhm_range_errors_and_noise_flag():
    x = np.linspace(-0.3, 0.3, 11)
    with pytest.raises(RangeTooNarrowError):
        fwhm(x, lorentzian(x, 1.0))
    with pytest.raises(RangeTooNarrowError):
        fwhm([0.0], [1.0])
    x = np.linspace(-3, 3, 61)
    y = lorentzian(x, 1.0)
    y[5] = 0.9 * y.max()
    with pytest.warns(MultipleCrossingsWarning):
        w = fwhm(x, y)
    assert w > 1.0


@settings(max_examples=40, deadline=None)
@given(scale=st.floats(1e-6, 1e6), width=st.floats(0.3, 3.0))
def test_fwhm_is_scale_invariant(scale, width):
    x = np.linspace(-10, 10, 201)
    y = gaussian(x, width)
    assert fwhm(x, scale * y) == pytest.approx(fwhm(x, y), rel=1e-9)


def test_voigt_width_values():
    assert voigt_width(1.0, 0.0) == pytest.approx(1.0, abs=1e-4)
    assert voigt_width(1.0, 0.7248) == pytest.approx(1.3959, abs=1e-4)
    assert voigt_width(1.0, 100.0) == pytest.approx(100.0, rel=0.01)
    assert voigt_width(2.0, 1.0) == pytest.approx(2.0 * voigt_width(1.0, 0.5))
    with pytest.raises(ValueError):
        voigt_width(0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(g=st.floats(0.01, 100), d=st.floats(0.0, 100), dg=st.floats(0.01, 10),
       dd=st.floats(0.01, 10))
def test_voigt_width_is_monotone(g, d, dg, dd):
    w = voigt_width(g, d)
    assert voigt_width(g + dg, d) > w
    assert voigt_width(g, d + dd) > w


def test_voigt_profile_limits():
    x = np.linspace(-4, 4, 81)
    assert np.abs(voigt_profile(1.0, 1e-3, x) - lorentzian(x, 1.0)).max() < 1e-3
    assert np.abs(voigt_profile(1e-3, 1.0, x) - gaussian(x, 1.0)).max() < 1e-3
    wide = np.linspace(-400, 400, 80001)
    assert np.trapezoid(voigt_profile(1.0, 1.0, wide), wide) == pytest.approx(1.0, abs=2e-3)
    assert voigt_profile(1.0, 2.0, 0.0, peak_normalized=True) == pytest.approx(1.0)


@pytest.mark.parametrize("dw", [0.1, 0.3, 1.0, 3.0, 10.0])
def test_voigt_profile_width_matches_width_law(dw):
    w = voigt_width(1.0, dw)
    x = np.linspace(-w, w, 801)
    assert fwhm(x, voigt_profile(1.0, dw, x)) == pytest.approx(w, rel=0.02)


def test_voigt_profile_rejects_coarse_quadrature():
    with pytest.raises(GridTooCoarseError):
        voigt_profile(1.0, 1.0, [0.0], step=0.2)
    with pytest.raises(ValueError):
        voigt_profile(0.0, 1.0, [0.0])


def test_fit_recovers_synthetic_voigt():
    x = np.linspace(0.0, 4.0, 41)
    y = 0.03 * voigt_profile(1.0, 1.2, x, peak_normalized=True)
    fit = fit_voigt(LineshapeScan(x, y, half=True), 1.0)
    assert fit.converged
    assert fit.fwhm_gauss == pytest.approx(1.2, rel=0.01)
    assert fit.gamma_voigt == pytest.approx(voigt_width(1.0, 1.2), rel=0.01)
    assert fit.amplitude == pytest.approx(0.03, rel=0.01)
    free = fit_voigt(LineshapeScan(x, y, half=True), 0.7, free_lorentz=True)
    assert free.fwhm_lorentz == pytest.approx(1.0, rel=0.01)
    assert free.fwhm_gauss == pytest.approx(1.2, rel=0.01)


def test_fit_of_pure_lorentzian_has_no_gaussian_part():
    x = np.linspace(0.0, 4.0, 41)
    fit = fit_voigt(LineshapeScan(x, lorentzian(x, 1.0), half=True), 1.0)
    assert fit.fwhm_gauss < 0.05
    assert fit.gamma_voigt == pytest.approx(1.0, rel=0.01)


def test_fit_needs_eight_points():
    x = np.linspace(0.0, 3.0, 7)
    with pytest.raises(ValueError):
        fit_voigt(LineshapeScan(x, lorentzian(x, 1.0), half=True))


def test_scan_validation_and_csv_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        LineshapeScan([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        LineshapeScan([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        LineshapeScan([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        LineshapeScan([-1.0, 1.0], [1.0, 1.0], half=True)
    x = np.linspace(0.0, 3.0, 13)
    scan = LineshapeScan(x, lorentzian(x, 1.0), np.full(13, 1e-3), half=True)
    back = LineshapeScan.from_csv(scan.to_csv(tmp_path / "s.csv", ["run: test"]))
    assert back.half and back.metadata["header"] == ["run: test"]
    assert np.array_equal(back.yields, scan.yields)
    assert np.array_equal(back.stderrs, scan.stderrs)
    assert math.isclose(back.fwhm, scan.fwhm)
