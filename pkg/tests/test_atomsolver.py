from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import wofz

from sasesim import _kernels
from sasesim._accel import HAS_NUMBA
from sasesim.atomsolver import (
    AtomParams,
    NumericalDiagnosticError,
    PulseEnsemble,
    detuning_scan,
    ensemble_yield,
    propagate_trajectory,
)
from sasesim.decorr import pdm_yield
from sasesim.noisegen import FrequencyGrid, PowerSpectralDensity, PsdFamily, generate_noise
from sasesim.pulse import GaussianEnvelope, fourier_limited_pulse, grid_for, make_pulse

GAUSS = PsdFamily.GAUSSIAN
LORENTZ = PsdFamily.LORENTZIAN


def _perturbative_yield(rabi, tau, gamma, det):
    # first order in Omega0^2 for Omega(t) = Omega0 exp(-(t - t0)^2 / 2 tau^2)
    return 2.0 * math.pi * rabi ** 2 * tau ** 2 * wofz(tau * det + 0.5j * tau * gamma).real


def test_oracle_values_frozen():
    # scipy wofz route cross-checked against brute-force quadrature of the
    # time-domain double integral to ~1e-13
    assert _perturbative_yield(1e-2, 20.0, 1.0, 0.0) == pytest.approx(0.014109770429538475, rel=1e-12)
    assert _perturbative_yield(1e-2, 20.0, 1.0, 1.0) == pytest.approx(0.002842179141314894, rel=1e-12)
    assert _perturbative_yield(1e-2, 20.0, 1.0, 5.0) == pytest.approx(
        0.00014041296429188703, rel=1e-12)


@pytest.mark.parametrize("det,frozen", [
    (0.0, 0.014109770429538475),
    (1.0, 0.002842179141314894),
    (5.0, 0.00014041296429188703),
])
def test_weak_fourier_limited_pulse_matches_perturbation_theory(det, frozen):
    env = GaussianEnvelope.centered(20.0)
    p = fourier_limited_pulse(grid_for(env, None, 1.0).times, env)
    traj = propagate_trajectory(p, AtomParams(1e-2, det))
    # residual is saturation, of relative order Omega0^2 tau^2
    assert traj.final_yield == pytest.approx(frozen, rel=0.01)


def test_zero_field_leaves_atom_in_ground_state():
    env = GaussianEnvelope.centered(3.0)
    p = fourier_limited_pulse(grid_for(env, None, 1.0).times, env)
    traj = propagate_trajectory(p, AtomParams(0.0, 0.5))
    assert traj.final_yield == 0.0
    assert np.all(traj.sigma11 == 1.0) and np.all(traj.sigma12 == 0.0)


def test_populations_conserved_along_trajectory():
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(GAUSS, 2.0)
    grid = grid_for(env, psd, 1.0)
    p = make_pulse(generate_noise(psd, grid, 5), env)
    traj = propagate_trajectory(p, AtomParams(1.0, 0.3))
    total = traj.sigma11 + traj.sigma22 + traj.q2
    assert np.abs(total - 1.0).max() < 1e-8
    assert np.all(np.diff(traj.q2) >= -1e-15)
    assert 0.0 < traj.final_yield <= 1.0
    assert traj.population_difference[0] == -1.0


def test_yield_symmetric_in_detuning_for_real_pulse():
    env = GaussianEnvelope.centered(3.0)
    ens = PulseEnsemble(env, None, 1.0)
    omega, omega_mid = next(ens.rabi_chunks(0.7, [0]))
    q, _ = _kernels.final_yield(omega, omega_mid, ens.dt, ens.n_steps,
                                np.array([-2.0, -0.5, 0.5, 2.0]), 1.0, 1.0)
    assert q[0, 0] == pytest.approx(q[0, 3], rel=1e-10)
    assert q[0, 1] == pytest.approx(q[0, 2], rel=1e-10)


def test_step_halving_leaves_yield_unchanged():
    env = GaussianEnvelope.centered(3.0)
    coarse = grid_for(env, None, 1.0)
    fine = FrequencyGrid(2 * coarse.n_points, coarse.delta_omega)
    q = []
    for g in (coarse, fine):
        p = fourier_limited_pulse(g.times, env)
        q.append(propagate_trajectory(p, AtomParams(0.5, 0.7)).final_yield)
    assert abs(q[0] - q[1]) < 1e-8


def test_identical_seeds_give_zero_stderr():
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(LORENTZ, 1.0)
    r = ensemble_yield(env, psd, AtomParams(0.3), 10, 0, seeds=[42] * 10)
    assert r.stderr == 0.0 and np.all(r.yields == r.yields[0])


def test_weak_field_yield_scales_quadratically():
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(GAUSS, 1.0)
    y1 = ensemble_yield(env, psd, AtomParams(1e-3), 200, 7).mean
    y2 = ensemble_yield(env, psd, AtomParams(2e-3), 200, 7).mean
    assert y2 / y1 == pytest.approx(4.0, rel=1e-4)
    assert math.log(y2 / y1) / math.log(2.0) == pytest.approx(2.0, abs=1e-4)


def test_lorentzian_noise_matches_phase_diffusion_model():
    env = GaussianEnvelope.centered(3.0)
    gamma = 3.33
    psd = PowerSpectralDensity.from_bandwidth(LORENTZ, gamma)
    params = AtomParams(1e-2, 1.0)
    r = ensemble_yield(env, psd, params, 4000, 12345)
    assert abs(r.mean - pdm_yield(env, params, gamma)) < 2.0 * r.stderr


def test_scan_reuses_pulses_across_detunings():
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(GAUSS, 1.0)
    base = AtomParams(0.2)
    scan, q = detuning_scan(env, psd, base, [0.0, 0.5, 1.0], 50, 3, return_samples=True)
    single = ensemble_yield(env, psd, base.replace(detuning=0.5), 50, 3)
    assert np.array_equal(q[:, 1], single.yields)
    assert scan.metadata["common_random_numbers"]
    with pytest.raises(ValueError):
        detuning_scan(env, psd, base, [1.0, 0.0], 5, 3)


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
def test_backends_agree():
    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(GAUSS, 2.0)
    ens = PulseEnsemble(env, psd, 1.0)
    omega, omega_mid = next(ens.rabi_chunks(0.8, ens.seeds(1, 16)))
    dets = np.array([0.0, 1.0, 3.0])
    a, da = _kernels.final_yield(omega, omega_mid, ens.dt, ens.n_steps, dets, 1.0, 1.5, "numpy")
    b, db = _kernels.final_yield(omega, omega_mid, ens.dt, ens.n_steps, dets, 1.0, 1.5, "numba")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    ta = _kernels.trajectories(omega, omega_mid, ens.dt, ens.n_steps, 0.4, 1.0, 1.0, "numpy")
    tb = _kernels.trajectories(omega, omega_mid, ens.dt, ens.n_steps, 0.4, 1.0, 1.0, "numba")
    for x, y in zip(ta, tb):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-13)


def test_missing_midpoints_fall_back_to_interpolation():
    env = GaussianEnvelope.centered(3.0)
    ens = PulseEnsemble(env, None, 1.0)
    omega, omega_mid = next(ens.rabi_chunks(0.5, [0]))
    dets = np.array([0.0, 1.0])
    exact, _ = _kernels.final_yield(omega, omega_mid, ens.dt, ens.n_steps, dets, 1.0, 1.0)
    interp, _ = _kernels.final_yield(omega, None, ens.dt, ens.n_steps, dets, 1.0, 1.0)
    # a smooth envelope sampled finely: interpolation error is O(dt^2)
    assert np.allclose(interp, exact, rtol=1e-3)
    assert not np.array_equal(interp, exact)
    with pytest.raises(ValueError):
        _kernels.final_yield(omega, omega_mid[:, :-1], ens.dt, ens.n_steps, dets, 1.0, 1.0)


@pytest.mark.unresolved_grid
def test_unresolved_grid_raises_diagnostic():
    env = GaussianEnvelope.centered(3.0)
    grid = FrequencyGrid(256, 2.0 * math.pi / (256 * 0.5))
    p = fourier_limited_pulse(grid.times, env)
    with pytest.raises(NumericalDiagnosticError):
        propagate_trajectory(p, AtomParams(50.0))


def test_atom_params_validation():
    assert AtomParams(gamma2=2.0).gamma21 == 2.0
    with pytest.raises(ValueError):
        AtomParams(gamma2=1.0, gamma21=0.5)
    with pytest.raises(ValueError):
        AtomParams(rabi_peak=-1.0)
    with pytest.raises(ValueError):
        AtomParams(gamma2=0.0)
