"""Tests for the driven-qubit solver and the protected-point search."""

import math
from dataclasses import replace

import numpy as np
import pytest

from dephasim.floquet import (
    DriveSpec,
    FloquetResonanceError,
    FloquetSolution,
    find_triple_sweet_spot,
    floquet_derivatives,
    floquet_solve,
    fourier_coefficients,
    simulate_floquet_ramsey,
)
from dephasim.noise import NoiseModel, TlfSpec
from dephasim.qubit import dispersion_derivatives, eigensolve, heavy_fluxonium
from dephasim.series import Protocol
from dephasim.sse import run_ensemble

DRIVE = DriveSpec(amplitude=0.012, omega_d=0.06, alpha=1.0, harmonic=1)


@pytest.fixture(scope="module")
def spec():
    return heavy_fluxonium()


@pytest.fixture(scope="module")
def driven_solution(spec):
    return floquet_solve(spec, 0.0, DRIVE)


def test_drive_spec_validation():
    with pytest.raises(ValueError):
        DriveSpec(amplitude=float("nan"), omega_d=0.05)
    with pytest.raises(ValueError):
        DriveSpec(amplitude=0.01, omega_d=0.0)
    with pytest.raises(ValueError):
        DriveSpec(amplitude=0.01, omega_d=-0.05)
    with pytest.raises(ValueError):
        DriveSpec(amplitude=0.01, omega_d=0.05, alpha=float("inf"))
    with pytest.raises(ValueError):
        DriveSpec(amplitude=0.01, omega_d=0.05, harmonic=0)
    with pytest.raises(ValueError):
        DriveSpec(amplitude=0.01, omega_d=0.05, harmonic=-2)
    drive = DriveSpec(amplitude=0.01, omega_d=0.05, alpha=0.7, harmonic=2)
    assert drive.period == pytest.approx(2.0 * math.pi / 0.05, rel=1e-15)
    other = drive.with_amplitude(0.02)
    assert other.amplitude == 0.02
    assert other.omega_d == drive.omega_d
    assert other.alpha == drive.alpha
    assert other.harmonic == drive.harmonic


def test_waveform_flips_sign_under_half_period_shift():
    rng = np.random.default_rng(11)
    for _ in range(5):
        drive = DriveSpec(
            amplitude=float(rng.uniform(1e-3, 0.05)),
            omega_d=float(rng.uniform(0.02, 0.2)),
            alpha=float(rng.uniform(0.2, 2.0)),
            harmonic=int(rng.integers(1, 4)),
        )
        t = rng.uniform(0.0, 3.0 * drive.period, size=64)
        shifted = drive.waveform(t + 0.5 * drive.period)
        np.testing.assert_allclose(shifted, -drive.waveform(t),
                                   atol=1e-12 * abs(drive.amplitude))
    drive = DriveSpec(amplitude=0.02, omega_d=0.05, alpha=0.6, harmonic=1)
    assert drive.waveform(0.0) == pytest.approx(0.02 * 1.6, rel=1e-14)


def test_zero_amplitude_reproduces_the_bare_spectrum(spec):
    drive = DriveSpec(amplitude=0.0, omega_d=0.05)
    sol = floquet_solve(spec, 0.0, drive)
    bare = eigensolve(spec, 0.0, 0.0, n_levels=6)
    np.testing.assert_allclose(sol.quasi_energies, bare.energies, atol=1e-12)
    np.testing.assert_allclose(sol.states0, np.eye(6), atol=1e-12)
    assert sol.splitting == pytest.approx(bare.splitting, abs=1e-12)
    assert sol.monodromy_residual <= 1e-9
    assert sol.min_branch_overlap >= 1.0 - 1e-9
    mid = sol.stored_harmonics
    scale = np.abs(sol.x_elements).max()
    np.testing.assert_allclose(sol.fourier_coeffs[:, :, mid],
                               sol.x_elements, atol=1e-10 * scale)
    rest = np.delete(sol.fourier_coeffs, mid, axis=2)
    assert np.abs(rest).max() <= 1e-10 * scale


def test_quasi_energies_converge_under_sample_doubling(spec, driven_solution):
    finer = floquet_solve(spec, 0.0, DRIVE, 512)
    scale = np.abs(driven_solution.quasi_energies).max()
    gap = np.abs(finer.quasi_energies - driven_solution.quasi_energies).max()
    assert gap <= 1e-9 * scale
    rel = abs(finer.splitting - driven_solution.splitting)
    assert rel <= 1e-9 * abs(driven_solution.splitting)


def test_monodromy_diagnostics_are_tight(driven_solution):
    assert driven_solution.monodromy_residual <= 1e-9
    assert driven_solution.min_branch_overlap >= 0.9
    np.testing.assert_allclose(driven_solution.sampled_states[0],
                               driven_solution.states0, atol=1e-12)


def test_harmonic_tensor_is_hermitian(driven_solution):
    c01 = fourier_coefficients(driven_solution, 0, 1, 6)
    c10 = fourier_coefficients(driven_solution, 1, 0, 6)
    scale = np.abs(c01).max()
    np.testing.assert_allclose(c01, np.conj(c10[::-1]), atol=1e-10 * scale)
    c00 = fourier_coefficients(driven_solution, 0, 0, 6)
    np.testing.assert_allclose(c00, np.conj(c00[::-1]),
                               atol=1e-10 * max(np.abs(c00).max(), 1e-12))


def test_splitting_is_even_in_the_static_offset(spec):
    plus = floquet_solve(spec, 2e-3, DRIVE).splitting
    minus = floquet_solve(spec, -2e-3, DRIVE).splitting
    assert plus == pytest.approx(minus, abs=1e-12)


def test_diagonal_dc_components_vanish_at_the_sweet_spot(spec):
    """Half-period antisymmetric drives keep the first derivative zero."""

    rng = np.random.default_rng(23)
    bare = eigensolve(spec, 0.0, 0.0, n_levels=6)
    delta = bare.splitting
    x01 = abs(bare.x_elements[0, 1])
    threshold = 1e-8 * spec.e_l
    for _ in range(5):
        alpha = float(rng.uniform(0.3, 1.8))
        harmonic = int(rng.integers(1, 4))
        while True:
            omega_d = float(rng.uniform(0.4, 1.6) * delta)
            orders = np.arange(1, 61)
            if np.abs(delta - orders * omega_d).min() > 4e-3:
                break
        amplitude = float(rng.uniform(0.3, 1.0)) * 0.1 * delta / (
            (1.0 + alpha) * x01)
        drive = DriveSpec(amplitude=amplitude, omega_d=omega_d,
                          alpha=alpha, harmonic=harmonic)
        sol = floquet_solve(spec, 0.0, drive)
        dc0 = fourier_coefficients(sol, 0, 0, 1)[1]
        dc1 = fourier_coefficients(sol, 1, 1, 1)[1]
        assert abs(dc0) <= threshold
        assert abs(dc1) <= threshold
        assert abs(dc1 - dc0) <= threshold


def test_zero_amplitude_derivatives_match_the_static_dispersion(spec):
    der = floquet_derivatives(spec, DriveSpec(amplitude=0.0, omega_d=0.05))
    bare = dispersion_derivatives(spec, 0.0, n_levels=6)
    assert abs(der.d1) <= 1e-10
    assert der.d2 == pytest.approx(bare.d2, rel=1e-6)
    assert abs(der.de_da) <= 1e-8


def test_offset_curvature_agrees_with_finite_differences(spec):
    der = floquet_derivatives(spec, DRIVE, cross_check=True)
    assert der.d2_fd is not None
    assert der.d2 == pytest.approx(der.d2_fd, rel=1e-3)
    assert der.d2_shell <= 1e-2 * abs(der.d2)
    assert abs(der.d1) <= 1e-8


def test_resonant_drive_raises_an_informative_error(spec):
    bare = eigensolve(spec, 0.0, 0.0, n_levels=6)
    drive = DriveSpec(amplitude=2e-7, omega_d=bare.splitting)
    with pytest.raises(FloquetResonanceError, match="resonance guard"):
        floquet_derivatives(spec, drive)


def test_fourier_coefficient_validation(spec):
    sol = floquet_solve(spec, 0.0, DriveSpec(amplitude=0.0, omega_d=0.05))
    with pytest.raises(ValueError):
        fourier_coefficients(sol, -1, 0, 4)
    with pytest.raises(ValueError):
        fourier_coefficients(sol, 0, 6, 4)
    with pytest.raises(ValueError):
        fourier_coefficients(sol, 0, 1, 0)
    with pytest.raises(ValueError):
        fourier_coefficients(sol, 0, 1, sol.m_samples // 4 + 1)
    fourier_coefficients(sol, 0, 1, sol.m_samples // 4)


def test_fourier_truncation_guard_flags_aliased_content():
    """Content at the requested edge harmonic must be rejected."""

    m = 256
    phases = 0.15 * np.cos(2.0 * np.pi * 60.0 * np.arange(m) / m)
    cos, sin = np.cos(phases), np.sin(phases)
    sampled = np.zeros((m, 2, 2))
    sampled[:, 0, 0] = cos
    sampled[:, 1, 0] = sin
    sampled[:, 0, 1] = -sin
    sampled[:, 1, 1] = cos
    fake = FloquetSolution(
        drive=DriveSpec(amplitude=0.1, omega_d=1.0),
        control_offset=0.0, m_samples=m,
        energies=np.zeros(2), x_elements=np.array([[0.0, 1.0], [1.0, 0.0]]),
        quasi_energies=np.zeros(2), states0=np.eye(2),
        sampled_states=sampled, fourier_coeffs=np.zeros((2, 2, 17), complex),
        stored_harmonics=8, monodromy_residual=0.0, min_branch_overlap=1.0)
    with pytest.raises(ValueError, match="raise m_samples"):
        fourier_coefficients(fake, 0, 1, 8)
    smooth = 0.15 * np.cos(2.0 * np.pi * 8.0 * np.arange(m) / m)
    cos, sin = np.cos(smooth), np.sin(smooth)
    sampled = np.zeros((m, 2, 2))
    sampled[:, 0, 0] = cos
    sampled[:, 1, 0] = sin
    sampled[:, 0, 1] = -sin
    sampled[:, 1, 1] = cos
    fake = replace(fake, sampled_states=sampled)
    clean = fourier_coefficients(fake, 0, 1, 32)
    assert abs(clean[32]) == pytest.approx(1.0, abs=0.05)


def test_search_finds_the_triply_protected_point(spec, tmp_path):
    csv_path = tmp_path / "scan.csv"
    result = find_triple_sweet_spot(
        spec, alpha=1.0, harmonic=1, a_range=(0.012, 0.018),
        omega_range=(0.03, 0.045), grid=(7, 7), csv_path=str(csv_path))
    assert result.found
    assert result.amplitude == pytest.approx(0.0148366236, abs=2e-5)
    assert result.omega_d == pytest.approx(0.0367952527, abs=2e-5)
    assert result.splitting == pytest.approx(0.0843567170, abs=1e-6)
    assert abs(result.d2) <= 1e-3
    assert abs(result.de_da) <= 1e-5
    assert result.drive is not None
    assert result.drive.amplitude == result.amplitude
    assert result.drive.omega_d == result.omega_d
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "a_rad,omega_d_rad_per_ns,abs_d2,abs_de_da,product"
    assert len(lines) == 1 + 7 * 7


def test_search_reports_absence_outside_the_crossing_window(spec):
    result = find_triple_sweet_spot(
        spec, alpha=1.0, harmonic=1, a_range=(1e-4, 8e-4),
        omega_range=(0.12, 0.16), grid=(4, 4))
    assert not result.found
    assert result.message
    assert result.drive is None
    assert result.grid_abs_d2.shape == (4, 4)
    assert result.grid_abs_de_da.shape == (4, 4)


def test_search_validates_windows(spec):
    with pytest.raises(ValueError):
        find_triple_sweet_spot(spec, 1.0, 1, a_range=(0.02, 0.01))
    with pytest.raises(ValueError):
        find_triple_sweet_spot(spec, 1.0, 1, omega_range=(-0.1, 0.05))


def test_noiseless_driven_ramsey_rotates_at_the_quasi_splitting(
        spec, driven_solution):
    empty = NoiseModel(strong_tlfs=(), bath=(), master_seed=1)
    times = DRIVE.period * np.arange(0, 25, 4)
    result = simulate_floquet_ramsey(spec, empty, DRIVE, times, 3)
    assert result.quasi_splitting == pytest.approx(driven_solution.splitting,
                                                   abs=1e-12)
    target = 0.5 * np.exp(-1j * driven_solution.splitting * times)
    np.testing.assert_allclose(result.coherence.rho_eg, target, atol=1e-3)
    np.testing.assert_allclose(np.abs(result.coherence.rho_eg), 0.5,
                               atol=1e-9)
    np.testing.assert_allclose(result.pop_ground, 0.5, atol=1e-5)
    np.testing.assert_allclose(result.pop_excited, 0.5, atol=1e-5)
    assert result.coherence.stderr_re.max() <= 1e-6
    assert result.coherence.ensemble_size == 3
    assert result.coherence.metadata["engine"] == "floquet_grid"


def test_driven_ramsey_is_reproducible_and_stream_sensitive(spec):
    tlf = TlfSpec.from_total_rate(2 * np.pi * 9e-5, 0.6, 2 * np.pi * 5e-4)
    model = NoiseModel(strong_tlfs=(tlf,), bath=(), master_seed=7)
    times = DRIVE.period * np.arange(0, 9, 2)
    first = simulate_floquet_ramsey(spec, model, DRIVE, times, 8,
                                    amp_jitter=0.01)
    again = simulate_floquet_ramsey(spec, model, DRIVE, times, 8,
                                    amp_jitter=0.01)
    np.testing.assert_array_equal(first.coherence.rho_eg,
                                  again.coherence.rho_eg)
    np.testing.assert_array_equal(first.pop_ground, again.pop_ground)
    threaded = simulate_floquet_ramsey(spec, model, DRIVE, times, 8,
                                       amp_jitter=0.01, threads=2)
    np.testing.assert_array_equal(first.coherence.rho_eg,
                                  threaded.coherence.rho_eg)
    other_stream = simulate_floquet_ramsey(spec, model, DRIVE, times, 8,
                                           amp_jitter=0.01, stream_index=5)
    assert not np.array_equal(first.coherence.rho_eg,
                              other_stream.coherence.rho_eg)
    no_jitter = simulate_floquet_ramsey(spec, model, DRIVE, times, 8)
    assert not np.array_equal(first.coherence.rho_eg,
                              no_jitter.coherence.rho_eg)


def test_driven_ramsey_validation(spec):
    empty = NoiseModel(strong_tlfs=(), bath=(), master_seed=1)
    period = DRIVE.period
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE, period * np.arange(3),
                                4, amp_jitter=-0.1)
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE, period * np.arange(3), 0)
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE,
                                period * np.array([0.0, 1.5]), 4)
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE,
                                period * np.array([2.0, 1.0]), 4)
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE,
                                np.array([-period, 0.0]), 4)
    with pytest.raises(ValueError):
        simulate_floquet_ramsey(spec, empty, DRIVE, np.array([0.0]), 4)


def test_protected_drive_outlives_the_static_sweet_spot(spec):
    """A slow strong fluctuator barely dephases the driven qubit."""

    tlf = TlfSpec.from_total_rate(2 * np.pi * 9e-5, 0.7, 2 * np.pi * 1e-6)
    model = NoiseModel(strong_tlfs=(tlf,), bath=(), master_seed=42)
    drive = DriveSpec(amplitude=0.0148366, omega_d=0.0367953,
                      alpha=1.0, harmonic=1)
    times = drive.period * np.arange(0, 177, 16)
    driven = simulate_floquet_ramsey(spec, model, drive, times, 128)
    static = run_ensemble(spec, 0.0, model, Protocol.ramsey(),
                          np.arange(0.0, 30001.0, 3000.0), 128,
                          engine="exact")
    driven_mag = abs(driven.coherence.rho_eg[-1])
    static_mag = abs(static.rho_eg[-1])
    noise = (np.hypot(driven.coherence.stderr_re[-1],
                      driven.coherence.stderr_im[-1])
             + np.hypot(static.stderr_re[-1], static.stderr_im[-1]))
    assert driven_mag > static_mag + 4.0 * noise
    assert driven_mag > 0.49
