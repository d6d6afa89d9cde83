"""Trajectory ensembles: engines, readouts, fits, and sweeps.

The exact engine is the oracle for the grid engine (both see identical
noise realizations, so any gap is pure binning error). The closed-form
telegraph solution and the analytic dephasing profile benchmark the
ensembles themselves.
"""

import numpy as np
import pytest

from dephasim.exact_tlf import (BeatingSpec, CoupledTlf,
                                beating_spec_from_model,
                                exact_qubit_coherence)
from dephasim.keldysh import (FilterKind, dephasing_profile,
                              predicted_coherence, sudden_flip_rate)
from dephasim.noise import NoiseModel, TlfSpec, build_gaussian_bath, composite_trace
from dephasim.qubit import eigensolve, heavy_fluxonium
from dephasim.series import CoherenceSeries, Protocol
from dephasim.sse import (FitError, fit_exponential_oscillation,
                          prediction_guess, propagate_trajectory, run_ensemble,
                          subspace_convergence, sweep_control)

TWO_PI = 2.0 * np.pi


def small_model(master_seed=303):
    tlfs = (TlfSpec.from_total_rate(3.0e-4, 0.65, 1.5e-3),
            TlfSpec.from_total_rate(2.0e-4, 0.4, 4.0e-4))
    bath = build_gaussian_bath(3, 1.0e-4, (2e-4, 5e-3), seed=17)
    return NoiseModel(strong_tlfs=tlfs, bath=bath, master_seed=master_seed)


def empty_model(master_seed=7):
    return NoiseModel(strong_tlfs=(), bath=(), master_seed=master_seed)


def synthetic_series(times, amplitude, gamma, omega, phase):
    rho = amplitude * np.exp(-gamma * times - 1j * (omega * times + phase))
    zeros = np.zeros_like(times)
    return CoherenceSeries(times=times, rho_eg=rho, stderr_re=zeros,
                           stderr_im=zeros, ensemble_size=0, master_seed=0,
                           protocol=Protocol.ramsey(), metadata={})


def test_zero_noise_ramsey_is_pure_rotation():
    spec = heavy_fluxonium()
    lam = 2.0e-4
    times = np.arange(0.0, 201.0, 20.0)
    series = run_ensemble(spec, lam, empty_model(), Protocol.ramsey(), times,
                          1, engine="grid")
    omega = eigensolve(spec, lam).splitting
    expected = 0.5 * np.exp(-1j * omega * times)
    assert series.rho_eg[0] == 0.5
    assert np.allclose(series.rho_eg, expected, atol=1e-10)
    assert np.all(series.stderr_re == 0.0)
    assert np.all(series.stderr_im == 0.0)
    fit = fit_exponential_oscillation(series, (0.0, 200.0),
                                      initial_guess=(0.5, 0.0, omega, 0.0))
    assert abs(fit.gamma2) <= 1e-12
    assert fit.omega_fit == pytest.approx(omega, rel=1e-9)


@pytest.mark.parametrize("engine", ["grid", "exact"])
def test_zero_noise_echo_refocuses(engine):
    spec = heavy_fluxonium()
    times = np.array([0.0, 40.0, 100.0, 160.0, 200.0])
    series = run_ensemble(spec, 3.0e-4, empty_model(), Protocol.echo(), times,
                          1, engine=engine)
    # the second half exactly unwinds the first, leaving the bare 1/2
    assert np.allclose(series.rho_eg, 0.5, atol=1e-10)


def test_single_trajectory_matches_reference_propagation():
    spec = heavy_fluxonium()
    model = small_model()
    lam = 1.5e-4
    times = np.arange(0.0, 4001.0, 500.0)
    for protocol in (Protocol.ramsey(), Protocol.echo()):
        series = run_ensemble(spec, lam, model, protocol, times, 1,
                              engine="exact", stream_index=4)
        trace = composite_trace(model, float(times[-1]), 0, 4)
        direct = propagate_trajectory(spec, lam, trace, protocol, times)
        assert np.array_equal(series.rho_eg, direct)


@pytest.mark.parametrize("protocol", [Protocol.ramsey(), Protocol.echo()])
def test_grid_engine_matches_exact_engine(protocol):
    spec = heavy_fluxonium()
    model = small_model()
    lam = 2.0e-4
    # echo pulses land at half the readout time, so keep both on the grid
    step = 1000.0 if protocol.is_echo else 500.0
    times = np.arange(0.0, 8.0 * step + 1.0, step)
    exact = run_ensemble(spec, lam, model, protocol, times, 64,
                         engine="exact")
    fine = run_ensemble(spec, lam, model, protocol, times, 64,
                        engine="grid", dt=1.0)
    coarse = run_ensemble(spec, lam, model, protocol, times, 64,
                          engine="grid", dt=4.0)
    assert np.abs(fine.rho_eg - exact.rho_eg).max() < 6e-5
    assert np.abs(coarse.rho_eg - exact.rho_eg).max() < 3e-4


def test_initial_point_and_bounds():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.arange(0.0, 2001.0, 250.0)
    series = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 256)
    assert series.rho_eg[0] == 0.5
    magnitude = np.abs(series.rho_eg)
    band = 3.0 * np.hypot(series.stderr_re, series.stderr_im)
    assert np.all(magnitude <= 0.5 + band + 1e-12)
    assert np.all(np.isfinite(series.stderr_re))
    assert series.ensemble_size == 256


def test_seed_reproducibility_and_stream_independence():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.arange(0.0, 1001.0, 200.0)
    first = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 32,
                         stream_index=2)
    second = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 32,
                          stream_index=2)
    other = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 32,
                         stream_index=3)
    assert np.array_equal(first.rho_eg, second.rho_eg)
    assert not np.array_equal(first.rho_eg, other.rho_eg)


def test_thread_count_does_not_change_the_reduction():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.arange(0.0, 1001.0, 250.0)
    serial = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 600,
                          threads=1)
    threaded = run_ensemble(spec, 1e-4, model, Protocol.ramsey(), times, 600,
                            threads=2)
    assert np.array_equal(serial.rho_eg, threaded.rho_eg)
    assert np.array_equal(serial.stderr_re, threaded.stderr_re)


def test_balanced_bath_is_symmetric_under_offset_sign():
    spec = heavy_fluxonium()
    bath = build_gaussian_bath(31, TWO_PI * 2e-5,
                               (TWO_PI * 1e-5, TWO_PI * 1e-3), seed=88)
    model = NoiseModel(strong_tlfs=(), bath=bath, master_seed=606)
    lam = TWO_PI * 6e-5
    times = np.arange(0.0, 20001.0, 500.0)
    plus = run_ensemble(spec, lam, model, Protocol.ramsey(), times, 512,
                        dt=2.0, stream_index=0)
    minus = run_ensemble(spec, -lam, model, Protocol.ramsey(), times, 512,
                         dt=2.0, stream_index=1)
    gap = np.abs(np.abs(plus.rho_eg) - np.abs(minus.rho_eg))
    band = 3.0 * np.hypot(np.hypot(plus.stderr_re, plus.stderr_im),
                          np.hypot(minus.stderr_re, minus.stderr_im))
    assert np.all(gap[1:] <= band[1:] + 1e-12)


def test_beating_regime_matches_closed_form():
    # strongly split slow fluctuator: the ensemble magnitude must follow
    # the exact two-branch solution, not a single exponential
    spec = heavy_fluxonium()
    tlf = TlfSpec.from_total_rate(TWO_PI * 9e-5, 0.6, 2.0e-5)
    model = NoiseModel(strong_tlfs=(tlf,), bath=(), master_seed=99)
    lam = 3.0e-3
    times = np.arange(0.0, 20001.0, 250.0)
    series = run_ensemble(spec, lam, model, Protocol.ramsey(), times, 1024,
                          dt=1.0)
    # map the telegraph onto the two exact eigensplittings; the secant
    # keeps the curvature of the dispersion that a tangent mapping drops
    upper = eigensolve(spec, lam, tlf.value_plus).splitting
    lower = eigensolve(spec, lam, tlf.value_minus).splitting
    coupled = CoupledTlf.from_total_rate(0.5 * (upper - lower), tlf.p_minus,
                                         tlf.kappa)
    reference = exact_qubit_coherence(
        BeatingSpec(0.5 * (upper + lower), (coupled,)), times)
    gap = np.abs(np.abs(series.rho_eg) - np.abs(reference))
    se = np.hypot(series.stderr_re, series.stderr_im)
    assert gap[1:].max() <= (5.0 * se[1:] + 1e-3).max()
    assert np.mean(gap[1:]) <= 1.5 * np.mean(se[1:]) + 2e-4
    # the magnitude really beats: it recovers after its first minimum
    magnitude = np.abs(series.rho_eg)
    first_min = int(np.argmin(magnitude[: magnitude.size // 2]))
    assert magnitude[first_min] < 0.45
    assert magnitude[first_min:].max() > magnitude[first_min] + 0.02


def test_fit_recovers_synthetic_parameters():
    times = np.linspace(0.0, 400.0, 161)
    series = synthetic_series(times, 0.42, 3.1e-3, 0.0815, 0.4)
    fit = fit_exponential_oscillation(series, (0.0, 400.0))
    assert fit.amplitude == pytest.approx(0.42, rel=1e-6)
    assert fit.gamma2 == pytest.approx(3.1e-3, rel=1e-6)
    assert fit.omega_fit == pytest.approx(0.0815, rel=1e-6)
    assert fit.phase == pytest.approx(0.4, rel=1e-6)
    assert fit.converged and not fit.gamma_clamped
    assert fit.residual < 1e-9


def test_fit_validation_and_failure_paths():
    times = np.linspace(0.0, 400.0, 161)
    series = synthetic_series(times, 0.5, 2e-3, 0.08, 0.0)
    with pytest.raises(ValueError):
        fit_exponential_oscillation(series, (300.0, 100.0))
    with pytest.raises(ValueError):
        fit_exponential_oscillation(series, (0.0, 10.0))
    with pytest.raises(FitError) as info:
        fit_exponential_oscillation(series, (0.0, 400.0),
                                    initial_guess=(0.1, 5e-2, 0.3, 1.0),
                                    max_nfev=1)
    assert isinstance(info.value.result.gamma2, float)


def test_fit_normalizes_parameter_signs():
    times = np.linspace(0.0, 400.0, 161)
    series = synthetic_series(times, 0.4, 2e-3, 0.08, 0.3)
    fit = fit_exponential_oscillation(series, (0.0, 400.0),
                                      initial_guess=(-0.4, 2e-3, -0.08, 0.0))
    assert fit.amplitude == pytest.approx(0.4, rel=1e-6)
    assert fit.omega_fit == pytest.approx(0.08, rel=1e-6)
    assert -np.pi < fit.phase <= np.pi


def test_ensemble_fit_tracks_analytic_prediction():
    spec = heavy_fluxonium()
    bath = build_gaussian_bath(21, TWO_PI * 5e-5,
                               (TWO_PI * 1e-4, TWO_PI * 1e-3), seed=31)
    model = NoiseModel(strong_tlfs=(), bath=bath, master_seed=515)
    lam = TWO_PI * 1e-4
    times = np.arange(0.0, 20001.0, 100.0)
    window = (0.0, 2.0e4)
    series = run_ensemble(spec, lam, model, Protocol.ramsey(), times, 1024,
                          dt=2.0)
    guess = prediction_guess(spec, lam, model, Protocol.ramsey(), window)
    fit = fit_exponential_oscillation(series, window, initial_guess=guess)
    pred = predicted_coherence(spec, lam, model, FilterKind.RAMSEY_REAL, times)
    fit_pred = fit_exponential_oscillation(pred, window, initial_guess=guess)
    assert fit.gamma2 == pytest.approx(fit_pred.gamma2, rel=0.15)
    assert fit.omega_fit == pytest.approx(fit_pred.omega_fit, rel=1e-4)


def test_flip_loss_matches_measured_excess():
    # a fast balanced fluctuator dephases faster than the pure-dephasing
    # closed form; the excess is the sudden-flip line of the profile
    spec = heavy_fluxonium()
    tlf = TlfSpec.from_total_rate(TWO_PI * 9e-5, 0.5, TWO_PI * 1e-3)
    model = NoiseModel(strong_tlfs=(tlf,), bath=(), master_seed=2024)
    lam = TWO_PI * 5e-5
    times = np.arange(0.0, 40001.0, 400.0)
    series = run_ensemble(spec, lam, model, Protocol.ramsey(), times, 1024,
                          dt=2.0)
    pure = exact_qubit_coherence(beating_spec_from_model(spec, lam, (tlf,)),
                                 times)
    tail = slice(-8, None)
    measured = np.mean(np.log(np.abs(pure[tail]))
                       - np.log(np.abs(series.rho_eg[tail])))
    expected = sudden_flip_rate(spec, model) * float(np.mean(times[tail]))
    assert measured == pytest.approx(expected, rel=0.25)


def test_sweep_rate_minimum_moves_toward_the_mean_offset():
    spec = heavy_fluxonium()
    tlf = TlfSpec.from_total_rate(TWO_PI * 9e-5, 0.75, TWO_PI * 5e-4)
    bath = build_gaussian_bath(11, TWO_PI * 1e-5,
                               (TWO_PI * 1e-4, TWO_PI * 1e-3), seed=5)
    model = NoiseModel(strong_tlfs=(tlf,), bath=bath, master_seed=717)
    assert tlf.mean_offset < 0.0
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * TWO_PI * 3e-5
    times = np.arange(0.0, 20001.0, 200.0)
    points = sweep_control(spec, model, Protocol.ramsey(), offsets, times,
                           384, dt=2.0)
    gammas = np.array([p.fit.gamma2 for p in points])
    assert int(np.argmin(gammas)) in (0, 1)
    assert gammas[3] > 1.5 * gammas[1]
    assert [p.control_offset for p in points] == list(offsets)


def test_subspace_convergence_is_tight_for_desk_noise():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.arange(0.0, 2001.0, 500.0)
    change = subspace_convergence(spec, 2e-4, model, Protocol.ramsey(), times,
                                  8)
    assert change < 1e-6


def test_prediction_guess_shapes():
    spec = heavy_fluxonium()
    model = small_model()
    a0, g0, w0, p0 = prediction_guess(spec, 1e-4, model, Protocol.ramsey(),
                                      (0.0, 1e4))
    assert a0 == 0.5 and p0 == 0.0
    assert g0 > 0.0
    assert w0 == pytest.approx(eigensolve(spec).splitting, rel=1e-2)
    _, _, w_echo, _ = prediction_guess(spec, 1e-4, model, Protocol.echo(),
                                       (0.0, 1e4))
    assert w_echo == 0.0


def test_input_validation():
    spec = heavy_fluxonium()
    model = small_model()
    protocol = Protocol.ramsey()
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, protocol, [0.0, 10.0, 5.0], 4)
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, protocol, [0.0, 10.0], 0)
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, protocol, [0.0, 10.0], 4,
                     engine="symplectic")
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, protocol, [0.0, 3.0], 4, dt=2.0)
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, Protocol.echo(), [0.0, 5.0], 4, dt=1.0)
    with pytest.raises(ValueError):
        run_ensemble(spec, 0.0, model, protocol, [0.0, 10.0], 4,
                     subspace_dim=1)
    trace = composite_trace(model, 10.0, 0, 0)
    with pytest.raises(ValueError):
        propagate_trajectory(spec, 0.0, trace, protocol, [0.0, 20.0])
