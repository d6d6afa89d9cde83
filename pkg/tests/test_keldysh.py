"""Filter functions, Lorentzian overlaps, and the dephasing profile.

Closed forms are checked against two independent oracles: time-domain
quadrature of the window autocorrelation against the exponential noise
correlation, and frequency-domain Gauss-Legendre quadrature of the filter
against the Lorentzian spectrum (tangent substitution). The sudden-flip
term is rebuilt here from the eigensolver output directly.
"""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from dephasim.keldysh import (
    FilterKind,
    _bath_pair_sum,
    _compressed_pair_sum,
    dephasing_profile,
    filter_function,
    lamb_shifted_frequency,
    lorentzian_overlap,
    noise_second_moment,
    phi_minimizing_offset,
    predicted_coherence,
    sudden_flip_rate,
)
from dephasim.noise import NoiseModel, TlfSpec, build_gaussian_bath
from dephasim.qubit import dispersion_derivatives, eigensolve, heavy_fluxonium

W_GE_SWEET_SPOT = 0.08722040189038971
D2_SWEET_SPOT = 279.8399204464014

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4000)


def overlap_time_domain(kind, kappa, t):
    """Window-autocorrelation quadrature of the unit-variance overlap."""

    if t == 0.0:
        return 0.0
    opts = dict(epsabs=1e-16, epsrel=1e-13, limit=300)
    if kind is FilterKind.RAMSEY_REAL:
        val, _ = quad(lambda tau: (t - tau) * np.exp(-kappa * tau), 0.0, t, **opts)
        return val
    first, _ = quad(lambda tau: (t - 3 * tau) * np.exp(-kappa * tau), 0.0, t / 2, **opts)
    second, _ = quad(lambda tau: (tau - t) * np.exp(-kappa * tau), t / 2, t, **opts)
    return first + second


def overlap_freq_domain(kind, kappa, t):
    """Filter-times-spectrum quadrature via the tangent substitution."""

    theta = _GL_NODES * (np.pi / 2)
    vals = filter_function(kind, kappa * np.tan(theta), np.full_like(theta, t))
    return float(np.sum(_GL_WEIGHTS * vals)) * (np.pi / 2) / np.pi


def small_model():
    tlfs = (TlfSpec.from_total_rate(2.0e-3, 0.7, 0.8),
            TlfSpec.from_total_rate(1.5e-3, 0.35, 0.05))
    bath = build_gaussian_bath(4, 1.0e-3, (0.01, 2.0), seed=7)
    return NoiseModel(strong_tlfs=tlfs, bath=bath, master_seed=11)


def flip_rate_oracle(spec, model):
    """Per-flip basis-rotation loss, rebuilt from the eigensolver output."""

    reference = eigensolve(spec)
    unit_angle = 2.0 * abs(reference.x_elements[0, 1]) / reference.splitting
    return sum(2.0 * m.p_plus * m.p_minus * m.kappa
               * (m.amplitude * unit_angle) ** 2
               for m in (*model.strong_tlfs, *model.bath))


def profile_oracle(spec, d2, lam, model, kind, t):
    """Brute-force term-by-term sum with quadrature overlaps."""

    grab = lambda k: overlap_time_domain(kind, k, t)
    bath, tlfs = model.bath, model.strong_tlfs
    total = d2**2 * lam**2 * sum(m.variance * grab(m.kappa) for m in bath)
    total += 0.5 * d2**2 * sum(a.variance * b.variance * grab(a.kappa + b.kappa)
                               for a in bath for b in bath)
    total += d2**2 * sum((lam - m.mean_offset) ** 2 * m.variance * grab(m.kappa)
                         for m in tlfs)
    total += d2**2 * sum(tlfs[i].variance * tlfs[j].variance
                         * grab(tlfs[i].kappa + tlfs[j].kappa)
                         for i in range(len(tlfs)) for j in range(i + 1, len(tlfs)))
    total += d2**2 * sum(g.variance * m.variance * grab(g.kappa + m.kappa)
                         for g in bath for m in tlfs)
    total += flip_rate_oracle(spec, model) * t
    return total


def test_filter_limits():
    t = 7.3
    assert filter_function(FilterKind.RAMSEY_REAL, 0.0, t) == pytest.approx(t**2 / 2)
    assert filter_function(FilterKind.ECHO, 0.0, t) == 0.0
    assert filter_function(FilterKind.RAMSEY_REAL, 1.3, 0.0) == 0.0
    with pytest.raises(ValueError):
        filter_function(FilterKind.RAMSEY_REAL, 1.0, -1.0)


def test_imaginary_filter_small_argument():
    t = 11.0
    for omega in (1e-7, 1e-5):
        want = -omega * t**3 / 6
        assert filter_function(FilterKind.RAMSEY_IMAG, omega, t) == pytest.approx(want, rel=1e-5)
    # both branches near the series switch agree with a reference series
    # carried to negligible truncation error
    for x in (0.8e-3, 1.2e-3):
        omega = x / t
        reference = -(omega * t**3 / 6) * (1 - x**2 / 20 + x**4 / 840)
        assert filter_function(FilterKind.RAMSEY_IMAG, omega, t) == pytest.approx(
            reference, rel=2e-9)
    # odd in omega
    assert filter_function(FilterKind.RAMSEY_IMAG, -0.3, t) == pytest.approx(
        -filter_function(FilterKind.RAMSEY_IMAG, 0.3, t), rel=1e-12)


@pytest.mark.parametrize("kind", [FilterKind.RAMSEY_REAL, FilterKind.ECHO])
def test_overlap_matches_time_domain_quadrature(kind):
    for kappa in (3e-3, 0.2, 1.7):
        for t in (0.3, 8.0, 300.0):
            got = lorentzian_overlap(kind, kappa, np.array([t]))[0]
            want = overlap_time_domain(kind, kappa, t)
            assert got == pytest.approx(want, rel=1e-9, abs=1e-18)


@pytest.mark.parametrize("kind", [FilterKind.RAMSEY_REAL, FilterKind.ECHO])
def test_overlap_matches_frequency_domain_quadrature(kind):
    for kappa, t in ((0.2, 8.0), (1.7, 0.3), (3e-3, 8.0), (0.05, 40.0)):
        got = lorentzian_overlap(kind, kappa, np.array([t]))[0]
        want = overlap_freq_domain(kind, kappa, t)
        assert got == pytest.approx(want, rel=1e-5)


def test_overlap_series_switch_continuity():
    # the module uses the series below x = kappa*t = 0.05 and the closed
    # form above; evaluate the opposite branch in the test at the same
    # argument on each side of the switch
    t = 1.0
    for kappa in (0.05 * (1 - 1e-9), 0.05 * (1 + 1e-9)):
        x = kappa * t
        direct_r = (x - 1 + np.exp(-x)) / kappa**2
        direct_e = (x - 3 + 4 * np.exp(-x / 2) - np.exp(-x)) / kappa**2
        got_r = lorentzian_overlap(FilterKind.RAMSEY_REAL, kappa, np.array([t]))[0]
        got_e = lorentzian_overlap(FilterKind.ECHO, kappa, np.array([t]))[0]
        assert got_r == pytest.approx(direct_r, rel=1e-9)
        assert got_e == pytest.approx(direct_e, rel=1e-8)


def test_overlap_frozen_fluctuator_limit():
    # kappa = 0: a static random offset. Ramsey variance grows as t^2/2;
    # the echo refocuses it exactly.
    times = np.array([0.0, 3.0, 17.0])
    ramsey = lorentzian_overlap(FilterKind.RAMSEY_REAL, 0.0, times)
    echo = lorentzian_overlap(FilterKind.ECHO, 0.0, times)
    assert np.allclose(ramsey, times**2 / 2, rtol=1e-12)
    assert np.all(echo == 0.0)


def test_flat_spectrum_ramsey_integral():
    # (1/2pi) integral of K^R over omega equals t/2: reduce to the sinc^2
    # integral with an analytic tail correction.
    t = 4.0
    upper = 30 * np.pi
    body, _ = quad(lambda u: np.sinc(u / np.pi) ** 2, 0.0, upper, limit=400)
    tail = 1.0 / (2 * upper)
    sinc_integral = body + tail
    numeric = (t**2 / 2) * (2.0 / t) * 2.0 * sinc_integral / (2 * np.pi)
    assert numeric == pytest.approx(t / 2, rel=1e-4)


def test_convolution_of_lorentzians():
    # (1/2pi) * (S_a * S_b)(Omega) is a Lorentzian of width kappa_a+kappa_b
    # and weight A_a A_b.
    aa, ka = 0.7, 0.8
    ab, kb = 1.9, 0.35
    for big_omega in (0.0, 0.3, 2.9):
        def integrand(w):
            sa = aa * 2 * ka / (ka**2 + w**2)
            sb = ab * 2 * kb / (kb**2 + (big_omega - w) ** 2)
            return sa * sb / (2 * np.pi)
        got, _ = quad(integrand, -np.inf, np.inf, limit=400)
        ks = ka + kb
        want = aa * ab * 2 * ks / (ks**2 + big_omega**2)
        assert got == pytest.approx(want, rel=1e-8)


def test_pair_term_matches_2d_quadrature():
    # double integral of K(omega+omega') S_a S_b /(2pi)^2 equals
    # A_a A_b F(kappa_a + kappa_b, t)
    aa, ka = 0.9, 0.8
    ab, kb = 1.4, 0.35
    t = 2.5
    nodes, weights = np.polynomial.legendre.leggauss(900)
    theta = nodes * (np.pi / 2)
    w = weights * (np.pi / 2)
    om = np.add.outer(ka * np.tan(theta), kb * np.tan(theta))
    vals = filter_function(FilterKind.RAMSEY_REAL, om, np.full_like(om, t))
    got = (aa / np.pi) * (ab / np.pi) * float(w @ vals @ w)
    want = aa * ab * lorentzian_overlap(FilterKind.RAMSEY_REAL, ka + kb,
                                        np.array([t]))[0]
    assert got == pytest.approx(want, rel=1e-5)


def test_second_moment_closed_forms():
    assert noise_second_moment(NoiseModel(strong_tlfs=())) == 0.0
    even = TlfSpec.from_total_rate(3e-4, 0.5, 0.01)
    assert noise_second_moment(NoiseModel(strong_tlfs=(even,))) == pytest.approx(
        (3e-4) ** 2, rel=1e-12)
    uneven = TlfSpec.from_total_rate(3e-4, 0.7, 0.01)
    assert noise_second_moment(NoiseModel(strong_tlfs=(uneven,))) == pytest.approx(
        4 * (3e-4) ** 2 * 0.3 * 0.7, rel=1e-12)
    bath = build_gaussian_bath(20, 5e-4, (1e-3, 1e-1), seed=3)
    assert noise_second_moment(NoiseModel(strong_tlfs=(), bath=bath)) == pytest.approx(
        (5e-4) ** 2, rel=1e-12)


def test_lamb_shifted_frequency_values():
    spec = heavy_fluxonium()
    empty = NoiseModel(strong_tlfs=())
    assert lamb_shifted_frequency(spec, 0.0, empty) == pytest.approx(
        W_GE_SWEET_SPOT, rel=1e-9)
    rms = 2 * np.pi * 2e-5
    bath = build_gaussian_bath(201, rms, (2 * np.pi * 1e-6, 2 * np.pi * 1e-3),
                               seed=1)
    model = NoiseModel(strong_tlfs=(), bath=bath)
    got = lamb_shifted_frequency(spec, 0.0, model)
    want = W_GE_SWEET_SPOT + 0.5 * D2_SWEET_SPOT * rms**2
    assert got == pytest.approx(want, rel=1e-9)
    lam = 3e-4
    assert lamb_shifted_frequency(spec, lam, model) == pytest.approx(
        lamb_shifted_frequency(spec, -lam, model), rel=1e-14)


@pytest.mark.parametrize("kind", [FilterKind.RAMSEY_REAL, FilterKind.ECHO])
def test_profile_basics(kind):
    spec = heavy_fluxonium()
    model = small_model()
    times = np.array([0.0, 0.5, 4.0, 60.0])
    pred = dephasing_profile(spec, 1.1e-4, model, kind, times)
    assert pred.phi[0] == 0.0
    assert np.all(pred.phi >= 0.0)
    total = sum(v for k, v in pred.breakdown.items()
                if not k.startswith("tlf_self_"))
    assert np.allclose(total, pred.phi, rtol=1e-12, atol=0)


def test_even_tlf_at_sweet_spot_leaves_only_flip_loss():
    # lambda = 0, single even fluctuator, no bath: every pure-dephasing
    # term carries a vanishing prefactor at this order, so what remains is
    # exactly the flip-loss line.
    spec = heavy_fluxonium()
    model = NoiseModel(strong_tlfs=(TlfSpec.from_total_rate(2e-4, 0.5, 0.02),))
    times = np.linspace(0.0, 100.0, 7)
    for kind in (FilterKind.RAMSEY_REAL, FilterKind.ECHO):
        pred = dephasing_profile(spec, 0.0, model, kind, times)
        assert np.all(pred.phi == pred.breakdown["sudden_flip"])
        assert pred.breakdown["sudden_flip"][-1] > 0.0


@pytest.mark.parametrize("kind", [FilterKind.RAMSEY_REAL, FilterKind.ECHO])
def test_profile_matches_quadrature_oracle(kind):
    spec = heavy_fluxonium()
    model = small_model()
    d2 = dispersion_derivatives(spec).d2
    lam = 1.3e-4
    times = np.array([0.5, 7.0, 40.0, 150.0])
    pred = dephasing_profile(spec, lam, model, kind, times)
    for i, t in enumerate(times):
        want = profile_oracle(spec, d2, lam, model, kind, float(t))
        assert pred.phi[i] == pytest.approx(want, rel=1e-8)


def test_sudden_flip_rate_scalings():
    spec = heavy_fluxonium()

    def one(amplitude, p_minus, kappa):
        model = NoiseModel(strong_tlfs=(
            TlfSpec.from_total_rate(amplitude, p_minus, kappa),))
        return sudden_flip_rate(spec, model)

    base = one(2e-4, 0.5, 0.02)
    assert base > 0.0
    # linear in the flip rate, quadratic in the swing
    assert one(2e-4, 0.5, 0.04) == pytest.approx(2 * base, rel=1e-12)
    assert one(4e-4, 0.5, 0.02) == pytest.approx(4 * base, rel=1e-12)
    # stationary flip frequency carries the population product
    assert one(2e-4, 0.9, 0.02) == pytest.approx(
        base * (0.9 * 0.1) / 0.25, rel=1e-12)
    # additive over members, bath and strong alike
    tlf = TlfSpec.from_total_rate(2e-4, 0.5, 0.02)
    both = NoiseModel(strong_tlfs=(tlf,), bath=(tlf,))
    assert sudden_flip_rate(spec, both) == pytest.approx(2 * base, rel=1e-12)
    # frozen fluctuators cannot flip
    frozen = NoiseModel(strong_tlfs=(TlfSpec(
        amplitude=2e-4, p_plus=0.5, p_minus=0.5,
        kappa_plus=0.0, kappa_minus=0.0),))
    assert sudden_flip_rate(spec, frozen) == 0.0


def test_profile_asymmetry_identity():
    spec = heavy_fluxonium()
    model = small_model()
    d2 = dispersion_derivatives(spec).d2
    lam = 2.4e-4
    times = np.array([3.0, 25.0, 400.0])
    for kind in (FilterKind.RAMSEY_REAL, FilterKind.ECHO):
        plus = dephasing_profile(spec, lam, model, kind, times)
        minus = dephasing_profile(spec, -lam, model, kind, times)
        expected = np.zeros_like(times)
        for m in model.strong_tlfs:
            expected += (-4 * d2**2 * lam * m.mean_offset * m.variance
                         * lorentzian_overlap(kind, m.kappa, times))
        assert np.allclose(plus.phi - minus.phi, expected, rtol=1e-10, atol=1e-30)


def test_tlf_term_smaller_at_matching_offset():
    # With one uneven fluctuator the self term vanishes at lambda equal to
    # its mean offset and is strictly positive at the mirrored offset.
    spec = heavy_fluxonium()
    tlf = TlfSpec.from_total_rate(2e-4, 0.7, 0.01)
    model = NoiseModel(strong_tlfs=(tlf,),
                       bath=build_gaussian_bath(4, 5e-5, (1e-3, 1e-1), seed=2))
    times = np.array([50.0])
    at_mean = dephasing_profile(spec, tlf.mean_offset, model,
                                FilterKind.RAMSEY_REAL, times)
    mirrored = dephasing_profile(spec, -tlf.mean_offset, model,
                                 FilterKind.RAMSEY_REAL, times)
    assert at_mean.breakdown["tlf_self"][0] == 0.0
    assert mirrored.breakdown["tlf_self"][0] > 0.0
    assert at_mean.phi[0] < mirrored.phi[0]


def test_minimizing_offset():
    spec = heavy_fluxonium()
    model = small_model()
    t = 35.0
    star = phi_minimizing_offset(spec, model, FilterKind.RAMSEY_REAL, t)

    def phi_at(lam):
        return dephasing_profile(spec, lam, model, FilterKind.RAMSEY_REAL,
                                 np.array([t])).phi[0]

    # Phi is exactly quadratic in lambda; recover the vertex from 3 points.
    h = 5e-4
    a, b, c = phi_at(star - h), phi_at(star), phi_at(star + h)
    vertex = star + 0.5 * h * (a - c) / (a - 2 * b + c)
    assert vertex == pytest.approx(star, abs=1e-12 + 1e-6 * abs(star))
    assert b <= a and b <= c
    result = minimize_scalar(phi_at, bounds=(-5e-3, 5e-3), method="bounded",
                             options={"xatol": 1e-12})
    assert result.x == pytest.approx(star, abs=1e-9)


def test_echo_never_exceeds_ramsey_for_slow_noise():
    spec = heavy_fluxonium()
    tlfs = (TlfSpec.from_total_rate(2e-4, 0.6, 1e-4),
            TlfSpec.from_total_rate(1e-4, 0.5, 5e-4))
    model = NoiseModel(strong_tlfs=tlfs,
                       bath=build_gaussian_bath(6, 8e-5, (1e-4, 1e-3), seed=5))
    times = np.linspace(0.0, 50.0, 11)
    ramsey = dephasing_profile(spec, 2e-4, model, FilterKind.RAMSEY_REAL, times)
    echo = dephasing_profile(spec, 2e-4, model, FilterKind.ECHO, times)
    assert np.all(echo.phi <= ramsey.phi + 1e-30)
    assert echo.phi[-1] < ramsey.phi[-1]


def test_compressed_pair_sum_accuracy():
    bath = build_gaussian_bath(300, 1e-4, (1e-3, 1.0), seed=9)
    variances = np.array([m.variance for m in bath])
    kappas = np.array([m.kappa for m in bath])
    times = np.array([0.1, 5.0, 80.0, 1200.0])
    for kind in (FilterKind.RAMSEY_REAL, FilterKind.ECHO):
        exact = _bath_pair_sum(variances, kappas, kind, times)
        packed = _compressed_pair_sum(variances, kappas, kind, times)
        assert np.allclose(packed, exact, rtol=1e-6)


def test_profile_input_validation():
    spec = heavy_fluxonium()
    model = small_model()
    with pytest.raises(ValueError):
        dephasing_profile(spec, 0.0, model, FilterKind.RAMSEY_IMAG, [0.0, 1.0])
    with pytest.raises(ValueError):
        dephasing_profile(spec, 0.0, model, FilterKind.RAMSEY_REAL, [-1.0, 1.0])
    with pytest.raises(ValueError):
        dephasing_profile(spec, 0.0, model, FilterKind.RAMSEY_REAL,
                          [[0.0, 1.0]])


def test_predicted_coherence_properties():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.linspace(0.0, 80.0, 9)
    lam = 2e-4
    series = predicted_coherence(spec, lam, model, FilterKind.RAMSEY_REAL, times)
    assert series.rho_eg[0] == 0.5 + 0.0j
    assert np.all(np.abs(series.rho_eg) <= 0.5 + 1e-15)
    assert series.ensemble_size == 0
    assert series.protocol.kind == "ramsey"
    assert series.metadata["code_version"]

    # Gaussian-only magnitudes are reflection symmetric in the offset.
    gauss = NoiseModel(strong_tlfs=(),
                       bath=build_gaussian_bath(6, 2e-4, (1e-3, 1e-1), seed=4))
    plus = predicted_coherence(spec, lam, gauss, FilterKind.RAMSEY_REAL, times)
    minus = predicted_coherence(spec, -lam, gauss, FilterKind.RAMSEY_REAL, times)
    assert np.allclose(np.abs(plus.rho_eg), np.abs(minus.rho_eg), rtol=1e-13)


def test_predicted_coherence_zero_noise_rotation():
    spec = heavy_fluxonium()
    empty = NoiseModel(strong_tlfs=())
    times = np.linspace(0.0, 40.0, 5)
    lam = 3e-4
    d2 = dispersion_derivatives(spec).d2
    delta = eigensolve(spec).splitting
    for kind in (FilterKind.RAMSEY_REAL, FilterKind.ECHO):
        series = predicted_coherence(spec, lam, empty, kind, times)
        want = 0.5 * np.exp(-1j * (delta + 0.5 * d2 * lam**2) * times)
        assert np.allclose(series.rho_eg, want, rtol=1e-12)


def test_echo_reference_frequency_excludes_noise_pull():
    spec = heavy_fluxonium()
    model = small_model()
    times = np.array([0.0, 10.0])
    lam = 1e-4
    ramsey = dephasing_profile(spec, lam, model, FilterKind.RAMSEY_REAL, times)
    echo = dephasing_profile(spec, lam, model, FilterKind.ECHO, times)
    d2 = dispersion_derivatives(spec).d2
    pull = 0.5 * d2 * noise_second_moment(model)
    assert ramsey.omega_q_prime - echo.omega_q_prime == pytest.approx(pull, rel=1e-9)
