"""Analytic dephasing predictor for quadratic noise coupling near a sweet spot.

Builds the phase-variance profile Phi(t) for Ramsey and Echo protocols from
filter-function overlaps with Lorentzian noise spectra. All overlap integrals
have closed forms for Lorentzian spectra, so no numerical quadrature is
involved; the forms switch to series expansions at small kappa*t to avoid
cancellation.

Conventions: the qubit frequency near the sweet spot is
omega(v) = Delta + (D2/2) v**2 with v = lambda + delta_xi(t), where delta_xi
is the zero-mean composite noise. D2 and Delta are evaluated at the sweet
spot. Phi(t) is one half the variance of the accumulated stochastic phase,
organized into five contributions: bath linear, bath pair, per-fluctuator
linear (weight (lambda - mean_offset)**2), fluctuator-fluctuator pair, and
bath-fluctuator pair. A sixth, linear-in-time term covers coherence lost
to sudden eigenbasis rotations at fluctuator flips, which the
pure-dephasing expansion above cannot see (it matters once flips are
frequent, see sudden_flip_rate).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .noise import NoiseModel
from .qubit import QubitSpec, dispersion_derivatives, eigensolve
from .series import CoherenceSeries, Protocol, base_metadata

# Exact O(n^2) bath pair sums up to this many members; beyond it the pair
# spectrum is compressed onto a geometric rate grid (relative error < 1e-6).
_PAIR_EXACT_LIMIT = 512
_PAIR_BINS = 4096

# Below x = kappa*t of this size the closed forms lose digits to
# cancellation and the series expansions take over.
_SERIES_SWITCH = 0.05


class FilterKind(enum.Enum):
    """Which filter function weights the noise spectrum."""

    RAMSEY_REAL = "ramsey_real"
    RAMSEY_IMAG = "ramsey_imag"
    ECHO = "echo"


def filter_function(kind: FilterKind, omega, t):
    """Evaluates the frequency-domain filter for a protocol of duration t.

    Args:
        kind: filter selector.
        omega: angular frequency, rad/ns (scalar or array).
        t: protocol duration, ns (scalar or array, broadcastable).

    Returns:
        Filter value(s); t**2 sinc^2(omega t/2)/2 for the Ramsey real part,
        -(t/omega)(1 - sinc(omega t)) for the Ramsey imaginary part and
        t**2 sinc^2(omega t/4) sin^2(omega t/4)/2 for the Echo.
    """

    omega, t = np.broadcast_arrays(np.asarray(omega, dtype=float),
                                   np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("protocol duration must be non-negative")
    if kind is FilterKind.RAMSEY_REAL:
        return 0.5 * t**2 * np.sinc(omega * t / (2.0 * np.pi)) ** 2
    if kind is FilterKind.ECHO:
        quarter = omega * t / 4.0
        return 0.5 * t**2 * np.sinc(quarter / np.pi) ** 2 * np.sin(quarter) ** 2
    if kind is FilterKind.RAMSEY_IMAG:
        x = omega * t
        small = np.abs(x) < 1e-3
        safe_omega = np.where(small, 1.0, omega)
        general = -(t / safe_omega) * (1.0 - np.sinc(x / np.pi))
        series = -(omega * t**3 / 6.0) * (1.0 - x**2 / 20.0 + x**4 / 840.0)
        return np.where(small, series, general)
    raise ValueError(f"unknown filter kind {kind!r}")


def lorentzian_overlap(kind: FilterKind, kappa: float, times) -> np.ndarray:
    """Overlap of a filter with a unit-variance Lorentzian spectrum.

    Computes F(kappa, t) = (1/2pi) * integral of K(omega, t) * 2 kappa /
    (kappa^2 + omega^2) d omega in closed form. Multiply by the noise
    variance to get that spectrum's contribution.

    Args:
        kind: RAMSEY_REAL or ECHO.
        kappa: spectrum width (correlation decay rate), 1/ns, >= 0.
        times: protocol durations, ns.

    Returns:
        Array of overlap values, shape of times.
    """

    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    x = kappa * times
    small = x < _SERIES_SWITCH
    out = np.empty_like(times)
    if kind is FilterKind.RAMSEY_REAL:
        xs, ts = x[small], times[small]
        out[small] = ts**2 * (0.5 - xs / 6.0 + xs**2 / 24.0 - xs**3 / 120.0
                              + xs**4 / 720.0 - xs**5 / 5040.0)
        xl = x[~small]
        out[~small] = (xl - 1.0 + np.exp(-xl)) / kappa**2
        return out
    if kind is FilterKind.ECHO:
        xs, ts = x[small], times[small]
        out[small] = ts**2 * (xs / 12.0 - xs**2 / 32.0 + 7.0 * xs**3 / 960.0
                              - xs**4 / 768.0 + 31.0 * xs**5 / 161280.0)
        xl = x[~small]
        out[~small] = (xl - 3.0 + 4.0 * np.exp(-xl / 2.0) - np.exp(-xl)) / kappa**2
        return out
    raise ValueError(f"no spectrum overlap defined for {kind!r}")


def _overlap_rows(kind: FilterKind, kappas: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Stack of lorentzian_overlap rows, shape (len(kappas), len(times))."""

    return np.stack([lorentzian_overlap(kind, float(k), times) for k in kappas])


def noise_second_moment(model: NoiseModel) -> float:
    """Total stationary variance of the composite noise offset, rad^2.

    Equals (1/2pi) * integral of the summed spectrum over all frequencies.
    """

    return model.second_moment


@lru_cache(maxsize=16)
def _sweet_spot_reference(spec: QubitSpec) -> tuple[float, float]:
    """(bare splitting Delta, curvature D2) at the sweet spot."""

    delta = eigensolve(spec).splitting
    d2 = dispersion_derivatives(spec).d2
    return delta, d2


@lru_cache(maxsize=16)
def _sweet_spot_mixing(spec: QubitSpec) -> float:
    """|x_ge| / Delta at the sweet spot, 1/rad.

    Scales a sudden phase-offset change into the first-order rotation
    angle of the qubit eigenbasis.
    """

    reference = eigensolve(spec)
    return abs(reference.x_elements[0, 1]) / reference.splitting


def sudden_flip_rate(spec: QubitSpec, model: NoiseModel) -> float:
    """Coherence decay rate from sudden fluctuator flips, 1/ns.

    A telegraph flip steps the phase offset by the full swing 2|xi| within
    one noise segment, which is sudden on the qubit timescale: the energy
    eigenbasis rotates by eta = 2|xi| |x_ge| / Delta while the state vector
    stays put. The misprojected amplitude has acquired an essentially
    random relative phase by the next flip (Delta is huge against every
    kappa here), so the ensemble coherence loses eta^2 per flip. Flips
    arrive at the stationary rate 2 p_plus p_minus kappa per fluctuator,
    giving an exponential envelope at the summed rate.

    This channel lies outside the pure-dephasing description built from
    the dispersion curve alone: it is invisible for quasi-static
    fluctuators (rate proportional to kappa) and unaffected by the echo
    pulse (the loss is incoherent, so nothing refocuses).
    """

    ratio = _sweet_spot_mixing(spec)
    rate = 0.0
    for member in (*model.strong_tlfs, *model.bath):
        eta = 2.0 * member.amplitude * ratio
        rate += 2.0 * member.p_plus * member.p_minus * member.kappa * eta**2
    return rate


def lamb_shifted_frequency(spec: QubitSpec, control_offset: float,
                           model: NoiseModel, *, d2: float | None = None) -> float:
    """Mean qubit oscillation frequency including the static noise pull.

    Returns Delta + (D2/2) * (lambda^2 + total noise variance), the
    leading-order average of the quadratically shifted splitting.
    """

    delta, d2_ref = _sweet_spot_reference(spec)
    if d2 is None:
        d2 = d2_ref
    return delta + 0.5 * d2 * (control_offset**2 + noise_second_moment(model))


@dataclass(eq=False)
class DephasingPrediction:
    """Analytic dephasing profile on a time grid.

    Attributes:
        times: ns.
        phi: total phase variance profile Phi(t); Phi(0) = 0, Phi >= 0.
        omega_q_prime: reference oscillation frequency for the protocol,
            rad/ns (Lamb-shifted for Ramsey, bare quadratic for Echo).
        breakdown: per-term contributions summing to phi. Keys:
            gaussian_linear, gaussian_quadratic, tlf_self (plus tlf_self_<i>
            per fluctuator), tlf_tlf_cross, gaussian_tlf_cross, sudden_flip.
    """

    times: np.ndarray
    phi: np.ndarray
    omega_q_prime: float
    breakdown: dict[str, np.ndarray]


@dataclass(eq=False)
class ProfileBasis:
    """Control-independent building blocks of the dephasing profile.

    The Phi terms depend on the control offset only through scalar
    prefactors, so a sweep over offsets can reuse one basis. Rows of
    tlf_linear are variance * F(kappa_mu, t) per strong fluctuator; the
    pair sums carry their combinatorial weights already.
    """

    kind: FilterKind
    times: np.ndarray
    bath_linear: np.ndarray
    bath_pair: np.ndarray
    tlf_linear: np.ndarray
    tlf_pair: np.ndarray
    bath_tlf_pair: np.ndarray
    mean_offsets: np.ndarray
    d2: float
    delta: float
    flip_rate: float


def _bath_pair_sum(variances: np.ndarray, kappas: np.ndarray,
                   kind: FilterKind, times: np.ndarray) -> np.ndarray:
    """Ordered double sum over bath pairs of A_i A_j F(kappa_i + kappa_j, t)."""

    count = len(variances)
    if count == 0:
        return np.zeros_like(times)
    if count <= _PAIR_EXACT_LIMIT:
        total = np.zeros_like(times)
        for i in range(count):
            rows = _overlap_rows(kind, kappas[i] + kappas, times)
            total += variances[i] * (variances @ rows)
        return total
    return _compressed_pair_sum(variances, kappas, kind, times)


def _compressed_pair_sum(variances: np.ndarray, kappas: np.ndarray,
                         kind: FilterKind, times: np.ndarray) -> np.ndarray:
    """Pair sum with the pair-rate distribution binned on a geometric grid.

    Bins are narrow enough (and use variance-weighted mean rates, which
    cancels the first-order error) that the result stays within 1e-6
    relative of the exact double sum.
    """

    pair_rates = (kappas[:, None] + kappas[None, :]).ravel()
    pair_weights = (variances[:, None] * variances[None, :]).ravel()
    lo, hi = pair_rates.min(), pair_rates.max()
    if hi <= lo * (1.0 + 1e-12):
        return pair_weights.sum() * lorentzian_overlap(kind, float(lo), times)
    edges = np.geomspace(lo, hi, _PAIR_BINS + 1)
    idx = np.clip(np.searchsorted(edges, pair_rates, side="right") - 1,
                  0, _PAIR_BINS - 1)
    weight_per_bin = np.bincount(idx, weights=pair_weights, minlength=_PAIR_BINS)
    rate_sum_per_bin = np.bincount(idx, weights=pair_weights * pair_rates,
                                   minlength=_PAIR_BINS)
    occupied = weight_per_bin > 0
    mean_rates = rate_sum_per_bin[occupied] / weight_per_bin[occupied]
    rows = _overlap_rows(kind, mean_rates, times)
    return weight_per_bin[occupied] @ rows


def profile_basis(spec: QubitSpec, model: NoiseModel, kind: FilterKind,
                  times, *, d2: float | None = None) -> ProfileBasis:
    """Precomputes the control-independent parts of the dephasing profile."""

    if kind not in (FilterKind.RAMSEY_REAL, FilterKind.ECHO):
        raise ValueError("dephasing profiles are defined for the Ramsey real "
                         "part and the Echo filter only")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if np.any(~np.isfinite(times)) or np.any(times < 0):
        raise ValueError("times must be finite and non-negative")

    delta, d2_ref = _sweet_spot_reference(spec)
    if d2 is None:
        d2 = d2_ref

    bath_var = np.array([m.variance for m in model.bath])
    bath_kap = np.array([m.kappa for m in model.bath])
    tlf_var = np.array([m.variance for m in model.strong_tlfs])
    tlf_kap = np.array([m.kappa for m in model.strong_tlfs])
    tlf_mean = np.array([m.mean_offset for m in model.strong_tlfs])
    n_tlf = len(tlf_var)

    if len(bath_var):
        bath_linear = bath_var @ _overlap_rows(kind, bath_kap, times)
    else:
        bath_linear = np.zeros_like(times)
    bath_pair = _bath_pair_sum(bath_var, bath_kap, kind, times)

    if n_tlf:
        tlf_linear = tlf_var[:, None] * _overlap_rows(kind, tlf_kap, times)
    else:
        tlf_linear = np.zeros((0, times.size))

    tlf_pair = np.zeros_like(times)
    for mu in range(n_tlf):
        for nu in range(mu + 1, n_tlf):
            tlf_pair += (tlf_var[mu] * tlf_var[nu]
                         * lorentzian_overlap(kind, tlf_kap[mu] + tlf_kap[nu], times))

    bath_tlf_pair = np.zeros_like(times)
    if n_tlf and len(bath_var):
        for mu in range(n_tlf):
            rows = _overlap_rows(kind, tlf_kap[mu] + bath_kap, times)
            bath_tlf_pair += tlf_var[mu] * (bath_var @ rows)

    return ProfileBasis(kind=kind, times=times, bath_linear=bath_linear,
                        bath_pair=bath_pair, tlf_linear=tlf_linear,
                        tlf_pair=tlf_pair, bath_tlf_pair=bath_tlf_pair,
                        mean_offsets=tlf_mean, d2=d2, delta=delta,
                        flip_rate=sudden_flip_rate(spec, model))


def assemble_profile(basis: ProfileBasis, control_offset: float,
                     model: NoiseModel) -> DephasingPrediction:
    """Assembles Phi(t) for one control offset from a precomputed basis."""

    lam = float(control_offset)
    d2sq = basis.d2**2
    breakdown: dict[str, np.ndarray] = {}
    breakdown["gaussian_linear"] = d2sq * lam**2 * basis.bath_linear
    breakdown["gaussian_quadratic"] = 0.5 * d2sq * basis.bath_pair
    tlf_self = np.zeros_like(basis.times)
    for mu in range(basis.tlf_linear.shape[0]):
        term = d2sq * (lam - basis.mean_offsets[mu]) ** 2 * basis.tlf_linear[mu]
        breakdown[f"tlf_self_{mu}"] = term
        tlf_self = tlf_self + term
    breakdown["tlf_self"] = tlf_self
    breakdown["tlf_tlf_cross"] = d2sq * basis.tlf_pair
    breakdown["gaussian_tlf_cross"] = d2sq * basis.bath_tlf_pair
    breakdown["sudden_flip"] = basis.flip_rate * basis.times

    for name, values in breakdown.items():
        if not np.all(np.isfinite(values)):
            raise ArithmeticError(f"dephasing term {name} evaluated non-finite")

    phi = (breakdown["gaussian_linear"] + breakdown["gaussian_quadratic"]
           + breakdown["tlf_self"] + breakdown["tlf_tlf_cross"]
           + breakdown["gaussian_tlf_cross"] + breakdown["sudden_flip"])
    if basis.kind is FilterKind.RAMSEY_REAL:
        omega = basis.delta + 0.5 * basis.d2 * (lam**2 + noise_second_moment(model))
    else:
        omega = basis.delta + 0.5 * basis.d2 * lam**2
    return DephasingPrediction(times=basis.times, phi=phi,
                               omega_q_prime=omega, breakdown=breakdown)


def dephasing_profile(spec: QubitSpec, control_offset: float, model: NoiseModel,
                      kind: FilterKind, times, *,
                      d2: float | None = None) -> DephasingPrediction:
    """Evaluates the dephasing profile Phi(t).

    Args:
        spec: qubit parameters (used for the sweet-spot curvature and
            splitting).
        control_offset: static phase offset lambda from the sweet spot, rad.
        model: composite noise model.
        kind: RAMSEY_REAL or ECHO.
        times: evaluation grid, ns.
        d2: optional curvature override (replaces the computed sweet-spot
            value, useful for testing).

    Returns:
        DephasingPrediction with the total Phi and the per-term breakdown.
    """

    basis = profile_basis(spec, model, kind, times, d2=d2)
    return assemble_profile(basis, control_offset, model)


def phi_minimizing_offset(spec: QubitSpec, model: NoiseModel, kind: FilterKind,
                          time: float, *, d2: float | None = None) -> float:
    """Control offset minimizing Phi(t) at a fixed time.

    Phi is exactly quadratic in the offset, so the minimizer is the
    fluctuator mean offsets weighted by their overlap strengths:
    lambda* = sum_mu mean_mu V_mu / (V_bath + sum_mu V_mu) with
    V = variance * F(kappa, t).
    """

    basis = profile_basis(spec, model, kind, np.array([float(time)]), d2=d2)
    v_bath = float(basis.bath_linear[0])
    v_tlf = basis.tlf_linear[:, 0] if basis.tlf_linear.size else np.zeros(0)
    denominator = v_bath + float(v_tlf.sum())
    if denominator <= 0.0:
        raise ArithmeticError("no linear-coupling weight; minimizer undefined")
    return float(np.dot(basis.mean_offsets, v_tlf) / denominator)


def predicted_coherence(spec: QubitSpec, control_offset: float, model: NoiseModel,
                        kind: FilterKind, times, *,
                        d2: float | None = None) -> CoherenceSeries:
    """Analytic coherence signal rho_eg(t) = (1/2) exp(-i omega t - Phi(t)).

    For the Ramsey filter omega is the Lamb-shifted frequency; for the Echo
    filter the reference rotation Delta + D2 lambda^2 / 2 is used (the noise
    induced frequency pulls cancel in the echo phase).
    """

    prediction = dephasing_profile(spec, control_offset, model, kind, times,
                                   d2=d2)
    rho = 0.5 * np.exp(-1j * prediction.omega_q_prime * prediction.times
                       - prediction.phi)
    protocol = Protocol.echo() if kind is FilterKind.ECHO else Protocol.ramsey()
    metadata = base_metadata(spec, model, source="analytic_prediction",
                             filter=kind.value)
    zeros = np.zeros_like(prediction.times)
    return CoherenceSeries(times=prediction.times, rho_eg=rho, stderr_re=zeros,
                           stderr_im=zeros, ensemble_size=0,
                           master_seed=model.master_seed, protocol=protocol,
                           metadata=metadata)
