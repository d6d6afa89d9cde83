"""Two-level-fluctuator (telegraph) noise models and trajectory sampling.

A fluctuator sits in one of two configurations labelled +/- with stationary
occupations p_plus/p_minus and switching rates obeying detailed balance
kappa_minus * p_plus == kappa_plus * p_minus (kappa_minus is the rate of
downward flips, i.e. the exit rate of the + configuration).  The phase offset
contributed by a fluctuator is measured relative to its stationary mean, so
the two values it takes are +amplitude - mean_offset and
-amplitude - mean_offset with mean_offset = amplitude * (p_plus - p_minus).

A composite noise model is a handful of strong fluctuators plus a Gaussian
bath: many weak even (p = 1/2) fluctuators whose switching rates are drawn
log-uniformly so the summed spectrum approximates 1/f over the covered band.

Units: time in ns, rates in rad/ns (angular), amplitudes in rad.

Randomness is fully deterministic: every (trajectory, fluctuator) pair gets
its own PCG64 stream keyed by numpy SeedSequence spawn keys derived from the
model master seed, so ensembles are reproducible regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TlfSpec",
    "NoiseModel",
    "NoiseTrace",
    "RNG_SCHEME",
    "sample_tlf_trace",
    "analytic_correlation",
    "tlf_spectrum",
    "build_gaussian_bath",
    "composite_trace",
]

# Stream tags for SeedSequence spawn keys; bump the scheme tag if the
# derivation ever changes so artifacts stay comparable.
RNG_SCHEME = "seedseq-spawnkey-v1/pcg64"
_STREAM_TRACE = 0
_STREAM_BATH = 1
_STREAM_JITTER = 2

_BALANCE_RTOL = 1e-12


@dataclass(frozen=True)
class TlfSpec:
    """One two-level fluctuator.

    Attributes:
        amplitude: half the distance between the two offset values, rad.
        p_plus: stationary occupation of the + configuration.
        p_minus: stationary occupation of the - configuration.
        kappa_plus: upward flip rate (- to +), rad/ns.
        kappa_minus: downward flip rate (+ to -), rad/ns.
    """

    amplitude: float
    p_plus: float
    p_minus: float
    kappa_plus: float
    kappa_minus: float

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not (0.0 <= self.p_plus <= 1.0 and 0.0 <= self.p_minus <= 1.0):
            raise ValueError("occupations must lie in [0, 1]")
        if abs(self.p_plus + self.p_minus - 1.0) > 1e-12:
            raise ValueError("occupations must sum to one")
        if self.kappa_plus < 0 or self.kappa_minus < 0:
            raise ValueError("flip rates must be non-negative")
        # detailed balance: kappa_- P_+ = kappa_+ P_-
        lhs = self.kappa_minus * self.p_plus
        rhs = self.kappa_plus * self.p_minus
        scale = max(abs(lhs), abs(rhs), self.kappa * max(self.p_plus, self.p_minus) * 1e-300)
        if scale > 0 and abs(lhs - rhs) > _BALANCE_RTOL * max(abs(lhs), abs(rhs), self.kappa):
            raise ValueError(
                f"detailed balance violated: kappa_-*p_+ = {lhs!r} vs kappa_+*p_- = {rhs!r}"
            )

    @classmethod
    def from_total_rate(cls, amplitude: float, p_minus: float, kappa: float) -> "TlfSpec":
        """Build a spec from total switching rate; detailed balance fixes the split."""
        p_plus = 1.0 - p_minus
        return cls(
            amplitude=amplitude,
            p_plus=p_plus,
            p_minus=p_minus,
            kappa_plus=kappa * p_plus,
            kappa_minus=kappa * p_minus,
        )

    @property
    def kappa(self) -> float:
        """Total switching rate (correlation decay rate)."""
        return self.kappa_plus + self.kappa_minus

    @property
    def mean_offset(self) -> float:
        """Stationary mean amplitude * (p_plus - p_minus), rad."""
        return self.amplitude * (self.p_plus - self.p_minus)

    @property
    def value_plus(self) -> float:
        """Offset contributed while in +, mean removed: 2*amplitude*p_minus."""
        return self.amplitude - self.mean_offset

    @property
    def value_minus(self) -> float:
        """Offset contributed while in -, mean removed: -2*amplitude*p_plus."""
        return -self.amplitude - self.mean_offset

    @property
    def variance(self) -> float:
        """Stationary variance (2*amplitude)^2 * p_plus * p_minus, rad^2."""
        return (2.0 * self.amplitude) ** 2 * self.p_plus * self.p_minus

    def exit_rate(self, sign: int) -> float:
        """Rate of leaving the given configuration (+1 or -1)."""
        return self.kappa_minus if sign > 0 else self.kappa_plus


@dataclass(frozen=True)
class NoiseModel:
    """Strong fluctuators plus a Gaussian bath, with the master RNG seed."""

    strong_tlfs: tuple[TlfSpec, ...]
    bath: tuple[TlfSpec, ...] = ()
    master_seed: int = 0

    def __post_init__(self) -> None:
        for member in self.bath:
            if abs(member.p_plus - 0.5) > 1e-12:
                raise ValueError("bath members must be even (p = 1/2)")

    @property
    def members(self) -> tuple[TlfSpec, ...]:
        return self.strong_tlfs + self.bath

    @property
    def second_moment(self) -> float:
        """Total stationary variance of the summed offset, rad^2."""
        return float(sum(m.variance for m in self.members))

    @property
    def bath_rms(self) -> float:
        return float(np.sqrt(sum(m.variance for m in self.bath)))


@dataclass(frozen=True)
class NoiseTrace:
    """One sampled realization of a composite telegraph process.

    flip_times[i] is the sorted array of switching instants of member i over
    [0, horizon]; initial_signs[i] its configuration at t = 0.
    """

    members: tuple[TlfSpec, ...]
    initial_signs: tuple[int, ...]
    flip_times: tuple[np.ndarray, ...]
    horizon: float

    def member_signs(self, times: np.ndarray, index: int) -> np.ndarray:
        """Configuration (+1/-1) of one member at the requested times."""
        flips = self.flip_times[index]
        nflips = np.searchsorted(flips, times, side="right")
        return self.initial_signs[index] * np.where(nflips % 2 == 0, 1, -1)

    def value_at(self, times) -> np.ndarray:
        """Summed mean-removed offset at the requested times, rad."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        total = np.zeros(times.shape, dtype=float)
        for i, spec in enumerate(self.members):
            signs = self.member_signs(times, i)
            total += signs * spec.amplitude - spec.mean_offset
        return total

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Merged piecewise-constant representation.

        Returns (starts, values): starts[0] == 0.0, each segment i spans
        [starts[i], starts[i+1]) (the last one ends at the horizon) and the
        summed offset on it is values[i].
        """
        if self.flip_times:
            merged = np.concatenate(self.flip_times)
        else:
            merged = np.empty(0)
        merged = merged[(merged > 0.0) & (merged <= self.horizon)]
        starts = np.concatenate(([0.0], np.unique(merged)))
        values = self.value_at(starts)
        return starts, values

    def binned_deltas(self, dt: float, n_steps: int) -> tuple[float, np.ndarray]:
        """Left-value binning of the trace onto a uniform step grid.

        Step s covers [s*dt, (s+1)*dt) and uses the value at its left edge;
        a flip inside a step therefore takes effect at the next step.  Returns
        (value at t=0, per-step increments) so that
        cumsum(increments) + v0 reproduces the binned values.
        """
        deltas = np.zeros(n_steps, dtype=float)
        for i, spec in enumerate(self.members):
            flips = self.flip_times[i]
            if flips.size == 0:
                continue
            bins = np.ceil(flips / dt).astype(np.int64)
            keep = bins < n_steps
            bins = bins[keep]
            if bins.size == 0:
                continue
            k = np.arange(1, flips.size + 1)[keep]
            signs_after = self.initial_signs[i] * np.where(k % 2 == 0, 1, -1)
            np.add.at(deltas, bins, 2.0 * spec.amplitude * signs_after)
        v0 = float(self.value_at(np.array([0.0]))[0])
        return v0, deltas


def _trace_seed(master_seed: int, trajectory_index: int, fluctuator_index: int,
                stream_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        master_seed,
        spawn_key=(_STREAM_TRACE, stream_index, trajectory_index, fluctuator_index),
    )


def jitter_rng(master_seed: int, trajectory_index: int, stream_index: int = 0) -> np.random.Generator:
    """Per-trajectory stream for auxiliary draws (e.g. drive amplitude jitter)."""
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(_STREAM_JITTER, stream_index, trajectory_index)
    )
    return np.random.Generator(np.random.PCG64(seq))


def sample_tlf_trace(spec: TlfSpec, horizon: float,
                     seed: np.random.SeedSequence | int) -> tuple[int, np.ndarray]:
    """Sample one stationary telegraph trajectory.

    The initial configuration is drawn from (p_plus, p_minus); dwell times are
    exponential with the configuration's exit rate (kappa_minus while in +,
    kappa_plus while in -).  Returns (initial sign, sorted flip times within
    (0, horizon]).  Deterministic for a given seed.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    sign0 = 1 if rng.random() < spec.p_plus else -1

    rate_here = spec.exit_rate(sign0)
    rate_there = spec.exit_rate(-sign0)
    if rate_here == 0.0:
        # Frozen in the initial configuration (covers kappa == 0 and p in {0, 1}).
        return sign0, np.empty(0)

    # Draw dwell pairs in blocks until the horizon is covered.  Block sizes
    # depend only on the spec and horizon, so the draw sequence is fixed.
    mean_cycle = 1.0 / rate_here + (1.0 / rate_there if rate_there > 0 else np.inf)
    expect_pairs = horizon / mean_cycle if np.isfinite(mean_cycle) else 0.0
    block = max(8, int(expect_pairs + 6.0 * np.sqrt(expect_pairs + 1.0)))

    flips: list[np.ndarray] = []
    t_end = 0.0
    while True:
        draws = rng.standard_exponential(2 * block)
        scales = np.empty(2 * block)
        scales[0::2] = 1.0 / rate_here
        scales[1::2] = 1.0 / rate_there if rate_there > 0 else np.inf
        dwell = draws * scales
        times = t_end + np.cumsum(dwell)
        flips.append(times)
        if not np.isfinite(times[-1]) or times[-1] > horizon:
            break
        t_end = times[-1]

    all_flips = np.concatenate(flips)
    all_flips = all_flips[np.isfinite(all_flips)]
    return sign0, all_flips[all_flips <= horizon]


def analytic_correlation(spec: TlfSpec, ordered_times: Sequence[float]) -> float:
    """Exact stationary moment E[dxi(t_1) ... dxi(t_n)] for n in 1..4.

    ordered_times must be non-increasing and non-negative. The mean-removed
    moments of a stationary telegraph process depend only on the time gaps:

        n=1: 0
        n=2: (2a)^2 p+ p- exp(-k (t1-t2))
        n=3: -(2a)^3 (p+-p-) p+ p- exp(-k (t1-t3))
        n=4: (2a)^4 [ (p+ p-)^2 exp(-k (t1-t2) - k (t3-t4))
                      + p+ p- (p+-p-)^2 exp(-k (t1-t4)) ]
    """
    t = np.asarray(ordered_times, dtype=float)
    if t.ndim != 1 or not (1 <= t.size <= 4):
        raise ValueError("ordered_times must hold 1 to 4 values")
    if np.any(np.diff(t) > 0):
        raise ValueError("times must be non-increasing")
    if t.size and t[-1] < 0:
        raise ValueError("times must be non-negative")

    a2 = 2.0 * spec.amplitude
    pp, pm = spec.p_plus, spec.p_minus
    k = spec.kappa
    if t.size == 1:
        return 0.0
    if t.size == 2:
        return a2**2 * pp * pm * float(np.exp(-k * (t[0] - t[1])))
    if t.size == 3:
        return -(a2**3) * (pp - pm) * pp * pm * float(np.exp(-k * (t[0] - t[2])))
    term_pair = (pp * pm) ** 2 * np.exp(-k * (t[0] - t[1]) - k * (t[2] - t[3]))
    term_span = pp * pm * (pp - pm) ** 2 * np.exp(-k * (t[0] - t[3]))
    return a2**4 * float(term_pair + term_span)


def tlf_spectrum(spec: TlfSpec, omega) -> np.ndarray:
    """Symmetrized Lorentzian noise spectrum S(omega), rad^2 * ns.

    S(omega) = variance * 2 kappa / (kappa^2 + omega^2); its integral over
    omega/2pi recovers the stationary variance.
    """
    omega = np.asarray(omega, dtype=float)
    k = spec.kappa
    return spec.variance * 2.0 * k / (k**2 + omega**2)


def build_gaussian_bath(count: int, target_rms: float,
                        kappa_range: tuple[float, float], seed: int) -> tuple[TlfSpec, ...]:
    """Construct a bath of even fluctuators emulating 1/f noise.

    All members share the amplitude target_rms/sqrt(count) (so the composite
    RMS equals target_rms exactly) and p = 1/2; switching rates are drawn
    log-uniformly over kappa_range.  Deterministic for a given seed.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if target_rms <= 0:
        raise ValueError("target_rms must be positive")
    lo, hi = kappa_range
    if not (0 < lo <= hi):
        raise ValueError("kappa_range must satisfy 0 < lo <= hi")
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(_STREAM_BATH,))))
    kappas = np.exp(rng.uniform(np.log(lo), np.log(hi), size=count))
    amp = target_rms / np.sqrt(count)
    return tuple(
        TlfSpec(amplitude=amp, p_plus=0.5, p_minus=0.5,
                kappa_plus=0.5 * k, kappa_minus=0.5 * k)
        for k in kappas
    )


def composite_trace(model: NoiseModel, horizon: float, trajectory_index: int,
                    stream_index: int = 0) -> NoiseTrace:
    """Sample all fluctuators of a model for one trajectory.

    Each member uses its own stream keyed by (master_seed, stream_index,
    trajectory_index, fluctuator_index), so identical inputs give identical
    traces regardless of evaluation order or threading.
    """
    members = model.members
    signs: list[int] = []
    flips: list[np.ndarray] = []
    for i, spec in enumerate(members):
        seed = _trace_seed(model.master_seed, trajectory_index, i, stream_index)
        s0, ft = sample_tlf_trace(spec, horizon, seed)
        signs.append(s0)
        flips.append(ft)
    return NoiseTrace(
        members=members,
        initial_signs=tuple(signs),
        flip_times=tuple(flips),
        horizon=horizon,
    )
