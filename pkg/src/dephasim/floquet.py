"""Periodically driven qubit: quasi-energies, harmonic-resolved matrix
elements, derivative engineering, and driven Ramsey ensembles.

A time-periodic drive through the phase-coupling operator reshapes the
qubit splitting into a quasi-energy difference whose derivatives with
respect to the static offset and the drive amplitude can be tuned. An
odd-harmonic waveform keeps the first offset derivative pinned at zero
by parity, so a two-parameter search over amplitude and drive frequency
can null the offset curvature and the amplitude slope simultaneously.
Operating there protects the qubit from the static noise to second
order and from amplitude jitter to first order at the same time.

The solver propagates one drive period on midpoint-frozen segments,
eigendecomposes the monodromy, and tracks branches from the undriven
spectrum along an amplitude ramp so quasi-energies stay continuous and
free of mod-omega_d ambiguity. The driven ensembles reuse the binned
telegraph traces from the static engine; drive and noise couple through
the same operator, so every step propagator is an exact exponential of
diag(E) + c X with a single scalar coefficient.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .noise import NoiseModel, composite_trace, jitter_rng
from .qubit import QubitSpec, eigensolve
from .series import CoherenceSeries, Protocol, base_metadata

_MIN_SAMPLES = 256
_RESIDUAL_TOL = 1e-9
_DENOMINATOR_GUARD = 1e-6  # rad/ns
_OVERLAP_FLOOR = 0.5
_STROBE_TOL = 1e-6  # fraction of one drive period
_NORM_TOL = 1e-8
_KEY_QUANTUM = 1e-6  # rad, quantization of the combined step coefficient
_SIM_CHUNK = 64


class FloquetBranchError(RuntimeError):
    """Branch tracking lost continuity along the amplitude ramp."""


class FloquetResonanceError(ArithmeticError):
    """A quasi-energy denominator fell below the resonance guard."""


@dataclass(frozen=True)
class DriveSpec:
    """Odd-harmonic periodic drive through the phase-coupling operator.

    The waveform is f(t) = amplitude * (cos(omega_d t)
    + alpha cos((2 harmonic + 1) omega_d t)). Both terms flip sign under
    a half-period shift, which is what keeps the driven spectrum an even
    function of the static offset at the sweet spot.

    Attributes:
        amplitude: drive strength, rad (same units as the static offset).
        omega_d: fundamental angular frequency, rad/ns.
        alpha: weight of the companion harmonic.
        harmonic: index n of the companion harmonic 2n + 1.
    """

    amplitude: float
    omega_d: float
    alpha: float = 1.0
    harmonic: int = 1

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if not (np.isfinite(self.omega_d) and self.omega_d > 0):
            raise ValueError("omega_d must be positive and finite")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if int(self.harmonic) != self.harmonic or self.harmonic < 1:
            raise ValueError("harmonic must be a positive integer")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_d

    def waveform(self, t):
        """Drive value f(t), vectorized over t."""

        t = np.asarray(t, dtype=float)
        order = 2 * int(self.harmonic) + 1
        return self.amplitude * (np.cos(self.omega_d * t)
                                 + self.alpha * np.cos(order * self.omega_d
                                                       * t))

    def with_amplitude(self, amplitude: float) -> "DriveSpec":
        return replace(self, amplitude=float(amplitude))


@dataclass(frozen=True, eq=False)
class FloquetSolution:
    """One-period solution of the driven qubit in the retained subspace.

    Quasi-energies are branch-tracked from the undriven spectrum, so
    they are stored mod-free: at zero amplitude they equal the bare
    subspace energies, and they evolve continuously along the ramp.
    sampled_states[m, :, k] holds |w_k(t_m)> at t_m = m T / m_samples
    with the quasi-energy phase removed, so the states are periodic.
    fourier_coeffs[k, l, i] caches the harmonic components of
    <w_k(t)|x|w_l(t)> for n = i - stored_harmonics.
    """

    drive: DriveSpec
    control_offset: float
    m_samples: int
    energies: np.ndarray
    x_elements: np.ndarray
    quasi_energies: np.ndarray
    states0: np.ndarray
    sampled_states: np.ndarray
    fourier_coeffs: np.ndarray
    stored_harmonics: int
    monodromy_residual: float
    min_branch_overlap: float

    @property
    def splitting(self) -> float:
        """Quasi-energy difference of the computational pair, rad/ns."""

        return float(self.quasi_energies[1] - self.quasi_energies[0])

    @property
    def dt(self) -> float:
        return self.drive.period / self.m_samples


@dataclass(frozen=True)
class FloquetDerivatives:
    """Derivatives of the computational quasi-energy splitting.

    d1 and d2 are the first and second derivatives with respect to the
    static offset at the sweet spot, from the harmonic-resolved matrix
    elements; de_da is the amplitude slope from Richardson-refined
    central differences. d2_shell is the magnitude of the outermost
    harmonic shell of the d2 sum (a truncation error estimate), and
    d2_fd is the optional finite-difference cross-check in the offset.
    """

    d1: float
    d2: float
    de_da: float
    d2_shell: float
    d2_fd: float | None
    solution: FloquetSolution


def _reduced_system(spec: QubitSpec, control_offset: float,
                    subspace_dim: int | None) -> tuple[np.ndarray, np.ndarray]:
    dim = spec.subspace_dim if subspace_dim is None else int(subspace_dim)
    if dim < 2:
        raise ValueError("subspace_dim must be at least 2")
    slice_ = eigensolve(spec, control_offset, 0.0, n_levels=dim)
    return slice_.energies.copy(), slice_.x_elements.copy()


def _validate_samples(m_samples: int) -> int:
    m = int(m_samples)
    if m < _MIN_SAMPLES or (m & (m - 1)) != 0:
        raise ValueError(f"m_samples must be a power of two, at least "
                         f"{_MIN_SAMPLES}")
    return m


def _unit_shape(drive: DriveSpec, m_samples: int) -> np.ndarray:
    """Waveform at segment midpoints for unit amplitude."""

    dt = drive.period / m_samples
    mids = (np.arange(m_samples) + 0.5) * dt
    return _unit_waveform(drive, mids)


def _unit_waveform(drive: DriveSpec, t: np.ndarray) -> np.ndarray:
    order = 2 * int(drive.harmonic) + 1
    return (np.cos(drive.omega_d * t)
            + drive.alpha * np.cos(order * drive.omega_d * t))


# Gauss-node weights of the fourth-order two-exponential composition.
_CF4_LOW = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_CF4_HIGH = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


def _period_propagators(energies: np.ndarray, x: np.ndarray,
                        drive: DriveSpec, amplitude: float,
                        m_samples: int) -> np.ndarray:
    """Fourth-order segment propagators over one drive period.

    Each segment combines the drive at the two Gauss nodes into a pair
    of exact exponentials, which keeps the one-period quasi-energies
    converged to better than 1e-9 relative at the minimum sampling.
    """

    dt = drive.period / m_samples
    base = (np.arange(m_samples) + 0.5) * dt
    gauss = dt * math.sqrt(3.0) / 6.0
    early = amplitude * _unit_waveform(drive, base - gauss)
    late = amplitude * _unit_waveform(drive, base + gauss)
    first = _step_propagators(
        energies, x, 2.0 * (_CF4_HIGH * early + _CF4_LOW * late), dt / 2.0)
    second = _step_propagators(
        energies, x, 2.0 * (_CF4_LOW * early + _CF4_HIGH * late), dt / 2.0)
    return np.einsum("mij,mjk->mik", second, first)


def _step_propagators(energies: np.ndarray, x: np.ndarray,
                      coefficients: np.ndarray, dt: float) -> np.ndarray:
    """Exact exponentials of diag(energies) + c x for each coefficient."""

    h = coefficients[:, None, None] * x[None, :, :]
    idx = np.arange(energies.size)
    h[:, idx, idx] += energies
    w, vecs = np.linalg.eigh(h)
    phases = np.exp(-1j * w * dt)
    return np.einsum("sik,sk,sjk->sij", vecs, phases, vecs.conj())


class _BranchTracker:
    """Tracks quasi-energy branches along an amplitude schedule.

    Each step solves one drive period at the given amplitude, assigns
    monodromy eigenvectors to branches by maximal overlap with the
    previous step, and unwraps each quasi-energy to the representative
    nearest its previous value. Starting from zero amplitude anchors
    the branches at the bare spectrum.
    """

    def __init__(self, energies: np.ndarray, x: np.ndarray,
                 drive: DriveSpec, m_samples: int):
        self.energies = energies
        self.x = x
        self.drive = drive
        self.m = m_samples
        self.dt = drive.period / m_samples
        self.dim = energies.size
        self.vectors = np.eye(self.dim, dtype=complex)
        self.quasi = energies.astype(float).copy()
        self.step_props: np.ndarray | None = None
        self.residual = 0.0
        self.min_overlap = 1.0

    def step(self, amplitude: float) -> None:
        props = _period_propagators(self.energies, self.x, self.drive,
                                    amplitude, self.m)
        monodromy = props[0]
        for m in range(1, self.m):
            monodromy = props[m] @ monodromy
        tri, vecs = scipy.linalg.schur(monodromy, output="complex")
        vals = np.diag(tri)
        residual = np.abs(monodromy @ vecs - vecs * vals[None, :]).max()
        if residual > _RESIDUAL_TOL:
            raise FloquetBranchError(
                f"monodromy eigenvector residual {residual:.2e} exceeds "
                f"{_RESIDUAL_TOL:.0e}")
        overlaps = np.abs(self.vectors.conj().T @ vecs)
        order = np.argmax(overlaps, axis=1)
        best = overlaps[np.arange(self.dim), order]
        if best.min() < _OVERLAP_FLOOR or len(set(order.tolist())) < self.dim:
            raise FloquetBranchError(
                f"branch continuity lost at amplitude {amplitude:.3e} "
                f"(best overlap {best.min():.3f}); use a finer amplitude "
                "ramp (more ramp_steps)")
        vecs = vecs[:, order]
        vals = vals[order]
        period = self.drive.period
        raw = -np.angle(vals) / period
        wraps = np.round((self.quasi - raw) / self.drive.omega_d)
        self.quasi = raw + wraps * self.drive.omega_d
        self.vectors = vecs
        self.step_props = props
        self.residual = max(self.residual, float(residual))
        self.min_overlap = min(self.min_overlap, float(best.min()))

    def splitting(self) -> float:
        return float(self.quasi[1] - self.quasi[0])

    def realize(self, stored_harmonics: int) -> dict:
        """Period-sampled states and the harmonic tensor at this point."""

        if self.step_props is None:
            props = _period_propagators(self.energies, self.x, self.drive,
                                        0.0, self.m)
        else:
            props = self.step_props
        vecs = self.vectors.copy()
        anchor = np.argmax(np.abs(vecs), axis=0)
        phase = vecs[anchor, np.arange(self.dim)]
        vecs = vecs * (np.abs(phase) / phase)[None, :]
        sampled = np.empty((self.m, self.dim, self.dim), dtype=complex)
        sampled[0] = vecs
        current = vecs
        for m in range(1, self.m):
            current = props[m - 1] @ current
            sampled[m] = current * np.exp(
                1j * self.quasi * (m * self.dt))[None, :]
        tensor = _fourier_tensor(sampled, self.x, stored_harmonics)
        return {"quasi": self.quasi.copy(), "states0": vecs,
                "sampled": sampled, "tensor": tensor}


def _fourier_tensor(sampled: np.ndarray, x: np.ndarray,
                    n_harmonics: int) -> np.ndarray:
    """Harmonic components of all pairwise driven matrix elements."""

    m = sampled.shape[0]
    g = np.einsum("mik,ij,mjl->mkl", sampled.conj(), x, sampled)
    spectrum = np.fft.ifft(g, axis=0)
    picks = np.arange(-n_harmonics, n_harmonics + 1) % m
    tensor = np.transpose(spectrum[picks], (1, 2, 0))
    flipped = np.conj(np.swapaxes(tensor[:, :, ::-1], 0, 1))
    scale = max(1.0, float(np.abs(tensor).max()))
    if np.abs(tensor - flipped).max() > 1e-9 * scale:
        raise ArithmeticError("harmonic tensor lost Hermiticity")
    return tensor


def floquet_solve(spec: QubitSpec, control_offset: float, drive: DriveSpec,
                  m_samples: int = 256, *, ramp_steps: int = 32,
                  subspace_dim: int | None = None) -> FloquetSolution:
    """Solves one drive period and labels branches from the bare states.

    The period is split into m_samples midpoint-frozen segments whose
    exact exponentials compose the monodromy. Its eigendecomposition
    gives the quasi-energies mod omega_d; continuity along a ramp of
    ramp_steps amplitudes from zero resolves the ambiguity and connects
    each branch to an undriven eigenstate.

    Args:
        spec: qubit description.
        control_offset: static offset lambda, rad.
        drive: periodic drive (amplitude may be zero or negative).
        m_samples: segments per period, a power of two >= 256.
        ramp_steps: amplitude ramp resolution for branch tracking.
        subspace_dim: retained levels (default from spec).

    Returns:
        FloquetSolution with mod-free quasi-energies, stroboscopic and
        period-sampled states, and the cached harmonic tensor.

    Raises:
        FloquetBranchError: branch continuity was lost along the ramp.
    """

    m_samples = _validate_samples(m_samples)
    if ramp_steps < 1:
        raise ValueError("ramp_steps must be at least 1")
    energies, x = _reduced_system(spec, control_offset, subspace_dim)
    tracker = _BranchTracker(energies, x, drive, m_samples)
    if drive.amplitude == 0.0:
        tracker.step(0.0)
    else:
        for amplitude in np.linspace(0.0, drive.amplitude,
                                     ramp_steps + 1)[1:]:
            tracker.step(float(amplitude))
    stored = min(8, m_samples // 4)
    state = tracker.realize(stored)
    return FloquetSolution(
        drive=drive, control_offset=float(control_offset),
        m_samples=m_samples, energies=energies, x_elements=x,
        quasi_energies=state["quasi"], states0=state["states0"],
        sampled_states=state["sampled"], fourier_coeffs=state["tensor"],
        stored_harmonics=stored, monodromy_residual=tracker.residual,
        min_branch_overlap=tracker.min_overlap)


def fourier_coefficients(solution: FloquetSolution, k: int, kp: int,
                         n_harmonics: int) -> np.ndarray:
    """Harmonic components of <w_k(t)|x|w_kp(t)> over one period.

    Args:
        solution: a solved drive period.
        k, kp: branch indices.
        n_harmonics: highest harmonic N; at most m_samples / 4.

    Returns:
        Complex array of length 2 N + 1; index i holds harmonic i - N.

    Raises:
        ValueError: significant spectral weight survives past a quarter
            of the sampling band, so the coefficients near the Nyquist
            edge are unreliable and m_samples should be raised.
    """

    m = solution.m_samples
    if not 0 <= k < solution.states0.shape[1]:
        raise ValueError(f"branch index {k} out of range")
    if not 0 <= kp < solution.states0.shape[1]:
        raise ValueError(f"branch index {kp} out of range")
    if n_harmonics < 1 or n_harmonics > m // 4:
        raise ValueError("n_harmonics must be in [1, m_samples / 4]")
    states = solution.sampled_states
    g = np.einsum("mi,ij,mj->m", states[:, :, k].conj(),
                  solution.x_elements, states[:, :, kp])
    spectrum = np.fft.ifft(g)
    quarter = m // 4
    low = np.abs(spectrum[np.arange(-quarter, quarter + 1) % m])
    high = np.abs(np.concatenate((spectrum[quarter + 1:m // 2 + 1],
                                  spectrum[m // 2 + 1:m - quarter])))
    scale = low.max()
    floor = 1e-12 * max(1.0, float(np.abs(solution.x_elements).max()))
    if scale > floor and high.size and high.max() > 1e-3 * scale:
        raise ValueError(
            f"harmonics beyond {quarter} still carry "
            f"{high.max() / scale:.1e} of the peak weight; "
            "raise m_samples")
    return spectrum[np.arange(-n_harmonics, n_harmonics + 1) % m]


def _curvature_from_tensor(quasi: np.ndarray, tensor: np.ndarray,
                           omega_d: float,
                           n_harmonics: int) -> tuple[float, float]:
    """Second offset derivative of the splitting from perturbation sums.

    Treats the static offset as a perturbation through the coupling
    operator in the extended (harmonic-indexed) space: each level of
    the computational pair picks up second-order shifts from every
    (branch, harmonic) state except itself at harmonic zero. Same-branch
    contributions at opposite harmonics cancel exactly and are kept only
    for symmetry. Returns the derivative and the magnitude of the
    outermost harmonic shell as a truncation estimate.
    """

    dim = quasi.size
    stored = (tensor.shape[2] - 1) // 2
    if n_harmonics > stored:
        raise ValueError("n_harmonics exceeds the stored tensor")
    total = 0.0
    shell = 0.0
    for level, sign in ((1, 1.0), (0, -1.0)):
        for k in range(dim):
            for n in range(-n_harmonics, n_harmonics + 1):
                if k == level and n == 0:
                    continue
                den = quasi[level] - quasi[k] - n * omega_d
                if abs(den) < _DENOMINATOR_GUARD:
                    raise FloquetResonanceError(
                        f"quasi-energy denominator {den:.2e} rad/ns for "
                        f"branch {k}, harmonic {n} (level {level}) is "
                        "inside the resonance guard")
                term = abs(tensor[level, k, n + stored]) ** 2 / den
                total += sign * term
                if abs(n) == n_harmonics:
                    shell += abs(term)
    return 2.0 * total, 2.0 * shell


def floquet_derivatives(spec: QubitSpec, drive: DriveSpec, *,
                        m_samples: int = 256, n_harmonics: int = 8,
                        ramp_steps: int = 32, subspace_dim: int | None = None,
                        amplitude_step: float | None = None,
                        offset_step: float = 2e-4,
                        cross_check: bool = False) -> FloquetDerivatives:
    """Derivatives of the qubit quasi-energy splitting at zero offset.

    The offset derivatives come from the harmonic-resolved matrix
    elements: the first is the difference of the two diagonal dc
    components, the second from the perturbation sums over branches and
    harmonics. The amplitude slope uses Richardson-refined central
    differences of full period solves. An optional cross-check
    recomputes the curvature by five-point finite differences in the
    offset.

    Raises:
        FloquetResonanceError: a perturbation denominator is within the
            resonance guard, so the sums are unreliable there.
    """

    solution = floquet_solve(spec, 0.0, drive, m_samples,
                             ramp_steps=ramp_steps,
                             subspace_dim=subspace_dim)
    stored = solution.stored_harmonics
    if n_harmonics <= stored:
        tensor = solution.fourier_coeffs
        mid = stored
    else:
        tensor = _fourier_tensor(solution.sampled_states,
                                 solution.x_elements, n_harmonics)
        mid = n_harmonics
    d1 = float((tensor[1, 1, mid] - tensor[0, 0, mid]).real)
    d2, shell = _curvature_from_tensor(solution.quasi_energies, tensor,
                                       drive.omega_d, n_harmonics)

    h = amplitude_step
    if h is None:
        h = max(0.02 * abs(drive.amplitude), 1e-5)

    def splitting_at(amplitude: float) -> float:
        return floquet_solve(spec, 0.0, drive.with_amplitude(amplitude),
                             m_samples, ramp_steps=ramp_steps,
                             subspace_dim=subspace_dim).splitting

    coarse = (splitting_at(drive.amplitude + h)
              - splitting_at(drive.amplitude - h)) / (2.0 * h)
    fine = (splitting_at(drive.amplitude + 0.5 * h)
            - splitting_at(drive.amplitude - 0.5 * h)) / h
    de_da = (4.0 * fine - coarse) / 3.0

    d2_fd = None
    if cross_check:
        hl = offset_step

        def split_off(offset: float) -> float:
            return floquet_solve(spec, offset, drive, m_samples,
                                 ramp_steps=ramp_steps,
                                 subspace_dim=subspace_dim).splitting

        d2_fd = (-split_off(2 * hl) + 16.0 * split_off(hl)
                 - 30.0 * solution.splitting + 16.0 * split_off(-hl)
                 - split_off(-2 * hl)) / (12.0 * hl * hl)
    return FloquetDerivatives(d1=d1, d2=d2, de_da=de_da, d2_shell=shell,
                              d2_fd=d2_fd, solution=solution)


@dataclass(frozen=True, eq=False)
class TripleSweetSpot:
    """Search result for the doubly-curvature-free driven operating point.

    found is True when the refinement drove both the offset curvature
    and the amplitude slope below their tolerances. The scanned grids
    are attached for heat maps and post-mortems regardless of success.
    """

    found: bool
    amplitude: float
    omega_d: float
    d2: float
    de_da: float
    splitting: float
    newton_iterations: int
    message: str
    grid_amplitudes: np.ndarray
    grid_omegas: np.ndarray
    grid_abs_d2: np.ndarray
    grid_abs_de_da: np.ndarray
    drive: DriveSpec | None


def _scan_column(energies: np.ndarray, x: np.ndarray, template: DriveSpec,
                 omega_d: float, a_values: np.ndarray, m_samples: int,
                 n_harmonics: int) -> tuple[np.ndarray, np.ndarray]:
    """Branch-tracked sweep of one drive-frequency column.

    Returns (splitting, curvature) along the amplitude axis; cells after
    a branch-tracking failure, or at a resonance, hold NaN.
    """

    drive = replace(template, omega_d=float(omega_d), amplitude=1.0)
    tracker = _BranchTracker(energies, x, drive, m_samples)
    eps01 = np.full(a_values.size, np.nan)
    d2 = np.full(a_values.size, np.nan)
    preramp = np.linspace(0.0, a_values[0], 9)[1:-1]
    try:
        for amplitude in preramp:
            tracker.step(float(amplitude))
    except FloquetBranchError:
        return eps01, d2
    for i, amplitude in enumerate(a_values):
        try:
            tracker.step(float(amplitude))
        except FloquetBranchError:
            break
        eps01[i] = tracker.splitting()
        try:
            state = tracker.realize(n_harmonics)
            d2[i], _ = _curvature_from_tensor(state["quasi"],
                                              state["tensor"], omega_d,
                                              n_harmonics)
        except (FloquetResonanceError, ArithmeticError):
            d2[i] = np.nan
    return eps01, d2


def find_triple_sweet_spot(spec: QubitSpec, alpha: float, harmonic: int,
                           a_range: tuple[float, float] | None = None,
                           omega_range: tuple[float, float] | None = None,
                           grid: tuple[int, int] = (24, 24), *,
                           m_samples: int = 256, n_harmonics: int = 8,
                           ramp_steps: int = 32,
                           subspace_dim: int | None = None,
                           tolerance_scale: float = 1e-6,
                           max_newton: int = 40,
                           csv_path: str | None = None) -> TripleSweetSpot:
    """Locates a drive point with zero offset curvature and amplitude slope.

    A coarse scan over (amplitude, drive frequency) maps the curvature
    and the amplitude slope of the splitting; cells where both change
    sign seed a damped 2-D Newton refinement with a finite-difference
    Jacobian. The first offset derivative vanishes identically for the
    odd-harmonic waveform, so nulling these two quantities yields triple
    protection. Tolerances default to tolerance_scale times the RMS of
    each quantity over the scanned grid.

    Args:
        spec: qubit description.
        alpha: companion harmonic weight of the drive.
        harmonic: companion harmonic index n (waveform order 2n + 1).
        a_range: amplitude window, rad; default scales the window so the
            fundamental matrix element stays well below the qubit gap.
        omega_range: drive frequency window, rad/ns; default covers 0.3
            to 2 times the bare splitting.
        grid: (amplitude points, frequency points) for the coarse scan.
        m_samples, n_harmonics, ramp_steps, subspace_dim: solver knobs.
        tolerance_scale: convergence tolerances relative to grid RMS.
        max_newton: iteration cap per seed cell.
        csv_path: optional heat-map CSV destination.

    Returns:
        TripleSweetSpot; found=False carries the grid and a message when
        no crossing was bracketed or refinement failed.
    """

    energies, x = _reduced_system(spec, 0.0, subspace_dim)
    m_samples = _validate_samples(m_samples)
    splitting = float(energies[1] - energies[0])
    if omega_range is None:
        omega_range = (0.3 * splitting, 2.0 * splitting)
    if a_range is None:
        a_max = 0.5 * splitting / abs(x[0, 1])
        a_range = (a_max / grid[0], a_max)
    if not (0.0 < a_range[0] < a_range[1]):
        raise ValueError("a_range must be positive and increasing")
    if not (0.0 < omega_range[0] < omega_range[1]):
        raise ValueError("omega_range must be positive and increasing")
    template = DriveSpec(amplitude=1.0, omega_d=1.0, alpha=float(alpha),
                         harmonic=int(harmonic))

    a_values = np.linspace(a_range[0], a_range[1], grid[0])
    w_values = np.linspace(omega_range[0], omega_range[1], grid[1])
    eps_grid = np.empty((grid[0], grid[1]))
    d2_grid = np.empty((grid[0], grid[1]))
    for j, omega_d in enumerate(w_values):
        eps_grid[:, j], d2_grid[:, j] = _scan_column(
            energies, x, template, float(omega_d), a_values, m_samples,
            n_harmonics)
    with np.errstate(invalid="ignore"):
        deda_grid = np.gradient(eps_grid, a_values, axis=0)

    if csv_path is not None:
        _write_heat_map(csv_path, a_values, w_values, d2_grid, deda_grid)

    finite2 = np.abs(d2_grid[np.isfinite(d2_grid)])
    finite_a = np.abs(deda_grid[np.isfinite(deda_grid)])
    if finite2.size == 0 or finite_a.size == 0:
        return _not_found("the scan produced no finite cells", a_values,
                          w_values, d2_grid, deda_grid)
    tol2 = tolerance_scale * float(np.sqrt(np.mean(finite2**2)))
    tol_a = tolerance_scale * float(np.sqrt(np.mean(finite_a**2)))

    seeds = _seed_cells(a_values, w_values, d2_grid, deda_grid)
    if not seeds:
        return _not_found("no grid cell brackets both sign changes",
                          a_values, w_values, d2_grid, deda_grid)

    def point_eval(a: float, w: float) -> tuple[float, float, float]:
        """(d2, de_da, eps01) from one ramped solve with side points."""

        drive = replace(template, omega_d=float(w), amplitude=1.0)
        tracker = _BranchTracker(energies, x, drive, m_samples)
        h = 0.02 * a
        targets = (a - h, a, a + h)
        ramp = np.linspace(0.0, targets[0], ramp_steps + 1)[1:]
        for amplitude in ramp:
            tracker.step(float(amplitude))
        splits = [tracker.splitting()]
        state = None
        for target in targets[1:]:
            tracker.step(float(target))
            splits.append(tracker.splitting())
            if state is None:
                state = tracker.realize(n_harmonics)
        d2_val, _ = _curvature_from_tensor(state["quasi"], state["tensor"],
                                           float(w), n_harmonics)
        de_da = (splits[2] - splits[0]) / (2.0 * h)
        return d2_val, de_da, splits[1]

    bounds = (a_range, omega_range)
    for a0, w0 in seeds:
        refined = _newton_refine(point_eval, a0, w0, tol2, tol_a, bounds,
                                 (a_values[1] - a_values[0],
                                  w_values[1] - w_values[0]), max_newton)
        if refined is None:
            refined = _bisection_fallback(point_eval, a0, w0,
                                          (a_values[1] - a_values[0],
                                           w_values[1] - w_values[0]),
                                          bounds, tol2, tol_a)
        if refined is None:
            continue
        a_star, w_star, d2_star, deda_star, eps_star, iters = refined
        drive = replace(template, omega_d=float(w_star),
                        amplitude=float(a_star))
        return TripleSweetSpot(
            found=True, amplitude=float(a_star), omega_d=float(w_star),
            d2=float(d2_star), de_da=float(deda_star),
            splitting=float(eps_star), newton_iterations=iters,
            message="converged", grid_amplitudes=a_values,
            grid_omegas=w_values, grid_abs_d2=np.abs(d2_grid),
            grid_abs_de_da=np.abs(deda_grid), drive=drive)
    return _not_found("refinement failed in every seeded cell", a_values,
                      w_values, d2_grid, deda_grid)


def _not_found(message: str, a_values, w_values, d2_grid,
               deda_grid) -> TripleSweetSpot:
    return TripleSweetSpot(
        found=False, amplitude=float("nan"), omega_d=float("nan"),
        d2=float("nan"), de_da=float("nan"), splitting=float("nan"),
        newton_iterations=0, message=message, grid_amplitudes=a_values,
        grid_omegas=w_values, grid_abs_d2=np.abs(d2_grid),
        grid_abs_de_da=np.abs(deda_grid), drive=None)


def _seed_cells(a_values, w_values, d2_grid, deda_grid) -> list:
    """Cell centers where both quantities change sign, best first."""

    seeds = []
    for i in range(a_values.size - 1):
        for j in range(w_values.size - 1):
            block2 = d2_grid[i:i + 2, j:j + 2]
            block_a = deda_grid[i:i + 2, j:j + 2]
            if not (np.all(np.isfinite(block2))
                    and np.all(np.isfinite(block_a))):
                continue
            if block2.min() < 0.0 < block2.max() \
                    and block_a.min() < 0.0 < block_a.max():
                score = float(np.mean(np.abs(block2))
                              * np.mean(np.abs(block_a)))
                seeds.append((score,
                              0.5 * (a_values[i] + a_values[i + 1]),
                              0.5 * (w_values[j] + w_values[j + 1])))
    seeds.sort()
    return [(a, w) for _, a, w in seeds[:6]]


def _newton_refine(point_eval: Callable, a0: float, w0: float, tol2: float,
                   tol_a: float, bounds, cell, max_newton: int):
    """Damped 2-D Newton on (curvature, amplitude slope)."""

    (a_lo, a_hi), (w_lo, w_hi) = bounds
    cell_a, cell_w = cell
    a, w = a0, w0
    try:
        d2_val, deda, eps = point_eval(a, w)
    except (FloquetBranchError, FloquetResonanceError):
        return None
    for iteration in range(1, max_newton + 1):
        if abs(d2_val) < tol2 and abs(deda) < tol_a:
            return a, w, d2_val, deda, eps, iteration - 1
        h_a = 0.05 * cell_a
        h_w = 0.05 * cell_w
        try:
            d2_a, deda_a, _ = point_eval(a + h_a, w)
            d2_w, deda_w, _ = point_eval(a, w + h_w)
        except (FloquetBranchError, FloquetResonanceError):
            return None
        jac = np.array([[(d2_a - d2_val) / h_a, (d2_w - d2_val) / h_w],
                        [(deda_a - deda) / h_a, (deda_w - deda) / h_w]])
        if not np.all(np.isfinite(jac)) or abs(np.linalg.det(jac)) < 1e-300:
            return None
        step = np.linalg.solve(jac, -np.array([d2_val, deda]))
        step[0] = np.clip(step[0], -2.0 * cell_a, 2.0 * cell_a)
        step[1] = np.clip(step[1], -2.0 * cell_w, 2.0 * cell_w)
        norm_old = math.hypot(d2_val / tol2, deda / tol_a)
        damping = 1.0
        for _ in range(9):
            a_new = float(np.clip(a + damping * step[0], a_lo, a_hi))
            w_new = float(np.clip(w + damping * step[1], w_lo, w_hi))
            try:
                d2_new, deda_new, eps_new = point_eval(a_new, w_new)
            except (FloquetBranchError, FloquetResonanceError):
                damping *= 0.5
                continue
            if math.hypot(d2_new / tol2, deda_new / tol_a) < norm_old:
                a, w = a_new, w_new
                d2_val, deda, eps = d2_new, deda_new, eps_new
                break
            damping *= 0.5
        else:
            return None
    return None


def _bisection_fallback(point_eval: Callable, a0: float, w0: float, cell,
                        bounds, tol2: float, tol_a: float):
    """Nested bisection: slope root along amplitude, curvature along
    frequency."""

    (a_lo_g, a_hi_g), (w_lo_g, w_hi_g) = bounds
    cell_a, cell_w = cell

    def slope_root(w: float) -> tuple[float, float, float] | None:
        lo = max(a0 - 1.5 * cell_a, a_lo_g)
        hi = min(a0 + 1.5 * cell_a, a_hi_g)
        try:
            f_lo = point_eval(lo, w)
            f_hi = point_eval(hi, w)
        except (FloquetBranchError, FloquetResonanceError):
            return None
        if f_lo[1] * f_hi[1] > 0:
            return None
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            try:
                f_mid = point_eval(mid, w)
            except (FloquetBranchError, FloquetResonanceError):
                return None
            if abs(f_mid[1]) < tol_a:
                return mid, f_mid[0], f_mid[2]
            if f_lo[1] * f_mid[1] <= 0:
                hi, f_hi = mid, f_mid
            else:
                lo, f_lo = mid, f_mid
        return mid, f_mid[0], f_mid[2]

    w_lo = max(w0 - 1.5 * cell_w, w_lo_g)
    w_hi = min(w0 + 1.5 * cell_w, w_hi_g)
    lo_root = slope_root(w_lo)
    hi_root = slope_root(w_hi)
    if lo_root is None or hi_root is None:
        return None
    if lo_root[1] * hi_root[1] > 0:
        return None
    for _ in range(60):
        w_mid = 0.5 * (w_lo + w_hi)
        mid_root = slope_root(w_mid)
        if mid_root is None:
            return None
        if abs(mid_root[1]) < tol2:
            a_star, d2_star, eps_star = mid_root
            final = point_eval(a_star, w_mid)
            return a_star, w_mid, final[0], final[1], final[2], 0
        if lo_root[1] * mid_root[1] <= 0:
            w_hi, hi_root = w_mid, mid_root
        else:
            w_lo, lo_root = w_mid, mid_root
    return None


def _write_heat_map(path: str, a_values, w_values, d2_grid, deda_grid):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["a_rad", "omega_d_rad_per_ns", "abs_d2",
                         "abs_de_da", "product"])
        for j, w in enumerate(w_values):
            for i, a in enumerate(a_values):
                d2 = abs(d2_grid[i, j])
                da = abs(deda_grid[i, j])
                writer.writerow([repr(float(a)), repr(float(w)),
                                 repr(float(d2)), repr(float(da)),
                                 repr(float(d2 * da))])


@dataclass(frozen=True, eq=False)
class FloquetRamseyResult:
    """Driven Ramsey ensemble: coherence plus branch populations.

    The coherence is recorded in the driven frame as <w_1|psi><psi|w_0>
    at stroboscopic times, so with no noise it rotates at the
    quasi-energy splitting with magnitude one half. The populations
    track leakage between and out of the computational branches.
    """

    coherence: CoherenceSeries
    pop_ground: np.ndarray
    pop_excited: np.ndarray
    pop_ground_err: np.ndarray
    pop_excited_err: np.ndarray
    quasi_splitting: float


def simulate_floquet_ramsey(spec: QubitSpec, model: NoiseModel,
                            drive: DriveSpec, times, n_traj: int,
                            amp_jitter: float = 0.0, *,
                            m_samples: int = 256, ramp_steps: int = 32,
                            subspace_dim: int | None = None,
                            stream_index: int = 0,
                            threads: int = 1) -> FloquetRamseyResult:
    """Noisy driven evolution read out in the Floquet basis.

    Each trajectory draws one static amplitude factor
    (1 + amp_jitter * standard normal) and one telegraph trace, then
    steps the driven noisy Hamiltonian on midpoint-frozen segments of
    length T_d / m_samples. The initial state is the equal superposition
    of the two computational Floquet states; at stroboscopic times the
    coherence <w_1|psi><psi|w_0> and both branch populations are
    recorded. Trajectory seeds follow the static ensemble scheme, and
    the amplitude factors use the dedicated jitter stream, so the same
    trajectories are reproduced for any chunking.

    Args:
        spec: qubit description.
        model: composite telegraph noise model.
        drive: nominal periodic drive (the readout basis).
        times: stroboscopic sample times, integer multiples of the
            drive period, starting at or after zero.
        n_traj: ensemble size, at least 1.
        amp_jitter: relative rms of the per-trajectory amplitude factor.
        m_samples: segments per drive period, a power of two >= 256.
        ramp_steps: branch-tracking ramp for the reference solution.
        subspace_dim: retained levels (default from spec).
        stream_index: seed sub-stream, one per operating point.
        threads: worker threads for chunk processing.

    Returns:
        FloquetRamseyResult with the ensemble coherence series and the
        mean populations of both computational branches.
    """

    if amp_jitter < 0:
        raise ValueError("amp_jitter must be non-negative")
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-D array")
    if times[0] < 0:
        raise ValueError("times must be non-negative")

    solution = floquet_solve(spec, 0.0, drive, m_samples,
                             ramp_steps=ramp_steps,
                             subspace_dim=subspace_dim)
    period = drive.period
    m = solution.m_samples
    dt = solution.dt
    counts = np.rint(times / period)
    if np.abs(counts * period - times).max() > _STROBE_TOL * period:
        raise ValueError("times must be integer multiples of the drive "
                         "period (stroboscopic readout)")
    rec_idx = (counts.astype(np.int64)) * m
    n_steps = int(rec_idx.max())
    if n_steps < 1:
        raise ValueError("the last requested time must cover at least one "
                         "drive period")

    energies = solution.energies
    x = solution.x_elements
    dim = energies.size
    shape = _unit_shape(drive, m)
    bras = solution.states0[:, :2].conj()
    psi0 = (solution.states0[:, 0] + solution.states0[:, 1]) / math.sqrt(2.0)
    horizon = (n_steps + 1) * dt
    record_map: dict[int, list[int]] = {}
    for pos, idx in enumerate(rec_idx):
        record_map.setdefault(int(idx), []).append(pos)

    def chunk_job(indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        n_chunk = len(indices)
        keys = np.empty((n_chunk, n_steps), dtype=np.int64)
        full_shape = np.tile(shape, n_steps // m + 1)[:n_steps]
        for row, traj in enumerate(indices):
            factor = 1.0 + amp_jitter * float(jitter_rng(
                model.master_seed, traj, stream_index).standard_normal())
            trace = composite_trace(model, horizon, traj, stream_index)
            v0, deltas = trace.binned_deltas(dt, n_steps)
            values = v0 + np.cumsum(deltas)
            values += (drive.amplitude * factor) * full_shape
            keys[row] = np.rint(values / _KEY_QUANTUM).astype(np.int64)
        key_lo = int(keys.min())
        span = int(keys.max()) - key_lo + 1
        present = np.zeros(span, dtype=bool)
        present[(keys - key_lo).ravel()] = True
        slot_of = np.cumsum(present) - 1
        coefficients = (np.flatnonzero(present) + key_lo) * _KEY_QUANTUM
        table = _step_propagators(energies, x, coefficients, dt)
        slots = slot_of[keys - key_lo].astype(np.int32)
        slots = np.ascontiguousarray(slots.T)

        psi = np.tile(psi0, (n_chunk, 1))
        coh = np.empty((n_chunk, times.size), dtype=complex)
        pops = np.empty((n_chunk, times.size, 2))

        def record(positions):
            amps = psi @ bras
            value = amps[:, 1] * amps[:, 0].conj()
            weight = np.abs(amps) ** 2
            for pos in positions:
                coh[:, pos] = value
                pops[:, pos] = weight

        if 0 in record_map:
            record(record_map[0])
        for s in range(n_steps):
            psi = np.einsum("tij,tj->ti", table[slots[s]], psi)
            hit = record_map.get(s + 1)
            if hit is not None:
                record(hit)
        drift = np.abs(np.einsum("ti,ti->t", psi, psi.conj()) - 1.0)
        if drift.max() > _NORM_TOL:
            raise ArithmeticError(f"state norm drifted by {drift.max():.3e}")
        return coh, pops

    chunks = [range(lo, min(lo + _SIM_CHUNK, n_traj))
              for lo in range(0, n_traj, _SIM_CHUNK)]

    def partials(indices: Sequence[int]):
        coh, pops = chunk_job(list(indices))
        return (np.add.reduce(coh, axis=0),
                np.add.reduce(coh.real**2, axis=0),
                np.add.reduce(coh.imag**2, axis=0),
                np.add.reduce(pops, axis=0),
                np.add.reduce(pops**2, axis=0))

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(partials, chunks))
    else:
        results = [partials(c) for c in chunks]

    total = np.zeros(times.size, dtype=complex)
    sq_re = np.zeros(times.size)
    sq_im = np.zeros(times.size)
    pop_total = np.zeros((times.size, 2))
    pop_sq = np.zeros((times.size, 2))
    for part in results:
        total += part[0]
        sq_re += part[1]
        sq_im += part[2]
        pop_total += part[3]
        pop_sq += part[4]

    mean = total / n_traj
    pop_mean = pop_total / n_traj
    if n_traj > 1:
        var_re = np.maximum(sq_re - n_traj * mean.real**2, 0.0) / (n_traj - 1)
        var_im = np.maximum(sq_im - n_traj * mean.imag**2, 0.0) / (n_traj - 1)
        stderr_re = np.sqrt(var_re / n_traj)
        stderr_im = np.sqrt(var_im / n_traj)
        pop_var = np.maximum(pop_sq - n_traj * pop_mean**2, 0.0) \
            / (n_traj - 1)
        pop_err = np.sqrt(pop_var / n_traj)
    else:
        stderr_re = np.zeros(times.size)
        stderr_im = np.zeros(times.size)
        pop_err = np.zeros((times.size, 2))

    metadata = base_metadata(
        spec, model,
        source="floquet_ramsey",
        engine="floquet_grid",
        control_offset=0.0,
        subspace_dim=dim,
        stream_index=int(stream_index),
        dt=float(dt),
        drive_amplitude=float(drive.amplitude),
        drive_omega=float(drive.omega_d),
        drive_alpha=float(drive.alpha),
        drive_harmonic=int(drive.harmonic),
        amp_jitter=float(amp_jitter),
        m_samples=int(m),
        quasi_splitting=solution.splitting,
    )
    series = CoherenceSeries(times=times, rho_eg=mean, stderr_re=stderr_re,
                             stderr_im=stderr_im, ensemble_size=n_traj,
                             master_seed=model.master_seed,
                             protocol=Protocol.ramsey(), metadata=metadata)
    return FloquetRamseyResult(coherence=series,
                               pop_ground=pop_mean[:, 0],
                               pop_excited=pop_mean[:, 1],
                               pop_ground_err=pop_err[:, 0],
                               pop_excited_err=pop_err[:, 1],
                               quasi_splitting=solution.splitting)
