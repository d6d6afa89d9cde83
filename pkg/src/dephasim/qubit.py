"""Heavy-fluxonium qubit spectra and flux-dispersion derivatives.

The circuit Hamiltonian is H = 4 E_C n^2 + E_L (phi + u)^2 / 2 - E_J cos(phi)
with u the total external phase offset.  At the half-flux sweet spot
(u = pi) the potential is a symmetric double well; the ground doublet is the
qubit, split by the tunneling amplitude.  Everything is represented in the
harmonic-oscillator basis of the quadratic part.

The flux-noise coupling operator is x = E_L (phi + sweet_spot_phase): the
derivative of H with respect to the offset, taken about the sweet-spot frame
so that its diagonal vanishes at the sweet spot (the dropped c-number shifts
every level equally and cannot affect transitions or coherences).  First and
second derivatives of the qubit splitting with respect to the deviation
lambda = u - sweet_spot_phase follow from standard perturbation theory in x
and are cross-checked internally against Richardson-extrapolated finite
differences of the exact spectrum.

Units: energies and rates in rad/ns, phases in rad.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg

__all__ = [
    "QubitSpec",
    "SpectrumSlice",
    "DispersionDerivatives",
    "heavy_fluxonium",
    "build_hamiltonian",
    "phase_operator",
    "eigensolve",
    "dispersion_derivatives",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class QubitSpec:
    """Circuit parameters and numerical dimensions.

    Attributes:
        e_c: charging energy, rad/ns.
        e_l: inductive energy, rad/ns.
        e_j: Josephson energy, rad/ns.
        sweet_spot_phase: offset of the symmetric operating point, rad.
        basis_dim: number of oscillator levels kept when diagonalizing.
        subspace_dim: number of eigenstates retained for dynamics.
    """

    e_c: float
    e_l: float
    e_j: float
    sweet_spot_phase: float = np.pi
    basis_dim: int = 120
    subspace_dim: int = 6

    def __post_init__(self) -> None:
        if min(self.e_c, self.e_l) <= 0 or self.e_j < 0:
            raise ValueError("E_C and E_L must be positive, E_J non-negative")
        if self.subspace_dim < 2:
            raise ValueError("subspace_dim must be at least 2")
        if self.basis_dim < 4 * self.subspace_dim:
            raise ValueError("basis_dim must be at least 4x subspace_dim")

    @property
    def osc_frequency(self) -> float:
        """Oscillator spacing sqrt(8 E_C E_L) of the quadratic part."""
        return float(np.sqrt(8.0 * self.e_c * self.e_l))

    @property
    def phi_zpf(self) -> float:
        return float((2.0 * self.e_c / self.e_l) ** 0.25)


def heavy_fluxonium(basis_dim: int = 120, subspace_dim: int = 6) -> QubitSpec:
    """Reference heavy-fluxonium parameter set (E_C, E_L, E_J)/2pi =
    (0.479, 0.132, 3.395) GHz, with a ~14 MHz sweet-spot splitting."""
    return QubitSpec(
        e_c=TWO_PI * 0.479,
        e_l=TWO_PI * 0.132,
        e_j=TWO_PI * 3.395,
        basis_dim=basis_dim,
        subspace_dim=subspace_dim,
    )


@lru_cache(maxsize=32)
def _operators(e_c: float, e_l: float, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Oscillator-basis phi, n^2 and cos/sin building blocks (cached)."""
    phi_zpf = (2.0 * e_c / e_l) ** 0.25
    n_zpf = (e_l / (32.0 * e_c)) ** 0.25
    ladder = np.sqrt(np.arange(1, dim, dtype=float))
    phi = np.zeros((dim, dim))
    phi[np.arange(dim - 1), np.arange(1, dim)] = phi_zpf * ladder
    phi += phi.T
    # n = i n_zpf (a^dag - a) is purely imaginary; n^2 is real symmetric.
    n_mat = np.zeros((dim, dim))
    n_mat[np.arange(dim - 1), np.arange(1, dim)] = -n_zpf * ladder
    n_mat += -n_mat.T  # antisymmetric real part of -i*n
    n_sq = -(n_mat @ n_mat)
    # cos(phi) through the exact spectral decomposition of phi
    evals, evecs = np.linalg.eigh(phi)
    cos_phi = (evecs * np.cos(evals)) @ evecs.T
    cos_phi = 0.5 * (cos_phi + cos_phi.T)
    return phi, n_sq, cos_phi


def phase_operator(spec: QubitSpec) -> np.ndarray:
    """The oscillator-basis phi matrix."""
    phi, _, _ = _operators(spec.e_c, spec.e_l, spec.basis_dim)
    return phi.copy()


def build_hamiltonian(spec: QubitSpec, total_phase_offset: float) -> np.ndarray:
    """Full-circuit Hamiltonian for a given total phase offset, rad/ns.

    The offset enters only through the inductive term
    E_L (phi + total_phase_offset)^2 / 2; the Josephson term is untouched.
    The returned matrix is real symmetric to machine precision.
    """
    phi, n_sq, cos_phi = _operators(spec.e_c, spec.e_l, spec.basis_dim)
    u = total_phase_offset
    dim = spec.basis_dim
    h = 4.0 * spec.e_c * n_sq + 0.5 * spec.e_l * (phi @ phi) - spec.e_j * cos_phi
    h += spec.e_l * u * phi
    h[np.arange(dim), np.arange(dim)] += 0.5 * spec.e_l * u * u
    return 0.5 * (h + h.T)


@dataclass(frozen=True)
class SpectrumSlice:
    """Retained eigenpairs at one operating point.

    energies are ascending, rad/ns; x_elements is the Hermitian matrix of
    <j| E_L (phi + sweet_spot_phase) |k> over the retained levels, rad/ns.
    """

    energies: np.ndarray
    x_elements: np.ndarray
    control_offset: float
    noise_offset: float

    @property
    def splitting(self) -> float:
        """Qubit transition energy (level 1 minus level 0)."""
        return float(self.energies[1] - self.energies[0])


def eigensolve(spec: QubitSpec, control_offset: float = 0.0,
               noise_offset: float = 0.0, n_levels: int | None = None) -> SpectrumSlice:
    """Diagonalize at u = sweet_spot_phase + control_offset + noise_offset.

    Keeps n_levels eigenpairs (default spec.subspace_dim).  The eigenvector
    gauge makes each vector's largest-magnitude component real positive, so
    repeated solves give identical matrices.
    """
    if n_levels is None:
        n_levels = spec.subspace_dim
    if n_levels > spec.basis_dim:
        raise ValueError("n_levels exceeds basis_dim")
    u = spec.sweet_spot_phase + control_offset + noise_offset
    h = build_hamiltonian(spec, u)
    energies, vecs = scipy.linalg.eigh(h, subset_by_index=(0, n_levels - 1))

    # residual check against the full matrix
    h_norm = np.linalg.norm(h, 2)
    residual = np.linalg.norm(h @ vecs - vecs * energies, axis=0).max()
    if residual > 1e-10 * h_norm:
        raise ArithmeticError(f"eigensolve residual {residual:.3e} exceeds tolerance")

    # gauge: largest-|component| entry made positive
    lead = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[lead, np.arange(n_levels)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs

    phi, _, _ = _operators(spec.e_c, spec.e_l, spec.basis_dim)
    x_full = spec.e_l * phi
    x_proj = vecs.T @ x_full @ vecs
    x_proj[np.arange(n_levels), np.arange(n_levels)] += spec.e_l * spec.sweet_spot_phase
    x_proj = 0.5 * (x_proj + x_proj.T)
    return SpectrumSlice(
        energies=energies.copy(),
        x_elements=x_proj,
        control_offset=control_offset,
        noise_offset=noise_offset,
    )


@dataclass(frozen=True)
class DispersionDerivatives:
    """Flux-dispersion derivatives of the qubit splitting at one offset.

    d1 = d(omega_ge)/d(lambda), rad/ns per rad;
    d2 = d^2(omega_ge)/d(lambda)^2, rad/ns per rad^2.
    Matrix-element values; fd_* are the finite-difference cross-checks.
    """

    d1: float
    d2: float
    fd_d1: float
    fd_d2: float


def _splitting(spec: QubitSpec, lam: float) -> float:
    return eigensolve(spec, lam, 0.0, n_levels=2).splitting


def dispersion_derivatives(spec: QubitSpec, control_offset: float = 0.0,
                           n_levels: int = 20, fd_step: float = 4e-4,
                           rtol: float = 1e-4) -> DispersionDerivatives:
    """First and second splitting derivatives by two independent routes.

    Route one: perturbation-theory matrix elements over n_levels retained
    states, d1 = x_ee - x_gg and
    d2 = 2 [ sum_{j!=e} |x_ej|^2/(w_e-w_j) - sum_{j!=g} |x_gj|^2/(w_g-w_j) ].
    Route two: Richardson-extrapolated central finite differences of the
    exact splitting.  The two must agree to rtol (scaled); the
    matrix-element values are returned.
    """
    sl = eigensolve(spec, control_offset, 0.0, n_levels=n_levels)
    w = sl.energies
    gaps = np.diff(w)
    if np.any(gaps < 1e-9):
        pair = int(np.argmin(gaps))
        raise ArithmeticError(
            f"levels {pair} and {pair + 1} are degenerate to {gaps[pair]:.3e} rad/ns; "
            "derivative sums are ill-conditioned here")
    x = sl.x_elements
    d1 = float(x[1, 1] - x[0, 0])

    def curvature(level: int) -> float:
        others = np.arange(n_levels) != level
        return 2.0 * float(np.sum(np.abs(x[level, others]) ** 2
                                  / (w[level] - w[others])))

    d2 = curvature(1) - curvature(0)

    # finite differences with one Richardson halving step
    def fd1(h: float) -> float:
        return (_splitting(spec, control_offset + h)
                - _splitting(spec, control_offset - h)) / (2.0 * h)

    def fd2(h: float) -> float:
        return (_splitting(spec, control_offset + h)
                - 2.0 * _splitting(spec, control_offset)
                + _splitting(spec, control_offset - h)) / h**2

    h = fd_step
    fd_d1 = (4.0 * fd1(0.5 * h) - fd1(h)) / 3.0
    fd_d2 = (4.0 * fd2(0.5 * h) - fd2(h)) / 3.0

    scale1 = max(abs(d1), abs(fd_d1), abs(d2) * fd_step)
    scale2 = max(abs(d2), abs(fd_d2))
    if abs(d1 - fd_d1) > rtol * scale1:
        raise ArithmeticError(
            f"d1 routes disagree: matrix-element {d1!r} vs finite-difference {fd_d1!r}")
    if abs(d2 - fd_d2) > rtol * scale2:
        raise ArithmeticError(
            f"d2 routes disagree: matrix-element {d2!r} vs finite-difference {fd_d2!r}")
    return DispersionDerivatives(d1=d1, d2=d2, fd_d1=fd_d1, fd_d2=fd_d2)
