"""Shared containers for coherence signals and reproducibility metadata.

The Monte-Carlo engine and the analytic predictor both emit a
:class:`CoherenceSeries` so downstream fitting and CSV export can treat
them uniformly.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .noise import RNG_SCHEME

_RAMSEY = "ramsey"
_ECHO = "echo"


@dataclass(frozen=True)
class Protocol:
    """Pulse sequence selector.

    Attributes:
        kind: "ramsey" (free evolution) or "echo" (single refocusing pulse).
        pulse_time: echo pulse position as a fraction of the horizon.
    """

    kind: str
    pulse_time: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in (_RAMSEY, _ECHO):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.kind == _ECHO and not 0.0 < self.pulse_time < 1.0:
            raise ValueError("echo pulse_time must lie strictly inside (0, 1)")

    @staticmethod
    def ramsey() -> "Protocol":
        return Protocol(_RAMSEY)

    @staticmethod
    def echo(pulse_time: float = 0.5) -> "Protocol":
        return Protocol(_ECHO, pulse_time)

    @property
    def is_echo(self) -> bool:
        return self.kind == _ECHO


def stable_fingerprint(obj) -> str:
    """Returns a short hex digest of a frozen parameter object.

    Floats are rendered with 17 significant digits so the digest is
    invariant under round-tripping but sensitive to any real change.
    """

    parts: list[str] = []

    def walk(node) -> None:
        if dataclasses.is_dataclass(node) and not isinstance(node, type):
            parts.append(type(node).__name__ + "(")
            for f in dataclasses.fields(node):
                parts.append(f.name + "=")
                walk(getattr(node, f.name))
                parts.append(",")
            parts.append(")")
        elif isinstance(node, (tuple, list)):
            parts.append("[")
            for item in node:
                walk(item)
                parts.append(",")
            parts.append("]")
        elif isinstance(node, float):
            parts.append(format(node, ".17g"))
        elif isinstance(node, (int, str, bool)) or node is None:
            parts.append(repr(node))
        else:
            raise TypeError(f"unsupported field type {type(node).__name__}")

    walk(obj)
    digest = hashlib.sha256("".join(parts).encode()).hexdigest()
    return digest[:16]


def base_metadata(qubit_spec, model, **extra: str) -> dict[str, str]:
    """Standard provenance block attached to every emitted series."""

    meta = {
        "qubit_fingerprint": stable_fingerprint(qubit_spec),
        "noise_fingerprint": stable_fingerprint(model),
        "code_version": __version__,
        "rng_scheme": RNG_SCHEME,
    }
    meta.update(extra)
    return meta


@dataclass(eq=False)
class CoherenceSeries:
    """Off-diagonal qubit coherence rho_eg sampled on a time grid.

    Attributes:
        times: sample times, ns.
        rho_eg: complex coherence per time; rho_eg[0] is 1/2 at t=0.
        stderr_re: Monte-Carlo standard error of the real part (zeros for
            analytic predictions).
        stderr_im: same for the imaginary part.
        ensemble_size: number of averaged trajectories (0 for analytic).
        master_seed: seed that reproduces the ensemble.
        protocol: pulse sequence the series corresponds to.
        metadata: provenance (parameter fingerprints, code version, RNG).
    """

    times: np.ndarray
    rho_eg: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    ensemble_size: int
    master_seed: int
    protocol: Protocol
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.rho_eg = np.asarray(self.rho_eg, dtype=complex)
        if self.times.shape != self.rho_eg.shape:
            raise ValueError("times and rho_eg must have matching shapes")
