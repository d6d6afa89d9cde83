"""Config-driven experiment runner emitting reproducible CSV/JSON artifacts.

Experiments are declared in a YAML file whose physical quantities carry
explicit unit suffixes (GHz, kHz, us, rad, ns), so no 2 pi convention is
ever implied. Identical inputs produce byte-identical artifacts: floats
are written with repr, JSON keys are sorted, and no timestamps are
embedded. Every run writes a manifest.json recording the command, the
config file hash, the master seed, the code version, the RNG scheme, and
a sha256 per artifact.

Exit codes: 0 success, 1 failed validation property, 2 config error
(with line and field diagnostics), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import yaml

from . import __version__
from .exact_tlf import (BeatingSpec, CoupledTlf, exact_qubit_coherence,
                        lindblad_oracle, saturation_rate)
from .floquet import (DriveSpec, FloquetBranchError,
                      find_triple_sweet_spot, floquet_solve,
                      fourier_coefficients, simulate_floquet_ramsey)
from .keldysh import FilterKind, predicted_coherence
from .noise import (RNG_SCHEME, NoiseModel, TlfSpec, analytic_correlation,
                    build_gaussian_bath, composite_trace)
from .qubit import QubitSpec, dispersion_derivatives, eigensolve, heavy_fluxonium
from .series import CoherenceSeries, Protocol
from .sse import (FitError, FitResult, fit_exponential_oscillation,
                  prediction_guess, run_ensemble)

TWO_PI = 2.0 * math.pi

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_PAPER_BATH_COUNT = 2001
_PAPER_TRAJECTORY_FACTOR = 10


def _from_khz(value: float) -> float:
    """Cyclic kHz (a quantity quoted as f = omega / 2 pi) to rad/ns."""

    return TWO_PI * 1e-6 * float(value)


def _from_ghz(value: float) -> float:
    """Cyclic GHz to angular rad/ns."""

    return TWO_PI * float(value)


def _from_us(value: float) -> float:
    return 1e3 * float(value)


class ConfigError(ValueError):
    """Schema or value problem in the experiment config."""

    def __init__(self, message: str, path: str = "",
                 line: int | None = None):
        detail = f"{path}: {message}" if path else message
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)


def _map_lines(node, prefix: str, out: dict) -> None:
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(
                key_node.value)
            out[path] = key_node.start_mark.line + 1
            _map_lines(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            path = f"{prefix}[{index}]"
            out[path] = item.start_mark.line + 1
            _map_lines(item, path, out)


def _load_config(path: str) -> tuple[dict, dict, str]:
    """Parse the YAML file; returns (data, key line map, sha256)."""

    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    digest = hashlib.sha256(raw).hexdigest()
    try:
        data = yaml.safe_load(raw)
        node = yaml.compose(raw.decode("utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as err:
        raise ConfigError(f"not valid YAML: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("the top level must be a mapping")
    lines: dict = {}
    if node is not None:
        _map_lines(node, "", lines)
    return data, lines, digest


_REQUIRED = object()


class _Section:
    """Mapping view with schema checks and line-aware diagnostics."""

    def __init__(self, data, path: str, lines: dict):
        if not isinstance(data, dict):
            raise ConfigError("must be a mapping", path, lines.get(path))
        self.data = data
        self.path = path
        self.lines = lines

    def _sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def _line(self, key: str):
        return self.lines.get(self._sub(key), self.lines.get(self.path))

    def check_keys(self, allowed: set) -> None:
        for key in self.data:
            if key not in allowed:
                raise ConfigError("unknown key", self._sub(key),
                                  self._line(key))

    def has(self, key: str) -> bool:
        return key in self.data

    def number(self, key: str, default=_REQUIRED, *, minimum=None,
               maximum=None, integer: bool = False):
        if key not in self.data:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}", self.path,
                                  self.lines.get(self.path))
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("must be a number", self._sub(key),
                              self._line(key))
        if integer and int(value) != value:
            raise ConfigError("must be an integer", self._sub(key),
                              self._line(key))
        if minimum is not None and value < minimum:
            raise ConfigError(f"must be at least {minimum}", self._sub(key),
                              self._line(key))
        if maximum is not None and value > maximum:
            raise ConfigError(f"must be at most {maximum}", self._sub(key),
                              self._line(key))
        return int(value) if integer else float(value)

    def string(self, key: str, default=_REQUIRED, *, choices=None):
        if key not in self.data:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}", self.path,
                                  self.lines.get(self.path))
            return default
        value = self.data[key]
        if not isinstance(value, str):
            raise ConfigError("must be a string", self._sub(key),
                              self._line(key))
        if choices is not None and value not in choices:
            raise ConfigError(f"must be one of {sorted(choices)}",
                              self._sub(key), self._line(key))
        return value

    def numbers(self, key: str, default=_REQUIRED, *, length=None):
        if key not in self.data:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}", self.path,
                                  self.lines.get(self.path))
            return default
        value = self.data[key]
        if not isinstance(value, list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float))
                for v in value):
            raise ConfigError("must be a list of numbers", self._sub(key),
                              self._line(key))
        if length is not None and len(value) != length:
            raise ConfigError(f"must have exactly {length} entries",
                              self._sub(key), self._line(key))
        return [float(v) for v in value]

    def section(self, key: str) -> "_Section":
        return _Section(self.data[key], self._sub(key), self.lines)

    def sections(self, key: str) -> list:
        value = self.data[key]
        if not isinstance(value, list):
            raise ConfigError("must be a list", self._sub(key),
                              self._line(key))
        return [_Section(item, f"{self._sub(key)}[{i}]", self.lines)
                for i, item in enumerate(value)]


@dataclass(frozen=True)
class FloquetPlan:
    """Resolved drive-engineering block of the config."""

    alpha: float
    harmonic: int
    a_range: tuple | None
    omega_range: tuple | None
    grid: tuple
    m_samples: int
    n_harmonics: int
    ramp_steps: int
    amp_jitter: float
    periods: int
    period_stride: int
    sweet_spot_json: str | None


_DEFAULT_FLOQUET = FloquetPlan(
    alpha=1.0, harmonic=1, a_range=None, omega_range=None, grid=(24, 24),
    m_samples=256, n_harmonics=8, ramp_steps=32, amp_jitter=0.0,
    periods=147, period_stride=2, sweet_spot_json=None)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description in internal units (ns, rad)."""

    qubit: QubitSpec
    model: NoiseModel | None
    noise_failures: tuple
    offsets: np.ndarray | None
    trajectories: int
    engine: str
    dt: float
    times: np.ndarray | None
    fit_window: tuple | None
    tolerance: float
    floquet: FloquetPlan | None
    output_dir: str
    master_seed: int
    threads: int
    config_sha256: str
    protocol_name: str | None


_TOP_KEYS = {"output_dir", "master_seed", "threads", "qubit", "noise",
             "protocol", "sweep", "ensemble", "times", "fit", "floquet"}
_QUBIT_KEYS = {"e_c_GHz", "e_l_GHz", "e_j_GHz", "sweet_spot_phase_rad",
               "basis_dim", "subspace_dim"}
_NOISE_KEYS = {"strong_tlfs", "bath"}
_TLF_KEYS = {"amplitude_kHz", "p_minus", "kappa_kHz", "kappa_plus_kHz",
             "kappa_minus_kHz"}
_BATH_KEYS = {"count", "rms_kHz", "kappa_min_kHz", "kappa_max_kHz", "seed"}
_SWEEP_KEYS = {"offsets_kHz", "center_kHz", "step_kHz", "count"}
_ENSEMBLE_KEYS = {"trajectories", "engine", "dt_ns"}
_TIMES_KEYS = {"list_us", "start_us", "stop_us", "step_us"}
_FIT_KEYS = {"window_us", "tolerance"}
_FLOQUET_KEYS = {"alpha", "harmonic", "amplitude_range_rad",
                 "omega_range_GHz", "grid", "m_samples", "n_harmonics",
                 "ramp_steps", "amp_jitter", "periods", "period_stride",
                 "sweet_spot_json"}

_NEEDS = {
    "ramsey_sweep": ("noise", "sweep", "ensemble", "times"),
    "echo_sweep": ("noise", "sweep", "ensemble", "times"),
    "floquet_search": (),
    "floquet_ramsey": ("noise", "ensemble", "times"),
    "validate": (),
}


def _build_qubit(top: _Section) -> QubitSpec:
    base = heavy_fluxonium()
    if not top.has("qubit"):
        return base
    q = top.section("qubit")
    q.check_keys(_QUBIT_KEYS)
    e_c = _from_ghz(q.number("e_c_GHz")) if q.has("e_c_GHz") else base.e_c
    e_l = _from_ghz(q.number("e_l_GHz")) if q.has("e_l_GHz") else base.e_l
    e_j = _from_ghz(q.number("e_j_GHz")) if q.has("e_j_GHz") else base.e_j
    phase = q.number("sweet_spot_phase_rad", base.sweet_spot_phase)
    basis = q.number("basis_dim", base.basis_dim, minimum=20, integer=True)
    subspace = q.number("subspace_dim", base.subspace_dim, minimum=2,
                        integer=True)
    try:
        return QubitSpec(e_c=e_c, e_l=e_l, e_j=e_j, sweet_spot_phase=phase,
                         basis_dim=basis, subspace_dim=subspace)
    except ValueError as err:
        raise ConfigError(str(err), "qubit",
                          top.lines.get("qubit")) from err


def _build_tlf(section: _Section) -> TlfSpec:
    section.check_keys(_TLF_KEYS)
    amplitude = _from_khz(section.number("amplitude_kHz", minimum=0.0))
    p_minus = section.number("p_minus")
    if section.has("kappa_plus_kHz") or section.has("kappa_minus_kHz"):
        kappa_plus = _from_khz(section.number("kappa_plus_kHz", minimum=0.0))
        kappa_minus = _from_khz(section.number("kappa_minus_kHz",
                                               minimum=0.0))
        return TlfSpec(amplitude=amplitude, p_plus=1.0 - p_minus,
                       p_minus=p_minus, kappa_plus=kappa_plus,
                       kappa_minus=kappa_minus)
    kappa = _from_khz(section.number("kappa_kHz", minimum=0.0))
    return TlfSpec.from_total_rate(amplitude, p_minus, kappa)


def _build_noise(top: _Section, master_seed: int, scale: str,
                 lenient: bool) -> tuple:
    """Resolve the noise block; returns (model or None, failure strings).

    With lenient=True (the validate command) a fluctuator whose physical
    values are inconsistent is reported as a named failure string instead
    of aborting the parse, so the property suite can list it.
    """

    if not top.has("noise"):
        return None, ()
    n = top.section("noise")
    n.check_keys(_NOISE_KEYS)
    failures = []
    tlfs = []
    if n.has("strong_tlfs"):
        for sub in n.sections("strong_tlfs"):
            try:
                tlfs.append(_build_tlf(sub))
            except ConfigError:
                raise
            except ValueError as err:
                if not lenient:
                    raise ConfigError(str(err), sub.path,
                                      sub.lines.get(sub.path)) from err
                failures.append(f"{sub.path}: {err}")
    bath: tuple = ()
    if n.has("bath"):
        b = n.section("bath")
        b.check_keys(_BATH_KEYS)
        count = b.number("count", minimum=0, integer=True)
        if scale == "paper":
            count = max(count, _PAPER_BATH_COUNT)
        if count > 0:
            try:
                bath = build_gaussian_bath(
                    count,
                    _from_khz(b.number("rms_kHz", minimum=0.0)),
                    (_from_khz(b.number("kappa_min_kHz", minimum=0.0)),
                     _from_khz(b.number("kappa_max_kHz", minimum=0.0))),
                    seed=b.number("seed", 0, integer=True))
            except ConfigError:
                raise
            except ValueError as err:
                raise ConfigError(str(err), b.path,
                                  b.lines.get(b.path)) from err
    if failures:
        return None, tuple(failures)
    return NoiseModel(strong_tlfs=tuple(tlfs), bath=bath,
                      master_seed=master_seed), ()


def _build_offsets(top: _Section) -> np.ndarray | None:
    if not top.has("sweep"):
        return None
    s = top.section("sweep")
    s.check_keys(_SWEEP_KEYS)
    if s.has("offsets_kHz"):
        values = s.numbers("offsets_kHz")
        if not values:
            raise ConfigError("must not be empty", s._sub("offsets_kHz"),
                              s._line("offsets_kHz"))
        return np.array([_from_khz(v) for v in values])
    count = s.number("count", minimum=1, integer=True)
    step = _from_khz(s.number("step_kHz", minimum=0.0))
    center = _from_khz(s.number("center_kHz", 0.0))
    index = np.arange(count) - 0.5 * (count - 1)
    return center + index * step


def _build_times(top: _Section) -> np.ndarray | None:
    if not top.has("times"):
        return None
    t = top.section("times")
    t.check_keys(_TIMES_KEYS)
    if t.has("list_us"):
        values = np.array([_from_us(v) for v in t.numbers("list_us")])
        if values.size == 0 or values[0] < 0 \
                or np.any(np.diff(values) <= 0):
            raise ConfigError("must be non-negative, non-empty and "
                              "strictly increasing",
                              t._sub("list_us"), t._line("list_us"))
        return values
    start = t.number("start_us", 0.0, minimum=0.0)
    stop = t.number("stop_us", minimum=0.0)
    step = t.number("step_us", minimum=0.0)
    if step <= 0 or stop <= start:
        raise ConfigError("needs stop_us > start_us and step_us > 0",
                          t.path, t.lines.get(t.path))
    return 1e3 * np.arange(start, stop + 0.5 * step, step)


def _build_floquet(top: _Section) -> FloquetPlan | None:
    if not top.has("floquet"):
        return None
    f = top.section("floquet")
    f.check_keys(_FLOQUET_KEYS)
    a_range = None
    if f.has("amplitude_range_rad"):
        lo, hi = f.numbers("amplitude_range_rad", length=2)
        a_range = (lo, hi)
    omega_range = None
    if f.has("omega_range_GHz"):
        lo, hi = f.numbers("omega_range_GHz", length=2)
        omega_range = (_from_ghz(lo), _from_ghz(hi))
    grid = (24, 24)
    if f.has("grid"):
        gx, gy = f.numbers("grid", length=2)
        if int(gx) != gx or int(gy) != gy or gx < 3 or gy < 3:
            raise ConfigError("entries must be integers of at least 3",
                              f._sub("grid"), f._line("grid"))
        grid = (int(gx), int(gy))
    return FloquetPlan(
        alpha=f.number("alpha", 1.0),
        harmonic=f.number("harmonic", 1, minimum=1, integer=True),
        a_range=a_range, omega_range=omega_range, grid=grid,
        m_samples=f.number("m_samples", 256, minimum=8, integer=True),
        n_harmonics=f.number("n_harmonics", 8, minimum=1, integer=True),
        ramp_steps=f.number("ramp_steps", 32, minimum=1, integer=True),
        amp_jitter=f.number("amp_jitter", 0.0, minimum=0.0),
        periods=f.number("periods", 147, minimum=2, integer=True),
        period_stride=f.number("period_stride", 2, minimum=1, integer=True),
        sweet_spot_json=f.string("sweet_spot_json", None))


def resolve_config(path: str, command: str, *, out_dir: str | None = None,
                   seed_override: int | None = None,
                   threads_override: int | None = None,
                   scale: str = "desk") -> ExperimentConfig:
    """Load, schema-check, and unit-convert one experiment config.

    Unknown keys anywhere are rejected with the offending path and source
    line. CLI flags override config values; DEPHASIM_THREADS sits between
    --threads and the config's threads key. The returned offsets, times,
    and rates are all in internal units (rad, ns, rad/ns).
    """

    if command not in _NEEDS:
        raise ConfigError(f"unknown command {command!r}")
    data, lines, digest = _load_config(path)
    top = _Section(data, "", lines)
    top.check_keys(_TOP_KEYS)
    for block in _NEEDS[command]:
        if not top.has(block):
            raise ConfigError(
                f"command {command} requires the {block!r} block")

    master_seed = seed_override if seed_override is not None else top.number(
        "master_seed", 0, integer=True)
    threads = threads_override
    if threads is None:
        env = os.environ.get("DEPHASIM_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError as err:
                raise ConfigError(
                    f"DEPHASIM_THREADS must be an integer, got {env!r}"
                ) from err
    if threads is None:
        threads = top.number("threads", 1, integer=True)
    if threads < 1:
        raise ConfigError("threads must be at least 1")

    protocol_name = top.string("protocol", None,
                               choices={"ramsey", "echo"})
    expected = {"ramsey_sweep": "ramsey", "echo_sweep": "echo"}.get(command)
    if protocol_name is not None and expected is not None \
            and protocol_name != expected:
        raise ConfigError(
            f"protocol {protocol_name!r} conflicts with command {command}",
            "protocol", lines.get("protocol"))

    model, failures = _build_noise(top, master_seed, scale,
                                   lenient=command == "validate")

    trajectories, engine, dt = 1, "grid", 1.0
    if top.has("ensemble"):
        e = top.section("ensemble")
        e.check_keys(_ENSEMBLE_KEYS)
        trajectories = e.number("trajectories", minimum=1, integer=True)
        engine = e.string("engine", "grid", choices={"grid", "exact"})
        dt = e.number("dt_ns", 1.0)
        if dt <= 0:
            raise ConfigError("must be positive", "ensemble.dt_ns",
                              lines.get("ensemble.dt_ns"))
    if scale == "paper":
        trajectories *= _PAPER_TRAJECTORY_FACTOR

    fit_window, tolerance = None, 0.2
    if top.has("fit"):
        fit = top.section("fit")
        fit.check_keys(_FIT_KEYS)
        if fit.has("window_us"):
            lo, hi = fit.numbers("window_us", length=2)
            if not 0 <= lo < hi:
                raise ConfigError("must satisfy 0 <= lo < hi",
                                  "fit.window_us", lines.get("fit.window_us"))
            fit_window = (_from_us(lo), _from_us(hi))
        tolerance = fit.number("tolerance", 0.2, minimum=0.0)

    resolved_out = out_dir if out_dir is not None else top.string(
        "output_dir", "artifacts")

    return ExperimentConfig(
        qubit=_build_qubit(top), model=model, noise_failures=failures,
        offsets=_build_offsets(top), trajectories=trajectories,
        engine=engine, dt=dt, times=_build_times(top),
        fit_window=fit_window, tolerance=tolerance,
        floquet=_build_floquet(top), output_dir=resolved_out,
        master_seed=master_seed, threads=threads, config_sha256=digest,
        protocol_name=protocol_name)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    """RFC 4180 output: CRLF line ends, '.' decimal, repr-exact floats."""

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(cell) if isinstance(cell, float)
                             else cell for cell in row])


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_series(path: str, series: CoherenceSeries) -> None:
    rows = [[float(t), float(z.real), float(z.imag), float(se_r),
             float(se_i)]
            for t, z, se_r, se_i in zip(series.times, series.rho_eg,
                                        series.stderr_re, series.stderr_im)]
    _write_csv(path, ["time_ns", "re", "im", "stderr_re", "stderr_im"],
               rows)


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_sha256": cfg.config_sha256,
            "master_seed": cfg.master_seed,
            "code_version": __version__,
            "rng_scheme": RNG_SCHEME}


def _write_manifest(cfg: ExperimentConfig, command: str,
                    paths: Sequence[str]) -> str:
    artifacts = {}
    for path in sorted(paths):
        with open(path, "rb") as handle:
            artifacts[os.path.basename(path)] = hashlib.sha256(
                handle.read()).hexdigest()
    payload = {"command": command, "artifacts": artifacts,
               **_provenance(cfg)}
    manifest = os.path.join(cfg.output_dir, "manifest.json")
    _write_json(manifest, payload)
    return manifest


def _fit_series(series: CoherenceSeries, window: tuple,
                guess: tuple) -> FitResult:
    """Fit keeping the best-effort parameters when convergence fails."""

    try:
        return fit_exponential_oscillation(series, window,
                                           initial_guess=guess)
    except FitError as err:
        return err.result


def _run_sweep(cfg: ExperimentConfig, protocol: Protocol,
               kind: FilterKind, command: str) -> tuple[list, list]:
    """Ensemble, fit, and analytic prediction at every control offset.

    Reuses the per-offset seed sub-stream convention (stream i for grid
    index i), so CLI sweeps reproduce library sweeps point by point. The
    prediction column is obtained by fitting the analytic coherence over
    the same window and grid as the data, keeping both columns subject to
    the same window bias.
    """

    window = cfg.fit_window if cfg.fit_window is not None else (
        float(cfg.times[0]), float(cfg.times[-1]))
    is_echo = protocol.is_echo
    plateau = 0.0
    if is_echo and cfg.model.strong_tlfs:
        plateau = saturation_rate([
            CoupledTlf(delta_omega=1.0, p_plus=tlf.p_plus,
                       p_minus=tlf.p_minus, kappa_plus=tlf.kappa_plus,
                       kappa_minus=tlf.kappa_minus)
            for tlf in cfg.model.strong_tlfs])

    rows = []
    paths = []
    for index, offset in enumerate(np.asarray(cfg.offsets, dtype=float)):
        offset = float(offset)
        series = run_ensemble(cfg.qubit, offset, cfg.model, protocol,
                              cfg.times, cfg.trajectories,
                              engine=cfg.engine, dt=cfg.dt,
                              stream_index=index, threads=cfg.threads)
        guess = prediction_guess(cfg.qubit, offset, cfg.model, protocol,
                                 window)
        fit = _fit_series(series, window, guess)
        prediction = predicted_coherence(cfg.qubit, offset, cfg.model,
                                         kind, cfg.times)
        if is_echo:
            # The measured echo series does not rotate (the refocusing
            # pulse cancels the deterministic phase), so fit the
            # prediction's envelope for a like-for-like rate column.
            prediction = replace(
                prediction,
                rho_eg=np.abs(prediction.rho_eg).astype(complex))
        pred_fit = _fit_series(prediction, window, guess)
        row = [offset, offset / TWO_PI * 1e6,
               float(fit.gamma2), float(fit.omega_fit),
               float(fit.residual), int(fit.converged),
               float(pred_fit.gamma2), float(pred_fit.omega_fit)]
        if is_echo:
            gap = abs(fit.gamma2 - pred_fit.gamma2)
            scale = max(abs(pred_fit.gamma2), 1e-30)
            row.append(float(plateau))
            row.append(int(gap <= cfg.tolerance * scale))
        rows.append(row)
        trace_path = os.path.join(cfg.output_dir, f"trace_{index:02d}.csv")
        _write_series(trace_path, series)
        paths.append(trace_path)

    header = ["lambda_rad", "lambda_over_2pi_kHz", "gamma2_per_ns",
              "omega_fit_rad_per_ns", "fit_residual", "fit_converged",
              "gamma2_pred_per_ns", "omega_pred_rad_per_ns"]
    if is_echo:
        header += ["saturation_rate_per_ns", "within_tolerance"]
    sweep_path = os.path.join(cfg.output_dir, f"{command}.csv")
    _write_csv(sweep_path, header, rows)
    return [sweep_path] + paths, rows


def cmd_ramsey_sweep(cfg: ExperimentConfig) -> int:
    """Fitted and predicted Ramsey rates side by side over the grid."""

    paths, rows = _run_sweep(cfg, Protocol.ramsey(), FilterKind.RAMSEY_REAL,
                             "ramsey_sweep")
    manifest = _write_manifest(cfg, "ramsey_sweep", paths)
    best = min(rows, key=lambda row: row[2])
    print(f"ramsey sweep: {len(rows)} offsets -> {paths[0]}")
    print(f"slowest dephasing at lambda = {best[0]:.6e} rad "
          f"(gamma2 = {best[2]:.6e} /ns)")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_echo_sweep(cfg: ExperimentConfig) -> int:
    """Echo-rate sweep with the analytic overlay and saturation plateau."""

    paths, rows = _run_sweep(cfg, Protocol.echo(), FilterKind.ECHO,
                             "echo_sweep")
    manifest = _write_manifest(cfg, "echo_sweep", paths)
    agreement = all(row[9] for row in rows)
    print(f"echo sweep: {len(rows)} offsets -> {paths[0]}")
    print(f"saturation plateau: {rows[0][8]:.6e} /ns")
    print("analytic agreement: " + ("pass" if agreement else "FAIL"))
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_floquet_search(cfg: ExperimentConfig) -> int:
    """Scan and refine the drive point where slope and curvature vanish."""

    plan = cfg.floquet if cfg.floquet is not None else _DEFAULT_FLOQUET
    scan_path = os.path.join(cfg.output_dir, "floquet_scan.csv")
    result = find_triple_sweet_spot(
        cfg.qubit, plan.alpha, plan.harmonic, a_range=plan.a_range,
        omega_range=plan.omega_range, grid=plan.grid,
        m_samples=plan.m_samples, n_harmonics=plan.n_harmonics,
        ramp_steps=plan.ramp_steps, csv_path=scan_path)

    payload = {"found": bool(result.found),
               "alpha": plan.alpha,
               "harmonic": plan.harmonic,
               "amplitude_rad": result.amplitude,
               "omega_d_rad_per_ns": result.omega_d,
               "splitting_rad_per_ns": result.splitting,
               "d2_rad_per_ns_per_rad2": result.d2,
               "de_da_per_rad": result.de_da,
               "newton_iterations": result.newton_iterations,
               "message": result.message,
               **_provenance(cfg)}
    spot_path = os.path.join(cfg.output_dir, "sweet_spot.json")
    _write_json(spot_path, payload)
    paths = [scan_path, spot_path]

    if result.found:
        drive = result.drive
        quasi_rows = []
        for a in np.linspace(0.0, drive.amplitude, 9):
            solution = floquet_solve(cfg.qubit, 0.0,
                                     drive.with_amplitude(float(a)),
                                     m_samples=plan.m_samples,
                                     ramp_steps=plan.ramp_steps)
            quasi_rows.append([float(a), float(solution.splitting)])
        quasi_path = os.path.join(cfg.output_dir, "quasi_vs_amplitude.csv")
        _write_csv(quasi_path, ["a_rad", "splitting_rad_per_ns"],
                   quasi_rows)

        offset_rows = []
        for lam in np.linspace(-4e-3, 4e-3, 9):
            solution = floquet_solve(cfg.qubit, float(lam), drive,
                                     m_samples=plan.m_samples,
                                     ramp_steps=plan.ramp_steps)
            offset_rows.append([float(lam), float(solution.splitting)])
        offset_path = os.path.join(cfg.output_dir,
                                   "splitting_vs_offset.csv")
        _write_csv(offset_path, ["lambda_rad", "splitting_rad_per_ns"],
                   offset_rows)
        paths += [quasi_path, offset_path]

        print("triply protected point found:")
        print(f"  amplitude = {result.amplitude:.9e} rad")
        print(f"  omega_d   = {result.omega_d:.9e} rad/ns")
        print(f"  splitting = {result.splitting:.9e} rad/ns")
        print(f"  |d2| = {abs(result.d2):.3e}, "
              f"|de_da| = {abs(result.de_da):.3e}")
    else:
        print(f"no protected point in the window: {result.message}")

    manifest = _write_manifest(cfg, "floquet_search", paths)
    print(f"manifest: {manifest}")
    return EXIT_OK


def _load_sweet_spot(cfg: ExperimentConfig, plan: FloquetPlan) -> DriveSpec:
    path = plan.sweet_spot_json if plan.sweet_spot_json is not None \
        else os.path.join(cfg.output_dir, "sweet_spot.json")
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read sweet-spot file: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"sweet-spot file is not valid JSON: {err}") from err
    if not payload.get("found", False):
        raise ConfigError(f"{path}: records found=false; run "
                          "floquet_search over a window containing the "
                          "protected point first")
    try:
        return DriveSpec(amplitude=float(payload["amplitude_rad"]),
                         omega_d=float(payload["omega_d_rad_per_ns"]),
                         alpha=float(payload.get("alpha", 1.0)),
                         harmonic=int(payload.get("harmonic", 1)))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(
            f"{path}: incomplete sweet-spot record: {err}") from err


def _alias_frequency(splitting: float, sample_spacing: float) -> float:
    """Apparent rotation rate of exp(-i splitting t) sampled every step."""

    sample_rate = TWO_PI / sample_spacing
    fraction = (splitting / sample_rate) % 1.0
    return min(fraction, 1.0 - fraction) * sample_rate


def cmd_floquet_ramsey(cfg: ExperimentConfig) -> int:
    """Free-evolution decay at the protected drive point versus static.

    Runs three ensembles: the undriven qubit at the static sweet spot, the
    driven qubit sampled stroboscopically at the protected point, and the
    same drive with relative amplitude jitter resampled per trajectory.
    The improvement factor is the ratio of fitted dephasing rates.
    """

    plan = cfg.floquet if cfg.floquet is not None else _DEFAULT_FLOQUET
    drive = _load_sweet_spot(cfg, plan)
    window = cfg.fit_window if cfg.fit_window is not None else (
        float(cfg.times[0]), float(cfg.times[-1]))

    static = run_ensemble(cfg.qubit, 0.0, cfg.model, Protocol.ramsey(),
                          cfg.times, cfg.trajectories, engine=cfg.engine,
                          dt=cfg.dt, stream_index=0, threads=cfg.threads)
    static_guess = prediction_guess(cfg.qubit, 0.0, cfg.model,
                                    Protocol.ramsey(), window)
    static_fit = _fit_series(static, window, static_guess)

    stride = plan.period_stride * drive.period
    strobe = stride * np.arange(plan.periods)
    driven_window = (0.0, float(strobe[-1]))
    driven = simulate_floquet_ramsey(
        cfg.qubit, cfg.model, drive, strobe, cfg.trajectories,
        m_samples=plan.m_samples, ramp_steps=plan.ramp_steps,
        stream_index=1, threads=cfg.threads)
    alias = _alias_frequency(driven.quasi_splitting, stride)
    driven_fit = _fit_series(driven.coherence, driven_window,
                             (0.5, 1e-6, alias, 0.0))

    paths = []
    static_path = os.path.join(cfg.output_dir, "static_trace.csv")
    _write_series(static_path, static)
    driven_path = os.path.join(cfg.output_dir, "driven_trace.csv")
    _write_series(driven_path, driven.coherence)
    paths += [static_path, driven_path]

    jitter_fit = None
    if plan.amp_jitter > 0.0:
        jitter = simulate_floquet_ramsey(
            cfg.qubit, cfg.model, drive, strobe, cfg.trajectories,
            amp_jitter=plan.amp_jitter, m_samples=plan.m_samples,
            ramp_steps=plan.ramp_steps, stream_index=1,
            threads=cfg.threads)
        jitter_fit = _fit_series(
            jitter.coherence, driven_window,
            (0.5, max(driven_fit.gamma2, 1e-7), alias, 0.0))
        jitter_path = os.path.join(cfg.output_dir, "jitter_trace.csv")
        _write_series(jitter_path, jitter.coherence)
        paths.append(jitter_path)

    improvement = static_fit.gamma2 / max(driven_fit.gamma2, 1e-30)
    report = {"static_gamma2_per_ns": float(static_fit.gamma2),
              "driven_gamma2_per_ns": float(driven_fit.gamma2),
              "improvement_factor": float(improvement),
              "quasi_splitting_rad_per_ns": float(driven.quasi_splitting),
              "amplitude_rad": drive.amplitude,
              "omega_d_rad_per_ns": drive.omega_d,
              "amp_jitter": plan.amp_jitter,
              **_provenance(cfg)}
    if jitter_fit is not None:
        jitter_improvement = static_fit.gamma2 / max(jitter_fit.gamma2,
                                                     1e-30)
        report["jitter_gamma2_per_ns"] = float(jitter_fit.gamma2)
        report["jitter_improvement_factor"] = float(jitter_improvement)
        report["jitter_retention"] = float(
            jitter_improvement / max(improvement, 1e-30))
    report_path = os.path.join(cfg.output_dir, "improvement_report.json")
    _write_json(report_path, report)
    paths.append(report_path)

    manifest = _write_manifest(cfg, "floquet_ramsey", paths)
    print(f"static  gamma2 = {static_fit.gamma2:.6e} /ns")
    print(f"driven  gamma2 = {driven_fit.gamma2:.6e} /ns "
          f"({improvement:.2f}x slower dephasing)")
    if jitter_fit is not None:
        print(f"jitter  gamma2 = {jitter_fit.gamma2:.6e} /ns "
              f"(retains {report['jitter_retention']:.2f} of the "
              "improvement)")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _check_moments(cfg: ExperimentConfig) -> list[str]:
    """MC moments of one telegraph process against the exact formulas."""

    if cfg.model is not None and cfg.model.strong_tlfs:
        spec = cfg.model.strong_tlfs[0]
    else:
        spec = TlfSpec.from_total_rate(_from_khz(90.0), 0.65,
                                       _from_khz(200.0))
    kappa = spec.kappa_plus + spec.kappa_minus
    if kappa <= 0:
        return ["telegraph moments: fluctuator never switches, "
                "nothing to sample"]
    tau = 1.0 / kappa
    model = NoiseModel(strong_tlfs=(spec,), bath=(),
                       master_seed=cfg.master_seed)
    n_traces = 1500
    lags = np.array([0.0, tau, 2.0 * tau])
    samples = np.empty((n_traces, lags.size))
    for i in range(n_traces):
        trace = composite_trace(model, float(lags[-1]), i, stream_index=7)
        samples[i] = trace.value_at(lags)
    failures = []
    pair = samples[:, 0] * samples[:, 1]
    exact2 = analytic_correlation(spec, [tau, 0.0])
    se2 = float(np.std(pair, ddof=1)) / math.sqrt(n_traces)
    if abs(float(np.mean(pair)) - exact2) > 5.0 * max(se2, 1e-300):
        failures.append(
            f"telegraph moments: second moment at lag tau deviates "
            f"({np.mean(pair):.4e} vs exact {exact2:.4e}, se {se2:.1e})")
    triple = samples[:, 0] * samples[:, 1] * samples[:, 2]
    exact3 = analytic_correlation(spec, [2.0 * tau, tau, 0.0])
    se3 = float(np.std(triple, ddof=1)) / math.sqrt(n_traces)
    if abs(float(np.mean(triple)) - exact3) > 5.0 * max(se3, 1e-300):
        failures.append(
            f"telegraph moments: third moment deviates "
            f"({np.mean(triple):.4e} vs exact {exact3:.4e}, se {se3:.1e})")
    return failures


def _check_sweet_spot(cfg: ExperimentConfig) -> list[str]:
    """First derivative zero and splitting even at the operating point."""

    failures = []
    derivs = dispersion_derivatives(cfg.qubit, 0.0, n_levels=6)
    bound = 1e-9 * cfg.qubit.e_l
    if abs(derivs.d1) > bound:
        failures.append(
            f"static dispersion: |d1| = {abs(derivs.d1):.3e} rad/ns per "
            f"rad exceeds {bound:.3e} at the sweet spot")
    lam = _from_khz(60.0)
    plus = eigensolve(cfg.qubit, lam, 0.0, n_levels=2).splitting
    minus = eigensolve(cfg.qubit, -lam, 0.0, n_levels=2).splitting
    if abs(plus - minus) > 1e-10 * abs(plus):
        failures.append(
            f"static dispersion: splitting is not even in the offset "
            f"({plus!r} vs {minus!r})")
    return failures


def _check_exact_vs_lindblad(cfg: ExperimentConfig) -> list[str]:
    """Closed-form beating coherence against dense integration."""

    rng = np.random.default_rng(cfg.master_seed + 17)
    worst = 0.0
    for _ in range(3):
        count = int(rng.integers(1, 3))
        tlfs = tuple(
            CoupledTlf.from_total_rate(
                delta_omega=float(rng.uniform(-1.2, 1.2)),
                p_minus=float(rng.uniform(0.2, 0.8)),
                kappa=float(rng.uniform(0.15, 0.7)))
            for _ in range(count))
        spec = BeatingSpec(qubit_splitting=float(rng.uniform(0.0, 0.5)),
                           tlfs=tlfs)
        horizon = 5.0 / min(t.kappa for t in tlfs)
        times = np.linspace(horizon / 5.0, horizon, 5)
        closed = exact_qubit_coherence(spec, times)
        dense = lindblad_oracle(spec, times).rho_eg
        worst = max(worst, float(np.max(np.abs(closed - dense))))
    if worst > 1e-8:
        return [f"exact vs lindblad: max deviation {worst:.3e} "
                "exceeds 1e-8"]
    return []


def _check_floquet_parity(cfg: ExperimentConfig) -> list[str]:
    """Driven dc dispersion components vanish at the sweet spot."""

    drive = DriveSpec(amplitude=0.012, omega_d=0.06, alpha=1.0, harmonic=1)
    solution = floquet_solve(cfg.qubit, 0.0, drive)
    bound = 1e-8 * cfg.qubit.e_l
    failures = []
    for level in (0, 1):
        dc = fourier_coefficients(solution, level, level, 1)[1]
        if abs(dc) > bound:
            failures.append(
                f"floquet parity: level-{level} dc component "
                f"{abs(dc):.3e} exceeds {bound:.3e}")
    return failures


def _check_oversized_registry(cfg: ExperimentConfig) -> list[str]:
    """Closed forms stay usable beyond the enumeration limit."""

    tlfs = tuple(
        CoupledTlf.from_total_rate(delta_omega=_from_khz(50.0),
                                   p_minus=0.5, kappa=_from_khz(100.0))
        for _ in range(25))
    rate = saturation_rate(tlfs)
    failures = []
    if not (math.isfinite(rate) and rate > 0):
        failures.append(
            f"oversized registry: saturation rate {rate!r} is not a "
            "positive finite number for 25 fluctuators")
    spec = BeatingSpec(qubit_splitting=0.0872, tlfs=tlfs)
    coherence = exact_qubit_coherence(spec, np.linspace(0.0, 1e4, 5))
    if not np.all(np.isfinite(coherence)) \
            or float(np.max(np.abs(coherence))) > 0.5 + 1e-12:
        failures.append(
            "oversized registry: closed-form coherence left the "
            "physical disk for 25 fluctuators")
    return failures


def cmd_validate(cfg: ExperimentConfig) -> int:
    """Run the property suite and list any failures.

    Checks: fluctuator construction (detailed balance and positivity,
    naming the offending entry), telegraph moments against the exact
    formulas, the static sweet-spot conditions, closed-form beating
    coherence against dense integration, driven parity protection, and
    closed-form behavior past the enumeration limit.
    """

    failures = list(cfg.noise_failures)
    checks: Sequence[tuple[str, Callable[[ExperimentConfig], list[str]]]] = (
        ("telegraph moments", _check_moments),
        ("static dispersion", _check_sweet_spot),
        ("exact vs lindblad", _check_exact_vs_lindblad),
        ("floquet parity", _check_floquet_parity),
        ("oversized registry", _check_oversized_registry),
    )
    for name, check in checks:
        try:
            failures.extend(check(cfg))
        except Exception as err:  # noqa: BLE001 - report, never crash
            failures.append(f"{name}: raised {type(err).__name__}: {err}")

    if failures:
        for failure in failures:
            print(f"FAIL {failure}")
        print(f"validate: {len(failures)} failed properties")
        return EXIT_PROPERTY
    print("validate: all properties hold")
    return EXIT_OK


_COMMANDS = {
    "ramsey_sweep": cmd_ramsey_sweep,
    "echo_sweep": cmd_echo_sweep,
    "floquet_search": cmd_floquet_search,
    "floquet_ramsey": cmd_floquet_ramsey,
    "validate": cmd_validate,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dephasim",
        description="Dephasing experiments near a flux sweet spot: "
                    "analytic predictions, trajectory ensembles, and "
                    "drive engineering, from one YAML config.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True,
                        help="experiment YAML file")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (overrides DEPHASIM_THREADS "
                             "and the config)")
    parser.add_argument("--scale", choices=("desk", "paper"),
                        default="desk",
                        help="paper scale raises the bath size to at "
                             "least 2001 members and multiplies "
                             "trajectories by 10")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.command, out_dir=args.out,
                             seed_override=args.seed,
                             threads_override=args.threads,
                             scale=args.scale)
        os.makedirs(cfg.output_dir, exist_ok=True)
        return _COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloquetBranchError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
