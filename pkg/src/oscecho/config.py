"""Run configuration: strict JSON schema, defaults, unit conversion.

Frequencies in the file are plain Hz (cycles per second) and are converted
to angular units on load. Forces are either already normalized (units
"normalized", values in 1/s) or given in newtons (units {"si": {"mass_kg":
m}}), in which case they are divided by the zero-point momentum of the
configured oscillator. Unknown keys anywhere in the file are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import CovMat, ForceModel, GaussianState, OscillatorConfig, normalized_force
from .errors import ConfigurationError, OscEchoError
from .montecarlo import McConfig
from .protocol import EchoSpec, JumpSequence, SampleMark, echo_sequence, optimal_ratio

DEFAULT_MASTER_SEED = 20260811

_STEP_NAMES = ("i", "ii", "iii")


def default_config_dict() -> dict:
    """The shipped preset: a 52 kHz trap with 3.4 kHz backaction heating and
    n0 = 1.2, an r = 2 echo with an identity squeezing leg, stray-force scale
    144 aN mean / 22.7 aN shot-to-shot std on a 1.2 fg particle, and eleven
    sample marks through the protocol. The sweep block carries its own
    context (r = sqrt(10), shot std 6.95 aN) for the decoupling-ratio scan.
    """
    pi = math.pi
    return {
        "oscillator": {"omega_hz": 52000.0, "gamma_hz": 3400.0, "n0": 1.2},
        "force": {
            "f0_mean": 144e-18,
            "f0_sigma": 22.7e-18,
            "units": {"si": {"mass_kg": 1.2e-18}},
        },
        "protocol": {"r": 2.0, "r_prime": "optimal", "theta2": pi},
        "monte_carlo": {
            "shots": 100,
            "steps_per_period": 400,
            "master_seed": DEFAULT_MASTER_SEED,
        },
        "sweep": {
            "rprime_min": 1.5,
            "rprime_max": 3.2,
            "points": 200,
            "r": math.sqrt(10.0),
            "f0_mean": 144e-18,
            "f0_sigma": 6.95e-18,
        },
        "sample_marks": (
            [{"step": "i", "phase": p} for p in (0.0, pi / 4, pi / 2, 3 * pi / 4, pi)]
            + [{"step": "ii", "phase": p} for p in (pi / 2, pi)]
            + [{"step": "iii", "phase": p} for p in (pi / 4, pi / 2, 3 * pi / 4, pi)]
        ),
    }


def _check_keys(obj: dict, allowed: tuple, path: str):
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _as_mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: expected an object, got {type(obj).__name__}")
    return obj


def _number(obj: dict, key: str, path: str, default=None, minimum=None,
            exclusive=False, integer=False):
    if key not in obj:
        if default is None:
            raise ConfigurationError(f"{path}.{key}: required field missing")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}.{key}: expected a number, got {value!r}")
    if integer:
        if not isinstance(value, int):
            raise ConfigurationError(f"{path}.{key}: expected an integer, got {value!r}")
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigurationError(f"{path}.{key}: must be finite, got {value!r}")
    if minimum is not None:
        if exclusive and value <= minimum:
            raise ConfigurationError(f"{path}.{key}: must be > {minimum}, got {value}")
        if not exclusive and value < minimum:
            raise ConfigurationError(f"{path}.{key}: must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class SweepSettings:
    rprime_min: float
    rprime_max: float
    points: int
    r: float
    force: ForceModel

    def grid(self) -> np.ndarray:
        return np.linspace(self.rprime_min, self.rprime_max, self.points)


@dataclass(frozen=True)
class RunConfig:
    """Validated, unit-converted view of a configuration file plus the
    canonical dict used for (idempotent) re-serialization."""

    oscillator: OscillatorConfig
    force: ForceModel
    spec: EchoSpec
    mc: McConfig
    marks: tuple[SampleMark, ...]
    sweep: SweepSettings
    initial_cov: CovMat | None
    canonical: dict

    def initial_state(self) -> GaussianState:
        if self.initial_cov is not None:
            return GaussianState(GaussianState.vacuum().mean, self.initial_cov)
        return self.oscillator.initial_state()

    def sequence(self) -> JumpSequence:
        return echo_sequence(self.spec, self.oscillator.omega, self.marks)

    def to_json(self) -> str:
        return json.dumps(self.canonical, indent=2) + "\n"

    def with_seed(self, master_seed: int) -> "RunConfig":
        canonical = json.loads(json.dumps(self.canonical))
        canonical["monte_carlo"]["master_seed"] = master_seed
        return parse_config(canonical)


def parse_config(data: dict) -> RunConfig:
    """Validate a configuration mapping and resolve it against the defaults.

    Raises ConfigurationError naming the offending field on any violation.
    """
    defaults = default_config_dict()
    data = _as_mapping(data, "config")
    _check_keys(
        data,
        ("oscillator", "force", "protocol", "monte_carlo", "sweep",
         "sample_marks", "initial_cov"),
        "config",
    )

    osc_in = _as_mapping(data.get("oscillator", {}), "oscillator")
    _check_keys(osc_in, ("omega_hz", "gamma_hz", "n0"), "oscillator")
    omega_hz = _number(osc_in, "omega_hz", "oscillator",
                       defaults["oscillator"]["omega_hz"], minimum=0.0, exclusive=True)
    gamma_hz = _number(osc_in, "gamma_hz", "oscillator",
                       defaults["oscillator"]["gamma_hz"], minimum=0.0)
    n0 = _number(osc_in, "n0", "oscillator", defaults["oscillator"]["n0"], minimum=0.0)
    oscillator = OscillatorConfig(2.0 * math.pi * omega_hz, 2.0 * math.pi * gamma_hz, n0)

    force_in = _as_mapping(data.get("force", {}), "force")
    _check_keys(force_in, ("f0_mean", "f0_sigma", "units"), "force")
    units = force_in.get("units", defaults["force"]["units"])
    mass_kg = None
    if units == "normalized":
        pass
    elif isinstance(units, dict):
        _check_keys(units, ("si",), "force.units")
        si = _as_mapping(units.get("si", {}), "force.units.si")
        _check_keys(si, ("mass_kg",), "force.units.si")
        mass_kg = _number(si, "mass_kg", "force.units.si",
                          defaults["force"]["units"]["si"]["mass_kg"],
                          minimum=0.0, exclusive=True)
    else:
        raise ConfigurationError(
            f'force.units: expected "normalized" or {{"si": {{"mass_kg": ...}}}}, got {units!r}'
        )

    def to_normalized(value: float) -> float:
        if mass_kg is None:
            return value
        return normalized_force(value, mass_kg, oscillator.omega)

    # raw file values stay in their declared units; conversion happens here only
    f0_mean_raw = _number(force_in, "f0_mean", "force", defaults["force"]["f0_mean"])
    f0_sigma_raw = _number(force_in, "f0_sigma", "force",
                           defaults["force"]["f0_sigma"], minimum=0.0)
    force = ForceModel(to_normalized(f0_mean_raw), to_normalized(f0_sigma_raw))

    proto_in = _as_mapping(data.get("protocol", {}), "protocol")
    _check_keys(proto_in, ("r", "r_prime", "theta2"), "protocol")
    r = _number(proto_in, "r", "protocol", defaults["protocol"]["r"], minimum=1.0)
    theta2 = _number(proto_in, "theta2", "protocol",
                     defaults["protocol"]["theta2"], minimum=0.0)
    r_prime_literal = proto_in.get("r_prime", defaults["protocol"]["r_prime"])
    if r_prime_literal == "optimal":
        r_prime = optimal_ratio(r)
    elif isinstance(r_prime_literal, (int, float)) and not isinstance(r_prime_literal, bool):
        r_prime = float(r_prime_literal)
        if not math.isfinite(r_prime) or r_prime < 1.0:
            raise ConfigurationError(f"protocol.r_prime: must be >= 1, got {r_prime}")
    else:
        raise ConfigurationError(
            f'protocol.r_prime: expected "optimal" or a number, got {r_prime_literal!r}'
        )
    spec = EchoSpec(r, r_prime, theta2)

    mc_in = _as_mapping(data.get("monte_carlo", {}), "monte_carlo")
    _check_keys(mc_in, ("shots", "steps_per_period", "master_seed"), "monte_carlo")
    shots = _number(mc_in, "shots", "monte_carlo",
                    defaults["monte_carlo"]["shots"], minimum=1, integer=True)
    spp = _number(mc_in, "steps_per_period", "monte_carlo",
                  defaults["monte_carlo"]["steps_per_period"], minimum=100, integer=True)
    master_seed = _number(mc_in, "master_seed", "monte_carlo",
                          defaults["monte_carlo"]["master_seed"], minimum=0, integer=True)
    if master_seed >= 2**64:
        raise ConfigurationError(
            f"monte_carlo.master_seed: must fit in 64 bits, got {master_seed}"
        )
    try:
        mc = McConfig(shots=shots, steps_per_period=spp, master_seed=master_seed)
    except ConfigurationError as exc:
        raise ConfigurationError(f"monte_carlo: {exc}") from exc

    sweep_in = _as_mapping(data.get("sweep", {}), "sweep")
    _check_keys(sweep_in, ("rprime_min", "rprime_max", "points", "r",
                           "f0_mean", "f0_sigma"), "sweep")
    rprime_min = _number(sweep_in, "rprime_min", "sweep",
                         defaults["sweep"]["rprime_min"], minimum=1.0)
    rprime_max = _number(sweep_in, "rprime_max", "sweep", defaults["sweep"]["rprime_max"])
    if rprime_max <= rprime_min:
        raise ConfigurationError(
            f"sweep.rprime_max: must exceed rprime_min={rprime_min}, got {rprime_max}"
        )
    points = _number(sweep_in, "points", "sweep",
                     defaults["sweep"]["points"], minimum=3, integer=True)
    # sweep r and force default to the paper-preset sweep context only when the
    # whole sweep block is absent; a user-supplied block falls back to the
    # protocol/force sections for omitted keys.
    if "sweep" in data:
        sweep_r = _number(sweep_in, "r", "sweep", r, minimum=1.0)
        sweep_f0_mean_raw = _number(sweep_in, "f0_mean", "sweep", f0_mean_raw)
        sweep_f0_sigma_raw = _number(sweep_in, "f0_sigma", "sweep",
                                     f0_sigma_raw, minimum=0.0)
    else:
        sweep_r = defaults["sweep"]["r"]
        sweep_f0_mean_raw = defaults["sweep"]["f0_mean"]
        sweep_f0_sigma_raw = defaults["sweep"]["f0_sigma"]
    sweep = SweepSettings(
        rprime_min, rprime_max, points, sweep_r,
        ForceModel(to_normalized(sweep_f0_mean_raw), to_normalized(sweep_f0_sigma_raw)),
    )

    marks_in = data.get("sample_marks", defaults["sample_marks"])
    if not isinstance(marks_in, list):
        raise ConfigurationError("sample_marks: expected a list")
    marks = []
    for i, entry in enumerate(marks_in):
        path = f"sample_marks[{i}]"
        entry = _as_mapping(entry, path)
        _check_keys(entry, ("step", "phase"), path)
        step = entry.get("step")
        if step not in _STEP_NAMES:
            raise ConfigurationError(f"{path}.step: expected one of {_STEP_NAMES}, got {step!r}")
        phase = _number(entry, "phase", path, minimum=0.0)
        marks.append(SampleMark(_STEP_NAMES.index(step), phase))

    initial_cov = None
    if "initial_cov" in data:
        cov_in = _as_mapping(data["initial_cov"], "initial_cov")
        _check_keys(cov_in, ("qq", "qp", "pp"), "initial_cov")
        try:
            initial_cov = CovMat(
                _number(cov_in, "qq", "initial_cov"),
                _number(cov_in, "qp", "initial_cov", default=0.0),
                _number(cov_in, "pp", "initial_cov"),
            )
        except ConfigurationError:
            raise
        except OscEchoError as exc:
            raise ConfigurationError(f"initial_cov: {exc}") from exc

    canonical = {
        "oscillator": {"omega_hz": omega_hz, "gamma_hz": gamma_hz, "n0": n0},
        "force": {
            "f0_mean": f0_mean_raw,
            "f0_sigma": f0_sigma_raw,
            "units": "normalized" if mass_kg is None else {"si": {"mass_kg": mass_kg}},
        },
        "protocol": {"r": r, "r_prime": r_prime_literal, "theta2": theta2},
        "monte_carlo": {
            "shots": shots,
            "steps_per_period": spp,
            "master_seed": master_seed,
        },
        "sweep": {
            "rprime_min": rprime_min,
            "rprime_max": rprime_max,
            "points": points,
            "r": sweep_r,
            "f0_mean": sweep_f0_mean_raw,
            "f0_sigma": sweep_f0_sigma_raw,
        },
        "sample_marks": [
            {"step": _STEP_NAMES[m.segment], "phase": m.phase} for m in marks
        ],
    }
    if initial_cov is not None:
        canonical["initial_cov"] = {
            "qq": initial_cov.qq, "qp": initial_cov.qp, "pp": initial_cov.pp,
        }

    config = RunConfig(
        oscillator=oscillator,
        force=force,
        spec=spec,
        mc=mc,
        marks=tuple(marks),
        sweep=sweep,
        initial_cov=initial_cov,
        canonical=canonical,
    )
    try:
        config.sequence()  # validates mark ordering and phase bounds
    except OscEchoError as exc:
        raise ConfigurationError(f"sample_marks: {exc}") from exc
    return config


def load_config(path: str | None) -> RunConfig:
    """Load and validate a config file; None loads the shipped preset."""
    if path is None:
        return parse_config(default_config_dict())
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_config(data)
