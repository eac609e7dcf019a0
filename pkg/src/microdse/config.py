"""Scenario configuration: JSON schema validation and assembly of the
simulation and estimation settings.

A scenario file fully determines a run: topology and electrical
parameters, simulation horizon and noise, the load-event schedule, the
regulator, and the estimator settings.  Unknown keys are rejected.  The
bundled ``three_bus.json`` encodes the reference three-DGU/three-bus system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .kalman import NoiseSpec
from .models import DguParams, LineParams, MicrogridTopology
from .sim import EventSchedule, LoadStep, RegulatorConfig, SimConfig, SimNoise


class ConfigError(ValueError):
    """Configuration that fails to parse or validate."""


def _data_text(name: str) -> str:
    return resources.files("microdse").joinpath("data", name).read_text(encoding="utf-8")


def load_schema() -> dict:
    """JSON schema every scenario file must satisfy."""
    return json.loads(_data_text("config.schema.json"))


def bundled_config_dict() -> dict:
    """Parsed copy of the bundled reference scenario."""
    return json.loads(_data_text("three_bus.json"))


@dataclass(frozen=True)
class MetricsSettings:
    windows_s: tuple[tuple[float, float], ...] | None = None
    tracking_horizon_s: float = 0.1

    def resolved_windows(self, duration_s: float, events: EventSchedule):
        """Configured windows clamped to the run, or steady windows derived
        from the event times when none of the configured ones fit."""
        if self.windows_s is not None:
            clamped = tuple(
                (a, min(b, duration_s))
                for a, b in self.windows_s
                if a < min(b, duration_s)
            )
            if clamped:
                return clamped
        if events.steps:
            first = events.steps[0].time_s
            last = events.last_time
            return (
                (min(1.0, 0.5 * first), first),
                (min(last + 0.5, duration_s), duration_s),
            )
        return ((min(1.0, 0.25 * duration_s), duration_s),)


@dataclass(frozen=True)
class EstimationSettings:
    local_rate_hz: float
    global_rate_hz: float
    method: str
    local_noise: NoiseSpec
    global_process_std: np.ndarray  # per-line [d, q] std
    global_measurement_std: np.ndarray
    metrics: MetricsSettings


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    sim: SimConfig
    estimation: EstimationSettings
    output_dir: str
    raw: dict


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply CLI overrides onto a parsed scenario dict (overrides win)."""
    out = json.loads(json.dumps(raw))  # deep copy, JSON-typed
    if overrides.get("seed") is not None:
        out.setdefault("simulation", {})["seed"] = overrides["seed"]
    if overrides.get("duration_s") is not None:
        out.setdefault("simulation", {})["duration_s"] = overrides["duration_s"]
    if overrides.get("discretization") is not None:
        out.setdefault("estimation", {})["discretization"] = overrides["discretization"]
    if overrides.get("event_time_s") is not None:
        events = out.get("simulation", {}).get("loads", {}).get("events", [])
        if len(events) != 1:
            raise ConfigError(
                "--event-time needs exactly one scheduled event, "
                f"the configuration has {len(events)}"
            )
        events[0]["time_s"] = overrides["event_time_s"]
    return out


def _schema_check(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "$"
        raise ConfigError(f"invalid configuration at {path}: {err.message}")


def _topology(raw: dict) -> MicrogridTopology:
    t = raw["topology"]
    dgus_raw = sorted(t["dgus"], key=lambda d: d["bus"])
    buses = [d["bus"] for d in dgus_raw]
    if buses != list(range(1, len(buses) + 1)):
        raise ConfigError(
            f"topology.dgus must cover buses 1..{len(buses)} exactly, got {buses}"
        )
    dgus = tuple(
        DguParams(r_t=d["r_ohm"], l_t=d["l_henry"], c_t=d["c_farad"]) for d in dgus_raw
    )
    lines = tuple(
        LineParams(
            from_bus=ln["from_bus"], to_bus=ln["to_bus"], r=ln["r_ohm"], l=ln["l_henry"]
        )
        for ln in t["lines"]
    )
    omega = 2.0 * math.pi * t["frequency_hz"]
    try:
        return MicrogridTopology(
            n_buses=len(buses), dgus=dgus, lines=lines, omega=omega
        )
    except ValueError as exc:
        raise ConfigError(f"invalid topology: {exc}") from exc


def _noise_spec4(section: dict) -> NoiseSpec:
    return NoiseSpec.from_std(
        section["process_std"], section["measurement_std"], section["input_std"]
    )


def _noise_spec2(section: dict) -> NoiseSpec:
    return NoiseSpec.from_std(
        section["process_std"], section["measurement_std"], [0.0, 0.0]
    )


def reference_amplitude(v_ll_rms: float) -> float:
    """Phase voltage amplitude of a nominal line-to-line RMS value."""
    return v_ll_rms * math.sqrt(2.0 / 3.0)


def load_scenario_dict(raw: dict) -> ScenarioConfig:
    """Validate a parsed scenario and build the runtime configuration."""
    _schema_check(raw)
    topology = _topology(raw)
    nb = topology.n_buses
    s = raw["simulation"]

    scale = np.asarray(s["controller"]["reference_scale"], dtype=float)
    if scale.shape != (nb,):
        raise ConfigError(
            f"simulation.controller.reference_scale must list {nb} entries"
        )
    controller = RegulatorConfig(
        kp=s["controller"]["kp"],
        ki=s["controller"]["ki_per_s"],
        virtual_resistance=s["controller"]["virtual_resistance_ohm"],
        droop=s["controller"]["droop_v_per_a"],
        reference=reference_amplitude(s["nominal_voltage_ll_rms"]) * scale,
    )

    initial = np.asarray(s["loads"]["initial_amps"], dtype=float)
    if initial.shape != (nb, 2):
        raise ConfigError(f"simulation.loads.initial_amps must be {nb} [d, q] pairs")
    events = EventSchedule(
        tuple(
            LoadStep(
                time_s=e["time_s"],
                bus=e["bus"],
                delta_d=e["delta_d_amps"],
                delta_q=e["delta_q_amps"],
            )
            for e in s["loads"]["events"]
        )
    )
    noise = SimNoise(
        dgu=_noise_spec4(s["noise"]["dgu"]), line=_noise_spec2(s["noise"]["line"])
    )
    try:
        sim = SimConfig(
            topology=topology,
            duration_s=s["duration_s"],
            plant_step_s=s["step_s"],
            seed=s["seed"],
            initial_loads=initial,
            events=events,
            noise=noise,
            controller=controller,
            start=s.get("start", "equilibrium"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from exc

    e = raw["estimation"]
    plant_rate = 1.0 / sim.plant_step_s
    local_rate = float(e["local_rate_hz"])
    global_rate = float(e["global_rate_hz"])
    for num, den, what in (
        (plant_rate, local_rate, "plant rate by estimation.local_rate_hz"),
        (local_rate, global_rate, "estimation.local_rate_hz by estimation.global_rate_hz"),
    ):
        k = num / den
        if k < 1 - 1e-9 or abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigError(f"{what} must divide evenly, got ratio {k!r}")
    local_noise = _noise_spec4(e["local_noise"])
    if (np.diag(local_noise.r) <= 0.0).any():
        raise ConfigError("estimation.local_noise.measurement_std must be positive")
    gp = np.asarray(e["global_noise"]["process_std"], dtype=float)
    gm = np.asarray(e["global_noise"]["measurement_std"], dtype=float)
    if (gm <= 0.0).any():
        raise ConfigError("estimation.global_noise.measurement_std must be positive")
    m = e.get("metrics", {})
    windows = m.get("windows_s")
    metrics = MetricsSettings(
        windows_s=tuple((float(a), float(b)) for a, b in windows)
        if windows is not None
        else None,
        tracking_horizon_s=m.get("tracking_horizon_s", 0.1),
    )
    est = EstimationSettings(
        local_rate_hz=local_rate,
        global_rate_hz=global_rate,
        method=e["discretization"],
        local_noise=local_noise,
        global_process_std=gp,
        global_measurement_std=gm,
        metrics=metrics,
    )
    return ScenarioConfig(
        name=raw.get("name", "scenario"),
        sim=sim,
        estimation=est,
        output_dir=raw.get("output", {}).get("directory", "out"),
        raw=raw,
    )


def load_scenario(path: str | Path, overrides: dict | None = None) -> ScenarioConfig:
    """Load, override, validate and assemble a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}"
        ) from exc
    if overrides:
        raw = apply_overrides(raw, overrides)
    return load_scenario_dict(raw)


def bundled_scenario(overrides: dict | None = None) -> ScenarioConfig:
    raw = bundled_config_dict()
    if overrides:
        raw = apply_overrides(raw, overrides)
    return load_scenario_dict(raw)
