"""Scenario configuration files (YAML, explicit units in field names)."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .mzi_sim import InstrumentConfig
from .source import EmitterConfig
from .wavemodel import BeamPairConfig, DetectionConfig, PrismScreen

SCENARIOS = ("longitudinal", "lateral", "calibration", "g2", "full-report")
FIGURES = {"fig3c": "reproduce-g2", "fig4ab": "reproduce-longitudinal", "fig4cd": "reproduce-lateral"}


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DetectorSpec(_Strict):
    efficiency: float = Field(ge=0, le=1)
    dark_cps: float = Field(0.0, ge=0)


class InstrumentSpec(_Strict):
    wavelength_nm: float = Field(gt=0)
    beam_angle_deg: float = Field(gt=0, lt=45)
    prism_index: float = Field(1.5, ge=1)
    reflectance: float = Field(ge=0, le=1)
    face_transmission: float = Field(gt=0, le=1)
    bs_reflectance: float = Field(0.5, ge=0, le=1)
    arm1_ndf_od: float = Field(ge=0)
    arm2_transmission: Optional[float] = Field(None, ge=0, le=1)
    wedge_angle_deg: float = Field(gt=0, lt=45)
    wedge_index: float = Field(1.5, ge=1)
    wedge_position_mm: float = 0.0
    slit_width_um: Optional[float] = Field(gt=0)  # null removes the slit
    slit_center_mm: float = 0.0
    magnification: float = Field(40.0, gt=0)
    beam_waist_um: float = Field(500.0, gt=0)
    beam_separation_um: float = Field(250.0, ge=0)
    beam_center_um: float = 0.0
    fringe_coherence: float = Field(1.0, ge=0, le=1)
    phase_offset_rad: float = 0.0
    mirror_reflectivity: float = Field(0.955, gt=0, le=1)
    apd1: DetectorSpec
    apd2: DetectorSpec
    apd3: DetectorSpec

    def build(self) -> InstrumentConfig:
        return InstrumentConfig(
            beams=BeamPairConfig(wavelength=self.wavelength_nm * 1e-9, theta=math.radians(self.beam_angle_deg),
                                 phi=self.phase_offset_rad),
            screen=PrismScreen(reflectance=self.reflectance, n=self.prism_index,
                               face_transmission=self.face_transmission),
            apd1=DetectionConfig(self.apd1.efficiency, self.apd1.dark_cps),
            apd2=DetectionConfig(self.apd2.efficiency, self.apd2.dark_cps),
            apd3=DetectionConfig(self.apd3.efficiency, self.apd3.dark_cps),
            bs_reflectance=self.bs_reflectance,
            arm1_transmission=10 ** (-self.arm1_ndf_od),
            arm2_transmission=self.arm2_transmission,
            wedge_angle=math.radians(self.wedge_angle_deg),
            wedge_index=self.wedge_index,
            wedge_position=self.wedge_position_mm * 1e-3,
            slit_width=math.inf if self.slit_width_um is None else self.slit_width_um * 1e-6,
            slit_center=self.slit_center_mm * 1e-3,
            magnification=self.magnification,
            waist=self.beam_waist_um * 1e-6,
            separation=self.beam_separation_um * 1e-6,
            beam_center=self.beam_center_um * 1e-6,
            coherence=self.fringe_coherence,
            mirror_reflectivity=self.mirror_reflectivity,
        )


class EmitterSpec(_Strict):
    rate_cps: float = Field(100_000.0, ge=0)
    antibunching_ns: float = Field(30.0, ge=0)
    bright_to_dark_per_s: float = Field(1.0, ge=0)
    dark_to_bright_per_s: float = Field(5.0, ge=0)
    dark_brightness: float = Field(0.05, ge=0, lt=1)

    def build(self, seed: int, duration: float, rate: float | None = None) -> EmitterConfig:
        return EmitterConfig(rate=self.rate_cps if rate is None else rate, tau_c=self.antibunching_ns * 1e-9,
                             bright_to_dark=self.bright_to_dark_per_s, dark_to_bright=self.dark_to_bright_per_s,
                             dark_brightness=self.dark_brightness, duration=duration, seed=seed)


class SweepSpec(_Strict):
    start_mm: float
    stop_mm: float
    step_mm: float = Field(gt=0)

    @model_validator(mode="after")
    def _non_empty(self):
        if self.stop_mm < self.start_mm:
            raise ValueError("stop_mm must be >= start_mm")
        return self

    def values(self) -> np.ndarray:
        n = int(math.floor((self.stop_mm - self.start_mm) / self.step_mm + 1e-9)) + 1
        return (self.start_mm + self.step_mm * np.arange(n)) * 1e-3


class CalibrationSpec(_Strict):
    duration_s: float = Field(60.0, gt=0)
    source_rate_cps: Optional[float] = Field(None, ge=0)  # default: emitter rate


class G2Spec(_Strict):
    duration_s: float = Field(10.0, gt=0)
    bin_ns: float = Field(3.0, gt=0)
    window_ns: float = Field(300.0, gt=0)
    trace_bin_ms: float = Field(100.0, gt=0)
    dark_trace_s: float = Field(60.0, gt=0)


class ScenarioConfig(_Strict):
    scenario: Literal["longitudinal", "lateral", "calibration", "g2", "full-report"]
    seed: int = Field(ge=0)
    output_dir: str = "out"
    integration_s: float = Field(50.0, gt=0)
    sweep: Optional[SweepSpec] = None
    lateral_sweep: Optional[SweepSpec] = None
    instrument: InstrumentSpec
    emitter: EmitterSpec = EmitterSpec()
    calibration: CalibrationSpec = CalibrationSpec()
    g2: G2Spec = G2Spec()

    @model_validator(mode="after")
    def _sweeps_present(self):
        if self.scenario in ("longitudinal", "lateral", "full-report") and self.sweep is None:
            raise ValueError(f"scenario {self.scenario!r} requires a sweep section")
        if self.scenario == "full-report" and self.lateral_sweep is None:
            raise ValueError("scenario 'full-report' requires a lateral_sweep section")
        return self


def _format_errors(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data: dict, source: str = "<config>") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err, source)) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as err:
        raise ConfigError(f"{path}: cannot read ({err.strerror})") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from None
    return parse_config(data, str(path))


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("wmmzi") / "configs" / f"{name}.yaml"))


def figure_config(figure: str) -> ScenarioConfig:
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; expected one of {sorted(FIGURES)}")
    return load_config(bundled_config_path(FIGURES[figure]))
