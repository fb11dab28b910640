"""Pipeline configuration: flat ``section.key=value`` text files.

Every key is declared in the schema below with a type and default; unknown
keys are rejected so typos fail loudly.  CLI flags override file values.
Physical quantities are SI (W, Hz, V); phase-space quantities are
dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .acquisition import (
    AdcConfig,
    ColoredNoise,
    DetectorCalibration,
    full_scale_for_target_delta_q,
)
from .dsp import BandSpec
from .states import CoherentMixture, Coherent, StateModel, Thermal, Vacuum


class ConfigError(ValueError):
    """Unknown key, malformed value or inconsistent configuration."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (type tag, default, unit/help)
SCHEMA: dict[str, tuple[str, Any, str]] = {
    "state.kind": ("str", "vacuum", "vacuum|coherent|thermal|mixture"),
    "state.center": ("str", "0,0", "coherent center re,im (phase-space units)"),
    "state.mean_photons": ("float", 0.0, "thermal mean photon number"),
    "state.components": ("str", "", "mixture 'w:re,im;w:re,im'"),
    "lo.power": ("float", 4.05e-3, "local oscillator power [W]"),
    "lo.monitor_tolerance": ("float", 0.02, "relative LO drift tolerance"),
    "lo.monitor_drift": ("str", "", "injected drift 'block:relfrac,...' (testing)"),
    "cal.report": ("str", "", "path to calibration report (overrides cal.m*/q*)"),
    "cal.m1": ("float", 2.783e-2, "channel-1 slope [V^2/W]"),
    "cal.q1": ("float", 1.526e-5, "channel-1 intercept [V^2]"),
    "cal.m2": ("float", 2.748e-2, "channel-2 slope [V^2/W]"),
    "cal.q2": ("float", 1.419e-5, "channel-2 intercept [V^2]"),
    "adc.sample_rate": ("float", 10e9, "ADC rate [S/s]"),
    "adc.bits": ("int", 10, "ADC depth [4..16]"),
    "adc.full_scale": ("float", 0.0, "peak-to-peak volts; 0 = derive from target_delta_q"),
    "adc.target_delta_q": ("float", 14.05e-3, "channel-1 phase-space resolution target"),
    "band.f_lo": ("float", 250e6, "pass band lower edge [Hz]"),
    "band.f_hi": ("float", 1.5e9, "pass band upper edge [Hz]"),
    "dsp.enabled": ("bool", True, "apply brick-wall filter + decimation"),
    "dsp.fast": ("bool", False, "single-precision fused filter+decimate path"),
    "dsp.block_len": ("int", 1 << 20, "streaming filter window [samples]"),
    "dsp.margin_factor": ("int", 1024, "edge margin in decimation periods"),
    "dsp.renormalize": ("bool", True, "rescale so in-band shot noise keeps vacuum units"),
    "dsp.autocorr_threshold": ("float", 7.5e-3, "flag level for residual autocorrelation"),
    "dsp.autocorr_lags": ("int", 100, "lags checked in the run report"),
    "noise.technical_cutoff": ("float", 0.0, "low-frequency noise cutoff [Hz]; 0 = off"),
    "noise.technical_rms": ("float", 0.0, "low-frequency noise RMS [V]"),
    "noise.spur_freqs": ("str", "", "comma-separated spur frequencies [Hz]"),
    "noise.spur_rms": ("float", 0.0, "per-spur RMS [V]"),
    "sim.seed": ("int", 12345, "master seed for the physics simulation"),
    "sim.n_samples": ("int", 10_000_000, "raw samples per channel"),
    "sim.block_samples": ("int", 1 << 20, "raw samples per simulation block"),
    "extractor.epsilon_log2": ("float", -100.0, "log2 of extractor security parameter"),
    "extractor.block_samples": ("int", 1_000_000, "pairs per extraction call"),
    "extractor.seed": ("int", 67890, "master seed for Toeplitz seed expansion"),
    "extractor.fresh_seed_per_block": ("bool", True, "new seed material per block"),
    "test.alpha": ("float", 0.01, "statistical test significance level"),
    "test.tests": ("str", "", "comma list of tests; empty = all"),
    "pipeline.workers": ("int", 1, "max concurrent blocks within a stage"),
    "out.samples": ("str", "samples.qrb1", "QRB1 output path"),
    "out.filtered": ("str", "filtered.qrb1", "filtered QRB1 output path"),
    "out.bits": ("str", "extracted.bin", "extracted bits output path"),
    "out.sidecar": ("str", "extracted.meta", "extraction metadata path"),
    "out.certificate": ("str", "certificate.txt", "entropy certificate path"),
    "out.report": ("str", "run_report.txt", "aggregate run report path"),
    "out.calibration": ("str", "calibration.txt", "calibration report path"),
}

_PARSERS = {"str": str, "int": lambda s: int(s, 0), "float": float, "bool": _parse_bool}


@dataclass
class PipelineConfig:
    """Validated configuration with typed accessors for the pipeline."""

    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        merged = {k: default for k, (_, default, _) in SCHEMA.items()}
        for key, value in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            merged[key] = value
        self.values = merged

    # -- parsing / serialization -------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        values: dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, sval = line.partition("=")
            key, sval = key.strip(), sval.strip()
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
            tag = SCHEMA[key][0]
            try:
                values[key] = _PARSERS[tag](sval)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad {tag} value for {key}: {sval!r}") from exc
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = ["# hetqrng pipeline configuration"]
        for key in sorted(self.values):
            lines.append(f"{key}={_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    def override(self, assignments: dict[str, str]) -> "PipelineConfig":
        """Apply 'key=value' string overrides (CLI flags win over files)."""
        values = dict(self.values)
        for key, sval in assignments.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            tag = SCHEMA[key][0]
            try:
                values[key] = _PARSERS[tag](sval)
            except ValueError as exc:
                raise ConfigError(f"bad {tag} value for {key}: {sval!r}") from exc
        return PipelineConfig(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    # -- typed accessors -----------------------------------------------------

    def state_model(self) -> StateModel:
        kind = self["state.kind"]
        if kind == "vacuum":
            return Vacuum()
        if kind == "coherent":
            re, im = (float(v) for v in self["state.center"].split(","))
            return Coherent(complex(re, im))
        if kind == "thermal":
            return Thermal(self["state.mean_photons"])
        if kind == "mixture":
            comps = []
            for part in self["state.components"].split(";"):
                part = part.strip()
                if not part:
                    continue
                w, _, center = part.partition(":")
                re, im = (float(v) for v in center.split(","))
                comps.append((float(w), complex(re, im)))
            if not comps:
                raise ConfigError("state.components is empty for mixture state")
            return CoherentMixture(tuple(comps))
        raise ConfigError(f"unknown state.kind {kind!r}")

    def calibration(self) -> DetectorCalibration:
        if self["cal.report"]:
            with open(self["cal.report"], "r", encoding="utf-8") as fh:
                return DetectorCalibration.from_kv_text(fh.read())
        return DetectorCalibration(
            slope_1=self["cal.m1"], intercept_1=self["cal.q1"],
            slope_2=self["cal.m2"], intercept_2=self["cal.q2"],
        )

    def adc(self) -> AdcConfig:
        full_scale = self["adc.full_scale"]
        if full_scale <= 0:
            full_scale = full_scale_for_target_delta_q(
                self.calibration(), self["lo.power"], self["adc.bits"],
                self["adc.target_delta_q"],
            )
        return AdcConfig(
            sample_rate=self["adc.sample_rate"],
            bits=self["adc.bits"],
            full_scale=full_scale,
        )

    def band(self) -> BandSpec:
        return BandSpec(self["band.f_lo"], self["band.f_hi"])

    def colored_noise(self) -> Optional[ColoredNoise]:
        spurs = tuple(
            float(f) for f in self["noise.spur_freqs"].split(",") if f.strip()
        )
        noise = ColoredNoise(
            technical_cutoff=self["noise.technical_cutoff"],
            technical_rms=self["noise.technical_rms"],
            spur_freqs=spurs,
            spur_rms=self["noise.spur_rms"],
        )
        return noise if noise.enabled else None

    def epsilon(self) -> float:
        eps = 2.0 ** self["extractor.epsilon_log2"]
        if not 0.0 < eps < 1.0:
            raise ConfigError("extractor.epsilon_log2 must be negative")
        return eps

    def monitor_drift(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for part in self["lo.monitor_drift"].split(","):
            part = part.strip()
            if not part:
                continue
            idx, _, frac = part.partition(":")
            out[int(idx)] = float(frac)
        return out

    def enabled_tests(self) -> tuple[str, ...]:
        raw = [t.strip() for t in self["test.tests"].split(",") if t.strip()]
        if not raw:
            from .randtests import TEST_NAMES

            return TEST_NAMES
        return tuple(raw)
