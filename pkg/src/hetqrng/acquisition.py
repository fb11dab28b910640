"""Detector/ADC front-end emulation and calibration.

The optical chain is reduced to its statistics: each balanced-detector
channel k outputs white Gaussian voltage noise with variance

    var_k(P) = m_k * P + q_k,

the slope m_k (V^2/W) being the shot-noise response to local-oscillator
power P and the intercept q_k (V^2) the LO-independent electronic noise.
A calibration sweep fits (m_k, q_k) from variance-vs-power points; the
slopes convert volts to phase-space units so that shot-noise-only output
has the vacuum variance 1/2 per quadrature.  The ADC resolution then maps
to phase-space resolutions delta_q, delta_p, which are all the entropy
bound needs.

Detector bandwidth shaping is deliberately not modeled: white samples
stand in for the in-band noise and the digital filtering stage treats
them identically.  Optional low-frequency technical noise and narrow
spurs can be injected to exercise the filter.

Sample files use the "QRB1" format: a 32-byte header (magic ``QRB1``,
version u16, bits u16, sample_rate f64, full_scale f64, lo_power f64,
all little-endian) followed by interleaved I,Q signed 16-bit codes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .seeding import spawn_rng

__all__ = [
    "AcquisitionError",
    "DetectorCalibration",
    "DEFAULT_CALIBRATION",
    "AdcConfig",
    "SampleBlock",
    "ColoredNoise",
    "LoMonitorReport",
    "simulate_detector_stream",
    "quantize",
    "codes_to_phase_space",
    "phase_space_scales",
    "full_scale_for_target_delta_q",
    "fit_calibration",
    "run_calibration_sweep",
    "lo_monitor_check",
    "write_qrb1",
    "read_qrb1",
    "iter_qrb1_blocks",
    "Qrb1Writer",
]

QRB1_MAGIC = b"QRB1"
QRB1_VERSION = 1
QRB1_HEADER = struct.Struct("<4sHHddd")  # 32 bytes
assert QRB1_HEADER.size == 32


class AcquisitionError(ValueError):
    """Invalid acquisition configuration or data."""


@dataclass(frozen=True)
class DetectorCalibration:
    """Per-channel linear variance-vs-power fit, with standard errors."""

    slope_1: float  # V^2/W
    intercept_1: float  # V^2
    slope_2: float
    intercept_2: float
    slope_err_1: float = 0.0
    intercept_err_1: float = 0.0
    slope_err_2: float = 0.0
    intercept_err_2: float = 0.0

    def __post_init__(self) -> None:
        if not (self.slope_1 > 0 and self.slope_2 > 0):
            raise AcquisitionError("calibration slopes must be strictly positive")
        if self.intercept_1 < 0 or self.intercept_2 < 0:
            raise AcquisitionError("calibration intercepts must be >= 0")

    def channel(self, k: int) -> tuple[float, float]:
        if k == 1:
            return self.slope_1, self.intercept_1
        if k == 2:
            return self.slope_2, self.intercept_2
        raise AcquisitionError(f"channel must be 1 or 2, got {k}")

    def to_kv_text(self, residual_summary: Optional[str] = None) -> str:
        lines = ["# detector calibration (variance vs LO power, per channel)"]
        if residual_summary:
            for row in residual_summary.splitlines():
                lines.append(f"# {row}")
        lines += [
            f"m1={self.slope_1!r}",
            f"q1={self.intercept_1!r}",
            f"m2={self.slope_2!r}",
            f"q2={self.intercept_2!r}",
            f"m1_err={self.slope_err_1!r}",
            f"q1_err={self.intercept_err_1!r}",
            f"m2_err={self.slope_err_2!r}",
            f"q2_err={self.intercept_err_2!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv_text(cls, text: str) -> "DetectorCalibration":
        fields: dict[str, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = float(value)
        try:
            return cls(
                slope_1=fields["m1"], intercept_1=fields["q1"],
                slope_2=fields["m2"], intercept_2=fields["q2"],
                slope_err_1=fields.get("m1_err", 0.0),
                intercept_err_1=fields.get("q1_err", 0.0),
                slope_err_2=fields.get("m2_err", 0.0),
                intercept_err_2=fields.get("q2_err", 0.0),
            )
        except KeyError as exc:
            raise AcquisitionError(f"calibration report missing field {exc}") from exc


#: Calibration constants of the reference detector pair used for default
#: configurations (slopes in V^2/W, intercepts in V^2).
DEFAULT_CALIBRATION = DetectorCalibration(
    slope_1=2.783e-2, intercept_1=1.526e-5,
    slope_2=2.748e-2, intercept_2=1.419e-5,
    slope_err_1=0.005e-2, intercept_err_1=0.005e-5,
    slope_err_2=0.004e-2, intercept_err_2=0.004e-5,
)


@dataclass(frozen=True)
class AdcConfig:
    """Sampling rate (S/s), bit depth and full-scale (peak-to-peak volts)."""

    sample_rate: float
    bits: int
    full_scale: float

    def __post_init__(self) -> None:
        if not (4 <= int(self.bits) <= 16):
            raise AcquisitionError(f"bits must be in [4, 16], got {self.bits}")
        if not self.sample_rate > 0:
            raise AcquisitionError("sample_rate must be > 0")
        if not self.full_scale > 0:
            raise AcquisitionError("full_scale must be > 0")

    @property
    def code_count(self) -> int:
        return 1 << self.bits

    @property
    def lsb(self) -> float:
        return self.full_scale / self.code_count

    @property
    def code_min(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def code_max(self) -> int:
        return (1 << (self.bits - 1)) - 1


@dataclass
class SampleBlock:
    """A contiguous block of paired I/Q ADC codes plus acquisition metadata."""

    codes_i: np.ndarray
    codes_q: np.ndarray
    adc: AdcConfig
    lo_power: float
    clipped_count: int = 0
    seed_tag: int = 0

    def __post_init__(self) -> None:
        self.codes_i = np.asarray(self.codes_i, dtype=np.int16)
        self.codes_q = np.asarray(self.codes_q, dtype=np.int16)
        if self.codes_i.shape != self.codes_q.shape or self.codes_i.ndim != 1:
            raise AcquisitionError("codes_i and codes_q must be 1-D and equal length")
        lo, hi = self.adc.code_min, self.adc.code_max
        for name, c in (("codes_i", self.codes_i), ("codes_q", self.codes_q)):
            if c.size and (int(c.min()) < lo or int(c.max()) > hi):
                raise AcquisitionError(
                    f"{name} outside [{lo}, {hi}] for {self.adc.bits}-bit ADC"
                )

    def __len__(self) -> int:
        return self.codes_i.size


@dataclass(frozen=True)
class ColoredNoise:
    """Optional additive classical-noise injection (volts), off by default.

    Technical noise is white Gaussian low-passed below ``technical_cutoff``;
    spurs are fixed-frequency tones with per-run random phase.  Both are
    added on top of the white shot+electronic model of each channel.
    """

    technical_cutoff: float = 0.0  # Hz; 0 disables
    technical_rms: float = 0.0  # V
    spur_freqs: tuple[float, ...] = ()
    spur_rms: float = 0.0  # V per spur

    @property
    def enabled(self) -> bool:
        return (self.technical_cutoff > 0 and self.technical_rms > 0) or (
            len(self.spur_freqs) > 0 and self.spur_rms > 0
        )


def _injected_noise(
    noise: ColoredNoise, n: int, sample_rate: float, rng: np.random.Generator
) -> np.ndarray:
    out = np.zeros(n)
    if noise.technical_cutoff > 0 and noise.technical_rms > 0:
        white = rng.standard_normal(n)
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[freqs > noise.technical_cutoff] = 0.0
        low = np.fft.irfft(spec, n)
        rms = float(np.sqrt(np.mean(low**2)))
        if rms > 0:
            out += noise.technical_rms / rms * low
    if noise.spur_freqs and noise.spur_rms > 0:
        t = np.arange(n)
        for f in noise.spur_freqs:
            phase = rng.uniform(0.0, 2.0 * math.pi)
            out += noise.spur_rms * math.sqrt(2.0) * np.sin(
                2.0 * math.pi * f / sample_rate * t + phase
            )
    return out


def simulate_detector_stream(
    cal: DetectorCalibration,
    lo_power: float,
    adc: AdcConfig,
    n: int,
    seed: int,
    *,
    noise: Optional[ColoredNoise] = None,
    stream: tuple[int, ...] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` balanced-detector voltage samples for both channels.

    Per channel the white model is N(0, m_k*P + q_k): the sum of the shot
    and electronic Gaussian terms is drawn as a single normal of the
    combined variance.  Deterministic for fixed (seed, stream).
    """
    if not lo_power > 0:
        raise AcquisitionError(f"lo_power must be > 0, got {lo_power}")
    if n < 1:
        raise AcquisitionError(f"need n >= 1, got {n}")
    rng = spawn_rng(seed, *stream)
    out = []
    for k in (1, 2):
        m, q = cal.channel(k)
        sd = math.sqrt(m * lo_power + q)
        v = rng.normal(0.0, sd, n)
        if noise is not None and noise.enabled:
            v += _injected_noise(noise, n, adc.sample_rate, rng)
        out.append(v)
    return out[0], out[1]


def quantize(voltages: np.ndarray, adc: AdcConfig) -> tuple[np.ndarray, int]:
    """Mid-tread ADC: code = clamp(round(v/lsb)), round-half-away-from-zero.

    Returns (int16 codes, number of saturated samples).
    """
    v = np.asarray(voltages, dtype=np.float64)
    scaled = v / adc.lsb
    codes = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    clipped = int(np.count_nonzero((codes < adc.code_min) | (codes > adc.code_max)))
    codes = np.clip(codes, adc.code_min, adc.code_max)
    return codes.astype(np.int16), clipped


def phase_space_scales(cal: DetectorCalibration, lo_power: float) -> tuple[float, float]:
    """Volts per phase-space unit for each channel: s_k = sqrt(2 m_k P).

    Chosen so that shot-noise-only voltage (variance m_k P) maps to the
    vacuum quadrature variance 1/2.
    """
    if not lo_power > 0:
        raise AcquisitionError(f"lo_power must be > 0, got {lo_power}")
    return (
        math.sqrt(2.0 * cal.slope_1 * lo_power),
        math.sqrt(2.0 * cal.slope_2 * lo_power),
    )


def codes_to_phase_space(
    block: SampleBlock, cal: DetectorCalibration
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Convert ADC codes to dimensionless quadrature samples.

    Returns (re, im, delta_q, delta_p) where delta_q = lsb/s_1 and
    delta_p = lsb/s_2 are the phase-space resolutions of the grid the
    samples live on.
    """
    s1, s2 = phase_space_scales(cal, block.lo_power)
    lsb = block.adc.lsb
    re = block.codes_i.astype(np.float64) * (lsb / s1)
    im = block.codes_q.astype(np.float64) * (lsb / s2)
    return re, im, lsb / s1, lsb / s2


def full_scale_for_target_delta_q(
    cal: DetectorCalibration, lo_power: float, bits: int, target_delta_q: float
) -> float:
    """Full-scale voltage that makes channel 1's resolution equal the target.

    The reported resolutions, not the oscilloscope full-scale, are the
    ground truth the configuration reproduces; channel 2's delta_p follows
    from the same LSB through its own slope.
    """
    if not target_delta_q > 0:
        raise AcquisitionError("target_delta_q must be > 0")
    s1, _ = phase_space_scales(cal, lo_power)
    return (1 << bits) * target_delta_q * s1


def _ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """OLS fit y = m x + q; returns (m, q, m_err, q_err)."""
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise AcquisitionError("degenerate calibration sweep: all powers equal")
    m = float(((x - xm) * (y - ym)).sum() / sxx)
    q = float(ym - m * xm)
    resid = y - (m * x + q)
    dof = n - 2
    s2 = float((resid**2).sum() / dof) if dof > 0 else 0.0
    m_err = math.sqrt(s2 / sxx)
    q_err = math.sqrt(s2 * (1.0 / n + xm**2 / sxx))
    return m, q, m_err, q_err


def fit_calibration(
    channel_points: Sequence[Sequence[tuple[float, float]]]
) -> DetectorCalibration:
    """Least-squares line per channel from (power, variance) points.

    Needs at least 3 distinct powers per channel; a non-positive fitted
    slope is rejected (detector not responding to LO).
    """
    if len(channel_points) != 2:
        raise AcquisitionError("expected points for exactly 2 channels")
    fits = []
    for k, pts in enumerate(channel_points, start=1):
        pts = list(pts)
        if len(pts) < 3:
            raise AcquisitionError(
                f"channel {k}: need >= 3 calibration points, got {len(pts)}"
            )
        x = np.asarray([p for p, _ in pts], dtype=np.float64)
        y = np.asarray([v for _, v in pts], dtype=np.float64)
        if np.unique(x).size < 3:
            raise AcquisitionError(f"channel {k}: need >= 3 distinct powers")
        m, q, m_err, q_err = _ols_line(x, y)
        if m <= 0:
            raise AcquisitionError(
                f"channel {k}: fitted slope {m:.3e} <= 0 "
                "(detector not responding to LO)"
            )
        fits.append((m, q, m_err, q_err))
    (m1, q1, e1, f1), (m2, q2, e2, f2) = fits
    return DetectorCalibration(
        slope_1=m1, intercept_1=max(q1, 0.0), slope_2=m2, intercept_2=max(q2, 0.0),
        slope_err_1=e1, intercept_err_1=f1, slope_err_2=e2, intercept_err_2=f2,
    )


def run_calibration_sweep(
    cal_truth: DetectorCalibration,
    powers: Sequence[float],
    samples_per_point: int,
    adc: AdcConfig,
    seed: int,
) -> list[list[tuple[float, float]]]:
    """Simulate the LO power sweep and return per-channel (power, variance).

    Variances are estimated on the analog (pre-quantization) voltages,
    matching how the calibration is taken.
    """
    if not len(powers):
        raise AcquisitionError("powers must be non-empty")
    if any(p <= 0 for p in powers):
        raise AcquisitionError("all powers must be > 0")
    pts1, pts2 = [], []
    for idx, power in enumerate(powers):
        v1, v2 = simulate_detector_stream(
            cal_truth, power, adc, samples_per_point, seed, stream=(idx,)
        )
        pts1.append((float(power), float(np.var(v1, ddof=1))))
        pts2.append((float(power), float(np.var(v2, ddof=1))))
    return [pts1, pts2]


@dataclass(frozen=True)
class LoMonitorReport:
    ok: bool
    max_rel_deviation: float
    violations: tuple[int, ...]


def lo_monitor_check(
    monitor_powers: Sequence[float], nominal: float, rel_tolerance: float
) -> LoMonitorReport:
    """Flag monitor samples deviating more than rel_tolerance from nominal.

    Pipeline policy: blocks whose monitor sample is flagged are discarded.
    """
    if not nominal > 0:
        raise AcquisitionError("nominal power must be > 0")
    if not rel_tolerance > 0:
        raise AcquisitionError("rel_tolerance must be > 0")
    p = np.asarray(monitor_powers, dtype=np.float64)
    if p.size == 0:
        raise AcquisitionError("empty monitor sequence")
    dev = np.abs(p / nominal - 1.0)
    bad = np.flatnonzero(dev > rel_tolerance)
    return LoMonitorReport(
        ok=bad.size == 0,
        max_rel_deviation=float(dev.max()),
        violations=tuple(int(i) for i in bad),
    )


# --- QRB1 sample files ----------------------------------------------------


def _pack_header(adc: AdcConfig, lo_power: float) -> bytes:
    return QRB1_HEADER.pack(
        QRB1_MAGIC, QRB1_VERSION, adc.bits, adc.sample_rate, adc.full_scale, lo_power
    )


def _unpack_header(raw: bytes) -> tuple[AdcConfig, float]:
    if len(raw) != QRB1_HEADER.size:
        raise AcquisitionError("truncated QRB1 header")
    magic, version, bits, rate, full_scale, lo_power = QRB1_HEADER.unpack(raw)
    if magic != QRB1_MAGIC:
        raise AcquisitionError(f"not a QRB1 file (magic {magic!r})")
    if version != QRB1_VERSION:
        raise AcquisitionError(f"unsupported QRB1 version {version}")
    return AdcConfig(sample_rate=rate, bits=bits, full_scale=full_scale), lo_power


class Qrb1Writer:
    """Streaming QRB1 writer: header once, then appended sample blocks."""

    def __init__(self, path, adc: AdcConfig, lo_power: float):
        self.adc = adc
        self.lo_power = lo_power
        self._fh = open(path, "wb")
        self._fh.write(_pack_header(adc, lo_power))

    def append(self, codes_i: np.ndarray, codes_q: np.ndarray) -> None:
        ci = np.asarray(codes_i, dtype="<i2")
        cq = np.asarray(codes_q, dtype="<i2")
        if ci.shape != cq.shape:
            raise AcquisitionError("unequal channel lengths")
        inter = np.empty(2 * ci.size, dtype="<i2")
        inter[0::2] = ci
        inter[1::2] = cq
        self._fh.write(inter.tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_qrb1(path, block: SampleBlock) -> None:
    with Qrb1Writer(path, block.adc, block.lo_power) as w:
        w.append(block.codes_i, block.codes_q)


def read_qrb1(path) -> SampleBlock:
    """Read a whole QRB1 file.  clipped_count/seed_tag are not stored in the
    format and come back as 0."""
    with open(path, "rb") as fh:
        adc, lo_power = _unpack_header(fh.read(QRB1_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<i2")
    if data.size % 2:
        raise AcquisitionError("QRB1 payload is not I,Q interleaved")
    return SampleBlock(
        codes_i=data[0::2].astype(np.int16),
        codes_q=data[1::2].astype(np.int16),
        adc=adc,
        lo_power=lo_power,
    )


def iter_qrb1_blocks(path, block_samples: int) -> Iterator[SampleBlock]:
    """Yield SampleBlocks of at most ``block_samples`` pairs from a file."""
    if block_samples < 1:
        raise AcquisitionError("block_samples must be >= 1")
    with open(path, "rb") as fh:
        adc, lo_power = _unpack_header(fh.read(QRB1_HEADER.size))
        while True:
            raw = fh.read(4 * block_samples)
            if not raw:
                break
            data = np.frombuffer(raw, dtype="<i2")
            if data.size % 2:
                raise AcquisitionError("QRB1 payload is not I,Q interleaved")
            yield SampleBlock(
                codes_i=data[0::2].astype(np.int16),
                codes_q=data[1::2].astype(np.int16),
                adc=adc,
                lo_power=lo_power,
            )
