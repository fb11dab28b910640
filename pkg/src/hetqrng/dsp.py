"""Digital signal processing: ideal band selection and decorrelation.

The band filter is an exact frequency-domain brick wall: transform, zero
every bin strictly outside [f_lo, f_hi] (the DC bin is always removed),
inverse transform.  An ideal band of width B induces a sinc-shaped
autocorrelation whose zeros sit at multiples of fs/B, so keeping every
M-th sample with M = fs/B removes the correlation the oversampling
introduced; ``decorrelating_downsample`` enforces an integer M.

Long streams are processed block-wise with discarded edge margins to
avoid circular wrap-around (``stream_filter_decimate``).  For throughput
work the same operation has a fused single-precision form that never
materializes the full-rate filtered signal: the kept bins are folded by
aliasing into a spectrum of length n/M and inverted at the decimated
length directly.  Both forms share the bin-selection rule and agree to
floating-point precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
import scipy.fft as sfft
import scipy.signal

__all__ = [
    "DspError",
    "BandSpec",
    "PsdEstimate",
    "bandpass_brickwall",
    "decorrelating_downsample",
    "downsample_factor",
    "fused_bandpass_decimate",
    "stream_filter_decimate",
    "autocorrelation",
    "welch_psd",
    "band_gap_db",
]


class DspError(ValueError):
    """Invalid DSP configuration or input."""


@dataclass(frozen=True)
class BandSpec:
    """Pass band [f_lo, f_hi] in Hz."""

    f_lo: float
    f_hi: float

    def __post_init__(self) -> None:
        if not (0 <= self.f_lo < self.f_hi):
            raise DspError(f"need 0 <= f_lo < f_hi, got [{self.f_lo}, {self.f_hi}]")

    @property
    def width(self) -> float:
        return self.f_hi - self.f_lo

    def validate_for(self, sample_rate: float) -> None:
        if self.f_hi > sample_rate / 2 * (1 + 1e-12):
            raise DspError(
                f"band upper edge {self.f_hi} Hz exceeds Nyquist "
                f"{sample_rate / 2} Hz"
            )


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided averaged-periodogram spectral density."""

    frequencies: np.ndarray
    power: np.ndarray
    segment_length: int
    overlap: float

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        if f.ndim != 1 or f.shape != p.shape:
            raise DspError("frequencies/power must be 1-D and equal length")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise DspError("frequencies must be strictly increasing")
        if np.any(p < 0):
            raise DspError("power must be >= 0")


def _band_mask(n: int, sample_rate: float, band: BandSpec) -> np.ndarray:
    """Kept-bin mask over rfft bins; edges inclusive, DC always dropped."""
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    mask = (freqs >= band.f_lo) & (freqs <= band.f_hi)
    mask[0] = False
    return mask


_BAND_RANGE_CACHE: dict[tuple, tuple[int, int]] = {}


def _band_bin_range(n: int, sample_rate: float, band: BandSpec) -> tuple[int, int]:
    """Kept rfft bins as the inclusive contiguous range [k0, k1]."""
    key = (n, sample_rate, band.f_lo, band.f_hi)
    rng = _BAND_RANGE_CACHE.get(key)
    if rng is None:
        kept = np.flatnonzero(_band_mask(n, sample_rate, band))
        if kept.size == 0:
            raise DspError("band keeps no bins at this length")
        rng = (int(kept[0]), int(kept[-1]))
        _BAND_RANGE_CACHE[key] = rng
    return rng


def bandpass_brickwall(stream, sample_rate: float, band: BandSpec) -> np.ndarray:
    """Exact brick-wall band filter of a whole stream (float64)."""
    x = np.asarray(stream, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DspError("stream must be 1-D with length >= 2")
    band.validate_for(sample_rate)
    spec = sfft.rfft(x)
    spec[~_band_mask(x.size, sample_rate, band)] = 0.0
    return sfft.irfft(spec, x.size)


def downsample_factor(sample_rate: float, band: BandSpec) -> int:
    """Integer M = sample_rate / band width; error if not integer."""
    ratio = sample_rate / band.width
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * ratio:
        raise DspError(
            f"sample_rate/band_width = {ratio!r} is not an integer; adjust the "
            "band so its width divides the sample rate"
        )
    return m


def decorrelating_downsample(
    stream, sample_rate: float, band: BandSpec, *, phase: int = 0
) -> tuple[np.ndarray, float]:
    """Keep every M-th sample, M matching the first autocorrelation zero of
    a ``band``-limited signal.  Returns (decimated, new_rate)."""
    band.validate_for(sample_rate)
    m = downsample_factor(sample_rate, band)
    x = np.asarray(stream)
    if not 0 <= phase < m:
        raise DspError(f"phase must be in [0, {m}), got {phase}")
    return x[phase::m], sample_rate / m


def fused_bandpass_decimate(
    stream,
    sample_rate: float,
    band: BandSpec,
    *,
    phase: int = 0,
    dtype=np.float32,
) -> np.ndarray:
    """Brick-wall filter + decimate in one pass via spectral aliasing.

    Equivalent to ``decorrelating_downsample(bandpass_brickwall(x))`` up to
    floating-point precision, but inverse-transforms only at the decimated
    length.  Input length must be a multiple of M.
    """
    x = np.asarray(stream, dtype=dtype)
    band.validate_for(sample_rate)
    m_fac = downsample_factor(sample_rate, band)
    n = x.size
    if n % m_fac:
        raise DspError(f"stream length {n} is not a multiple of M={m_fac}")
    m = n // m_fac
    spec = sfft.rfft(x)
    k0, k1 = _band_bin_range(n, sample_rate, band)
    if phase:
        kept = np.arange(k0, k1 + 1)
        spec[k0 : k1 + 1] *= np.exp(2j * np.pi * phase / n * kept)
    cdtype = np.complex64 if dtype == np.float32 else np.complex128
    # fold the kept (one-sided) bins by residue mod m: slice adds, since the
    # band is one contiguous run
    fold = np.zeros(m, dtype=cdtype)
    for s in range(k0 // m, k1 // m + 1):
        a = max(k0, s * m)
        b = min(k1 + 1, (s + 1) * m)
        fold[a - s * m : b - s * m] += spec[a:b]
    # one-sided spectrum of the folded signal: direct residues plus the
    # conjugate mirrors that land in [0, m/2]
    half = np.empty(m // 2 + 1, dtype=cdtype)
    half[: m // 2 + 1] = fold[: m // 2 + 1]
    mirror = np.empty(m // 2 + 1, dtype=cdtype)
    mirror[0] = fold[0]
    mirror[1:] = fold[m - m // 2 :][::-1]  # fold[(m - g) % m] for g = 1..m//2
    half += np.conj(mirror)
    if k0 <= n // 2 <= k1:
        # the Nyquist bin is its own mirror: counted once, not twice
        g = (n // 2) % m
        half[g] -= spec[n // 2]
    half[0] = half[0].real
    if m % 2 == 0:
        half[m // 2] = half[m // 2].real
    return sfft.irfft(half, m) / m_fac


class StreamFilterDecimator:
    """Block-wise brick-wall + decimate with push semantics.

    Windows of ``block_len`` samples are filtered with circular transforms;
    an edge margin of ``margin_factor * M`` samples per side is discarded
    to suppress wrap-around, with overlapping reads keeping the output
    continuous.  Margins and hops are multiples of M so the decimation
    grid stays aligned across windows.  Streams no longer than one window
    get a single whole-stream (exact) transform.
    """

    def __init__(
        self,
        sample_rate: float,
        band: BandSpec,
        *,
        block_len: int = 1 << 20,
        margin_factor: int = 1024,
        phase: int = 0,
        fast: bool = False,
    ):
        band.validate_for(sample_rate)
        self.sample_rate = sample_rate
        self.band = band
        self.m = downsample_factor(sample_rate, band)
        self.block_len = (block_len // self.m) * self.m
        self.margin = margin_factor * self.m
        if self.block_len <= 2 * self.margin + self.m:
            raise DspError("block_len too small for the edge margin")
        self.phase = phase
        self.fast = fast
        self._dtype = np.float32 if fast else np.float64
        self._buf = np.empty(0, dtype=self._dtype)
        self._consumed = 0
        self._hop = self.block_len - 2 * self.margin
        self._flushed = False

    def _one(self, x: np.ndarray) -> np.ndarray:
        if self.fast:
            return fused_bandpass_decimate(
                x, self.sample_rate, self.band, phase=self.phase
            )
        y = bandpass_brickwall(x, self.sample_rate, self.band)
        return y[self.phase :: self.m]

    def push(self, chunk: np.ndarray) -> list[np.ndarray]:
        """Feed samples; return any decimated output that became ready."""
        if self._flushed:
            raise DspError("decimator already flushed")
        self._buf = np.concatenate(
            [self._buf, np.asarray(chunk, dtype=self._dtype)]
        )
        out = []
        while self._buf.size >= self.block_len:
            dec = self._one(self._buf[: self.block_len])
            lo = 0 if self._consumed == 0 else self.margin // self.m
            hi = (self.block_len - self.margin) // self.m
            out.append(dec[lo:hi])
            self._buf = self._buf[self._hop :]
            self._consumed += self._hop
        return out

    def flush(self) -> list[np.ndarray]:
        """Process the remaining tail (right margin kept: no neighbor)."""
        if self._flushed:
            return []
        self._flushed = True
        n = (self._buf.size // self.m) * self.m
        if n == 0:
            return []
        if n < 2:
            return []
        dec = self._one(self._buf[:n])
        self._buf = np.empty(0, dtype=self._dtype)
        lo = 0 if self._consumed == 0 else self.margin // self.m
        return [dec[lo:]] if lo < dec.size else []


def stream_filter_decimate(
    chunks: Iterable[np.ndarray],
    sample_rate: float,
    band: BandSpec,
    *,
    block_len: int = 1 << 20,
    margin_factor: int = 1024,
    phase: int = 0,
    fast: bool = False,
) -> Iterator[np.ndarray]:
    """Generator form of :class:`StreamFilterDecimator`."""
    filt = StreamFilterDecimator(
        sample_rate, band, block_len=block_len, margin_factor=margin_factor,
        phase=phase, fast=fast,
    )
    for chunk in chunks:
        yield from filt.push(chunk)
    yield from filt.flush()


def autocorrelation(stream, max_lag: int) -> np.ndarray:
    """Normalized biased autocorrelation r(0..max_lag), r(0) = 1.

    Computes sum_t (x_t - mean)(x_{t+k} - mean) exactly through segmented
    FFT cross-correlation, so memory stays bounded for long streams.
    """
    x = np.asarray(stream, dtype=np.float64)
    if x.ndim != 1:
        raise DspError("stream must be 1-D")
    n = x.size
    if max_lag < 0 or max_lag >= n / 2:
        raise DspError(f"need 0 <= max_lag < n/2 = {n / 2}, got {max_lag}")
    mean = float(x.mean())
    c = np.zeros(max_lag + 1)
    seg = max(1 << 20, 4 * (max_lag + 1))
    for start in range(0, n, seg):
        a = x[start : start + seg] - mean
        b = x[start : start + seg + max_lag] - mean
        nfft = sfft.next_fast_len(b.size + max_lag)
        fa = sfft.rfft(a, nfft)
        fb = sfft.rfft(b, nfft)
        corr = sfft.irfft(np.conj(fa) * fb, nfft)
        c += corr[: max_lag + 1]
    if c[0] <= 0:
        raise DspError("zero-variance (constant) stream has no autocorrelation")
    return c / c[0]


def welch_psd(
    stream, sample_rate: float, segment_length: int, overlap: float
) -> PsdEstimate:
    """Hann-windowed averaged periodogram, one-sided density (V^2/Hz)."""
    x = np.asarray(stream, dtype=np.float64)
    if x.size == 0:
        raise DspError("empty stream")
    if segment_length > x.size:
        raise DspError(
            f"segment_length {segment_length} exceeds stream length {x.size}"
        )
    if not 0 <= overlap <= 0.9:
        raise DspError(f"overlap must be in [0, 0.9], got {overlap}")
    freqs, power = scipy.signal.welch(
        x,
        fs=sample_rate,
        window="hann",
        nperseg=segment_length,
        noverlap=int(overlap * segment_length),
        detrend="constant",
        scaling="density",
    )
    return PsdEstimate(
        frequencies=freqs, power=power, segment_length=segment_length, overlap=overlap
    )


def band_gap_db(psd_on: PsdEstimate, psd_off: PsdEstimate, band: BandSpec) -> float:
    """Minimum in-band ratio 10*log10(on/off) between two spectra (dB)."""
    f_on = np.asarray(psd_on.frequencies)
    f_off = np.asarray(psd_off.frequencies)
    if f_on.shape != f_off.shape or not np.allclose(f_on, f_off, rtol=0, atol=1e-6):
        raise DspError("PSD frequency grids do not match")
    sel = (f_on >= band.f_lo) & (f_on <= band.f_hi)
    if not np.any(sel):
        raise DspError("no PSD bins inside the band")
    on = np.asarray(psd_on.power)[sel]
    off = np.asarray(psd_off.power)[sel]
    if np.any(off <= 0):
        raise DspError("reference PSD has empty bins inside the band")
    return float(np.min(10.0 * np.log10(on / off)))
