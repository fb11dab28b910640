"""Statistical screening of bit streams (SP 800-22 style subset).

Eight standard tests are implemented natively: monobit, block frequency,
runs, longest run of ones, cumulative sums, spectral (DFT), approximate
entropy and serial.  Statistics and p-value formulas follow the public
NIST SP 800-22 definitions; every test is a deterministic pure function
of its input and parameters.

Passing is screening, not certification: it only shows the particular
patterns probed are absent.  Output files written by the pipeline are
plain raw bits so external suites can be run on the same data for fuller
coverage.

Battery policy: a single failure at the configured significance level
triggers one automatic retest on a fresh block (when a source of fresh
bits is available) before the failure is reported; both outcomes are kept
in the battery log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import erfc, gammaincc, ndtr

from .extractor import BitBlock

__all__ = [
    "RandTestError",
    "TestResult",
    "BatteryResult",
    "TEST_NAMES",
    "run_test",
    "run_battery",
]


class RandTestError(ValueError):
    """Invalid test input or parameters."""


@dataclass(frozen=True)
class TestResult:
    name: str
    p_value: float
    passed: bool
    statistic: float
    n_bits: int


def _as_bits(bits) -> np.ndarray:
    if isinstance(bits, BitBlock):
        return bits.to_bits()
    b = np.asarray(bits, dtype=np.uint8)
    if b.ndim != 1:
        raise RandTestError("bits must be a 1-D sequence")
    return b


def _require(n: int, minimum: int, name: str) -> None:
    if n < minimum:
        raise RandTestError(f"{name}: need at least {minimum} bits, got {n}")


def _result(name: str, p: float, stat: float, n: int, alpha: float) -> TestResult:
    p = float(min(max(p, 0.0), 1.0))
    return TestResult(name=name, p_value=p, passed=p >= alpha,
                      statistic=float(stat), n_bits=n)


def _monobit(b: np.ndarray, alpha: float) -> TestResult:
    n = b.size
    _require(n, 100, "monobit")
    s = 2 * int(b.sum()) - n
    p = erfc(abs(s) / math.sqrt(2.0 * n))
    return _result("monobit", p, s, n, alpha)


def _block_frequency(b: np.ndarray, alpha: float, block_size: Optional[int] = None) -> TestResult:
    n = b.size
    _require(n, 100, "block_frequency")
    m = block_size if block_size else max(20, -(-n // 99))
    n_blocks = n // m
    if n_blocks < 1:
        raise RandTestError(f"block_frequency: block_size {m} exceeds input")
    pi = b[: n_blocks * m].reshape(n_blocks, m).mean(axis=1)
    chi2 = 4.0 * m * float(((pi - 0.5) ** 2).sum())
    p = gammaincc(n_blocks / 2.0, chi2 / 2.0)
    return _result("block_frequency", p, chi2, n, alpha)


def _runs(b: np.ndarray, alpha: float) -> TestResult:
    n = b.size
    _require(n, 100, "runs")
    pi = float(b.mean())
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        # frequency prerequisite failed; the runs statistic is meaningless
        return _result("runs", 0.0, float("nan"), n, alpha)
    v = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    num = abs(v - 2.0 * n * pi * (1.0 - pi))
    den = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    p = erfc(num / den)
    return _result("runs", p, v, n, alpha)


_LONGEST_RUN_TABLES = (
    # (min_bits, block_size, category upper edges, category probabilities)
    (750000, 10000, (10, 11, 12, 13, 14, 15),
     (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, (4, 5, 6, 7, 8),
     (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 2, 3),
     (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _max_run_per_block(b: np.ndarray, n_blocks: int, m: int) -> np.ndarray:
    # insert a zero column between blocks so runs cannot straddle borders
    grid = np.zeros((n_blocks, m + 1), dtype=np.uint8)
    grid[:, :m] = b[: n_blocks * m].reshape(n_blocks, m)
    flat = np.concatenate([[0], grid.reshape(-1), [0]]).astype(np.int8)
    edges = np.diff(flat)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    maxima = np.zeros(n_blocks, dtype=np.int64)
    if starts.size:
        lengths = ends - starts
        np.maximum.at(maxima, starts // (m + 1), lengths)
    return maxima


def _longest_run(b: np.ndarray, alpha: float) -> TestResult:
    n = b.size
    _require(n, 128, "longest_run")
    for min_bits, m, edges, probs in _LONGEST_RUN_TABLES:
        if n >= min_bits:
            break
    n_blocks = n // m
    maxima = _max_run_per_block(b, n_blocks, m)
    k = len(edges)
    cats = np.clip(np.searchsorted(edges, maxima, side="left"), 0, k)
    counts = np.bincount(cats, minlength=k + 1)
    expected = n_blocks * np.asarray(probs)
    chi2 = float((((counts - expected) ** 2) / expected).sum())
    p = gammaincc(k / 2.0, chi2 / 2.0)
    return _result("longest_run", p, chi2, n, alpha)


def _cusum_p_value(z: int, n: int) -> float:
    sq = math.sqrt(n)
    # terms with |4k*z| >> sqrt(n) contribute nothing; clip the k ranges
    reach = int(math.ceil(10.0 * sq / (4.0 * z))) + 2
    lo1 = max(math.floor((-n / z + 1) / 4.0), -reach)
    hi1 = min(math.floor((n / z - 1) / 4.0), reach)
    k = np.arange(lo1, hi1 + 1)
    term1 = float((ndtr((4 * k + 1) * z / sq) - ndtr((4 * k - 1) * z / sq)).sum())
    lo2 = max(math.floor((-n / z - 3) / 4.0), -reach)
    hi2 = min(math.floor((n / z - 1) / 4.0), reach)
    k = np.arange(lo2, hi2 + 1)
    term2 = float((ndtr((4 * k + 3) * z / sq) - ndtr((4 * k + 1) * z / sq)).sum())
    return 1.0 - term1 + term2


def _cumulative_sums(b: np.ndarray, alpha: float, mode: int = 0) -> TestResult:
    n = b.size
    _require(n, 100, "cumulative_sums")
    x = b.astype(np.int64) * 2 - 1
    if mode:
        x = x[::-1]
    s = np.cumsum(x)
    z = int(np.abs(s).max())
    p = _cusum_p_value(z, n)
    return _result("cumulative_sums", p, z, n, alpha)


def _dft(b: np.ndarray, alpha: float) -> TestResult:
    n = b.size
    _require(n, 1000, "dft")
    x = b.astype(np.float32) * 2 - 1
    spectrum = sfft.rfft(x)
    mags = np.abs(spectrum[: n // 2])
    threshold = math.sqrt(n * math.log(1.0 / 0.05))
    n1 = int(np.count_nonzero(mags < threshold))
    n0 = 0.95 * n / 2.0
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    p = erfc(abs(d) / math.sqrt(2.0))
    return _result("dft", p, d, n, alpha)


def _pattern_counts(b: np.ndarray, m: int) -> np.ndarray:
    """Counts of the n overlapping m-bit patterns, cyclic extension."""
    n = b.size
    ext = np.concatenate([b, b[: m - 1]]) if m > 1 else b
    val = np.zeros(n, dtype=np.int64)
    for j in range(m):
        val <<= 1
        val += ext[j : j + n]
    return np.bincount(val, minlength=1 << m)


def _approximate_entropy(b: np.ndarray, alpha: float, m: int = 2) -> TestResult:
    n = b.size
    _require(n, 100, "approximate_entropy")
    if m < 1 or m >= math.log2(n) - 5:
        raise RandTestError(
            f"approximate_entropy: need 1 <= m < log2(n)-5, got m={m} for n={n}"
        )

    def phi(mm: int) -> float:
        c = _pattern_counts(b, mm) / n
        c = c[c > 0]
        return float((c * np.log(c)).sum())

    apen = phi(m) - phi(m + 1)
    chi2 = 2.0 * n * (math.log(2.0) - apen)
    p = gammaincc(2 ** (m - 1), chi2 / 2.0)
    return _result("approximate_entropy", p, chi2, n, alpha)


def _serial(b: np.ndarray, alpha: float, m: int = 8) -> TestResult:
    n = b.size
    _require(n, 100, "serial")
    if m < 3 or m >= math.log2(n) - 2:
        raise RandTestError(
            f"serial: need 3 <= m < log2(n)-2, got m={m} for n={n}"
        )

    def psi2(mm: int) -> float:
        if mm == 0:
            return 0.0
        c = _pattern_counts(b, mm).astype(np.float64)
        return float((1 << mm) / n * (c**2).sum() - n)

    p_m, p_m1, p_m2 = psi2(m), psi2(m - 1), psi2(m - 2)
    d1 = p_m - p_m1
    d2 = p_m - 2.0 * p_m1 + p_m2
    p1 = gammaincc(2 ** (m - 2), d1 / 2.0)
    p2 = gammaincc(2 ** (m - 3), d2 / 2.0)
    # the smallest of the pair is what the battery reports for the category
    return _result("serial", min(p1, p2), d1, n, alpha)


_TESTS: dict[str, Callable] = {
    "monobit": _monobit,
    "block_frequency": _block_frequency,
    "runs": _runs,
    "longest_run": _longest_run,
    "cumulative_sums": _cumulative_sums,
    "dft": _dft,
    "approximate_entropy": _approximate_entropy,
    "serial": _serial,
}

TEST_NAMES = tuple(_TESTS)


def run_test(name: str, bits, alpha: float = 0.01, **params) -> TestResult:
    """Run one named test; deterministic in (bits, params)."""
    if name not in _TESTS:
        raise RandTestError(f"unknown test {name!r}; available: {TEST_NAMES}")
    if not 0.0 < alpha < 1.0:
        raise RandTestError(f"alpha must be in (0, 1), got {alpha}")
    return _TESTS[name](_as_bits(bits), alpha, **params)


@dataclass
class BatteryResult:
    results: list[TestResult]
    alpha: float
    retest_log: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def n_passed(self) -> int:
        return sum(r.passed for r in self.results)

    def to_table_text(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [f"{'test':<{width}}  {'p_value':>10}  result"]
        for r in self.results:
            verdict = "PASSED" if r.passed else "FAILED"
            lines.append(f"{r.name:<{width}}  {r.p_value:>10.6f}  {verdict}")
        for name, first, second in self.retest_log:
            lines.append(f"# {name}: first attempt p={first:.6f}, retest p={second:.6f}")
        lines.append(f"# {self.n_passed}/{len(self.results)} passed at alpha={self.alpha}")
        return "\n".join(lines) + "\n"

    def to_kv_text(self) -> str:
        lines = [f"alpha={self.alpha!r}"]
        for r in self.results:
            lines.append(f"{r.name}.p_value={r.p_value!r}")
            lines.append(f"{r.name}.passed={str(r.passed).lower()}")
        for name, first, second in self.retest_log:
            lines.append(f"# retest {name}: first={first!r} second={second!r}")
        lines.append(f"all_passed={str(self.all_passed).lower()}")
        return "\n".join(lines) + "\n"


def run_battery(
    bits,
    alpha: float = 0.01,
    tests: Sequence[str] = TEST_NAMES,
    params: Optional[dict[str, dict]] = None,
    retest_source: Optional[Callable[[int], np.ndarray]] = None,
) -> BatteryResult:
    """Run the enabled tests; single statistical failures get one retest.

    ``retest_source(n_bits)`` must return fresh bits disjoint from the
    primary input; without it failures stand as they are.
    """
    b = _as_bits(bits)
    params = params or {}
    out = BatteryResult(results=[], alpha=alpha)
    for name in tests:
        res = run_test(name, b, alpha, **params.get(name, {}))
        if not res.passed and retest_source is not None:
            fresh = _as_bits(retest_source(b.size))
            second = run_test(name, fresh, alpha, **params.get(name, {}))
            out.retest_log.append((name, res.p_value, second.p_value))
            res = second
        out.results.append(res)
    return out
