"""GF(2) polynomial (carry-less) convolution with two interchangeable kernels.

Bit sequences are polynomials over GF(2); the Toeplitz hash reduces to one
big carry-less product.  Two implementations are provided:

* ``fft``  — portable NumPy path: the 0/1 sequences are convolved with a
  double-precision real FFT and reduced mod 2.  The convolution values are
  far below the 2^53 exact-integer window and the rounding residue is
  checked against a 0.25 guard on every call, so the result is exact.
  O(n log n); preferred for multi-megabit blocks.

* ``clmul`` — compiled extension using the x86 carry-less multiply
  instruction under a Karatsuba recursion.  Selected at import when the
  extension was built and the CPU supports it; much faster below a few
  million bits, which is where the high-throughput pipeline operates.

Both produce bit-identical output; the test suite checks them against a
naive Toeplitz-matrix oracle and against each other.

Representations: "bits" are unpacked 0/1 uint8 arrays; "words" pack bit k
of word w as coefficient x**(64*w + k) (little-endian bit order).
"""

from __future__ import annotations

import sys

import numpy as np
import scipy.fft as sfft

__all__ = [
    "HAVE_CLMUL",
    "KERNEL",
    "bits_to_words",
    "words_to_bits",
    "reverse_bits_words",
    "packed_msb_to_words",
    "words_to_packed_msb",
    "poly_mul_bits",
    "poly_mul_words",
]

try:  # compiled kernel is optional; fall back to the FFT path without it
    from . import _gf2x

    HAVE_CLMUL = bool(_gf2x.have_clmul())
except ImportError:  # pragma: no cover - build environment dependent
    _gf2x = None
    HAVE_CLMUL = False

KERNEL = "clmul" if HAVE_CLMUL else "fft"

#: Above this total bit count the FFT path overtakes Karatsuba ("auto").
CLMUL_AUTO_MAX_BITS = 1 << 22

_FFT_GUARD = 0.25

# per-byte bit reversal table
_BITREV8 = np.array(
    [int(f"{i:08b}"[::-1], 2) for i in range(256)], dtype=np.uint8
)

_NATIVE_LE = sys.byteorder == "little"


def _word_count(n_bits: int) -> int:
    return (n_bits + 63) // 64


def _bytes_view(words: np.ndarray) -> np.ndarray:
    w = np.ascontiguousarray(words, dtype=np.uint64)
    if not _NATIVE_LE:  # pragma: no cover
        w = w.byteswap()
    return w.view(np.uint8)


def _words_from_bytes(b: np.ndarray) -> np.ndarray:
    pad = (-b.size) % 8
    if pad:
        b = np.concatenate([b, np.zeros(pad, dtype=np.uint8)])
    w = b.view(np.uint64)
    if not _NATIVE_LE:  # pragma: no cover
        w = w.byteswap()
    return w


def bits_to_words(bits: np.ndarray) -> np.ndarray:
    """Pack a 0/1 uint8 array into words."""
    return _words_from_bytes(np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little"))


def words_to_bits(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Unpack words into a 0/1 uint8 array of length ``n_bits``."""
    return np.unpackbits(_bytes_view(words), bitorder="little", count=n_bits)


def packed_msb_to_words(data: np.ndarray, n_bits: int) -> np.ndarray:
    """Convert MSB-first packed bytes (np.packbits default) to words.

    Trailing padding bits of the final byte must be zero.
    """
    b = _BITREV8[np.asarray(data, dtype=np.uint8)]
    words = _words_from_bytes(b)
    return words[: _word_count(n_bits)]


def words_to_packed_msb(words: np.ndarray, start_bit: int, n_bits: int) -> np.ndarray:
    """Extract bits [start_bit, start_bit + n_bits) into MSB-first bytes.

    The word array is shift-aligned so no unpacked intermediate is built,
    which keeps the extractor hot path at memory-bandwidth cost.
    """
    if n_bits <= 0:
        return np.zeros(0, dtype=np.uint8)
    w = np.ascontiguousarray(words, dtype=np.uint64)
    k0 = start_bit >> 6
    r = start_bit & 63
    nw = _word_count(n_bits + r)
    chunk = w[k0 : k0 + nw]
    if chunk.size < nw:
        chunk = np.concatenate([chunk, np.zeros(nw - chunk.size, dtype=np.uint64)])
    if r:
        shifted = chunk >> np.uint64(r)
        shifted[:-1] |= chunk[1:] << np.uint64(64 - r)
        if _word_count(n_bits) < nw:
            shifted = shifted[: _word_count(n_bits)]
        chunk = shifted
    else:
        chunk = chunk[: _word_count(n_bits)].copy()
    # zero any bits beyond n_bits, then re-order to MSB-first bytes
    tail = n_bits & 63
    if tail:
        chunk[-1] &= np.uint64((1 << tail) - 1)
    nbytes = (n_bits + 7) // 8
    return _BITREV8[_bytes_view(chunk)[:nbytes]]


def reverse_bits_words(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Bit-reverse the first ``n_bits`` of a word array (word domain).

    Accepts a 1-D array or a 2-D batch (one bit string per row).
    """
    nw = _word_count(n_bits)
    w = np.ascontiguousarray(words, dtype=np.uint64)[..., :nw].copy()
    tail = n_bits & 63
    if tail:
        w[..., -1] &= np.uint64((1 << tail) - 1)
    b = w.view(np.uint8) if _NATIVE_LE else w.byteswap().view(np.uint8)
    rev = np.ascontiguousarray(_BITREV8[b[..., ::-1]]).view(np.uint64)
    if not _NATIVE_LE:  # pragma: no cover
        rev = rev.byteswap()
    # the reversal of the padded 64*nw-bit string leads the true reversal
    # by the padding amount; shift it out
    pad = 64 * nw - n_bits
    if pad:
        out = rev >> np.uint64(pad)
        out[..., :-1] |= rev[..., 1:] << np.uint64(64 - pad)
    else:
        out = rev
    return out[..., :nw]


def _poly_mul_fft_bits(a_bits: np.ndarray, b_bits: np.ndarray) -> np.ndarray:
    n_out = a_bits.size + b_bits.size - 1
    nfft = sfft.next_fast_len(n_out)
    fa = sfft.rfft(a_bits.astype(np.float64), nfft)
    fb = sfft.rfft(b_bits.astype(np.float64), nfft)
    conv = sfft.irfft(fa * fb, nfft)[:n_out]
    rounded = np.rint(conv)
    err = float(np.max(np.abs(conv - rounded))) if n_out else 0.0
    if err > _FFT_GUARD:
        raise ArithmeticError(
            f"FFT convolution rounding residue {err:.3g} exceeds the exactness "
            "guard; operands too large for the double-precision path"
        )
    return (rounded.astype(np.int64) & 1).astype(np.uint8)


def _resolve_method(method: str, total_bits: int) -> str:
    if method == "auto":
        return "clmul" if HAVE_CLMUL and total_bits <= CLMUL_AUTO_MAX_BITS else "fft"
    if method == "clmul" and not HAVE_CLMUL:
        raise RuntimeError("clmul kernel unavailable on this platform")
    if method not in ("clmul", "fft"):
        raise ValueError(f"unknown method {method!r}")
    return method


def poly_mul_words(
    a_words: np.ndarray, a_bits: int, b_words: np.ndarray, b_bits: int,
    method: str = "auto",
) -> np.ndarray:
    """Carry-less product in the packed-word domain.

    Bits of the operands beyond their stated lengths must be zero.  Returns
    a word array holding the (a_bits + b_bits - 1)-bit product.
    """
    if a_bits <= 0 or b_bits <= 0:
        raise ValueError("empty operand")
    method = _resolve_method(method, a_bits + b_bits)
    if method == "clmul":
        return _gf2x.poly_mul(
            np.ascontiguousarray(a_words[: _word_count(a_bits)], dtype=np.uint64),
            np.ascontiguousarray(b_words[: _word_count(b_bits)], dtype=np.uint64),
        )
    out = _poly_mul_fft_bits(words_to_bits(a_words, a_bits), words_to_bits(b_words, b_bits))
    return bits_to_words(out)


def poly_mul_bits(a_bits: np.ndarray, b_bits: np.ndarray, method: str = "auto") -> np.ndarray:
    """Carry-less product of two 0/1 bit sequences (uint8 in, uint8 out)."""
    a = np.asarray(a_bits, dtype=np.uint8)
    b = np.asarray(b_bits, dtype=np.uint8)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty operand")
    method = _resolve_method(method, a.size + b.size)
    if method == "fft":
        return _poly_mul_fft_bits(a, b)
    out_words = _gf2x.poly_mul(bits_to_words(a), bits_to_words(b))
    return words_to_bits(out_words, a.size + b.size - 1)
