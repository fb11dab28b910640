"""Seeded Toeplitz randomness extraction.

A uniformly seeded Toeplitz bit matrix is a two-universal hash family, so
by the leftover hash lemma hashing n raw samples carrying H_min bits of
conditional min-entropy each down to

    len = floor(n * H_min - 2*log2(1/epsilon))

bits leaves output epsilon-close to uniform even given the side
information the entropy bound conditions on.

Matrix convention (fixed here; the hash family does not depend on it):
the n_out x n_in matrix T built from a seed of n_in + n_out - 1 bits has
T[i, j] = seed[n_out - 1 + j - i]; the first column is seed[0:n_out] read
bottom-up and the first row is seed[n_out-1:].  T.x over GF(2) is one
band of the carry-less product of the bit-reversed seed with the input,
so extraction runs on the convolution kernels in :mod:`hetqrng.gf2` and
is bit-exact equal to the naive matrix product
(:func:`toeplitz_extract_naive`, kept as the verification oracle).

Seed material comes from a counter-based "tape": a Philox stream keyed
once per master seed and addressed by absolute word offset, so any block
can fetch its seed segment independently of processing order or batch
layout.  This expander emulates seed sourcing for the simulator only; a
cryptographic deployment must supply the Toeplitz seed from an
independent uniform source.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import gf2
from .acquisition import AdcConfig, SampleBlock

__all__ = [
    "ExtractorError",
    "BitBlock",
    "ExtractorParams",
    "ExtractionOut",
    "StreamExtractor",
    "output_length",
    "seed_expand",
    "seed_tape_words",
    "pack_samples_to_bits",
    "toeplitz_extract",
    "toeplitz_extract_naive",
]

#: Default extractor security parameter.
DEFAULT_EPSILON = 2.0**-100

#: Default samples per extraction call.
DEFAULT_BLOCK_SAMPLES = 1_000_000

# absorbs double-rounding of n*hmin at exact-integer boundaries
_FLOOR_GUARD = 1e-6

_TAPE_LABEL = 0x74617065  # disambiguates the seed tape from other streams


class ExtractorError(ValueError):
    """Invalid extractor configuration or input."""


@dataclass(eq=False)
class BitBlock:
    """A bit string packed MSB-first into bytes, with provenance tag."""

    data: np.ndarray
    n_bits: int
    origin: str = "raw"

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.origin not in ("raw", "extracted"):
            raise ExtractorError(f"unknown origin {self.origin!r}")
        if self.n_bits < 0 or self.data.size != (self.n_bits + 7) // 8:
            raise ExtractorError(
                f"data holds {self.data.size} bytes, expected "
                f"{(self.n_bits + 7) // 8} for {self.n_bits} bits"
            )
        pad = -self.n_bits % 8
        if pad and self.data.size and (int(self.data[-1]) & ((1 << pad) - 1)):
            raise ExtractorError("padding bits of the final byte must be zero")

    @classmethod
    def from_bits(cls, bits, origin: str = "raw") -> "BitBlock":
        b = np.asarray(bits, dtype=np.uint8)
        return cls(np.packbits(b), int(b.size), origin)

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.data, count=self.n_bits)

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __len__(self) -> int:
        return self.n_bits


def output_length(n_samples: int, hmin_bits_per_sample: float, epsilon: float) -> int:
    """Leftover-hash-lemma output length floor(n*hmin - 2*log2(1/eps))."""
    if n_samples < 1:
        raise ExtractorError(f"need n_samples >= 1, got {n_samples}")
    if not 0.0 < epsilon < 1.0:
        raise ExtractorError(f"epsilon must be in (0, 1), got {epsilon}")
    if not hmin_bits_per_sample > 0:
        raise ExtractorError("hmin_bits_per_sample must be > 0")
    raw = n_samples * hmin_bits_per_sample - 2.0 * math.log2(1.0 / epsilon)
    n_out = math.floor(raw + _FLOOR_GUARD)
    if n_out < 1:
        raise ExtractorError(
            f"block too small for requested epsilon: "
            f"{n_samples} samples x {hmin_bits_per_sample} bits leave {raw:.1f}"
        )
    return n_out


def _tape_key(master_seed: int) -> np.ndarray:
    return np.random.SeedSequence((int(master_seed), _TAPE_LABEL)).generate_state(
        2, np.uint64
    )


def seed_tape_words(master_seed: int, word_offset: int, n_words: int) -> np.ndarray:
    """Words [word_offset, word_offset+n_words) of the master seed's tape.

    The tape is a keyed Philox stream addressed by absolute position, so
    disjoint segments are independent and any segment can be regenerated
    in isolation.
    """
    if word_offset < 0 or n_words < 0:
        raise ExtractorError("tape offsets must be non-negative")
    aligned = word_offset & ~3  # Philox emits 4 words per counter step
    skip = word_offset - aligned
    bg = np.random.Philox(key=_tape_key(master_seed), counter=aligned // 4)
    gen = np.random.Generator(bg)
    words = gen.integers(
        0, 2**64 - 1, size=skip + n_words, dtype=np.uint64, endpoint=True
    )
    return words[skip:]


def seed_expand(master_seed: int, n_needed: int, word_offset: int = 0) -> np.ndarray:
    """Expand a master seed into Toeplitz seed bits (0/1 uint8).

    Segments at different ``word_offset`` are disjoint parts of the same
    tape; a fixed (seed, offset) always reproduces the same bits.
    """
    if n_needed < 1:
        raise ExtractorError(f"need n_needed >= 1, got {n_needed}")
    words = seed_tape_words(master_seed, word_offset, (n_needed + 63) // 64)
    return gf2.words_to_bits(words, n_needed)


@dataclass(eq=False)
class ExtractorParams:
    """Everything one extraction call needs; lengths tied by the LHL."""

    input_bits_per_sample: int
    hmin_bits_per_sample: float
    epsilon: float
    n_input_bits: int
    n_output_bits: int
    seed_bits: np.ndarray
    _seed_rev_words: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.seed_bits = np.asarray(self.seed_bits, dtype=np.uint8)
        if self.n_input_bits % self.input_bits_per_sample:
            raise ExtractorError(
                f"{self.n_input_bits} input bits is not a whole number of "
                f"{self.input_bits_per_sample}-bit samples"
            )
        n_samples = self.n_input_bits // self.input_bits_per_sample
        expected = output_length(n_samples, self.hmin_bits_per_sample, self.epsilon)
        if self.n_output_bits != expected:
            raise ExtractorError(
                f"n_output_bits {self.n_output_bits} does not satisfy the "
                f"leftover-hash-lemma length {expected}"
            )
        want = self.n_input_bits + self.n_output_bits - 1
        if self.seed_bits.size != want:
            raise ExtractorError(
                f"seed must hold exactly n_in + n_out - 1 = {want} bits, "
                f"got {self.seed_bits.size}"
            )

    @classmethod
    def for_block(
        cls,
        n_samples: int,
        input_bits_per_sample: int,
        hmin_bits_per_sample: float,
        epsilon: float = DEFAULT_EPSILON,
        seed_bits: Optional[np.ndarray] = None,
        master_seed: Optional[int] = None,
        seed_word_offset: int = 0,
    ) -> "ExtractorParams":
        n_in = n_samples * input_bits_per_sample
        n_out = output_length(n_samples, hmin_bits_per_sample, epsilon)
        if seed_bits is None:
            if master_seed is None:
                raise ExtractorError("provide seed_bits or master_seed")
            seed_bits = seed_expand(
                master_seed, n_in + n_out - 1, word_offset=seed_word_offset
            )
        return cls(
            input_bits_per_sample=input_bits_per_sample,
            hmin_bits_per_sample=hmin_bits_per_sample,
            epsilon=epsilon,
            n_input_bits=n_in,
            n_output_bits=n_out,
            seed_bits=seed_bits,
        )

    @property
    def seed_reversed_words(self) -> np.ndarray:
        if self._seed_rev_words is None:
            self._seed_rev_words = gf2.bits_to_words(self.seed_bits[::-1])
        return self._seed_rev_words


def pack_samples_to_bits(block: SampleBlock) -> BitBlock:
    """Serialize ADC codes to bits: per sample the I code then the Q code,
    two's complement, most-significant bit first."""
    b = block.adc.bits
    if b > 16:
        raise ExtractorError("ADC depths above 16 bits are not supported")
    n = len(block)
    mask = np.uint16((1 << b) - 1)
    iq = np.empty((n, 2), dtype=np.uint16)
    iq[:, 0] = block.codes_i.view(np.uint16) & mask
    iq[:, 1] = block.codes_q.view(np.uint16) & mask
    iq <<= 16 - b  # code bits now at the top, MSB-aligned
    as_bytes = iq.byteswap().view(np.uint8)  # big-endian byte pairs
    bits = np.unpackbits(as_bytes.reshape(-1)).reshape(n, 2, 16)[:, :, :b]
    return BitBlock.from_bits(bits.reshape(-1), origin="raw")


# 10-bit bit-reversal table for the specialized packer below
_REV10 = np.array(
    [int(f"{i:010b}"[::-1], 2) for i in range(1 << 10)], dtype=np.uint32
)


def _codes_to_little_words(ci: np.ndarray, cq: np.ndarray, bits: int) -> np.ndarray:
    """Sample bit stream (I then Q, MSB first) packed straight into the
    little-bit-order words the convolution kernels consume.

    Equals gf2.packed_msb_to_words(pack_samples_to_bits(...)); the 10-bit
    case is built with pure word arithmetic (no bit unpacking), which is
    what the high-rate pipeline runs.
    """
    n = ci.size
    if bits == 10:
        f = _REV10[ci.view(np.uint16) & 0x3FF] | (
            _REV10[cq.view(np.uint16) & 0x3FF] << 10
        )
        pad = -n % 16
        if pad:
            f = np.concatenate([f, np.zeros(pad, dtype=np.uint32)])
        f = f.astype(np.uint64).reshape(-1, 16)
        c = [f[:, k] for k in range(16)]
        w = np.empty((f.shape[0], 5), dtype=np.uint64)
        # 16 20-bit fields tile 5 words exactly
        w[:, 0] = c[0] | c[1] << 20 | c[2] << 40 | c[3] << 60
        w[:, 1] = c[3] >> 4 | c[4] << 16 | c[5] << 36 | c[6] << 56
        w[:, 2] = c[6] >> 8 | c[7] << 12 | c[8] << 32 | c[9] << 52
        w[:, 3] = c[9] >> 12 | c[10] << 8 | c[11] << 28 | c[12] << 48
        w[:, 4] = c[12] >> 16 | c[13] << 4 | c[14] << 24 | c[15] << 44
        return w.reshape(-1)[: (20 * n + 63) // 64]
    from .acquisition import SampleBlock as _SB
    from .acquisition import AdcConfig as _Adc

    adc = _Adc(sample_rate=1.0, bits=bits, full_scale=1.0)
    packed = pack_samples_to_bits(_SB(codes_i=ci, codes_q=cq, adc=adc, lo_power=1.0))
    return gf2.packed_msb_to_words(packed.data, packed.n_bits)


def toeplitz_extract(
    input: BitBlock, params: ExtractorParams, method: str = "auto"
) -> BitBlock:
    """Hash ``input`` with the seeded Toeplitz matrix: output = T.x over GF(2).

    Computed as one carry-less product (reversed seed times input); the
    band [n_in-1, n_in-1+n_out) of the convolution is T.x.
    """
    if input.n_bits != params.n_input_bits:
        raise ExtractorError(
            f"input holds {input.n_bits} bits, extractor expects "
            f"{params.n_input_bits}"
        )
    n_in, n_out = params.n_input_bits, params.n_output_bits
    x_words = gf2.packed_msb_to_words(input.data, n_in)
    conv = gf2.poly_mul_words(
        params.seed_reversed_words, n_in + n_out - 1, x_words, n_in, method=method
    )
    data = gf2.words_to_packed_msb(conv, n_in - 1, n_out)
    return BitBlock(data, n_out, origin="extracted")


def toeplitz_extract_naive(input: BitBlock, params: ExtractorParams) -> BitBlock:
    """Oracle: explicit GF(2) Toeplitz matrix-vector product (O(n_in*n_out)).

    Row i of T is seed[n_out-1-i : n_out-1-i+n_in], i.e. the windows of
    the seed taken in reverse order.
    """
    if input.n_bits != params.n_input_bits:
        raise ExtractorError("input length mismatch")
    x = input.to_bits().astype(np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(
        params.seed_bits, params.n_input_bits
    )
    y = (windows @ x)[::-1] & 1
    return BitBlock.from_bits(y.astype(np.uint8), origin="extracted")


@dataclass
class ExtractionOut:
    """One extracted block plus the bookkeeping the sidecar records."""

    index: int
    n_input_bits: int
    n_output_bits: int
    seed_word_offset: int
    output: BitBlock
    input_sha256: Optional[str] = None
    output_sha256: Optional[str] = None


class StreamExtractor:
    """Chunk a decimated pair stream into extraction blocks and hash them.

    Blocks of ``block_pairs`` samples are hashed as they complete; the
    trailing partial block is hashed at :meth:`flush` when it still
    affords a positive output length, otherwise dropped.  Fresh seed
    material is taken from consecutive segments of the seed tape unless
    ``fresh_seed_per_block`` is off (reuse carries a security caveat: the
    leftover hash lemma is stated for an independent seed per use).

    When many complete blocks of identical word-aligned geometry are
    available and the compiled kernel is present, they are hashed in one
    batched call; the result is bit-identical to the one-block path.
    """

    def __init__(
        self,
        adc: AdcConfig,
        lo_power: float,
        hmin_bits_per_sample: float,
        epsilon: float,
        block_pairs: int,
        master_seed: int,
        fresh_seed_per_block: bool = True,
        method: str = "auto",
        with_digests: bool = True,
        start_index: int = 0,
        start_word_offset: int = 0,
    ):
        if block_pairs < 1:
            raise ExtractorError("block_pairs must be >= 1")
        self.adc = adc
        self.lo_power = lo_power
        self.hmin = hmin_bits_per_sample
        self.epsilon = epsilon
        self.block_pairs = block_pairs
        self.master_seed = master_seed
        self.fresh = fresh_seed_per_block
        self.method = method
        self.with_digests = with_digests
        self.index = start_index
        self.word_offset = start_word_offset
        self.bits_per_sample = 2 * adc.bits
        self.n_in = block_pairs * self.bits_per_sample
        self.n_out = output_length(block_pairs, hmin_bits_per_sample, epsilon)
        self.seed_len = self.n_in + self.n_out - 1
        self._buf_i: list[np.ndarray] = []
        self._buf_q: list[np.ndarray] = []
        self._buffered = 0

    # -- single-block reference path ----------------------------------------

    def _advance_seed(self, seed_len: int) -> int:
        offset = self.word_offset if self.fresh else 0
        if self.fresh:
            self.word_offset += (seed_len + 63) // 64
        return offset

    def _emit_single(self, ci: np.ndarray, cq: np.ndarray) -> Optional[ExtractionOut]:
        n = int(ci.size)
        try:
            n_out = output_length(n, self.hmin, self.epsilon)
        except ExtractorError:
            return None  # tail too small for the epsilon penalty
        n_in = n * self.bits_per_sample
        offset = self._advance_seed(n_in + n_out - 1)
        params = ExtractorParams.for_block(
            n_samples=n,
            input_bits_per_sample=self.bits_per_sample,
            hmin_bits_per_sample=self.hmin,
            epsilon=self.epsilon,
            master_seed=self.master_seed,
            seed_word_offset=offset,
        )
        block = SampleBlock(codes_i=ci, codes_q=cq, adc=self.adc, lo_power=self.lo_power)
        bits_in = pack_samples_to_bits(block)
        out = toeplitz_extract(bits_in, params, method=self.method)
        rec = ExtractionOut(
            index=self.index, n_input_bits=n_in, n_output_bits=n_out,
            seed_word_offset=offset, output=out,
        )
        if self.with_digests:
            rec.input_sha256 = hashlib.sha256(bits_in.tobytes()).hexdigest()
            rec.output_sha256 = hashlib.sha256(out.tobytes()).hexdigest()
        self.index += 1
        return rec

    # -- batched fast path ----------------------------------------------------

    def _can_batch(self, n_blocks: int) -> bool:
        return (
            n_blocks >= 2
            and gf2.HAVE_CLMUL
            and self.n_in % 64 == 0
            and self.n_in + self.n_out <= gf2.CLMUL_AUTO_MAX_BITS
            and self.method in ("auto", "clmul")
        )

    def _emit_batch(self, ci: np.ndarray, cq: np.ndarray, n_blocks: int) -> list[ExtractionOut]:
        from . import _gf2x

        n_in, n_out, seed_len = self.n_in, self.n_out, self.seed_len
        seed_w = (seed_len + 63) // 64
        in_rows = None
        if self.with_digests:
            block = SampleBlock(
                codes_i=ci, codes_q=cq, adc=self.adc, lo_power=self.lo_power
            )
            packed = pack_samples_to_bits(block)  # n_blocks*n_in bits, byte aligned
            in_rows = packed.data.reshape(n_blocks, n_in // 8)
            x_rows = gf2._BITREV8[in_rows].view(np.uint64)
        else:
            x_rows = _codes_to_little_words(ci, cq, self.adc.bits).reshape(
                n_blocks, n_in // 64
            )
        if self.fresh:
            tape = seed_tape_words(self.master_seed, self.word_offset, n_blocks * seed_w)
            seed_rows = tape.reshape(n_blocks, seed_w).copy()
        else:
            one = seed_tape_words(self.master_seed, 0, seed_w)
            seed_rows = np.broadcast_to(one, (n_blocks, seed_w)).copy()
        tail = seed_len & 63
        if tail:
            seed_rows[:, -1] &= np.uint64((1 << tail) - 1)
        rev_rows = gf2.reverse_bits_words(seed_rows, seed_len)
        out_rows = _gf2x.toeplitz_blocks(rev_rows, x_rows, seed_len, n_in, n_out)
        out_bytes = gf2._BITREV8[out_rows.view(np.uint8)]
        nbytes = (n_out + 7) // 8
        recs = []
        for k in range(n_blocks):
            offset = self._advance_seed(seed_len)
            out = BitBlock(out_bytes[k, :nbytes], n_out, origin="extracted")
            rec = ExtractionOut(
                index=self.index, n_input_bits=n_in, n_output_bits=n_out,
                seed_word_offset=offset, output=out,
            )
            if self.with_digests:
                rec.input_sha256 = hashlib.sha256(in_rows[k].tobytes()).hexdigest()
                rec.output_sha256 = hashlib.sha256(out.tobytes()).hexdigest()
            recs.append(rec)
            self.index += 1
        return recs

    # -- driver ---------------------------------------------------------------

    def push(self, ci: np.ndarray, cq: np.ndarray) -> list[ExtractionOut]:
        if ci.size != cq.size:
            raise ExtractorError("channel arrays differ in length")
        self._buf_i.append(np.asarray(ci, dtype=np.int16))
        self._buf_q.append(np.asarray(cq, dtype=np.int16))
        self._buffered += int(ci.size)
        if self._buffered < self.block_pairs:
            return []
        all_i = np.concatenate(self._buf_i) if len(self._buf_i) > 1 else self._buf_i[0]
        all_q = np.concatenate(self._buf_q) if len(self._buf_q) > 1 else self._buf_q[0]
        n_blocks = self._buffered // self.block_pairs
        used = n_blocks * self.block_pairs
        out: list[ExtractionOut] = []
        if self._can_batch(n_blocks):
            out.extend(self._emit_batch(all_i[:used], all_q[:used], n_blocks))
        else:
            for k in range(n_blocks):
                lo, hi = k * self.block_pairs, (k + 1) * self.block_pairs
                rec = self._emit_single(all_i[lo:hi], all_q[lo:hi])
                if rec is not None:
                    out.append(rec)
        self._buf_i = [all_i[used:]]
        self._buf_q = [all_q[used:]]
        self._buffered -= used
        return out

    def flush(self) -> list[ExtractionOut]:
        if self._buffered == 0:
            return []
        all_i = np.concatenate(self._buf_i) if len(self._buf_i) > 1 else self._buf_i[0]
        all_q = np.concatenate(self._buf_q) if len(self._buf_q) > 1 else self._buf_q[0]
        self._buf_i, self._buf_q, self._buffered = [], [], 0
        rec = self._emit_single(all_i, all_q)
        return [rec] if rec is not None else []
