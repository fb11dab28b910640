# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled GF(2) polynomial multiplication (PCLMULQDQ Karatsuba).

Thin wrapper over the C kernels in ``_gf2x_core.h``.  Availability of the
carry-less multiply instruction is checked at runtime; callers must consult
:func:`have_clmul` before using these entry points.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef extern from "_gf2x_core.h":
    int c_have_clmul "gf2x_have_clmul" () nogil
    int c_have_vpclmul "gf2x_have_vpclmul" () nogil
    void c_mul "gf2x_mul" (uint64_t *r, const uint64_t *a, size_t na,
                           const uint64_t *b, size_t nb, uint64_t *scratch) nogil
    void c_toeplitz "gf2x_toeplitz_blocks" (
        uint64_t *out, size_t out_words,
        const uint64_t *seeds, size_t seed_words, size_t seed_bits,
        const uint64_t *xs, size_t x_words, size_t n_in_bits,
        size_t n_out_bits, size_t n_blocks, uint64_t *scratch) nogil


def have_clmul():
    return bool(c_have_clmul())


def have_vpclmul():
    return bool(c_have_vpclmul())


def poly_mul(a, b):
    """Full carry-less product of two bit polynomials.

    Parameters are uint64 arrays (bit k of word w = coefficient of
    x**(64*w+k)).  Returns a uint64 array of len(a)+len(b) words.
    """
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] aw = np.ascontiguousarray(a, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] bw = np.ascontiguousarray(b, dtype=np.uint64)
    if aw.shape[0] < bw.shape[0]:
        aw, bw = bw, aw
    cdef size_t na = aw.shape[0]
    cdef size_t nb = bw.shape[0]
    if nb == 0:
        raise ValueError("empty operand")
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(na + nb, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] scratch = np.empty(12 * nb + 128, dtype=np.uint64)
    cdef uint64_t *rp = <uint64_t *>out.data
    cdef uint64_t *ap = <uint64_t *>aw.data
    cdef uint64_t *bp = <uint64_t *>bw.data
    cdef uint64_t *sp = <uint64_t *>scratch.data
    with nogil:
        c_mul(rp, ap, na, bp, nb, sp)
    return out


def toeplitz_blocks(seeds, xs, size_t seed_bits, size_t n_in_bits, size_t n_out_bits):
    """Batched Toeplitz hash: rows of ``seeds`` are bit-reversed block seeds,
    rows of ``xs`` the block inputs.  Returns (n_blocks, out_words) uint64
    holding T.x per block."""
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] sw = np.ascontiguousarray(seeds, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] xw = np.ascontiguousarray(xs, dtype=np.uint64)
    cdef size_t n_blocks = sw.shape[0]
    if xw.shape[0] != <Py_ssize_t>n_blocks:
        raise ValueError("seeds and xs row counts differ")
    cdef size_t seed_words = sw.shape[1]
    cdef size_t x_words = xw.shape[1]
    if seed_words * 64 < seed_bits or x_words * 64 < n_in_bits:
        raise ValueError("word rows too short for the stated bit lengths")
    if seed_bits != n_in_bits + n_out_bits - 1:
        raise ValueError("seed_bits must equal n_in_bits + n_out_bits - 1")
    cdef size_t out_words = (n_out_bits + 63) // 64
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] out = np.empty((n_blocks, out_words), dtype=np.uint64)
    cdef size_t small = seed_words if seed_words < x_words else x_words
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] scratch = np.empty(
        seed_words + x_words + 2 + 12 * small + 128, dtype=np.uint64)
    cdef uint64_t *op = <uint64_t *>out.data
    cdef uint64_t *sp = <uint64_t *>sw.data
    cdef uint64_t *xp = <uint64_t *>xw.data
    cdef uint64_t *scp = <uint64_t *>scratch.data
    if n_blocks == 0:
        return out
    with nogil:
        c_toeplitz(op, out_words, sp, seed_words, seed_bits,
                   xp, x_words, n_in_bits, n_out_bits, n_blocks, scp)
    return out
