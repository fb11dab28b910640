/* Carry-less (GF(2)[x]) polynomial multiplication kernels.
 *
 * Operands are bit polynomials packed little-endian into uint64 words:
 * coefficient of x^(64*w + k) is bit k of word w.  The product of na- and
 * nb-word operands occupies na+nb words.
 *
 * Base case uses the PCLMULQDQ instruction; on CPUs with VPCLMULQDQ a
 * 4-lane AVX-512 variant (carry register instead of overlapping stores)
 * is selected at runtime.  Above a small threshold the recursion is
 * Karatsuba, the fastest exact method in the regime this library uses it
 * for (up to a few million bits; larger products take the FFT path on
 * the Python side).
 *
 * gf2x_toeplitz_blocks() runs many equal-geometry hash blocks in one
 * call: multiply reversed-seed by input, then slice the convolution band
 * [n_in-1, n_in-1+n_out) which is the Toeplitz matrix-vector product.
 */
#ifndef HETQRNG_GF2X_CORE_H
#define HETQRNG_GF2X_CORE_H

#include <stdint.h>
#include <stddef.h>
#include <string.h>

#if defined(__x86_64__) || defined(_M_X64)
#define HETQRNG_X86 1
#include <immintrin.h>
#else
#define HETQRNG_X86 0
#endif

#define GF2X_KARA_THRESHOLD 48

static int gf2x_have_clmul(void)
{
#if HETQRNG_X86
    __builtin_cpu_init();
    return __builtin_cpu_supports("pclmul") && __builtin_cpu_supports("sse4.1");
#else
    return 0;
#endif
}

static int gf2x_have_vpclmul(void)
{
#if HETQRNG_X86 && defined(__GNUC__) && __GNUC__ >= 11 && !defined(HETQRNG_NO_VPCLMUL)
    __builtin_cpu_init();
    return __builtin_cpu_supports("vpclmulqdq")
        && __builtin_cpu_supports("avx512f")
        && __builtin_cpu_supports("avx512vl")
        && __builtin_cpu_supports("avx512dq")
        && __builtin_cpu_supports("avx512bw")
        && __builtin_cpu_supports("avx2");
#else
    return 0;
#endif
}

#if HETQRNG_X86

/* r[0 .. na+nb) ^= a * b, schoolbook. */
__attribute__((target("pclmul,sse4.1")))
static void gf2x_mul_base_sse(uint64_t *r, const uint64_t *a, size_t na,
                              const uint64_t *b, size_t nb)
{
    for (size_t i = 0; i < na; i++) {
        __m128i ai = _mm_cvtsi64_si128((long long)a[i]);
        size_t j = 0;
        for (; j + 2 <= nb; j += 2) {
            __m128i p0 = _mm_clmulepi64_si128(ai, _mm_cvtsi64_si128((long long)b[j]), 0x00);
            __m128i p1 = _mm_clmulepi64_si128(ai, _mm_cvtsi64_si128((long long)b[j + 1]), 0x00);
            r[i + j]     ^= (uint64_t)_mm_cvtsi128_si64(p0);
            r[i + j + 1] ^= (uint64_t)_mm_extract_epi64(p0, 1) ^ (uint64_t)_mm_cvtsi128_si64(p1);
            r[i + j + 2] ^= (uint64_t)_mm_extract_epi64(p1, 1);
        }
        for (; j < nb; j++) {
            __m128i p = _mm_clmulepi64_si128(ai, _mm_cvtsi64_si128((long long)b[j]), 0x00);
            r[i + j]     ^= (uint64_t)_mm_cvtsi128_si64(p);
            r[i + j + 1] ^= (uint64_t)_mm_extract_epi64(p, 1);
        }
    }
}

#if defined(__GNUC__) && __GNUC__ >= 11 && !defined(HETQRNG_NO_VPCLMUL)
/* 4 products per VPCLMULQDQ.  High halves are rotated one slot through a
 * carry register so every store is an aligned-stride RMW (no overlapping
 * store-to-load forwarding stalls). */
__attribute__((target("avx512f,avx512vl,avx512dq,avx512bw,vpclmulqdq,avx2")))
static void gf2x_mul_base_avx512(uint64_t *r, const uint64_t *a, size_t na,
                                 const uint64_t *b, size_t nb)
{
    const __m512i spread = _mm512_set_epi64(0, 3, 0, 2, 0, 1, 0, 0);
    const __m512i evens  = _mm512_set_epi64(7, 7, 7, 7, 6, 4, 2, 0);
    const __m512i odds   = _mm512_set_epi64(7, 7, 7, 7, 7, 5, 3, 1);
    const __m256i lane0  = _mm256_set_epi64x(0, 0, 0, -1);
    size_t nb4 = nb & ~(size_t)3;
    for (size_t i = 0; i < na; i++) {
        __m512i ai = _mm512_set1_epi64((long long)a[i]);
        __m256i carry = _mm256_setzero_si256();
        size_t j = 0;
        for (; j < nb4; j += 4) {
            __m512i b4 = _mm512_castsi256_si512(_mm256_loadu_si256((const __m256i *)(b + j)));
            __m512i bl = _mm512_permutexvar_epi64(spread, b4);
            __m512i p  = _mm512_clmulepi64_epi128(bl, ai, 0x00);
            __m256i lo = _mm512_castsi512_si256(_mm512_permutexvar_epi64(evens, p));
            __m256i hi = _mm512_castsi512_si256(_mm512_permutexvar_epi64(odds, p));
            __m256i rot = _mm256_permute4x64_epi64(hi, 0x93); /* [h3 h0 h1 h2] */
            __m256i contrib = _mm256_xor_si256(lo, _mm256_blend_epi32(rot, carry, 0x03));
            __m256i cur = _mm256_loadu_si256((const __m256i *)(r + i + j));
            _mm256_storeu_si256((__m256i *)(r + i + j), _mm256_xor_si256(cur, contrib));
            carry = _mm256_and_si256(rot, lane0);
        }
        r[i + j] ^= (uint64_t)_mm256_extract_epi64(carry, 0);
        for (; j < nb; j++) {
            __m128i p = _mm_clmulepi64_si128(_mm_cvtsi64_si128((long long)a[i]),
                                             _mm_cvtsi64_si128((long long)b[j]), 0x00);
            r[i + j]     ^= (uint64_t)_mm_cvtsi128_si64(p);
            r[i + j + 1] ^= (uint64_t)_mm_extract_epi64(p, 1);
        }
    }
}
#endif

typedef void (*gf2x_base_fn)(uint64_t *, const uint64_t *, size_t, const uint64_t *, size_t);

static gf2x_base_fn gf2x_pick_base(void)
{
#if defined(__GNUC__) && __GNUC__ >= 11 && !defined(HETQRNG_NO_VPCLMUL)
    if (gf2x_have_vpclmul())
        return gf2x_mul_base_avx512;
#endif
    return gf2x_mul_base_sse;
}

/* Balanced Karatsuba, r[0..2n) ^= a*b.  scratch must hold >= 8n+64 words. */
static void gf2x_mul_rec(gf2x_base_fn base, uint64_t *r,
                         const uint64_t *a, const uint64_t *b, size_t n,
                         uint64_t *scratch)
{
    if (n <= GF2X_KARA_THRESHOLD) {
        base(r, a, n, b, n);
        return;
    }
    size_t h = n / 2, g = n - h; /* low h words, high g words, g >= h */
    uint64_t *asum = scratch;            /* g */
    uint64_t *bsum = asum + g;           /* g */
    uint64_t *pm   = bsum + g;           /* 2g */
    uint64_t *rest = pm + 2 * g;
    for (size_t i = 0; i < g; i++) {
        asum[i] = (i < h ? a[i] : 0) ^ a[h + i];
        bsum[i] = (i < h ? b[i] : 0) ^ b[h + i];
    }
    memset(pm, 0, 2 * g * sizeof(uint64_t));
    gf2x_mul_rec(base, pm, asum, bsum, g, rest);      /* (a0+a1)(b0+b1) */

    uint64_t *p0 = rest;                 /* 2h */
    uint64_t *p1 = p0 + 2 * h;           /* 2g */
    uint64_t *deeper = p1 + 2 * g;
    memset(p0, 0, 2 * h * sizeof(uint64_t));
    memset(p1, 0, 2 * g * sizeof(uint64_t));
    gf2x_mul_rec(base, p0, a, b, h, deeper);          /* a0 b0 */
    gf2x_mul_rec(base, p1, a + h, b + h, g, deeper);  /* a1 b1 */

    for (size_t i = 0; i < 2 * h; i++)
        r[i] ^= p0[i];
    for (size_t i = 0; i < 2 * g; i++)
        r[h + i] ^= pm[i] ^ p1[i] ^ (i < 2 * h ? p0[i] : 0);
    for (size_t i = 0; i < 2 * g; i++)
        r[2 * h + i] ^= p1[i];
}

/* Full product r[0..na+nb) = a*b (r is overwritten).
 * Requires na >= nb >= 1; scratch >= 12*nb + 128 words. */
static void gf2x_mul(uint64_t *r, const uint64_t *a, size_t na,
                     const uint64_t *b, size_t nb, uint64_t *scratch)
{
    gf2x_base_fn base = gf2x_pick_base();
    memset(r, 0, (na + nb) * sizeof(uint64_t));
    if (nb <= GF2X_KARA_THRESHOLD) {
        base(r, a, na, b, nb);
        return;
    }
    /* split a into nb-word chunks; pad the tail so every product is balanced */
    uint64_t *prod = scratch;            /* 2nb */
    uint64_t *apad = prod + 2 * nb;      /* nb */
    uint64_t *rest = apad + nb;
    for (size_t off = 0; off < na; off += nb) {
        size_t len = na - off < nb ? na - off : nb;
        const uint64_t *chunk = a + off;
        if (len < nb) {
            if (len <= GF2X_KARA_THRESHOLD) {
                base(r + off, b, nb, a + off, len);
                break;
            }
            memcpy(apad, a + off, len * sizeof(uint64_t));
            memset(apad + len, 0, (nb - len) * sizeof(uint64_t));
            chunk = apad;
        }
        memset(prod, 0, 2 * nb * sizeof(uint64_t));
        gf2x_mul_rec(base, prod, chunk, b, nb, rest);
        size_t keep = len + nb; /* true product length of this chunk */
        for (size_t i = 0; i < keep; i++)
            r[off + i] ^= prod[i];
    }
}

/* Batched Toeplitz hashing over blocks of identical geometry.
 *
 * seeds: n_blocks rows of seed_words words, each the bit-REVERSED seed of
 *        one block (bits beyond seed_bits zero).
 * xs:    n_blocks rows of x_words words (input bits, zero-padded).
 * out:   n_blocks rows of out_words words; receives convolution bits
 *        [n_in_bits-1, n_in_bits-1+n_out_bits), i.e. T.x per block.
 * scratch: >= (seed_words + x_words + 2) + 12*min(seed_words,x_words) + 128.
 */
static void gf2x_toeplitz_blocks(
    uint64_t *out, size_t out_words,
    const uint64_t *seeds, size_t seed_words, size_t seed_bits,
    const uint64_t *xs, size_t x_words, size_t n_in_bits,
    size_t n_out_bits, size_t n_blocks, uint64_t *scratch)
{
    (void)seed_bits;
    uint64_t *prod = scratch;
    uint64_t *mul_scratch = scratch + seed_words + x_words + 2;
    size_t start = n_in_bits - 1;
    size_t k0 = start >> 6;
    unsigned sh = (unsigned)(start & 63);
    size_t need = (n_out_bits + (start & 63) + 63) >> 6;
    for (size_t blk = 0; blk < n_blocks; blk++) {
        const uint64_t *s = seeds + blk * seed_words;
        const uint64_t *x = xs + blk * x_words;
        uint64_t *dst = out + blk * out_words;
        if (seed_words >= x_words)
            gf2x_mul(prod, s, seed_words, x, x_words, mul_scratch);
        else
            gf2x_mul(prod, x, x_words, s, seed_words, mul_scratch);
        /* shift the band down to bit 0 of dst */
        size_t total = seed_words + x_words;
        for (size_t k = 0; k < out_words; k++) {
            uint64_t lo = (k0 + k < total) ? prod[k0 + k] : 0;
            uint64_t hi = (sh && k0 + k + 1 < total) ? prod[k0 + k + 1] : 0;
            dst[k] = sh ? (lo >> sh) | (hi << (64 - sh)) : lo;
        }
        unsigned tail = (unsigned)(n_out_bits & 63);
        if (tail)
            dst[out_words - 1] &= ((uint64_t)1 << tail) - 1;
        (void)need;
    }
}

#else /* !HETQRNG_X86 */

static void gf2x_mul(uint64_t *r, const uint64_t *a, size_t na,
                     const uint64_t *b, size_t nb, uint64_t *scratch)
{
    (void)r; (void)a; (void)na; (void)b; (void)nb; (void)scratch;
}

static void gf2x_toeplitz_blocks(
    uint64_t *out, size_t out_words,
    const uint64_t *seeds, size_t seed_words, size_t seed_bits,
    const uint64_t *xs, size_t x_words, size_t n_in_bits,
    size_t n_out_bits, size_t n_blocks, uint64_t *scratch)
{
    (void)out; (void)out_words; (void)seeds; (void)seed_words; (void)seed_bits;
    (void)xs; (void)x_words; (void)n_in_bits; (void)n_out_bits; (void)n_blocks;
    (void)scratch;
}

#endif /* HETQRNG_X86 */

#endif /* HETQRNG_GF2X_CORE_H */
