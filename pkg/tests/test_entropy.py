import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetqrng.entropy import (
    EntropyCertificate,
    EntropyError,
    FinitePovm,
    build_certificate,
    classical_min_entropy_gaussian,
    classical_min_entropy_hist,
    pguess_oracle_heterodyne,
    povm_guess_bound,
    quantum_bound_continuous,
    quantum_bound_discrete,
)
from hetqrng.states import Coherent, CoherentMixture, PhaseSpaceBin, Thermal, bin_probability, husimi_density

PAPER_DQ, PAPER_DP = 14.05e-3, 14.14e-3
PAPER_VQ, PAPER_VP = 0.55135, 0.56732


class TestClassicalMinEntropyHist:
    def test_deterministic_outcome(self):
        assert classical_min_entropy_hist([1000, 0, 0], 1000) == 0.0

    def test_uniform_14_bits(self):
        counts = np.ones(2**14, dtype=np.int64)
        assert classical_min_entropy_hist(counts, 2**14) == pytest.approx(14.0)

    def test_2d_histogram_accepted(self):
        counts = np.full((4, 4), 2)
        assert classical_min_entropy_hist(counts, 32) == pytest.approx(4.0)

    def test_errors(self):
        with pytest.raises(EntropyError):
            classical_min_entropy_hist([], 0)
        with pytest.raises(EntropyError):
            classical_min_entropy_hist([1, 2], 5)
        with pytest.raises(EntropyError):
            classical_min_entropy_hist([-1, 6], 5)
        with pytest.raises(EntropyError):
            classical_min_entropy_hist([1], 0)


class TestClassicalMinEntropyGaussian:
    def test_vacuum_unit_resolution(self):
        assert classical_min_entropy_gaussian(0.5, 0.5, 1.0, 1.0) == pytest.approx(
            math.log2(math.pi), rel=1e-12
        )

    def test_reported_operating_point(self):
        h = classical_min_entropy_gaussian(PAPER_VQ, PAPER_VP, PAPER_DQ, PAPER_DP)
        assert h == pytest.approx(14.11, abs=0.02)

    def test_doubling_deltas_loses_two_bits(self):
        h1 = classical_min_entropy_gaussian(0.55, 0.56, PAPER_DQ, PAPER_DP)
        h2 = classical_min_entropy_gaussian(0.55, 0.56, 2 * PAPER_DQ, 2 * PAPER_DP)
        assert h1 - h2 == pytest.approx(2.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(EntropyError):
            classical_min_entropy_gaussian(0.0, 0.5, 0.01, 0.01)
        with pytest.raises(EntropyError):
            classical_min_entropy_gaussian(0.5, 0.5, -1.0, 0.01)


class TestQuantumBounds:
    def test_continuous_constant(self):
        assert quantum_bound_continuous() == pytest.approx(1.6514961294723187, rel=1e-12)

    def test_discrete_reduces_to_continuous_at_unit_resolution(self):
        assert quantum_bound_discrete(1.0, 1.0) == pytest.approx(
            quantum_bound_continuous(), abs=1e-12
        )

    def test_discrete_paper_point(self):
        assert quantum_bound_discrete(PAPER_DQ, PAPER_DP) == pytest.approx(13.949, abs=1e-3)

    def test_sqrt_pi_resolution_gives_zero(self):
        d = math.sqrt(math.pi)
        assert abs(quantum_bound_discrete(d, d)) <= 1e-12

    def test_never_exceeds_peak_density_entropy(self):
        # log2(pi) <= -log2(max Q) for any state; check on a dense grid
        q = np.linspace(-4, 4, 801)
        grid = q[:, None] + 1j * q[None, :]
        peak = husimi_density(Thermal(0.5), grid).max()
        assert quantum_bound_continuous() <= -math.log2(peak)

    def test_monotonicity(self):
        deltas = np.geomspace(1e-4, 1.0, 40)
        vals = [quantum_bound_discrete(d, 0.01) for d in deltas]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        vals = [quantum_bound_discrete(0.01, d) for d in deltas]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_errors(self):
        with pytest.raises(EntropyError):
            quantum_bound_discrete(0.0, 1.0)
        with pytest.raises(EntropyError):
            quantum_bound_discrete(1.0, -1.0)


def qubit_projectors():
    return [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]


def sic_povm():
    # tetrahedral Bloch vectors, elements (1/2)|psi><psi|
    vecs = [
        (1, 1, 1),
        (1, -1, -1),
        (-1, 1, -1),
        (-1, -1, 1),
    ]
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0]).astype(complex)
    out = []
    for v in vecs:
        n = np.array(v) / math.sqrt(3)
        proj = 0.5 * (np.eye(2) + n[0] * sx + n[1] * sy + n[2] * sz)
        out.append(0.5 * proj)
    return out


def trine_povm():
    out = []
    for k in range(3):
        t = 2 * math.pi * k / 3
        psi = np.array([math.cos(t / 2), math.sin(t / 2)], dtype=complex)
        out.append(2 / 3 * np.outer(psi, psi.conj()))
    return out


class TestPovmGuessBound:
    def test_projective_no_randomness(self):
        assert povm_guess_bound(FinitePovm(qubit_projectors())) == pytest.approx(0.0, abs=1e-10)

    def test_sic_povm_one_bit(self):
        # eigendecomposition oracle: every element has top eigenvalue 1/2
        elements = sic_povm()
        tops = [np.linalg.eigvalsh(e).max() for e in elements]
        assert np.allclose(tops, 0.5, atol=1e-12)
        assert povm_guess_bound(FinitePovm(elements)) == pytest.approx(1.0, abs=1e-10)

    def test_trine_povm(self):
        elements = trine_povm()
        tops = [np.linalg.eigvalsh(e).max() for e in elements]
        assert np.allclose(tops, 2 / 3, atol=1e-12)
        assert povm_guess_bound(FinitePovm(elements)) == pytest.approx(
            math.log2(1.5), abs=1e-10
        )

    def test_completeness_violation_names_residual(self):
        bad = [np.diag([1.0, 0.0]), np.diag([0.0, 0.9])]
        with pytest.raises(EntropyError, match="residual.*norm"):
            FinitePovm(bad)

    def test_psd_violation(self):
        bad = [np.diag([1.5, 0.0]), np.diag([-0.5, 1.0])]
        with pytest.raises(EntropyError, match="positive semidefinite"):
            FinitePovm(bad)

    def test_non_hermitian_rejected(self):
        bad = [np.array([[0.5, 0.3], [0.0, 0.5]]), np.array([[0.5, -0.3], [0.0, 0.5]])]
        with pytest.raises(EntropyError):
            FinitePovm(bad)


class TestPguessOracle:
    def test_paper_resolution(self):
        p = pguess_oracle_heterodyne(PAPER_DQ, PAPER_DP)
        assert p == pytest.approx(math.erf(PAPER_DQ / 2) * math.erf(PAPER_DP / 2), rel=1e-14)
        assert p == pytest.approx(6.3236e-5, rel=1e-4)
        assert p >= 0.9999 * PAPER_DQ * PAPER_DP / math.pi

    def test_unit_scale_value(self):
        # erf table oracle: erf(1)^2
        assert pguess_oracle_heterodyne(2.0, 2.0) == pytest.approx(
            math.erf(1.0) ** 2, rel=1e-14
        )

    def test_small_delta_expansion_window(self):
        for d in (1e-3, 1e-2, 1e-1):
            ratio = pguess_oracle_heterodyne(d, d) / (d * d / math.pi)
            assert 1 - d * d / 12 - d * d / 12 <= ratio <= 1.0

    def test_dominated_by_resolution_bound_on_log_grid(self):
        deltas = np.geomspace(1e-4, 1.0, 25)
        for dq in deltas:
            for dp in deltas:
                assert pguess_oracle_heterodyne(dq, dp) <= dq * dp / math.pi
        tight = pguess_oracle_heterodyne(1e-4, 1e-4) / (1e-8 / math.pi)
        assert tight == pytest.approx(1.0, rel=1e-6)

    def test_coherent_strategy_attains_oracle(self):
        # Eve's coherent preparation centered on the bin realizes the oracle
        for center in (0j, 1.5 - 0.5j, -3 + 2j):
            b = PhaseSpaceBin.centered(center, PAPER_DQ, PAPER_DP)
            attained = bin_probability(Coherent(center), b)
            assert attained == pytest.approx(
                pguess_oracle_heterodyne(PAPER_DQ, PAPER_DP), abs=1e-12
            )

    @given(
        st.lists(
            st.tuples(st.floats(0.05, 1.0), st.floats(-2, 2), st.floats(-2, 2)),
            min_size=1,
            max_size=4,
        )
    )
    @settings(max_examples=30, deadline=None)
    def test_mixture_never_beats_oracle(self, raw):
        total = sum(w for w, _, _ in raw)
        mix = CoherentMixture(tuple((w / total, complex(x, y)) for w, x, y in raw))
        oracle = pguess_oracle_heterodyne(0.05, 0.07)
        centers = [complex(x, y) for _, x, y in raw] + [0j]
        best = 0.0
        for c in centers:
            for dx in np.linspace(-0.1, 0.1, 5):
                for dy in np.linspace(-0.1, 0.1, 5):
                    b = PhaseSpaceBin.centered(c + complex(dx, dy), 0.05, 0.07)
                    best = max(best, bin_probability(mix, b))
        assert best <= oracle + 1e-15

    def test_errors(self):
        with pytest.raises(EntropyError):
            pguess_oracle_heterodyne(0.0, 0.1)


class TestCertificate:
    def test_paper_secure_rate(self):
        cert = build_certificate(
            PAPER_DQ, PAPER_DP, 1.25e9, 2.0**-100, var_q=PAPER_VQ, var_p=PAPER_VP
        )
        assert cert.secure_rate == pytest.approx(17.44e9, abs=0.03e9)
        assert cert.h_quantum_bound == pytest.approx(13.949, abs=1e-3)
        assert cert.h_classical == pytest.approx(14.11, abs=0.02)
        assert cert.h_classical > cert.h_quantum_bound

    def test_unit_resolution_unit_rate(self):
        cert = build_certificate(1.0, 1.0, 1.0, 0.5)
        assert cert.secure_rate == pytest.approx(math.log2(math.pi), rel=1e-12)

    def test_zero_rate_rejected(self):
        with pytest.raises(EntropyError):
            build_certificate(PAPER_DQ, PAPER_DP, 0.0, 2.0**-100)

    def test_epsilon_range_enforced(self):
        with pytest.raises(EntropyError):
            build_certificate(PAPER_DQ, PAPER_DP, 1.0, 1.0)

    def test_sub_vacuum_variances_rejected(self):
        # var_q*var_p < 1/4 implies a narrower-than-vacuum outcome density
        with pytest.raises(EntropyError, match="sub-vacuum"):
            build_certificate(PAPER_DQ, PAPER_DP, 1e9, 2.0**-100, var_q=0.2, var_p=0.2)

    def test_quantum_bound_field_consistency(self):
        with pytest.raises(EntropyError):
            EntropyCertificate(
                delta_q=PAPER_DQ, delta_p=PAPER_DP, h_quantum_bound=10.0,
                epsilon=0.5, samples_per_second=1.0, secure_rate=10.0,
            )

    def test_serialization_round_trip(self):
        cert = build_certificate(
            PAPER_DQ, PAPER_DP, 1.25e9, 2.0**-100, var_q=PAPER_VQ, var_p=PAPER_VP
        )
        text = cert.to_kv_text()
        # entropies serialized to 3 decimals
        assert "h_quantum_bound=13.949" in text
        assert "h_classical=14.110" in text
        back = EntropyCertificate.from_kv_text(text)
        assert back.delta_q == cert.delta_q
        assert back.delta_p == cert.delta_p
        assert back.secure_rate == cert.secure_rate
        assert back.h_quantum_bound == pytest.approx(cert.h_quantum_bound, abs=1e-12)

    def test_classical_optional(self):
        cert = build_certificate(PAPER_DQ, PAPER_DP, 1.25e9, 2.0**-100)
        assert cert.h_classical is None
        assert "h_classical" not in cert.to_kv_text()
        back = EntropyCertificate.from_kv_text(cert.to_kv_text())
        assert back.h_classical is None

    def test_variances_must_come_in_pairs(self):
        with pytest.raises(EntropyError):
            build_certificate(PAPER_DQ, PAPER_DP, 1.0, 0.5, var_q=0.55)
