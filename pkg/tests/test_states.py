import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetqrng.states import (
    Coherent,
    CoherentMixture,
    HUSIMI_PEAK,
    PhaseSpaceBin,
    StateValidationError,
    Thermal,
    Vacuum,
    bin_probability,
    husimi_density,
    sample_heterodyne,
)

PAPER_DQ, PAPER_DP = 14.05e-3, 14.14e-3


def fock_husimi_thermal(mean_photons, alpha, n_max=200):
    """Independent oracle: Q(alpha) of a thermal state from the Fock-basis
    sum  sum_n nbar^n/(1+nbar)^(n+1) |<alpha|n>|^2 / pi."""
    a2 = abs(alpha) ** 2
    total = 0.0
    log_a2 = math.log(a2) if a2 > 0 else None
    for n in range(n_max + 1):
        # |<alpha|n>|^2 = e^{-|a|^2} |a|^{2n} / n!
        if a2 == 0:
            overlap = 1.0 if n == 0 else 0.0
        else:
            overlap = math.exp(-a2 + n * log_a2 - math.lgamma(n + 1))
        weight = mean_photons**n / (1 + mean_photons) ** (n + 1)
        total += weight * overlap / math.pi
    return total


class TestHusimiDensity:
    def test_vacuum_peak(self):
        assert husimi_density(Vacuum(), 0j) == pytest.approx(1 / math.pi, rel=1e-14)

    def test_coherent_displacement_invariance(self):
        beta = 1.7 - 0.4j
        assert husimi_density(Coherent(beta), beta) == pytest.approx(
            1 / math.pi, rel=1e-14
        )

    def test_thermal_against_fock_sum(self):
        # frozen oracle value at the origin for nbar = 1
        assert fock_husimi_thermal(1.0, 0j) == pytest.approx(1 / (2 * math.pi), rel=1e-12)
        assert husimi_density(Thermal(1.0), 0j) == pytest.approx(
            1 / (2 * math.pi), rel=1e-12
        )
        # and off-center
        for alpha in (0.3 + 0.1j, 1.0j, -0.8 + 0.5j):
            assert husimi_density(Thermal(0.7), alpha) == pytest.approx(
                fock_husimi_thermal(0.7, alpha), rel=1e-10
            )

    def test_mixture_is_weighted_sum(self):
        mix = CoherentMixture(((0.25, 1 + 0j), (0.75, -1 + 0.5j)))
        a = 0.2 + 0.2j
        expected = 0.25 * husimi_density(Coherent(1 + 0j), a) + 0.75 * husimi_density(
            Coherent(-1 + 0.5j), a
        )
        assert husimi_density(mix, a) == pytest.approx(expected, rel=1e-14)

    def test_vectorized_alpha(self):
        grid = np.linspace(-2, 2, 11)[:, None] + 1j * np.linspace(-2, 2, 11)[None, :]
        out = husimi_density(Vacuum(), grid)
        assert out.shape == grid.shape
        assert out[5, 5] == pytest.approx(1 / math.pi, rel=1e-14)

    @pytest.mark.parametrize(
        "state",
        [
            Vacuum(),
            Coherent(0.5 - 1.5j),
            Thermal(0.0),
            Thermal(2.5),
            CoherentMixture(((0.5, 2 + 0j), (0.5, -2 + 0j))),
        ],
    )
    def test_normalization_by_quadrature_grid(self, state):
        centers = [c for _, c, _ in [(1.0, 0j, 0.0)]]
        reach = 8.0 + max(
            [abs(c) for _, c in getattr(state, "components", ())]
            + [abs(getattr(state, "center", 0j))]
        )
        n = 1601
        q = np.linspace(-reach, reach, n)
        dq = q[1] - q[0]
        grid = q[:, None] + 1j * q[None, :]
        total = husimi_density(state, grid).sum() * dq * dq
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize(
        "state",
        [
            Vacuum(),
            Coherent(1.3 + 0.2j),
            Thermal(0.5),
            CoherentMixture(((0.3, 0.5j), (0.7, -0.2 + 0j))),
        ],
    )
    def test_density_bounded_by_inverse_pi(self, state):
        q = np.linspace(-4, 4, 401)
        grid = q[:, None] + 1j * q[None, :]
        assert husimi_density(state, grid).max() <= HUSIMI_PEAK + 1e-12

    @given(
        st.lists(
            st.tuples(
                st.floats(0.05, 1.0),
                st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
            ),
            min_size=1,
            max_size=4,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_mixture_density_bound_property(self, raw):
        total = sum(w for w, _ in raw)
        mix = CoherentMixture(tuple((w / total, c) for w, c in raw))
        q = np.linspace(-5, 5, 101)
        grid = q[:, None] + 1j * q[None, :]
        assert husimi_density(mix, grid).max() <= HUSIMI_PEAK + 1e-12


class TestValidation:
    def test_mixture_weights_must_sum_to_one(self):
        with pytest.raises(StateValidationError):
            husimi_density(CoherentMixture(((0.5, 0j), (0.6, 1j))), 0j)

    def test_mixture_weights_positive(self):
        with pytest.raises(StateValidationError):
            husimi_density(CoherentMixture(((-0.5, 0j), (1.5, 1j))), 0j)

    def test_thermal_nonnegative(self):
        with pytest.raises(StateValidationError):
            husimi_density(Thermal(-0.1), 0j)

    def test_nan_center_rejected(self):
        with pytest.raises(StateValidationError):
            husimi_density(Coherent(complex(float("nan"), 0)), 0j)

    def test_bin_widths_positive(self):
        with pytest.raises(StateValidationError):
            PhaseSpaceBin(0.0, 0.0, 0.0, 1.0)

    def test_sample_count_positive(self):
        with pytest.raises(StateValidationError):
            sample_heterodyne(Vacuum(), 0, seed=1)


class TestSampling:
    def test_vacuum_variance(self):
        s = sample_heterodyne(Vacuum(), 10**6, seed=101)
        assert np.var(s.real) == pytest.approx(0.5, abs=0.003)
        assert np.var(s.imag) == pytest.approx(0.5, abs=0.003)

    def test_coherent_mean(self):
        s = sample_heterodyne(Coherent(3 + 0j), 10**6, seed=102)
        assert np.mean(s.real) == pytest.approx(3.0, abs=0.003)

    def test_thermal_variance(self):
        # Q-function variance (1 + nbar)/2 per quadrature
        s = sample_heterodyne(Thermal(1.0), 10**6, seed=103)
        assert np.var(s.real) == pytest.approx(1.0, abs=0.006)
        assert np.var(s.imag) == pytest.approx(1.0, abs=0.006)

    def test_deterministic_in_seed(self):
        a = sample_heterodyne(Thermal(0.3), 1000, seed=7)
        b = sample_heterodyne(Thermal(0.3), 1000, seed=7)
        c = sample_heterodyne(Thermal(0.3), 1000, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_mixture_sampling_moments(self):
        mix = CoherentMixture(((0.5, 2 + 0j), (0.5, -2 + 0j)))
        s = sample_heterodyne(mix, 10**6, seed=104)
        # mean 0, variance 0.5 + 4 per quadrature q
        assert np.mean(s.real) == pytest.approx(0.0, abs=0.01)
        assert np.var(s.real) == pytest.approx(4.5, abs=0.05)

    @pytest.mark.parametrize(
        "state",
        [Vacuum(), Coherent(0.8 - 0.3j), Thermal(0.6)],
    )
    def test_histogram_matches_bin_probability(self, state):
        # 20x20 grid, every bin within 5 standard errors
        n = 10**6
        s = sample_heterodyne(state, n, seed=105)
        center = getattr(state, "center", 0j)
        edges_q = np.linspace(center.real - 3, center.real + 3, 21)
        edges_p = np.linspace(center.imag - 3, center.imag + 3, 21)
        counts, _, _ = np.histogram2d(s.real, s.imag, bins=[edges_q, edges_p])
        for i in range(20):
            for j in range(20):
                p = bin_probability(
                    state,
                    PhaseSpaceBin(edges_q[i], edges_q[i + 1], edges_p[j], edges_p[j + 1]),
                )
                se = math.sqrt(max(p * (1 - p) * n, 1.0))
                assert abs(counts[i, j] - n * p) <= 5 * se


class TestBinProbability:
    def test_vacuum_centered_bin_erf_form(self):
        for delta in (0.01, 0.3, 1.0):
            b = PhaseSpaceBin.centered(0j, delta, delta)
            assert bin_probability(Vacuum(), b) == pytest.approx(
                math.erf(delta / 2) ** 2, rel=1e-13
            )

    def test_vacuum_centered_bin_monte_carlo(self):
        # independent cross-check of the closed form against sampling
        delta = 0.8
        b = PhaseSpaceBin.centered(0j, delta, delta)
        p = bin_probability(Vacuum(), b)
        n = 10**7
        s = sample_heterodyne(Vacuum(), n, seed=106)
        hits = np.count_nonzero(
            (np.abs(s.real) <= delta / 2) & (np.abs(s.imag) <= delta / 2)
        )
        se = math.sqrt(p * (1 - p) * n)
        assert abs(hits - n * p) <= 5 * se

    def test_normalization_big_bin(self):
        b = PhaseSpaceBin(-10, 10, -10, 10)
        assert bin_probability(Vacuum(), b) == pytest.approx(1.0, abs=1e-12)

    def test_coherent_small_bin_density_limit(self):
        beta = 0.9 + 0.4j
        b = PhaseSpaceBin.centered(beta, PAPER_DQ, PAPER_DQ)
        p = bin_probability(Coherent(beta), b)
        upper = PAPER_DQ * PAPER_DQ / math.pi
        assert p <= upper
        assert p > 0.999 * upper

    def test_displacement_covariance(self):
        beta = 1.2 - 0.7j
        b = PhaseSpaceBin(0.15, 0.45, -0.3, 0.2)
        p1 = bin_probability(Coherent(beta), b)
        p2 = bin_probability(Vacuum(), b.translated(-beta))
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_thermal_bin_wider_spread(self):
        b = PhaseSpaceBin.centered(0j, 0.5, 0.5)
        assert bin_probability(Thermal(1.0), b) < bin_probability(Vacuum(), b)

    def test_result_in_unit_interval(self):
        b = PhaseSpaceBin.centered(5 + 5j, 0.1, 0.1)
        p = bin_probability(Vacuum(), b)
        assert 0.0 <= p <= 1.0
