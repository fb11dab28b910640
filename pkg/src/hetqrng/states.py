r"""Phase-space states and ideal heterodyne outcome statistics.

A heterodyne detector measures both field quadratures at once; the outcome
density over the complex plane is the Husimi function

    Q(alpha) = <alpha| rho |alpha> / pi,

which is bounded above by 1/pi for every state.  Units are fixed so that
the vacuum has variance 1/2 per quadrature (alpha = q + i p).

Supported states are Gaussian mixtures in this representation: vacuum,
coherent, thermal, and finite convex mixtures of coherent states (a
positive diagonal coherent-state decomposition).  For all of them the
Husimi function is a mixture of isotropic Gaussians, so sampling is exact
and rectangle probabilities reduce to products of error-function integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import erf

from .seeding import spawn_rng

__all__ = [
    "Vacuum",
    "Coherent",
    "Thermal",
    "CoherentMixture",
    "StateModel",
    "PhaseSpaceBin",
    "HUSIMI_PEAK",
    "husimi_density",
    "sample_heterodyne",
    "bin_probability",
]

#: Maximum value of any Husimi function (attained by coherent states at
#: their center).
HUSIMI_PEAK = 1.0 / math.pi


class StateValidationError(ValueError):
    """Raised for states that violate their invariants."""


def _check_finite_complex(z: complex, what: str) -> complex:
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise StateValidationError(f"{what} must have finite components, got {z!r}")
    return z


@dataclass(frozen=True)
class Vacuum:
    """The vacuum state |0><0|."""

    def validate(self) -> None:
        pass


@dataclass(frozen=True)
class Coherent:
    """Coherent state |beta><beta| centered at ``center`` = q + i p."""

    center: complex

    def validate(self) -> None:
        _check_finite_complex(self.center, "coherent center")


@dataclass(frozen=True)
class Thermal:
    """Thermal state with mean photon number >= 0."""

    mean_photons: float

    def validate(self) -> None:
        if not math.isfinite(self.mean_photons) or self.mean_photons < 0:
            raise StateValidationError(
                f"thermal mean_photons must be >= 0, got {self.mean_photons}"
            )


@dataclass(frozen=True)
class CoherentMixture:
    """Finite mixture sum_i w_i |beta_i><beta_i| with positive weights."""

    components: tuple[tuple[float, complex], ...]

    def validate(self) -> None:
        if not self.components:
            raise StateValidationError("mixture needs at least one component")
        total = 0.0
        for w, c in self.components:
            if not (math.isfinite(w) and w > 0):
                raise StateValidationError(f"mixture weight must be > 0, got {w}")
            _check_finite_complex(c, "mixture center")
            total += w
        if abs(total - 1.0) > 1e-12:
            raise StateValidationError(
                f"mixture weights must sum to 1 within 1e-12, got {total!r}"
            )


StateModel = Union[Vacuum, Coherent, Thermal, CoherentMixture]


@dataclass(frozen=True)
class PhaseSpaceBin:
    """Axis-aligned rectangle [q_lo, q_hi] x [p_lo, p_hi] in phase space."""

    q_lo: float
    q_hi: float
    p_lo: float
    p_hi: float

    def __post_init__(self) -> None:
        if not (self.q_hi > self.q_lo and self.p_hi > self.p_lo):
            raise StateValidationError(
                f"bin must have positive widths, got "
                f"q=[{self.q_lo},{self.q_hi}] p=[{self.p_lo},{self.p_hi}]"
            )

    @property
    def delta_q(self) -> float:
        return self.q_hi - self.q_lo

    @property
    def delta_p(self) -> float:
        return self.p_hi - self.p_lo

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.q_lo + self.q_hi), 0.5 * (self.p_lo + self.p_hi))

    @classmethod
    def centered(cls, center: complex, delta_q: float, delta_p: float) -> "PhaseSpaceBin":
        c = complex(center)
        return cls(
            c.real - delta_q / 2, c.real + delta_q / 2,
            c.imag - delta_p / 2, c.imag + delta_p / 2,
        )

    def translated(self, offset: complex) -> "PhaseSpaceBin":
        o = complex(offset)
        return PhaseSpaceBin(
            self.q_lo + o.real, self.q_hi + o.real,
            self.p_lo + o.imag, self.p_hi + o.imag,
        )


def _gaussian_components(state: StateModel) -> list[tuple[float, complex, float]]:
    """Decompose the state's Husimi function into (weight, center, variance)
    isotropic Gaussian components (variance is per quadrature)."""
    state.validate()
    if isinstance(state, Vacuum):
        return [(1.0, 0j, 0.5)]
    if isinstance(state, Coherent):
        return [(1.0, complex(state.center), 0.5)]
    if isinstance(state, Thermal):
        return [(1.0, 0j, 0.5 * (1.0 + state.mean_photons))]
    if isinstance(state, CoherentMixture):
        return [(float(w), complex(c), 0.5) for w, c in state.components]
    raise StateValidationError(f"unsupported state {state!r}")


def husimi_density(state: StateModel, alpha):
    """Husimi function Q(alpha) of the state, in 1/area units.

    ``alpha`` may be a complex scalar or an array; the return matches.
    """
    comps = _gaussian_components(state)
    a = np.asarray(alpha, dtype=np.complex128)
    out = np.zeros(a.shape, dtype=np.float64)
    for w, c, var in comps:
        d2 = np.abs(a - c) ** 2
        out += w / (2.0 * math.pi * var) * np.exp(-d2 / (2.0 * var))
    if out.ndim == 0:
        return float(out)
    return out


def sample_heterodyne(state: StateModel, n: int, seed: int, *, stream: tuple[int, ...] = ()) -> np.ndarray:
    """Draw ``n`` i.i.d. heterodyne outcomes from the state's Husimi function.

    Sampling is exact: a mixture component is chosen per draw, then the two
    quadratures are drawn from the component Gaussian.  Deterministic for a
    fixed (seed, stream).
    """
    if n < 1:
        raise StateValidationError(f"need n >= 1 samples, got {n}")
    comps = _gaussian_components(state)
    rng = spawn_rng(seed, *stream)
    if len(comps) == 1:
        _, c, var = comps[0]
        sd = math.sqrt(var)
        q = rng.normal(c.real, sd, n)
        p = rng.normal(c.imag, sd, n)
        return q + 1j * p
    weights = np.array([w for w, _, _ in comps])
    choice = rng.choice(len(comps), size=n, p=weights / weights.sum())
    q = np.empty(n)
    p = np.empty(n)
    g = rng.standard_normal(n), rng.standard_normal(n)
    for k, (_, c, var) in enumerate(comps):
        sel = choice == k
        sd = math.sqrt(var)
        q[sel] = c.real + sd * g[0][sel]
        p[sel] = c.imag + sd * g[1][sel]
    return q + 1j * p


def _interval_prob(lo: float, hi: float, mean: float, var: float) -> float:
    # P(lo <= N(mean, var) <= hi) via the error function
    s = math.sqrt(2.0 * var)
    return 0.5 * (erf((hi - mean) / s) - erf((lo - mean) / s))


def bin_probability(state: StateModel, bin: PhaseSpaceBin) -> float:
    """Probability that a heterodyne outcome lands in the rectangle.

    Closed form (products of error-function integrals) for every supported
    state; always in [0, 1].
    """
    comps = _gaussian_components(state)
    total = 0.0
    for w, c, var in comps:
        pq = _interval_prob(bin.q_lo, bin.q_hi, c.real, var)
        pp = _interval_prob(bin.p_lo, bin.p_hi, c.imag, var)
        total += w * pq * pp
    return min(max(total, 0.0), 1.0)
