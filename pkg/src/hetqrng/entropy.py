r"""Min-entropy quantities for a source-device-independent heterodyne QRNG.

Two families of quantities are implemented:

* classical min-entropy of the outcome distribution itself (what a fully
  trusted source would certify), both as an empirical histogram estimate
  and as the analytic peak-bin value for a Gaussian outcome density; and

* lower bounds on the *conditional* min-entropy given quantum side
  information, which hold with no assumption on the source.  For a generic
  finite POVM the bound is -log2 of the largest eigenvalue over all
  elements; for heterodyne detection with phase-space resolution
  (delta_q, delta_p) it reduces to the closed form

      H_min >= log2( pi / (delta_q * delta_p) ),

  with log2(pi) as the continuous (density) limit.  The bound is tight:
  an adversary preparing coherent states centered on a bin attains the
  guessing probability erf(delta_q/2) * erf(delta_p/2), which approaches
  delta_q*delta_p/pi from below as the resolution gets fine.

The discretized bound depends only on the measurement resolution, so it
is constant over a run and no entropy needs to be sacrificed to estimate
it.  No finite-size penalty applies: the bound holds per single shot.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "EntropyError",
    "FinitePovm",
    "EntropyCertificate",
    "classical_min_entropy_hist",
    "classical_min_entropy_gaussian",
    "quantum_bound_continuous",
    "quantum_bound_discrete",
    "povm_guess_bound",
    "pguess_oracle_heterodyne",
    "build_certificate",
]

LOG2_PI = math.log2(math.pi)


class EntropyError(ValueError):
    """Invalid input to an entropy computation."""


def classical_min_entropy_hist(counts, total: int) -> float:
    """Empirical classical min-entropy, -log2(max bin frequency), in bits.

    ``counts`` is a histogram (any shape) of outcome bins summing to
    ``total``.  This is a plug-in estimate with no finite-size correction;
    treat it as descriptive, not as a security bound.
    """
    c = np.asarray(counts)
    if c.size == 0:
        raise EntropyError("empty histogram")
    if total < 1:
        raise EntropyError(f"total must be >= 1, got {total}")
    if np.any(c < 0):
        raise EntropyError("negative bin count")
    csum = int(c.sum())
    if csum != int(total):
        raise EntropyError(f"counts sum to {csum}, expected total {total}")
    peak = int(c.max())
    if peak == 0:
        raise EntropyError("histogram has no mass")
    return -math.log2(peak / total)


def classical_min_entropy_gaussian(
    var_q: float, var_p: float, delta_q: float, delta_p: float
) -> float:
    """Analytic peak-bin classical min-entropy of a centered Gaussian
    outcome density sampled on a (delta_q, delta_p) grid, in bits.

    Valid in the fine-resolution regime delta << sqrt(var), where the most
    probable bin holds ~ peak density * bin area.
    """
    for name, v in (("var_q", var_q), ("var_p", var_p),
                    ("delta_q", delta_q), ("delta_p", delta_p)):
        if not (math.isfinite(v) and v > 0):
            raise EntropyError(f"{name} must be > 0, got {v}")
    peak_mass = delta_q * delta_p / (2.0 * math.pi * math.sqrt(var_q * var_p))
    return -math.log2(peak_mass)


def quantum_bound_continuous() -> float:
    """log2(pi): conditional min-entropy lower bound for ideal (continuous)
    heterodyne detection.

    This bounds a probability *density* (the outcome space is continuous),
    so it is expressed per outcome in density form; the discretized bound
    reduces to it at unit resolution.
    """
    return LOG2_PI


def quantum_bound_discrete(delta_q: float, delta_p: float) -> float:
    """Conditional min-entropy lower bound log2(pi/(delta_q*delta_p)) in
    bits per sample for heterodyne detection at finite resolution.

    Depends only on the trusted measurement resolution, not on the source.
    """
    if not (math.isfinite(delta_q) and delta_q > 0):
        raise EntropyError(f"delta_q must be > 0, got {delta_q}")
    if not (math.isfinite(delta_p) and delta_p > 0):
        raise EntropyError(f"delta_p must be > 0, got {delta_p}")
    return math.log2(math.pi / (delta_q * delta_p))


def pguess_oracle_heterodyne(delta_q: float, delta_p: float) -> float:
    """Best achievable guessing probability for an adversary limited to
    states with a positive diagonal coherent-state representation.

    Preparing a coherent state centered on a bin gives bin probability
    erf(delta_q/2)*erf(delta_p/2); no mixture does better.  Always below
    delta_q*delta_p/pi, approaching it as the deltas shrink, which shows
    the discretized bound is tight.
    """
    if not (math.isfinite(delta_q) and delta_q > 0):
        raise EntropyError(f"delta_q must be > 0, got {delta_q}")
    if not (math.isfinite(delta_p) and delta_p > 0):
        raise EntropyError(f"delta_p must be > 0, got {delta_p}")
    return float(erf(delta_q / 2.0) * erf(delta_p / 2.0))


class FinitePovm:
    """A finite POVM: Hermitian PSD matrices summing to the identity.

    Eigenvalue tolerance for positivity is -1e-10; completeness is checked
    in Frobenius norm with tolerance 1e-9.
    """

    PSD_TOL = -1e-10
    COMPLETENESS_TOL = 1e-9

    def __init__(self, elements: Sequence[np.ndarray]):
        if not len(elements):
            raise EntropyError("POVM needs at least one element")
        mats = [np.asarray(e, dtype=np.complex128) for e in elements]
        d = mats[0].shape[0]
        for k, m in enumerate(mats):
            if m.ndim != 2 or m.shape != (d, d):
                raise EntropyError(f"element {k} is not a {d}x{d} matrix")
            if not np.allclose(m, m.conj().T, atol=1e-10):
                raise EntropyError(f"element {k} is not Hermitian")
            lo = float(np.linalg.eigvalsh(m).min())
            if lo < self.PSD_TOL:
                raise EntropyError(
                    f"element {k} is not positive semidefinite "
                    f"(minimum eigenvalue {lo:.3e})"
                )
        resid = float(np.linalg.norm(sum(mats) - np.eye(d)))
        if resid > self.COMPLETENESS_TOL:
            raise EntropyError(
                f"POVM elements do not sum to the identity: "
                f"residual Frobenius norm {resid:.3e}"
            )
        self.elements = mats
        self.dim = d


def povm_guess_bound(povm: FinitePovm) -> float:
    """Conditional min-entropy lower bound for an arbitrary finite POVM.

    Equals -log2(max over elements of the largest eigenvalue): the trace
    against any state is maximized by the top eigenvector, so this is the
    adversary's best single-outcome guessing probability.  Zero for
    projective measurements (some element has eigenvalue 1).
    """
    if not isinstance(povm, FinitePovm):
        povm = FinitePovm(povm)
    top = max(float(np.linalg.eigvalsh(m).max()) for m in povm.elements)
    return -math.log2(top)


@dataclass
class EntropyCertificate:
    """Per-run entropy statement feeding the extractor calibration.

    ``secure_rate`` is the conditional bound times the sample rate.  The
    classical estimate is informative only; when present it can not be
    below the conditional bound for data produced by a physical heterodyne
    measurement (per-quadrature variance is at least the vacuum's 1/2).
    """

    delta_q: float
    delta_p: float
    h_quantum_bound: float
    epsilon: float
    samples_per_second: float
    secure_rate: float
    h_classical: Optional[float] = None

    def __post_init__(self) -> None:
        expected = quantum_bound_discrete(self.delta_q, self.delta_p)
        if abs(self.h_quantum_bound - expected) > 1e-12:
            raise EntropyError(
                f"h_quantum_bound {self.h_quantum_bound!r} does not match "
                f"log2(pi/(dq*dp)) = {expected!r}"
            )
        if not (0.0 < self.epsilon < 1.0):
            raise EntropyError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not self.samples_per_second > 0:
            raise EntropyError("samples_per_second must be > 0")
        if self.h_classical is not None and self.h_classical < self.h_quantum_bound - 1e-9:
            raise EntropyError(
                f"classical min-entropy {self.h_classical:.6f} below the "
                f"conditional bound {self.h_quantum_bound:.6f}: the variances "
                "imply a sub-vacuum outcome density, which no heterodyne "
                "acquisition can produce"
            )

    def to_kv_text(self) -> str:
        """Serialize as a key=value block (entropies to 3 decimals)."""
        buf = io.StringIO()
        buf.write("# entropy certificate\n")
        buf.write(f"delta_q={self.delta_q!r}\n")
        buf.write(f"delta_p={self.delta_p!r}\n")
        if self.h_classical is not None:
            buf.write(f"h_classical={self.h_classical:.3f}\n")
        buf.write(f"h_quantum_bound={self.h_quantum_bound:.3f}\n")
        buf.write(f"epsilon={self.epsilon!r}\n")
        buf.write(f"samples_per_second={self.samples_per_second!r}\n")
        buf.write(f"secure_rate={self.secure_rate!r}\n")
        return buf.getvalue()

    @classmethod
    def from_kv_text(cls, text: str) -> "EntropyCertificate":
        fields: dict[str, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = float(value)
        dq, dp = fields["delta_q"], fields["delta_p"]
        return cls(
            delta_q=dq,
            delta_p=dp,
            # recompute at full precision: serialized entropies are rounded
            h_quantum_bound=quantum_bound_discrete(dq, dp),
            epsilon=fields["epsilon"],
            samples_per_second=fields["samples_per_second"],
            secure_rate=fields["secure_rate"],
            h_classical=fields.get("h_classical"),
        )


def build_certificate(
    delta_q: float,
    delta_p: float,
    sample_rate: float,
    epsilon: float,
    var_q: Optional[float] = None,
    var_p: Optional[float] = None,
) -> EntropyCertificate:
    """Assemble the run certificate from resolutions, rate and (optionally)
    measured variances.

    secure_rate = quantum bound [bits/sample] * sample_rate [1/s].
    """
    if not sample_rate > 0:
        raise EntropyError(f"sample_rate must be > 0, got {sample_rate}")
    hq = quantum_bound_discrete(delta_q, delta_p)
    hc = None
    if var_q is not None or var_p is not None:
        if var_q is None or var_p is None:
            raise EntropyError("provide both variances or neither")
        hc = classical_min_entropy_gaussian(var_q, var_p, delta_q, delta_p)
    return EntropyCertificate(
        delta_q=delta_q,
        delta_p=delta_p,
        h_quantum_bound=hq,
        epsilon=epsilon,
        samples_per_second=sample_rate,
        secure_rate=hq * sample_rate,
        h_classical=hc,
    )
