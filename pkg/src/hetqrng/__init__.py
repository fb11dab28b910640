"""Heterodyne QRNG simulator and certification toolchain.

Simulates a dual-quadrature (heterodyne) optical random number generator
from the detection statistics down to extracted bits: phase-space state
models and exact outcome sampling, detector/ADC emulation with
calibration, brick-wall filtering with decorrelating decimation,
resolution-based conditional min-entropy certification, seeded Toeplitz
extraction and a native statistical test battery.
"""

from .acquisition import (
    AdcConfig,
    DEFAULT_CALIBRATION,
    DetectorCalibration,
    SampleBlock,
    codes_to_phase_space,
    fit_calibration,
    lo_monitor_check,
    quantize,
    read_qrb1,
    run_calibration_sweep,
    simulate_detector_stream,
    write_qrb1,
)
from .config import PipelineConfig
from .dsp import (
    BandSpec,
    PsdEstimate,
    autocorrelation,
    band_gap_db,
    bandpass_brickwall,
    decorrelating_downsample,
    welch_psd,
)
from .entropy import (
    EntropyCertificate,
    FinitePovm,
    build_certificate,
    classical_min_entropy_gaussian,
    classical_min_entropy_hist,
    pguess_oracle_heterodyne,
    povm_guess_bound,
    quantum_bound_continuous,
    quantum_bound_discrete,
)
from .extractor import (
    BitBlock,
    ExtractorParams,
    output_length,
    pack_samples_to_bits,
    seed_expand,
    toeplitz_extract,
    toeplitz_extract_naive,
)
from .pipeline import run_pipeline
from .randtests import TEST_NAMES, run_battery, run_test
from .states import (
    Coherent,
    CoherentMixture,
    PhaseSpaceBin,
    Thermal,
    Vacuum,
    bin_probability,
    husimi_density,
    sample_heterodyne,
)

__version__ = "0.1.0"
