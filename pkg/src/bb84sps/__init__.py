"""BB84 key distribution over a lossy free-space link, simulated end to end.

The package models a pulsed single-photon (or weak-coherent) transmitter,
a four-detector passive-basis receiver with dark counts, and the complete
classical post-processing chain: sifting, error-rate estimation with an
abort gate, Cascade reconciliation with exact leakage accounting, and
Toeplitz-hash privacy amplification.  The two parties can run in one
process or as separate processes over a TCP socket; a CLI reproduces the
secure-gain-versus-attenuation analysis for both source types.
"""

from .errors import (
    CalibrationError,
    ChannelClosed,
    ChannelTimeout,
    ConfigError,
    NoMultiphotonEventsError,
    ProtocolViolation,
    ReconciliationFailure,
    SessionAbort,
)
from .lfsr import PERIOD, FibonacciLfsr, alice_bit_stream, full_period_bits, next_bit
from .optics import (
    DetectionRecord,
    DetectorParams,
    LinkParams,
    Polarization,
    QberModel,
    calibrate_link,
    decode,
    detect,
    encode,
    predict_qber,
    transmit,
)
from .protocol import (
    AliceSession,
    BobSession,
    SessionConfig,
    SessionReport,
    SessionSeeds,
    SiftedKey,
    estimate_and_gate_qber,
    run_in_memory,
    run_quantum_phase,
    sift,
)
from .reconcile import (
    GainInputs,
    ReconciliationTranscript,
    SecretKey,
    binary_entropy,
    cascade,
    gain_at,
    optimize_mu_wcp,
    privacy_amplify,
    secure_gain,
    toeplitz_hash,
)
from .sources import (
    PulseCountDistribution,
    SourceKind,
    SourceModel,
    estimate_reduction_factor,
    multiphoton_prob,
    multiphoton_prob_sps,
    multiphoton_prob_wcp,
    pulse_distribution,
)

__version__ = "0.1.0"
