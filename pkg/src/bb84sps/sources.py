"""Photon-number statistics of the pulse source.

Two source models are supported: a true single-photon source (SPS) whose
multiphoton emissions are suppressed by a sub-Poissonian reduction factor
R >= 1, and weak coherent pulses (WCP) with Poissonian statistics (R = 1).
For a mean photon number mu per pulse the multiphoton probability per pulse
is

    WCP:  s_m = 1 - (1 + mu) * exp(-mu)
    SPS:  s_m = (1/R) * [1 - (1 + mu) * exp(-mu)]

Monte Carlo sampling uses a three-point photon-number distribution
(0, 1 or 2 photons) chosen to match the mean and the multiphoton
probability exactly; at mu ~ 0.02 the neglected n >= 3 weight is below
1e-6 of the total.  A full Poisson sampler is available for validation of
the WCP case.

The reduction factor of a running source is estimated from Bob's counting
statistics: with four gated detectors behind a passive basis choice, two
arriving photons land on the same detector with probability 3/8, so only
5/8 of the two-photon arrivals register as double detections and

    R = (5/8) * (p_d1^2 / 2) / p_d2

where p_d1 and p_d2 are the per-slot probabilities of exactly one and
exactly two detectors firing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoMultiphotonEventsError

SAME_DETECTOR_PROB = 3.0 / 8.0
DOUBLE_DETECTION_FACTOR = 1.0 - SAME_DETECTOR_PROB  # 5/8


class SourceKind(enum.Enum):
    SPS = "sps"
    WCP = "wcp"


def multiphoton_prob_wcp(mu: float) -> float:
    """Probability that a Poissonian pulse of mean ``mu`` carries >= 2 photons."""
    if mu < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu}")
    return -math.expm1(-mu) - mu * math.exp(-mu)


def multiphoton_prob_sps(mu: float, reduction_factor: float) -> float:
    """Multiphoton probability of a sub-Poissonian source with factor R >= 1."""
    if reduction_factor < 1:
        raise ValueError(f"reduction factor must be >= 1, got {reduction_factor}")
    return multiphoton_prob_wcp(mu) / reduction_factor


@dataclass(frozen=True)
class SourceModel:
    """Pulse source description: kind, mean photons per pulse, reduction factor."""

    kind: SourceKind
    mu: float
    reduction_factor: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mean photon number must be >= 0, got {self.mu}")
        if self.reduction_factor < 1:
            raise ValueError(
                f"reduction factor must be >= 1, got {self.reduction_factor}"
            )
        if self.kind is SourceKind.WCP and self.reduction_factor != 1.0:
            raise ValueError("a Poissonian source has reduction factor exactly 1")

    @classmethod
    def sps(cls, mu: float, reduction_factor: float) -> "SourceModel":
        return cls(SourceKind.SPS, mu, reduction_factor)

    @classmethod
    def wcp(cls, mu: float) -> "SourceModel":
        return cls(SourceKind.WCP, mu, 1.0)


def multiphoton_prob(model: SourceModel) -> float:
    """Multiphoton emission probability per pulse for either source kind."""
    return multiphoton_prob_sps(model.mu, model.reduction_factor)


@dataclass(frozen=True)
class PulseCountDistribution:
    """Three-point photon-number distribution (counts 0, 1, 2)."""

    p0: float
    p1: float
    p2: float

    def __post_init__(self):
        if min(self.p0, self.p1, self.p2) < 0:
            raise ConfigError(
                f"photon-number probabilities must be >= 0, got "
                f"({self.p0}, {self.p1}, {self.p2})"
            )
        if abs(self.p0 + self.p1 + self.p2 - 1.0) > 1e-12:
            raise ConfigError("photon-number probabilities must sum to 1")

    @property
    def mean(self) -> float:
        return self.p1 + 2.0 * self.p2


def pulse_distribution(model: SourceModel) -> PulseCountDistribution:
    """Truncated photon-number distribution matching mean and multiphoton weight.

    ``p2`` is the model's multiphoton probability, ``p1 = mu - 2*p2`` keeps
    the mean exact, and ``p0`` absorbs the rest.  Raises :class:`ConfigError`
    when ``mu`` is too large for the two-photon truncation to stay a valid
    distribution.
    """
    p2 = multiphoton_prob(model)
    p1 = model.mu - 2.0 * p2
    p0 = 1.0 - p1 - p2
    if p1 < 0 or p0 < 0:
        raise ConfigError(
            f"mu={model.mu} is too large for the two-photon truncation "
            f"(p1={p1:.3g}, p0={p0:.3g})"
        )
    return PulseCountDistribution(p0, p1, p2)


def sample_photon_counts(
    dist: PulseCountDistribution, n_pulses: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw per-pulse photon counts in {0, 1, 2} from the truncated distribution."""
    u = rng.random(n_pulses)
    counts = (u < dist.p1 + dist.p2).astype(np.uint8)
    counts += u < dist.p2
    return counts


def sample_photon_counts_poisson(
    mu: float, n_pulses: int, rng: np.random.Generator
) -> np.ndarray:
    """Full Poisson sampler for WCP validation runs (no two-photon truncation)."""
    if mu < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mu}")
    return rng.poisson(mu, n_pulses)


def estimate_reduction_factor(p_d1: float, p_d2: float) -> float:
    """Reduction factor from single- and double-detection probabilities.

    ``p_d2`` undercounts two-photon arrivals by the factor 5/8 because a
    detector registers at most one photon per slot and same-detector pairs
    occur with probability 3/8.  Raises :class:`NoMultiphotonEventsError`
    when ``p_d2`` is zero (the estimate is unbounded, not a number).
    """
    if p_d1 <= 0:
        raise ValueError(f"single-detection probability must be > 0, got {p_d1}")
    if p_d2 < 0:
        raise ValueError(f"double-detection probability must be >= 0, got {p_d2}")
    if p_d2 == 0:
        raise NoMultiphotonEventsError(
            "no multiphoton events observed; reduction factor is unbounded"
        )
    return DOUBLE_DETECTION_FACTOR * (p_d1**2 / 2.0) / p_d2


def detection_probabilities(fired_counts, n_pulses: int) -> tuple[float, float]:
    """Convert per-slot fired-detector counts to (p_d1, p_d2).

    ``fired_counts`` is an array of how many detectors fired in each recorded
    slot (slots with zero detections may be omitted); ``n_pulses`` is the
    total number of emitted pulses.
    """
    if n_pulses <= 0:
        raise ValueError("n_pulses must be positive")
    counts = np.asarray(fired_counts)
    p_d1 = float(np.count_nonzero(counts == 1)) / n_pulses
    p_d2 = float(np.count_nonzero(counts == 2)) / n_pulses
    return p_d1, p_d2
