"""Source statistics: multiphoton formulas, the truncated sampler, and the
reduction-factor estimator (including its Monte Carlo round trip)."""

import math

import numpy as np
import pytest

from bb84sps.errors import ConfigError, NoMultiphotonEventsError
from bb84sps.optics import DetectorParams, LinkParams, simulate_slots
from bb84sps.sources import (
    PulseCountDistribution,
    SourceModel,
    detection_probabilities,
    estimate_reduction_factor,
    multiphoton_prob,
    multiphoton_prob_sps,
    multiphoton_prob_wcp,
    pulse_distribution,
    sample_photon_counts,
    sample_photon_counts_poisson,
)

MU = 0.0235
R = 6.7


def round_sig(value: float, digits: int) -> float:
    if value == 0:
        return 0.0
    exponent = math.floor(math.log10(abs(value)))
    return round(value, digits - 1 - exponent)


def poisson_tail_oracle(mu: float, n_max: int = 50) -> float:
    """Independent check: sum the Poisson weights for n >= 2 directly."""
    return sum(math.exp(-mu) * mu**n / math.factorial(n) for n in range(2, n_max + 1))


class TestMultiphotonProbs:
    def test_wcp_reference_value_two_significant_figures(self):
        assert round_sig(multiphoton_prob_wcp(MU), 2) == 2.7e-4

    def test_wcp_empty_source(self):
        assert multiphoton_prob_wcp(0.0) == 0.0

    def test_wcp_equals_poisson_tail(self):
        assert multiphoton_prob_wcp(1.0) == pytest.approx(poisson_tail_oracle(1.0), abs=1e-12)

    def test_wcp_negative_mu_rejected(self):
        with pytest.raises(ValueError):
            multiphoton_prob_wcp(-0.1)

    def test_sps_reference_value_two_significant_figures(self):
        assert round_sig(multiphoton_prob_sps(MU, R), 2) == 4.1e-5

    def test_sps_reduces_to_wcp_at_unit_factor(self):
        assert multiphoton_prob_sps(MU, 1.0) == multiphoton_prob_wcp(MU)

    def test_sps_zero_mu(self):
        assert multiphoton_prob_sps(0.0, 3.0) == 0.0

    def test_sps_subunit_factor_rejected(self):
        with pytest.raises(ValueError):
            multiphoton_prob_sps(MU, 0.9)

    def test_reduction_identity_over_mu_range(self):
        for mu in np.linspace(0.0, 0.5, 101):
            for r in (1.0, 2.0, 6.7, 10.0):
                assert multiphoton_prob_sps(mu, r) * r == pytest.approx(
                    multiphoton_prob_wcp(mu), rel=1e-15, abs=1e-300
                )

    def test_multiphoton_bounded_by_poissonian(self):
        for mu in np.linspace(0.0, 0.5, 51):
            model = SourceModel.sps(mu, 4.2)
            assert multiphoton_prob(model) <= multiphoton_prob_wcp(mu)


class TestPulseDistribution:
    def test_reference_point(self):
        d = pulse_distribution(SourceModel.sps(MU, R))
        # Direct arithmetic oracle.
        p2 = multiphoton_prob_wcp(MU) / R
        assert d.p2 == pytest.approx(p2, rel=1e-15)
        assert d.p1 == pytest.approx(MU - 2 * p2, rel=1e-15)
        assert d.p0 == pytest.approx(1 - (MU - 2 * p2) - p2, rel=1e-15)
        assert (d.p0, d.p1, d.p2) == pytest.approx((0.976541, 0.023418, 4.1e-5), abs=1e-6)

    def test_empty_source(self):
        d = pulse_distribution(SourceModel.sps(0.0, R))
        assert (d.p0, d.p1, d.p2) == (1.0, 0.0, 0.0)

    def test_wcp_p2_is_paper_value(self):
        d = pulse_distribution(SourceModel.wcp(MU))
        assert round_sig(d.p2, 2) == 2.7e-4

    def test_normalisation_and_mean_invariants(self):
        for mu in np.linspace(0.0, 0.5, 26):
            d = pulse_distribution(SourceModel.sps(mu, 2.0))
            assert abs(d.p0 + d.p1 + d.p2 - 1.0) <= 1e-12
            assert abs(d.mean - mu) <= 1e-12

    def test_truncation_breakdown_rejected(self):
        with pytest.raises(ConfigError):
            pulse_distribution(SourceModel.wcp(2.0))

    def test_sampler_moments(self, rng):
        d = pulse_distribution(SourceModel.sps(MU, R))
        n = 10**7
        counts = sample_photon_counts(d, n, rng)
        se_mean = math.sqrt(d.p1 + 4 * d.p2 - d.mean**2) / math.sqrt(n)
        assert abs(counts.mean() - MU) <= 3 * se_mean
        p2_hat = np.count_nonzero(counts == 2) / n
        se_p2 = math.sqrt(d.p2 * (1 - d.p2) / n)
        assert abs(p2_hat - d.p2) <= 3 * se_p2

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ConfigError):
            PulseCountDistribution(0.5, 0.4, 0.2)
        with pytest.raises(ConfigError):
            PulseCountDistribution(0.9, 0.2, -0.1)


class TestReductionFactorEstimator:
    def test_reference_counting_statistics(self):
        assert estimate_reduction_factor(7.6e-3, 2.7e-6) == pytest.approx(6.7, abs=0.05)

    def test_scale_invariance(self):
        base = estimate_reduction_factor(7.6e-3, 2.7e-6)
        assert estimate_reduction_factor(2 * 7.6e-3, 4 * 2.7e-6) == pytest.approx(base, rel=1e-12)

    def test_no_multiphoton_events(self):
        with pytest.raises(NoMultiphotonEventsError):
            estimate_reduction_factor(7.6e-3, 0.0)

    def test_invalid_probabilities(self):
        with pytest.raises(ValueError):
            estimate_reduction_factor(0.0, 1e-6)
        with pytest.raises(ValueError):
            estimate_reduction_factor(1e-3, -1e-9)

    def test_detection_probability_counting_helper(self):
        fired = [1, 1, 2, 1, 2, 1, 3]
        p1, p2 = detection_probabilities(fired, 100)
        assert p1 == 0.04 and p2 == 0.02


def _counting_run(dist, n_pulses, rng, eta=1.0):
    """Feed sampled pulses through the detection model, count fired slots."""
    link = LinkParams(transmission=1.0, link_efficiency=eta)
    det = DetectorParams(dark_rates=(0.0, 0.0, 0.0, 0.0))
    ones = twos = 0
    chunk = 1 << 21
    zeros = np.zeros(chunk, dtype=np.uint8)
    popcount = np.array([bin(i).count("1") for i in range(16)], dtype=np.uint8)
    done = 0
    while done < n_pulses:
        size = min(chunk, n_pulses - done)
        if isinstance(dist, PulseCountDistribution):
            counts = sample_photon_counts(dist, size, rng)
        else:  # full Poisson validation path; the receiver caps at 2
            counts = np.minimum(sample_photon_counts_poisson(dist, size, rng), 2).astype(np.uint8)
        _, masks = simulate_slots(zeros[:size], zeros[:size], counts, link, det, 0.0, rng)
        fired = popcount[masks]
        ones += int(np.count_nonzero(fired == 1))
        twos += int(np.count_nonzero(fired == 2))
        done += size
    return ones / n_pulses, twos / n_pulses


@pytest.mark.slow
def test_poissonian_source_self_consistency(rng):
    # A Poissonian source fed through the detection chain must estimate
    # R = 1 within 10 % at 1e8 pulses.
    p1, p2 = _counting_run(MU, 10**8, rng)
    assert estimate_reduction_factor(p1, p2) == pytest.approx(1.0, abs=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("true_r", [2.0, 6.7, 10.0])
def test_reduction_factor_round_trip(true_r, rng):
    # Sample from the truncated source model, detect, count, re-estimate.
    dist = pulse_distribution(SourceModel.sps(MU, true_r))
    p1, p2 = _counting_run(dist, 10**8, rng)
    assert estimate_reduction_factor(p1, p2) == pytest.approx(true_r, rel=0.15)
