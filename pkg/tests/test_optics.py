"""Receiver model: encoding, thinning, routing combinatorics, dark counts,
and the aggregate error-rate model."""

import itertools
import math

import numpy as np
import pytest

from bb84sps.errors import CalibrationError, ConfigError
from bb84sps.optics import (
    DetectorParams,
    LinkParams,
    Polarization,
    QberModel,
    calibrate_link,
    decode,
    detect,
    effective_flip_prob,
    encode,
    predict_qber,
    signal_detection_prob,
    simulate_slots,
    transmit,
)
from bb84sps.sources import SourceModel, pulse_distribution

MU = 0.0235


class TestEncoding:
    def test_convention(self):
        assert encode(0, 0) is Polarization.H
        assert encode(1, 0) is Polarization.V
        assert encode(0, 1) is Polarization.L
        assert encode(1, 1) is Polarization.R

    def test_round_trip(self):
        for bit, basis in itertools.product((0, 1), repeat=2):
            assert decode(encode(bit, basis)) == (bit, basis)

    def test_basis_partition(self):
        assert Polarization.H.basis == Polarization.V.basis == 0
        assert Polarization.L.basis == Polarization.R.basis == 1


class TestTransmit:
    def test_unit_transmission_identity(self, rng):
        assert transmit(2, 1.0, rng) == 2

    def test_opaque_channel(self, rng):
        assert transmit(2, 0.0, rng) == 0

    def test_binomial_statistics(self, rng):
        n = 10**6
        survivors = sum(transmit(1, 0.5, rng) for _ in range(n))
        assert survivors / n == pytest.approx(0.5, abs=0.002)

    def test_domain(self, rng):
        with pytest.raises(ValueError):
            transmit(1, 1.5, rng)
        with pytest.raises(ValueError):
            transmit(-1, 0.5, rng)


def two_photon_same_detector_oracle() -> float:
    """Enumerate the 3x3 routing outcomes with weights (1/2, 1/4, 1/4)."""
    outcomes = [("match", 0.5), ("conj_a", 0.25), ("conj_b", 0.25)]
    return sum(
        w1 * w2
        for (d1, w1), (d2, w2) in itertools.product(outcomes, outcomes)
        if d1 == d2
    )


class TestDetect:
    def test_matched_arm_is_deterministic(self, rng):
        link = LinkParams(link_efficiency=1.0)
        det = DetectorParams(dark_rates=(0.0, 0.0, 0.0, 0.0))
        fired_h = 0
        trials = 20000
        for _ in range(trials):
            rec = detect(Polarization.H, 1, link, det, rng)
            assert Polarization.V not in rec.fired  # wrong detector of own arm never fires
            assert len(rec.fired) == 1
            if rec.fired == {Polarization.H}:
                fired_h += 1
        assert fired_h / trials == pytest.approx(0.5, abs=3 * 0.5 / math.sqrt(trials))

    def test_two_photon_same_detector_probability(self, rng):
        assert two_photon_same_detector_oracle() == 3 / 8
        link = LinkParams(link_efficiency=1.0)
        det = DetectorParams(dark_rates=(0.0, 0.0, 0.0, 0.0))
        trials = 40000
        same = sum(
            len(detect(Polarization.L, 2, link, det, rng).fired) == 1
            for _ in range(trials)
        )
        se = math.sqrt((3 / 8) * (5 / 8) / trials)
        assert same / trials == pytest.approx(3 / 8, abs=3 * se)

    def test_dark_probability_matches_direct_estimate(self):
        det = DetectorParams()  # measured hardware rates, 60 ns gates at 5.3 MHz
        assert det.any_dark_prob() == pytest.approx(3.8e-5, rel=0.02)
        assert det.dark_gate_fraction == pytest.approx(0.318, abs=1e-9)

    def test_truncation_contract(self, rng):
        with pytest.raises(ValueError):
            detect(Polarization.H, 3, LinkParams(), DetectorParams(), rng)

    def test_detector_fires_at_most_once(self, rng):
        link = LinkParams(link_efficiency=1.0)
        det = DetectorParams(dark_rates=(1e6, 1e6, 1e6, 1e6))  # saturating darks
        rec = detect(Polarization.H, 2, link, det, rng)
        assert len(rec.fired) <= 4


class TestQberModel:
    def test_reference_row_one(self):
        model = QberModel(alpha=1.3e-2, p_dark=3.5e-5)
        p_signal = 7.6e-3 - 3.5e-5
        e, p_exp = predict_qber(p_signal, model)
        assert p_exp == pytest.approx(7.6e-3, rel=1e-3)
        assert e == pytest.approx(0.0165, abs=0.0025)

    def test_reference_row_five(self):
        model = QberModel(alpha=1.3e-2, p_dark=3.5e-5)
        p_signal = 3.8e-4 - 3.5e-5
        e, p_exp = predict_qber(p_signal, model)
        assert p_exp == pytest.approx(3.8e-4, rel=1e-3)
        assert e == pytest.approx(0.094, abs=0.015)

    def test_no_dark_counts_gives_alpha_exactly(self):
        model = QberModel(alpha=1.3e-2, p_dark=0.0)
        e, _ = predict_qber(5e-3, model)
        assert e == model.alpha

    def test_undefined_qber(self):
        with pytest.raises(ValueError):
            predict_qber(0.0, QberModel(alpha=0.01, p_dark=0.0))

    def test_validation(self):
        with pytest.raises(ConfigError):
            QberModel(alpha=-0.1, p_dark=0.0)


class TestCalibration:
    def test_reference_point(self):
        assert calibrate_link(MU, 7.6e-3, 3.8e-5) == pytest.approx(0.322, abs=0.001)

    def test_trivials(self):
        assert calibrate_link(MU, MU, 0.0) == pytest.approx(1.0)
        assert calibrate_link(MU, MU / 2, 0.0) == pytest.approx(0.5)

    def test_dark_dominated_measurement_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_link(MU, 3.0e-5, 3.5e-5)


class TestEffectiveFlip:
    def test_reduces_to_alpha_without_darks(self):
        assert effective_flip_prob(1.3e-2, 7.6e-3, 0.0) == pytest.approx(1.3e-2)
        assert effective_flip_prob(0.0, 7.6e-3, 0.0) == 0.0

    def test_clamped(self):
        assert effective_flip_prob(0.5, 1e-9, 1.0) == 1.0


def _bulk_run(link, det, flip, n, rng, source=None):
    dist = pulse_distribution(source or SourceModel.sps(MU, 6.7))
    bits = rng.integers(0, 2, n).astype(np.uint8)
    bases = rng.integers(0, 2, n).astype(np.uint8)
    u = rng.random(n)
    counts = ((u < dist.p1 + dist.p2).astype(np.uint8) + (u < dist.p2)).astype(np.uint8)
    slots, masks = simulate_slots(bits, bases, counts, link, det, flip, rng)
    return bits, bases, slots, masks


class TestBulkSimulation:
    def test_detection_frequency_matches_model(self, rng):
        # Per-slot detection frequency against the aggregate model, >= 1e7
        # pulses, three standard errors.
        n = 10**7
        link = LinkParams(transmission=0.25, link_efficiency=0.322)
        det = DetectorParams()
        dist = pulse_distribution(SourceModel.sps(MU, 6.7))
        p_s = signal_detection_prob(dist.p1, dist.p2, link.transmission, link.link_efficiency)
        model = QberModel(alpha=1.3e-2, p_dark=det.any_dark_prob())
        _, p_exp = predict_qber(p_s, model)
        _, _, slots, _ = _bulk_run(link, det, 0.0, n, rng)
        se = math.sqrt(p_exp * (1 - p_exp) / n)
        assert len(slots) / n == pytest.approx(p_exp, abs=3 * se)

    def test_basis_symmetry(self, rng):
        # Uniform encoding and equal dark rates: H/V and L/R firing
        # frequencies agree within statistical error.
        n = 4 * 10**6
        link = LinkParams(transmission=1.0, link_efficiency=0.322)
        det = DetectorParams(dark_rates=(100.0, 100.0, 100.0, 100.0))
        _, _, _, masks = _bulk_run(link, det, 0.0, n, rng)
        fired = [int(np.count_nonzero(masks & (1 << d))) for d in range(4)]
        for a, b in ((0, 1), (2, 3)):
            diff = abs(fired[a] - fired[b])
            se = math.sqrt(fired[a] + fired[b])
            assert diff <= 3 * se, f"detectors {a}/{b}: {fired}"

    def test_error_anatomy_zero_alpha_zero_darks(self, rng):
        # With no flips and no darks the matched-basis bits are exact.
        n = 10**6
        link = LinkParams(transmission=1.0, link_efficiency=0.322)
        det = DetectorParams(dark_rates=(0.0, 0.0, 0.0, 0.0))
        bits, bases, slots, masks = _bulk_run(link, det, 0.0, n, rng)
        single = masks[np.isin(masks, (1, 2, 4, 8))]
        slots_single = slots[np.isin(masks, (1, 2, 4, 8))]
        detector = np.log2(single).astype(int)
        matched = (detector >> 1) == bases[slots_single]
        errors = np.count_nonzero(bits[slots_single][matched] != (detector[matched] & 1))
        assert errors == 0

    def test_dark_only_regime_is_fifty_percent(self, rng):
        # mu = 0: every detection is a dark count; matched-basis bits are
        # uniformly random against the transmitter's sequence.
        n = 4 * 10**6
        link = LinkParams(transmission=1.0, link_efficiency=0.322)
        det = DetectorParams(dark_rates=(6000.0, 7000.0, 35000.0, 15000.0))
        bits = rng.integers(0, 2, n).astype(np.uint8)
        bases = rng.integers(0, 2, n).astype(np.uint8)
        counts = np.zeros(n, dtype=np.uint8)
        slots, masks = simulate_slots(bits, bases, counts, link, det, 0.0, rng)
        single_mask = np.isin(masks, (1, 2, 4, 8))
        detector = np.log2(masks[single_mask]).astype(int)
        slot_sel = slots[single_mask]
        matched = (detector >> 1) == bases[slot_sel]
        n_matched = int(np.count_nonzero(matched))
        errors = int(np.count_nonzero(bits[slot_sel][matched] != (detector[matched] & 1)))
        se = math.sqrt(0.25 / n_matched)
        assert errors / n_matched == pytest.approx(0.5, abs=3 * se)


class TestParamValidation:
    def test_link_params(self):
        with pytest.raises(ConfigError):
            LinkParams(transmission=1.2)
        with pytest.raises(ConfigError):
            LinkParams(link_efficiency=-0.1)

    def test_detector_params(self):
        with pytest.raises(ConfigError):
            DetectorParams(dark_rates=(-1.0, 0.0, 0.0, 0.0))
        with pytest.raises(ConfigError):
            DetectorParams(dark_gate_fraction=0.5)  # inconsistent with gate * rate
        duty = 60e-9 * 5.3e6
        DetectorParams(dark_gate_fraction=duty)  # consistent value accepted
