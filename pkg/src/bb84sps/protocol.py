"""BB84 session engine: quantum phase, sifting, error gate, and the two
role-separated state machines.

A session covers one register period (1048575 pulses by default).  The
transmitter's data and basis bits come from the two hardware-style shift
registers; all physical randomness (photon numbers, losses, routing, dark
counts) comes from a separate seedable generator.  Both parties are
configured with the same quantum seed, so the two processes experience the
same simulated physics without any quantum information crossing the
classical channel; the HELLO exchange verifies the configurations match.

Classical phase, in message order:

    both    HELLO                     (version / config digest check)
    bob     DETECTION_ANNOUNCE        indices + bases + ambiguity flags
    alice   SIFT_REPLY                kept slot indices (matched bases)
    bob     QBER_SAMPLE               random subset positions + bits
    alice   QBER_RESULT               estimated error rate, abort flag
    bob     SHUFFLE_SEED / CASCADE_PARITY_REQ   (reconciliation dialogue)
    alice   CASCADE_PARITY_RESP
    bob     VERIFY_HASH               digest of his corrected key
    alice   VERIFY_HASH               her digest (acts as confirmation)
    bob     PA_SEED                   final length + hashing seed
    alice   DONE
    bob     DONE

Bob never announces which detector fired, only the basis; slots where more
than one detector fired are flagged ambiguous and discarded, with an abort
if their fraction exceeds a configured bound.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from . import lfsr
from .errors import ConfigError, ProtocolViolation, SessionAbort
from .optics import (
    DetectorParams,
    LinkParams,
    QberModel,
    effective_flip_prob,
    predict_qber,
    signal_detection_prob,
    simulate_slots,
)
from .reconcile import (
    SAFETY_MARGIN_BITS,
    VERIFY_HASH_BITS,
    CascadeDriver,
    CascadeResponder,
    GainInputs,
    SecretKey,
    final_key_length,
    key_verification_hash,
    toeplitz_hash,
)
from .sources import SourceModel, multiphoton_prob, pulse_distribution, sample_photon_counts
from .wire import (
    ABORT_INSUFFICIENT_DATA,
    ABORT_PARAMETER_MISMATCH,
    ABORT_QBER_TOO_HIGH,
    ABORT_TOO_MANY_MULTI_DETECTIONS,
    ABORT_VERIFY_FAILED,
    ROLE_ALICE,
    ROLE_BOB,
    PROTOCOL_VERSION,
    CascadeParityReq,
    CascadeParityResp,
    DetectionAnnounce,
    Done,
    Hello,
    MemoryChannel,
    PaSeed,
    QberResult,
    QberSample,
    ShuffleSeed,
    SiftReply,
    VerifyHash,
)

_CHUNK = 1 << 20
_POPCOUNT = np.array([bin(i).count("1") for i in range(16)], dtype=np.uint8)
_DETECTOR_OF_MASK = np.full(16, 255, dtype=np.uint8)
for _i in range(4):
    _DETECTOR_OF_MASK[1 << _i] = _i


@dataclass(frozen=True)
class SessionSeeds:
    """Seed split mirroring the hardware: deterministic registers for the
    encoded sequence, general-purpose streams for physics and sampling."""

    quantum: int = 2003
    lfsr_data: int = 0x5A5A5
    lfsr_basis: int = 0x2B3C4
    classical: int = 31337


@dataclass(frozen=True)
class SessionConfig:
    source: SourceModel
    link: LinkParams
    detector: DetectorParams
    seeds: SessionSeeds = SessionSeeds()
    pulses_per_session: int = lfsr.PERIOD
    qber_sample_fraction: float = 0.01
    qber_abort_threshold: float = 0.125
    min_sample_bits: int = 30
    ambiguous_fraction_limit: float = 0.01
    alpha: float = 1.3e-2
    safety_margin_bits: int = SAFETY_MARGIN_BITS
    verify_hash_bits: int = VERIFY_HASH_BITS
    message_timeout: float = 30.0

    def __post_init__(self):
        if not 0 < self.pulses_per_session <= lfsr.PERIOD:
            raise ConfigError(
                f"pulses per session must be in [1, {lfsr.PERIOD}], "
                f"got {self.pulses_per_session}"
            )
        if not 0.0 < self.qber_sample_fraction < 1.0:
            raise ConfigError("sample fraction must be in (0, 1)")
        if not 0.0 < self.qber_abort_threshold < 0.5:
            raise ConfigError("abort threshold must be in (0, 0.5)")
        if not 0.0 <= self.ambiguous_fraction_limit <= 1.0:
            raise ConfigError("ambiguous fraction limit must be in [0, 1]")

    @property
    def repetition_rate(self) -> float:
        return self.detector.repetition_rate

    @property
    def session_id(self) -> int:
        return self.seeds.quantum & 0xFFFFFFFFFFFFFFFF

    def canonical_string(self) -> str:
        """Flat key=value rendering used for the HELLO configuration digest."""
        items = {
            "source_kind": self.source.kind.value,
            "mu": repr(self.source.mu),
            "reduction_factor": repr(self.source.reduction_factor),
            "transmission": repr(self.link.transmission),
            "link_efficiency": repr(self.link.link_efficiency),
            "dark_rates": ",".join(repr(r) for r in self.detector.dark_rates),
            "gate_width": repr(self.detector.gate_width),
            "repetition_rate": repr(self.detector.repetition_rate),
            "signal_gate_fraction": repr(self.detector.signal_gate_fraction),
            "pulses_per_session": str(self.pulses_per_session),
            "qber_sample_fraction": repr(self.qber_sample_fraction),
            "qber_abort_threshold": repr(self.qber_abort_threshold),
            "min_sample_bits": str(self.min_sample_bits),
            "ambiguous_fraction_limit": repr(self.ambiguous_fraction_limit),
            "alpha": repr(self.alpha),
            "safety_margin_bits": str(self.safety_margin_bits),
            "verify_hash_bits": str(self.verify_hash_bits),
            "seed_quantum": str(self.seeds.quantum),
            "seed_lfsr_data": str(self.seeds.lfsr_data),
            "seed_lfsr_basis": str(self.seeds.lfsr_basis),
            "seed_classical": str(self.seeds.classical),
        }
        return "\n".join(f"{k}={v}" for k, v in sorted(items.items()))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_string().encode()).digest()


@dataclass(frozen=True)
class AliceLog:
    """Transmitter record: per-pulse data bit and basis bit."""

    bits: np.ndarray
    bases: np.ndarray


@dataclass(frozen=True)
class BobLog:
    """Receiver record: slots with at least one firing and their detector masks."""

    slot_indices: np.ndarray
    masks: np.ndarray

    @property
    def n_fired(self) -> np.ndarray:
        return _POPCOUNT[self.masks]

    def fired_counts(self) -> np.ndarray:
        """Per-recorded-slot count of fired detectors (for source statistics)."""
        return self.n_fired


@dataclass(frozen=True)
class SiftedKey:
    bits: np.ndarray
    slot_indices: np.ndarray
    session_id: int
    estimated_qber: float | None = None

    def __post_init__(self):
        if len(self.bits) != len(self.slot_indices):
            raise ValueError("bits and slot indices must have equal length")
        if len(self.slot_indices) > 1 and not np.all(np.diff(self.slot_indices) > 0):
            raise ValueError("slot indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bits)


def quantum_rng(cfg: SessionConfig) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(cfg.seeds.quantum))


def classical_rng(cfg: SessionConfig) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(cfg.seeds.classical))


def session_flip_prob(cfg: SessionConfig) -> float:
    """Per-detected-photon flip probability realizing the aggregate error model."""
    dist = pulse_distribution(cfg.source)
    p_signal = signal_detection_prob(
        dist.p1, dist.p2, cfg.link.transmission, cfg.link.link_efficiency
    )
    return effective_flip_prob(cfg.alpha, p_signal, cfg.detector.any_dark_prob())


def run_quantum_phase(
    cfg: SessionConfig, rng: np.random.Generator | None = None
) -> tuple[AliceLog, BobLog]:
    """Simulate one session of pulses; returns both parties' private logs.

    Exactly ``pulses_per_session`` slots are simulated; the receiver log
    contains only slots where at least one detector fired.
    """
    if rng is None:
        rng = quantum_rng(cfg)
    n = cfg.pulses_per_session
    bits_full, bases_full = lfsr.alice_bit_stream(cfg.seeds.lfsr_data, cfg.seeds.lfsr_basis)
    bits, bases = bits_full[:n], bases_full[:n]
    dist = pulse_distribution(cfg.source)
    flip = session_flip_prob(cfg)

    slot_parts, mask_parts = [], []
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        counts = sample_photon_counts(dist, stop - start, rng)
        slots, masks = simulate_slots(
            bits[start:stop], bases[start:stop], counts,
            cfg.link, cfg.detector, flip, rng,
        )
        slot_parts.append(slots + start)
        mask_parts.append(masks)
    return (
        AliceLog(bits=bits, bases=bases),
        BobLog(
            slot_indices=np.concatenate(slot_parts) if slot_parts else np.zeros(0, dtype=np.int64),
            masks=np.concatenate(mask_parts) if mask_parts else np.zeros(0, dtype=np.uint8),
        ),
    )


# ---------------------------------------------------------------------------
# Sifting


def announce_detections(log: BobLog) -> DetectionAnnounce:
    """Public announcement: slot index and basis per detection, never the detector."""
    n_fired = log.n_fired
    ambiguous = n_fired > 1
    # For an unambiguous slot the basis is the fired detector's arm; for an
    # ambiguous one announce the lowest fired arm (the slot is discarded).
    lowest = np.array([(int(m) & -int(m)) for m in log.masks], dtype=np.uint8)
    bases = (_DETECTOR_OF_MASK[lowest] >> 1).astype(np.uint8)
    return DetectionAnnounce(
        indices=tuple(int(i) for i in log.slot_indices),
        bases=tuple(int(b) for b in bases),
        ambiguous=tuple(bool(a) for a in ambiguous),
    )


def check_announcement(ann: DetectionAnnounce, n_pulses: int, limit: float) -> None:
    """Validate announcement structure and the multi-detection bound."""
    idx = np.asarray(ann.indices, dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= n_pulses):
        raise ProtocolViolation("announced slot index out of range")
    if idx.size > 1 and not np.all(np.diff(idx) > 0):
        raise ProtocolViolation("announced slot indices must be strictly increasing")
    if idx.size:
        frac = sum(ann.ambiguous) / idx.size
        if frac > limit:
            raise SessionAbort(
                ABORT_TOO_MANY_MULTI_DETECTIONS,
                f"ambiguous fraction {frac:.4f} exceeds bound {limit}",
                detail=frac,
            )


def sift_reply(alice_bases: np.ndarray, ann: DetectionAnnounce) -> tuple:
    """Transmitter side of sifting: slots kept because the bases matched.

    Ambiguous slots are discarded regardless of basis.
    """
    kept = [
        idx
        for idx, basis, ambiguous in zip(ann.indices, ann.bases, ann.ambiguous)
        if not ambiguous and alice_bases[idx] == basis
    ]
    return tuple(kept)


def bob_bits_at(log: BobLog, slots) -> np.ndarray:
    """Receiver's bit values for unambiguous slots (detector's bit line)."""
    pos = np.searchsorted(log.slot_indices, np.asarray(slots, dtype=np.int64))
    masks = log.masks[pos]
    detectors = _DETECTOR_OF_MASK[masks]
    if np.any(detectors == 255):
        raise ValueError("requested slot is ambiguous or unknown")
    return (detectors & 1).astype(np.uint8)


def sift(
    alice_log: AliceLog, bob_log: BobLog, session_id: int = 0
) -> tuple[SiftedKey, SiftedKey]:
    """Run both sifting roles in-process; returns (alice key, bob key)."""
    ann = announce_detections(bob_log)
    kept = sift_reply(alice_log.bases, ann)
    slots = np.asarray(kept, dtype=np.int64)
    alice_key = SiftedKey(
        bits=alice_log.bits[slots].astype(np.uint8),
        slot_indices=slots,
        session_id=session_id,
    )
    bob_key = SiftedKey(
        bits=bob_bits_at(bob_log, slots),
        slot_indices=slots.copy(),
        session_id=session_id,
    )
    return alice_key, bob_key


# ---------------------------------------------------------------------------
# Error estimation gate


def choose_sample_positions(
    n: int, fraction: float, min_sample: int, rng: np.random.Generator
) -> np.ndarray:
    size = max(math.ceil(fraction * n), min_sample)
    if n < size:
        raise ValueError(f"key of {n} bits is below the minimum sample size {size}")
    return np.sort(rng.choice(n, size=size, replace=False))


def compare_sample(alice_bits: np.ndarray, positions: np.ndarray, bob_bits) -> float:
    sample = np.asarray(bob_bits, dtype=np.uint8)
    return float(np.count_nonzero(alice_bits[positions] != sample) / len(sample))


def remove_positions(key: SiftedKey, positions: np.ndarray, e: float) -> SiftedKey:
    keep = np.ones(len(key), dtype=bool)
    keep[positions] = False
    return SiftedKey(
        bits=key.bits[keep],
        slot_indices=key.slot_indices[keep],
        session_id=key.session_id,
        estimated_qber=e,
    )


def estimate_and_gate_qber(
    alice_key: SiftedKey,
    bob_key: SiftedKey,
    rng: np.random.Generator,
    fraction: float = 0.01,
    threshold: float = 0.125,
    min_sample: int = 30,
) -> tuple[float, SiftedKey, SiftedKey]:
    """Disclose a random subset, estimate the error rate, gate, and trim.

    Raises :class:`SessionAbort` carrying the measured rate when it exceeds
    the threshold (possible eavesdropping or broken alignment).
    """
    if len(alice_key) != len(bob_key):
        raise ValueError("keys must have equal length")
    positions = choose_sample_positions(len(bob_key), fraction, min_sample, rng)
    e = compare_sample(alice_key.bits, positions, bob_key.bits[positions])
    if e > threshold:
        raise SessionAbort(
            ABORT_QBER_TOO_HIGH,
            f"estimated error rate {e:.4f} above threshold {threshold}",
            detail=e,
        )
    return e, remove_positions(alice_key, positions, e), remove_positions(bob_key, positions, e)


# ---------------------------------------------------------------------------
# Role state machines


@dataclass
class SessionReport:
    role: str
    n_pulses: int
    n_raw: int
    n_ambiguous: int
    n_sifted: int
    qber_estimate: float
    corrections: int
    disclosed_parity_bits: int
    sample_disclosures: int
    final_length: int
    wall_time_s: float

    def lines(self) -> list[str]:
        return [
            f"role={self.role}",
            f"n_pulses={self.n_pulses}",
            f"n_raw={self.n_raw}",
            f"n_ambiguous={self.n_ambiguous}",
            f"n_sifted={self.n_sifted}",
            f"qber_estimate={self.qber_estimate:.6f}",
            f"corrections={self.corrections}",
            f"disclosed_parity_bits={self.disclosed_parity_bits}",
            f"sample_disclosures={self.sample_disclosures}",
            f"final_length={self.final_length}",
            f"wall_time_s={self.wall_time_s:.3f}",
        ]


def _hello_exchange(channel, cfg: SessionConfig, role: int) -> None:
    channel.send(Hello(PROTOCOL_VERSION, role, cfg.digest(), cfg.session_id))
    peer = channel.expect(Hello)
    ok = (
        peer.version == PROTOCOL_VERSION
        and peer.role == (ROLE_BOB if role == ROLE_ALICE else ROLE_ALICE)
        and peer.config_digest == cfg.digest()
        and peer.session_id == cfg.session_id
    )
    if not ok:
        channel.abort(ABORT_PARAMETER_MISMATCH)
        raise SessionAbort(ABORT_PARAMETER_MISMATCH, "negotiated parameters disagree")


class _RemoteCascadeLink:
    """Bob-side adapter: Cascade queries travel over the classical channel."""

    def __init__(self, channel):
        self.channel = channel

    def begin_pass(self, pass_index: int, seed: int | None) -> None:
        self.channel.send(ShuffleSeed(pass_index, seed))

    def query(self, ranges) -> list[int]:
        self.channel.send(CascadeParityReq(tuple((int(p), int(lo), int(hi)) for p, lo, hi in ranges)))
        resp = self.channel.expect(CascadeParityResp)
        if len(resp.parities) != len(ranges):
            raise ProtocolViolation("parity reply length mismatch")
        return [int(b) for b in resp.parities]


class AliceSession:
    """Transmitter role: reference key holder and parity responder."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg

    def run(self, channel) -> tuple[SecretKey, SessionReport]:
        cfg = self.cfg
        start = time.monotonic()
        channel.timeout = cfg.message_timeout
        _hello_exchange(channel, cfg, ROLE_ALICE)

        alice_log, _ = run_quantum_phase(cfg)

        ann = channel.expect(DetectionAnnounce)
        try:
            check_announcement(ann, cfg.pulses_per_session, cfg.ambiguous_fraction_limit)
        except SessionAbort as abort:
            channel.abort(abort.reason)
            raise
        n_raw = len(ann.indices)
        n_ambiguous = sum(ann.ambiguous)
        kept = sift_reply(alice_log.bases, ann)
        channel.send(SiftReply(kept))
        slots = np.asarray(kept, dtype=np.int64)
        key = SiftedKey(
            bits=alice_log.bits[slots].astype(np.uint8),
            slot_indices=slots,
            session_id=cfg.session_id,
        )
        n_sifted = len(key)

        sample = channel.expect(QberSample)
        positions = np.asarray(sample.positions, dtype=np.int64)
        if positions.size == 0 or np.any(positions >= n_sifted) or np.any(np.diff(positions) <= 0):
            channel.abort(ABORT_PARAMETER_MISMATCH)
            raise ProtocolViolation("invalid sample positions")
        e = compare_sample(key.bits, positions, sample.bits)
        if e > cfg.qber_abort_threshold:
            channel.send(QberResult(e, True))
            raise SessionAbort(
                ABORT_QBER_TOO_HIGH,
                f"estimated error rate {e:.4f} above threshold {cfg.qber_abort_threshold}",
                detail=e,
            )
        channel.send(QberResult(e, False))
        key = remove_positions(key, positions, e)

        responder = CascadeResponder(key.bits)
        parities_served = 0
        while True:
            msg = channel.expect(ShuffleSeed, CascadeParityReq, VerifyHash)
            if isinstance(msg, ShuffleSeed):
                responder.begin_pass(msg.pass_index, msg.seed)
            elif isinstance(msg, CascadeParityReq):
                bits = responder.parities(list(msg.ranges))
                parities_served += len(bits)
                channel.send(CascadeParityResp(tuple(bits)))
            else:
                my_digest = key_verification_hash(key.bits, cfg.verify_hash_bits)
                if msg.digest != my_digest:
                    channel.abort(ABORT_VERIFY_FAILED)
                    raise SessionAbort(
                        ABORT_VERIFY_FAILED, "reconciled keys disagree; keys discarded"
                    )
                channel.send(VerifyHash(my_digest))
                break

        pa = channel.expect(PaSeed)
        p_exp_measured = n_raw / cfg.pulses_per_session
        gain = GainInputs(
            p_exp=p_exp_measured, s_m=multiphoton_prob(cfg.source), e=0.0
        )
        cap = final_key_length(
            len(key), gain, parities_served,
            sample_disclosures=len(positions),
            verify_bits=cfg.verify_hash_bits,
            safety_margin=cfg.safety_margin_bits,
        )
        if pa.length > cap:
            channel.abort(ABORT_PARAMETER_MISMATCH)
            raise ProtocolViolation(
                f"peer requested {pa.length} secret bits above the leakage cap {cap}"
            )
        secret = SecretKey(
            bits=toeplitz_hash(key.bits, pa.length, pa.seed),
            session_id=cfg.session_id,
            gain_achieved=pa.length / cfg.pulses_per_session,
        )
        channel.send(Done())
        channel.expect(Done)
        report = SessionReport(
            role="alice",
            n_pulses=cfg.pulses_per_session,
            n_raw=n_raw,
            n_ambiguous=n_ambiguous,
            n_sifted=n_sifted,
            qber_estimate=e,
            corrections=-1,  # unknown to the reference side
            disclosed_parity_bits=parities_served,
            sample_disclosures=len(positions),
            final_length=pa.length,
            wall_time_s=time.monotonic() - start,
        )
        return secret, report


class BobSession:
    """Receiver role: announces detections and drives reconciliation."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg

    def run(self, channel) -> tuple[SecretKey, SessionReport]:
        cfg = self.cfg
        start = time.monotonic()
        channel.timeout = cfg.message_timeout
        rng = classical_rng(cfg)
        _hello_exchange(channel, cfg, ROLE_BOB)

        _, bob_log = run_quantum_phase(cfg)
        ann = announce_detections(bob_log)
        try:
            check_announcement(ann, cfg.pulses_per_session, cfg.ambiguous_fraction_limit)
        except SessionAbort as abort:
            channel.abort(abort.reason)
            raise
        channel.send(ann)
        n_raw = len(ann.indices)
        n_ambiguous = sum(ann.ambiguous)

        reply = channel.expect(SiftReply)
        slots = np.asarray(reply.positions, dtype=np.int64)
        announced = set(ann.indices)
        if slots.size:
            if np.any(np.diff(slots) <= 0) or not all(int(s) in announced for s in slots):
                raise ProtocolViolation("sift reply references unknown slots")
        try:
            bits = bob_bits_at(bob_log, slots)
        except ValueError as exc:
            raise ProtocolViolation(f"sift reply kept a discarded slot: {exc}") from exc
        key = SiftedKey(bits=bits, slot_indices=slots, session_id=cfg.session_id)
        n_sifted = len(key)
        sample_size = max(math.ceil(cfg.qber_sample_fraction * n_sifted), cfg.min_sample_bits)
        if n_sifted <= sample_size:
            channel.abort(ABORT_INSUFFICIENT_DATA)
            raise SessionAbort(
                ABORT_INSUFFICIENT_DATA,
                f"only {n_sifted} sifted bits; cannot estimate the error rate",
            )

        positions = choose_sample_positions(
            n_sifted, cfg.qber_sample_fraction, cfg.min_sample_bits, rng
        )
        channel.send(QberSample(
            positions=tuple(int(p) for p in positions),
            bits=tuple(int(b) for b in key.bits[positions]),
        ))
        result = channel.expect(QberResult)
        if result.abort or result.e > cfg.qber_abort_threshold:
            raise SessionAbort(
                ABORT_QBER_TOO_HIGH,
                f"estimated error rate {result.e:.4f} above threshold "
                f"{cfg.qber_abort_threshold}",
                detail=result.e,
            )
        e_sample = result.e
        key = remove_positions(key, positions, e_sample)

        # Block sizing uses the larger of the sampled and the model-predicted
        # rate: a 1 % sample of a few thousand bits is far too small to size
        # blocks on its own (it is frequently zero).
        e_sizing = max(e_sample, self._predicted_qber(), 0.5 / len(key))
        driver = CascadeDriver(key.bits, e_sizing, _RemoteCascadeLink(channel), rng)
        transcript = driver.run()
        corrected = driver.key

        digest = key_verification_hash(corrected, cfg.verify_hash_bits)
        channel.send(VerifyHash(digest))
        confirm = channel.expect(VerifyHash)
        if confirm.digest != digest:
            channel.abort(ABORT_VERIFY_FAILED)
            raise SessionAbort(ABORT_VERIFY_FAILED, "reconciled keys disagree; keys discarded")

        n = len(corrected)
        e_corrected = min(len(transcript.corrected_positions) / n, 0.4999) if n else 0.0
        p_exp_measured = n_raw / cfg.pulses_per_session
        gain = GainInputs(p_exp=p_exp_measured, s_m=multiphoton_prob(cfg.source), e=e_corrected)
        m = final_key_length(
            n, gain, transcript.disclosed_parity_bits,
            sample_disclosures=len(positions),
            verify_bits=cfg.verify_hash_bits,
            safety_margin=cfg.safety_margin_bits,
        )
        seed = rng.bytes(16)
        channel.send(PaSeed(m, seed))
        secret = SecretKey(
            bits=toeplitz_hash(corrected, m, seed),
            session_id=cfg.session_id,
            gain_achieved=m / cfg.pulses_per_session,
        )
        channel.expect(Done)
        channel.send(Done())
        report = SessionReport(
            role="bob",
            n_pulses=cfg.pulses_per_session,
            n_raw=n_raw,
            n_ambiguous=n_ambiguous,
            n_sifted=n_sifted,
            qber_estimate=e_sample,
            corrections=len(transcript.corrected_positions),
            disclosed_parity_bits=transcript.disclosed_parity_bits,
            sample_disclosures=len(positions),
            final_length=m,
            wall_time_s=time.monotonic() - start,
        )
        return secret, report

    def _predicted_qber(self) -> float:
        cfg = self.cfg
        dist = pulse_distribution(cfg.source)
        p_s = signal_detection_prob(
            dist.p1, dist.p2, cfg.link.transmission, cfg.link.link_efficiency
        )
        model = QberModel(alpha=cfg.alpha, p_dark=cfg.detector.any_dark_prob())
        e, _ = predict_qber(p_s, model)
        return min(e, 0.4999)


def run_in_memory(cfg: SessionConfig, timeout: float | None = None):
    """Run a full Alice/Bob exchange over an in-memory duplex.

    Returns ``(alice_result, bob_result, alice_channel, bob_channel)`` where
    each result is the ``(SecretKey, SessionReport)`` pair or the exception
    the role raised.  The channels expose their frame logs for audits.
    """
    import threading

    ch_a, ch_b = MemoryChannel.pair(timeout or cfg.message_timeout)
    results: dict[str, object] = {}

    def run_alice():
        try:
            results["alice"] = AliceSession(cfg).run(ch_a)
        except Exception as exc:  # surfaced to the caller
            results["alice"] = exc

    thread = threading.Thread(target=run_alice, daemon=True)
    thread.start()
    try:
        results["bob"] = BobSession(cfg).run(ch_b)
    except Exception as exc:
        results["bob"] = exc
    thread.join(timeout=timeout or cfg.message_timeout + 30)
    return results["alice"], results["bob"], ch_a, ch_b


# ---------------------------------------------------------------------------
# Debug transcripts


def alice_transcript_lines(log: AliceLog):
    """Line-oriented dump of the transmitted sequence: ``slot basis bit``."""
    for i, (bit, basis) in enumerate(zip(log.bits, log.bases)):
        yield f"slot {i} basis {int(basis)} bit {int(bit)}"


def sifted_transcript_lines(key: SiftedKey):
    """Line-oriented dump of a sifted key: ``slot basis bit`` (basis omitted as '-')."""
    for slot, bit in zip(key.slot_indices, key.bits):
        yield f"slot {int(slot)} basis - bit {int(bit)}"
