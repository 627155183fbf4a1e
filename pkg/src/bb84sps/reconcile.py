"""Error correction, leakage accounting, and privacy amplification.

Cascade corrects the receiver's sifted key against the transmitter's by
comparing block parities over four passes.  Pass 1 uses blocks of
``k1 = ceil(0.73 / e_estimate)`` bits; each later pass doubles the block
size and reshuffles the key with an exchanged permutation seed.  An
odd-parity block is searched bisectively (one disclosed parity per level)
to locate and flip one error, and every correction re-checks the containing
blocks of the other passes, so error pairs hidden in earlier passes are
driven out.  Every parity value the reference side discloses counts one bit
of leakage; parities that the other side can infer (the last block of a
pass once the total parity is known, and the second half of every
bisection) are never requested.

The secure gain per emitted pulse after error correction and privacy
amplification, under individual photon-number-splitting attacks, is

    G = 1/2 * p_exp * { beta * (1 - log2(1 + 4*e' - 4*e'^2)) - 1.1 * h(e) }

with ``beta = (p_exp - s_m) / p_exp`` the fraction of detections that
cannot have leaked through multiphoton pulses, ``e' = e / beta`` the error
rate referred to those detections, and ``h`` the binary entropy.  The 1.1
factor models the practical reconciliation cost relative to the Shannon
limit.  The interior brace is clamped at zero: once multiphoton leakage or
errors eat the margin there is no secure rate.

Privacy amplification compresses the reconciled key with a seeded binary
Toeplitz matrix (a universal hash family); the output length subtracts the
actually-disclosed reconciliation bits, the error-sample disclosure, the
verification-hash length, and a finite-size safety margin from the
compressed size.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .optics import QberModel, predict_qber, signal_detection_prob
from .sources import SourceModel, pulse_distribution

CASCADE_PASSES = 4
CASCADE_BLOCK_COEFF = 0.73
RECONCILIATION_OVERHEAD = 1.1
VERIFY_HASH_BITS = 64
SAFETY_MARGIN_BITS = 30


def binary_entropy(e: float) -> float:
    """Binary entropy h(e) in bits; h(0) = h(1) = 0."""
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {e}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


@dataclass(frozen=True)
class GainInputs:
    """Inputs to the secure-gain formula and the compression sizing."""

    p_exp: float  # per-slot detection probability
    s_m: float    # multiphoton emission probability per pulse
    e: float      # error rate of the sifted data

    def __post_init__(self):
        if not 0.0 < self.p_exp <= 1.0:
            raise ValueError(f"p_exp must be in (0, 1], got {self.p_exp}")
        if self.s_m < 0.0:
            raise ValueError(f"s_m must be >= 0, got {self.s_m}")
        if not 0.0 <= self.e < 0.5:
            raise ValueError(f"error rate must be in [0, 0.5), got {self.e}")


def compression_fraction(g: GainInputs) -> float:
    """Secret fraction beta * (1 - log2(1 + 4e' - 4e'^2)) kept after hashing.

    Returns 0 when every detection may stem from a multiphoton pulse
    (``s_m >= p_exp``) or the referred error rate ``e'`` reaches 1/2.
    """
    if g.s_m >= g.p_exp:
        return 0.0
    beta = (g.p_exp - g.s_m) / g.p_exp
    e_ref = g.e / beta
    if e_ref >= 0.5:
        return 0.0
    kept = beta * (1.0 - math.log2(1.0 + 4.0 * e_ref - 4.0 * e_ref**2))
    return max(kept, 0.0)


def secure_gain(g: GainInputs) -> float:
    """Expected secure bits per emitted pulse, clamped at zero."""
    interior = compression_fraction(g) - RECONCILIATION_OVERHEAD * binary_entropy(g.e)
    return max(0.5 * g.p_exp * interior, 0.0)


def gain_at(
    source: SourceModel,
    transmission: float,
    link_efficiency: float,
    model: QberModel,
) -> float:
    """Analytic secure gain of a configured source at a given transmission.

    Detection and error probabilities come from the aggregate receiver
    model; no sampling is involved.  Returns 0 in the insecure regime
    (including error rates at or above 1/2).
    """
    dist = pulse_distribution(source)
    p_s = signal_detection_prob(dist.p1, dist.p2, transmission, link_efficiency)
    e, p_exp = predict_qber(p_s, model)
    if e >= 0.5:
        return 0.0
    return secure_gain(GainInputs(p_exp=p_exp, s_m=dist.p2, e=e))


def optimize_mu_wcp(
    transmission: float,
    link_efficiency: float,
    model: QberModel,
    mu_max: float = 0.5,
    rel_tol: float = 1e-4,
) -> tuple[float | None, float]:
    """Best Poissonian-source intensity at a given channel transmission.

    Scans mu over (0, mu_max] and refines the best bracket by golden-section
    search to relative tolerance ``rel_tol``.  Returns ``(mu_opt, gain)``;
    ``mu_opt`` is None when no intensity achieves a positive gain.
    """
    if transmission <= 0:
        raise ValueError("transmission must be positive")

    def gain_of(mu: float) -> float:
        return gain_at(SourceModel.wcp(mu), transmission, link_efficiency, model)

    grid = np.linspace(mu_max / 512, mu_max, 512)
    gains = [gain_of(float(m)) for m in grid]
    best = int(np.argmax(gains))
    if gains[best] <= 0.0:
        return None, 0.0

    lo = float(grid[best - 1]) if best > 0 else float(grid[0]) / 2.0
    hi = float(grid[best + 1]) if best + 1 < len(grid) else float(grid[best])
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = gain_of(c), gain_of(d)
    while (b - a) > rel_tol * max(abs(b), 1e-12):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = gain_of(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = gain_of(d)
    mu_opt = (a + b) / 2.0
    g_opt = gain_of(mu_opt)
    # The scan grid is part of the candidate set; never return less than it.
    if gains[best] > g_opt:
        mu_opt, g_opt = float(grid[best]), gains[best]
    return mu_opt, g_opt


# ---------------------------------------------------------------------------
# Cascade


@dataclass
class ReconciliationTranscript:
    """Audit record of one reconciliation run."""

    disclosed_parity_bits: int
    passes: list[tuple[int, int | None]] = field(default_factory=list)
    corrected_positions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.corrected_positions)) != len(self.corrected_positions):
            raise ValueError("corrected positions must be distinct")

    def export_lines(self) -> list[str]:
        """Line-oriented debug dump (same style as session transcripts)."""
        lines = [f"disclosed {self.disclosed_parity_bits}"]
        for i, (block, seed) in enumerate(self.passes, start=1):
            seed_txt = "-" if seed is None else str(seed)
            lines.append(f"pass {i} block {block} seed {seed_txt}")
        for pos in self.corrected_positions:
            lines.append(f"corrected {pos}")
        return lines


def _permutation(seed: int, n: int) -> np.ndarray:
    """Deterministic permutation of range(n) shared by both parties."""
    return np.random.Generator(np.random.PCG64(seed)).permutation(n)


class CascadeResponder:
    """Reference-key side of Cascade: answers parity queries, never mutates.

    Per pass it holds a prefix-parity table of the permuted key so each
    query costs O(1); ``parities_served`` counts every disclosed bit.
    """

    def __init__(self, key: np.ndarray):
        self._key = np.asarray(key, dtype=np.uint8)
        self._prefix: dict[int, np.ndarray] = {}
        self.parities_served = 0

    def begin_pass(self, pass_index: int, seed: int | None) -> None:
        view = self._key if seed is None else self._key[_permutation(seed, len(self._key))]
        prefix = np.zeros(len(view) + 1, dtype=np.uint8)
        prefix[1:] = np.cumsum(view, dtype=np.int64) & 1
        self._prefix[pass_index] = prefix

    def parities(self, ranges: list[tuple[int, int, int]]) -> list[int]:
        out = []
        for pass_index, lo, hi in ranges:
            prefix = self._prefix[pass_index]
            out.append(int(prefix[hi] ^ prefix[lo]))
        self.parities_served += len(out)
        return out


class LocalCascadeLink:
    """Drives a :class:`CascadeResponder` in-process (no wire)."""

    def __init__(self, responder: CascadeResponder):
        self._responder = responder

    def begin_pass(self, pass_index: int, seed: int | None) -> None:
        self._responder.begin_pass(pass_index, seed)

    def query(self, ranges: list[tuple[int, int, int]]) -> list[int]:
        return self._responder.parities(ranges)


class CascadeDriver:
    """Noisy-key side of Cascade: locates and flips its own errors.

    ``link`` abstracts the reference side (local responder or remote peer);
    the driver is the only party that requests parities, so counting the
    bits in every reply gives the exact leakage.
    """

    def __init__(
        self,
        key: np.ndarray,
        e_estimate: float,
        link,
        rng: np.random.Generator | None = None,
    ):
        self.key = np.array(key, dtype=np.uint8)
        n = len(self.key)
        if n == 0:
            raise ValueError("cannot reconcile an empty key")
        if e_estimate <= 0:
            e_estimate = 0.5 / n
        self.block_size_1 = min(math.ceil(CASCADE_BLOCK_COEFF / e_estimate), n)
        self.link = link
        self.rng = rng if rng is not None else np.random.default_rng()
        self.disclosed = 0
        self.corrected: list[int] = []
        self.passes: list[tuple[int, int | None]] = []
        # Per-pass state, filled as passes begin.
        self._perm: dict[int, np.ndarray] = {}
        self._inv: dict[int, np.ndarray] = {}
        self._view: dict[int, np.ndarray] = {}
        self._block: dict[int, int] = {}
        self._alice_parity: dict[int, dict[int, int]] = {}
        self._total_parity: int | None = None

    def run(self) -> ReconciliationTranscript:
        n = len(self.key)
        block = self.block_size_1
        for p in range(1, CASCADE_PASSES + 1):
            seed = None if p == 1 else int(self.rng.integers(0, 2**63))
            self._begin_pass(p, min(block, n), seed)
            self._scan_pass(p)
            block *= 2
        return ReconciliationTranscript(
            disclosed_parity_bits=self.disclosed,
            passes=list(self.passes),
            corrected_positions=list(self.corrected),
        )

    # -- pass machinery

    def _begin_pass(self, p: int, block: int, seed: int | None) -> None:
        n = len(self.key)
        self.link.begin_pass(p, seed)
        self.passes.append((block, seed))
        if seed is None:
            perm = np.arange(n)
            inv = perm
        else:
            perm = _permutation(seed, n)
            inv = np.argsort(perm)
        self._perm[p] = perm
        self._inv[p] = inv
        self._view[p] = self.key[perm].copy()
        self._block[p] = block
        self._alice_parity[p] = {}

    def _blocks(self, p: int) -> list[tuple[int, int]]:
        n = len(self.key)
        k = self._block[p]
        return [(lo, min(lo + k, n)) for lo in range(0, n, k)]

    def _scan_pass(self, p: int) -> None:
        blocks = self._blocks(p)
        n_blocks = len(blocks)
        # The last block of a later pass is inferable: the total parity is
        # known after pass 1, and a pass's block parities XOR to it.
        request = blocks if self._total_parity is None else blocks[:-1]
        got = self._query([(p, lo, hi) for lo, hi in request])
        for b, parity in enumerate(got):
            self._alice_parity[p][b] = parity
        if self._total_parity is None:
            self._total_parity = int(np.bitwise_xor.reduce(np.array(got, dtype=np.uint8))) if got else 0
        elif n_blocks:
            inferred = self._total_parity
            for parity in got:
                inferred ^= parity
            self._alice_parity[p][n_blocks - 1] = inferred
        for b in range(n_blocks):
            self._resolve_block(p, b)

    def _query(self, ranges: list[tuple[int, int, int]]) -> list[int]:
        if not ranges:
            return []
        out = self.link.query(ranges)
        self.disclosed += len(out)
        return out

    def _bob_parity(self, p: int, lo: int, hi: int) -> int:
        return int(self._view[p][lo:hi].sum() & 1)

    def _resolve_block(self, p: int, b: int) -> None:
        """Binary-search one error out of block b of pass p if its parity is odd,
        then cascade the correction through all passes until quiescent."""
        pending = [(p, b)]
        while pending:
            q, c = pending.pop()
            alice = self._alice_parity[q].get(c)
            if alice is None:
                continue
            k = self._block[q]
            lo, hi = c * k, min((c + 1) * k, len(self.key))
            if self._bob_parity(q, lo, hi) == alice:
                continue
            flipped = self._bisect(q, lo, hi)
            pending.extend(self._containing_blocks(flipped))

    def _bisect(self, p: int, lo: int, hi: int) -> int:
        """Locate the error inside an odd block; returns the original index flipped."""
        while hi - lo > 1:
            mid = lo + (hi - lo + 1) // 2
            (alice_left,) = self._query([(p, lo, mid)])
            if self._bob_parity(p, lo, mid) != alice_left:
                hi = mid
            else:
                lo = mid
        original = int(self._perm[p][lo])
        self._flip(original)
        return original

    def _flip(self, original: int) -> None:
        self.key[original] ^= 1
        self.corrected.append(original)
        for q in self._view:
            self._view[q][self._inv[q][original]] ^= 1

    def _containing_blocks(self, original: int) -> list[tuple[int, int]]:
        hits = []
        for q in self._view:
            pos = int(self._inv[q][original])
            hits.append((q, pos // self._block[q]))
        return hits


def cascade(
    alice_key: np.ndarray,
    bob_key: np.ndarray,
    e_estimate: float,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ReconciliationTranscript]:
    """Run both Cascade roles in-process; returns (corrected key, transcript)."""
    a = np.asarray(alice_key, dtype=np.uint8)
    b = np.asarray(bob_key, dtype=np.uint8)
    if len(a) != len(b):
        raise ValueError("keys must have equal length")
    responder = CascadeResponder(a)
    driver = CascadeDriver(b, e_estimate, LocalCascadeLink(responder), rng)
    transcript = driver.run()
    assert responder.parities_served == transcript.disclosed_parity_bits
    return driver.key, transcript


# ---------------------------------------------------------------------------
# Verification and privacy amplification


def key_verification_hash(bits: np.ndarray, n_bits: int = VERIFY_HASH_BITS) -> bytes:
    """Short deterministic digest both parties exchange to confirm equality."""
    if n_bits % 8:
        raise ValueError("hash size must be a whole number of bytes")
    payload = len(bits).to_bytes(8, "big") + np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()
    return hashlib.blake2b(payload, digest_size=n_bits // 8).digest()


def _expand_seed_bits(seed: bytes, n_bits: int) -> np.ndarray:
    """Deterministic, platform-independent bit expansion of a seed."""
    blocks = []
    need = (n_bits + 7) // 8
    counter = 0
    while need > 0:
        digest = hashlib.sha256(seed + counter.to_bytes(8, "big")).digest()
        blocks.append(digest)
        need -= len(digest)
        counter += 1
    raw = b"".join(blocks)
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n_bits]


def toeplitz_hash(bits: np.ndarray, m: int, seed: bytes) -> np.ndarray:
    """Compress ``bits`` to ``m`` bits with a seeded binary Toeplitz matrix.

    The matrix T (shape m x n) is defined by n + m - 1 seed-derived bits r
    via ``T[i, j] = r[i - j + n - 1]``; the product T k mod 2 is evaluated
    as a convolution.
    """
    key = np.asarray(bits, dtype=np.int64)
    n = len(key)
    if m < 0 or m > n:
        raise ValueError(f"output length must be in [0, {n}], got {m}")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    r = _expand_seed_bits(seed, n + m - 1).astype(np.int64)
    conv = np.convolve(r, key)
    return (conv[n - 1 : n - 1 + m] & 1).astype(np.uint8)


@dataclass(frozen=True)
class SecretKey:
    """Distilled secret key with the realized per-pulse rate."""

    bits: np.ndarray
    session_id: int
    gain_achieved: float

    def __post_init__(self):
        if len(self.bits) < 0:  # pragma: no cover (len is never negative)
            raise ValueError("negative key length")

    def to_hex(self) -> str:
        if len(self.bits) == 0:
            return ""
        return np.packbits(np.asarray(self.bits, dtype=np.uint8)).tobytes().hex()


def final_key_length(
    n: int,
    g: GainInputs,
    disclosed_parity_bits: int,
    sample_disclosures: int = 0,
    verify_bits: int = VERIFY_HASH_BITS,
    safety_margin: int = SAFETY_MARGIN_BITS,
) -> int:
    """Secret length after compression and leakage subtraction, clamped >= 0.

    The compression fraction applies to the reconciled length ``n``;
    every disclosed quantity (reconciliation parities, error-sample bits,
    the verification digest) and the finite-size margin are subtracted from
    the compressed size.
    """
    if n < 0:
        raise ValueError("key length must be >= 0")
    kept = math.floor(
        n * compression_fraction(g)
        - disclosed_parity_bits
        - sample_disclosures
        - verify_bits
        - safety_margin
    )
    return max(kept, 0)


def privacy_amplify(
    key: np.ndarray,
    transcript: ReconciliationTranscript,
    g: GainInputs,
    seed: bytes,
    session_id: int = 0,
    session_pulses: int | None = None,
    sample_disclosures: int = 0,
    verify_bits: int = VERIFY_HASH_BITS,
    safety_margin: int = SAFETY_MARGIN_BITS,
) -> SecretKey:
    """Hash a verified-equal reconciled key down to its secret length.

    Both parties call this with identical inputs (same exchanged seed) and
    obtain identical keys.  When leakage exceeds the extractable secrecy
    the result is an empty key.
    """
    m = final_key_length(
        len(key), g, transcript.disclosed_parity_bits,
        sample_disclosures=sample_disclosures,
        verify_bits=verify_bits,
        safety_margin=safety_margin,
    )
    bits = toeplitz_hash(key, m, seed)
    gain = float("nan") if session_pulses is None else m / session_pulses
    return SecretKey(bits=bits, session_id=session_id, gain_achieved=gain)
