"""Deterministic pseudo-random bit generation for the transmitter.

Two maximal-length 20-bit Fibonacci linear feedback shift registers drive
the four-state encoding: register A supplies the data bit, register B the
basis bit.  The feedback polynomial is the primitive trinomial

    x^20 + x^3 + 1

so every nonzero seed walks the full cycle of 2**20 - 1 = 1048575 states,
which is also the length of one transmission session.

The register emits its least significant bit first, so the first 20 output
bits equal the seed read out in shift order.  The equivalent output-sequence
recurrence is ``s[n] = s[n-17] ^ s[n-20]``, which the vectorised generator
below uses; it is exercised against the bit-by-bit step in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

REGISTER_WIDTH = 20
PERIOD = 2**REGISTER_WIDTH - 1  # 1048575
_FEEDBACK_SHIFT = 3  # exponent of the middle term of the feedback trinomial


@dataclass(frozen=True)
class FibonacciLfsr:
    """Immutable 20-bit register state; stepping returns a new value."""

    state: int

    def __post_init__(self):
        if not 0 < self.state < 2**REGISTER_WIDTH:
            raise ValueError(
                f"register state must be a nonzero {REGISTER_WIDTH}-bit value, "
                f"got {self.state:#x}"
            )

    def step(self) -> tuple[int, "FibonacciLfsr"]:
        out = self.state & 1
        feedback = (self.state ^ (self.state >> _FEEDBACK_SHIFT)) & 1
        new_state = (self.state >> 1) | (feedback << (REGISTER_WIDTH - 1))
        return out, FibonacciLfsr(new_state)


def next_bit(reg: FibonacciLfsr) -> tuple[int, FibonacciLfsr]:
    """Emit the register's output bit and shift in the feedback bit."""
    return reg.step()


@lru_cache(maxsize=8)
def full_period_bits(seed: int) -> np.ndarray:
    """One full period (1048575 bits) of output from ``seed``, as uint8.

    The result is cached and marked read-only; sessions reuse the same
    register pattern, so this is computed once per seed per process.
    """
    if not 0 < seed < 2**REGISTER_WIDTH:
        raise ValueError(f"seed must be a nonzero {REGISTER_WIDTH}-bit value")
    bits = np.empty(PERIOD, dtype=np.uint8)
    for k in range(REGISTER_WIDTH):
        bits[k] = (seed >> k) & 1
    # s[n] = s[n-17] ^ s[n-20]; fill in chunks no wider than the short lag.
    lag_short = REGISTER_WIDTH - _FEEDBACK_SHIFT
    i = REGISTER_WIDTH
    while i < PERIOD:
        j = min(i + lag_short, PERIOD)
        np.bitwise_xor(
            bits[i - lag_short : j - lag_short],
            bits[i - REGISTER_WIDTH : j - REGISTER_WIDTH],
            out=bits[i:j],
        )
        i = j
    bits.setflags(write=False)
    return bits


def alice_bit_stream(seed_a: int, seed_b: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-session (data bit, basis bit) streams from the two registers.

    Pair ``i`` of the session is ``(bits[i], bases[i])``; both arrays have
    length 1048575 and are read-only views of the cached register output.
    """
    return full_period_bits(seed_a), full_period_bits(seed_b)
