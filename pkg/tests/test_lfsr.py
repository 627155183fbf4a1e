"""Register properties: maximal period, m-sequence statistics, equivalence
of the bit-by-bit step and the vectorised generator."""

import numpy as np
import pytest

from bb84sps.lfsr import PERIOD, FibonacciLfsr, alice_bit_stream, full_period_bits, next_bit


def shift_oracle(seed: int, count: int) -> list[int]:
    """Independent bit-list model of the register: emit bit 0, shift,
    feed back bit0 XOR bit3 into the top."""
    reg = [(seed >> k) & 1 for k in range(20)]
    out = []
    for _ in range(count):
        out.append(reg[0])
        feedback = reg[0] ^ reg[3]
        reg = reg[1:] + [feedback]
    return out


def test_step_matches_shift_oracle():
    reg = FibonacciLfsr(0x9Af31)
    got = []
    for _ in range(500):
        bit, reg = next_bit(reg)
        got.append(bit)
    assert got == shift_oracle(0x9AF31, 500)


def test_first_twenty_bits_are_seed_in_shift_order():
    bits = full_period_bits(0x00001)
    assert list(bits[:20]) == [1] + [0] * 19
    seed = 0xB1E55
    bits = full_period_bits(seed)
    assert list(bits[:20]) == [(seed >> k) & 1 for k in range(20)]


def test_vectorised_generator_matches_step():
    seed = 0x7ACE5
    bits = full_period_bits(seed)
    reg = FibonacciLfsr(seed)
    for i in range(2000):
        bit, reg = next_bit(reg)
        assert bit == bits[i]


def test_full_cycle_returns_to_seed_after_exactly_one_period():
    reg = FibonacciLfsr(0x12345)
    seen_early_return = False
    for step in range(PERIOD):
        _, reg = next_bit(reg)
        if reg.state == 0x12345 and step != PERIOD - 1:
            seen_early_return = True
    assert reg.state == 0x12345
    assert not seen_early_return


def test_no_smaller_period_divisor():
    bits = full_period_bits(0x00001)
    for prime in (3, 5, 11, 31, 41):
        assert not np.array_equal(bits, np.roll(bits, PERIOD // prime))


def test_balance_exact():
    assert int(full_period_bits(0x5A5A5).sum()) == 2**19


def test_run_length_statistics():
    # Combined (zeros and ones) runs of length k occur 2^(19-k) times for
    # k <= 19, plus the single run of 20 ones; counted circularly.
    bits = full_period_bits(0x31337)
    starts = np.flatnonzero(bits != np.roll(bits, 1))
    lengths = np.diff(np.append(starts, starts[0] + PERIOD))
    counts = np.bincount(lengths)
    for k in range(1, 20):
        assert counts[k] == 2 ** (19 - k), f"runs of length {k}"
    assert counts[20] == 1


def test_distinct_seeds_are_cyclic_shifts():
    a = full_period_bits(0x00001)
    b = full_period_bits(0x400CD)
    # The sliding 20-bit windows of the output are the register states, so
    # the other seed appears as a window at its phase offset.
    windows = np.lib.stride_tricks.sliding_window_view(
        np.concatenate([a, a[:19]]), 20
    )
    target = np.array([(0x400CD >> k) & 1 for k in range(20)], dtype=np.uint8)
    offsets = np.flatnonzero((windows == target).all(axis=1))
    assert len(offsets) == 1
    shift = int(offsets[0])
    assert np.array_equal(np.roll(a, -shift)[:4096], b[:4096])


def test_reproducibility_and_stream_pairing():
    bits1, bases1 = alice_bit_stream(0x5A5A5, 0x2B3C4)
    bits2, bases2 = alice_bit_stream(0x5A5A5, 0x2B3C4)
    assert np.array_equal(bits1, bits2) and np.array_equal(bases1, bases2)
    assert len(bits1) == len(bases1) == PERIOD
    same_bits, same_bases = alice_bit_stream(0x11111, 0x11111)
    assert np.array_equal(same_bits, same_bases)


def test_zero_and_out_of_range_seeds_rejected():
    with pytest.raises(ValueError):
        FibonacciLfsr(0)
    with pytest.raises(ValueError):
        FibonacciLfsr(1 << 20)
    with pytest.raises(ValueError):
        full_period_bits(0)
