"""Fixed-point grids, canonically-signed-digit encoding, and addition-cost accounting.

This module is the cost model everything else is measured against: weights are
quantized onto a dyadic grid, each entry is expanded into signed power-of-two
digits with no two adjacent nonzeros (CSD), and a matrix-vector product is then
priced as one addition per extra nonzero digit in a row.  Shift counting
includes exponent-0 terms; that trivial-shift convention is the one that makes
the 2x2 worked example below cost exactly six shifts and four additions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FixedPointConfig",
    "CsdForm",
    "CostReport",
    "quantize_fixed",
    "quantize_with_overflow",
    "csd_encode",
    "csd_matrix_cost",
    "sqnr_db",
]

# Baseline grid used by the compression pipeline unless overridden: 10
# fractional bits keep quantization loss on small trained networks below
# measurement noise while staying cheap to encode.
DEFAULT_FRAC_BITS = 10
DEFAULT_INT_BITS = 6


@dataclass(frozen=True)
class FixedPointConfig:
    """Dyadic quantization grid with ``frac_bits`` fractional and ``int_bits`` magnitude bits."""

    frac_bits: int = DEFAULT_FRAC_BITS
    int_bits: int = DEFAULT_INT_BITS

    def __post_init__(self) -> None:
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be >= 0")
        if self.int_bits < 1:
            raise ValueError("int_bits must be >= 1")
        if self.frac_bits + self.int_bits > 62:
            raise ValueError("frac_bits + int_bits must fit a signed machine integer (<= 62)")

    @property
    def step(self) -> float:
        """Grid resolution 2**-frac_bits."""
        return 2.0 ** -self.frac_bits

    @property
    def max_scaled(self) -> int:
        """Largest grid index: values are n * step with |n| <= max_scaled."""
        return (1 << (self.frac_bits + self.int_bits)) - 1


@dataclass(frozen=True)
class CsdForm:
    """Signed-digit expansion ``sum(sign * 2**exponent)`` with CSD non-adjacency.

    Digits are stored with strictly decreasing exponents; no exponent repeats
    and no two digits sit on adjacent exponents.
    """

    digits: tuple[tuple[int, int], ...]

    @property
    def nonzero_count(self) -> int:
        return len(self.digits)

    def value(self) -> float:
        return math.fsum(sign * 2.0**exponent for exponent, sign in self.digits)


@dataclass(frozen=True)
class CostReport:
    """Shift/add tally for a matrix-vector product.

    ``shifts`` counts every nonzero signed power-of-two term (exponent 0
    included); ``adds`` counts additions and subtractions identically.
    """

    adds: int
    shifts: int

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.adds + other.adds, self.shifts + other.shifts)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round ties to even; the grid convention is ties away from zero.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_fixed(v, cfg: FixedPointConfig = FixedPointConfig()):
    """Quantize ``v`` (scalar or array) to the nearest grid multiple of ``2**-frac_bits``.

    Ties round away from zero.  Values with ``|v| >= 2**int_bits`` saturate to
    the largest grid magnitude; use :func:`quantize_with_overflow` to observe
    how often that happened.
    """
    q, _ = quantize_with_overflow(v, cfg)
    return q if isinstance(q, np.ndarray) and np.ndim(v) else float(q)


def quantize_with_overflow(v, cfg: FixedPointConfig = FixedPointConfig()):
    """Like :func:`quantize_fixed` but also returns the number of saturated entries."""
    x = np.asarray(v, dtype=float)
    scaled = _round_half_away(x * (1 << cfg.frac_bits))
    limit = cfg.max_scaled
    overflow = int(np.count_nonzero(np.abs(scaled) > limit))
    scaled = np.clip(scaled, -limit, limit)
    return scaled * cfg.step, overflow


def csd_encode(v: float, cfg: FixedPointConfig = FixedPointConfig()) -> CsdForm:
    """Encode a grid value as its canonical (minimal, non-adjacent) signed-digit form.

    ``v`` must already lie on the quantization grid of ``cfg``; zero encodes to
    an empty digit list.
    """
    scaled = v * (1 << cfg.frac_bits)
    n = int(round(scaled))
    if n != scaled:
        raise ValueError(f"{v!r} is not on the 2**-{cfg.frac_bits} grid")
    digits: list[tuple[int, int]] = []
    e = -cfg.frac_bits
    # Non-adjacent form: an odd remainder takes digit 2 - (n mod 4), which
    # forces the next bit even and yields the unique minimal-weight CSD.
    while n != 0:
        if n & 1:
            d = 2 - (n & 3)
            digits.append((e, d))
            n -= d
        n >>= 1
        e += 1
    digits.reverse()
    return CsdForm(tuple(digits))


def csd_matrix_cost(W, cfg: FixedPointConfig = FixedPointConfig()) -> CostReport:
    """Price ``W @ x`` in the CSD baseline: quantize, expand digits, count per row.

    shifts = total nonzero digits over all entries; adds = per output row,
    one fewer than the row's digit count (a row with <= 1 digit costs nothing).
    """
    Wq = np.atleast_2d(np.asarray(quantize_fixed(W, cfg), dtype=float))
    adds = 0
    shifts = 0
    for row in Wq:
        row_digits = sum(csd_encode(x, cfg).nonzero_count for x in row)
        shifts += row_digits
        adds += max(0, row_digits - 1)
    return CostReport(adds=adds, shifts=shifts)


def sqnr_db(W, What) -> float:
    """Signal-to-quantization-noise ratio ``10*log10(||W||^2 / ||W - What||^2)`` in dB.

    Frobenius norms over the whole matrix.  Returns ``math.inf`` for an exact
    match; raises for an all-zero reference (the ratio is undefined).
    """
    W = np.asarray(W, dtype=float)
    What = np.asarray(What, dtype=float)
    if W.shape != What.shape:
        raise ValueError(f"shape mismatch: {W.shape} vs {What.shape}")
    signal = float(np.sum(W * W))
    if signal == 0.0:
        raise ValueError("SQNR undefined for an all-zero reference matrix")
    noise = float(np.sum((W - What) ** 2))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / noise)
