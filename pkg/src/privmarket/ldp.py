"""One-time RAPPOR encoding and statistical frequency recovery.

A respondent's single pick among n choices becomes a one-hot bit vector.
Each bit then plays an independent randomized-response game with flip
probability f: the true bit survives with probability 1 - f, otherwise it
is replaced by a fair coin (1 with probability f/2, 0 with f/2). No party
ever needs the un-noised vector; the aggregate per-position expectation
t*(1 - f) + N*f/2 is inverted by `estimate_frequencies` to recover the
choice histogram.

This is the basic one-time variant of RAPPOR (Erlingsson et al., CCS 2014)
applied directly to per-choice bits, without Bloom-filter encoding or a
second instantaneous randomization round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class QuerySpec:
    """An ordered set of survey choice labels."""

    choices: tuple[str, ...]

    def __init__(self, choices: Sequence[str]):
        labels = tuple(choices)
        if len(labels) < 2:
            raise ValueError("a query needs at least 2 choices")
        if len(set(labels)) != len(labels):
            raise ValueError("choice labels must be pairwise distinct")
        if not all(isinstance(c, str) for c in labels):
            raise ValueError("choice labels must be strings")
        object.__setattr__(self, "choices", labels)

    @property
    def n(self) -> int:
        return len(self.choices)


@dataclass(frozen=True)
class PrivacyParams:
    """Per-bit randomization probability f in [0, 1).

    f = 1 is rejected: the estimator divides by 1 - f. f = 0 means no
    randomization at all (useful as a correctness oracle).
    """

    f: float = 0.5

    def __post_init__(self):
        f = float(self.f)
        if not (0.0 <= f < 1.0):
            raise ValueError(f"flip probability must satisfy 0 <= f < 1, got {self.f}")
        object.__setattr__(self, "f", f)


@dataclass(frozen=True)
class ResponseVector:
    """A bit vector over the query's choices.

    Freshly encoded vectors are one-hot; randomized vectors generally are
    not. Instances are immutable and safe to share across threads.
    """

    bits: tuple[int, ...]

    def __init__(self, bits: Sequence[int]):
        vals = tuple(int(b) for b in bits)
        if not vals:
            raise ValueError("response vector must not be empty")
        if any(b not in (0, 1) for b in vals):
            raise ValueError("response bits must be 0 or 1")
        object.__setattr__(self, "bits", vals)

    @property
    def n(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class BitCounts:
    """Per-position counts of set bits over a batch of reports.

    Entries are real-valued so that exact expected counts (which are not
    integers in general) can be fed straight into the estimator; counts
    produced by `accumulate_counts` are whole numbers.
    """

    ones_per_position: tuple[float, ...]
    report_count: int

    def __init__(self, ones_per_position: Sequence[float], report_count: int):
        ones = tuple(float(v) for v in ones_per_position)
        count = int(report_count)
        if count < 0:
            raise ValueError("report count must be non-negative")
        if any(v < 0 or v > count for v in ones):
            raise ValueError("per-position counts must lie in [0, report_count]")
        object.__setattr__(self, "ones_per_position", ones)
        object.__setattr__(self, "report_count", count)


@dataclass(frozen=True)
class FrequencyEstimate:
    """De-noised per-choice counts recovered from randomized reports.

    raw_estimates may be negative (sampling noise around small true
    counts); clamped_estimates floor them at zero for display purposes.
    Clamping biases the estimate, so analysis should prefer the raw values.
    """

    raw_estimates: tuple[float, ...]
    clamped_estimates: tuple[float, ...]
    params: PrivacyParams
    report_count: int


def encode_one_hot(choice_index: int, n: int) -> ResponseVector:
    """Build the pre-randomization vector for a single choice."""
    if n < 2:
        raise ValueError(f"need at least 2 choices, got n={n}")
    if not (0 <= choice_index < n):
        raise ValueError(f"choice index {choice_index} out of range for n={n}")
    bits = [0] * n
    bits[choice_index] = 1
    return ResponseVector(bits)


def randomize_response(
    rv: ResponseVector, params: PrivacyParams, rng: np.random.Generator
) -> ResponseVector:
    """Apply the per-bit randomized-response game to a vector.

    Each output bit independently copies the input with probability 1 - f
    and is otherwise a fair coin. Consumes exactly one length-n uniform
    draw from `rng` (callers relying on stream alignment can count on
    that), so identical (rv, f, seed) always yields identical output.

    The input vector is not modified.
    """
    f = params.f
    u = rng.random(rv.n)
    bits = np.asarray(rv.bits, dtype=np.uint8)
    # u < f/2 -> 1, f/2 <= u < f -> 0, u >= f -> copy
    out = np.where(u < f / 2.0, 1, np.where(u < f, 0, bits))
    return ResponseVector(tuple(int(b) for b in out))


def accumulate_counts(reports: Iterable[ResponseVector]) -> BitCounts:
    """Sum reported bits per position. All reports must share one length."""
    batch = list(reports)
    if not batch:
        raise ValueError("cannot accumulate an empty collection of reports")
    n = batch[0].n
    if any(rv.n != n for rv in batch):
        raise ValueError("reports have mixed lengths")
    totals = np.zeros(n, dtype=np.int64)
    for rv in batch:
        totals += np.asarray(rv.bits, dtype=np.int64)
    return BitCounts(tuple(int(v) for v in totals), len(batch))


def estimate_frequencies(counts: BitCounts, params: PrivacyParams) -> FrequencyEstimate:
    """Invert the randomization channel to estimate true per-choice counts.

    For each position j the unbiased estimate is
    (ones[j] - N*f/2) / (1 - f): the expected count of a position with t
    true ones is t*(1 - f) + N*f/2.
    """
    f = params.f
    ones = np.asarray(counts.ones_per_position, dtype=np.float64)
    raw = (ones - counts.report_count * f / 2.0) / (1.0 - f)
    clamped = np.maximum(raw, 0.0)
    return FrequencyEstimate(
        raw_estimates=tuple(float(v) for v in raw),
        clamped_estimates=tuple(float(v) for v in clamped),
        params=params,
        report_count=counts.report_count,
    )


def epsilon_of(params: PrivacyParams, hamming_distance: int = 2) -> float:
    """Differential-privacy budget for inputs differing in `hamming_distance` bits.

    Per flipped input bit the worst-case likelihood ratio is
    (1 - f/2) / (f/2), so epsilon = d * ln((1 - f/2) / (f/2)). One-hot
    inputs differ in exactly 2 positions, hence the default d = 2.

    f = 0 provides no privacy; the sentinel math.inf is returned.
    """
    if hamming_distance < 1:
        raise ValueError("hamming distance must be at least 1")
    f = params.f
    if f == 0.0:
        return math.inf
    return hamming_distance * math.log((1.0 - f / 2.0) / (f / 2.0))
