"""The per-sample cost model: ``T(u) = |u| * sum_i (c_i + d_i)``.

``c_i`` is the compute time of op ``i`` and ``d_i`` its fixed launch overhead.
Arithmetic is done on ``Fraction`` so decimal inputs give exact answers.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import NamedTuple, Sequence

from .errors import InputError


def exact(x) -> Fraction:
    """Exact rational for ints and Fractions; floats go through their shortest repr."""
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class LatencyModel:
    compute: tuple[Fraction, ...]     # c_i, seconds
    overhead: tuple[Fraction, ...]    # d_i, seconds
    length: int = 24000               # |u|, samples

    def __post_init__(self):
        object.__setattr__(self, "compute", tuple(exact(c) for c in self.compute))
        object.__setattr__(self, "overhead", tuple(exact(d) for d in self.overhead))
        if len(self.compute) != len(self.overhead):
            raise InputError("compute and overhead lists must have one entry per op")
        if not self.compute:
            raise InputError("the model needs at least one op")
        if any(v < 0 for v in self.compute + self.overhead):
            raise InputError("op times must be >= 0")
        if self.length < 1:
            raise InputError("target length must be >= 1")

    @classmethod
    def uniform(cls, n_ops: int, compute=0, overhead=Fraction(5, 10 ** 6), length=24000):
        if n_ops < 1:
            raise InputError("N must be >= 1")
        return cls((exact(compute),) * n_ops, (exact(overhead),) * n_ops, length)

    @property
    def n_ops(self) -> int:
        return len(self.compute)


class LatencyEstimate(NamedTuple):
    seconds: Fraction             # T(u)
    samples_per_sec: Fraction
    overhead_bound: Fraction | None   # 1 / (N * mean d), None when overhead is zero
    binding: str                  # "overhead" or "compute", whichever sum is larger


def estimate_latency(lm: LatencyModel) -> LatencyEstimate:
    per_sample = sum(lm.compute) + sum(lm.overhead)
    total = lm.length * per_sample
    rate = Fraction(lm.length) / total if total else None
    d_sum = sum(lm.overhead)
    bound = 1 / d_sum if d_sum else None    # N * mean(d) == sum(d)
    binding = "overhead" if d_sum >= sum(lm.compute) else "compute"
    return LatencyEstimate(total, rate, bound, binding)


class Bandwidth(NamedTuple):
    bytes_per_sec: Fraction

    @property
    def gb_per_sec(self) -> Fraction:
        return self.bytes_per_sec / 10 ** 9


def estimate_bandwidth(param_count, sample_rate, bytes_per_param) -> Bandwidth:
    """Memory traffic if every parameter is read once per generated sample."""
    vals = [exact(v) for v in (param_count, sample_rate, bytes_per_param)]
    if any(v <= 0 for v in vals):
        raise InputError("bandwidth inputs must be positive")
    return Bandwidth(vals[0] * vals[1] * vals[2])
