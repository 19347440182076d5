"""TIN-SIC physical layer abstraction.

Packets are received with equal power. A packet overlapped by ``h``
uncancelled packets sees the mutual information ``log2(1 + s / (1 + h s))``
(interference treated as noise) and decodes when its rate is strictly
below that value. GEO packets spanning several LEO slots average the
mutual information over their portions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Service(str, enum.Enum):
    LEO = "LEO"
    GEO = "GEO"


class InfeasibleRateError(ValueError):
    """Rate at or above the single-user capacity of a receiver."""


@dataclass(frozen=True)
class TinSicModel:
    snr_linear: float
    receiver: Service = Service.LEO

    def __post_init__(self):
        if not self.snr_linear > 0 or not math.isfinite(self.snr_linear):
            raise ValueError(f"snr_linear must be positive and finite, got {self.snr_linear}")

    @classmethod
    def from_db(cls, snr_db: float, receiver: Service = Service.LEO) -> "TinSicModel":
        return cls(10.0 ** (snr_db / 10.0), receiver)

    @property
    def capacity(self) -> float:
        """Single-user capacity log2(1 + s) in bits/symbol."""
        return math.log2(1.0 + self.snr_linear)


@dataclass(frozen=True)
class Rate:
    bits_per_symbol: float
    service: Service = Service.LEO

    def __post_init__(self):
        r = self.bits_per_symbol
        if not r > 0 or not math.isfinite(r):
            raise ValueError(f"rate must be positive and finite, got {r}")


def mutual_info_single(model: TinSicModel, interferers: int) -> float:
    if interferers < 0:
        raise ValueError("interferers must be non-negative")
    s = model.snr_linear
    return math.log2(1.0 + s / (1.0 + interferers * s))


def mutual_info_segmented(model: TinSicModel, per_portion_interferers: Sequence[int]) -> float:
    """Average mutual information of a packet split into equal-length portions.

    Portion ``j`` is overlapped by ``per_portion_interferers[j]`` packets.
    """
    hs = list(per_portion_interferers)
    if not hs:
        raise ValueError("per_portion_interferers must be non-empty")
    total = 0.0
    for h in hs:
        total += mutual_info_single(model, h)
    return total / len(hs)


def decodes(rate: Rate | float, avg_mutual_info: float) -> bool:
    r = rate.bits_per_symbol if isinstance(rate, Rate) else float(rate)
    return r < avg_mutual_info


def _rate_value(rate: Rate | float) -> float:
    return rate.bits_per_symbol if isinstance(rate, Rate) else float(rate)


def tau(model: TinSicModel, rate: Rate | float) -> int:
    """Largest number of interferers a packet at ``rate`` tolerates.

    Raises InfeasibleRateError when the packet cannot be decoded even alone.
    """
    r = _rate_value(rate)
    if not r > 0:
        raise ValueError(f"rate must be positive, got {r}")
    if not decodes(r, mutual_info_single(model, 0)):
        raise InfeasibleRateError(
            f"rate {r:g} >= single-user capacity {model.capacity:g} at snr {model.snr_linear:g}"
        )
    s = model.snr_linear
    t = max(0, math.floor((s / math.expm1(r * math.log(2.0)) - 1.0) / s))
    # floor() is exact up to rounding; fix the boundary with the predicate
    while t > 0 and not decodes(r, mutual_info_single(model, t)):
        t -= 1
    while decodes(r, mutual_info_single(model, t + 1)):
        t += 1
    return t


def tau_scan(model: TinSicModel, rate: Rate | float, limit: int = 10**7) -> int:
    """Linear-scan reference for :func:`tau`."""
    r = _rate_value(rate)
    if not decodes(r, mutual_info_single(model, 0)):
        raise InfeasibleRateError(f"rate {r:g} infeasible")
    t = 0
    while t < limit and decodes(r, mutual_info_single(model, t + 1)):
        t += 1
    return t


def capacity_boundaries(model: TinSicModel, min_rate: float) -> list[float]:
    """Rates ``mutual_info_single(model, t)`` for t = 0, 1, ... not below ``min_rate``.

    Throughput versus rate is a sawtooth whose teeth end at these values.
    """
    if not min_rate > 0:
        raise ValueError("min_rate must be positive")
    out = []
    t = 0
    while (c := mutual_info_single(model, t)) >= min_rate:
        out.append(c)
        t += 1
    return out


def gain_table(model: TinSicModel, size: int) -> np.ndarray:
    """``mutual_info_single(model, h)`` for h in ``range(size)``.

    Built from the scalar function so that table lookups match it bit for bit.
    """
    return np.array([mutual_info_single(model, h) for h in range(size)], dtype=np.float64)
