"""Link budget: received power, thermal noise power and SNR per receiver."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

# Boltzmann constant in dBW/K/Hz.
BOLTZMANN_DBW = -228.6


@dataclass(frozen=True)
class LinkParams:
    """Physical parameters of one uplink (user terminal to satellite).

    Values are stored as they appear in a parameter table: transmit power
    in dBm, everything else in dB units, bandwidth and carrier in Hz.
    When ``snr_override_db`` is set the computed budget is bypassed.
    """

    tx_power_dbm: float
    tx_gain_dbi: float
    rx_gain_dbi: float
    path_loss_db: float
    noise_temp_dbk: float
    bandwidth_hz: float
    carrier_freq_hz: float = 2e9
    snr_override_db: Optional[float] = None

    def __post_init__(self):
        if not self.bandwidth_hz > 0 or not math.isfinite(self.bandwidth_hz):
            raise ValueError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        for name in ("tx_power_dbm", "tx_gain_dbi", "rx_gain_dbi", "path_loss_db", "noise_temp_dbk"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.snr_override_db is not None and not math.isfinite(self.snr_override_db):
            raise ValueError("snr_override_db must be finite")


@dataclass(frozen=True)
class LinkBudgetResult:
    """Budget outcome. Power fields are ``None`` when the SNR was overridden."""

    rx_power_dbw: Optional[float]
    noise_power_dbw: Optional[float]
    snr_db: float

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)


def received_power(params: LinkParams) -> float:
    """Received signal power in dBW."""
    return (params.tx_power_dbm - 30.0) + params.tx_gain_dbi + params.rx_gain_dbi - params.path_loss_db


def noise_power(params: LinkParams) -> float:
    """Thermal noise power kTB in dBW."""
    return BOLTZMANN_DBW + params.noise_temp_dbk + 10.0 * math.log10(params.bandwidth_hz)


def snr(params: LinkParams) -> LinkBudgetResult:
    if params.snr_override_db is not None:
        return LinkBudgetResult(None, None, float(params.snr_override_db))
    p_rx = received_power(params)
    p_n = noise_power(params)
    return LinkBudgetResult(p_rx, p_n, p_rx - p_n)


# Reference uplinks for the LEO and GEO receivers at 2 GHz, 180 kHz.
LEO_REFERENCE = LinkParams(
    tx_power_dbm=23.0,
    tx_gain_dbi=0.0,
    rx_gain_dbi=24.2,
    path_loss_db=161.4,
    noise_temp_dbk=26.4,
    bandwidth_hz=180e3,
)
GEO_REFERENCE = LinkParams(
    tx_power_dbm=23.0,
    tx_gain_dbi=0.0,
    rx_gain_dbi=43.6,
    path_loss_db=190.6,
    noise_temp_dbk=25.0,
    bandwidth_hz=180e3,
)
