"""Small unit-conversion helpers (power in dBm/watts, angles in degrees)."""

from __future__ import annotations

import math


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ValueError(f"power must be positive, got {watts!r}")
    return 10.0 * math.log10(watts) + 30.0


def thermal_noise_dbm(bandwidth_hz: float) -> float:
    """Thermal noise floor -174 dBm/Hz integrated over a bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz!r}")
    return -174.0 + 10.0 * math.log10(bandwidth_hz)
