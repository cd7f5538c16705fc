"""Closed-form throughput expected from time slicing."""
from __future__ import annotations

import math

from ..errors import ConfigurationError


def expected_throughput(C: float, Ton: float, T: float, r_in: float | None = None,
                        proxy: bool = True) -> float:
    """Mean rate of a flow served at ``C`` Mbps for ``Ton`` of every ``T`` ms.

    With a split-connection proxy, or for a LAN endpoint (``r_in`` None), the
    rate is ``C * Ton / T`` capped by the WAN rate.  A WAN flow without a
    proxy has no closed form; NaN is returned.
    """
    if T <= 0 or Ton < 0:
        raise ConfigurationError("need T > 0 and Ton >= 0")
    if Ton > T:
        raise ConfigurationError(f"Ton={Ton} exceeds the frame T={T}")
    if r_in is not None and not proxy:
        return math.nan
    sliced = C * Ton / T
    return sliced if r_in is None else min(r_in, sliced)
