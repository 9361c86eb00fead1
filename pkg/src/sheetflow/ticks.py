"""Integer time base.

All times and durations in the system are integer ticks. One tick is one
millisecond unless overridden through the PRESS_TICK_US environment variable
(tick length in microseconds). Model files carry millisecond values; they are
converted exactly at load time and a remainder is a model error, never a
rounding.
"""

from __future__ import annotations

import os

INF = float("inf")
NEG_INF = float("-inf")

#: microseconds per tick (default: 1 tick = 1 ms)
DEFAULT_TICK_US = 1000


def tick_us() -> int:
    raw = os.environ.get("PRESS_TICK_US")
    if not raw:
        return DEFAULT_TICK_US
    value = int(raw)
    if value <= 0:
        raise ValueError(f"PRESS_TICK_US must be positive, got {raw}")
    return value


def ms_to_ticks(ms: float, scale_us: int | None = None) -> int:
    """Convert a millisecond quantity from a model file to integer ticks.

    Raises ValueError when the value is not an exact multiple of the tick.
    """
    scale = tick_us() if scale_us is None else scale_us
    us = ms * 1000
    ticks = us / scale
    out = round(ticks)
    if abs(ticks - out) > 1e-9:
        raise ValueError(f"{ms} ms is not an integral number of {scale} us ticks")
    return int(out)


def ticks_to_ms(ticks: int, scale_us: int | None = None) -> float:
    scale = tick_us() if scale_us is None else scale_us
    return ticks * scale / 1000.0
