"""Throughput measurement for the live pipeline."""

from __future__ import annotations


class FpsMeter:
    """Smoothed frames-per-second from a stream of timestamps.

    The inter-frame interval is smoothed with an exponential moving average
    (factor 0.1 on each new sample) and the published rate is its inverse,
    so the display is responsive without flickering. Reads 0.0 until two
    timestamps have arrived; never negative or non-finite.
    """

    def __init__(self, smoothing: float = 0.1):
        if not 0.0 < smoothing <= 1.0:
            raise ValueError(f"smoothing must be in (0, 1], got {smoothing}")
        self.smoothing = smoothing
        self._last_ns: int | None = None
        self._ema_dt: float | None = None

    def tick(self, timestamp_ns: int) -> float:
        """Feed one frame timestamp (monotonic ns); returns current fps."""
        if self._last_ns is not None:
            dt = (timestamp_ns - self._last_ns) / 1e9
            if dt > 0.0:
                if self._ema_dt is None:
                    self._ema_dt = dt
                else:
                    self._ema_dt += self.smoothing * (dt - self._ema_dt)
        self._last_ns = timestamp_ns
        return self.fps

    @property
    def fps(self) -> float:
        if self._ema_dt is None or self._ema_dt <= 0.0:
            return 0.0
        return 1.0 / self._ema_dt

    def reset(self) -> None:
        self._last_ns = None
        self._ema_dt = None
