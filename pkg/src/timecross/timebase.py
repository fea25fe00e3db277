"""Core time representation and sample alignment.

All times are signed integer nanoseconds. Instants live on some clock's
axis (local monotonic clock, GNSS time, an AP's power-up counter); only
differences between instants on the same axis are meaningful. Keeping
everything integral makes threshold comparisons exact, which matters for
thresholds down to tens of microseconds.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


@dataclass(frozen=True, order=True, slots=True)
class Duration:
    """A signed span of time in integer nanoseconds."""

    nanos: int

    def __add__(self, other: "Duration") -> "Duration":
        return Duration(self.nanos + other.nanos)

    def __sub__(self, other: "Duration") -> "Duration":
        return Duration(self.nanos - other.nanos)

    def __neg__(self) -> "Duration":
        return Duration(-self.nanos)

    def __abs__(self) -> "Duration":
        return Duration(abs(self.nanos))

    def __mul__(self, factor: int) -> "Duration":
        return Duration(self.nanos * factor)

    __rmul__ = __mul__

    def __floordiv__(self, divisor: int) -> "Duration":
        return Duration(self.nanos // divisor)

    def __bool__(self) -> bool:
        return self.nanos != 0

    @classmethod
    def from_us(cls, us: int) -> "Duration":
        return cls(us * 1_000)

    @classmethod
    def from_ms(cls, ms: int) -> "Duration":
        return cls(ms * 1_000_000)

    @classmethod
    def from_s(cls, s: int) -> "Duration":
        return cls(s * 1_000_000_000)


ZERO = Duration(0)


@dataclass(frozen=True, order=True, slots=True)
class Instant:
    """A point on some clock axis, in integer nanoseconds since an arbitrary epoch."""

    nanos: int

    def __add__(self, delta: Duration) -> "Instant":
        return Instant(self.nanos + delta.nanos)

    def __sub__(self, other):
        if isinstance(other, Instant):
            return Duration(self.nanos - other.nanos)
        if isinstance(other, Duration):
            return Instant(self.nanos - other.nanos)
        return NotImplemented


class Technology(Enum):
    """External time technology kinds (plus GNSS itself)."""

    GNSS = "gnss"
    NTP = "ntp"
    WIFI_BEACON = "wifi_beacon"


@dataclass(frozen=True, slots=True)
class TimeSample:
    """One observation from one time source.

    ``source_time`` is the source's claimed time (or an AP's elapsed
    counter, on its own axis); ``local_rx`` is the local monotonic clock
    at reception; ``delay_comp`` is any delay compensation to add to
    ``source_time`` (e.g. half round-trip for NTP).
    """

    source_id: str
    technology: Technology
    source_time: Instant
    local_rx: Instant
    delay_comp: Duration = ZERO

    def __post_init__(self) -> None:
        if self.delay_comp.nanos < 0:
            raise ValueError(f"delay_comp must be >= 0, got {self.delay_comp.nanos} ns")


def compensated_source_time(sample: TimeSample) -> Instant:
    """Source time with delay compensation applied."""
    return sample.source_time + sample.delay_comp


def nearest_index(sorted_nanos: list[int], anchor_nanos: int) -> int:
    """Index of the value nearest to ``anchor_nanos``; ties go to the earlier one.

    ``sorted_nanos`` must be non-empty and ascending.
    """
    pos = bisect_left(sorted_nanos, anchor_nanos)
    if pos == 0:
        return 0
    if pos == len(sorted_nanos):
        return len(sorted_nanos) - 1
    before = sorted_nanos[pos - 1]
    after = sorted_nanos[pos]
    # tie (equal distance) resolves to the earlier sample
    if anchor_nanos - before <= after - anchor_nanos:
        return pos - 1
    return pos


@dataclass(slots=True)
class _SourceSeries:
    rx_nanos: list[int] = field(default_factory=list)
    samples: list[TimeSample] = field(default_factory=list)


class SampleIndex:
    """Per-source nearest-neighbor lookup over sample receive times.

    Samples must arrive in strictly increasing ``local_rx`` order per
    source (FIFO per source; no global ordering is assumed).
    """

    def __init__(self, samples: Iterable[TimeSample]):
        self._series: dict[str, _SourceSeries] = {}
        for s in samples:
            series = self._series.setdefault(s.source_id, _SourceSeries())
            if series.rx_nanos and s.local_rx.nanos <= series.rx_nanos[-1]:
                raise ValueError(
                    f"samples for source {s.source_id!r} are not strictly "
                    f"increasing in local_rx at {s.local_rx.nanos} ns"
                )
            series.rx_nanos.append(s.local_rx.nanos)
            series.samples.append(s)

    def source_ids(self) -> list[str]:
        return sorted(self._series)

    def nearest(
        self, source_id: str, anchor: Instant, tolerance: Duration
    ) -> Optional[TimeSample]:
        """The source's sample nearest to ``anchor``, or None if none is
        within ``tolerance`` (inclusive)."""
        series = self._series.get(source_id)
        if series is None or not series.rx_nanos:
            return None
        idx = nearest_index(series.rx_nanos, anchor.nanos)
        if abs(series.rx_nanos[idx] - anchor.nanos) > tolerance.nanos:
            return None
        return series.samples[idx]

    def select(self, anchor: Instant, tolerance: Duration) -> list[TimeSample]:
        """At most one sample per source, nearest to ``anchor`` within
        ``tolerance``, ordered by source id."""
        out = []
        for sid in self.source_ids():
            hit = self.nearest(sid, anchor, tolerance)
            if hit is not None:
                out.append(hit)
        return out


# Half the 1 Hz GNSS update interval: a sample further than this from the
# triggering update belongs to a different detection instant.
DEFAULT_ALIGN_TOLERANCE = Duration.from_ms(500)


def align(
    samples: Iterable[TimeSample],
    anchor: Instant,
    tolerance: Duration = DEFAULT_ALIGN_TOLERANCE,
) -> list[TimeSample]:
    """Pick, per source, the sample whose local_rx is nearest to ``anchor``
    and within ``tolerance``.

    Sources with no qualifying sample are simply absent from the result;
    the caller treats that as missing data, not an error. Equidistant
    candidates resolve to the earlier sample.
    """
    if tolerance.nanos <= 0:
        raise ValueError("tolerance must be positive")
    return SampleIndex(samples).select(anchor, tolerance)
