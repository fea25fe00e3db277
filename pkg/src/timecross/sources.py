"""Time-source records, CSV trace replay, and beacon pairing.

Trace formats (all integers base-10, no floats):

  GNSS:   header ``seq,gnss_time_ns,local_rx_ns``
  beacon: header ``bssid,ap_timestamp_us,local_rx_ns``
  NTP:    header ``server_id,t0_ns,t1_ns,t2_ns,t3_ns``

Replay is deterministic: the same file always yields the same stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .timebase import (
    Duration,
    Instant,
    Technology,
    TimeSample,
    ZERO,
    nearest_index,
)

# IEEE 802.11 time unit; beacon pairing accepts beacons strictly closer
# than 100 TU to a window edge.
TU = Duration(1_024_000)
BEACON_EDGE_LIMIT = 100 * TU

GNSS_SOURCE_ID = "gnss"

GNSS_HEADER = ["seq", "gnss_time_ns", "local_rx_ns"]
BEACON_HEADER = ["bssid", "ap_timestamp_us", "local_rx_ns"]
NTP_HEADER = ["server_id", "t0_ns", "t1_ns", "t2_ns", "t3_ns"]


class TraceError(ValueError):
    """Malformed or inconsistent trace file; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True, slots=True)
class GnssUpdate:
    """One PVT update: the receiver's claimed GNSS time, stamped locally."""

    seq: int
    gnss_time: Instant
    local_rx: Instant


@dataclass(frozen=True, slots=True)
class BeaconRecord:
    """One received 802.11 beacon.

    ``ap_timestamp`` is the AP's microsecond-resolution elapsed time since
    radio power-up, stored as nanoseconds on the AP's own axis.
    """

    bssid: str
    ap_timestamp: Duration
    local_rx: Instant


@dataclass(frozen=True, slots=True)
class NtpExchange:
    """A four-timestamp NTP exchange.

    t0: client send, t1: server receive, t2: server transmit,
    t3: client receive. t0/t3 are on the client clock, t1/t2 on the server's.
    """

    server_id: str
    t0: Instant
    t1: Instant
    t2: Instant
    t3: Instant

    def __post_init__(self) -> None:
        if self.t3 < self.t0:
            raise ValueError(f"{self.server_id}: t3 < t0")
        if self.t2 < self.t1:
            raise ValueError(f"{self.server_id}: t2 < t1")

    def delay(self) -> Duration:
        """Round-trip network delay: (t3-t0) - (t2-t1)."""
        return (self.t3 - self.t0) - (self.t2 - self.t1)

    def offset(self) -> Duration:
        """Server clock minus client clock: ((t1-t0) + (t2-t3)) / 2."""
        return Duration(((self.t1 - self.t0).nanos + (self.t2 - self.t3).nanos) // 2)

    def to_sample(self) -> TimeSample:
        """Sample at client receive time with symmetric half-RTT compensation.

        Compensated source time (t2 + delay/2) estimates the server clock
        at the local instant t3; it equals t3 + offset().
        """
        return TimeSample(
            source_id=self.server_id,
            technology=Technology.NTP,
            source_time=self.t2,
            local_rx=self.t3,
            delay_comp=self.delay() // 2,
        )


def _read_rows(path, expected_header: list[str], int_from: int):
    """Yield (line_no, fields) rows; columns from ``int_from`` on are parsed as int."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError(path, 1, "empty file") from None
        if header != expected_header:
            raise TraceError(
                path, 1, f"bad header {header!r}, expected {expected_header!r}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise TraceError(
                    path, line_no, f"expected {len(expected_header)} fields, got {len(row)}"
                )
            try:
                yield line_no, row[:int_from] + [int(v) for v in row[int_from:]]
            except ValueError:
                raise TraceError(path, line_no, f"non-integer field in {row!r}") from None


def load_gnss_trace(path) -> list[GnssUpdate]:
    updates: list[GnssUpdate] = []
    for line_no, row in _read_rows(path, GNSS_HEADER, int_from=0):
        seq, gnss_ns, rx_ns = row
        if updates:
            if seq <= updates[-1].seq:
                raise TraceError(path, line_no, f"seq not strictly increasing at {seq}")
            if rx_ns <= updates[-1].local_rx.nanos:
                raise TraceError(path, line_no, f"out-of-order local_rx at {rx_ns}")
        updates.append(GnssUpdate(seq=seq, gnss_time=Instant(gnss_ns), local_rx=Instant(rx_ns)))
    return updates


def load_beacon_trace(path) -> list[BeaconRecord]:
    records: list[BeaconRecord] = []
    last_rx_global: Optional[int] = None
    last_per_ap: dict[str, tuple[int, int]] = {}  # bssid -> (rx_ns, ap_ns)
    for line_no, row in _read_rows(path, BEACON_HEADER):
        bssid, ap_us, rx_ns = row
        bssid = str(bssid)
        if last_rx_global is not None and rx_ns < last_rx_global:
            raise TraceError(path, line_no, f"out-of-order local_rx at {rx_ns}")
        prev = last_per_ap.get(bssid)
        ap_ns = ap_us * 1_000
        if prev is not None:
            if rx_ns <= prev[0]:
                raise TraceError(
                    path, line_no, f"out-of-order local_rx for {bssid} at {rx_ns}"
                )
            if ap_ns < prev[1]:
                raise TraceError(
                    path, line_no, f"ap_timestamp decreased for {bssid} at {ap_us} us"
                )
        last_rx_global = rx_ns
        last_per_ap[bssid] = (rx_ns, ap_ns)
        records.append(
            BeaconRecord(bssid=bssid, ap_timestamp=Duration(ap_ns), local_rx=Instant(rx_ns))
        )
    return records


def load_ntp_trace(path) -> list[NtpExchange]:
    exchanges: list[NtpExchange] = []
    last_rx_global: Optional[int] = None
    last_per_server: dict[str, int] = {}
    for line_no, row in _read_rows(path, NTP_HEADER):
        server_id, t0, t1, t2, t3 = row
        server_id = str(server_id)
        if last_rx_global is not None and t3 < last_rx_global:
            raise TraceError(path, line_no, f"out-of-order local_rx (t3) at {t3}")
        prev = last_per_server.get(server_id)
        if prev is not None and t3 <= prev:
            raise TraceError(
                path, line_no, f"out-of-order local_rx (t3) for {server_id} at {t3}"
            )
        try:
            exchange = NtpExchange(
                server_id=server_id,
                t0=Instant(t0),
                t1=Instant(t1),
                t2=Instant(t2),
                t3=Instant(t3),
            )
        except ValueError as exc:
            raise TraceError(path, line_no, str(exc)) from None
        last_rx_global = t3
        last_per_server[server_id] = t3
        exchanges.append(exchange)
    return exchanges


def replay_trace(path, kind: Technology) -> list[TimeSample]:
    """Replay a trace file as a TimeSample stream, in local_rx order."""
    if kind is Technology.GNSS:
        return [
            TimeSample(
                source_id=GNSS_SOURCE_ID,
                technology=Technology.GNSS,
                source_time=u.gnss_time,
                local_rx=u.local_rx,
                delay_comp=ZERO,
            )
            for u in load_gnss_trace(path)
        ]
    if kind is Technology.WIFI_BEACON:
        return [
            TimeSample(
                source_id=b.bssid,
                technology=Technology.WIFI_BEACON,
                source_time=Instant(b.ap_timestamp.nanos),
                local_rx=b.local_rx,
                delay_comp=ZERO,
            )
            for b in load_beacon_trace(path)
        ]
    if kind is Technology.NTP:
        return [x.to_sample() for x in load_ntp_trace(path)]
    raise ValueError(f"unsupported trace kind {kind!r}")


def write_gnss_trace(path, updates: Iterable[GnssUpdate]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GNSS_HEADER)
        for u in updates:
            writer.writerow([u.seq, u.gnss_time.nanos, u.local_rx.nanos])


def write_beacon_trace(path, records: Iterable[BeaconRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BEACON_HEADER)
        for b in records:
            if b.ap_timestamp.nanos % 1_000:
                raise ValueError(
                    f"ap_timestamp {b.ap_timestamp.nanos} ns is not a whole microsecond"
                )
            writer.writerow([b.bssid, b.ap_timestamp.nanos // 1_000, b.local_rx.nanos])


def write_ntp_trace(path, exchanges: Iterable[NtpExchange]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NTP_HEADER)
        for x in exchanges:
            writer.writerow([x.server_id, x.t0.nanos, x.t1.nanos, x.t2.nanos, x.t3.nanos])


class BeaconSeries:
    """Nearest-beacon lookup for a single AP, built once and queried per window."""

    def __init__(self, beacons: Sequence[BeaconRecord]):
        if not beacons:
            raise ValueError("empty beacon series")
        bssids = {b.bssid for b in beacons}
        if len(bssids) != 1:
            raise ValueError(f"beacons span multiple bssids: {sorted(bssids)}")
        self.bssid = beacons[0].bssid
        self._beacons = list(beacons)
        self._rx = [b.local_rx.nanos for b in beacons]
        if any(b2 <= b1 for b1, b2 in zip(self._rx, self._rx[1:])):
            raise ValueError(f"beacons for {self.bssid} not sorted by local_rx")

    def nearest_within(
        self, edge: Instant, limit: Duration = BEACON_EDGE_LIMIT
    ) -> Optional[BeaconRecord]:
        """Beacon nearest to ``edge`` with |local_rx - edge| < limit (strict)."""
        idx = nearest_index(self._rx, edge.nanos)
        if abs(self._rx[idx] - edge.nanos) >= limit.nanos:
            return None
        return self._beacons[idx]

    def pair(
        self, window_start: Instant, window_end: Instant
    ) -> Optional[tuple[BeaconRecord, BeaconRecord]]:
        b1 = self.nearest_within(window_start)
        if b1 is None:
            return None
        b2 = self.nearest_within(window_end)
        if b2 is None:
            return None
        return b1, b2


def pair_beacons(
    beacons: Sequence[BeaconRecord], window_start: Instant, window_end: Instant
) -> Optional[tuple[BeaconRecord, BeaconRecord]]:
    """Select the start/end beacons delimiting an observation window.

    Each edge takes the beacon nearest to it among those strictly closer
    than 100 TU; equidistant candidates resolve to the earlier beacon.
    Returns None ("pair unavailable") when either edge has no qualifying
    beacon; the caller defers detection to the next GNSS update.
    """
    return BeaconSeries(beacons).pair(window_start, window_end)


def group_beacons(records: Iterable[BeaconRecord]) -> dict[str, BeaconSeries]:
    """Split a mixed beacon stream into per-AP series, keyed by bssid."""
    buckets: dict[str, list[BeaconRecord]] = {}
    for r in records:
        buckets.setdefault(r.bssid, []).append(r)
    return {bssid: BeaconSeries(recs) for bssid, recs in sorted(buckets.items())}
