"""Quantitative reports: detection rates, storage and energy accounting,
length histograms, and the per-packet matching benchmark.

Rates are computed with the feedback loop disabled, re-running the matcher
per mode over the same records, so a repeatedly mismatching packet counts
as a false positive every time it appears; the dedup variants count each
distinct entry once instead.
"""

from __future__ import annotations

import copy
import csv
import math
import platform
import time
from dataclasses import dataclass
from statistics import median, quantiles
from typing import IO, Iterable, Sequence

from .errors import NoLabels
from .monitoring import MatchMode, Outcome, Verdict, classify_packet, monitor_stream
from .pcap import PacketRecord
from .profiling import DeviceProfile, HostnameMap, NetworkConfig

BENIGN = "benign"
MALICIOUS = "malicious"

YEAR_SECONDS = 365 * 24 * 3600

RATES_CSV_HEADER = [
    "DEVICE MAC", "DEVICE NAME", "TRAINING PACKETS", "MONITORING PACKETS", "PROFILE ENTRIES",
    "FPR ENDPOINT AND LENGTH", "FPR ENDPOINT ONLY", "TPR",
]
RATES_CSV_DEDUP_COLUMNS = ["FPR ENDPOINT AND LENGTH DEDUP", "FPR ENDPOINT ONLY DEDUP"]
HISTOGRAM_CSV_HEADER = ["CLASS", "LENGTH", "COUNT"]


@dataclass
class DeviceRates:
    device_mac: str
    device_name: str
    training_packets: int
    monitoring_packets: int
    profile_entries: int
    fpr_strict: float
    fpr_endpoint_only: float
    fpr_strict_dedup: float
    fpr_endpoint_only_dedup: float
    tpr: float | None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _rate(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


class _Tally:
    def __init__(self):
        self.benign_total = 0
        self.benign_suspicious = 0
        self.malicious_total = 0
        self.malicious_suspicious = 0
        self.benign_entries: set = set()
        self.benign_suspicious_entries: set = set()


def _tally_mode(
    records: Sequence[PacketRecord],
    cfg: NetworkConfig,
    profiles: dict[str, DeviceProfile],
    mode: MatchMode,
    hostnames: HostnameMap,
    labels: Sequence[str] | None,
) -> dict[str, _Tally]:
    tallies: dict[str, _Tally] = {}
    frozen = {mac: copy.deepcopy(p) for mac, p in profiles.items()}
    for verdict in monitor_stream(records, cfg, copy.deepcopy(hostnames), frozen, mode):
        label = labels[verdict.packet_index] if labels is not None else BENIGN
        tally = tallies.setdefault(verdict.device_mac, _Tally())
        suspicious = verdict.outcome is Outcome.SUSPICIOUS
        key = (verdict.entry.external_address, verdict.entry.direction, verdict.entry.length)
        if label == MALICIOUS:
            tally.malicious_total += 1
            tally.malicious_suspicious += suspicious
        else:
            tally.benign_total += 1
            tally.benign_suspicious += suspicious
            tally.benign_entries.add(key)
            if suspicious:
                tally.benign_suspicious_entries.add(key)
    return tallies


def count_device_packets(records: Sequence[PacketRecord], macs: Iterable[str]) -> dict[str, int]:
    """Packets per device, counted by either MAC matching."""
    counts = {mac: 0 for mac in macs}
    for rec in records:
        for mac in (rec.src_mac, rec.dst_mac):
            if mac in counts:
                counts[mac] += 1
    return counts


def true_positive_rate(verdicts: Iterable[Verdict], labels: Sequence[str] | None) -> float:
    """Fraction of malicious-labeled verdict-bearing packets flagged suspicious."""
    if labels is None:
        raise NoLabels("TPR needs per-packet ground truth")
    total = flagged = 0
    for v in verdicts:
        if labels[v.packet_index] == MALICIOUS:
            total += 1
            flagged += v.outcome is Outcome.SUSPICIOUS
    if total == 0:
        raise NoLabels("no malicious packets in the labeled trace")
    return flagged / total


def compute_rates(
    records: Sequence[PacketRecord],
    cfg: NetworkConfig,
    profiles: dict[str, DeviceProfile],
    *,
    hostnames: HostnameMap | None = None,
    labels: Sequence[str] | None = None,
    training_packets: dict[str, int] | None = None,
    threshold: float = 0.80,
) -> list[DeviceRates]:
    """Per-device FPR under strict and endpoint-only matching, plus TPR.

    The matcher re-runs per mode on frozen profile copies (no learning).
    With no labels every packet counts as benign and TPR is None.
    """
    hostnames = hostnames if hostnames is not None else HostnameMap()
    strict = _tally_mode(records, cfg, profiles, MatchMode.strict(threshold), hostnames, labels)
    endpoint = _tally_mode(records, cfg, profiles, MatchMode.endpoint_only(threshold), hostnames, labels)
    counts = count_device_packets(records, profiles)
    out = []
    for mac in sorted(profiles):
        s = strict.get(mac, _Tally())
        e = endpoint.get(mac, _Tally())
        tpr = _rate(s.malicious_suspicious, s.malicious_total) if labels is not None and s.malicious_total else None
        out.append(DeviceRates(
            device_mac=mac,
            device_name=profiles[mac].device_name,
            training_packets=(training_packets or {}).get(mac, 0),
            monitoring_packets=counts.get(mac, 0),
            profile_entries=profiles[mac].entry_count(),
            fpr_strict=_rate(s.benign_suspicious, s.benign_total),
            fpr_endpoint_only=_rate(e.benign_suspicious, e.benign_total),
            fpr_strict_dedup=_rate(len(s.benign_suspicious_entries), len(s.benign_entries)),
            fpr_endpoint_only_dedup=_rate(len(e.benign_suspicious_entries), len(e.benign_entries)),
            tpr=tpr,
        ))
    return out


def rates_csv(reports: Iterable[DeviceRates], out: IO[str], dedup: bool = False) -> None:
    """Write per-device rates as CSV; dedup adds the unique-entry FPR columns."""
    w = csv.writer(out)
    w.writerow(RATES_CSV_HEADER + (RATES_CSV_DEDUP_COLUMNS if dedup else []))
    for r in reports:
        row = [
            r.device_mac, r.device_name, r.training_packets, r.monitoring_packets, r.profile_entries,
            f"{r.fpr_strict:.6f}", f"{r.fpr_endpoint_only:.6f}",
            "" if r.tpr is None else f"{r.tpr:.6f}",
        ]
        if dedup:
            row += [f"{r.fpr_strict_dedup:.6f}", f"{r.fpr_endpoint_only_dedup:.6f}"]
        w.writerow(row)


# --- storage accounting ----------------------------------------------------------


@dataclass
class StorageBound:
    n_actual: int
    devices: int
    e_avg: float  # mean distinct (direction, endpoint) pairs per device
    l_avg: float  # mean distinct lengths per pair
    bound: float  # devices * e_avg * l_avg
    e_max: int
    l_max: int
    bound_max: float  # devices * e_max * l_max, a true upper bound

    def to_json(self) -> dict:
        return dict(self.__dict__)


def storage_bound(profiles: dict[str, DeviceProfile]) -> StorageBound:
    """Entry-count accounting: actual totals against the d*e*l bound."""
    d = len(profiles)
    if d == 0:
        return StorageBound(0, 0, 0.0, 0.0, 0.0, 0, 0, 0.0)
    pair_counts = [len(p.index) for p in profiles.values()]
    length_counts = [len(lengths) for p in profiles.values() for lengths in p.index.values()]
    n_actual = sum(length_counts)
    e_avg = sum(pair_counts) / d
    l_avg = n_actual / len(length_counts) if length_counts else 0.0
    e_max = max(pair_counts)
    l_max = max(length_counts) if length_counts else 0
    return StorageBound(
        n_actual=n_actual,
        devices=d,
        e_avg=e_avg,
        l_avg=l_avg,
        bound=d * e_avg * l_avg,
        e_max=e_max,
        l_max=l_max,
        bound_max=float(d * e_max * l_max),
    )


def bound_from_aggregates(devices: int, e_avg: float, l_avg: float) -> float:
    """The d*e*l profile-count bound from already-aggregated statistics."""
    return devices * e_avg * l_avg


# --- energy accounting -----------------------------------------------------------


@dataclass
class EnergyModel:
    per_attestation_mwh: float
    interval: float = 300.0
    horizon: float = YEAR_SECONDS

    def __post_init__(self):
        if self.per_attestation_mwh <= 0 or self.interval <= 0 or self.horizon <= 0:
            raise ValueError("energy model parameters must be positive")


def energy_projection(model: EnergyModel, intervals: Sequence[float] | None = None) -> dict[float, float]:
    """mWh spent on periodic attestation over the horizon, per interval."""
    out = {}
    for interval in intervals if intervals is not None else [model.interval]:
        if interval <= 0:
            raise ValueError("intervals must be positive")
        out[interval] = model.per_attestation_mwh * math.floor(model.horizon / interval)
    return out


# --- length histogram --------------------------------------------------------------


def length_histogram(records: Sequence[PacketRecord], labels: Sequence[str]) -> dict[str, dict[int, int]]:
    """Frame-length frequency per class label."""
    if labels is None or len(labels) != len(records):
        raise NoLabels("histogram needs one label per record")
    hist: dict[str, dict[int, int]] = {}
    for rec, label in zip(records, labels):
        per_class = hist.setdefault(label, {})
        per_class[rec.frame_len] = per_class.get(rec.frame_len, 0) + 1
    return hist


def histogram_csv(hist: dict[str, dict[int, int]], out: IO[str]) -> None:
    w = csv.writer(out)
    w.writerow(HISTOGRAM_CSV_HEADER)
    for label in sorted(hist):
        for length in sorted(hist[label]):
            w.writerow([label, length, hist[label][length]])


# --- latency benchmark ---------------------------------------------------------------


@dataclass
class LatencyReport:
    median_ms: float
    p99_ms: float
    packets: int
    profile_entries: int
    machine: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def bench_latency(
    records: Sequence[PacketRecord],
    cfg: NetworkConfig,
    profiles: dict[str, DeviceProfile],
    mode: MatchMode,
    *,
    hostnames: HostnameMap | None = None,
    min_packets: int = 100_000,
) -> LatencyReport:
    """Wall-clock per-packet cost of entry construction plus matching.

    Attestation is excluded: this times the always-on classification path
    only.  Profiles are copied so learning cannot shrink the search.
    """
    if len(records) < min_packets:
        raise ValueError(f"benchmark needs at least {min_packets} packets, got {len(records)}")
    hostnames = copy.deepcopy(hostnames) if hostnames is not None else HostnameMap()
    frozen = {mac: copy.deepcopy(p) for mac, p in profiles.items()}
    perf = time.perf_counter
    samples = []
    for idx, rec in enumerate(records):
        t0 = perf()
        classify_packet(idx, rec, cfg, hostnames, frozen, mode)
        samples.append(perf() - t0)
    return LatencyReport(
        median_ms=median(samples) * 1000.0,
        p99_ms=quantiles(samples, n=100)[98] * 1000.0,
        packets=len(samples),
        profile_entries=sum(p.entry_count() for p in frozen.values()),
        machine=f"{platform.platform()} / Python {platform.python_version()}",
    )
