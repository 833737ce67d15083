"""The feedback loop between traffic monitoring and device attestation.

Suspicious verdicts trigger a rate-limited attestation of the flagged
device.  A verified healthy report whitelists the triggering entry, so
identical packets stop raising suspicion; an infected report, or any
verification failure (an unresponsive or lying device is itself the
signal), raises an alert.  Nothing is ever whitelisted without a verified
healthy report.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median, quantiles
from typing import IO, Iterable

from .attestation import (
    AttestationReport,
    Health,
    ReferenceMeasurement,
    Verifier,
)
from .errors import AttestationError, WireError
from .monitoring import MatchMode, Outcome, Verdict, classify_packet
from .pcap import PacketRecord
from .profiling import (
    DeviceProfile,
    HostnameMap,
    NetworkConfig,
    ProfileEntry,
    ProfileStore,
    train,
)

DEFAULT_BUCKET_CAPACITY = 5
DEFAULT_REFILL_INTERVAL = 60.0

PASS = "pass"
DEFERRED = "deferred"
LEARNED = "learned"
ALERT = "alert"


@dataclass
class Alert:
    """Confirmed-infection record for one triggering packet.

    ``report`` holds the infected attestation report; when verification
    itself failed (timeout, bad signature, stale challenge), ``failure``
    names the failure instead and ``report`` is None.
    """

    device_mac: str
    trigger_entry: ProfileEntry
    report: AttestationReport | None
    emitted_at: float
    failure: str | None = None

    def to_json(self) -> dict:
        body = {
            "mac": self.device_mac,
            "endpoint": self.trigger_entry.external_address,
            "direction": self.trigger_entry.direction.value,
            "length": self.trigger_entry.length,
            "emitted_at": self.emitted_at,
        }
        if self.report is not None:
            body["verdict"] = self.report.verdict.value
            body["divergences"] = [
                {"path": d.path, "kind": d.kind.value, "observed": d.observed_digest.hex()}
                for d in self.report.divergences
            ]
        else:
            body["failure"] = self.failure
        return body


class RateLimiter:
    """Per-key token bucket refilled to capacity at fixed interval boundaries.

    Within any one refill window a key is granted at most ``capacity``
    attestations, whatever the request schedule looks like.
    """

    def __init__(self, capacity: int = DEFAULT_BUCKET_CAPACITY, interval: float = DEFAULT_REFILL_INTERVAL):
        if capacity < 1 or interval <= 0:
            raise ValueError("capacity must be >= 1 and interval > 0")
        self.capacity = capacity
        self.interval = interval
        self._buckets: dict[str, tuple[int, float]] = {}

    def allow(self, key: str, now: float | None = None) -> bool:
        if now is None:
            now = time.monotonic()
        tokens, window_end = self._buckets.get(key, (self.capacity, now + self.interval))
        if now >= window_end:
            skipped = math.floor((now - window_end) / self.interval) + 1
            window_end += skipped * self.interval
            tokens = self.capacity
        granted = tokens > 0
        if granted:
            tokens -= 1
        self._buckets[key] = (tokens, window_end)
        return granted


@dataclass
class PipelineMetrics:
    packets: int = 0
    verdicts: int = 0
    benign: int = 0
    suspicious: int = 0
    reasons: dict[str, int] = field(default_factory=dict)
    attestations: int = 0
    periodic_attestations: int = 0
    learned: int = 0
    alerts: int = 0
    deferred: int = 0
    classify_ms_median: float = 0.0
    classify_ms_p99: float = 0.0
    errors: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


class Orchestrator:
    """Routes suspicious verdicts through attestation and applies the outcome."""

    def __init__(
        self,
        profiles: dict[str, DeviceProfile],
        verifier: Verifier,
        transports: dict[str, object],
        limiter: RateLimiter | None = None,
        timeout: float = 5.0,
        alert_out: IO[str] | None = None,
    ):
        self.profiles = profiles
        self.verifier = verifier
        self.transports = {mac.lower(): t for mac, t in transports.items()}
        self.limiter = limiter if limiter is not None else RateLimiter()
        self.timeout = timeout
        self.alert_out = alert_out
        self.alerts: list[Alert] = []
        self.metrics = PipelineMetrics()

    def _emit(self, alert: Alert) -> Alert:
        self.alerts.append(alert)
        self.metrics.alerts += 1
        if self.alert_out is not None:
            self.alert_out.write(json.dumps(alert.to_json(), separators=(",", ":")) + "\n")
        return alert

    def handle_verdict(self, verdict: Verdict, now: float | None = None) -> str:
        """PASS benign traffic; attest, then learn or alert, for the rest."""
        self.metrics.verdicts += 1
        self.metrics.reasons[verdict.reason.value] = self.metrics.reasons.get(verdict.reason.value, 0) + 1
        if verdict.outcome is Outcome.BENIGN:
            self.metrics.benign += 1
            return PASS
        self.metrics.suspicious += 1
        mac = verdict.device_mac
        if not self.limiter.allow(mac, now):
            self.metrics.deferred += 1
            return DEFERRED
        emitted_at = now if now is not None else time.time()
        transport = self.transports.get(mac)
        self.metrics.attestations += 1
        try:
            if transport is None:
                raise AttestationError(f"no agent transport for {mac}")
            report = self.verifier.attest_device(mac, transport, self.timeout)
        except (AttestationError, WireError) as exc:
            self._emit(Alert(mac, verdict.entry, None, emitted_at, failure=f"{type(exc).__name__}: {exc}"))
            return ALERT
        if report.verdict is Health.HEALTHY:
            profile = self.profiles.setdefault(mac, DeviceProfile(mac, verdict.entry.device_name))
            profile.add(verdict.entry)
            self.metrics.learned += 1
            return LEARNED
        self._emit(Alert(mac, verdict.entry, report, emitted_at))
        return ALERT


@dataclass
class PipelineResult:
    verdicts: list[Verdict]
    alerts: list[Alert]
    profiles: dict[str, DeviceProfile]
    metrics: PipelineMetrics
    hostnames: HostnameMap


def run_pipeline(
    monitor_records: Iterable[PacketRecord],
    cfg: NetworkConfig,
    mode: MatchMode,
    verifier: Verifier,
    transports: dict[str, object],
    *,
    train_records: Iterable[PacketRecord] | None = None,
    profiles: dict[str, DeviceProfile] | None = None,
    hostnames: HostnameMap | None = None,
    store: ProfileStore | None = None,
    limiter: RateLimiter | None = None,
    timeout: float = 5.0,
    alert_out: IO[str] | None = None,
    periodic_interval: float | None = None,
) -> PipelineResult:
    """Train (when no profiles are given), then monitor with the loop inline.

    The rate limiter and the optional periodic attestation timer run on
    packet timestamps, so replayed captures behave the same every run.
    Classification latency covers entry construction plus matching only;
    attestation exchanges happen between packets and are counted, not
    timed into it.
    """
    hostnames = hostnames if hostnames is not None else HostnameMap()
    if profiles is None:
        if train_records is None:
            raise ValueError("need train_records or prebuilt profiles")
        profiles = train(train_records, cfg, hostnames, store)
    orch = Orchestrator(profiles, verifier, transports, limiter, timeout, alert_out)
    metrics = orch.metrics
    verdicts: list[Verdict] = []
    latencies: list[float] = []
    perf = time.perf_counter
    next_periodic: dict[str, float] = {}
    seen = 0
    for idx, rec in enumerate(monitor_records):
        seen += 1
        metrics.packets += 1
        now = rec.timestamp
        if periodic_interval is not None:
            for mac in transports:
                due = next_periodic.setdefault(mac, now + periodic_interval)
                if now >= due:
                    next_periodic[mac] = due + periodic_interval
                    metrics.periodic_attestations += 1
                    try:
                        orch.verifier.attest_device(mac, orch.transports[mac], timeout)
                    except (AttestationError, WireError) as exc:
                        metrics.errors.append(f"periodic {mac}: {type(exc).__name__}")
        t0 = perf()
        verdict = classify_packet(idx, rec, cfg, hostnames, profiles, mode)
        latencies.append(perf() - t0)
        if verdict is not None:
            verdicts.append(verdict)
            orch.handle_verdict(verdict, now=now)
        if store is not None and seen % cfg.checkpoint_interval == 0:
            store.save(profiles)
    if store is not None:
        store.save(profiles)
    if latencies:
        metrics.classify_ms_median = median(latencies) * 1000.0
        metrics.classify_ms_p99 = (
            quantiles(latencies, n=100)[98] * 1000.0 if len(latencies) >= 2 else latencies[0] * 1000.0
        )
    return PipelineResult(verdicts, orch.alerts, profiles, metrics, hostnames)


def accept_reference(stored: str | Path, trusted: str | Path) -> ReferenceMeasurement:
    """Operator-only reference replacement after a legitimate device update.

    The trusted file must parse as a reference measurement; it then
    replaces the stored one atomically.  Never called automatically.
    """
    reference = ReferenceMeasurement.load(trusted)
    stored = Path(stored)
    tmp = stored.with_suffix(".tmp")
    reference.save(tmp)
    os.replace(tmp, stored)
    return reference
