"""Per-packet whitelist matching.

A packet is benign when its derived entry matches a profile entry exactly,
or when its hostname endpoint is a near-duplicate of a whitelisted one
(same registrable domain, digit-masked similarity at or above the
threshold) and the length rule of the active mode passes.  Everything
else is suspicious; confirmation is the feedback loop's job, not ours.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator

from . import dns
from .errors import BothMonitored, MacMismatch
from .profiling import (
    DeviceProfile,
    HostnameMap,
    NetworkConfig,
    ProfileEntry,
    ProfileStore,
    build_entry,
)
from .pcap import PacketRecord

DEFAULT_SIMILARITY_THRESHOLD = 0.80

_DIGIT_MASK = str.maketrans("0123456789", "##########")


@dataclass(frozen=True)
class MatchMode:
    """Length-matching rule plus the hostname similarity threshold."""

    kind: str  # "strict" | "endpoint" | "tolerance"
    tolerance: int = 0
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD

    def __post_init__(self):
        if self.kind not in ("strict", "endpoint", "tolerance"):
            raise ValueError(f"unknown mode {self.kind!r}")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity threshold must be in [0, 1]")

    @classmethod
    def strict(cls, threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> "MatchMode":
        return cls("strict", similarity_threshold=threshold)

    @classmethod
    def endpoint_only(cls, threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> "MatchMode":
        return cls("endpoint", similarity_threshold=threshold)

    @classmethod
    def length_tolerance(cls, k: int, threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> "MatchMode":
        return cls("tolerance", tolerance=k, similarity_threshold=threshold)

    @classmethod
    def parse(cls, token: str) -> "MatchMode":
        """Parse a CLI mode token: strict | endpoint | tol:<k>."""
        if token == "strict":
            return cls.strict()
        if token == "endpoint":
            return cls.endpoint_only()
        if token.startswith("tol:"):
            return cls.length_tolerance(int(token.split(":", 1)[1]))
        raise ValueError(f"unknown mode {token!r}")

    def length_ok(self, length: int, whitelisted: set[int]) -> bool:
        if self.kind == "endpoint":
            return True
        if self.kind == "strict":
            return length in whitelisted
        return any(abs(length - w) <= self.tolerance for w in whitelisted)


class Reason(Enum):
    EXACT = "EXACT"
    PARTIAL_HOSTNAME = "PARTIAL_HOSTNAME"
    NO_ENDPOINT = "NO_ENDPOINT"
    LENGTH_MISMATCH = "LENGTH_MISMATCH"


class Outcome(Enum):
    BENIGN = "BENIGN"
    SUSPICIOUS = "SUSPICIOUS"


BENIGN_REASONS = frozenset({Reason.EXACT, Reason.PARTIAL_HOSTNAME})


@dataclass
class Verdict:
    packet_index: int
    device_mac: str
    entry: ProfileEntry
    outcome: Outcome
    reason: Reason

    @classmethod
    def from_reason(cls, packet_index: int, entry: ProfileEntry, reason: Reason) -> "Verdict":
        outcome = Outcome.BENIGN if reason in BENIGN_REASONS else Outcome.SUSPICIOUS
        return cls(packet_index, entry.device_mac, entry, outcome, reason)

    def to_json(self) -> dict:
        return {
            "idx": self.packet_index,
            "mac": self.device_mac,
            "endpoint": self.entry.external_address,
            "direction": self.entry.direction.value,
            "length": self.entry.length,
            "outcome": self.outcome.value,
            "reason": self.reason.value,
        }


def is_ip_endpoint(address: str) -> bool:
    try:
        ipaddress.IPv4Address(address)
        return True
    except ValueError:
        return False


def registrable_domain(name: str) -> str:
    """Last two labels of a hostname; IPs and single labels pass through."""
    if is_ip_endpoint(name):
        return name
    labels = name.split(".")
    if len(labels) < 2:
        return name
    return ".".join(labels[-2:])


def mask_digits(s: str) -> str:
    return s.translate(_DIGIT_MASK)


def lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(cur[j - 1], prev[j]))
        prev = cur
    return prev[-1]


def name_similarity(a: str, b: str) -> float:
    """Similarity of two endpoint names in [0, 1].

    Decimal digits are masked out first (shard numbers and embedded IP
    octets carry no identity), then 2*LCS / (len+len) over the masked
    strings.  1.0 exactly when the masked strings are equal.
    """
    a, b = mask_digits(a), mask_digits(b)
    if not a and not b:
        return 1.0
    return 2.0 * lcs_length(a, b) / (len(a) + len(b))


def match_entry(entry: ProfileEntry, profile: DeviceProfile, mode: MatchMode) -> Reason:
    """Match one derived entry against a device profile.

    Exact endpoint+direction key first; otherwise scan same-direction
    hostname keys in the same registrable domain at or above the
    similarity threshold, best similarity first (ties broken by smaller
    key).  Raw-IP endpoints never participate in partial matching.
    """
    if entry.device_mac != profile.device_mac:
        raise MacMismatch(f"entry {entry.device_mac} vs profile {profile.device_mac}")
    whitelisted = profile.index.get(entry.key)
    endpoint_hit = whitelisted is not None
    if whitelisted is not None and mode.length_ok(entry.length, whitelisted):
        return Reason.EXACT
    if not is_ip_endpoint(entry.external_address):
        domain = registrable_domain(entry.external_address)
        candidates = []
        for (address, direction), lengths in profile.index.items():
            if direction is not entry.direction or address == entry.external_address:
                continue
            if is_ip_endpoint(address) or registrable_domain(address) != domain:
                continue
            similarity = name_similarity(entry.external_address, address)
            if similarity >= mode.similarity_threshold:
                candidates.append((-similarity, address, lengths))
        candidates.sort(key=lambda c: c[:2])
        for _, _, lengths in candidates:
            endpoint_hit = True
            if mode.length_ok(entry.length, lengths):
                return Reason.PARTIAL_HOSTNAME
    return Reason.LENGTH_MISMATCH if endpoint_hit else Reason.NO_ENDPOINT


def classify_packet(
    idx: int,
    rec: PacketRecord,
    cfg: NetworkConfig,
    hostnames: HostnameMap,
    profiles: dict[str, DeviceProfile],
    mode: MatchMode,
) -> Verdict | None:
    """One packet through the whole path: learn DNS, build entry, match.

    None for config packets and unmonitored MACs.
    """
    resp = dns.response_or_none(rec)
    if resp is not None:
        hostnames.update_from_response(resp)
    try:
        entry = build_entry(rec, cfg, hostnames)
    except BothMonitored:
        entry = None
    if entry is None:
        return None
    profile = profiles.get(entry.device_mac)
    if profile is None:
        profile = profiles.setdefault(entry.device_mac, DeviceProfile(entry.device_mac, entry.device_name))
    return Verdict.from_reason(idx, entry, match_entry(entry, profile, mode))


def monitor_stream(
    records: Iterable[PacketRecord],
    cfg: NetworkConfig,
    hostnames: HostnameMap,
    profiles: dict[str, DeviceProfile],
    mode: MatchMode,
    store: ProfileStore | None = None,
) -> Iterator[Verdict]:
    """Classify a packet stream against loaded profiles.

    DNS responses update the hostname map on the fly; config packets and
    unmonitored MACs yield no verdict.  Profiles are looked up per packet,
    so entries learned between verdicts take effect immediately.  With a
    store attached, profiles are flushed and the MAC list re-read every
    cfg.checkpoint_interval packets.
    """
    seen = 0
    for idx, rec in enumerate(records):
        seen += 1
        verdict = classify_packet(idx, rec, cfg, hostnames, profiles, mode)
        if verdict is not None:
            yield verdict
        if store is not None and seen % cfg.checkpoint_interval == 0:
            store.save(profiles)
            macs = store.monitored_macs()
            if macs is not None and macs != cfg.monitored_macs:
                cfg = dataclasses.replace(cfg, monitored_macs=macs)


def write_verdicts(verdicts: Iterable[Verdict], out: IO[str]) -> int:
    """Stream verdicts as JSON Lines; returns the count written."""
    n = 0
    for v in verdicts:
        out.write(json.dumps(v.to_json(), separators=(",", ":")) + "\n")
        n += 1
    return n
