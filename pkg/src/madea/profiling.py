"""Whitelist profile construction from benign device traffic.

A profile entry is the 4-tuple (device MAC, external address, direction,
frame length).  Profiles key entries by MAC rather than IP so address
churn does not invalidate them; external addresses prefer hostnames
learned from DNS responses, then an injected reverse-lookup table, then
the raw dotted quad.
"""

from __future__ import annotations

import csv
import dataclasses
import ipaddress
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from . import dns
from .errors import BothMonitored, ParseError
from .pcap import ETHERTYPE_ARP, ETHERTYPE_EAPOL, PacketRecord, Transport

# ports whose traffic is configuration noise, not device behavior:
# DNS, DHCP/BOOTP server+client, NTP, mDNS
CONFIG_PORTS = frozenset({53, 67, 68, 123, 5353})
MDNS_PORT = 5353

DEFAULT_LOCAL_CIDRS = ("192.168.0.0/16", "10.0.0.0/8", "172.16.0.0/12")
DEFAULT_CHECKPOINT_INTERVAL = 20_000

PROFILE_CSV_HEADER = ["DEVICE MAC", "PACKET DIRECTION", "EXTERNAL ADDRESS", "PACKET LENGTH", "DEVICE NAME"]
HOSTNAME_CSV_HEADER = ["IP", "HOSTNAME"]


class Direction(Enum):
    SERVER_TO_DEVICE = "SERVER_TO_DEVICE"
    DEVICE_TO_SERVER = "DEVICE_TO_SERVER"
    DEVICE_TO_USER = "DEVICE_TO_USER"
    USER_TO_DEVICE = "USER_TO_DEVICE"


@dataclass(frozen=True)
class ProfileEntry:
    device_mac: str
    external_address: str
    direction: Direction
    length: int
    device_name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.external_address or self.external_address != self.external_address.strip().lower():
            raise ParseError(f"bad external address {self.external_address!r}")
        if self.length <= 0:
            raise ParseError(f"bad length {self.length}")

    @property
    def key(self) -> tuple[str, Direction]:
        return (self.external_address, self.direction)


@dataclass
class DeviceProfile:
    """All whitelisted entries of one device, indexed for O(1) matching."""

    device_mac: str
    device_name: str = ""
    index: dict[tuple[str, Direction], set[int]] = field(default_factory=dict)

    def add(self, entry: ProfileEntry) -> None:
        self.index.setdefault(entry.key, set()).add(entry.length)

    def __contains__(self, entry: ProfileEntry) -> bool:
        return entry.length in self.index.get(entry.key, ())

    def entry_count(self) -> int:
        return sum(len(lengths) for lengths in self.index.values())

    def entries(self) -> Iterator[ProfileEntry]:
        """Entries sorted by (external address, direction, length)."""
        for (addr, direction), lengths in sorted(self.index.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            for length in sorted(lengths):
                yield ProfileEntry(self.device_mac, addr, direction, length, self.device_name)


class HostnameMap:
    """IP-to-hostname mapping learned from DNS answers; latest answer wins."""

    def __init__(self, initial: dict[str, str] | None = None):
        self.map: dict[str, str] = dict(initial or {})

    def learn(self, ip: str, hostname: str) -> None:
        self.map[ip] = hostname.strip().lower()

    def lookup(self, ip: str) -> str | None:
        return self.map.get(ip)

    def update_from_response(self, resp) -> None:
        # every A answer maps to the queried name, so CNAME chains collapse
        # onto the hostname the device actually asked for
        for _, rtype, ip in resp.answers:
            if rtype == dns.TYPE_A:
                self.learn(ip, resp.query_name)

    def save(self, dest: str | Path | TextIO) -> None:
        _write_csv(dest, HOSTNAME_CSV_HEADER, sorted(self.map.items()))

    @classmethod
    def load(cls, src: str | Path | TextIO) -> "HostnameMap":
        m = cls()
        for n, row in _read_csv(src, HOSTNAME_CSV_HEADER):
            if len(row) != 2:
                raise ParseError(f"expected IP,HOSTNAME, got {row!r}", row=n)
            m.learn(row[0], row[1])
        return m


@dataclass
class NetworkConfig:
    monitored_macs: set[str]
    gateway_mac: str = ""
    local_cidrs: tuple[str, ...] = DEFAULT_LOCAL_CIDRS
    reverse_dns: dict[str, str] = field(default_factory=dict)
    device_names: dict[str, str] = field(default_factory=dict)
    keep_multicast: bool = False
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL

    def __post_init__(self):
        self.monitored_macs = {m.strip().lower() for m in self.monitored_macs}
        self.gateway_mac = self.gateway_mac.strip().lower()
        self.monitored_macs.discard(self.gateway_mac)
        self.reverse_dns = {ip: h.strip().lower() for ip, h in self.reverse_dns.items()}
        self._networks = [ipaddress.ip_network(c) for c in self.local_cidrs]
        self._local_cache: dict[str, bool] = {}

    def is_local(self, ip: str) -> bool:
        hit = self._local_cache.get(ip)
        if hit is None:
            addr = ipaddress.ip_address(ip)
            hit = any(addr in net for net in self._networks)
            self._local_cache[ip] = hit
        return hit

    def name_of(self, mac: str) -> str:
        return self.device_names.get(mac, mac)


def load_config(path: str | Path) -> NetworkConfig:
    """Parse a flat key=value config file.

    Keys: monitored_macs, gateway_mac, local_cidrs, reverse_dns (path to an
    IP,HOSTNAME csv, relative to the config file), keep_multicast,
    checkpoint_interval, device_name.<mac>=<label>.
    """
    path = Path(path)
    values: dict[str, str] = {}
    names: dict[str, str] = {}
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", row=n)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("device_name."):
            names[key.removeprefix("device_name.").lower()] = value
        else:
            values[key] = value
    reverse: dict[str, str] = {}
    if values.get("reverse_dns"):
        rd_path = path.parent / values["reverse_dns"]
        reverse = HostnameMap.load(rd_path).map
    return NetworkConfig(
        monitored_macs=set(filter(None, values.get("monitored_macs", "").split(","))),
        gateway_mac=values.get("gateway_mac", ""),
        local_cidrs=tuple(filter(None, values.get("local_cidrs", "").split(","))) or DEFAULT_LOCAL_CIDRS,
        reverse_dns=reverse,
        device_names=names,
        keep_multicast=values.get("keep_multicast", "false").lower() in ("1", "true", "yes"),
        checkpoint_interval=int(values.get("checkpoint_interval", DEFAULT_CHECKPOINT_INTERVAL)),
    )


def is_config_packet(rec: PacketRecord, keep_multicast: bool = False) -> bool:
    """True for protocol housekeeping (ARP, EAPOL, DNS, DHCP/BOOTP, NTP, mDNS)."""
    if rec.ethertype in (ETHERTYPE_ARP, ETHERTYPE_EAPOL):
        return True
    if rec.transport in (Transport.TCP, Transport.UDP):
        for port in (rec.src_port, rec.dst_port):
            if port in CONFIG_PORTS and not (keep_multicast and port == MDNS_PORT):
                return True
    return False


def resolve_direction(rec: PacketRecord, cfg: NetworkConfig) -> tuple[str, Direction, str] | None:
    """(device MAC, direction, external IP) for a monitored packet, else None.

    Raises BothMonitored when both MACs are monitored devices; the system
    model routes everything through the gateway, so that never happens in
    legitimate traffic.
    """
    if rec.src_ip is None or rec.dst_ip is None:
        return None
    src_mon = rec.src_mac in cfg.monitored_macs
    dst_mon = rec.dst_mac in cfg.monitored_macs
    if src_mon and dst_mon:
        raise BothMonitored(f"{rec.src_mac} -> {rec.dst_mac}")
    if src_mon:
        direction = Direction.DEVICE_TO_USER if cfg.is_local(rec.dst_ip) else Direction.DEVICE_TO_SERVER
        return rec.src_mac, direction, rec.dst_ip
    if dst_mon:
        direction = Direction.USER_TO_DEVICE if cfg.is_local(rec.src_ip) else Direction.SERVER_TO_DEVICE
        return rec.dst_mac, direction, rec.src_ip
    return None


def external_address_of(ip: str, hostnames: HostnameMap, cfg: NetworkConfig) -> str:
    """Best name for a peer: learned hostname, then reverse lookup, then the IP."""
    if cfg.is_local(ip):
        return ip
    return hostnames.lookup(ip) or cfg.reverse_dns.get(ip) or ip


def build_entry(rec: PacketRecord, cfg: NetworkConfig, hostnames: HostnameMap) -> ProfileEntry | None:
    """Profile entry for one packet, or None for config/unmonitored traffic."""
    if is_config_packet(rec, cfg.keep_multicast):
        return None
    resolved = resolve_direction(rec, cfg)
    if resolved is None:
        return None
    mac, direction, ext_ip = resolved
    address = external_address_of(ext_ip, hostnames, cfg)
    return ProfileEntry(mac, address, direction, rec.frame_len, cfg.name_of(mac))


class ProfileStore:
    """Directory-backed persistence: profiles.csv plus an editable MAC list.

    Single writer, many readers; writes go through a temp file + rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.profiles_path = self.root / "profiles.csv"
        self.macs_path = self.root / "macs.txt"

    def save(self, profiles: dict[str, DeviceProfile]) -> None:
        tmp = self.profiles_path.with_suffix(".tmp")
        with open(tmp, "w", newline="") as f:
            save_profiles(profiles, f)
        os.replace(tmp, self.profiles_path)

    def load(self) -> dict[str, DeviceProfile]:
        if not self.profiles_path.exists():
            return {}
        return load_profiles(self.profiles_path)

    def monitored_macs(self) -> set[str] | None:
        """MACs from macs.txt (one per line), or None when the list is absent."""
        if not self.macs_path.exists():
            return None
        macs = set()
        for line in self.macs_path.read_text().splitlines():
            line = line.strip().lower()
            if line and not line.startswith("#"):
                macs.add(line)
        return macs

    def set_monitored_macs(self, macs: Iterable[str]) -> None:
        self.macs_path.write_text("".join(f"{m.strip().lower()}\n" for m in sorted(macs)))


class Profiler:
    """Streaming trainer: learns hostnames and accumulates profile entries.

    Every checkpoint_interval packets the profiles are flushed to the store
    (when one is attached) and the monitored-MAC list is re-read from it,
    so the device list can change mid-run.
    """

    def __init__(
        self,
        cfg: NetworkConfig,
        hostnames: HostnameMap | None = None,
        store: ProfileStore | None = None,
    ):
        self.cfg = cfg
        self.hostnames = hostnames if hostnames is not None else HostnameMap()
        self.store = store
        self.profiles: dict[str, DeviceProfile] = {}
        for mac in cfg.monitored_macs:
            self._ensure_profile(mac)
        self.packets = 0
        self.skipped = 0

    def _ensure_profile(self, mac: str) -> DeviceProfile:
        if mac not in self.profiles:
            self.profiles[mac] = DeviceProfile(mac, self.cfg.name_of(mac))
        return self.profiles[mac]

    def feed(self, rec: PacketRecord) -> ProfileEntry | None:
        self.packets += 1
        resp = dns.response_or_none(rec)
        if resp is not None:
            self.hostnames.update_from_response(resp)
        try:
            entry = build_entry(rec, self.cfg, self.hostnames)
        except BothMonitored:
            entry = None
        if entry is None:
            self.skipped += 1
        else:
            self._ensure_profile(entry.device_mac).add(entry)
        if self.packets % self.cfg.checkpoint_interval == 0:
            self.checkpoint()
        return entry

    def checkpoint(self) -> None:
        if self.store is None:
            return
        self.store.save(self.profiles)
        macs = self.store.monitored_macs()
        if macs is not None and macs != self.cfg.monitored_macs:
            self.cfg = dataclasses.replace(self.cfg, monitored_macs=macs)
            for mac in macs:
                self._ensure_profile(mac)

    def run(self, records: Iterable[PacketRecord]) -> dict[str, DeviceProfile]:
        for rec in records:
            self.feed(rec)
        self.checkpoint()
        return self.profiles


def train(
    records: Iterable[PacketRecord],
    cfg: NetworkConfig,
    hostnames: HostnameMap | None = None,
    store: ProfileStore | None = None,
) -> dict[str, DeviceProfile]:
    """Build one profile per monitored MAC from a benign trace."""
    return Profiler(cfg, hostnames, store).run(records)


def _write_csv(dest: str | Path | TextIO, header: list[str], rows: Iterable) -> None:
    if hasattr(dest, "write"):
        w = csv.writer(dest)
        w.writerow(header)
        w.writerows(rows)
    else:
        with open(dest, "w", newline="") as f:
            _write_csv(f, header, rows)


def _read_csv(src: str | Path | TextIO, header: list[str]) -> Iterator[tuple[int, list[str]]]:
    if hasattr(src, "read"):
        rows = list(csv.reader(src))
    else:
        with open(src, newline="") as f:
            rows = list(csv.reader(f))
    if not rows or rows[0] != header:
        raise ParseError(f"expected header {','.join(header)}", row=1)
    for n, row in enumerate(rows[1:], start=2):
        if row:
            yield n, row


def save_profiles(profiles: dict[str, DeviceProfile] | Iterable[DeviceProfile], dest: str | Path | TextIO) -> None:
    """Write profiles as CSV, rows sorted for deterministic output."""
    values = profiles.values() if isinstance(profiles, dict) else profiles
    rows = []
    for prof in values:
        for e in prof.entries():
            rows.append((e.device_mac, e.direction.value, e.external_address, e.length, e.device_name))
    rows.sort(key=lambda r: (r[0], r[2], r[1], r[3]))
    _write_csv(dest, PROFILE_CSV_HEADER, rows)


def load_profiles(src: str | Path | TextIO) -> dict[str, DeviceProfile]:
    profiles: dict[str, DeviceProfile] = {}
    for n, row in _read_csv(src, PROFILE_CSV_HEADER):
        if len(row) != 5:
            raise ParseError(f"expected 5 columns, got {len(row)}", row=n)
        mac, direction_token, address, length_token, name = row
        try:
            direction = Direction(direction_token)
        except ValueError:
            raise ParseError(f"unknown direction {direction_token!r}", row=n) from None
        try:
            length = int(length_token)
        except ValueError:
            raise ParseError(f"bad length {length_token!r}", row=n) from None
        try:
            entry = ProfileEntry(mac.strip().lower(), address.strip().lower(), direction, length, name)
        except ParseError as exc:
            raise ParseError(str(exc), row=n) from None
        prof = profiles.setdefault(entry.device_mac, DeviceProfile(entry.device_mac, name))
        prof.add(entry)
    return profiles
