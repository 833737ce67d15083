"""Classic PCAP reading/writing and Ethernet/IPv4/UDP/TCP frame decoding.

File layout (libpcap classic, link type 1 = Ethernet):

    global header : magic u32, version u16.u16, thiszone i32, sigfigs u32,
                    snaplen u32, network u32            (24 bytes)
    per record    : ts_sec u32, ts_usec u32, incl_len u32, orig_len u32
                    followed by incl_len captured bytes (16 + n bytes)

Byte order of every header field is given by the magic: a file starting with
bytes d4 c3 b2 a1 is little-endian, a1 b2 c3 d4 is big-endian.  Files we
write are always little-endian with incl_len == orig_len.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Iterator

from .errors import BadMagic, FrameTooShort, InvalidSpec, TruncatedRecord, UnsupportedLinkType

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_EAPOL = 0x888E

IPPROTO_TCP = 6
IPPROTO_UDP = 17
# protocol number written for synthesized IPv4 frames that are neither TCP nor UDP
IPPROTO_RAW = 0xFF

ETH_HDR_LEN = 14
IPV4_HDR_LEN = 20
UDP_HDR_LEN = 8
TCP_HDR_LEN = 20

_GLOBAL_HDR = struct.Struct("<IHHiIII")
_REC_HDR = struct.Struct("<IIII")


class Transport(Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


@dataclass
class DnsResponse:
    """Decoded DNS response: transaction id, queried name, and A answers."""

    txn_id: int
    is_response: bool
    query_name: str
    answers: list[tuple[str, int, str]] = field(default_factory=list)  # (name, type, ipv4)


@dataclass
class PacketRecord:
    """One decoded frame.

    ``frame`` carries the raw on-wire bytes when the record came from a
    capture or the trace generator; ``dns`` is a decoded view.  Both are
    derivable from the other fields and excluded from equality.
    """

    ts_sec: int
    ts_usec: int
    src_mac: str
    dst_mac: str
    ethertype: int
    frame_len: int
    transport: Transport = Transport.OTHER
    src_ip: str | None = None
    dst_ip: str | None = None
    src_port: int | None = None
    dst_port: int | None = None
    dns: DnsResponse | None = field(default=None, compare=False)
    frame: bytes | None = field(default=None, compare=False, repr=False)

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / 1_000_000.0

    def has_port(self, port: int) -> bool:
        return self.src_port == port or self.dst_port == port


def mac_to_bytes(mac: str) -> bytes:
    parts = mac.split(":")
    if len(parts) != 6:
        raise InvalidSpec(f"bad MAC address {mac!r}")
    try:
        return bytes(int(p, 16) for p in parts)
    except ValueError:
        raise InvalidSpec(f"bad MAC address {mac!r}") from None


def bytes_to_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ip_to_bytes(ip: str) -> bytes:
    try:
        return ipaddress.IPv4Address(ip).packed
    except (ipaddress.AddressValueError, ValueError):
        raise InvalidSpec(f"bad IPv4 address {ip!r}") from None


def bytes_to_ip(raw: bytes) -> str:
    return str(ipaddress.IPv4Address(raw))


def _ipv4_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def decode_frame(ts_sec: int, ts_usec: int, captured: bytes, orig_len: int | None = None) -> PacketRecord:
    """Decode an Ethernet frame into a PacketRecord.

    Total on any input of >= 14 bytes: garbage past the Ethernet header
    degrades to transport=OTHER with absent IP/port fields, never an error.
    """
    if len(captured) < ETH_HDR_LEN:
        raise FrameTooShort(f"frame of {len(captured)} bytes")
    rec = PacketRecord(
        ts_sec=ts_sec,
        ts_usec=ts_usec,
        src_mac=bytes_to_mac(captured[6:12]),
        dst_mac=bytes_to_mac(captured[0:6]),
        ethertype=(captured[12] << 8) | captured[13],
        frame_len=orig_len if orig_len is not None else len(captured),
        frame=captured,
    )
    if rec.ethertype != ETHERTYPE_IPV4 or len(captured) < ETH_HDR_LEN + IPV4_HDR_LEN:
        return rec
    vi = captured[14]
    version, ihl = vi >> 4, (vi & 0x0F) * 4
    if version != 4 or ihl < IPV4_HDR_LEN or len(captured) < ETH_HDR_LEN + ihl:
        return rec
    rec.src_ip = bytes_to_ip(captured[26:30])
    rec.dst_ip = bytes_to_ip(captured[30:34])
    proto = captured[23]
    l4 = ETH_HDR_LEN + ihl
    if proto in (IPPROTO_TCP, IPPROTO_UDP) and len(captured) >= l4 + 4:
        rec.transport = Transport.TCP if proto == IPPROTO_TCP else Transport.UDP
        rec.src_port = (captured[l4] << 8) | captured[l4 + 1]
        rec.dst_port = (captured[l4 + 2] << 8) | captured[l4 + 3]
    return rec


def synthesize_frame(
    src_mac: str,
    dst_mac: str,
    frame_len: int,
    *,
    ethertype: int = ETHERTYPE_IPV4,
    src_ip: str | None = None,
    dst_ip: str | None = None,
    transport: Transport = Transport.OTHER,
    src_port: int | None = None,
    dst_port: int | None = None,
    payload: bytes = b"",
    tcp_flags: int = 0x18,
) -> bytes:
    """Build on-wire bytes whose decode matches the given fields exactly.

    The payload is placed after the headers and zero-padded out to
    frame_len.  Raises InvalidSpec when frame_len cannot fit the header
    stack implied by the fields.
    """
    has_ip = src_ip is not None and dst_ip is not None
    if (src_ip is None) != (dst_ip is None):
        raise InvalidSpec("src_ip and dst_ip must be given together")
    if transport in (Transport.TCP, Transport.UDP):
        if not has_ip or src_port is None or dst_port is None:
            raise InvalidSpec(f"{transport.value} frame needs both IPs and both ports")
    if has_ip and ethertype != ETHERTYPE_IPV4:
        raise InvalidSpec("IPv4 addresses require ethertype 0x0800")

    eth = mac_to_bytes(dst_mac) + mac_to_bytes(src_mac) + struct.pack("!H", ethertype)
    if not has_ip:
        min_len = ETH_HDR_LEN
        body = b""
    else:
        if transport == Transport.UDP:
            l4_len = UDP_HDR_LEN
            proto = IPPROTO_UDP
        elif transport == Transport.TCP:
            l4_len = TCP_HDR_LEN
            proto = IPPROTO_TCP
        else:
            l4_len = 0
            proto = IPPROTO_RAW
        min_len = ETH_HDR_LEN + IPV4_HDR_LEN + l4_len
        if frame_len < min_len:
            raise InvalidSpec(f"frame_len {frame_len} below minimum {min_len} for {transport.value}")
        ip_total = frame_len - ETH_HDR_LEN
        hdr = struct.pack(
            "!BBHHHBBH4s4s",
            0x45, 0, ip_total, 0, 0, 64, proto, 0, ip_to_bytes(src_ip), ip_to_bytes(dst_ip),
        )
        hdr = hdr[:10] + struct.pack("!H", _ipv4_checksum(hdr)) + hdr[12:]
        if transport == Transport.UDP:
            l4 = struct.pack("!HHHH", src_port, dst_port, ip_total - IPV4_HDR_LEN, 0)
        elif transport == Transport.TCP:
            l4 = struct.pack("!HHIIBBHHH", src_port, dst_port, 0, 0, 5 << 4, tcp_flags, 65535, 0, 0)
        else:
            l4 = b""
        body = hdr + l4
    if frame_len < min_len:
        raise InvalidSpec(f"frame_len {frame_len} below minimum {min_len}")
    room = frame_len - min_len
    if len(payload) > room:
        raise InvalidSpec(f"payload of {len(payload)} bytes exceeds frame_len {frame_len}")
    return eth + body + payload + b"\x00" * (room - len(payload))


def frame_of(rec: PacketRecord) -> bytes:
    """Raw bytes for a record: the carried frame, or one synthesized from its fields."""
    if rec.frame is not None:
        return rec.frame
    return synthesize_frame(
        rec.src_mac,
        rec.dst_mac,
        rec.frame_len,
        ethertype=rec.ethertype,
        src_ip=rec.src_ip,
        dst_ip=rec.dst_ip,
        transport=rec.transport,
        src_port=rec.src_port,
        dst_port=rec.dst_port,
    )


def read_pcap(data: bytes | IO[bytes]) -> Iterator[PacketRecord]:
    """Yield PacketRecords from a classic PCAP byte stream, in file order.

    Accepts either byte order.  Raises BadMagic / UnsupportedLinkType up
    front, TruncatedRecord when the stream ends mid-record (after yielding
    every complete record before the cut).
    """
    buf = data if isinstance(data, (bytes, bytearray)) else data.read()
    if len(buf) < _GLOBAL_HDR.size:
        raise BadMagic("stream shorter than a pcap global header")
    lead = bytes(buf[:4])
    if lead == b"\xd4\xc3\xb2\xa1":
        order = "<"
    elif lead == b"\xa1\xb2\xc3\xd4":
        order = ">"
    else:
        raise BadMagic(f"magic {lead.hex()}")
    _, _, _, _, _, _, network = struct.unpack(order + "IHHiIII", buf[:24])
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {network}")
    rec_hdr = struct.Struct(order + "IIII")
    pos = 24
    while pos < len(buf):
        if pos + rec_hdr.size > len(buf):
            raise TruncatedRecord("stream ends inside a record header")
        ts_sec, ts_usec, incl_len, orig_len = rec_hdr.unpack_from(buf, pos)
        pos += rec_hdr.size
        if pos + incl_len > len(buf):
            raise TruncatedRecord(f"record needs {incl_len} bytes, {len(buf) - pos} left")
        yield decode_frame(ts_sec, ts_usec, bytes(buf[pos:pos + incl_len]), orig_len)
        pos += incl_len


def write_pcap(records: Iterable[PacketRecord]) -> bytes:
    """Serialize records to a canonical little-endian classic PCAP stream."""
    out = bytearray(_GLOBAL_HDR.pack(PCAP_MAGIC, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))
    for rec in records:
        frame = frame_of(rec)
        out += _REC_HDR.pack(rec.ts_sec, rec.ts_usec, len(frame), rec.frame_len)
        out += frame
    return bytes(out)
