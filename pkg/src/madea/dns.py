"""DNS response parsing (RFC 1035 wire format) and test-vector encoding.

Only enough of the protocol for IP-to-hostname learning: the first question's
name and the A answers.  Compression pointers are resolved with a
visited-offset set so pointer cycles are rejected instead of looping.
"""

from __future__ import annotations

import struct
from typing import Sequence

from .errors import MalformedDns, NotAResponse
from .pcap import DnsResponse, PacketRecord, Transport, bytes_to_ip, ip_to_bytes

DNS_PORT = 53
TYPE_A = 1
TYPE_CNAME = 5
CLASS_IN = 1

_HDR = struct.Struct("!HHHHHH")


def _read_name(msg: bytes, pos: int) -> tuple[str, int]:
    """Decode a possibly-compressed name starting at pos.

    Returns (lowercased dotted name, position just past the name in the
    original stream).  Iterations are bounded by the message length.
    """
    labels: list[str] = []
    visited: set[int] = set()
    end = pos
    jumped = False
    for _ in range(len(msg) + 1):
        if pos >= len(msg):
            raise MalformedDns("name runs past message end")
        length = msg[pos]
        if length == 0:
            if not jumped:
                end = pos + 1
            return ".".join(labels).lower(), end
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(msg):
                raise MalformedDns("truncated compression pointer")
            target = ((length & 0x3F) << 8) | msg[pos + 1]
            if not jumped:
                end = pos + 2
                jumped = True
            if target in visited:
                raise MalformedDns(f"compression pointer cycle at offset {target}")
            visited.add(target)
            pos = target
            continue
        if length & 0xC0:
            raise MalformedDns(f"reserved label type 0x{length & 0xC0:02x}")
        if pos + 1 + length > len(msg):
            raise MalformedDns("label runs past message end")
        labels.append(msg[pos + 1:pos + 1 + length].decode("latin-1"))
        pos += 1 + length
    raise MalformedDns("name resolution did not terminate")


def parse_message(payload: bytes) -> DnsResponse:
    """Parse a DNS message payload; keep the query name and the A answers.

    Raises NotAResponse for queries (QR=0) and MalformedDns for anything
    that does not parse.
    """
    if len(payload) < _HDR.size:
        raise MalformedDns("message shorter than a DNS header")
    txn_id, flags, qdcount, ancount, _, _ = _HDR.unpack_from(payload)
    if not flags & 0x8000:
        raise NotAResponse(f"txn 0x{txn_id:04x} is a query")
    if qdcount < 1:
        raise MalformedDns("response without a question")
    pos = _HDR.size
    query_name = ""
    for i in range(qdcount):
        name, pos = _read_name(payload, pos)
        if pos + 4 > len(payload):
            raise MalformedDns("truncated question")
        pos += 4  # qtype, qclass
        if i == 0:
            query_name = name
    if not query_name:
        raise MalformedDns("empty query name")
    answers: list[tuple[str, int, str]] = []
    for _ in range(ancount):
        name, pos = _read_name(payload, pos)
        if pos + 10 > len(payload):
            raise MalformedDns("truncated answer")
        rtype, rclass, _, rdlength = struct.unpack_from("!HHIH", payload, pos)
        pos += 10
        if pos + rdlength > len(payload):
            raise MalformedDns("answer data runs past message end")
        if rtype == TYPE_A and rclass == CLASS_IN and rdlength == 4:
            answers.append((name, TYPE_A, bytes_to_ip(payload[pos:pos + 4])))
        pos += rdlength
    return DnsResponse(txn_id=txn_id, is_response=True, query_name=query_name, answers=answers)


def udp_payload(rec: PacketRecord) -> bytes:
    if rec.frame is None:
        raise MalformedDns("record carries no raw frame")
    frame = rec.frame
    if len(frame) < 34 or rec.transport is not Transport.UDP:
        raise MalformedDns("not a UDP frame")
    ihl = (frame[14] & 0x0F) * 4
    start = 14 + ihl + 8
    if start > len(frame):
        raise MalformedDns("frame too short for a UDP payload")
    return frame[start:]


def parse_dns_response(rec: PacketRecord) -> DnsResponse:
    """Parse the DNS response carried by a UDP port-53 record."""
    if rec.transport is not Transport.UDP or not rec.has_port(DNS_PORT):
        raise MalformedDns("record is not UDP port 53")
    if rec.dns is not None:
        return rec.dns
    return parse_message(udp_payload(rec))


def response_or_none(rec: PacketRecord) -> DnsResponse | None:
    """Tolerant variant for packet pipelines: None unless a response parses."""
    if rec.transport is not Transport.UDP or not rec.has_port(DNS_PORT):
        return None
    if rec.dns is not None:
        return rec.dns
    try:
        return parse_message(udp_payload(rec))
    except (MalformedDns, NotAResponse):
        return None


def encode_name(name: str) -> bytes:
    out = bytearray()
    for label in name.strip(".").split("."):
        raw = label.encode("latin-1")
        if not 1 <= len(raw) <= 63:
            raise MalformedDns(f"label {label!r} not in 1..63 bytes")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


def encode_response(
    txn_id: int,
    query_name: str,
    answers: Sequence[tuple[str, int, str]],
    *,
    compress: bool = True,
) -> bytes:
    """Build a response message: one question plus the given answer records.

    Answers are (owner name, record type, value) where the value is a dotted
    IPv4 for A records and a hostname for CNAME.  With compress=True, owner
    names equal to the query name are emitted as a pointer to offset 12.
    """
    out = bytearray(_HDR.pack(txn_id, 0x8180, 1, len(answers), 0, 0))
    out += encode_name(query_name)
    out += struct.pack("!HH", TYPE_A, CLASS_IN)
    for name, rtype, value in answers:
        if compress and name.lower() == query_name.lower():
            out += b"\xc0\x0c"
        else:
            out += encode_name(name)
        rdata = ip_to_bytes(value) if rtype == TYPE_A else encode_name(value)
        out += struct.pack("!HHIH", rtype, CLASS_IN, 300, len(rdata))
        out += rdata
    return bytes(out)
