"""Deterministic synthesis of device traffic traces.

A script is a list of FlowSpecs; each describes one device<->peer
conversation as (from_device, frame_len[, payload]) tuples.  Flows whose
peer is named by hostname get a DNS-response preamble emitted before any
flow traffic, so profile training can learn the address mapping first.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .dns import encode_response, parse_message, TYPE_A
from .errors import InvalidSpec
from .pcap import PacketRecord, Transport, synthesize_frame

BENIGN = "benign"
MALICIOUS = "malicious"

_BASE_TIME = 1_700_000_000.0


@dataclass
class FlowSpec:
    """One conversation between a monitored device and a single peer."""

    device_mac: str
    peer_mac: str
    device_ip: str
    peer_ip: str
    # (from_device, frame_len) or (from_device, frame_len, payload bytes)
    packets: Sequence[tuple]
    transport: Transport = Transport.UDP
    device_port: int = 49152
    peer_port: int = 8888
    hostname: str | None = None
    dns_server_ip: str = "192.168.4.1"
    label: str = BENIGN
    tcp_flags: int = 0x18


def _packet(flow: FlowSpec, shot: tuple, ts: float) -> PacketRecord:
    if len(shot) == 2:
        from_device, frame_len = shot
        payload = b""
    elif len(shot) == 3:
        from_device, frame_len, payload = shot
        if isinstance(payload, str):
            payload = payload.encode()
    else:
        raise InvalidSpec(f"packet tuple {shot!r} must be (from_device, frame_len[, payload])")
    if from_device:
        src_mac, dst_mac = flow.device_mac, flow.peer_mac
        src_ip, dst_ip = flow.device_ip, flow.peer_ip
        src_port, dst_port = flow.device_port, flow.peer_port
    else:
        src_mac, dst_mac = flow.peer_mac, flow.device_mac
        src_ip, dst_ip = flow.peer_ip, flow.device_ip
        src_port, dst_port = flow.peer_port, flow.device_port
    if src_mac == dst_mac:
        raise InvalidSpec("device and peer MAC must differ")
    frame = synthesize_frame(
        src_mac, dst_mac, frame_len,
        src_ip=src_ip, dst_ip=dst_ip, transport=flow.transport,
        src_port=src_port, dst_port=dst_port, payload=payload,
        tcp_flags=flow.tcp_flags,
    )
    sec, usec = divmod(round(ts * 1_000_000), 1_000_000)
    return PacketRecord(
        ts_sec=int(sec), ts_usec=int(usec),
        src_mac=src_mac, dst_mac=dst_mac, ethertype=0x0800,
        frame_len=frame_len, transport=flow.transport,
        src_ip=src_ip, dst_ip=dst_ip, src_port=src_port, dst_port=dst_port,
        frame=frame,
    )


def _preamble(flow: FlowSpec, txn_id: int, client_port: int, ts: float) -> PacketRecord:
    payload = encode_response(txn_id, flow.hostname, [(flow.hostname, TYPE_A, flow.peer_ip)])
    frame_len = 42 + len(payload)
    frame = synthesize_frame(
        flow.peer_mac, flow.device_mac, frame_len,
        src_ip=flow.dns_server_ip, dst_ip=flow.device_ip, transport=Transport.UDP,
        src_port=53, dst_port=client_port, payload=payload,
    )
    sec, usec = divmod(round(ts * 1_000_000), 1_000_000)
    return PacketRecord(
        ts_sec=int(sec), ts_usec=int(usec),
        src_mac=flow.peer_mac, dst_mac=flow.device_mac, ethertype=0x0800,
        frame_len=frame_len, transport=Transport.UDP,
        src_ip=flow.dns_server_ip, dst_ip=flow.device_ip,
        src_port=53, dst_port=client_port,
        dns=parse_message(payload), frame=frame,
    )


def labeled_trace(
    script: Sequence[FlowSpec],
    seed: int = 0,
    *,
    base_time: float = _BASE_TIME,
    gap: float = 0.001,
) -> tuple[list[PacketRecord], list[str]]:
    """Like generate_trace, plus a parallel benign/malicious label per packet."""
    rng = random.Random(seed)
    records: list[PacketRecord] = []
    labels: list[str] = []
    ts = base_time
    seen_names: set[tuple[str, str, str]] = set()
    for flow in script:
        if flow.hostname:
            key = (flow.device_mac, flow.hostname, flow.peer_ip)
            if key not in seen_names:
                seen_names.add(key)
                records.append(_preamble(flow, rng.randrange(0x10000), rng.randrange(49152, 65536), ts))
                labels.append(flow.label)
                ts += gap
    for flow in script:
        for shot in flow.packets:
            records.append(_packet(flow, shot, ts))
            labels.append(flow.label)
            ts += gap
    return records, labels


def generate_trace(script: Sequence[FlowSpec], seed: int = 0, **kwargs) -> list[PacketRecord]:
    """Deterministic trace for a script: DNS preambles first, then the flows."""
    records, _ = labeled_trace(script, seed, **kwargs)
    return records
