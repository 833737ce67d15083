"""Shared scenario builders: a simulated smart bulb, its benign command
traffic, and botnet-style malware flows."""

from __future__ import annotations

import pytest

from madea.attestation import (
    DeviceAgent,
    LoopbackTransport,
    Verifier,
    generate_keypair,
    reference_of,
)
from madea.pcap import Transport
from madea.profiling import HostnameMap, NetworkConfig
from madea.tracegen import MALICIOUS, FlowSpec

BULB_MAC = "64:16:66:49:3e:cb"
GATEWAY_MAC = "dc:a6:32:ce:31:63"
USER_MAC = "3c:22:fb:10:20:30"
BULB_IP = "192.168.4.230"
USER_IP = "192.168.4.50"
CCC_IP = "198.98.50.97"

# benign bulb conversation: command from the user device, reply from the bulb
TURN_ON = (False, 49, "turn_on")
TURN_ON_REPLY = (True, 95, '{"status": "200", "message": "Light bulb turned on."}')
TURN_OFF = (False, 50, "turn_off")
TURN_OFF_REPLY = (True, 96, '{"status": "200", "message": "Light bulb turned off."}')
STATUS = (False, 48, "status")
STATUS_REPLY = (True, 102, '{"status": "200", "message": "Light bulb is currently off."}')


def bulb_flow(packets, **overrides) -> FlowSpec:
    defaults = dict(
        device_mac=BULB_MAC,
        peer_mac=USER_MAC,
        device_ip=BULB_IP,
        peer_ip=USER_IP,
        device_port=8899,
        peer_port=52000,
        packets=packets,
    )
    defaults.update(overrides)
    return FlowSpec(**defaults)


def ccc_flow(device_mac=BULB_MAC, device_ip=BULB_IP, peer_ip=CCC_IP, packets=None, **overrides) -> FlowSpec:
    """Command-and-control traffic: TCP control segments to an unseen host."""
    defaults = dict(
        device_mac=device_mac,
        peer_mac=GATEWAY_MAC,
        device_ip=device_ip,
        peer_ip=peer_ip,
        device_port=51234,
        peer_port=23,
        transport=Transport.TCP,
        packets=packets if packets is not None else [(True, 74), (False, 74), (True, 66)],
        label=MALICIOUS,
    )
    defaults.update(overrides)
    return FlowSpec(**defaults)


@pytest.fixture
def bulb_cfg() -> NetworkConfig:
    return NetworkConfig(
        monitored_macs={BULB_MAC},
        gateway_mac=GATEWAY_MAC,
        device_names={BULB_MAC: "RPi Smart Bulb"},
    )


@pytest.fixture
def bulb_training_flows() -> list[FlowSpec]:
    return [
        bulb_flow([TURN_ON, TURN_ON_REPLY]),
        bulb_flow([TURN_OFF, TURN_OFF_REPLY]),
    ]


class AgentSetup:
    """One enrolled simulated device: process table, keys, verifier, transport."""

    def __init__(self, mac: str = BULB_MAC):
        self.mac = mac
        self.table = {
            "usr/bin/bulb-controller": b"\x7fELF bulb controller build 17\n" * 8,
            "usr/bin/net-agent": b"\x7fELF net agent build 4\n" * 8,
            "usr/lib/libglow.so": b"\x7fELF glow library\n" * 16,
        }
        self.private_key, self.public_key = generate_keypair()
        self.reference = reference_of(self.table)
        self.agent = DeviceAgent(mac, lambda: self.table, self.reference, self.private_key)
        self.transport = LoopbackTransport(self.agent)
        self.verifier = Verifier({mac: self.public_key})

    def infect(self, path: str = "tmp/.hidden/botworm", blob: bytes = b"\x7fELF exfil loop\n" * 4) -> str:
        self.table[path] = blob
        return path

    def mutate(self, path: str = "usr/bin/bulb-controller") -> str:
        self.table[path] = self.table[path] + b"#"
        return path


@pytest.fixture
def bulb_agent() -> AgentSetup:
    return AgentSetup()


@pytest.fixture
def hostnames() -> HostnameMap:
    return HostnameMap()
