"""The full feedback loop, both ways.

Case 1: a brand-new command arrives while the device is healthy.  The
suspicious packets trigger attestation, the device proves clean, and the
entries are learned; replaying the command later is silent.

Case 2: a bot binary lands on the device.  Its C&C traffic triggers
attestation, the measurement diverges, and an alert names the new binary.
"""

from madea import (
    DeviceAgent,
    FlowSpec,
    LoopbackTransport,
    MatchMode,
    NetworkConfig,
    Verifier,
    generate_trace,
    generate_keypair,
    reference_of,
    run_pipeline,
)
from madea.pcap import Transport

GATEWAY = "dc:a6:32:ce:31:63"
BULB = "64:16:66:49:3e:cb"
USER = "3c:22:fb:10:20:30"

cfg = NetworkConfig(monitored_macs={BULB}, gateway_mac=GATEWAY,
                    device_names={BULB: "RPi Smart Bulb"})


def bulb_commands(packets):
    return FlowSpec(device_mac=BULB, peer_mac=USER, device_ip="192.168.4.230",
                    peer_ip="192.168.4.50", device_port=8899, peer_port=52000,
                    packets=packets)


training = generate_trace([bulb_commands([
    (False, 49, "turn_on"),
    (True, 95, '{"status": "200", "message": "Light bulb turned on."}'),
    (False, 50, "turn_off"),
    (True, 96, '{"status": "200", "message": "Light bulb turned off."}'),
])])

# enroll the simulated device: process table, reference measurement, keys
table = {
    "usr/bin/bulb-controller": b"\x7fELF bulb controller\n" * 8,
    "usr/bin/net-agent": b"\x7fELF net agent\n" * 8,
}
private_key, public_key = generate_keypair()
agent = DeviceAgent(BULB, lambda: table, reference_of(table), private_key)
verifier = Verifier({BULB: public_key})
transports = {BULB: LoopbackTransport(agent)}

print("=== Case 1: healthy device, unseen 'status' command ===")
status_exchange = generate_trace([bulb_commands([
    (False, 48, "status"),
    (True, 102, '{"status": "200", "message": "Light bulb is currently off."}'),
])])
result = run_pipeline(status_exchange, cfg, MatchMode.strict(), verifier, transports,
                      train_records=training)
print(f"attestations: {result.metrics.attestations}, learned: {result.metrics.learned}, "
      f"alerts: {result.metrics.alerts}")

replay = run_pipeline(status_exchange, cfg, MatchMode.strict(), verifier, transports,
                      profiles=result.profiles, hostnames=result.hostnames)
print(f"replaying the status command: attestations={replay.metrics.attestations}, "
      f"suspicious={replay.metrics.suspicious}  (whitelisted now)")

print("\n=== Case 2: infected device phones home ===")
table["tmp/.cache/botworm"] = b"\x7fELF exfiltration loop"
ccc = generate_trace([FlowSpec(
    device_mac=BULB, peer_mac=GATEWAY, device_ip="192.168.4.230",
    peer_ip="198.98.50.97", transport=Transport.TCP,
    device_port=51234, peer_port=23, packets=[(True, 74), (False, 74)],
)])
result = run_pipeline(ccc, cfg, MatchMode.strict(), verifier, transports,
                      profiles=result.profiles, hostnames=result.hostnames)
for alert in result.alerts:
    divergent = ", ".join(f"{d.kind.value} {d.path}" for d in alert.report.divergences)
    print(f"ALERT {alert.device_mac}: packet to {alert.trigger_entry.external_address} "
          f"len {alert.trigger_entry.length}; attestation found: {divergent}")
print(f"profile entries learned from malware traffic: {result.metrics.learned}")
