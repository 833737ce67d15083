"""Monitor a device that gets infected mid-capture.

The monitored stream replays the benign traffic and then the bot's
command-and-control conversation.  Every packet is matched against the
profile; the C&C packets miss the whitelist and come out SUSPICIOUS.
"""

import sys

from madea import (
    FlowSpec,
    HostnameMap,
    MatchMode,
    NetworkConfig,
    Transport,
    compute_rates,
    generate_trace,
    labeled_trace,
    length_histogram,
    monitor_stream,
    train,
    write_verdicts,
)
from madea.reporting import count_device_packets, rates_csv
from madea.tracegen import MALICIOUS

GATEWAY = "dc:a6:32:ce:31:63"
BULB = "64:16:66:49:3e:cb"

cfg = NetworkConfig(monitored_macs={BULB}, gateway_mac=GATEWAY,
                    device_names={BULB: "RPi Smart Bulb"})

benign = [FlowSpec(
    device_mac=BULB, peer_mac=GATEWAY, device_ip="192.168.4.230",
    peer_ip="54.212.163.173", hostname="m2.tuyaus.com",
    device_port=40001, peer_port=8886,
    packets=[(True, 54), (False, 54), (True, 91)] * 4,
)]

# classic bot shapes: TCP control segments and heartbeats to the C&C host
malware = [FlowSpec(
    device_mac=BULB, peer_mac=GATEWAY, device_ip="192.168.4.230",
    peer_ip="198.98.50.97", transport=Transport.TCP,
    device_port=51234, peer_port=23,
    packets=[(True, 74), (False, 74), (True, 66), (True, 66), (False, 120)],
    label=MALICIOUS,
)]

training = generate_trace(benign, seed=1)
profiles = train(training, cfg)
records, labels = labeled_trace(benign + malware, seed=2)

print("verdict stream (JSON Lines):")
verdicts = list(monitor_stream(records, cfg, HostnameMap(), profiles, MatchMode.strict()))
write_verdicts(verdicts, sys.stdout)

print("\nper-device rates:")
reports = compute_rates(records, cfg, profiles, labels=labels,
                        training_packets=count_device_packets(training, profiles))
rates_csv(reports, sys.stdout, dedup=True)

hist = length_histogram(records, labels)
print("\nframe-length histogram per class:")
for label in sorted(hist):
    row = ", ".join(f"{length}:{count}" for length, count in sorted(hist[label].items()))
    print(f"  {label:10s} {row}")
