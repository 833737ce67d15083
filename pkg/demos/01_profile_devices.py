"""Train whitelist profiles for a pair of simulated smart-home devices.

Synthesizes a benign capture (with DNS preambles so endpoints get learned
as hostnames), trains one profile per device, and prints the profile CSV
plus the storage accounting.
"""

import io

from madea import (
    FlowSpec,
    HostnameMap,
    NetworkConfig,
    generate_trace,
    save_profiles,
    storage_bound,
    train,
    write_pcap,
)

GATEWAY = "dc:a6:32:ce:31:63"
BULB = "64:16:66:49:3e:cb"
THERMOSTAT = "34:6f:92:1d:ba:50"

cfg = NetworkConfig(
    monitored_macs={BULB, THERMOSTAT},
    gateway_mac=GATEWAY,
    device_names={BULB: "Lumiman Bulb", THERMOSTAT: "Sensi Thermostat"},
)

script = [
    # the bulb talks to its vendor cloud, found via DNS
    FlowSpec(
        device_mac=BULB, peer_mac=GATEWAY, device_ip="192.168.4.230",
        peer_ip="54.212.163.173", hostname="m2.tuyaus.com",
        device_port=40001, peer_port=8886,
        packets=[(True, 54), (False, 54), (True, 91), (False, 172)],
    ),
    # the thermostat keeps a long-lived connection to its service
    FlowSpec(
        device_mac=THERMOSTAT, peer_mac=GATEWAY, device_ip="192.168.4.234",
        peer_ip="52.26.100.7", hostname="icda.sensicomfort.com",
        device_port=40002, peer_port=443,
        packets=[(True, 58), (False, 58), (True, 104), (False, 144), (True, 255)],
    ),
    # local control traffic from the user's phone
    FlowSpec(
        device_mac=THERMOSTAT, peer_mac="3c:22:fb:10:20:30", device_ip="192.168.4.234",
        peer_ip="192.168.4.1", device_port=8899, peer_port=52000,
        packets=[(False, 62), (False, 86)],
    ),
]

records = generate_trace(script, seed=1)
print(f"synthesized {len(records)} packets "
      f"({sum(1 for r in records if r.src_port == 53)} DNS preambles)")
print(f"capture would be {len(write_pcap(records))} bytes on disk\n")

hostnames = HostnameMap()
profiles = train(records, cfg, hostnames)

out = io.StringIO()
save_profiles(profiles, out)
print(out.getvalue())

print("learned hostname mappings:")
for ip, host in sorted(hostnames.map.items()):
    print(f"  {ip} -> {host}")

stats = storage_bound(profiles)
print(f"\nstorage: {stats.n_actual} entries across {stats.devices} devices; "
      f"bound d*e*l = {stats.devices} * {stats.e_avg:.1f} * {stats.l_avg:.1f} "
      f"= {stats.bound:.0f} (hard cap {stats.bound_max:.0f})")
