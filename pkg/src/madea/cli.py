"""Command line front end.

    madea profile           train device profiles from a benign capture
    madea monitor           classify a capture against stored profiles
    madea run               train + monitor with the attestation loop inline
    madea report            rates | storage | energy | hist
    madea bench             per-packet matching latency
    madea agent             run a simulated device agent
    madea keygen            enroll a device key pair
    madea reference         measure a process directory into a reference file
    madea accept-reference  operator replacement of a stored reference

Agent map file (for ``run``): CSV ``MAC,ENDPOINT,PUBKEY`` where ENDPOINT is
``host:port`` for a listening agent or ``sim:<state-dir>`` for an in-process
one (state dir holds processes/, reference.csv, device.key), and PUBKEY is
the device's registered public key in hex.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import attestation, orchestrator, reporting
from .attestation import (
    AgentServer,
    DeviceAgent,
    LoopbackTransport,
    ReferenceMeasurement,
    TcpTransport,
    Verifier,
    generate_keypair,
    read_process_dir,
    reference_of,
    save_key,
)
from .monitoring import MatchMode, monitor_stream, write_verdicts
from .pcap import read_pcap
from .profiling import HostnameMap, ProfileStore, load_config, load_profiles, save_profiles, train


def _records(path: str) -> list:
    return list(read_pcap(Path(path).read_bytes()))


def _labels(path: str | None) -> list[str] | None:
    if path is None:
        return None
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def _load_agents(path: str, verifier: Verifier) -> dict[str, object]:
    transports: dict[str, object] = {}
    base = Path(path).parent
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["MAC", "ENDPOINT", "PUBKEY"]:
        raise SystemExit(f"{path}: expected header MAC,ENDPOINT,PUBKEY")
    for mac, endpoint, pubkey in rows[1:]:
        mac = mac.strip().lower()
        verifier.register(mac, bytes.fromhex(pubkey.strip()))
        if endpoint.startswith("sim:"):
            agent = DeviceAgent.from_dir(mac, base / endpoint.removeprefix("sim:"))
            transports[mac] = LoopbackTransport(agent)
        else:
            host, _, port = endpoint.rpartition(":")
            transports[mac] = TcpTransport(host, int(port))
    return transports


def _open_out(path: str | None):
    return open(path, "w") if path else sys.stdout


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    if args.keep_multicast:
        cfg.keep_multicast = True
    hostnames = HostnameMap()
    store = ProfileStore(args.store) if args.store else None
    profiles = train(_records(args.pcap), cfg, hostnames, store)
    save_profiles(profiles, args.out)
    if args.hostnames:
        hostnames.save(args.hostnames)
    total = sum(p.entry_count() for p in profiles.values())
    print(f"trained {len(profiles)} profiles, {total} entries -> {args.out}", file=sys.stderr)
    return 0


def cmd_monitor(args) -> int:
    cfg = load_config(args.config)
    profiles = load_profiles(args.profiles)
    hostnames = HostnameMap.load(args.hostnames) if args.hostnames else HostnameMap()
    mode = MatchMode.parse(args.mode)
    out = _open_out(args.verdicts)
    try:
        n = write_verdicts(monitor_stream(_records(args.pcap), cfg, hostnames, profiles, mode), out)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"{n} verdicts", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    mode = MatchMode.parse(args.mode)
    verifier = Verifier()
    transports = _load_agents(args.agents, verifier)
    profiles = load_profiles(args.profiles) if args.profiles else None
    store = ProfileStore(args.store) if args.store else None
    alert_file = open(args.alerts, "w") if args.alerts else None
    try:
        result = orchestrator.run_pipeline(
            _records(args.monitor),
            cfg,
            mode,
            verifier,
            transports,
            train_records=_records(args.train) if args.train else None,
            profiles=profiles,
            store=store,
            alert_out=alert_file,
            periodic_interval=args.periodic,
        )
    finally:
        if alert_file:
            alert_file.close()
    if args.verdicts:
        with open(args.verdicts, "w") as f:
            write_verdicts(result.verdicts, f)
    if args.out_profiles:
        save_profiles(result.profiles, args.out_profiles)
    metrics_out = json.dumps(result.metrics.to_json(), indent=2)
    if args.metrics:
        Path(args.metrics).write_text(metrics_out + "\n")
    else:
        print(metrics_out)
    for alert in result.alerts:
        print(f"ALERT {json.dumps(alert.to_json(), separators=(',', ':'))}", file=sys.stderr)
    return 1 if result.alerts else 0


def cmd_report(args) -> int:
    if args.what == "rates":
        cfg = load_config(args.config)
        profiles = load_profiles(args.profiles)
        hostnames = HostnameMap.load(args.hostnames) if args.hostnames else HostnameMap()
        training = None
        if args.train_pcap:
            training = reporting.count_device_packets(_records(args.train_pcap), profiles)
        reports = reporting.compute_rates(
            _records(args.pcap), cfg, profiles,
            hostnames=hostnames, labels=_labels(args.labels), training_packets=training,
        )
        reporting.rates_csv(reports, sys.stdout, dedup=args.dedup)
    elif args.what == "storage":
        bound = reporting.storage_bound(load_profiles(args.profiles))
        print(json.dumps(bound.to_json(), indent=2))
    elif args.what == "energy":
        model = reporting.EnergyModel(args.per_ra, horizon=args.horizon)
        table = reporting.energy_projection(model, [float(i) for i in args.intervals.split(",")])
        w = csv.writer(sys.stdout)
        w.writerow(["INTERVAL SECONDS", "ENERGY MWH"])
        for interval, mwh in table.items():
            w.writerow([int(interval), f"{mwh:.1f}"])
    elif args.what == "hist":
        records = _records(args.pcap)
        labels = _labels(args.labels)
        if labels is None:
            labels = [reporting.BENIGN] * len(records)
        reporting.histogram_csv(reporting.length_histogram(records, labels), sys.stdout)
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    profiles = load_profiles(args.profiles)
    hostnames = HostnameMap.load(args.hostnames) if args.hostnames else HostnameMap()
    report = reporting.bench_latency(
        _records(args.pcap), cfg, profiles, MatchMode.parse(args.mode),
        hostnames=hostnames, min_packets=args.min_packets,
    )
    print(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_agent(args) -> int:
    host, _, port = args.listen.rpartition(":")
    agent = DeviceAgent(
        args.mac,
        lambda: read_process_dir(args.process_dir),
        ReferenceMeasurement.load(args.reference),
        attestation.load_key(args.key),
    )
    server = AgentServer(agent, host or "127.0.0.1", int(port))
    print(f"agent {args.mac} listening on {server.address[0]}:{server.address[1]}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_keygen(args) -> int:
    private, public = generate_keypair()
    save_key(args.out, private)
    if args.pub:
        save_key(args.pub, public)
    print(public.hex())
    return 0


def cmd_reference(args) -> int:
    reference = reference_of(read_process_dir(args.process_dir))
    reference.save(args.out)
    print(f"{len(reference.expected)} processes -> {args.out}", file=sys.stderr)
    return 0


def cmd_accept_reference(args) -> int:
    orchestrator.accept_reference(args.stored, args.update)
    print(f"replaced {args.stored} from {args.update}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madea", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="train device profiles from a benign capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="profile CSV to write")
    p.add_argument("--hostnames", help="write the learned IP,HOSTNAME map here")
    p.add_argument("--store", help="profile store directory for checkpoints")
    p.add_argument("--keep-multicast", action="store_true", help="profile mDNS/multicast traffic too")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("monitor", help="classify a capture, no feedback loop")
    p.add_argument("--pcap", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--mode", default="strict", help="strict | endpoint | tol:<k>")
    p.add_argument("--hostnames", help="preload an IP,HOSTNAME map")
    p.add_argument("--verdicts", help="write verdicts JSONL here (default stdout)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("run", help="train + monitor with attestation feedback")
    p.add_argument("--train", help="benign training capture (omit with --profiles)")
    p.add_argument("--monitor", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", default="strict", help="strict | endpoint | tol:<k>")
    p.add_argument("--agents", required=True, help="MAC,ENDPOINT,PUBKEY map file")
    p.add_argument("--profiles", help="load pre-trained profiles instead of training")
    p.add_argument("--out-profiles", help="write updated profiles here")
    p.add_argument("--store", help="profile store directory for checkpoints")
    p.add_argument("--alerts", help="alerts JSONL file (always echoed to stderr)")
    p.add_argument("--metrics", help="metrics JSON file (default stdout)")
    p.add_argument("--verdicts", help="verdicts JSONL file")
    p.add_argument("--periodic", type=float, help="also attest every N trace seconds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="rates | storage | energy | hist")
    rsub = p.add_subparsers(dest="what", required=True)

    r = rsub.add_parser("rates")
    r.add_argument("--pcap", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--profiles", required=True)
    r.add_argument("--hostnames")
    r.add_argument("--labels", help="one benign/malicious label per packet")
    r.add_argument("--train-pcap", dest="train_pcap", help="fill the training packet counts")
    r.add_argument("--dedup", action="store_true", help="add unique-entry FPR columns")
    r.set_defaults(func=cmd_report)

    r = rsub.add_parser("storage")
    r.add_argument("--profiles", required=True)
    r.set_defaults(func=cmd_report)

    r = rsub.add_parser("energy")
    r.add_argument("--per-ra", type=float, required=True, dest="per_ra", help="mWh per attestation")
    r.add_argument("--intervals", default="3600,1800,600,300,60", help="comma-separated seconds")
    r.add_argument("--horizon", type=float, default=reporting.YEAR_SECONDS)
    r.set_defaults(func=cmd_report)

    r = rsub.add_parser("hist")
    r.add_argument("--pcap", required=True)
    r.add_argument("--labels", help="one label per packet; default all benign")
    r.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="per-packet classification latency")
    p.add_argument("--pcap", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--mode", default="strict")
    p.add_argument("--hostnames")
    p.add_argument("--min-packets", type=int, default=100_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("agent", help="serve attestation for a simulated device")
    p.add_argument("--listen", required=True, help="addr:port")
    p.add_argument("--process-dir", required=True, help="directory simulating the process table")
    p.add_argument("--reference", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--mac", required=True, help="device MAC this agent answers for")
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("keygen", help="enroll a device key pair")
    p.add_argument("--out", required=True, help="private key file")
    p.add_argument("--pub", help="public key file; hex also printed to stdout")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("reference", help="measure a process directory")
    p.add_argument("--process-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("accept-reference", help="operator reference replacement")
    p.add_argument("--stored", required=True)
    p.add_argument("--update", required=True, help="trusted new reference file")
    p.set_defaults(func=cmd_accept_reference)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
