"""Challenge-response attestation over a real TCP socket.

Starts an agent server, runs a healthy exchange, then shows the three
rejection paths: a tampered report, a replayed challenge, and a device
signing with the wrong key.
"""

from madea import (
    AgentServer,
    DeviceAgent,
    TcpTransport,
    Verifier,
    decode_msg,
    encode_msg,
    generate_keypair,
    reference_of,
)
from madea.errors import BadSignature, StaleChallenge, WireError

MAC = "64:16:66:49:3e:cb"

table = {"usr/bin/bulbd": b"\x7fELF bulb daemon"}
private_key, public_key = generate_keypair()
agent = DeviceAgent(MAC, lambda: table, reference_of(table), private_key)
server = AgentServer(agent, "127.0.0.1", 0)
server.start()
host, port = server.address
print(f"agent listening on {host}:{port}")

verifier = Verifier({MAC: public_key})
transport = TcpTransport(host, port)

report = verifier.attest_device(MAC, transport, timeout=5.0)
print(f"healthy exchange: verdict={report.verdict.value}, "
      f"signature {len(report.signature)} bytes over challenge+verdict+divergences")

# tamper with one byte of the serialized report
request = verifier.new_request(MAC)
frame = bytearray(transport.exchange(encode_msg(request)))
frame[-20] ^= 0x01
try:
    verifier.check(decode_msg(bytes(frame)), request)
except (BadSignature, WireError) as exc:
    print(f"tampered frame rejected: {type(exc).__name__}")

# replay: the same report cannot answer twice
request = verifier.new_request(MAC)
report = decode_msg(transport.exchange(encode_msg(request)))
verifier.check(report, request)
try:
    verifier.check(report, request)
except StaleChallenge as exc:
    print(f"replay rejected: StaleChallenge ({exc})")

# a device signing with an unregistered key never verifies
rogue_key, _ = generate_keypair()
rogue = DeviceAgent(MAC, lambda: table, reference_of(table), rogue_key)
request = verifier.new_request(MAC)
forged = rogue.handle(request)
try:
    verifier.check(forged, request)
except BadSignature:
    print("forged signature rejected: BadSignature")

server.stop()
print("server stopped")
