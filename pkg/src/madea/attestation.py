"""Challenge-response attestation of a simulated device's process table.

The device agent (prover) hashes the binary of every running process and
compares against a reference captured at enrollment; only divergences
travel back to the gateway (verifier), signed together with the challenge
under the device's Ed25519 key.  Messages are length-prefixed JSON frames:
4-byte big-endian length, then a UTF-8 JSON body.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .errors import (
    BadJson,
    BadSignature,
    ExtraData,
    FrameTooLarge,
    ParseError,
    ReportMismatch,
    ShortFrame,
    StaleChallenge,
    Timeout,
    UnknownType,
)

CHALLENGE_BYTES = 32
MAX_FRAME_BYTES = 1 << 20
DEFAULT_TIMEOUT = 5.0

REFERENCE_CSV_HEADER = ["PATH", "SHA256HEX"]


class Health(Enum):
    HEALTHY = "HEALTHY"
    INFECTED = "INFECTED"


class DivergenceKind(Enum):
    NEW_PROCESS = "NEW_PROCESS"
    DIGEST_MISMATCH = "DIGEST_MISMATCH"


@dataclass(frozen=True)
class Divergence:
    path: str
    kind: DivergenceKind
    observed_digest: bytes  # empty when the process is missing entirely


@dataclass(frozen=True)
class AttestationRequest:
    challenge: bytes
    device_mac: str
    issued_at: float


@dataclass(frozen=True)
class AttestationReport:
    challenge: bytes
    verdict: Health
    divergences: tuple[Divergence, ...]
    signature: bytes
    device_mac: str


@dataclass
class ReferenceMeasurement:
    """Expected per-process digests captured while the device was healthy."""

    expected: dict[str, bytes]

    def __post_init__(self):
        for path, digest in self.expected.items():
            if len(digest) != 32:
                raise ParseError(f"digest for {path!r} is {len(digest)} bytes, want 32")

    def save(self, dest: str | Path) -> None:
        lines = [",".join(REFERENCE_CSV_HEADER)]
        lines += [f"{p},{d.hex()}" for p, d in sorted(self.expected.items())]
        Path(dest).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, src: str | Path) -> "ReferenceMeasurement":
        rows = Path(src).read_text().splitlines()
        if not rows or rows[0] != ",".join(REFERENCE_CSV_HEADER):
            raise ParseError("expected header PATH,SHA256HEX", row=1)
        expected = {}
        for n, row in enumerate(rows[1:], start=2):
            if not row.strip():
                continue
            parts = row.split(",")
            if len(parts) != 2:
                raise ParseError(f"expected PATH,SHA256HEX, got {row!r}", row=n)
            try:
                expected[parts[0]] = bytes.fromhex(parts[1])
            except ValueError:
                raise ParseError(f"bad digest hex {parts[1]!r}", row=n) from None
        return cls(expected)


def measure(table: dict[str, bytes]) -> dict[str, bytes]:
    """SHA-256 of each process binary, keyed by path."""
    return {path: hashlib.sha256(binary).digest() for path, binary in table.items()}


def reference_of(table: dict[str, bytes]) -> ReferenceMeasurement:
    """Enrollment-time measurement of a known-healthy process table."""
    return ReferenceMeasurement(measure(table))


def read_process_dir(root: str | Path) -> dict[str, bytes]:
    """Process table simulated by a directory: relative path -> file bytes."""
    root = Path(root)
    table = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            table[p.relative_to(root).as_posix()] = p.read_bytes()
    return table


# --- keys ---------------------------------------------------------------------

def generate_keypair() -> tuple[bytes, bytes]:
    """(private, public) raw Ed25519 key bytes for one device enrollment."""
    priv = Ed25519PrivateKey.generate()
    return priv.private_bytes_raw(), priv.public_key().public_bytes_raw()


def public_key_of(private_key: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(private_key).public_key().public_bytes_raw()


def sign_bytes(private_key: bytes, payload: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(payload)


def signature_valid(public_key: bytes, payload: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, payload)
        return True
    except (InvalidSignature, ValueError):
        return False


def save_key(path: str | Path, key: bytes) -> None:
    Path(path).write_text(key.hex() + "\n")


def load_key(path: str | Path) -> bytes:
    return bytes.fromhex(Path(path).read_text().strip())


# --- report construction and verification --------------------------------------

def _canonical_divergences(divergences: Iterable[Divergence]) -> list[Divergence]:
    return sorted(divergences, key=lambda d: (d.path, d.kind.value))


def signed_payload(challenge: bytes, verdict: Health, divergences: Iterable[Divergence]) -> bytes:
    """The exact bytes covered by the report signature.

    challenge || verdict byte (0=healthy, 1=infected) || canonical JSON of
    the divergence list.
    """
    verdict_byte = b"\x00" if verdict is Health.HEALTHY else b"\x01"
    body = json.dumps(
        [
            {"kind": d.kind.value, "observed": d.observed_digest.hex(), "path": d.path}
            for d in _canonical_divergences(divergences)
        ],
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    return challenge + verdict_byte + body


def attest(
    table: dict[str, bytes],
    reference: ReferenceMeasurement,
    request: AttestationRequest,
    private_key: bytes,
) -> AttestationReport:
    """Measure the table, diff against the reference, sign the outcome.

    New paths are NEW_PROCESS; changed digests are DIGEST_MISMATCH; paths
    expected but not running are DIGEST_MISMATCH with an empty digest.
    """
    measured = measure(table)
    divergences = []
    for path, digest in measured.items():
        want = reference.expected.get(path)
        if want is None:
            divergences.append(Divergence(path, DivergenceKind.NEW_PROCESS, digest))
        elif digest != want:
            divergences.append(Divergence(path, DivergenceKind.DIGEST_MISMATCH, digest))
    for path in reference.expected:
        if path not in measured:
            divergences.append(Divergence(path, DivergenceKind.DIGEST_MISMATCH, b""))
    divergences = tuple(_canonical_divergences(divergences))
    verdict = Health.HEALTHY if not divergences else Health.INFECTED
    signature = sign_bytes(private_key, signed_payload(request.challenge, verdict, divergences))
    return AttestationReport(request.challenge, verdict, divergences, signature, request.device_mac)


def verify_report(
    report: AttestationReport,
    request: AttestationRequest,
    public_key: bytes,
    consumed: set[bytes] | None = None,
) -> None:
    """Accept a report or raise BadSignature / ReportMismatch / StaleChallenge.

    The signature is checked first, over the report's own contents, so any
    corruption of challenge, verdict, or divergences surfaces as
    BadSignature.  Accepting consumes the challenge: replays are stale.
    """
    payload = signed_payload(report.challenge, report.verdict, report.divergences)
    if not signature_valid(public_key, payload, report.signature):
        raise BadSignature(f"report for {report.device_mac}")
    if report.device_mac != request.device_mac:
        raise ReportMismatch(f"report names {report.device_mac}, request was for {request.device_mac}")
    if report.challenge != request.challenge:
        raise StaleChallenge("challenge does not match the request")
    if consumed is not None:
        if request.challenge in consumed:
            raise StaleChallenge("challenge already consumed")
        consumed.add(request.challenge)


# --- wire protocol --------------------------------------------------------------

def _to_body(msg: AttestationRequest | AttestationReport) -> dict:
    if isinstance(msg, AttestationRequest):
        return {
            "type": "attest_request",
            "challenge": msg.challenge.hex(),
            "mac": msg.device_mac,
            "issued_at": msg.issued_at,
        }
    return {
        "type": "attest_report",
        "challenge": msg.challenge.hex(),
        "mac": msg.device_mac,
        "verdict": msg.verdict.value,
        "divergences": [
            {"path": d.path, "kind": d.kind.value, "observed": d.observed_digest.hex()}
            for d in msg.divergences
        ],
        "signature": msg.signature.hex(),
    }


def _hex_field(body: dict, key: str) -> bytes:
    value = body.get(key)
    if not isinstance(value, str):
        raise BadJson(f"missing or non-string {key!r}")
    # canonical lowercase only: a case-flipped frame must not decode to the
    # same bytes and sail through signature verification
    if value != value.lower():
        raise BadJson(f"non-canonical hex in {key!r}")
    try:
        return bytes.fromhex(value)
    except ValueError:
        raise BadJson(f"bad hex in {key!r}") from None


def _from_body(body: dict) -> AttestationRequest | AttestationReport:
    kind = body.get("type")
    if kind == "attest_request":
        if not isinstance(body.get("mac"), str) or not isinstance(body.get("issued_at"), (int, float)):
            raise BadJson("malformed request fields")
        return AttestationRequest(_hex_field(body, "challenge"), body["mac"], float(body["issued_at"]))
    if kind == "attest_report":
        if not isinstance(body.get("mac"), str):
            raise BadJson("missing mac")
        try:
            verdict = Health(body.get("verdict"))
        except ValueError:
            raise BadJson(f"bad verdict {body.get('verdict')!r}") from None
        raw = body.get("divergences")
        if not isinstance(raw, list):
            raise BadJson("divergences must be a list")
        divergences = []
        for item in raw:
            if not isinstance(item, dict) or not isinstance(item.get("path"), str):
                raise BadJson("malformed divergence")
            try:
                dk = DivergenceKind(item.get("kind"))
            except ValueError:
                raise BadJson(f"bad divergence kind {item.get('kind')!r}") from None
            divergences.append(Divergence(item["path"], dk, _hex_field(item, "observed")))
        return AttestationReport(
            _hex_field(body, "challenge"),
            verdict,
            tuple(divergences),
            _hex_field(body, "signature"),
            body["mac"],
        )
    raise UnknownType(f"type {kind!r}")


def encode_msg(msg: AttestationRequest | AttestationReport) -> bytes:
    body = json.dumps(_to_body(msg), sort_keys=True, separators=(",", ":")).encode()
    if len(body) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"{len(body)} byte body")
    return struct.pack("!I", len(body)) + body


def decode_msg(frame: bytes) -> AttestationRequest | AttestationReport:
    if len(frame) < 4:
        raise ShortFrame("no length prefix")
    (n,) = struct.unpack_from("!I", frame)
    if n > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared {n} bytes")
    if len(frame) - 4 < n:
        raise ShortFrame(f"declared {n} bytes, got {len(frame) - 4}")
    if len(frame) - 4 > n:
        raise ExtraData(f"{len(frame) - 4 - n} bytes past the frame")
    try:
        body = json.loads(frame[4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadJson(str(exc)) from None
    if not isinstance(body, dict):
        raise BadJson("body is not an object")
    return _from_body(body)


# --- agent (prover) --------------------------------------------------------------

class DeviceAgent:
    """Simulated device: answers attestation requests one at a time.

    The process table is re-read per request so tests can inject or mutate
    binaries between attestations, the way real infection would.
    """

    def __init__(
        self,
        device_mac: str,
        table_source: Callable[[], dict[str, bytes]],
        reference: ReferenceMeasurement,
        private_key: bytes,
    ):
        self.device_mac = device_mac.lower()
        self.table_source = table_source
        self.reference = reference
        self.private_key = private_key
        self._lock = threading.Lock()

    @classmethod
    def from_dir(cls, device_mac: str, state_dir: str | Path) -> "DeviceAgent":
        """Agent over a state directory: processes/ tree, reference.csv, device.key."""
        state = Path(state_dir)
        return cls(
            device_mac,
            lambda: read_process_dir(state / "processes"),
            ReferenceMeasurement.load(state / "reference.csv"),
            load_key(state / "device.key"),
        )

    def handle(self, request: AttestationRequest) -> AttestationReport:
        with self._lock:
            return attest(self.table_source(), self.reference, request, self.private_key)

    def handle_frame(self, frame: bytes) -> bytes:
        msg = decode_msg(frame)
        if not isinstance(msg, AttestationRequest):
            raise UnknownType("agent only answers attest_request")
        return encode_msg(self.handle(msg))


class LoopbackTransport:
    """In-process transport: same framing contract, no sockets."""

    def __init__(self, agent: DeviceAgent):
        self.agent = agent

    def exchange(self, frame: bytes, timeout: float = DEFAULT_TIMEOUT) -> bytes:
        return self.agent.handle_frame(frame)


class TcpTransport:
    """One connection per exchange against a listening agent."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port

    def exchange(self, frame: bytes, timeout: float = DEFAULT_TIMEOUT) -> bytes:
        try:
            with socket.create_connection((self.host, self.port), timeout=timeout) as sock:
                sock.settimeout(timeout)
                sock.sendall(frame)
                header = _recv_exact(sock, 4)
                (n,) = struct.unpack("!I", header)
                if n > MAX_FRAME_BYTES:
                    raise FrameTooLarge(f"declared {n} bytes")
                return header + _recv_exact(sock, n)
        except (socket.timeout, TimeoutError) as exc:
            raise Timeout(f"{self.host}:{self.port}") from exc
        except OSError as exc:
            raise Timeout(f"{self.host}:{self.port}: {exc}") from exc


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ShortFrame(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


class AgentServer:
    """TCP front for one DeviceAgent; serves until shut down."""

    def __init__(self, agent: DeviceAgent, host: str = "127.0.0.1", port: int = 0):
        handler_agent = agent

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    header = _recv_exact(self.request, 4)
                    (n,) = struct.unpack("!I", header)
                    if n > MAX_FRAME_BYTES:
                        return
                    frame = header + _recv_exact(self.request, n)
                    self.request.sendall(handler_agent.handle_frame(frame))
                except Exception:
                    # a malformed frame gets silence, which the gateway
                    # surfaces as a timeout
                    return

        self._server = socketserver.ThreadingTCPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


# --- verifier (gateway side) ------------------------------------------------------

class Verifier:
    """Issues fresh challenges and validates the reports that answer them."""

    def __init__(self, registry: dict[str, bytes] | None = None):
        self.registry = {mac.lower(): key for mac, key in (registry or {}).items()}
        self._issued: set[bytes] = set()
        self._consumed: set[bytes] = set()
        self._lock = threading.Lock()

    def register(self, mac: str, public_key: bytes) -> None:
        self.registry[mac.lower()] = public_key

    def new_request(self, mac: str) -> AttestationRequest:
        with self._lock:
            challenge = secrets.token_bytes(CHALLENGE_BYTES)
            while challenge in self._issued:
                challenge = secrets.token_bytes(CHALLENGE_BYTES)
            self._issued.add(challenge)
        return AttestationRequest(challenge, mac.lower(), time.time())

    def check(self, report: AttestationReport, request: AttestationRequest) -> AttestationReport:
        key = self.registry.get(request.device_mac)
        if key is None:
            raise BadSignature(f"no key registered for {request.device_mac}")
        with self._lock:
            verify_report(report, request, key, consumed=self._consumed)
        return report

    def attest_device(self, mac: str, transport, timeout: float = DEFAULT_TIMEOUT) -> AttestationReport:
        """Full round trip: challenge, exchange, decode, verify."""
        request = self.new_request(mac)
        reply = transport.exchange(encode_msg(request), timeout)
        report = decode_msg(reply)
        if not isinstance(report, AttestationReport):
            raise UnknownType("expected an attest_report")
        return self.check(report, request)
