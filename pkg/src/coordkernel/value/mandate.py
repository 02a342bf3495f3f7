"""Hash-linked, signed record of economic phases.

Each mandate commits to its predecessor's hash, the phase tag and a
canonically serialized payload; participating entities sign the resulting
hash. Verification recomputes every link and signature and reports failures
instead of raising.
"""

from __future__ import annotations

import hashlib
import hmac
import io
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives import serialization

ZERO_HASH = b"\x00" * 32
CHAIN_MAGIC = b"MCHAIN01"


class Phase(IntEnum):
    ENTRY = 1
    CREATION = 2
    ORCHESTRATION = 3
    EXECUTION = 4
    SETTLEMENT = 5
    FEEDBACK = 6
    POOL_OP = 7


class UnknownSigner(KeyError):
    pass


class ChainFormatError(ValueError):
    pass


Scalar = Union[int, str, bytes, float]
Payload = Sequence[tuple[str, Scalar]]


def encode_payload(fields: Payload) -> bytes:
    """Canonical bytes: fields in the given order, each a tagged name/value pair.

    Integers are 8-byte signed big-endian, floats IEEE-754 big-endian, and
    strings/bytes are u32 length-prefixed.
    """
    out = io.BytesIO()
    for name, value in fields:
        out.write(_lp(name.encode("utf-8")))
        if isinstance(value, bool):
            raise TypeError("booleans are not a payload type; use 0/1")
        if isinstance(value, int):
            out.write(b"i" + value.to_bytes(8, "big", signed=True))
        elif isinstance(value, float):
            out.write(b"f" + struct.pack(">d", value))
        elif isinstance(value, str):
            out.write(b"s" + _lp(value.encode("utf-8")))
        elif isinstance(value, (bytes, bytearray)):
            out.write(b"b" + _lp(bytes(value)))
        else:
            raise TypeError(f"unsupported payload value {value!r}")
    return out.getvalue()


def _lp(raw: bytes) -> bytes:
    return struct.pack(">I", len(raw)) + raw


def link_hash(prev_hash: bytes, phase: Phase, payload: bytes) -> bytes:
    return hashlib.sha256(prev_hash + bytes([int(phase)]) + payload).digest()


# ---------------------------------------------------------------------------
# keys


class KeyRing:
    """Signing keys per entity.

    ``mode="ed25519"`` (default) uses deterministic Ed25519 signatures;
    ``mode="mac"`` uses HMAC-SHA256 and is meant for fast simulation runs.
    Keys are derived deterministically from ``seed`` and the entity id.
    """

    def __init__(self, mode: str = "ed25519", seed: bytes = b"kernel"):
        if mode not in ("ed25519", "mac"):
            raise ValueError(f"unknown signature mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self._private: dict[str, object] = {}
        self._public: dict[str, bytes] = {}

    def register(self, entity_id) -> bytes:
        eid = str(entity_id)
        if eid in self._public:
            return self._public[eid]
        secret = hashlib.sha256(self.seed + b"/" + eid.encode()).digest()
        if self.mode == "ed25519":
            sk = Ed25519PrivateKey.from_private_bytes(secret)
            self._private[eid] = sk
            self._public[eid] = sk.public_key().public_bytes(
                serialization.Encoding.Raw, serialization.PublicFormat.Raw
            )
        else:
            self._private[eid] = secret
            self._public[eid] = secret
        return self._public[eid]

    def __contains__(self, entity_id) -> bool:
        return str(entity_id) in self._public

    def sign(self, entity_id, message: bytes) -> bytes:
        eid = str(entity_id)
        if eid not in self._private:
            raise UnknownSigner(eid)
        key = self._private[eid]
        if self.mode == "ed25519":
            return key.sign(message)
        return hmac.digest(key, message, "sha256")

    def directory(self) -> dict[str, bytes]:
        return dict(self._public)


def check_signature(mode: str, key: bytes, message: bytes, signature: bytes) -> bool:
    if mode == "ed25519":
        try:
            Ed25519PublicKey.from_public_bytes(key).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False
    return hmac.compare_digest(hmac.digest(key, message, "sha256"), signature)


# ---------------------------------------------------------------------------
# chain


@dataclass
class Mandate:
    phase: Phase
    payload: bytes
    prev_hash: bytes
    this_hash: bytes
    signatures: list[tuple[str, bytes]] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        body = io.BytesIO()
        body.write(bytes([int(self.phase)]))
        body.write(self.prev_hash)
        body.write(self.this_hash)
        body.write(_lp(self.payload))
        body.write(struct.pack(">H", len(self.signatures)))
        for eid, sig in self.signatures:
            body.write(_lp(eid.encode("utf-8")))
            body.write(_lp(sig))
        raw = body.getvalue()
        return _lp(raw)

    @classmethod
    def from_stream(cls, fh: io.BytesIO) -> "Mandate":
        raw = _read_lp(fh)
        body = io.BytesIO(raw)
        try:
            phase = Phase(_read(body, 1)[0])
        except ValueError as exc:
            raise ChainFormatError(str(exc)) from None
        prev_hash = _read(body, 32)
        this_hash = _read(body, 32)
        payload = _read_lp(body)
        (n_sig,) = struct.unpack(">H", _read(body, 2))
        sigs = []
        for _ in range(n_sig):
            eid = _read_lp(body)
            try:
                eid_s = eid.decode("utf-8")
            except UnicodeDecodeError:
                raise ChainFormatError("signer id is not UTF-8") from None
            sigs.append((eid_s, _read_lp(body)))
        if body.read(1):
            raise ChainFormatError("trailing bytes in mandate record")
        return cls(phase, payload, prev_hash, this_hash, sigs)


def _read(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ChainFormatError("truncated record")
    return b


def _read_lp(fh) -> bytes:
    (n,) = struct.unpack(">I", _read(fh, 4))
    return _read(fh, n)


@dataclass
class VerifyReport:
    valid: bool
    failures: list[tuple[int, str]]

    @property
    def first_failure(self) -> int | None:
        return self.failures[0][0] if self.failures else None

    @property
    def failing_indices(self) -> list[int]:
        return sorted({i for i, _ in self.failures})


class MandateChain:
    def __init__(self, keyring: KeyRing | None = None):
        self.keyring = keyring or KeyRing()
        self.mandates: list[Mandate] = []

    def __len__(self) -> int:
        return len(self.mandates)

    @property
    def head(self) -> bytes:
        return self.mandates[-1].this_hash if self.mandates else ZERO_HASH

    def append(self, phase: Phase, payload: Payload | bytes, signers: Iterable) -> Mandate:
        signers = [str(s) for s in signers]
        if not signers:
            raise ValueError("a mandate needs at least one signer")
        for s in signers:
            if s not in self.keyring:
                raise UnknownSigner(s)
        raw = payload if isinstance(payload, bytes) else encode_payload(payload)
        h = link_hash(self.head, phase, raw)
        sigs = [(s, self.keyring.sign(s, h)) for s in dict.fromkeys(signers)]
        m = Mandate(Phase(phase), raw, self.head, h, sigs)
        self.mandates.append(m)
        return m

    def verify(self) -> VerifyReport:
        return verify_chain(self.mandates, self.keyring.mode, self.keyring.directory())

    # -- file form ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(CHAIN_MAGIC)
        out.write(self.keyring.mode.encode().ljust(8, b"\x00"))
        used = {eid for m in self.mandates for eid, _ in m.signatures}
        keys = sorted((e, k) for e, k in self.keyring.directory().items() if e in used)
        out.write(struct.pack(">I", len(keys)))
        for eid, key in keys:
            out.write(_lp(eid.encode("utf-8")))
            out.write(_lp(key))
        out.write(struct.pack(">I", len(self.mandates)))
        for m in self.mandates:
            out.write(m.to_bytes())
        return out.getvalue()


def load_chain(data: bytes) -> tuple[list[Mandate], str, dict[str, bytes]]:
    """Parse a serialized chain into (mandates, signature mode, key directory)."""
    fh = io.BytesIO(data)
    if _read(fh, len(CHAIN_MAGIC)) != CHAIN_MAGIC:
        raise ChainFormatError("bad chain magic")
    mode = _read(fh, 8).rstrip(b"\x00").decode("ascii", "replace")
    if mode not in ("ed25519", "mac"):
        raise ChainFormatError(f"unknown signature mode {mode!r}")
    (n_keys,) = struct.unpack(">I", _read(fh, 4))
    keys = {}
    for _ in range(n_keys):
        try:
            eid = _read_lp(fh).decode("utf-8")
        except UnicodeDecodeError:
            raise ChainFormatError("key id is not UTF-8") from None
        keys[eid] = _read_lp(fh)
    (n,) = struct.unpack(">I", _read(fh, 4))
    mandates = [Mandate.from_stream(fh) for _ in range(n)]
    if fh.read(1):
        raise ChainFormatError("trailing bytes after last mandate")
    return mandates, mode, keys


def verify_chain(
    mandates: Sequence[Mandate], mode: str, keys: dict[str, bytes], start: int = 0, anchor: bytes = ZERO_HASH
) -> VerifyReport:
    """Recompute every link hash and signature; collect (index, reason) failures.

    ``start``/``anchor`` verify a suffix whose predecessor hashed to ``anchor``;
    reported indices are positions in the full chain.
    """
    failures: list[tuple[int, str]] = []
    prev = anchor
    for i, m in enumerate(mandates[start:], start):
        if m.prev_hash != prev:
            failures.append((i, "broken prev link"))
        recomputed = link_hash(m.prev_hash, m.phase, m.payload)
        if recomputed != m.this_hash:
            failures.append((i, "hash mismatch"))
        if not m.signatures:
            failures.append((i, "no signatures"))
        for eid, sig in m.signatures:
            key = keys.get(eid)
            if key is None:
                failures.append((i, f"unknown signer {eid}"))
            elif not check_signature(mode, key, m.this_hash, sig):
                failures.append((i, f"bad signature by {eid}"))
        # link the next record against what this one actually hashes to
        prev = recomputed
    return VerifyReport(not failures, failures)


def verify_bytes(data: bytes) -> VerifyReport:
    """Verify a serialized chain; a parse failure is reported at index -1."""
    try:
        mandates, mode, keys = load_chain(data)
    except (ChainFormatError, struct.error) as exc:
        return VerifyReport(False, [(-1, f"unreadable chain: {exc}")])
    return verify_chain(mandates, mode, keys)
