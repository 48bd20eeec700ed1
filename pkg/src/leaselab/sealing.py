"""Sealed persistent state: authenticated encryption plus a counter binding.

File layout, bit-exact so fixtures and traces stay portable:

    offset  size  field
    0       4     magic b"LLDS"
    4       1     format version (1)
    5       8     embedded_count, unsigned little-endian
    13      12    nonce
    25      ...   ciphertext
    -16     16    auth tag

The header and nonce are authenticated as associated data, so neither the
version nor the embedded count can be tweaked without failing the tag.
The nonce is derived from (key id, embedded_count); since every seal of a
given replica carries a strictly larger count, (key, nonce) pairs never
repeat.

`open_sealed` accepts a blob only when the tag verifies AND the embedded
count equals the counter device's current count. A restored-from-backup
file carries a smaller embedded count than the device (each applied write
incremented it), so any snapshot/restore with at least one intervening
write is rejected with RollbackDetected. Mismatches in either direction
are rejected: a lower device count is impossible without decrementing the
device, so it signals state from some other universe, not a valid resume.
"""

from __future__ import annotations

import hashlib
import json
import struct

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import IntegrityViolation, RollbackDetected

MAGIC = b"LLDS"
VERSION = 1
TAG_BYTES = 16
NONCE_BYTES = 12
HEADER = struct.Struct("<4sBQ")  # magic, version, embedded_count


def sealing_key(owner_id: str) -> bytes:
    """Deterministic per-owner 128-bit key, standing in for provisioning."""
    return hashlib.blake2b(
        b"seal-key:" + owner_id.encode(), digest_size=16).digest()


def _nonce(key: bytes, count: int) -> bytes:
    return hashlib.blake2b(
        key + count.to_bytes(8, "little"), digest_size=NONCE_BYTES).digest()


def encode_table(table: dict) -> bytes:
    body = {lid: [owner, expiry] for lid, (owner, expiry) in table.items()}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def decode_table(blob: bytes) -> dict:
    body = json.loads(blob.decode())
    return {lid: (owner, expiry) for lid, (owner, expiry) in body.items()}


def seal(key: bytes, table: dict, embedded_count: int) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, embedded_count)
    nonce = _nonce(key, embedded_count)
    ct = AESGCM(key).encrypt(nonce, encode_table(table), header + nonce)
    return header + nonce + ct


def open_sealed(key: bytes, blob: bytes, device_count: int) -> dict:
    if len(blob) < HEADER.size + NONCE_BYTES + TAG_BYTES:
        raise IntegrityViolation("sealed blob truncated")
    magic, version, embedded = HEADER.unpack_from(blob)
    if magic != MAGIC or version != VERSION:
        raise IntegrityViolation("bad magic or version")
    nonce = blob[HEADER.size:HEADER.size + NONCE_BYTES]
    ct = blob[HEADER.size + NONCE_BYTES:]
    try:
        plain = AESGCM(key).decrypt(nonce, ct, blob[:HEADER.size] + nonce)
    except InvalidTag:
        raise IntegrityViolation("auth tag mismatch") from None
    if embedded != device_count:
        raise RollbackDetected(
            f"sealed count {embedded} != device count {device_count}")
    return decode_table(plain)


def embedded_count(blob: bytes) -> int:
    _, _, embedded = HEADER.unpack_from(blob)
    return embedded
