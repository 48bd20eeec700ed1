"""Canonical byte encoding for state digests and deduplication keys.

Digest equality must hold across independent processes and replays, so the
encoding depends only on values, never on object identity or memoization
(which rules out pickle). Supported values: None, bool, int, str, bytes,
and tuples thereof. Mappings must be converted to sorted item tuples by the
caller before encoding.
"""

import hashlib

DIGEST_BYTES = 16  # 128-bit digests; accidental collision is negligible


def encode(value) -> bytes:
    out = bytearray()
    _enc(value, out)
    return bytes(out)


def _enc(value, out: bytearray) -> None:
    if value is None:
        out += b"n"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif type(value) is int:
        body = str(value).encode()
        out += b"i%d:" % len(body)
        out += body
    elif type(value) is str:
        body = value.encode("utf-8")
        out += b"s%d:" % len(body)
        out += body
    elif type(value) is bytes:
        out += b"b%d:" % len(value)
        out += value
    elif isinstance(value, tuple):
        # NamedTuple subclasses encode as their plain tuple value
        out += b"t%d:" % len(value)
        for item in value:
            _enc(item, out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def digest(value) -> str:
    """128-bit hex digest of the canonical encoding of `value`."""
    return hashlib.blake2b(encode(value), digest_size=DIGEST_BYTES).hexdigest()
