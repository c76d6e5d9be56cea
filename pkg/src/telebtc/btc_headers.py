"""Bitcoin block header codec, proof-of-work arithmetic and Merkle proofs.

Byte-order conventions used throughout:

* ``Hash256`` values are stored in *internal* (hashing) order, i.e. exactly the
  bytes produced by ``sha256(sha256(data)).digest()``.  Their ``str()`` /
  ``display()`` form is the byte-reversed hex that block explorers print.
* For the proof-of-work comparison a block hash is read as a 256-bit
  little-endian integer (``int.from_bytes(digest, "little")``), which is the
  same number as the displayed hex read big-endian.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

HEADER_SIZE = 80
MAX_TARGET_256 = (1 << 256) - 1
MAINNET_POW_LIMIT = 0xFFFF << 208
MAINNET_EPOCH_LEN = 2016
MAINNET_BLOCK_INTERVAL = 600

_HEADER_STRUCT = struct.Struct("<i32s32sIII")


class HeaderError(ValueError):
    """Base class for codec and arithmetic errors in this module."""


class WrongLength(HeaderError):
    pass


class NegativeTarget(HeaderError):
    pass


class TargetOverflow(HeaderError):
    pass


class EmptyLeaves(HeaderError):
    pass


class IndexOutOfRange(HeaderError):
    pass


class Hash256(bytes):
    """32 opaque bytes in hashing order; prints in reversed-hex form."""

    def __new__(cls, value: bytes = bytes(32)) -> "Hash256":
        if len(value) != 32:
            raise WrongLength(f"Hash256 needs 32 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_display(cls, text: str) -> "Hash256":
        return cls(bytes.fromhex(text)[::-1])

    def display(self) -> str:
        return self[::-1].hex()

    def __str__(self) -> str:
        return self.display()

    def __repr__(self) -> str:
        return f"Hash256({self.display()})"


ZERO_HASH = Hash256()


def sha256d(data: bytes) -> Hash256:
    return Hash256(hashlib.sha256(hashlib.sha256(data).digest()).digest())


@dataclass(frozen=True)
class BlockHeader:
    version: int
    parent_hash: Hash256
    merkle_root: Hash256
    timestamp: int
    bits: int
    nonce: int

    def with_nonce(self, nonce: int) -> "BlockHeader":
        return BlockHeader(self.version, self.parent_hash, self.merkle_root,
                           self.timestamp, self.bits, nonce)


@dataclass(frozen=True)
class MerkleProof:
    leaf: Hash256
    index: int
    siblings: tuple[Hash256, ...] = ()


def encode_header(h: BlockHeader) -> bytes:
    return _HEADER_STRUCT.pack(h.version, h.parent_hash, h.merkle_root,
                               h.timestamp, h.bits, h.nonce)


def decode_header(b: bytes) -> BlockHeader:
    if len(b) != HEADER_SIZE:
        raise WrongLength(f"header must be {HEADER_SIZE} bytes, got {len(b)}")
    version, parent, root, ts, bits, nonce = _HEADER_STRUCT.unpack(b)
    return BlockHeader(version, Hash256(parent), Hash256(root), ts, bits, nonce)


def header_hash(h: BlockHeader) -> Hash256:
    return sha256d(encode_header(h))


def hash_to_int(h: bytes) -> int:
    return int.from_bytes(h, "little")


def bits_to_target(bits: int) -> int:
    """Decode compact ``bits`` into the full 256-bit target.

    Mantissas with the sign bit (0x00800000) set are rejected rather than
    silently read as negative.
    """
    mantissa = bits & 0x007FFFFF
    exponent = (bits >> 24) & 0xFF
    if bits & 0x00800000:
        raise NegativeTarget(f"compact bits {bits:#010x} has the sign bit set")
    if exponent <= 3:
        target = mantissa >> (8 * (3 - exponent))
    else:
        target = mantissa << (8 * (exponent - 3))
    if target > MAX_TARGET_256:
        raise TargetOverflow(f"compact bits {bits:#010x} exceeds 2^256 - 1")
    return target


def target_to_bits(target: int) -> int:
    """Canonical (lossy) compact encoding, as Bitcoin Core's GetCompact."""
    if target < 0 or target > MAX_TARGET_256:
        raise TargetOverflow(f"target out of range: {target}")
    size = (target.bit_length() + 7) // 8
    if size <= 3:
        mantissa = target << (8 * (3 - size))
    else:
        mantissa = target >> (8 * (size - 3))
    if mantissa & 0x00800000:
        mantissa >>= 8
        size += 1
    return (size << 24) | mantissa


def meets_pow(h: BlockHeader) -> bool:
    return hash_to_int(header_hash(h)) <= bits_to_target(h.bits)


def header_work(bits: int) -> int:
    """Expected number of hashes to find a block at ``bits`` (chainwork unit)."""
    target = bits_to_target(bits)
    return (1 << 256) // (target + 1)


def retarget(old_target: int, first_timestamp: int, last_timestamp: int,
             epoch_len: int = MAINNET_EPOCH_LEN,
             block_interval: int = MAINNET_BLOCK_INTERVAL,
             pow_limit: int = MAX_TARGET_256) -> int:
    """Next-epoch target from the first and last timestamps of an epoch.

    The observed timespan is clamped to a factor of four either way.  The result
    is capped at ``pow_limit`` (mainnet: ``MAINNET_POW_LIMIT``).
    """
    expected = epoch_len * block_interval
    actual = last_timestamp - first_timestamp
    actual = min(max(actual, expected // 4), expected * 4)
    new_target = old_target * actual // expected
    return min(new_target, pow_limit)


def _hash_pair(left: bytes, right: bytes) -> Hash256:
    return sha256d(left + right)


def merkle_root(leaves: Sequence[bytes]) -> Hash256:
    if not leaves:
        raise EmptyLeaves("merkle_root of an empty leaf list")
    level = [Hash256(x) for x in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [_hash_pair(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_branch(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(leaves):
        raise IndexOutOfRange(f"index {index} outside 0..{len(leaves) - 1}")
    level = [Hash256(x) for x in leaves]
    siblings = []
    pos = index
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        siblings.append(level[pos ^ 1])
        level = [_hash_pair(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        pos >>= 1
    return MerkleProof(Hash256(leaves[index]), index, tuple(siblings))


def verify_merkle_branch(proof: MerkleProof, root: bytes) -> bool:
    if proof.index < 0 or proof.index >> len(proof.siblings):
        return False
    try:
        node = bytes(proof.leaf)
        pos = proof.index
        for sib in proof.siblings:
            if len(sib) != 32:
                return False
            node = _hash_pair(sib, node) if pos & 1 else _hash_pair(node, sib)
            pos >>= 1
    except TypeError:
        return False
    return node == bytes(root)


def read_headers(source: "str | os.PathLike[str] | bytes") -> list[BlockHeader]:
    """Parse the raw header file format: concatenated 80-byte headers."""
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if len(data) % HEADER_SIZE:
        raise WrongLength(f"header stream length {len(data)} is not a multiple of 80")
    return [decode_header(bytes(data[i:i + HEADER_SIZE]))
            for i in range(0, len(data), HEADER_SIZE)]


def write_headers(headers: Iterable[BlockHeader], dest: "str | os.PathLike[str]") -> None:
    Path(dest).write_bytes(b"".join(encode_header(h) for h in headers))


MAINNET_GENESIS = BlockHeader(
    version=1,
    parent_hash=ZERO_HASH,
    merkle_root=Hash256.from_display(
        "4a5e1e4baab89f3a32518a88c31bc87f618f76673e2cc77ab2127b7afdeda33b"),
    timestamp=1231006505,
    bits=0x1D00FFFF,
    nonce=2083236893,
)
