"""SPV bridge contract: full-header relay with finalization by depth."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .btc_headers import (
    BlockHeader,
    Hash256,
    MAX_TARGET_256,
    MerkleProof,
    HeaderError,
    bits_to_target,
    hash_to_int,
    header_hash,
    header_work,
    retarget,
    target_to_bits,
    verify_merkle_branch,
)


class RejectReason(str, enum.Enum):
    DUPLICATE = "Duplicate"
    UNKNOWN_PARENT = "UnknownParent"
    WRONG_TARGET_BITS = "WrongTargetBits"
    INSUFFICIENT_POW = "InsufficientPoW"
    BELOW_FINALIZED = "BelowFinalized"


@dataclass(frozen=True)
class Checkpoint:
    """Trusted starting point: a header hash at a height plus its epoch context."""

    height: int
    block_hash: Hash256
    bits: int
    epoch_start_ts: int
    merkle_root: Optional[Hash256] = None
    timestamp: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "Checkpoint":
        """Parse ``height:hash:bits:epoch_start_ts`` (hash in display hex, bits in hex)."""
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError("checkpoint must be height:hash:bits:epoch_start_ts")
        height, hash_hex, bits_hex, start = parts
        return cls(int(height), Hash256.from_display(hash_hex), int(bits_hex, 16), int(start))

    @classmethod
    def from_header(cls, header: BlockHeader, height: int, epoch_start_ts: int) -> "Checkpoint":
        return cls(height, header_hash(header), header.bits, epoch_start_ts,
                   header.merkle_root, header.timestamp)


@dataclass
class StoredHeader:
    header: Optional[BlockHeader]  # None only for the checkpoint
    hash: Hash256
    height: int
    chainwork: int
    parent: Optional[Hash256]

    @property
    def merkle_root(self) -> Optional[Hash256]:
        return self.header.merkle_root if self.header else None


@dataclass(frozen=True)
class Accepted:
    height: int
    finalized: tuple[tuple[int, Hash256], ...] = ()


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason
    detail: str = ""


class SpvBridge:
    """Header store with the four relay checks and FinalizationNumber pruning.

    Mutations are expected from a single caller at a time.
    """

    def __init__(self, checkpoint: Checkpoint, finalization_number: int = 6,
                 epoch_len: int = 2016, block_interval: int = 600,
                 pow_limit: int = MAX_TARGET_256):
        self.checkpoint = checkpoint
        self.finalization_number = finalization_number
        self.epoch_len = epoch_len
        self.block_interval = block_interval
        self.pow_limit = pow_limit
        root = StoredHeader(None, checkpoint.block_hash, checkpoint.height, 0, None)
        self.headers: dict[Hash256, StoredHeader] = {checkpoint.block_hash: root}
        self.by_height: dict[int, list[Hash256]] = {checkpoint.height: [checkpoint.block_hash]}
        self.finalized: dict[int, Hash256] = {checkpoint.height: checkpoint.block_hash}
        self.last_finalized_height = checkpoint.height
        self.max_height = checkpoint.height
        self.pruned: set[Hash256] = set()
        self.children: dict[Hash256, list[Hash256]] = {checkpoint.block_hash: []}
        self.epoch_targets: dict[int, int] = {
            checkpoint.height // epoch_len: bits_to_target(checkpoint.bits)}
        self.best_tip = checkpoint.block_hash

    # ------------------------------------------------------------ checks

    def _ancestor(self, block_hash: Hash256, height: int) -> Optional[StoredHeader]:
        node = self.headers[block_hash]
        while node.height > height:
            if node.parent is None:
                return None
            node = self.headers[node.parent]
        return node

    def _timestamp_at(self, tip: Hash256, height: int) -> Optional[int]:
        node = self._ancestor(tip, height)
        if node is not None and node.height == height:
            if node.header is not None:
                return node.header.timestamp
            if self.checkpoint.timestamp is not None:
                return self.checkpoint.timestamp
        if height == (self.checkpoint.height // self.epoch_len) * self.epoch_len:
            return self.checkpoint.epoch_start_ts
        return None

    def _bits_of(self, node: StoredHeader) -> int:
        return node.header.bits if node.header else self.checkpoint.bits

    def expected_bits(self, parent_hash: Hash256) -> Optional[int]:
        parent = self.headers[parent_hash]
        height = parent.height + 1
        if height % self.epoch_len:
            return self._bits_of(parent)
        first_ts = self._timestamp_at(parent_hash, height - self.epoch_len)
        last_ts = self._timestamp_at(parent_hash, height - 1)
        if first_ts is None or last_ts is None:
            return None
        new_target = retarget(bits_to_target(self._bits_of(parent)), first_ts, last_ts,
                              self.epoch_len, self.block_interval, self.pow_limit)
        return target_to_bits(new_target)

    def add_header(self, h: BlockHeader) -> "Accepted | Rejected":
        block_hash = header_hash(h)
        if block_hash in self.headers:
            return Rejected(RejectReason.DUPLICATE)
        if h.parent_hash in self.pruned or block_hash in self.pruned:
            return Rejected(RejectReason.BELOW_FINALIZED, "parent was pruned at finalization")
        parent = self.headers.get(h.parent_hash)
        if parent is None:
            return Rejected(RejectReason.UNKNOWN_PARENT)
        height = parent.height + 1
        if height <= self.last_finalized_height:
            return Rejected(RejectReason.BELOW_FINALIZED,
                            f"height {height} <= finalized {self.last_finalized_height}")
        want = self.expected_bits(h.parent_hash)
        if want is None or h.bits != want:
            return Rejected(RejectReason.WRONG_TARGET_BITS,
                            f"bits {h.bits:#010x} != expected {want:#010x}" if want is not None
                            else "epoch start timestamp unavailable")
        try:
            target = bits_to_target(h.bits)
        except HeaderError as exc:
            return Rejected(RejectReason.WRONG_TARGET_BITS, str(exc))
        if hash_to_int(block_hash) > target:
            return Rejected(RejectReason.INSUFFICIENT_POW)

        node = StoredHeader(h, block_hash, height, parent.chainwork + header_work(h.bits),
                            h.parent_hash)
        self.headers[block_hash] = node
        self.by_height.setdefault(height, []).append(block_hash)
        self.children[block_hash] = []
        self.children[h.parent_hash].append(block_hash)
        if height % self.epoch_len == 0:
            self.epoch_targets.setdefault(height // self.epoch_len, target)
        if node.chainwork > self.headers[self.best_tip].chainwork:
            self.best_tip = block_hash
        finalized: list[tuple[int, Hash256]] = []
        if height > self.max_height:
            self.max_height = height
            finalized = self.finalize_sweep(height, block_hash)
        return Accepted(height, tuple(finalized))

    def finalize_sweep(self, new_tip_height: int,
                       tip_hash: Optional[Hash256] = None) -> list[tuple[int, Hash256]]:
        """Finalize the tip's ancestor ``finalization_number`` blocks back and prune its siblings."""
        if tip_hash is None:
            candidates = self.by_height.get(new_tip_height, [])
            if not candidates:
                return []
            tip_hash = candidates[0]
        goal = new_tip_height - self.finalization_number
        out: list[tuple[int, Hash256]] = []
        if goal <= self.last_finalized_height:
            return out
        chain = []
        node = self._ancestor(tip_hash, goal)
        while node is not None and node.height > self.last_finalized_height:
            chain.append(node)
            node = self.headers[node.parent] if node.parent else None
        for node in reversed(chain):
            self.finalized[node.height] = node.hash
            for other in list(self.by_height.get(node.height, [])):
                if other != node.hash:
                    self._prune_subtree(other)
            self.last_finalized_height = node.height
            out.append((node.height, node.hash))
        return out

    def _prune_subtree(self, root: Hash256) -> None:
        stack = [root]
        doomed = set()
        while stack:
            h = stack.pop()
            doomed.add(h)
            stack.extend(self.children.get(h, ()))
        for h in doomed:
            node = self.headers.pop(h)
            self.by_height[node.height].remove(h)
            self.children.pop(h, None)
            if node.parent in self.children and h in self.children[node.parent]:
                self.children[node.parent].remove(h)
            self.pruned.add(h)
        if self.best_tip in doomed:
            self.best_tip = max(self.headers.values(), key=lambda n: (n.chainwork, -n.height)).hash

    # ----------------------------------------------------------- queries

    def finalized_root(self, height: int) -> Optional[Hash256]:
        block_hash = self.finalized.get(height)
        if block_hash is None:
            return None
        node = self.headers[block_hash]
        if node.header is None:
            return self.checkpoint.merkle_root
        return node.header.merkle_root

    def check_tx_proof(self, txid: Hash256, height: int, tx_index: int, proof: MerkleProof) -> bool:
        if height > self.last_finalized_height:
            return False
        root = self.finalized_root(height)
        if root is None:
            return False
        if bytes(proof.leaf) != bytes(txid) or proof.index != tx_index:
            return False
        return verify_merkle_branch(proof, root)

    def block_time(self, height: int) -> Optional[int]:
        block_hash = self.finalized.get(height)
        if block_hash is None:
            return None
        node = self.headers[block_hash]
        return node.header.timestamp if node.header else self.checkpoint.timestamp

    def finalized_chain(self) -> list[tuple[int, Hash256]]:
        """``(height, merkle_root)`` for every finalized height above the checkpoint."""
        return [(h, self.finalized_root(h)) for h in sorted(self.finalized)
                if h > self.checkpoint.height]

    def dump(self) -> str:
        lines = []
        for height in sorted(self.by_height):
            for block_hash in self.by_height[height]:
                flag = "finalized" if self.finalized.get(height) == block_hash else "pending"
                lines.append(f"{height}\t{block_hash}\t{flag}")
        return "\n".join(lines) + "\n"
