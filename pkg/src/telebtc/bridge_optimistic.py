"""Optimistic bridge contract: bonded Merkle-root relay with a challenge game.

Relayers post only Merkle roots.  A root becomes usable once its challenge
window closes unchallenged; a challenged root must be backed by the full
header pair (challenged header + its parent) before the proof window closes,
otherwise it is marked invalid and the relayer's bond goes to the disputer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .bridge_spv import Checkpoint
from .btc_headers import (
    BlockHeader,
    Hash256,
    MAX_TARGET_256,
    MerkleProof,
    HeaderError,
    bits_to_target,
    hash_to_int,
    header_hash,
    retarget,
    target_to_bits,
    verify_merkle_branch,
)

DEFAULT_CHALLENGE_PERIOD = 5 * 60
DEFAULT_PROOF_PERIOD = 20 * 60
DEFAULT_MAX_FUTURE_DRIFT = 2 * 60 * 60
DEFAULT_BOND = 10


class BridgeError(Exception):
    pass


class InsufficientBond(BridgeError):
    pass


class ParentNotUsable(BridgeError):
    pass


class MissingEpochTimestamp(BridgeError):
    pass


class FutureTimestamp(BridgeError):
    pass


class DuplicateRoot(BridgeError):
    pass


class UnexpectedHeight(BridgeError):
    pass


class UnknownRecord(BridgeError):
    pass


class AlreadyVerified(BridgeError):
    pass


class AlreadyChallenged(BridgeError):
    pass


class ChallengeWindowClosed(BridgeError):
    pass


class NotChallenged(BridgeError):
    pass


class RootStatus(str, enum.Enum):
    PENDING = "Pending"
    CHALLENGED = "Challenged"
    VERIFIED = "Verified"
    INVALID = "Invalid"


@dataclass
class MerkleRootRecord:
    record_id: int
    root: Optional[Hash256]
    height: int
    relayer: str
    relayer_collateral: int
    status: RootStatus
    submitted_at: int
    challenge_deadline: int
    parent_id: Optional[int] = None
    proof_deadline: Optional[int] = None
    disputer: Optional[str] = None
    disputer_collateral: Optional[int] = None
    epoch_timestamp: Optional[int] = None
    pruned: bool = False
    failed_proofs: list[str] = field(default_factory=list)


class OptimisticBridge:
    def __init__(self, checkpoint: Checkpoint, finalization_number: int = 6,
                 challenge_period: int = DEFAULT_CHALLENGE_PERIOD,
                 proof_period: int = DEFAULT_PROOF_PERIOD,
                 relayer_bond: int = DEFAULT_BOND, disputer_bond: int = DEFAULT_BOND,
                 max_future_drift: int = DEFAULT_MAX_FUTURE_DRIFT,
                 epoch_len: int = 2016, block_interval: int = 600,
                 pow_limit: int = MAX_TARGET_256):
        self.checkpoint = checkpoint
        self.finalization_number = finalization_number
        self.challenge_period = challenge_period
        self.proof_period = proof_period
        self.relayer_bond = relayer_bond
        self.disputer_bond = disputer_bond
        self.max_future_drift = max_future_drift
        self.epoch_len = epoch_len
        self.block_interval = block_interval
        self.pow_limit = pow_limit

        cp = MerkleRootRecord(0, checkpoint.merkle_root, checkpoint.height, "checkpoint", 0,
                              RootStatus.VERIFIED, 0, 0,
                              epoch_timestamp=checkpoint.timestamp)
        self.records: list[MerkleRootRecord] = [cp]
        self.by_height: dict[int, list[int]] = {checkpoint.height: [0]}
        self.last_submitted_height = checkpoint.height
        self.finalized: dict[int, int] = {checkpoint.height: 0}
        self.last_finalized_height = checkpoint.height
        self.epoch_bits: dict[int, int] = {checkpoint.height // epoch_len: checkpoint.bits}
        self.epoch_timestamps: dict[int, tuple[Optional[int], Optional[int]]] = {}
        self._bits_memo: dict[int, Optional[int]] = {}
        self._to_sweep: list[int] = []
        self._live: list[int] = []  # records still Pending or Challenged
        self.now = 0

        self.escrow = 0
        self.posted_total = 0
        self.paid_total = 0
        self.payouts: dict[str, int] = {}
        self.events: list[dict] = []

    # --------------------------------------------------------- helpers

    def record(self, record_id: int) -> MerkleRootRecord:
        if not 0 <= record_id < len(self.records):
            raise UnknownRecord(str(record_id))
        return self.records[record_id]

    def is_usable(self, rec: MerkleRootRecord, now: int) -> bool:
        if rec.pruned:
            return False
        if rec.status is RootStatus.VERIFIED:
            return True
        return rec.status is RootStatus.PENDING and now >= rec.challenge_deadline

    def usable_roots(self, height: int, now: int) -> list[MerkleRootRecord]:
        return [self.records[i] for i in self.by_height.get(height, [])
                if self.is_usable(self.records[i], now)]

    def records_at(self, height: int) -> list[MerkleRootRecord]:
        return [self.records[i] for i in self.by_height.get(height, [])]

    def needs_epoch_timestamp(self, height: int) -> bool:
        return height % self.epoch_len in (0, 1, self.epoch_len - 1)

    def _pay(self, account: str, amount: int) -> None:
        if amount:
            self.payouts[account] = self.payouts.get(account, 0) + amount
            self.escrow -= amount
            self.paid_total += amount

    def _emit(self, name: str, **fields) -> None:
        self.events.append({"event": name, **fields})

    def _ancestor(self, rec: MerkleRootRecord, height: int) -> Optional[MerkleRootRecord]:
        while rec.height > height:
            if rec.parent_id is None:
                return None
            rec = self.records[rec.parent_id]
        return rec if rec.height == height else None

    def _timestamp_at(self, rec: MerkleRootRecord, height: int) -> Optional[int]:
        anc = self._ancestor(rec, height)
        if anc is not None and anc.epoch_timestamp is not None:
            return anc.epoch_timestamp
        cp_epoch_start = (self.checkpoint.height // self.epoch_len) * self.epoch_len
        if height == cp_epoch_start:
            return self.checkpoint.epoch_start_ts
        return None

    def required_bits(self, rec: MerkleRootRecord) -> Optional[int]:
        """Compact target the header behind ``rec`` must carry, or None if unknown."""
        epoch = rec.height // self.epoch_len
        cp_epoch = self.checkpoint.height // self.epoch_len
        if epoch == cp_epoch:
            return self.checkpoint.bits
        first = self._ancestor(rec, epoch * self.epoch_len)
        if first is None:
            return None
        if first.record_id in self._bits_memo:
            return self._bits_memo[first.record_id]
        last_prev = self._ancestor(first, epoch * self.epoch_len - 1)
        bits = None
        if last_prev is not None:
            prev_bits = self.required_bits(last_prev)
            first_ts = self._timestamp_at(last_prev, (epoch - 1) * self.epoch_len)
            last_ts = last_prev.epoch_timestamp
            if prev_bits is not None and first_ts is not None and last_ts is not None:
                target = retarget(bits_to_target(prev_bits), first_ts, last_ts,
                                  self.epoch_len, self.block_interval, self.pow_limit)
                bits = target_to_bits(target)
        self._bits_memo[first.record_id] = bits
        return bits

    # -------------------------------------------------------- operations

    def submit_root(self, root: Hash256, height: int, relayer: str, collateral: int,
                    epoch_timestamp: Optional[int] = None, now: int = 0,
                    parent_root: Optional[Hash256] = None) -> int:
        if collateral < self.relayer_bond:
            raise InsufficientBond(f"bond {collateral} < required {self.relayer_bond}")
        if height not in (self.last_submitted_height, self.last_submitted_height + 1) \
                or height <= self.last_finalized_height:
            raise UnexpectedHeight(
                f"height {height} must be {self.last_submitted_height} or "
                f"{self.last_submitted_height + 1} and above finalized {self.last_finalized_height}")
        for rec in self.records_at(height):
            if rec.root == root and rec.status is not RootStatus.INVALID:
                raise DuplicateRoot(f"root {root} already submitted at height {height}")
        parents = self.usable_roots(height - 1, now)
        if parent_root is not None:
            parents = [p for p in parents if p.root == parent_root]
        if not parents:
            raise ParentNotUsable(f"no verified or unchallenged root at height {height - 1}")
        parent = parents[0]
        if self.needs_epoch_timestamp(height):
            if epoch_timestamp is None:
                raise MissingEpochTimestamp(f"height {height} needs its block timestamp")
            if epoch_timestamp > now + self.max_future_drift:
                raise FutureTimestamp(
                    f"timestamp {epoch_timestamp} exceeds now + {self.max_future_drift}")
        else:
            epoch_timestamp = None

        rec = MerkleRootRecord(len(self.records), Hash256(root), height, relayer, collateral,
                               RootStatus.PENDING, now, now + self.challenge_period,
                               parent_id=parent.record_id, epoch_timestamp=epoch_timestamp)
        self.records.append(rec)
        self._live.append(rec.record_id)
        self.by_height.setdefault(height, []).append(rec.record_id)
        self.last_submitted_height = max(self.last_submitted_height, height)
        self.escrow += collateral
        self.posted_total += collateral
        self._emit("RootSubmitted", record=rec.record_id, height=height, root=str(rec.root),
                   relayer=relayer, bond=collateral, epoch_timestamp=epoch_timestamp)
        return rec.record_id

    def challenge_root(self, record_id: int, disputer: str, collateral: int, now: int) -> int:
        rec = self.record(record_id)
        if rec.status is RootStatus.VERIFIED:
            raise AlreadyVerified(f"record {record_id} is verified")
        if rec.status in (RootStatus.CHALLENGED, RootStatus.INVALID):
            raise AlreadyChallenged(f"record {record_id} is {rec.status.value}")
        if now >= rec.challenge_deadline:
            raise ChallengeWindowClosed(f"record {record_id} challenge window closed")
        if collateral < self.disputer_bond:
            raise InsufficientBond(f"bond {collateral} < required {self.disputer_bond}")
        rec.status = RootStatus.CHALLENGED
        rec.proof_deadline = now + self.proof_period
        rec.disputer = disputer
        rec.disputer_collateral = collateral
        self.escrow += collateral
        self.posted_total += collateral
        self._emit("RootChallenged", record=record_id, height=rec.height, disputer=disputer,
                   bond=collateral, proof_deadline=rec.proof_deadline)
        return rec.proof_deadline

    def proof_failures(self, rec: MerkleRootRecord, challenged: BlockHeader,
                       prev: BlockHeader) -> list[str]:
        failures = []
        parent = self.records[rec.parent_id] if rec.parent_id is not None else None
        if challenged.merkle_root != rec.root:
            failures.append("merkle root does not match the stored root")
        if parent is None or parent.root is None or prev.merkle_root != parent.root:
            failures.append("previous header root does not match the usable parent root")
        if challenged.parent_hash != header_hash(prev):
            failures.append("headers are not linked")
        if rec.epoch_timestamp is not None and challenged.timestamp != rec.epoch_timestamp:
            failures.append("header timestamp differs from the submitted epoch timestamp")
        if parent is not None and parent.epoch_timestamp is not None \
                and prev.timestamp != parent.epoch_timestamp:
            failures.append("previous header timestamp differs from its epoch timestamp")
        want = self.required_bits(rec)
        if want is None or challenged.bits != want:
            failures.append("target bits differ from the epoch target")
        else:
            try:
                if hash_to_int(header_hash(challenged)) > bits_to_target(challenged.bits):
                    failures.append("insufficient proof of work")
            except HeaderError as exc:
                failures.append(str(exc))
        return failures

    def prove_root(self, record_id: int, challenged_header: BlockHeader,
                   prev_header: BlockHeader, now: int) -> RootStatus:
        rec = self.record(record_id)
        if rec.status is not RootStatus.CHALLENGED:
            raise NotChallenged(f"record {record_id} is {rec.status.value}")
        if now > rec.proof_deadline:
            self._invalidate(rec, now)
            return rec.status
        failures = self.proof_failures(rec, challenged_header, prev_header)
        if failures:
            rec.failed_proofs.extend(failures)
            self._emit("ProofRejected", record=record_id, height=rec.height, reasons=failures)
            return rec.status
        rec.status = RootStatus.VERIFIED
        self._pay(rec.relayer, rec.relayer_collateral + (rec.disputer_collateral or 0))
        self._to_sweep.append(record_id)
        self._emit("RootVerified", record=record_id, height=rec.height, via="proof",
                   paid_to=rec.relayer, amount=rec.relayer_collateral + (rec.disputer_collateral or 0))
        return rec.status

    def _invalidate(self, rec: MerkleRootRecord, now: int) -> None:
        rec.status = RootStatus.INVALID
        amount = rec.relayer_collateral + (rec.disputer_collateral or 0)
        self._pay(rec.disputer, amount)
        self._emit("RootInvalid", record=rec.record_id, height=rec.height, paid_to=rec.disputer,
                   amount=amount)

    def tick(self, now: int) -> list[tuple[int, RootStatus]]:
        if now < self.now:
            raise ValueError("sim time must be nondecreasing")
        self.now = now
        transitions = []
        for rid in self._live:
            rec = self.records[rid]
            if rec.status is RootStatus.PENDING and now >= rec.challenge_deadline:
                rec.status = RootStatus.VERIFIED
                self._pay(rec.relayer, rec.relayer_collateral)
                self._to_sweep.append(rec.record_id)
                transitions.append((rec.record_id, rec.status))
                self._emit("RootVerified", record=rec.record_id, height=rec.height,
                           via="timeout", paid_to=rec.relayer, amount=rec.relayer_collateral)
            elif rec.status is RootStatus.CHALLENGED and now > rec.proof_deadline:
                self._invalidate(rec, now)
                transitions.append((rec.record_id, rec.status))
        self._live = [rid for rid in self._live
                      if self.records[rid].status in (RootStatus.PENDING, RootStatus.CHALLENGED)]
        self._sweep()
        return transitions

    def _sweep(self) -> None:
        pending = []
        for rid in sorted(self._to_sweep):
            rec = self.records[rid]
            if rec.pruned:
                continue
            goal = rec.height - self.finalization_number
            if goal <= self.last_finalized_height:
                continue
            chain = []
            node: Optional[MerkleRootRecord] = rec
            while node is not None and node.height > self.last_finalized_height:
                chain.append(node)
                node = self.records[node.parent_id] if node.parent_id is not None else None
            chain = [n for n in chain if n.height <= goal]
            if any(n.status is not RootStatus.VERIFIED for n in chain):
                pending.append(rid)
                continue
            for n in reversed(chain):
                self.finalized[n.height] = n.record_id
                for other in self.records_at(n.height):
                    if other.record_id != n.record_id:
                        self._prune(other)
                self.last_finalized_height = n.height
                self._record_epoch(n)
                self._emit("RootFinalized", record=n.record_id, height=n.height, root=str(n.root))
        self._to_sweep = pending

    def _prune(self, rec: MerkleRootRecord) -> None:
        stack = [rec]
        while stack:
            r = stack.pop()
            if r.pruned:
                continue
            r.pruned = True
            stack.extend(c for c in self.records_at(r.height + 1) if c.parent_id == r.record_id)

    def _record_epoch(self, rec: MerkleRootRecord) -> None:
        epoch, offset = divmod(rec.height, self.epoch_len)
        if rec.epoch_timestamp is None:
            return
        first, last = self.epoch_timestamps.get(epoch, (None, None))
        if offset == 0:
            first = rec.epoch_timestamp
            bits = self.required_bits(rec)
            if bits is not None:
                self.epoch_bits[epoch] = bits
        elif offset == self.epoch_len - 1:
            last = rec.epoch_timestamp
        self.epoch_timestamps[epoch] = (first, last)

    # ----------------------------------------------------------- queries

    def finalized_root(self, height: int) -> Optional[Hash256]:
        rid = self.finalized.get(height)
        return self.records[rid].root if rid is not None else None

    def check_tx_proof(self, txid: Hash256, height: int, tx_index: int, proof: MerkleProof) -> bool:
        rid = self.finalized.get(height)
        if rid is None or self.records[rid].status is not RootStatus.VERIFIED:
            return False
        root = self.records[rid].root
        if root is None or bytes(proof.leaf) != bytes(txid) or proof.index != tx_index:
            return False
        return verify_merkle_branch(proof, root)

    def block_time(self, height: int) -> Optional[int]:
        """Target-chain time the finalized root at ``height`` was posted."""
        rid = self.finalized.get(height)
        if rid is None:
            return None
        rec = self.records[rid]
        return rec.submitted_at if rid else self.checkpoint.timestamp

    def finalized_chain(self) -> list[tuple[int, Hash256]]:
        return [(h, self.records[rid].root) for h, rid in sorted(self.finalized.items())
                if h > self.checkpoint.height]

    def bonds_conserved(self) -> bool:
        locked = sum(r.relayer_collateral + (r.disputer_collateral or 0) for r in self.records
                     if r.status in (RootStatus.PENDING, RootStatus.CHALLENGED))
        return self.posted_total == self.paid_total + self.escrow and self.escrow == locked
