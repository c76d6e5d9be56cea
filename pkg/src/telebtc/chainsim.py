"""Deterministic simulated Bitcoin chain with toy proof-of-work.

Transactions are a simplified UTXO model.  Ownership is by simulated key
identity: every input names the address that owns the output it spends (a
stand-in for the pubkey revealed by a real scriptSig), and the chain refuses
inputs whose claimed owner does not match.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import _kernels
from .btc_headers import (
    BlockHeader,
    Hash256,
    MerkleProof,
    ZERO_HASH,
    bits_to_target,
    encode_header,
    header_hash,
    header_work,
    merkle_branch,
    merkle_root,
    retarget,
    target_to_bits,
)

COIN = 100_000_000
SIM_GENESIS_BITS = 0x2000FFFF  # ~2^248, a few hundred hashes per block
SIM_EPOCH_LEN = 16
SIM_BLOCK_INTERVAL = 600
DEFAULT_SUBSIDY = 50 * COIN

PAYLOAD_VERSION = 0x01
TAG_LOCK = 0x01
TAG_UNLOCK = 0x02

Address = bytes


class ChainError(Exception):
    """Base class for chain simulation errors."""


class UnknownParent(ChainError):
    pass


class DoubleSpend(ChainError):
    pass


class InvalidAmounts(ChainError):
    pass


class InsufficientFunds(ChainError):
    pass


class FeeBpsOutOfRange(ChainError):
    pass


class TxNotFound(ChainError):
    pass


class TxNotOnCanonicalChain(ChainError):
    pass


class MalformedPayload(ValueError):
    pass


def address_of(name: str) -> Address:
    """Deterministic 20-byte Bitcoin-side address for a simulated key name."""
    return hashlib.sha256(b"btc-address:" + name.encode()).digest()[:20]


@dataclass(frozen=True)
class TxIn:
    prev_txid: Hash256
    index: int
    owner: Address


@dataclass(frozen=True)
class TxOut:
    address: Address
    amount: int


@dataclass(frozen=True)
class Utxo:
    txid: Hash256
    index: int
    address: Address
    amount: int

    def as_input(self) -> TxIn:
        return TxIn(self.txid, self.index, self.address)


@dataclass(frozen=True)
class SimTx:
    inputs: tuple[TxIn, ...]
    outputs: tuple[TxOut, ...]
    data_payload: Optional[bytes] = None
    coinbase_height: Optional[int] = None

    def encode(self) -> bytes:
        parts = [struct.pack("<B", 1)]
        if self.coinbase_height is not None:
            parts.append(b"\xff" + struct.pack("<Q", self.coinbase_height))
        else:
            parts.append(b"\x00")
        parts.append(struct.pack("<H", len(self.inputs)))
        for i in self.inputs:
            parts.append(i.prev_txid + struct.pack("<I", i.index) + i.owner)
        parts.append(struct.pack("<H", len(self.outputs)))
        for o in self.outputs:
            parts.append(o.address + struct.pack("<Q", o.amount))
        payload = self.data_payload or b""
        parts.append(struct.pack("<H", len(payload)) + payload)
        return b"".join(parts)

    @property
    def txid(self) -> Hash256:
        # frozen dataclass: cache by hand
        cached = self.__dict__.get("_txid")
        if cached is None:
            cached = Hash256(hashlib.sha256(hashlib.sha256(self.encode()).digest()).digest())
            object.__setattr__(self, "_txid", cached)
        return cached

    @property
    def is_coinbase(self) -> bool:
        return self.coinbase_height is not None

    @property
    def sender(self) -> Optional[Address]:
        """Owner of the first input's previous output (sender attribution rule)."""
        return self.inputs[0].owner if self.inputs else None


def encode_lock_payload(target_receiver: bytes, teleporter_fee_bps: int) -> bytes:
    if len(target_receiver) != 20:
        raise MalformedPayload("target receiver must be 20 bytes")
    if not 0 <= teleporter_fee_bps <= 10_000:
        raise FeeBpsOutOfRange(f"teleporter fee {teleporter_fee_bps} bps outside 0..10000")
    return bytes([PAYLOAD_VERSION, TAG_LOCK]) + target_receiver + struct.pack(">H", teleporter_fee_bps)


def encode_unlock_payload(request_id: bytes) -> bytes:
    if len(request_id) != 32:
        raise MalformedPayload("request id must be 32 bytes")
    return bytes([PAYLOAD_VERSION, TAG_UNLOCK]) + bytes(request_id)


def decode_payload(payload: Optional[bytes]) -> tuple[int, tuple]:
    """Return ``(tag, fields)``; lock fields are (receiver, fee_bps), unlock (request_id,)."""
    if not payload or len(payload) < 2 or payload[0] != PAYLOAD_VERSION:
        raise MalformedPayload("missing or unversioned payload")
    tag, body = payload[1], payload[2:]
    if tag == TAG_LOCK:
        if len(body) != 22:
            raise MalformedPayload("lock payload body must be 22 bytes")
        fee = struct.unpack(">H", body[20:])[0]
        if fee > 10_000:
            raise MalformedPayload("teleporter fee above 10000 bps")
        return tag, (bytes(body[:20]), fee)
    if tag == TAG_UNLOCK:
        if len(body) != 32:
            raise MalformedPayload("unlock payload body must be 32 bytes")
        return tag, (Hash256(bytes(body)),)
    raise MalformedPayload(f"unknown payload tag {tag}")


def _select(utxos: Sequence[Utxo], amount: int) -> tuple[list[Utxo], int]:
    chosen, total = [], 0
    for u in utxos:
        if total >= amount and chosen:
            break
        chosen.append(u)
        total += u.amount
    if total < amount or not chosen:
        raise InsufficientFunds(f"need {amount} sat, have {total}")
    return chosen, total


def build_transfer_tx(utxos: Sequence[Utxo], outputs: Sequence[tuple[Address, int]],
                      payload: Optional[bytes] = None, change_to: Optional[Address] = None) -> SimTx:
    """Spend ``utxos`` (in order, as few as needed) into ``outputs`` plus change."""
    amount = sum(a for _, a in outputs)
    chosen, total = _select(utxos, amount)
    outs = [TxOut(a, v) for a, v in outputs]
    change = total - amount
    if change:
        outs.append(TxOut(change_to or chosen[0].address, change))
    return SimTx(tuple(u.as_input() for u in chosen), tuple(outs), payload)


def build_lock_tx(user_utxos: Sequence[Utxo], locker_address: Address, amount: int,
                  target_receiver: bytes, teleporter_fee_bps: int) -> SimTx:
    payload = encode_lock_payload(target_receiver, teleporter_fee_bps)
    return build_transfer_tx(user_utxos, [(locker_address, amount)], payload)


def build_unlock_payment_tx(locker_utxos: Sequence[Utxo], receiver: Address, amount: int,
                            request_id: bytes) -> SimTx:
    return build_transfer_tx(locker_utxos, [(receiver, amount)], encode_unlock_payload(request_id))


@dataclass
class SimBlock:
    header: BlockHeader
    txs: list[SimTx]
    height: int
    hash: Hash256 = field(default=ZERO_HASH)
    chainwork: int = 0

    @property
    def txids(self) -> list[Hash256]:
        return [t.txid for t in self.txs]


class SimChain:
    """Block tree with per-block UTXO views and most-work tip selection."""

    def __init__(self, genesis_allocations: Iterable[tuple[Address, int]] = (),
                 genesis_time: int = 1_700_000_000, genesis_bits: int = SIM_GENESIS_BITS,
                 epoch_len: int = SIM_EPOCH_LEN, block_interval: int = SIM_BLOCK_INTERVAL,
                 pow_limit: Optional[int] = None, subsidy: int = DEFAULT_SUBSIDY,
                 miner_address: Optional[Address] = None, backend: Optional[str] = None):
        self.epoch_len = epoch_len
        self.block_interval = block_interval
        self.genesis_bits = genesis_bits
        self.pow_limit = pow_limit if pow_limit is not None else bits_to_target(genesis_bits)
        self.subsidy = subsidy
        self.miner_address = miner_address or address_of("miner")
        self.backend = backend
        self.blocks: dict[Hash256, SimBlock] = {}
        self.children: dict[Hash256, list[Hash256]] = {}
        self.tips: list[Hash256] = []
        self._utxo: dict[Hash256, dict[tuple[Hash256, int], TxOut]] = {}
        self._tx_blocks: dict[Hash256, list[Hash256]] = {}
        self._txs: dict[Hash256, SimTx] = {}

        coinbase = SimTx((), tuple(TxOut(a, v) for a, v in genesis_allocations), None, 0)
        self.genesis = self._assemble(None, [coinbase], genesis_time, 0)
        self.canonical_tip = self.genesis.hash
        self._canonical_cache: Optional[list[Hash256]] = None

    # ----------------------------------------------------------- structure

    @property
    def tip(self) -> SimBlock:
        return self.blocks[self.canonical_tip]

    @property
    def height(self) -> int:
        return self.tip.height

    def canonical_chain(self) -> list[Hash256]:
        if self._canonical_cache is None:
            out = []
            h: Optional[Hash256] = self.canonical_tip
            while h is not None:
                out.append(h)
                blk = self.blocks[h]
                h = blk.header.parent_hash if blk.height > 0 else None
            out.reverse()
            self._canonical_cache = out
        return self._canonical_cache

    def canonical_block(self, height: int) -> Optional[SimBlock]:
        chain = self.canonical_chain()
        return self.blocks[chain[height]] if 0 <= height < len(chain) else None

    def is_canonical(self, block_hash: Hash256) -> bool:
        blk = self.blocks.get(block_hash)
        if blk is None:
            return False
        chain = self.canonical_chain()
        return blk.height < len(chain) and chain[blk.height] == block_hash

    def ancestor(self, block_hash: Hash256, height: int) -> SimBlock:
        blk = self.blocks[block_hash]
        while blk.height > height:
            blk = self.blocks[blk.header.parent_hash]
        return blk

    def blocks_at(self, height: int) -> list[SimBlock]:
        return [b for b in self.blocks.values() if b.height == height]

    # ------------------------------------------------------------ consensus

    def required_bits(self, parent_hash: Hash256) -> int:
        parent = self.blocks[parent_hash]
        height = parent.height + 1
        if height % self.epoch_len:
            return parent.header.bits
        first = self.ancestor(parent_hash, height - self.epoch_len)
        new_target = retarget(bits_to_target(parent.header.bits), first.header.timestamp,
                              parent.header.timestamp, self.epoch_len, self.block_interval,
                              self.pow_limit)
        return target_to_bits(new_target)

    def expected_interval(self, parent_hash: Hash256) -> int:
        """Block spacing of a fixed-hashrate network mining at the next target.

        Harder targets stretch the spacing, which keeps the retarget loop stable.
        """
        target = bits_to_target(self.required_bits(parent_hash))
        reference = bits_to_target(self.genesis_bits)
        return max(1, -(-self.block_interval * reference // max(target, 1)))

    def utxos(self, block_hash: Optional[Hash256] = None) -> dict[tuple[Hash256, int], TxOut]:
        return self._utxo[block_hash or self.canonical_tip]

    def utxos_of(self, address: Address, block_hash: Optional[Hash256] = None) -> list[Utxo]:
        view = self.utxos(block_hash)
        return sorted((Utxo(k[0], k[1], o.address, o.amount) for k, o in view.items()
                       if o.address == address), key=lambda u: (bytes(u.txid), u.index))

    def balance(self, address: Address, block_hash: Optional[Hash256] = None) -> int:
        return sum(o.amount for o in self.utxos(block_hash).values() if o.address == address)

    def total_supply(self, block_hash: Optional[Hash256] = None) -> int:
        return sum(o.amount for o in self.utxos(block_hash).values())

    def get_tx(self, txid: Hash256) -> SimTx:
        try:
            return self._txs[txid]
        except KeyError:
            raise TxNotFound(str(txid)) from None

    def check_txs(self, parent_hash: Hash256, txs: Sequence[SimTx]) -> None:
        view = dict(self._utxo[parent_hash])
        for tx in txs:
            self._apply_tx(view, tx)

    def select_valid(self, parent_hash: Hash256,
                     txs: Sequence[SimTx]) -> tuple[list[SimTx], list[tuple[SimTx, str]]]:
        """Split ``txs`` (in order) into those that apply on ``parent_hash`` and the rest."""
        view = dict(self._utxo[parent_hash])
        ok, bad = [], []
        for tx in txs:
            trial = dict(view)
            try:
                self._apply_tx(trial, tx)
            except ChainError as exc:
                bad.append((tx, f"{type(exc).__name__}: {exc}"))
                continue
            view = trial
            ok.append(tx)
        return ok, bad

    def _apply_tx(self, view: dict, tx: SimTx) -> None:
        if tx.is_coinbase:
            raise InvalidAmounts("user transactions cannot be coinbase")
        if not tx.inputs:
            raise InvalidAmounts("transaction has no inputs")
        total_in = 0
        seen = set()
        for i in tx.inputs:
            key = (i.prev_txid, i.index)
            out = view.get(key)
            if out is None or key in seen:
                raise DoubleSpend(f"{i.prev_txid}:{i.index} is not spendable")
            if out.address != i.owner:
                raise DoubleSpend(f"{i.prev_txid}:{i.index} is not owned by the spender")
            seen.add(key)
            total_in += out.amount
        if any(o.amount < 0 for o in tx.outputs) or sum(o.amount for o in tx.outputs) > total_in:
            raise InvalidAmounts("outputs exceed inputs")
        for key in seen:
            del view[key]
        for n, o in enumerate(tx.outputs):
            view[(tx.txid, n)] = o

    # --------------------------------------------------------------- mining

    def mine_block(self, parent: Hash256, txs: Sequence[SimTx], timestamp: int) -> SimBlock:
        if parent not in self.blocks:
            raise UnknownParent(str(parent))
        height = self.blocks[parent].height + 1
        coinbase = SimTx((), (TxOut(self.miner_address, self.subsidy),), None, height)
        return self._assemble(parent, [coinbase, *txs], timestamp, height)

    def _assemble(self, parent: Optional[Hash256], txs: list[SimTx], timestamp: int,
                  height: int) -> SimBlock:
        if parent is None:
            view: dict = {}
            bits = self.genesis_bits
        else:
            view = dict(self._utxo[parent])
            for tx in txs[1:]:
                self._apply_tx(view, tx)
            bits = self.required_bits(parent)
        for n, o in enumerate(txs[0].outputs):
            view[(txs[0].txid, n)] = o

        root = merkle_root([t.txid for t in txs])
        header = BlockHeader(1, parent or ZERO_HASH, root, timestamp, bits, 0)
        header = solve(header, self.backend)
        blk = SimBlock(header, list(txs), height)
        blk.hash = header_hash(header)
        parent_work = self.blocks[parent].chainwork if parent else 0
        blk.chainwork = parent_work + header_work(bits)

        self.blocks[blk.hash] = blk
        self._utxo[blk.hash] = view
        self.children.setdefault(blk.hash, [])
        if parent is not None:
            self.children[parent].append(blk.hash)
            if parent in self.tips:
                self.tips.remove(parent)
        self.tips.append(blk.hash)
        for tx in txs:
            self._txs[tx.txid] = tx
            self._tx_blocks.setdefault(tx.txid, []).append(blk.hash)
        if parent is not None and blk.chainwork > self.blocks[self.canonical_tip].chainwork:
            if parent == self.canonical_tip and self._canonical_cache is not None:
                self._canonical_cache.append(blk.hash)
            else:
                self._canonical_cache = None
            self.canonical_tip = blk.hash
        return blk

    # ------------------------------------------------------------ proofs

    def locate_tx(self, txid: Hash256) -> tuple[SimBlock, int]:
        """Canonical block containing ``txid`` and its index in the block."""
        if txid not in self._tx_blocks:
            raise TxNotFound(str(txid))
        for bh in self._tx_blocks[txid]:
            if self.is_canonical(bh):
                blk = self.blocks[bh]
                return blk, blk.txids.index(txid)
        raise TxNotOnCanonicalChain(str(txid))

    def inclusion_proof(self, txid: Hash256) -> tuple[Hash256, int, int, MerkleProof]:
        blk, index = self.locate_tx(txid)
        return blk.hash, blk.height, index, merkle_branch(blk.txids, index)

    def confirmations(self, txid: Hash256) -> int:
        try:
            blk, _ = self.locate_tx(txid)
        except ChainError:
            return 0
        return self.height - blk.height + 1


def solve(header: BlockHeader, backend: Optional[str] = None) -> BlockHeader:
    """Find a nonce meeting ``header.bits``; bumps the timestamp if the nonce space runs out."""
    target = bits_to_target(header.bits)
    while True:
        prefix = encode_header(header)[:76]
        nonce = _kernels.search_nonce(prefix, target, 0, 1 << 32, backend)
        if nonce >= 0:
            return header.with_nonce(nonce)
        header = BlockHeader(header.version, header.parent_hash, header.merkle_root,
                             header.timestamp + 1, header.bits, 0)
