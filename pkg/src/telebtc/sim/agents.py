"""Agent behaviours.  Each agent acts once per tick through ``act(world)``."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil
from typing import TYPE_CHECKING, Optional

from ..bridge_optimistic import BridgeError, FutureTimestamp, OptimisticBridge, RootStatus
from ..bridge_spv import Accepted
from ..btc_headers import BlockHeader, Hash256, header_hash, meets_pow
from ..chainsim import (
    TAG_LOCK,
    ChainError,
    InsufficientFunds,
    MalformedPayload,
    address_of,
    build_lock_tx,
    build_transfer_tx,
    build_unlock_payment_tx,
    decode_payload,
)
from ..lockers import LockerError, LockerStatus
from ..proxy import (
    DuplicateTx,
    InsufficientBalance,
    NotFinalized,
    ProxyError,
    RecordedPayment,
    RequestStatus,
    TooRecent,
    account_of,
)
from .scenario import AgentSpec, btc_to_sats, tokens_to_units

if TYPE_CHECKING:
    from .harness import World


def _err(exc: Exception) -> str:
    return type(exc).__name__


class Agent:
    role = "agent"

    def __init__(self, spec: AgentSpec, seed: int):
        self.spec = spec
        self.name = spec.name
        self.profile = spec.profile
        self.rng = random.Random(f"{seed}:{spec.name}")
        self.btc_address = address_of(spec.name)
        self.account = account_of(self.btc_address)

    def setup(self, world: "World") -> None:
        pass

    def act(self, world: "World") -> None:
        pass

    def summary(self, world: "World") -> dict:
        return {"role": self.role, "profile": self.profile}


# ----------------------------------------------------------------- relayers

class RelayerAgent(Agent):
    role = "relayer"

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.my_records: list[int] = []
        self.proved: set[int] = set()
        self.fake_height: Optional[int] = None
        self.fake_root: Optional[Hash256] = None
        self.attacked: set[int] = set()
        self.rejections = 0

    def setup(self, world: "World") -> None:
        if self.profile == "fake_root_at_height":
            h = self.spec.get("height")
            if h is None:
                lo, hi = self.spec.get("height_range", [3, 8])
                h = self.rng.randint(lo, hi)
            self.fake_height = int(h)
            self.fake_root = Hash256(self.rng.getrandbits(256).to_bytes(32, "little"))
            world.fabricated_roots.add(bytes(self.fake_root))

    def act(self, world: "World") -> None:
        if self.profile == "noop":
            return
        if world.cfg.bridge == "spv":
            if self.profile == "honest":
                self._relay_headers(world)
            return
        if self.profile == "honest":
            self._prove_challenged(world)
            self._submit_roots(world)
        elif self.profile == "fake_root_at_height":
            self._fake(world)
        elif self.profile == "timestamp_attacker":
            self._timestamp_attack(world)

    def _relay_headers(self, world: "World") -> None:
        bridge = world.bridge
        for h in range(bridge.max_height + 1, world.chain.height + 1):
            blk = world.chain.canonical_block(h)
            res = bridge.add_header(blk.header)
            if isinstance(res, Accepted):
                world.emit("HeaderRelayed", relayer=self.name, height=h, hash=str(blk.hash))
                for fh, fhash in res.finalized:
                    world.emit("HeaderFinalized", height=fh, hash=str(fhash))
            else:
                world.emit("HeaderRejected", relayer=self.name, height=h,
                           reason=res.reason.value, detail=res.detail)
                break

    def _epoch_ts(self, bridge: OptimisticBridge, blk) -> Optional[int]:
        return blk.header.timestamp if bridge.needs_epoch_timestamp(blk.height) else None

    def _submit(self, world: "World", blk, epoch_ts, root=None) -> Optional[int]:
        bridge: OptimisticBridge = world.bridge
        parent = world.chain.canonical_block(blk.height - 1)
        try:
            rid = bridge.submit_root(root or blk.header.merkle_root, blk.height, self.name,
                                     bridge.relayer_bond, epoch_ts, world.now,
                                     parent_root=parent.header.merkle_root)
        except BridgeError as exc:
            self.rejections += 1
            world.emit("SubmissionRejected", relayer=self.name, height=blk.height,
                       reason=_err(exc), detail=str(exc))
            return None
        self.my_records.append(rid)
        return rid

    def _submit_roots(self, world: "World") -> None:
        bridge: OptimisticBridge = world.bridge
        chain = world.chain
        while True:
            h = bridge.last_submitted_height
            real = chain.canonical_block(h)
            if real is None:
                return
            mine = [r for r in bridge.records_at(h)
                    if r.root == real.header.merkle_root and r.status is not RootStatus.INVALID]
            if mine:
                if not any(bridge.is_usable(r, world.now) for r in mine):
                    return
                target = h + 1
            else:
                target = h
            blk = chain.canonical_block(target)
            if blk is None:
                return
            parent_ok = bridge.usable_roots(target - 1, world.now)
            if not any(p.root == chain.canonical_block(target - 1).header.merkle_root
                       for p in parent_ok):
                return
            if self._submit(world, blk, self._epoch_ts(bridge, blk)) is None:
                return

    def _prove_challenged(self, world: "World") -> None:
        bridge: OptimisticBridge = world.bridge
        for rid in self.my_records:
            rec = bridge.records[rid]
            if rec.status is not RootStatus.CHALLENGED or rid in self.proved:
                continue
            blk = world.chain.canonical_block(rec.height)
            prev = world.chain.canonical_block(rec.height - 1)
            status = bridge.prove_root(rid, blk.header, prev.header, world.now)
            self.proved.add(rid)
            world.emit("ProofSubmitted", relayer=self.name, record=rid, result=status.value)

    def _fake(self, world: "World") -> None:
        bridge: OptimisticBridge = world.bridge
        h = self.fake_height
        if not self.my_records:
            if bridge.last_submitted_height + 1 < h:
                return
            if bridge.last_submitted_height > h or h <= bridge.last_finalized_height:
                self.my_records.append(-1)  # missed the window; stop trying
                return
            real = world.chain.canonical_block(h)
            prev = world.chain.canonical_block(h - 1)
            if prev is None or not any(p.root == prev.header.merkle_root
                                       for p in bridge.usable_roots(h - 1, world.now)):
                return
            ts = None
            if bridge.needs_epoch_timestamp(h):
                ts = real.header.timestamp if real else world.now
            try:
                rid = bridge.submit_root(self.fake_root, h, self.name, bridge.relayer_bond, ts,
                                         world.now, parent_root=prev.header.merkle_root)
            except BridgeError as exc:
                world.emit("SubmissionRejected", relayer=self.name, height=h,
                           reason=_err(exc), detail=str(exc))
                self.my_records.append(-1)
                return
            self.my_records.append(rid)
            world.emit("FabricatedRootSubmitted", relayer=self.name, record=rid, height=h)
            return
        rid = self.my_records[0]
        if rid < 0 or rid in self.proved:
            return
        rec = bridge.records[rid]
        if rec.status is RootStatus.CHALLENGED:
            # no hashpower: the best it can offer is a linked header that fails PoW
            prev = world.chain.canonical_block(rec.height - 1)
            forged = BlockHeader(1, prev.hash, self.fake_root,
                                 rec.epoch_timestamp or prev.header.timestamp + 600,
                                 world.bridge.required_bits(rec) or prev.header.bits, 0)
            nonce = 0
            while meets_pow(forged.with_nonce(nonce)):
                nonce += 1
            status = bridge.prove_root(rid, forged.with_nonce(nonce), prev.header, world.now)
            self.proved.add(rid)
            world.emit("ProofSubmitted", relayer=self.name, record=rid, result=status.value)

    def _timestamp_attack(self, world: "World") -> None:
        bridge: OptimisticBridge = world.bridge
        target = bridge.last_submitted_height + 1
        if target % bridge.epoch_len != bridge.epoch_len - 1 or target in self.attacked:
            return
        blk = world.chain.canonical_block(target)
        prev = world.chain.canonical_block(target - 1)
        if blk is None or not any(p.root == prev.header.merkle_root
                                  for p in bridge.usable_roots(target - 1, world.now)):
            return
        self.attacked.add(target)
        offset = int(self.spec.get("offset_seconds", 365 * 24 * 3600))
        forged_ts = blk.header.timestamp + offset
        rid = self._submit(world, blk, forged_ts)
        world.emit("TimestampAttack", relayer=self.name, height=target,
                   claimed_timestamp=forged_ts, accepted=rid is not None)

    def summary(self, world: "World") -> dict:
        out = super().summary(world)
        out.update(records=len([r for r in self.my_records if r >= 0]),
                   rejected_submissions=self.rejections,
                   bond_payouts=world.bridge.payouts.get(self.name, 0)
                   if world.cfg.bridge == "optimistic" else 0)
        if self.fake_height is not None:
            out["fake_height"] = self.fake_height
        return out


# -------------------------------------------------------------- disputers

class DisputerAgent(Agent):
    role = "disputer"

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.cursor = 1
        self.seen: set[int] = set()
        self.challenges = 0

    def act(self, world: "World") -> None:
        if self.profile == "noop" or world.cfg.bridge != "optimistic":
            return
        bridge: OptimisticBridge = world.bridge
        records = bridge.records
        while self.cursor < len(records) and (
                records[self.cursor].status is not RootStatus.PENDING
                or world.now >= records[self.cursor].challenge_deadline):
            self.cursor += 1
        for rec in records[self.cursor:]:
            if rec.record_id in self.seen or rec.status is not RootStatus.PENDING:
                continue
            if world.now >= rec.challenge_deadline:
                continue
            self.seen.add(rec.record_id)
            if self.profile == "honest":
                real = world.chain.canonical_block(rec.height)
                bad = (real is None or real.header.merkle_root != rec.root
                       or (rec.epoch_timestamp is not None
                           and rec.epoch_timestamp != real.header.timestamp))
            else:
                bad = self.rng.random() < float(self.spec.get("probability", 0.3))
            if not bad:
                continue
            try:
                bridge.challenge_root(rec.record_id, self.name, bridge.disputer_bond, world.now)
                self.challenges += 1
            except BridgeError as exc:
                world.emit("ChallengeRejected", disputer=self.name, record=rec.record_id,
                           reason=_err(exc))

    def summary(self, world: "World") -> dict:
        out = super().summary(world)
        out.update(challenges=self.challenges,
                   bond_payouts=world.bridge.payouts.get(self.name, 0)
                   if world.cfg.bridge == "optimistic" else 0)
        return out


# ------------------------------------------------------------- teleporters

class TeleporterAgent(Agent):
    role = "teleporter"

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.cursor = 0
        self.watch: list[Hash256] = []
        self.submitted = 0

    def act(self, world: "World") -> None:
        if self.profile != "honest":
            return
        chain = world.chain
        for h in range(self.cursor + 1, chain.height + 1):
            for tx in chain.canonical_block(h).txs[1:]:
                if is_lock_tx(world, tx):
                    self.watch.append(tx.txid)
        self.cursor = chain.height
        keep = []
        for txid in self.watch:
            if bytes(txid) in world.proxy.minted_txids:
                continue
            if not world.try_wrap(txid, self.name, self.name):
                if world.wrap_retryable(txid):
                    keep.append(txid)
            else:
                self.submitted += 1
        self.watch = keep

    def summary(self, world: "World") -> dict:
        out = super().summary(world)
        out.update(wraps_submitted=self.submitted,
                   telebtc=world.proxy.ledger.balance(self.name))
        return out


def is_lock_tx(world: "World", tx) -> bool:
    try:
        tag, _ = decode_payload(tx.data_payload)
    except MalformedPayload:
        return False
    return tag == TAG_LOCK and any(world.lockers.by_address(o.address) for o in tx.outputs)


# ----------------------------------------------------------------- lockers

class LockerAgent(Agent):
    role = "locker"

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.payments: dict[Hash256, Hash256] = {}
        self.proven: set[bytes] = set()
        self.stole = 0

    def setup(self, world: "World") -> None:
        world.lockers.register(self.name, self.btc_address,
                               tokens_to_units(self.spec.get("collateral", 150)))

    def act(self, world: "World") -> None:
        if self.profile == "noop":
            return
        if self.profile == "thief_at_tick" and world.tick == int(self.spec.get("tick", 60)):
            self._steal(world)
        if self.profile == "lazy_ignore_unwraps":
            return
        for req in world.proxy.requests.values():
            if req.locker != self.name or req.status is not RequestStatus.OPEN:
                continue
            txid = self.payments.get(req.request_id)
            if txid is None:
                self._pay(world, req)
            elif bytes(txid) not in self.proven:
                loc = world.proof_for(txid)
                if loc is None or not world.bridge.check_tx_proof(txid, *loc):
                    continue
                try:
                    world.proxy.submit_payment_proof(req.request_id, world.chain.get_tx(txid),
                                                     *loc, world.now)
                    self.proven.add(bytes(txid))
                except ProxyError as exc:
                    world.emit("PaymentProofRejected", locker=self.name,
                               request=str(req.request_id), reason=_err(exc), detail=str(exc))
                    self.proven.add(bytes(txid))

    def _pay(self, world: "World", req) -> None:
        try:
            tx = build_unlock_payment_tx(world.spendable(self.btc_address), req.btc_receiver,
                                         req.amount_due, req.request_id)
        except InsufficientFunds:
            return
        world.broadcast(tx, self.name)
        self.payments[req.request_id] = tx.txid
        world.emit("UnwrapPaymentBroadcast", locker=self.name, request=str(req.request_id),
                   txid=str(tx.txid), amount=req.amount_due)

    def _steal(self, world: "World") -> None:
        acct = world.lockers.account(self.name)
        amount = btc_to_sats(self.spec.get("steal")) if "steal" in self.spec.params else acct.locked_btc
        try:
            tx = build_transfer_tx(world.spendable(self.btc_address),
                                   [(address_of(self.name + "/stash"), amount)])
        except InsufficientFunds:
            world.emit("TheftAborted", locker=self.name, amount=amount)
            return
        world.broadcast(tx, self.name)
        self.stole += amount
        world.emit("LockerTheft", locker=self.name, txid=str(tx.txid), amount=amount)

    def summary(self, world: "World") -> dict:
        acct = world.lockers.account(self.name)
        out = super().summary(world)
        out.update(status=acct.status.value, collateral=acct.collateral,
                   locked_btc=acct.locked_btc, btc_balance=world.chain.balance(self.btc_address),
                   telebtc=world.proxy.ledger.balance(self.name), stolen=self.stole)
        return out


# ------------------------------------------------------ users and slashers

@dataclass
class _LockTrack:
    txid: Hash256
    provable_since: Optional[int] = None


class Participant(Agent):
    """BTC holder with scripted actions (lock / unwrap / reserve) and self-submission."""

    default_self_submit: Optional[int] = None

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.pending = sorted(spec.get("actions", []), key=lambda a: a["tick"])
        self.locks: list[_LockTrack] = []
        self.requests: list[Hash256] = []
        self.reservations: list[int] = []
        self.self_submitted = 0
        self.self_submit_after = spec.get("self_submit_after", self.default_self_submit)

    def act(self, world: "World") -> None:
        if self.profile == "noop":
            return
        self._claims(world)
        self._self_submit(world)
        still = []
        for action in self.pending:
            if action["tick"] > world.tick or not self._do(world, action):
                still.append(action)
        self.pending = still

    def _do(self, world: "World", action: dict) -> bool:
        kind = action["do"]
        if kind == "lock":
            amount = btc_to_sats(action["amount"])
            locker = world.lockers.account(action["locker"])
            try:
                tx = build_lock_tx(world.spendable(self.btc_address), locker.btc_address,
                                   amount, self.btc_address, int(action.get("fee_bps", 0)))
            except (InsufficientFunds, ChainError) as exc:
                world.emit("LockFailed", user=self.name, reason=_err(exc))
                return True
            world.broadcast(tx, self.name)
            self.locks.append(_LockTrack(tx.txid))
            world.emit("LockBroadcast", user=self.name, txid=str(tx.txid), amount=amount,
                       locker=action["locker"])
            return True
        if kind == "unwrap":
            bal = world.proxy.ledger.balance(self.account)
            amount = bal if action["amount"] == "all" else btc_to_sats(action["amount"])
            if amount <= 0 or bal < amount:
                return False  # wait for the wrap to land
            try:
                req = world.proxy.unwrap(self.account, amount, action["locker"], self.btc_address,
                                         world.now, world.quote)
            except (ProxyError, LockerError) as exc:
                world.emit("UnwrapFailed", user=self.name, reason=_err(exc), detail=str(exc))
                return True
            self.requests.append(req.request_id)
            return True
        if kind == "reserve":
            try:
                res = world.proxy.reserve_capacity(
                    self.account, action["locker"], btc_to_sats(action["amount"]),
                    Fraction(str(action.get("deposit", world.proxy.reservation_deposit))),
                    world.now, world.quote)
            except (ProxyError, LockerError) as exc:
                world.emit("ReserveFailed", user=self.name, reason=_err(exc))
                return True
            self.reservations.append(res.reservation_id)
            return True
        return True

    def _claims(self, world: "World") -> None:
        for rid in self.requests:
            req = world.proxy.requests[rid]
            if req.status is RequestStatus.OPEN and world.now > req.deadline:
                world.proxy.claim_timeout(rid, world.now, world.quote)

    def _self_submit(self, world: "World") -> None:
        if self.self_submit_after is None:
            return
        for track in self.locks:
            if bytes(track.txid) in world.proxy.minted_txids:
                continue
            loc = world.proof_for(track.txid)
            if loc is None or not world.bridge.check_tx_proof(track.txid, *loc):
                continue
            if track.provable_since is None:
                track.provable_since = world.tick
            if world.tick - track.provable_since >= int(self.self_submit_after):
                if world.try_wrap(track.txid, self.account, self.name):
                    self.self_submitted += 1

    def summary(self, world: "World") -> dict:
        out = super().summary(world)
        reqs = [world.proxy.requests[r] for r in self.requests]
        out.update(
            btc_balance=world.chain.balance(self.btc_address),
            telebtc=world.proxy.ledger.balance(self.account),
            collateral_received=world.lockers.wallets.get(self.account, 0),
            locks=len(self.locks),
            minted=sum(bytes(t.txid) in world.proxy.minted_txids for t in self.locks),
            self_submitted=self.self_submitted,
            unwraps={s.value: sum(r.status is s for r in reqs) for s in RequestStatus},
        )
        return out


class UserAgent(Participant):
    role = "user"


class SlasherAgent(Participant):
    """Watches locker addresses for theft and unhealthy lockers for liquidation."""

    role = "slasher"
    default_self_submit = 0

    def __init__(self, spec: AgentSpec, seed: int):
        super().__init__(spec, seed)
        self.cursor = 0
        self.candidates: list[Hash256] = []
        self.reports = 0
        self.liquidations = 0

    def act(self, world: "World") -> None:
        super().act(world)
        if self.profile == "noop":
            return
        self._scan_theft(world)
        if self.spec.get("liquidate", True):
            self._liquidate(world)

    def _scan_theft(self, world: "World") -> None:
        chain = world.chain
        for h in range(self.cursor + 1, chain.height + 1):
            for tx in chain.canonical_block(h).txs[1:]:
                if tx.sender and world.lockers.known_address(tx.sender):
                    self.candidates.append(tx.txid)
        self.cursor = chain.height
        keep = []
        for txid in self.candidates:
            if bytes(txid) in world.proxy.reported_txids:
                continue
            tx = world.chain.get_tx(txid)
            acct = world.lockers.known_address(tx.sender)
            if bytes(txid) in acct.recorded_payment_txids:
                continue
            loc = world.proof_for(txid)
            if loc is None or not world.bridge.check_tx_proof(txid, *loc):
                keep.append(txid)
                continue
            block_time = world.bridge.block_time(loc[0])
            if block_time is None or block_time + world.lockers.params.theft_grace > world.now:
                keep.append(txid)
                continue
            stolen = world.proxy.theft_amount(tx)
            if stolen <= 0:
                continue
            if world.proxy.ledger.balance(self.account) < stolen:
                keep.append(txid)
                continue
            try:
                world.proxy.report_theft(tx, *loc, self.account, stolen, world.now, world.quote)
                self.reports += 1
            except (RecordedPayment, TooRecent, NotFinalized):
                continue
            except (ProxyError, LockerError) as exc:
                world.emit("TheftReportRejected", slasher=self.name, txid=str(txid),
                           reason=_err(exc))
        self.candidates = keep

    def _liquidate(self, world: "World") -> None:
        quote = world.quote
        p = world.lockers.params
        for acct in world.lockers.accounts.values():
            if acct.status is not LockerStatus.ACTIVE or acct.locked_btc == 0:
                continue
            cv = quote.collateral_value(acct.collateral)
            lv = quote.btc_value(acct.locked_btc)
            if not cv / lv < p.liquidation_ratio:
                continue
            slope = p.collateralization_ratio - 1 / p.discount_ratio
            bound = (p.collateralization_ratio * lv - cv) / slope  # strict upper bound on X value
            x = ceil(bound * 100_000_000 / quote.btc_price) - 1
            x = min(x, acct.locked_btc - 1, world.proxy.ledger.balance(self.account))
            if x <= 0:
                continue
            try:
                res = world.proxy.liquidate(acct.locker, x, self.account, quote)
            except (ProxyError, LockerError) as exc:
                world.emit("LiquidationRejected", slasher=self.name, locker=acct.locker,
                           amount=x, reason=_err(exc))
                continue
            self.liquidations += 1
            world.liquidations.append((acct.locker, res, quote))

    def summary(self, world: "World") -> dict:
        out = super().summary(world)
        out.update(theft_reports=self.reports, liquidations=self.liquidations)
        return out


AGENT_CLASSES = {
    "relayer": RelayerAgent,
    "teleporter": TeleporterAgent,
    "locker": LockerAgent,
    "disputer": DisputerAgent,
    "slasher": SlasherAgent,
    "user": UserAgent,
}
